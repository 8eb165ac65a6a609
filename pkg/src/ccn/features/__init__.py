"""Embedding layer and sample collation."""

from .embedding import (
    EmbeddingTables,
    FeatureSchema,
    SampleBatch,
    SampleTensors,
    build_sample_tensors,
    category_search_indices,
    collate_samples,
    embed_lookup,
    table_name,
)

__all__ = [
    "FeatureSchema",
    "EmbeddingTables",
    "SampleBatch",
    "SampleTensors",
    "embed_lookup",
    "collate_samples",
    "build_sample_tensors",
    "category_search_indices",
    "table_name",
]
