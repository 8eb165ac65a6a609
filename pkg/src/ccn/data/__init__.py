"""Synthetic data generation and the dataset file format."""

from .dataset_io import (
    format_page,
    format_score_record,
    parse_dataset,
    parse_page,
    parse_score_record,
    split_pages,
    write_dataset,
)
from .synth import (
    GroundTruth,
    LabelCorrelation,
    SyntheticWorld,
    generate_dataset,
    same_page_label_correlation,
)

__all__ = [
    "SyntheticWorld",
    "GroundTruth",
    "LabelCorrelation",
    "generate_dataset",
    "same_page_label_correlation",
    "format_page",
    "parse_page",
    "write_dataset",
    "parse_dataset",
    "parse_score_record",
    "format_score_record",
    "split_pages",
]
