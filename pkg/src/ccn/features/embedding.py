"""
Embedding layer: feature schema, hashed embedding tables and sample collation.

Categorical ids are hash-bucketed (id mod bucket_count) so every lookup is in
range. An item is represented by the concatenation of its item, category and
seller embeddings (3d wide); a user by user_id plus profile fields.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..autodiff import Graph, Node
from ..autodiff.init import uniform_init
from ..config import HyperParams, SchemaConfig
from ..errors import DatasetError, UnknownFamilyError
from ..models.records import ItemFeatures, TrainingSample, UserProfile

logger = logging.getLogger(__name__)

ITEM_FAMILIES: Tuple[str, ...] = ("item", "category", "seller")


# ==============================================================================
# FEATURE SCHEMA
# ==============================================================================

@dataclass(frozen=True)
class FeatureSchema:
    """Everything that fixes embedding shapes and the padded tensor layout."""

    item_buckets: int
    category_buckets: int
    seller_buckets: int
    user_buckets: int
    profile_buckets: Tuple[int, ...]
    embedding_dim: int
    l_short: int
    l_long: int

    @classmethod
    def from_config(cls, features: SchemaConfig, hyper: HyperParams) -> "FeatureSchema":
        return cls(
            item_buckets=features.item_buckets,
            category_buckets=features.category_buckets,
            seller_buckets=features.seller_buckets,
            user_buckets=features.user_buckets,
            profile_buckets=tuple(features.profile_buckets),
            embedding_dim=hyper.embedding_dim,
            l_short=hyper.l_short,
            l_long=hyper.l_long,
        )

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FeatureSchema":
        data = dict(data)
        data["profile_buckets"] = tuple(data["profile_buckets"])
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["profile_buckets"] = list(self.profile_buckets)
        return data

    def fingerprint(self) -> str:
        """SHA256 of the schema; checkpoints refuse to load across fingerprints."""
        data = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(data.encode()).hexdigest()

    @property
    def families(self) -> Dict[str, int]:
        """Bucket count per feature family, in table order."""
        families = {
            "item": self.item_buckets,
            "category": self.category_buckets,
            "seller": self.seller_buckets,
            "user": self.user_buckets,
        }
        for i, buckets in enumerate(self.profile_buckets):
            families[f"profile_{i}"] = buckets
        return families

    @property
    def user_families(self) -> Tuple[str, ...]:
        return ("user",) + tuple(f"profile_{i}" for i in range(len(self.profile_buckets)))

    @property
    def item_width(self) -> int:
        return len(ITEM_FAMILIES) * self.embedding_dim

    @property
    def user_width(self) -> int:
        return len(self.user_families) * self.embedding_dim


def table_name(family: str) -> str:
    """Parameter name of a family's embedding table."""
    return f"emb.{family}"


# ==============================================================================
# EMBEDDING TABLES
# ==============================================================================

class EmbeddingTables:
    """One bucket_count x d table per feature family.

    Tables are views into the model's parameter dict, so optimizer updates
    on the parameters are visible here.
    """

    def __init__(self, schema: FeatureSchema, tables: Mapping[str, np.ndarray]):
        self.schema = schema
        self.tables: Dict[str, np.ndarray] = {}
        for family, buckets in schema.families.items():
            table = tables[family]
            expected = (buckets, schema.embedding_dim)
            if table.shape != expected:
                raise DatasetError(
                    f"embedding table '{family}' has shape {table.shape}, expected {expected}"
                )
            self.tables[family] = table

    @classmethod
    def initialise(
        cls, schema: FeatureSchema, seed: int, init_range: float = 0.05
    ) -> "EmbeddingTables":
        """Fresh tables, uniform in [-init_range, init_range]."""
        tables = {
            family: uniform_init(seed, table_name(family), (buckets, schema.embedding_dim), init_range)
            for family, buckets in schema.families.items()
        }
        return cls(schema, tables)

    @classmethod
    def from_params(cls, schema: FeatureSchema, params: Mapping[str, np.ndarray]) -> "EmbeddingTables":
        return cls(schema, {f: params[table_name(f)] for f in schema.families})

    def as_params(self) -> Dict[str, np.ndarray]:
        return {table_name(f): t for f, t in self.tables.items()}

    def table(self, family: str) -> np.ndarray:
        if family not in self.tables:
            raise UnknownFamilyError(family)
        return self.tables[family]

    def bucket(self, family: str, ids) -> np.ndarray:
        return np.mod(np.asarray(ids, dtype=np.int64), self.table(family).shape[0])


def embed_lookup(tables: EmbeddingTables, id: int, family: str) -> np.ndarray:
    """Row (id mod bucket_count) of the family's table, as a copy.

    Raises:
        UnknownFamilyError: If the tables have no such family
    """
    table = tables.table(family)
    return table[int(id) % table.shape[0]].copy()


def embed_node(graph: Graph, family: str, ids: np.ndarray) -> Node:
    """Graph lookup of already-bucketed ids; gradient reaches only those rows."""
    return graph.gather(graph.input(table_name(family)), ids)


def embed_items_node(graph: Graph, item_ids: np.ndarray) -> Node:
    """(..., 3) bucketed item/category/seller ids -> (..., 3d) embeddings."""
    parts = [embed_node(graph, f, item_ids[..., i]) for i, f in enumerate(ITEM_FAMILIES)]
    return graph.concat(parts, axis=-1)


def embed_users_node(graph: Graph, schema: FeatureSchema, user_ids: np.ndarray) -> Node:
    """(B, 1 + P) bucketed user/profile ids -> (B, (1 + P) d) embeddings."""
    parts = [embed_node(graph, f, user_ids[:, i]) for i, f in enumerate(schema.user_families)]
    return graph.concat(parts, axis=-1)


# ==============================================================================
# COLLATION
# ==============================================================================

def _item_buckets(schema: FeatureSchema) -> np.ndarray:
    return np.array([schema.item_buckets, schema.category_buckets, schema.seller_buckets])


def bucket_items(schema: FeatureSchema, items: Sequence[ItemFeatures]) -> np.ndarray:
    """(n, 3) bucketed ids for a list of items."""
    if not items:
        return np.zeros((0, 3), dtype=np.int64)
    return np.mod(np.asarray(items, dtype=np.int64), _item_buckets(schema))


def bucket_user(schema: FeatureSchema, user: UserProfile) -> np.ndarray:
    if len(user.profile_fields) != len(schema.profile_buckets):
        raise DatasetError(
            f"user {user.user_id} has {len(user.profile_fields)} profile fields, "
            f"schema expects {len(schema.profile_buckets)}"
        )
    raw = np.array((user.user_id,) + tuple(user.profile_fields), dtype=np.int64)
    return np.mod(raw, np.array((schema.user_buckets,) + schema.profile_buckets))


def category_search_indices(sequence: Sequence[ItemFeatures], anchor: ItemFeatures) -> List[int]:
    """Positions of sequence items sharing the anchor's category, in order."""
    return [i for i, item in enumerate(sequence) if item.category_id == anchor.category_id]


@dataclass
class SampleBatch:
    """Padded id and mask arrays for B samples.

    Sequences are padded to the schema caps; the context axis is padded to
    the largest context in the batch (at least 1). Padded slots hold id 0
    and a False mask.
    """

    user_ids: np.ndarray             # (B, 1 + P)
    target_ids: np.ndarray           # (B, 3)
    trigger_ids: np.ndarray          # (B, 3)
    short_ids: np.ndarray            # (B, L_short, 3)
    short_mask: np.ndarray           # (B, L_short)
    long_ids: np.ndarray             # (B, L_long, 3)
    long_mask: np.ndarray            # (B, L_long)
    long_target_mask: np.ndarray     # same category as target
    long_trigger_mask: np.ndarray    # same category as trigger
    labels: np.ndarray               # (B,)
    context_ids: Optional[np.ndarray] = None     # (B, C, 3)
    context_mask: Optional[np.ndarray] = None    # (B, C)
    context_labels: Optional[np.ndarray] = None  # (B, C)

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    @property
    def has_context(self) -> bool:
        return self.context_ids is not None


def _pad_items(
    schema: FeatureSchema, rows: List[Sequence[ItemFeatures]], cap: int
) -> Tuple[np.ndarray, np.ndarray]:
    ids = np.zeros((len(rows), cap, 3), dtype=np.int64)
    mask = np.zeros((len(rows), cap), dtype=bool)
    for b, items in enumerate(rows):
        items = list(items)[:cap]
        if items:
            ids[b, : len(items)] = bucket_items(schema, items)
            mask[b, : len(items)] = True
    return ids, mask


def collate_samples(
    samples: Sequence[TrainingSample],
    schema: FeatureSchema,
    with_context: bool = True,
) -> SampleBatch:
    """Batch samples into padded arrays.

    Args:
        samples: Training samples (or scoring samples without context use)
        schema: Feature schema fixing bucket counts and caps
        with_context: Collate the in-page context (training only)

    Returns:
        SampleBatch
    """
    if not samples:
        raise DatasetError("cannot collate an empty list of samples")

    short_ids, short_mask = _pad_items(schema, [s.sequences.short for s in samples], schema.l_short)
    longs = [list(s.sequences.long)[: schema.l_long] for s in samples]
    long_ids, long_mask = _pad_items(schema, longs, schema.l_long)

    long_target_mask = np.zeros_like(long_mask)
    long_trigger_mask = np.zeros_like(long_mask)
    for b, (sample, long) in enumerate(zip(samples, longs)):
        long_target_mask[b, category_search_indices(long, sample.target)] = True
        long_trigger_mask[b, category_search_indices(long, sample.trigger)] = True

    batch = SampleBatch(
        user_ids=np.stack([bucket_user(schema, s.user) for s in samples]),
        target_ids=bucket_items(schema, [s.target for s in samples]),
        trigger_ids=bucket_items(schema, [s.trigger for s in samples]),
        short_ids=short_ids,
        short_mask=short_mask,
        long_ids=long_ids,
        long_mask=long_mask,
        long_target_mask=long_target_mask,
        long_trigger_mask=long_trigger_mask,
        labels=np.array([s.label for s in samples], dtype=np.float64),
    )

    if with_context:
        contexts = [s.context for s in samples]
        width = max(1, max(len(c) for c in contexts))
        batch.context_ids, batch.context_mask = _pad_items(
            schema, [[e.item for e in c] for c in contexts], width
        )
        batch.context_labels = np.zeros((len(samples), width), dtype=np.float64)
        for b, context in enumerate(contexts):
            batch.context_labels[b, : len(context)] = [e.click_label for e in context]
    return batch


# ==============================================================================
# SINGLE-SAMPLE TENSORS
# ==============================================================================

@dataclass
class SampleTensors:
    """Bound embeddings of one sample; padded rows are exactly zero."""

    e_user: np.ndarray
    e_target: np.ndarray
    e_trigger: np.ndarray
    e_short: np.ndarray
    short_mask: np.ndarray
    e_long: np.ndarray
    long_mask: np.ndarray
    long_target_mask: np.ndarray
    long_trigger_mask: np.ndarray
    e_context: np.ndarray
    context_labels: np.ndarray


def _lookup_items(tables: EmbeddingTables, ids: np.ndarray) -> np.ndarray:
    return np.concatenate([tables.table(f)[ids[..., i]] for i, f in enumerate(ITEM_FAMILIES)], axis=-1)


def build_sample_tensors(sample: TrainingSample, tables: EmbeddingTables) -> SampleTensors:
    """Embeddings for one sample: E_user, E_target, E_trigger, padded
    E_short / E_long with masks, and the context item embeddings."""
    schema = tables.schema
    batch = collate_samples([sample], schema)
    user = np.concatenate(
        [tables.table(f)[batch.user_ids[0, i]] for i, f in enumerate(schema.user_families)]
    )
    e_short = np.where(batch.short_mask[0][:, None], _lookup_items(tables, batch.short_ids[0]), 0.0)
    e_long = np.where(batch.long_mask[0][:, None], _lookup_items(tables, batch.long_ids[0]), 0.0)
    n_context = len(sample.context)
    return SampleTensors(
        e_user=user,
        e_target=_lookup_items(tables, batch.target_ids[0]),
        e_trigger=_lookup_items(tables, batch.trigger_ids[0]),
        e_short=e_short,
        short_mask=batch.short_mask[0],
        e_long=e_long,
        long_mask=batch.long_mask[0],
        long_target_mask=batch.long_target_mask[0],
        long_trigger_mask=batch.long_trigger_mask[0],
        e_context=_lookup_items(tables, batch.context_ids[0, :n_context]),
        context_labels=batch.context_labels[0, :n_context],
    )
