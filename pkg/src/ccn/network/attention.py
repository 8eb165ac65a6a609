"""
Interest extraction: multi-head target attention and category search.

A query item attends over a behaviour sequence with scaled dot-product
attention, one softmax per head with scaling 1/sqrt(d/h) inside the softmax.
Long sequences are first filtered to items sharing the query's category.
Four query/sequence pairings make up the sequence-interaction block H_tsi:

    target x short, trigger x short, target x long_sub, trigger x long_sub

Variants without trigger-related interactions keep only the two target
pairings.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..autodiff import Graph, Node, forward_eval
from ..errors import ShapeError
from ..features.embedding import SampleTensors, category_search_indices
from ..models.records import ItemFeatures

logger = logging.getLogger(__name__)

TSI_BLOCKS: Tuple[str, ...] = ("target_short", "trigger_short", "target_long", "trigger_long")
TARGET_BLOCKS: Tuple[str, ...] = ("target_short", "target_long")


def tsi_blocks(use_trigger: bool) -> Tuple[str, ...]:
    return TSI_BLOCKS if use_trigger else TARGET_BLOCKS


# ==============================================================================
# PARAMETERS
# ==============================================================================

@dataclass
class MHTAParams:
    """Projections W_Q, W_K, W_V stored as d x d (h heads of d/h columns each)."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    heads: int

    def __post_init__(self):
        d = self.wq.shape[0]
        for name, w in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv)):
            if w.shape != (d, d):
                raise ShapeError(name, f"expected ({d}, {d}), got {w.shape}")
        if d % self.heads != 0:
            raise ShapeError("heads", f"dim {d} not divisible by {self.heads} heads")

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @classmethod
    def identity(cls, dim: int, heads: int = 1) -> "MHTAParams":
        eye = np.eye(dim)
        return cls(wq=eye.copy(), wk=eye.copy(), wv=eye.copy(), heads=heads)


@dataclass
class TsiParams:
    """Shared item projection (3d -> d) plus one MHTA per block.

    A None projection means inputs are already d wide.
    """

    blocks: Dict[str, MHTAParams]
    projection: Optional[np.ndarray] = None

    @classmethod
    def from_params(cls, params: Dict[str, np.ndarray], heads: int, use_trigger: bool = True) -> "TsiParams":
        return cls(
            blocks={
                block: MHTAParams(
                    wq=params[f"tsi.{block}.wq"],
                    wk=params[f"tsi.{block}.wk"],
                    wv=params[f"tsi.{block}.wv"],
                    heads=heads,
                )
                for block in tsi_blocks(use_trigger)
            },
            projection=params.get("tsi.proj"),
        )


# ==============================================================================
# GRAPH BUILDERS
# ==============================================================================

def build_attention_weights(
    graph: Graph,
    query: Node,
    sequence: Node,
    mask: np.ndarray,
    wq: Node,
    wk: Node,
    heads: int,
    dim: int,
) -> Node:
    """Per-head attention weights, shape (B, L, h); masked slots are 0."""
    batch, length = mask.shape
    head_dim = dim // heads
    q = graph.reshape(graph.matmul(query, wq), (batch, 1, heads, head_dim))
    k = graph.reshape(graph.matmul(sequence, wk), (batch, length, heads, head_dim))
    logits = graph.scale(graph.sum(graph.mul(k, q), axis=-1), 1.0 / np.sqrt(head_dim))
    return graph.softmax(logits, axis=1, mask=mask[:, :, None])


def build_mhta(
    graph: Graph,
    query: Node,
    sequence: Node,
    mask: np.ndarray,
    wq: Node,
    wk: Node,
    wv: Node,
    heads: int,
    dim: int,
) -> Node:
    """Batched MHTA.

    Args:
        graph: Graph to extend
        query: (B, d) query items
        sequence: (B, L, d) sequence items
        mask: (B, L) bool, True for real items
        wq, wk, wv: (d, d) projection inputs
        heads: Number of heads h
        dim: Hidden dim d

    Returns:
        (B, d) node; fully masked rows give zero vectors
    """
    batch, length = mask.shape
    head_dim = dim // heads
    weights = build_attention_weights(graph, query, sequence, mask, wq, wk, heads, dim)
    v = graph.reshape(graph.matmul(sequence, wv), (batch, length, heads, head_dim))
    weighted = graph.mul(graph.reshape(weights, (batch, length, heads, 1)), v)
    return graph.reshape(graph.sum(weighted, axis=1), (batch, dim))


def build_tsi(
    graph: Graph,
    e_target: Node,
    e_trigger: Node,
    e_short: Node,
    short_mask: np.ndarray,
    e_long: Node,
    long_target_mask: np.ndarray,
    long_trigger_mask: np.ndarray,
    heads: int,
    dim: int,
    use_trigger: bool = True,
    project: bool = True,
) -> Node:
    """Sequence-interaction representation H_tsi, (B, 4d) or (B, 2d).

    The long sub-sequences are expressed as category masks over the padded
    long sequence.
    """
    if project:
        proj = graph.input("tsi.proj")
        e_target = graph.matmul(e_target, proj)
        e_trigger = graph.matmul(e_trigger, proj)
        e_short = graph.matmul(e_short, proj)
        e_long = graph.matmul(e_long, proj)

    pairings = {
        "target_short": (e_target, e_short, short_mask),
        "trigger_short": (e_trigger, e_short, short_mask),
        "target_long": (e_target, e_long, long_target_mask),
        "trigger_long": (e_trigger, e_long, long_trigger_mask),
    }
    outputs = []
    for block in tsi_blocks(use_trigger):
        query, sequence, mask = pairings[block]
        outputs.append(build_mhta(
            graph, query, sequence, mask,
            graph.input(f"tsi.{block}.wq"),
            graph.input(f"tsi.{block}.wk"),
            graph.input(f"tsi.{block}.wv"),
            heads, dim,
        ))
    return graph.concat(outputs, axis=-1)


# ==============================================================================
# STANDALONE OPERATIONS
# ==============================================================================

def _compact(sequence, mask, dim: int) -> np.ndarray:
    seq = np.asarray(sequence, dtype=np.float64).reshape(-1, dim)
    if mask is None:
        return seq
    return seq[np.asarray(mask, dtype=bool)]


def _evaluate_attention(query, kept: np.ndarray, params: MHTAParams, with_values: bool) -> np.ndarray:
    graph = Graph()
    mask = np.ones((1, kept.shape[0]), dtype=bool)
    q = graph.input("q")
    s = graph.input("s")
    wq, wk = graph.input("wq"), graph.input("wk")
    if with_values:
        root = build_mhta(graph, q, s, mask, wq, wk, graph.input("wv"), params.heads, params.dim)
    else:
        root = build_attention_weights(graph, q, s, mask, wq, wk, params.heads, params.dim)
    inputs = {
        "q": np.asarray(query, dtype=np.float64).reshape(1, params.dim),
        "s": kept[None],
        "wq": params.wq,
        "wk": params.wk,
        "wv": params.wv,
    }
    return forward_eval(graph, inputs, root)[0]


def mhta(query, sequence, mask, params: MHTAParams) -> np.ndarray:
    """Multi-head target attention of one query over one sequence.

    Masked items are dropped before attention, so they have no influence at
    all; an empty or fully masked sequence yields the zero vector.
    """
    kept = _compact(sequence, mask, params.dim)
    if kept.shape[0] == 0:
        return np.zeros(params.dim)
    return _evaluate_attention(query, kept, params, with_values=True)


def attention_weights(query, sequence, mask, params: MHTAParams) -> np.ndarray:
    """Attention weights, shape (h, L), zero at masked positions."""
    seq = np.asarray(sequence, dtype=np.float64).reshape(-1, params.dim)
    keep = np.ones(seq.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    out = np.zeros((params.heads, seq.shape[0]))
    if keep.any():
        out[:, keep] = _evaluate_attention(query, seq[keep], params, with_values=False).T
    return out


def sim_category_search(long_sequence: Sequence[ItemFeatures], anchor: ItemFeatures) -> List[ItemFeatures]:
    """Items of the long sequence sharing the anchor's category, order preserved."""
    return [long_sequence[i] for i in category_search_indices(long_sequence, anchor)]


def sequence_interaction_repr(
    tensors: SampleTensors, params: TsiParams, use_trigger: bool = True
) -> np.ndarray:
    """H_tsi for one sample: concat of the per-block MHTA outputs."""

    def project(x: np.ndarray) -> np.ndarray:
        return x if params.projection is None else x @ params.projection

    target, trigger = project(tensors.e_target), project(tensors.e_trigger)
    short, long = project(tensors.e_short), project(tensors.e_long)
    pairings = {
        "target_short": (target, short, tensors.short_mask),
        "trigger_short": (trigger, short, tensors.short_mask),
        "target_long": (target, long, tensors.long_target_mask),
        "trigger_long": (trigger, long, tensors.long_trigger_mask),
    }
    blocks = []
    for block in tsi_blocks(use_trigger):
        query, sequence, mask = pairings[block]
        blocks.append(mhta(query, sequence, mask, params.blocks[block]))
    return np.concatenate(blocks)
