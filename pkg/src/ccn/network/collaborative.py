"""
Collaborative module and the contrastive losses.

The collaborative degree of an item is a scalar

    s = xi * ln(pi * sigmoid(MLP(E_user ++ (E_item * E_trigger))))

so that exp(s / xi) always lies in (0, pi). Context items on the target's
page are split by click label: same label as the target (positive set) or
different label (negative set). The repulsion loss pushes the target's degree
away from the negative set; the attraction loss pulls it toward the positive
set. Both weight context items by a softmax over negated degrees
(importance sampling), and an empty set contributes zero.

All losses are built as batched graph nodes; the scalar functions below
evaluate the same builders on one-sample graphs.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ..autodiff import Graph, Node, forward_eval
from ..errors import ImportanceWeightError, PriorUndefinedError, ShapeError
from ..models.records import ImpressionPage, TrainingSample

logger = logging.getLogger(__name__)

LN_PI = float(np.log(np.pi))

# inserts a context axis: (B, W) -> (B, 1, W)
_NEW_AXIS = (slice(None), None)


# ==============================================================================
# COLLABORATIVE DEGREE
# ==============================================================================

@dataclass
class CollaborativeParams:
    """MLP mapping E_user ++ (E_item * E_trigger) to the raw degree."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @classmethod
    def from_params(cls, params: Dict[str, np.ndarray], n_layers: int) -> "CollaborativeParams":
        return cls(
            weights=[params[f"cm.w{i}"] for i in range(n_layers)],
            biases=[params[f"cm.b{i}"] for i in range(n_layers)],
        )

    def as_params(self) -> Dict[str, np.ndarray]:
        out = {f"cm.w{i}": w for i, w in enumerate(self.weights)}
        out.update({f"cm.b{i}": b for i, b in enumerate(self.biases)})
        return out

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]


def build_squash(graph: Graph, raw: Node, xi: float) -> Node:
    """s = xi * (ln(pi) - softplus(-r)), i.e. xi * ln(pi * sigmoid(r))."""
    log_sigmoid = graph.neg(graph.softplus(graph.neg(raw)))
    return graph.scale(graph.add(log_sigmoid, graph.const(LN_PI)), xi)


def build_collaborative_degree(
    graph: Graph,
    e_user: Node,
    e_items: Node,
    e_trigger: Node,
    user_width: int,
    n_layers: int,
    xi: float,
    per_context: bool = False,
) -> Node:
    """Batched collaborative degrees.

    The first layer's weight is split into a user block and an item block,
    which equals an MLP over the concatenation and lets one user row
    broadcast over a whole context axis.

    Args:
        graph: Graph to extend
        e_user: (B, U) user embeddings
        e_items: (B, 3d) items, or (B, C, 3d) with per_context
        e_trigger: (B, 3d) trigger embeddings
        user_width: U
        n_layers: Number of MLP layers (hidden layers + output layer)
        xi: Attraction scaling coefficient
        per_context: Whether e_items carries a context axis

    Returns:
        (B,) or (B, C) degree node
    """
    if per_context:
        e_trigger = graph.slice(e_trigger, _NEW_AXIS)
    hadamard = graph.mul(e_items, e_trigger)

    w0 = graph.input("cm.w0")
    user_part = graph.matmul(e_user, graph.slice(w0, (slice(0, user_width),)))
    item_part = graph.matmul(hadamard, graph.slice(w0, (slice(user_width, None),)))
    if per_context:
        user_part = graph.slice(user_part, _NEW_AXIS)
    h = graph.add(graph.add(user_part, item_part), graph.input("cm.b0"))
    for i in range(1, n_layers):
        h = graph.linear(graph.relu(h), graph.input(f"cm.w{i}"), graph.input(f"cm.b{i}"))
    # output layer is one unit wide
    raw = graph.sum(h, axis=-1)
    return build_squash(graph, raw, xi)


def collaborative_degree(
    e_user,
    e_item,
    e_trigger,
    params: CollaborativeParams,
    xi: float,
) -> float:
    """Collaborative degree s of one (user, item, trigger) triple.

    Raises:
        ShapeError: If the embedding widths do not match the MLP
    """
    e_user = np.asarray(e_user, dtype=np.float64)
    e_item = np.asarray(e_item, dtype=np.float64)
    e_trigger = np.asarray(e_trigger, dtype=np.float64)
    if e_item.shape != e_trigger.shape:
        raise ShapeError("collaborative", f"item {e_item.shape} vs trigger {e_trigger.shape}")
    if e_user.shape[-1] + e_item.shape[-1] != params.input_width:
        raise ShapeError(
            "collaborative",
            f"input width {e_user.shape[-1] + e_item.shape[-1]} != {params.input_width}",
        )
    graph = Graph()
    root = build_collaborative_degree(
        graph,
        graph.input("e_user"),
        graph.input("e_item"),
        graph.input("e_trigger"),
        user_width=e_user.shape[-1],
        n_layers=params.n_layers,
        xi=xi,
    )
    inputs = {"e_user": e_user[None], "e_item": e_item[None], "e_trigger": e_trigger[None]}
    inputs.update(params.as_params())
    return float(forward_eval(graph, inputs, root)[0])


# ==============================================================================
# CONTEXT SPLIT
# ==============================================================================

@dataclass(frozen=True)
class ContextSplit:
    """Indices into the sample's context, split by label agreement."""

    positive: Tuple[int, ...]
    negative: Tuple[int, ...]

    @property
    def m_pos(self) -> int:
        return len(self.positive)

    @property
    def m_neg(self) -> int:
        return len(self.negative)


def split_context_sets(sample: TrainingSample) -> ContextSplit:
    """Same label as the target -> positive set; different label -> negative set."""
    positive, negative = [], []
    for i, exposure in enumerate(sample.context):
        (positive if exposure.click_label == sample.label else negative).append(i)
    return ContextSplit(positive=tuple(positive), negative=tuple(negative))


def split_masks(
    labels: np.ndarray, context_labels: np.ndarray, context_mask: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Batched split: (positive_mask, negative_mask), each (B, C)."""
    same = context_labels == labels[:, None]
    return context_mask & same, context_mask & ~same


# ==============================================================================
# IMPORTANCE WEIGHTS AND LOSSES
# ==============================================================================

def build_importance_weights(graph: Graph, degrees: Node, mask: np.ndarray, coefficient: float) -> Node:
    """omega_j = softmax(-s_j / c) over the masked set, last axis."""
    return graph.softmax(graph.scale(degrees, -1.0 / coefficient), axis=-1, mask=mask)


def build_repulsion(
    graph: Graph,
    s_target: Node,
    s_context: Node,
    negative_mask: np.ndarray,
    tau: float,
) -> Node:
    """Per-sample repulsion loss, (B,).

    loss = log(e^{s/tau} + M * sum_j w_j e^{s'_j/tau}) - s/tau

    evaluated in log space as softplus(log M + logsumexp_j(log w_j + s'_j/tau) - s/tau),
    which stays finite for any finite degrees. An empty negative set gives 0.
    """
    m = negative_mask.sum(axis=-1)
    u = graph.scale(s_context, 1.0 / tau)
    # log w_j = -u_j - logsumexp_k(-u_k)
    log_norm = graph.logsumexp(graph.neg(u), axis=-1, mask=negative_mask)
    log_omega = graph.sub(graph.neg(u), graph.slice(log_norm, _NEW_AXIS))
    log_weighted = graph.logsumexp(graph.add(log_omega, u), axis=-1, mask=negative_mask)
    log_m = graph.const(np.log(np.maximum(m, 1)).astype(np.float64))
    margin = graph.sub(graph.add(log_m, log_weighted), graph.scale(s_target, 1.0 / tau))
    return graph.where(m > 0, graph.softplus(margin), graph.const(0.0))


def build_attraction(
    graph: Graph,
    s_target: Node,
    s_context: Node,
    positive_mask: np.ndarray,
    xi: float,
) -> Node:
    """Per-sample attraction loss, (B,).

    a = e^{s/xi}, b = sum_j w_j e^{s'_j/xi}, loss = -log(cos(a - b) / 2 + 1/2)

    using cos(x) / 2 + 1/2 = cos(x/2)^2. An empty positive set takes b = a,
    so its loss and gradient are exactly 0.
    """
    omega = build_importance_weights(graph, s_context, positive_mask, xi)
    a = graph.exp(graph.scale(s_target, 1.0 / xi))
    b = graph.sum(graph.mul(omega, graph.exp(graph.scale(s_context, 1.0 / xi))), axis=-1)
    b = graph.where(positive_mask.any(axis=-1), b, a)
    half = graph.cos_diff(graph.scale(a, 0.5), graph.scale(b, 0.5))
    return graph.neg(graph.log(graph.mul(half, half)))


def _one_sample_inputs(s_target: float, degrees: Sequence[float]) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    values = np.asarray(list(degrees), dtype=np.float64)
    mask = np.ones((1, max(1, values.size)), dtype=bool)
    padded = np.zeros((1, max(1, values.size)))
    if values.size:
        padded[0, : values.size] = values
    else:
        mask[:] = False
    return {"s_target": np.array([float(s_target)]), "s_context": padded}, mask


def importance_weights(degrees: Sequence[float], coefficient: float) -> np.ndarray:
    """Importance sampling weights exp(-s_j/c) / sum_k exp(-s_k/c).

    Raises:
        ImportanceWeightError: On an empty degree list or non-positive coefficient
    """
    if len(degrees) == 0:
        raise ImportanceWeightError("importance weights of an empty set are undefined")
    if coefficient <= 0:
        raise ImportanceWeightError(f"coefficient must be positive, got {coefficient}")
    graph = Graph()
    inputs, mask = _one_sample_inputs(0.0, degrees)
    root = build_importance_weights(graph, graph.input("s_context"), mask, coefficient)
    return forward_eval(graph, inputs, root)[0]


def repulsion_loss(s_target: float, negative_degrees: Sequence[float], tau: float) -> float:
    """Repulsion loss of one target against its negative set (0 when empty)."""
    graph = Graph()
    inputs, mask = _one_sample_inputs(s_target, negative_degrees)
    root = build_repulsion(graph, graph.input("s_target"), graph.input("s_context"), mask, tau)
    return float(forward_eval(graph, inputs, root)[0])


def attraction_loss(s_target: float, positive_degrees: Sequence[float], xi: float) -> float:
    """Attraction loss of one target toward its positive set (0 when empty)."""
    graph = Graph()
    inputs, mask = _one_sample_inputs(s_target, positive_degrees)
    root = build_attraction(graph, graph.input("s_target"), graph.input("s_context"), mask, xi)
    return float(forward_eval(graph, inputs, root)[0])


# ==============================================================================
# PAIR-LABEL PRIOR
# ==============================================================================

@dataclass(frozen=True)
class PairPrior:
    """Probability that a random same-page pair shares (P+) or differs (P-) in label."""

    n0: float
    n1: float
    p_pos: float
    p_neg: float
    attraction_weight: float
    clamped: bool = False

    @classmethod
    def from_counts(cls, n0: float, n1: float, clamp: float = 1e-3) -> "PairPrior":
        """Prior from average unclicked (n0) and clicked (n1) exposures per page.

        Raises:
            PriorUndefinedError: If n0 + n1 <= 1
        """
        n = n0 + n1
        if n <= 1:
            raise PriorUndefinedError(f"pair prior undefined for N0 + N1 = {n}")
        p_pos = (n0 * (n0 - 1) + n1 * (n1 - 1)) / (n * (n - 1))
        return cls.from_probability(n0, n1, p_pos, clamp)

    @classmethod
    def from_probability(cls, n0: float, n1: float, p_pos: float, clamp: float = 1e-3) -> "PairPrior":
        p_neg = 1.0 - p_pos
        clamped = p_pos < clamp
        if clamped:
            logger.warning(f"P+ = {p_pos:.6f} clamped to {clamp} for the attraction weight")
        weight = p_neg / max(p_pos, clamp)
        return cls(n0=n0, n1=n1, p_pos=p_pos, p_neg=p_neg, attraction_weight=weight, clamped=clamped)

    def to_dict(self) -> Dict[str, float]:
        return {
            "n0": self.n0,
            "n1": self.n1,
            "p_pos": self.p_pos,
            "p_neg": self.p_neg,
            "attraction_weight": self.attraction_weight,
        }


def pair_label_prior(pages: Sequence[ImpressionPage], clamp: float = 1e-3) -> PairPrior:
    """Prior counted over the same-page pairs of a page set.

    P+ is the share of same-page pairs whose labels match, summed over pages,
    so pages with different click counts are not averaged first. N0 and N1
    are reported as dataset-wide averages; when every page has the same
    counts this equals PairPrior.from_counts(N0, N1).

    Raises:
        PriorUndefinedError: If no page has at least two exposures
    """
    if not any(len(p.exposures) >= 2 for p in pages):
        raise PriorUndefinedError("pair prior needs at least one page with two exposures")
    clicked = np.array([p.clicked_count for p in pages], dtype=np.float64)
    unclicked = np.array([p.unclicked_count for p in pages], dtype=np.float64)
    sizes = clicked + unclicked
    same = np.sum(clicked * (clicked - 1) + unclicked * (unclicked - 1))
    p_pos = float(same / np.sum(sizes * (sizes - 1)))
    prior = PairPrior.from_probability(float(unclicked.mean()), float(clicked.mean()), p_pos, clamp)
    logger.info(
        f"Pair prior over {len(pages)} pages: N0={prior.n0:.3f} N1={prior.n1:.3f} "
        f"P+={prior.p_pos:.4f} weight={prior.attraction_weight:.4f}"
    )
    return prior


def pair_prior_monte_carlo(pages: Sequence[ImpressionPage], n_pairs: int, seed: int = 0) -> float:
    """Sampling estimate of P+: random page, random distinct pair, label match."""
    eligible = [p for p in pages if len(p.exposures) >= 2]
    if not eligible:
        raise PriorUndefinedError("no page with two exposures to sample pairs from")
    sizes = np.array([len(p.exposures) for p in eligible])
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    labels = np.concatenate([p.labels for p in eligible])

    rng = np.random.default_rng(seed)
    page = rng.integers(0, len(eligible), size=n_pairs)
    first = rng.integers(0, sizes[page])
    second = rng.integers(0, sizes[page] - 1)
    second = second + (second >= first)
    base = offsets[page]
    return float(np.mean(labels[base + first] == labels[base + second]))
