"""
Forward evaluation, reverse-mode gradients and the finite-difference oracle.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Set

import numpy as np

from ..errors import BackwardError, GraphError, ShapeError, UnboundInputError
from .graph import OPS, Graph, Node

logger = logging.getLogger(__name__)


# ==============================================================================
# FORWARD
# ==============================================================================

def _reachable(graph: Graph, root: Node) -> List[Node]:
    """Ancestors of root (root included), in tape order."""
    seen: Set[int] = {root.index}
    stack = [root]
    while stack:
        node = stack.pop()
        for parent in node.parents:
            if parent.index not in seen:
                seen.add(parent.index)
                stack.append(parent)
    return [n for n in graph.nodes[: root.index + 1] if n.index in seen]


def _eval_op(node: Node) -> None:
    values = [p.value for p in node.parents]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        node.value = np.asarray(OPS[node.op].forward(node, *values), dtype=np.float64)


def forward_eval(
    graph: Graph,
    inputs: Mapping[str, np.ndarray],
    root: Optional[Node] = None,
) -> np.ndarray:
    """Evaluate every node reachable from root and return the root value.

    Args:
        graph: Graph to evaluate
        inputs: Values bound to the graph's named inputs
        root: Node to evaluate (defaults to graph.root)

    Returns:
        The root node's forward value

    Raises:
        UnboundInputError: If a reachable input has no binding
        ShapeError: If an op receives inconsistent shapes
    """
    root = root if root is not None else graph.root
    if root is None:
        raise GraphError("graph has no nodes")

    for node in _reachable(graph, root):
        if node.op == "input":
            if node.name not in inputs:
                raise UnboundInputError(node.name)
            node.value = np.asarray(inputs[node.name], dtype=np.float64)
            continue
        if node.op == "const":
            node.value = node.attrs["value"]
            continue
        _eval_op(node)

    graph.evaluated_root = root.index
    return root.value


# ==============================================================================
# BACKWARD
# ==============================================================================

@dataclass
class GradStore:
    """Per-node gradients of one backward pass, same shapes as the values."""

    graph: Graph
    root: Node
    grads: Dict[int, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, node: Node) -> np.ndarray:
        return self.grads[node.index]

    def __contains__(self, node: Node) -> bool:
        return node.index in self.grads

    def for_inputs(self) -> Dict[str, np.ndarray]:
        """Gradients keyed by input name (what the optimizer consumes)."""
        return {
            node.name: self.grads[node.index]
            for node in self.graph.nodes
            if node.op == "input" and node.index in self.grads
        }


def backward_grad(graph: Graph, root: Optional[Node] = None) -> GradStore:
    """Accumulate d(root)/d(node) for every node reachable from a scalar root.

    Raises:
        BackwardError: If forward has not run for this root or root is not scalar
    """
    root = root if root is not None else graph.root
    if root is None or root.value is None or graph.evaluated_root is None \
            or graph.evaluated_root < root.index:
        raise BackwardError("forward_eval must run before backward_grad")
    if root.value.size != 1:
        raise BackwardError(f"root {root.label} is not scalar (shape {root.value.shape})")

    order = _reachable(graph, root)
    grads: Dict[int, np.ndarray] = {root.index: np.ones_like(root.value)}

    for node in reversed(order):
        g = grads.get(node.index)
        if g is None or not node.parents:
            continue
        rule = OPS[node.op]
        parent_values = [p.value for p in node.parents]
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            parent_grads = rule.backward(node, g, *parent_values)
        for parent, pg in zip(node.parents, parent_grads):
            if pg.shape != parent.value.shape:
                raise ShapeError(
                    node.label,
                    f"gradient shape {pg.shape} != value shape {parent.value.shape}",
                )
            if parent.index in grads:
                grads[parent.index] = grads[parent.index] + pg
            else:
                grads[parent.index] = pg

    for node in order:
        if node.index not in grads:
            grads[node.index] = np.zeros_like(node.value)

    return GradStore(graph=graph, root=root, grads=grads)


# ==============================================================================
# FINITE DIFFERENCES
# ==============================================================================

ABSOLUTE_FLOOR = 1e-6


@dataclass
class LeafCheck:
    """Worst coordinate of one input leaf."""

    name: str
    max_rel_error: float = 0.0
    worst_index: Optional[tuple] = None
    analytic: float = 0.0
    numeric: float = 0.0
    coords_checked: int = 0
    kinks_skipped: int = 0
    non_finite: bool = False


@dataclass
class FiniteDiffReport:
    """Result of comparing analytic gradients against central differences."""

    tolerance: float
    leaves: Dict[str, LeafCheck] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        if not self.leaves:
            return 0.0
        return max(leaf.max_rel_error for leaf in self.leaves.values())

    @property
    def has_non_finite(self) -> bool:
        return any(leaf.non_finite for leaf in self.leaves.values())

    @property
    def passed(self) -> bool:
        return not self.has_non_finite and self.max_rel_error < self.tolerance


def _kink_pattern(nodes: List[Node]) -> List[np.ndarray]:
    """Active-side pattern of every relu input at the current forward values."""
    return [n.parents[0].value > 0.0 for n in nodes]


def _same_pattern(a: List[np.ndarray], b: List[np.ndarray]) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def relative_error(analytic: float, numeric: float, floor: float = ABSOLUTE_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _sample_coordinates(
    grad: np.ndarray,
    limit: Optional[int],
    rng: np.random.Generator,
) -> np.ndarray:
    """Flat coordinates to check: all, or nonzero-gradient ones first."""
    flat = np.arange(grad.size)
    if limit is None or grad.size <= limit:
        return flat
    nonzero = np.flatnonzero(grad.ravel() != 0.0)
    zero = np.flatnonzero(grad.ravel() == 0.0)
    picked = rng.permutation(nonzero)[:limit]
    if picked.size < limit:
        picked = np.concatenate([picked, rng.permutation(zero)[: limit - picked.size]])
    return np.sort(picked)


def _downstream(order: List[Node], source: Node) -> List[Node]:
    """Op nodes of order that depend on source, in tape order."""
    dirty = {source.index}
    nodes = []
    for node in order:
        if any(p.index in dirty for p in node.parents):
            dirty.add(node.index)
            nodes.append(node)
    return nodes


def _shifted_value(source: Node, value: np.ndarray, downstream: List[Node], root: Node) -> float:
    """Root value with source rebound to value; only downstream nodes are recomputed."""
    source.value = value
    for node in downstream:
        _eval_op(node)
    return float(root.value)


def finite_diff_check(
    graph: Graph,
    inputs: Mapping[str, np.ndarray],
    tolerance: float = 1e-4,
    root: Optional[Node] = None,
    leaves: Optional[List[str]] = None,
    max_coords_per_leaf: Optional[int] = None,
    seed: int = 0,
) -> FiniteDiffReport:
    """Compare backward_grad against central differences per input leaf.

    The step is h = 1e-4 * max(1, |x|). Coordinates where the function is
    non-finite at either shifted point are flagged rather than raised.
    Steps whose two sides straddle a relu kink are skipped and counted.

    Args:
        graph: Graph with a scalar root
        inputs: Bindings for the graph inputs
        tolerance: Relative error bound used by FiniteDiffReport.passed
        root: Root node (defaults to graph.root)
        leaves: Input names to check (defaults to all inputs)
        max_coords_per_leaf: Check at most this many coordinates per leaf
        seed: Seed for coordinate subsampling

    Returns:
        FiniteDiffReport with the worst relative error per leaf
    """
    root = root if root is not None else graph.root
    rng = np.random.default_rng(seed)
    bound = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}

    forward_eval(graph, bound, root)
    analytic = backward_grad(graph, root).for_inputs()
    names = leaves if leaves is not None else [n for n in graph.input_names if n in analytic]
    order = _reachable(graph, root)
    sources = {n.name: n for n in order if n.op == "input"}
    relus = [n for n in order if n.op == "relu"]

    report = FiniteDiffReport(tolerance=tolerance)
    for name in names:
        base = bound[name]
        grad = analytic[name]
        source = sources[name]
        downstream = _downstream(order, source)
        saved = [(node, node.value) for node in downstream]
        check = LeafCheck(name=name)
        for flat_index in _sample_coordinates(grad, max_coords_per_leaf, rng):
            index = np.unravel_index(flat_index, base.shape) if base.ndim else ()
            x = float(base[index])
            h = 1e-4 * max(1.0, abs(x))

            shifted = base.copy()
            shifted[index] = x + h
            f_plus = _shifted_value(source, shifted, downstream, root)
            pattern_plus = _kink_pattern(relus)
            shifted[index] = x - h
            f_minus = _shifted_value(source, shifted, downstream, root)

            check.coords_checked += 1
            if relus and not _same_pattern(pattern_plus, _kink_pattern(relus)):
                check.kinks_skipped += 1
                continue
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                check.non_finite = True
                logger.warning(f"non-finite central difference on {name}{tuple(index)}")
                continue
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(grad[index])
            err = relative_error(a, numeric)
            if err >= check.max_rel_error:
                check.max_rel_error = err
                check.worst_index = tuple(int(i) for i in index)
                check.analytic = a
                check.numeric = numeric
        report.leaves[name] = check

        # back to the unperturbed values before the next leaf
        source.value = base
        for node, value in saved:
            node.value = value

    return report
