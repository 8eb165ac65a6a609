"""
Computation graph for reverse-mode differentiation.

A Graph is an ordered tape of Nodes built per micro-batch. Leaves are either
named inputs (parameters and data bound at evaluation time) or constants.
Every other node records its op kind and parent nodes; because nodes can only
be created from existing nodes, the tape is topologically ordered by
construction.

Forward and backward rules live in the OPS registry below, one entry per op
kind, so evaluation (engine.py) stays a plain loop over the tape.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ShapeError


# ==============================================================================
# NODES
# ==============================================================================

@dataclass(eq=False)
class Node:
    """One entry of the tape."""

    index: int
    op: str
    parents: Tuple["Node", ...] = ()
    attrs: Dict[str, Any] = field(default_factory=dict)
    name: Optional[str] = None
    value: Optional[np.ndarray] = None

    @property
    def label(self) -> str:
        if self.name is not None:
            return f"#{self.index}:{self.op}[{self.name}]"
        return f"#{self.index}:{self.op}"

    def __repr__(self) -> str:
        shape = None if self.value is None else self.value.shape
        return f"Node({self.label}, shape={shape})"


class Graph:
    """Ordered tape of nodes with builder methods for every op kind."""

    def __init__(self):
        self.nodes: List[Node] = []
        self.root: Optional[Node] = None
        self._inputs: Dict[str, Node] = {}
        # index of the root the last forward pass evaluated
        self.evaluated_root: Optional[int] = None

    def _add(self, op: str, parents: Sequence[Node] = (), **attrs) -> Node:
        for parent in parents:
            if not isinstance(parent, Node) or parent.index >= len(self.nodes) \
                    or self.nodes[parent.index] is not parent:
                raise ShapeError(f"#{len(self.nodes)}:{op}", "parent is not a node of this graph")
        node = Node(index=len(self.nodes), op=op, parents=tuple(parents), attrs=attrs)
        self.nodes.append(node)
        self.root = node
        return node

    def set_root(self, node: Node) -> Node:
        self.root = node
        return node

    @property
    def input_names(self) -> List[str]:
        return list(self._inputs)

    # --------------------------------------------------------------------------
    # Leaves
    # --------------------------------------------------------------------------

    def input(self, name: str) -> Node:
        """Named placeholder; repeated declarations return the same node."""
        if name in self._inputs:
            return self._inputs[name]
        node = self._add("input")
        node.name = name
        self._inputs[name] = node
        return node

    def const(self, value) -> Node:
        return self._add("const", value=np.asarray(value, dtype=np.float64))

    # --------------------------------------------------------------------------
    # Elementwise / arithmetic
    # --------------------------------------------------------------------------

    def add(self, a: Node, b: Node) -> Node:
        return self._add("add", (a, b))

    def sub(self, a: Node, b: Node) -> Node:
        return self._add("sub", (a, b))

    def mul(self, a: Node, b: Node) -> Node:
        return self._add("mul", (a, b))

    def neg(self, a: Node) -> Node:
        return self._add("neg", (a,))

    def scale(self, a: Node, c: float) -> Node:
        return self._add("scale", (a,), c=float(c))

    def exp(self, a: Node) -> Node:
        return self._add("exp", (a,))

    def log(self, a: Node) -> Node:
        return self._add("log", (a,))

    def sigmoid(self, a: Node) -> Node:
        return self._add("sigmoid", (a,))

    def relu(self, a: Node) -> Node:
        return self._add("relu", (a,))

    def softplus(self, a: Node) -> Node:
        return self._add("softplus", (a,))

    def cos_diff(self, a: Node, b: Node) -> Node:
        """cos(a - b), elementwise."""
        return self._add("cos_diff", (a, b))

    def where(self, condition, a: Node, b: Node) -> Node:
        """Select a where the constant condition holds, else b."""
        return self._add("where", (a, b), condition=np.asarray(condition, dtype=bool))

    # --------------------------------------------------------------------------
    # Structural
    # --------------------------------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        return self._add("matmul", (a, b))

    def softmax(self, a: Node, axis: int = -1, mask=None) -> Node:
        """Softmax along axis; masked-out positions get weight exactly 0."""
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
        return self._add("softmax", (a,), axis=axis, mask=mask)

    def logsumexp(self, a: Node, axis: int = -1, mask=None) -> Node:
        """log(sum(exp(a))) along axis over masked-in entries; fully masked rows give 0."""
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
        return self._add("logsumexp", (a,), axis=axis, mask=mask)

    def concat(self, nodes: Sequence[Node], axis: int = -1) -> Node:
        return self._add("concat", tuple(nodes), axis=axis)

    def slice(self, a: Node, index) -> Node:
        """Basic numpy indexing (ints, slices, None, Ellipsis)."""
        return self._add("slice", (a,), index=index)

    def sum(self, a: Node, axis=None, keepdims: bool = False) -> Node:
        return self._add("sum", (a,), axis=axis, keepdims=keepdims)

    def reshape(self, a: Node, shape: Tuple[int, ...]) -> Node:
        return self._add("reshape", (a,), shape=tuple(shape))

    def gather(self, table: Node, ids) -> Node:
        """Rows of a 2-D table at integer ids (any shape)."""
        return self._add("gather", (table,), ids=np.asarray(ids, dtype=np.int64))

    # --------------------------------------------------------------------------
    # Composites
    # --------------------------------------------------------------------------

    def linear(self, x: Node, weight: Node, bias: Optional[Node] = None) -> Node:
        out = self.matmul(x, weight)
        return out if bias is None else self.add(out, bias)

    def mean(self, a: Node, axis=None) -> Node:
        """Mean over axis; the divisor is read from the forward shape."""
        return self._add("mean", (a,), axis=axis)


# ==============================================================================
# OP REGISTRY
# ==============================================================================

def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back to the operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(node: Node, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(node.label, f"cannot broadcast {a.shape} with {b.shape}")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _masked_softmax(x: np.ndarray, axis: int, mask: Optional[np.ndarray]) -> np.ndarray:
    if mask is None:
        shifted = x - np.max(x, axis=axis, keepdims=True)
        e = np.exp(shifted)
        return e / np.sum(e, axis=axis, keepdims=True)
    mask = np.broadcast_to(mask, x.shape)
    peak = np.max(np.where(mask, x, -np.inf), axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    e = np.where(mask, np.exp(np.where(mask, x - peak, 0.0)), 0.0)
    denom = np.sum(e, axis=axis, keepdims=True)
    # fully masked rows stay all-zero
    return e / np.where(denom > 0.0, denom, 1.0)


# --- forward rules -------------------------------------------------------------

def _fwd_binary(fn: Callable) -> Callable:
    def forward(node: Node, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _broadcast_shape(node, a, b)
        return fn(a, b)
    return forward


def _fwd_matmul(node: Node, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(node.label, "matmul operands must be at least 1-D")
    inner_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if a.shape[-1] != inner_b:
        raise ShapeError(node.label, f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        return np.matmul(a, b)
    except ValueError as e:
        raise ShapeError(node.label, str(e))


def _fwd_softmax(node: Node, a: np.ndarray) -> np.ndarray:
    mask = node.attrs["mask"]
    if mask is not None:
        try:
            np.broadcast_to(mask, a.shape)
        except ValueError:
            raise ShapeError(node.label, f"mask {mask.shape} does not fit {a.shape}")
    return _masked_softmax(a, node.attrs["axis"], mask)


def _fwd_where(node: Node, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    condition = node.attrs["condition"]
    try:
        np.broadcast_shapes(condition.shape, a.shape, b.shape)
    except ValueError:
        raise ShapeError(node.label, f"condition {condition.shape} does not fit {a.shape} / {b.shape}")
    return np.where(condition, a, b)


def _fwd_logsumexp(node: Node, a: np.ndarray) -> np.ndarray:
    axis, mask = node.attrs["axis"], node.attrs["mask"]
    if mask is None:
        mask = np.ones(a.shape, dtype=bool)
    try:
        mask = np.broadcast_to(mask, a.shape)
    except ValueError:
        raise ShapeError(node.label, f"mask {mask.shape} does not fit {a.shape}")
    peak = np.max(np.where(mask, a, -np.inf), axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    total = np.sum(np.where(mask, np.exp(np.where(mask, a - peak, 0.0)), 0.0), axis=axis, keepdims=True)
    # fully masked rows give 0
    out = np.where(total > 0.0, peak + np.log(np.where(total > 0.0, total, 1.0)), 0.0)
    return np.squeeze(out, axis=axis)


def _fwd_concat(node: Node, *values: np.ndarray) -> np.ndarray:
    try:
        return np.concatenate(values, axis=node.attrs["axis"])
    except ValueError as e:
        raise ShapeError(node.label, str(e))


def _fwd_slice(node: Node, a: np.ndarray) -> np.ndarray:
    try:
        return np.array(a[node.attrs["index"]], dtype=np.float64)
    except IndexError as e:
        raise ShapeError(node.label, str(e))


def _fwd_reshape(node: Node, a: np.ndarray) -> np.ndarray:
    try:
        return a.reshape(node.attrs["shape"])
    except ValueError as e:
        raise ShapeError(node.label, str(e))


def _fwd_gather(node: Node, table: np.ndarray) -> np.ndarray:
    ids = node.attrs["ids"]
    if table.ndim != 2:
        raise ShapeError(node.label, f"gather table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(node.label, f"ids out of range for table with {table.shape[0]} rows")
    return table[ids]


def _fwd_sum(node: Node, a: np.ndarray) -> np.ndarray:
    return np.asarray(np.sum(a, axis=node.attrs["axis"], keepdims=node.attrs["keepdims"]))


def _fwd_mean(node: Node, a: np.ndarray) -> np.ndarray:
    return np.asarray(np.mean(a, axis=node.attrs["axis"]))


# --- backward rules (return one gradient per parent) ---------------------------

def _bwd_add(node, g, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _bwd_sub(node, g, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _bwd_mul(node, g, a, b):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _bwd_cos_diff(node, g, a, b):
    s = np.sin(a - b)
    return _unbroadcast(-s * g, a.shape), _unbroadcast(s * g, b.shape)


def _bwd_matmul(node, g, a, b):
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    a2 = a[None, :] if a.ndim == 1 else a
    b2 = b[:, None] if b.ndim == 1 else b
    g2 = g
    if a.ndim == 1:
        g2 = np.expand_dims(g2, -2)
    if b.ndim == 1:
        g2 = np.expand_dims(g2, -1)
    ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
    gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
    if a.ndim == 1:
        ga = ga.squeeze(-2)
    if b.ndim == 1:
        gb = gb.squeeze(-1)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def _bwd_softmax(node, g, a):
    y = node.value
    axis = node.attrs["axis"]
    return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)


def _bwd_where(node, g, a, b):
    condition = node.attrs["condition"]
    return (
        _unbroadcast(np.where(condition, g, 0.0), a.shape),
        _unbroadcast(np.where(condition, 0.0, g), b.shape),
    )


def _bwd_logsumexp(node, g, a):
    weights = _masked_softmax(a, node.attrs["axis"], node.attrs["mask"])
    return (weights * np.expand_dims(g, node.attrs["axis"]),)


def _bwd_concat(node, g, *values):
    axis = node.attrs["axis"]
    sizes = [v.shape[axis] for v in values]
    cuts = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, cuts, axis=axis))


def _bwd_slice(node, g, a):
    out = np.zeros_like(a)
    out[node.attrs["index"]] += g
    return (out,)


def _bwd_sum(node, g, a):
    axis = node.attrs["axis"]
    if axis is not None and not node.attrs["keepdims"]:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def _bwd_mean(node, g, a):
    axis = node.attrs["axis"]
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / count, a.shape).copy(),)


def _bwd_gather(node, g, table):
    out = np.zeros_like(table)
    np.add.at(out, node.attrs["ids"], g)
    return (out,)


@dataclass(frozen=True)
class OpRule:
    """Forward and backward rule of one op kind."""

    forward: Callable[..., np.ndarray]
    backward: Optional[Callable[..., Tuple[np.ndarray, ...]]]


OPS: Dict[str, OpRule] = {
    "add": OpRule(_fwd_binary(np.add), _bwd_add),
    "sub": OpRule(_fwd_binary(np.subtract), _bwd_sub),
    "mul": OpRule(_fwd_binary(np.multiply), _bwd_mul),
    "cos_diff": OpRule(_fwd_binary(lambda a, b: np.cos(a - b)), _bwd_cos_diff),
    "neg": OpRule(lambda n, a: -a, lambda n, g, a: (-g,)),
    "scale": OpRule(lambda n, a: a * n.attrs["c"], lambda n, g, a: (g * n.attrs["c"],)),
    "exp": OpRule(lambda n, a: np.exp(a), lambda n, g, a: (g * n.value,)),
    "log": OpRule(lambda n, a: np.log(a), lambda n, g, a: (g / a,)),
    "sigmoid": OpRule(
        lambda n, a: _stable_sigmoid(a),
        lambda n, g, a: (g * n.value * (1.0 - n.value),),
    ),
    "relu": OpRule(lambda n, a: np.maximum(a, 0.0), lambda n, g, a: (g * (a > 0.0),)),
    "softplus": OpRule(
        lambda n, a: np.logaddexp(0.0, a),
        lambda n, g, a: (g * _stable_sigmoid(a),),
    ),
    "matmul": OpRule(_fwd_matmul, _bwd_matmul),
    "softmax": OpRule(_fwd_softmax, _bwd_softmax),
    "logsumexp": OpRule(_fwd_logsumexp, _bwd_logsumexp),
    "where": OpRule(_fwd_where, _bwd_where),
    "concat": OpRule(_fwd_concat, _bwd_concat),
    "slice": OpRule(_fwd_slice, _bwd_slice),
    "sum": OpRule(_fwd_sum, _bwd_sum),
    "mean": OpRule(_fwd_mean, _bwd_mean),
    "reshape": OpRule(_fwd_reshape, lambda n, g, a: (g.reshape(a.shape),)),
    "gather": OpRule(_fwd_gather, _bwd_gather),
}
