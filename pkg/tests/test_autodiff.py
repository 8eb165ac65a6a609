"""
Tests for the computation graph, reverse-mode gradients and the
finite-difference oracle.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.ccn.autodiff import (
    Graph,
    backward_grad,
    finite_diff_check,
    forward_eval,
    relative_error,
)
from src.ccn.errors import BackwardError, GraphError, ShapeError, UnboundInputError


def scalar_graph(build):
    """Graph over one scalar input 'x'; build maps (graph, x) to the root."""
    graph = Graph()
    root = build(graph, graph.input("x"))
    return graph, root


# ==============================================================================
# Forward
# ==============================================================================

class TestForward:
    """Forward evaluation of single ops"""

    def test_sigmoid_at_zero(self):
        graph, root = scalar_graph(lambda g, x: g.sigmoid(x))
        assert forward_eval(graph, {"x": 0.0}, root) == 0.5

    def test_log_of_exp(self):
        graph, root = scalar_graph(lambda g, x: g.log(g.exp(x)))
        assert forward_eval(graph, {"x": 1.7}, root) == pytest.approx(1.7, abs=1e-12)

    def test_softmax_two_logits(self):
        graph, root = scalar_graph(lambda g, x: g.softmax(x))
        out = forward_eval(graph, {"x": np.array([1.0, 0.0])}, root)
        e = np.e
        assert out == pytest.approx([e / (e + 1), 1 / (e + 1)], abs=1e-12)
        assert out == pytest.approx([0.7311, 0.2689], abs=1e-4)

    def test_masked_softmax_zeroes_masked_slots(self):
        graph, root = scalar_graph(lambda g, x: g.softmax(x, mask=[True, False, True]))
        out = forward_eval(graph, {"x": np.array([0.0, 50.0, 0.0])}, root)
        assert out.tolist() == [0.5, 0.0, 0.5]

    def test_fully_masked_softmax_is_all_zero(self):
        graph, root = scalar_graph(lambda g, x: g.softmax(x, mask=[False, False]))
        out = forward_eval(graph, {"x": np.array([1.0, 2.0])}, root)
        assert out.tolist() == [0.0, 0.0]

    def test_stable_sigmoid_saturates_without_nan(self):
        graph, root = scalar_graph(lambda g, x: g.sigmoid(x))
        out = forward_eval(graph, {"x": np.array([-1000.0, 1000.0])}, root)
        assert out.tolist() == [0.0, 1.0]

    def test_softplus_large_input(self):
        graph, root = scalar_graph(lambda g, x: g.softplus(x))
        assert forward_eval(graph, {"x": 800.0}, root) == pytest.approx(800.0)

    def test_gather_rows(self):
        graph = Graph()
        root = graph.gather(graph.input("t"), [2, 0, 2])
        table = np.arange(6.0).reshape(3, 2)
        assert forward_eval(graph, {"t": table}, root).tolist() == [[4, 5], [0, 1], [4, 5]]

    def test_repeated_input_declaration_returns_same_node(self):
        graph = Graph()
        assert graph.input("w") is graph.input("w")
        assert graph.input_names == ["w"]


class TestForwardErrors:
    """Misuse is reported, never silently evaluated"""

    def test_unbound_input(self):
        graph, root = scalar_graph(lambda g, x: g.exp(x))
        with pytest.raises(UnboundInputError, match="'x'"):
            forward_eval(graph, {}, root)

    def test_matmul_inner_dimension_mismatch(self):
        graph = Graph()
        root = graph.matmul(graph.input("a"), graph.input("b"))
        with pytest.raises(ShapeError):
            forward_eval(graph, {"a": np.ones((2, 3)), "b": np.ones((2, 2))}, root)

    def test_broadcast_mismatch(self):
        graph = Graph()
        root = graph.add(graph.input("a"), graph.input("b"))
        with pytest.raises(ShapeError):
            forward_eval(graph, {"a": np.ones(3), "b": np.ones(2)}, root)

    def test_gather_out_of_range(self):
        graph = Graph()
        root = graph.gather(graph.input("t"), [3])
        with pytest.raises(ShapeError):
            forward_eval(graph, {"t": np.ones((3, 2))}, root)

    def test_foreign_parent_rejected(self):
        other = Graph()
        stray = other.input("x")
        with pytest.raises(ShapeError):
            Graph().exp(stray)

    def test_empty_graph(self):
        with pytest.raises(GraphError):
            forward_eval(Graph(), {})


# ==============================================================================
# Backward
# ==============================================================================

class TestBackward:
    """Reverse-mode gradients against hand derivatives"""

    def test_square(self):
        graph, root = scalar_graph(lambda g, x: g.mul(x, x))
        forward_eval(graph, {"x": 3.0}, root)
        assert backward_grad(graph, root).for_inputs()["x"] == pytest.approx(6.0)

    def test_sigmoid_slope_at_zero(self):
        graph, root = scalar_graph(lambda g, x: g.sigmoid(x))
        forward_eval(graph, {"x": 0.0}, root)
        assert backward_grad(graph, root).for_inputs()["x"] == pytest.approx(0.25)

    def test_cos_diff_chain_rule(self):
        graph = Graph()
        a, b = graph.input("a"), graph.input("b")
        root = graph.cos_diff(a, b)
        forward_eval(graph, {"a": 1.0, "b": 2.0}, root)
        grads = backward_grad(graph, root).for_inputs()
        assert grads["a"] == pytest.approx(-np.sin(-1.0), abs=1e-12)
        assert grads["a"] == pytest.approx(0.8415, abs=1e-4)
        assert grads["b"] == pytest.approx(np.sin(-1.0), abs=1e-12)

    def test_shared_node_accumulates(self):
        # f = x * x + 3x -> f' = 2x + 3
        graph = Graph()
        x = graph.input("x")
        root = graph.add(graph.mul(x, x), graph.scale(x, 3.0))
        forward_eval(graph, {"x": 2.0}, root)
        assert backward_grad(graph, root).for_inputs()["x"] == pytest.approx(7.0)

    def test_gather_gradient_scatters_into_rows(self):
        graph = Graph()
        root = graph.sum(graph.gather(graph.input("t"), [0, 0, 2]))
        forward_eval(graph, {"t": np.zeros((3, 2))}, root)
        grad = backward_grad(graph, root).for_inputs()["t"]
        assert grad.tolist() == [[2, 2], [0, 0], [1, 1]]

    def test_broadcast_gradient_is_summed_back(self):
        graph = Graph()
        root = graph.sum(graph.add(graph.input("m"), graph.input("b")))
        forward_eval(graph, {"m": np.zeros((4, 3)), "b": np.zeros(3)}, root)
        grads = backward_grad(graph, root).for_inputs()
        assert grads["b"].tolist() == [4.0, 4.0, 4.0]
        assert grads["m"].shape == (4, 3)

    def test_unreached_input_has_no_gradient_entry(self):
        graph = Graph()
        x = graph.input("x")
        graph.input("unused")
        root = graph.exp(x)
        forward_eval(graph, {"x": 0.0, "unused": 1.0}, root)
        assert set(backward_grad(graph, root).for_inputs()) == {"x"}

    def test_backward_before_forward(self):
        graph, root = scalar_graph(lambda g, x: g.exp(x))
        with pytest.raises(BackwardError):
            backward_grad(graph, root)

    def test_non_scalar_root(self):
        graph, root = scalar_graph(lambda g, x: g.exp(x))
        forward_eval(graph, {"x": np.ones(3)}, root)
        with pytest.raises(BackwardError, match="not scalar"):
            backward_grad(graph, root)


# ==============================================================================
# Finite differences
# ==============================================================================

class TestFiniteDiff:
    """Central differences agree with backward_grad"""

    def test_square_is_exact_enough(self):
        graph, root = scalar_graph(lambda g, x: g.mul(x, x))
        report = finite_diff_check(graph, {"x": 3.0}, tolerance=1e-6, root=root)
        assert report.max_rel_error < 1e-6
        assert report.passed

    def test_dead_branch_has_zero_gradients(self):
        graph = Graph()
        w, x = graph.input("w"), graph.input("x")
        dead = graph.sum(graph.mul(w, graph.const(0.0)))
        root = graph.add(dead, graph.mul(x, x))
        report = finite_diff_check(graph, {"w": np.array([1.5, -2.0]), "x": 1.0}, root=root)
        assert report.leaves["w"].max_rel_error == 0.0
        assert report.leaves["w"].analytic == 0.0
        assert report.leaves["w"].numeric == 0.0

    def test_composite_graph(self):
        rng = np.random.default_rng(0)
        graph = Graph()
        x, w = graph.input("x"), graph.input("w")
        probs = graph.softmax(graph.matmul(x, w), axis=-1, mask=[True, True, False])
        root = graph.mean(graph.log(graph.add(probs, graph.const(1.0))))
        inputs = {"x": rng.normal(size=(2, 4)), "w": rng.normal(size=(4, 3))}
        report = finite_diff_check(graph, inputs, tolerance=1e-4, root=root)
        assert report.passed
        assert report.leaves["w"].coords_checked == 12

    def test_relu_kink_step_is_skipped(self):
        graph, root = scalar_graph(lambda g, x: g.relu(x))
        report = finite_diff_check(graph, {"x": 0.0}, root=root)
        assert report.leaves["x"].kinks_skipped == 1
        assert report.max_rel_error == 0.0

    def test_coordinate_subsampling(self):
        graph = Graph()
        root = graph.sum(graph.exp(graph.input("x")))
        report = finite_diff_check(
            graph, {"x": np.zeros(50)}, root=root, max_coords_per_leaf=5
        )
        assert report.leaves["x"].coords_checked == 5

    def test_non_finite_step_is_flagged(self):
        graph, root = scalar_graph(lambda g, x: g.log(x))
        report = finite_diff_check(graph, {"x": 0.0}, root=root)
        assert report.leaves["x"].non_finite
        assert not report.passed

    def test_relative_error_floor(self):
        assert relative_error(0.0, 1e-9) == pytest.approx(1e-3)
        assert relative_error(2.0, 1.0) == pytest.approx(0.5)

    def test_inputs_are_not_mutated(self):
        x = np.array([0.3, -0.2])
        graph = Graph()
        root = graph.sum(graph.mul(graph.input("x"), graph.input("x")))
        finite_diff_check(graph, {"x": x}, root=root)
        assert x.tolist() == [0.3, -0.2]

    def test_graph_keeps_unshifted_values(self):
        graph = Graph()
        a, b = graph.input("a"), graph.input("b")
        hidden = graph.exp(a)
        root = graph.sum(graph.mul(hidden, graph.sigmoid(b)))
        inputs = {"a": np.array([0.1, -0.4]), "b": np.array([1.2, 0.3])}
        expected = float(forward_eval(graph, inputs, root))

        report = finite_diff_check(graph, inputs, root=root)

        assert report.passed
        assert float(root.value) == expected
        assert np.array_equal(hidden.value, np.exp(inputs["a"]))


# ==============================================================================
# Properties
# ==============================================================================

OP_BUILDERS = {
    "add": lambda g, a, b: g.add(a, b),
    "sub": lambda g, a, b: g.sub(a, b),
    "mul": lambda g, a, b: g.mul(a, b),
    "scale": lambda g, a, b: g.scale(a, -1.7),
    "matmul": lambda g, a, b: g.matmul(a, g.reshape(b, (3, 2))),
    "exp": lambda g, a, b: g.exp(a),
    "log": lambda g, a, b: g.log(g.add(g.mul(a, a), g.const(0.5))),
    "cos_diff": lambda g, a, b: g.cos_diff(a, b),
    "softmax": lambda g, a, b: g.softmax(a, axis=-1, mask=[True, False, True]),
    "sigmoid": lambda g, a, b: g.sigmoid(a),
    "relu": lambda g, a, b: g.relu(a),
    "softplus": lambda g, a, b: g.softplus(a),
    "concat": lambda g, a, b: g.concat([a, b], axis=0),
    "slice": lambda g, a, b: g.slice(a, (slice(None), slice(1, 3))),
    "gather": lambda g, a, b: g.gather(b, [1, 0, 1]),
    "logsumexp": lambda g, a, b: g.logsumexp(a, axis=-1, mask=[[True, False, True], [False] * 3]),
    "where": lambda g, a, b: g.where([[True, False, True], [False, True, False]], a, b),
}


@pytest.mark.parametrize("op", sorted(OP_BUILDERS))
@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=10, deadline=None)
def test_every_op_matches_finite_differences(op, seed):
    rng = np.random.default_rng(seed)
    graph = Graph()
    out = OP_BUILDERS[op](graph, graph.input("a"), graph.input("b"))
    root = graph.sum(graph.mul(out, out))
    inputs = {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(2, 3))}

    report = finite_diff_check(graph, inputs, tolerance=1e-4, root=root)

    assert report.passed, f"{op}: {report.max_rel_error:.3e}"


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_backward_is_linear_over_summed_roots(seed):
    rng = np.random.default_rng(seed)
    graph = Graph()
    x, w = graph.input("x"), graph.input("w")
    first = graph.sum(graph.mul(graph.exp(x), w))
    second = graph.sum(graph.sigmoid(graph.matmul(x, graph.reshape(w, (4, 1)))))
    total = graph.add(first, second)
    forward_eval(graph, {"x": rng.normal(size=(3, 4)), "w": rng.normal(size=(4,))}, total)

    combined = backward_grad(graph, total).for_inputs()
    parts = [backward_grad(graph, root).for_inputs() for root in (first, second)]

    for name in ("x", "w"):
        assert combined[name] == pytest.approx(parts[0][name] + parts[1][name], abs=1e-12)


def test_reruns_are_bit_identical():
    def run():
        graph = Graph()
        x = graph.input("x")
        weights = graph.const(np.arange(6.0).reshape(3, 2))
        root = graph.mean(graph.softplus(graph.matmul(x, weights)))
        forward_eval(graph, {"x": np.linspace(-1, 1, 12).reshape(4, 3)}, root)
        return root.value.copy(), backward_grad(graph, root).for_inputs()["x"]

    (v1, g1), (v2, g2) = run(), run()
    assert v1.tobytes() == v2.tobytes()
    assert g1.tobytes() == g2.tobytes()


def test_logsumexp_is_stable_and_masked():
    graph = Graph()
    x = graph.input("x")
    mask = np.array([[True, True, False], [False, False, False]])
    root = graph.logsumexp(x, axis=-1, mask=mask)
    out = forward_eval(graph, {"x": np.array([[1000.0, 1000.0, 5.0], [1.0, 2.0, 3.0]])}, root)

    assert out[0] == pytest.approx(1000.0 + math.log(2), abs=1e-12)
    assert out[1] == 0.0


def test_where_routes_gradient_by_condition():
    graph = Graph()
    a, b = graph.input("a"), graph.input("b")
    root = graph.sum(graph.where([True, False], a, b))
    forward_eval(graph, {"a": np.array([1.0, np.inf]), "b": np.array([np.nan, 2.0])}, root)
    grads = backward_grad(graph, root).for_inputs()

    assert root.value == 3.0
    assert grads["a"].tolist() == [1.0, 0.0]
    assert grads["b"].tolist() == [0.0, 1.0]
