import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alcir import core_math as cm
from alcir.core_math import GradientTape, MlpSpec, ParamStore, Var, constant
from alcir.errors import DegenerateVectorError, DimensionError, EmbeddingLookupError, TrainingDivergenceError

from helpers import FD_TOL, gradcheck, relative_error


def _leaf(x):
    return Var(np.asarray(x, dtype=np.float64), needs_grad=True)


# --------------------------------------------------------------------------
# MLP


def test_mlp_zero_weights_outputs_bias():
    spec = MlpSpec((3, 4, 2))
    p = ParamStore(0)
    cm.init_mlp(spec, p, "m")
    for path in p.paths():
        p[path] = np.zeros_like(p[path])
    p["m/1/b"] = np.array([0.5, -1.5])
    out = cm.mlp_forward(spec, p, constant(np.random.default_rng(1).standard_normal((5, 3))), prefix="m")
    assert np.array_equal(out.value, np.tile([0.5, -1.5], (5, 1)))


def test_mlp_identity_layer():
    spec = MlpSpec((3, 3))
    p = ParamStore(0)
    cm.init_mlp(spec, p, "m")
    p["m/0/W"] = np.eye(3)
    x = np.random.default_rng(2).standard_normal((4, 3))
    assert np.array_equal(cm.mlp_forward(spec, p, constant(x), prefix="m").value, x)


def test_mlp_shape_mismatch():
    spec = MlpSpec((3, 2))
    p = ParamStore(0)
    cm.init_mlp(spec, p, "m")
    with pytest.raises(DimensionError):
        cm.mlp_forward(spec, p, constant(np.zeros((2, 4))), prefix="m")


def test_mlp_spec_validation():
    with pytest.raises(DimensionError):
        MlpSpec((3,))
    with pytest.raises(DimensionError):
        MlpSpec((3, 0, 2))
    with pytest.raises(DimensionError):
        MlpSpec((3, 4, 2), ("tanh",))
    assert MlpSpec((2, 3, 4, 5)).activations == ("relu", "relu")


@pytest.mark.parametrize("seed", range(3))
def test_mlp_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    spec = MlpSpec((5, 7, 6, 3))
    p = ParamStore(seed)
    cm.init_mlp(spec, p, "m")
    x = constant(rng.standard_normal((4, 5)))

    def f(params, tape):
        return cm.mean(cm.row_sum(cm.mlp_forward(spec, params, x, tape, prefix="m"), tape), tape)

    worst, _ = gradcheck(f, p)
    assert worst < FD_TOL


def test_init_is_deterministic_and_order_free():
    a, b = ParamStore(7), ParamStore(7)
    a.glorot("x", 3, 4)
    a.glorot("y", 2, 2)
    b.glorot("y", 2, 2)
    b.glorot("x", 3, 4)
    assert a.equals(b)
    c = ParamStore(8)
    c.glorot("x", 3, 4)
    assert not np.array_equal(a["x"], c["x"])
    limit = math.sqrt(6 / 7)
    assert np.all(np.abs(a["x"]) <= limit)


def test_duplicate_path_rejected():
    p = ParamStore(0)
    p.zeros("a", (2,))
    with pytest.raises(KeyError):
        p.zeros("a", (2,))


# --------------------------------------------------------------------------
# routing nodes


def _grad_through(node, x, upstream):
    tape = GradientTape()
    leaf = _leaf(x)
    out = node(leaf, tape)
    tape.backward(out, upstream)
    return out, leaf.grad


def test_gradient_reversal_examples():
    out, g = _grad_through(cm.gradient_reversal, [1.5, -2.0], [0.3, -0.7])
    assert np.array_equal(out.value, [1.5, -2.0])
    assert np.array_equal(g, [-0.3, 0.7])
    _, g0 = _grad_through(cm.gradient_reversal, [1.0, 2.0], [0.0, 0.0])
    assert np.array_equal(g0, [0.0, 0.0]) or np.array_equal(g0, [-0.0, -0.0])


def test_stop_gradient_examples():
    out, g = _grad_through(cm.stop_gradient, [2.0], [5.0])
    assert np.array_equal(out.value, [2.0])
    assert np.array_equal(g, [0.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=12))
def test_routing_bitwise(values):
    x = np.array(values)
    up = x[::-1].copy()
    out, g = _grad_through(cm.gradient_reversal, x, up)
    assert out.value.tobytes() == x.tobytes()
    assert g.tobytes() == (-up).tobytes()
    out, g = _grad_through(cm.stop_gradient, x, up)
    assert out.value.tobytes() == x.tobytes()
    assert not np.any(g)


def test_stop_gradient_toy_graph():
    """loss = ||stop(a*x) - b*x||^2: zero gradient for a, nonzero for b."""
    p = ParamStore(0)
    p["a"] = np.array([[1.3]])
    p["b"] = np.array([[0.4]])
    x = constant(np.array([[2.0]]))

    def f(params, tape):
        v = cm.matmul(x, cm._param(params, "a", tape), tape)
        w = cm.matmul(x, cm._param(params, "b", tape), tape)
        return cm.mean(cm.row_sq_dist(cm.stop_gradient(v, tape), w, tape), tape)

    tape = GradientTape()
    grads = tape.backward(f(p, tape))
    assert np.array_equal(grads["a"], [[0.0]])
    assert grads["b"][0, 0] != 0.0
    # the finite-difference oracle on the unstopped graph agrees for b
    expected_b = 2 * (0.4 * 2 - 1.3 * 2) * 2
    assert grads["b"][0, 0] == pytest.approx(expected_b, rel=1e-12)


# --------------------------------------------------------------------------
# elementwise ops and their gradients


OPS = {
    "relu": lambda a, b, t: cm.relu(a, t),
    "add": lambda a, b, t: cm.add(a, b, t),
    "sub": lambda a, b, t: cm.sub(a, b, t),
    "scale": lambda a, b, t: cm.scale(a, -2.5, t),
    "concat": lambda a, b, t: cm.concat([a, b], t),
    "concat_rows": lambda a, b, t: cm.concat_rows([a, b], t),
    "slice": lambda a, b, t: cm.slice_rows(cm.concat_rows([a, b], t), 1, 4, t),
    "softmax": lambda a, b, t: cm.softmax(a, t),
    "row_cosine": lambda a, b, t: cm.row_cosine(a, b, t),
    "row_sq_dist": lambda a, b, t: cm.row_sq_dist(a, b, t),
    "log": lambda a, b, t: cm.log(cm.softmax(a, t), t),
    "pick": lambda a, b, t: cm.pick(cm.softmax(a, t), [0, 2, 1], t),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    p = ParamStore(0)
    p["a"] = rng.standard_normal((3, 4))
    p["b"] = rng.standard_normal((3, 4))
    weights = constant(rng.standard_normal((1, 1)))

    def f(params, tape):
        out = OPS[name](cm._param(params, "a", tape), cm._param(params, "b", tape), tape)
        if out.value.ndim == 1:
            return cm.mean(out, tape)
        return cm.mean(cm.row_sum(cm.scale(out, float(weights.value[0, 0]), tape), tape), tape)

    worst, _ = gradcheck(f, p)
    assert worst < FD_TOL


def test_embed_gradient_and_bounds():
    p = ParamStore(0)
    p.embedding("E", 5, 3)
    idx = [0, 3, 3, 1]

    def f(params, tape):
        return cm.mean(cm.row_sum(cm.embedding_lookup(params, "E", idx, tape), tape), tape)

    tape = GradientTape()
    g = tape.backward(f(p, tape))["E"]
    assert np.allclose(g[3], 2 / 4) and np.allclose(g[2], 0.0)
    with pytest.raises(EmbeddingLookupError):
        cm.embedding_lookup(p, "E", [5])
    with pytest.raises(EmbeddingLookupError):
        cm.embedding_lookup(p, "E", [-1])


def test_log_clamps():
    x = _leaf([0.0, 1e-20, 0.5])
    tape = GradientTape()
    out = cm.log(x, tape)
    assert out.value[0] == pytest.approx(math.log(cm.LOG_CLAMP))
    tape.backward(out)
    assert x.grad[0] == 0.0 and x.grad[2] == pytest.approx(2.0)


def test_mean_of_empty_is_zero():
    assert float(cm.mean(constant(np.zeros((0, 3)))).value) == 0.0


def test_untouched_params_get_zero_grads():
    p = ParamStore(0)
    p["used"] = np.ones((1, 2))
    p["unused"] = np.ones((1, 2))
    tape = GradientTape()
    tape.param(p, "unused")
    loss = cm.mean(cm.row_sum(tape.param(p, "used"), tape), tape)
    grads = tape.backward(loss)
    assert np.array_equal(grads["unused"], np.zeros((1, 2)))
    assert np.array_equal(grads["used"], np.ones((1, 2)))


# --------------------------------------------------------------------------
# softmax and cosine


def test_softmax_examples():
    assert np.allclose(cm.softmax_probabilities(np.zeros(4)), 0.25, atol=0, rtol=1e-15)
    big = cm.softmax_probabilities([1000.0, 0.0])
    assert np.all(np.isfinite(big)) and big[0] == pytest.approx(1.0) and big[1] < 1e-300
    z = np.array([1.0, 2.0, 3.0])
    direct = np.exp(z) / np.exp(z).sum()
    assert np.max(np.abs(cm.softmax_probabilities(z) - direct)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=10), st.floats(-100, 100))
def test_softmax_properties(logits, shift):
    z = np.array(logits)
    p = cm.softmax_probabilities(z)
    assert np.all(p > 0)
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.max(np.abs(cm.softmax_probabilities(z + shift) - p)) <= 1e-10


def test_cosine_examples():
    assert cm.cosine_similarity([3.0, 4.0], [3.0, 4.0]) == pytest.approx(1.0)
    assert cm.cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert cm.cosine_similarity([1.0, 0.0], [1.0, 1.0]) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    with pytest.raises(DegenerateVectorError):
        cm.cosine_similarity([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(DimensionError):
        cm.cosine_similarity([1.0], [1.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_cosine_bounded(u, v):
    if np.linalg.norm(u) < 1e-6 or np.linalg.norm(v) < 1e-6:
        return
    c = cm.cosine_similarity(u, v)
    assert -1.0 <= c <= 1.0
    row = cm.row_cosine(constant([u]), constant([v])).value[0]
    assert row == pytest.approx(c, abs=1e-12)


def test_row_cosine_degenerate():
    with pytest.raises(DegenerateVectorError):
        cm.row_cosine(constant([[0.0, 0.0]]), constant([[1.0, 0.0]]))


# --------------------------------------------------------------------------
# optimizer


def test_optimizer_step_examples():
    p = ParamStore(0)
    p["w"] = np.array([1.0])
    cm.optimizer_step(p, {"w": np.array([0.5])}, 0.1)
    assert p["w"][0] == pytest.approx(0.95, abs=1e-15)
    before = p["w"].copy()
    cm.optimizer_step(p, {"w": np.zeros(1)}, 0.1)
    assert np.array_equal(p["w"], before)


def test_optimizer_rejects_nan_and_unknown():
    p = ParamStore(0)
    p["w"] = np.zeros(2)
    with pytest.raises(TrainingDivergenceError):
        cm.optimizer_step(p, {"w": np.array([np.nan, 0.0])}, 0.1)
    with pytest.raises(KeyError):
        cm.optimizer_step(p, {"v": np.zeros(2)}, 0.1)
    with pytest.raises(ValueError):
        cm.optimizer_step(p, {"w": np.zeros(2)}, 0.0)


@pytest.mark.parametrize("momentum", [0.0, 0.9])
def test_descent_converges_on_quadratic(momentum):
    """f(w) = 0.5 (w - t)^T A (w - t) has its minimizer at t."""
    rng = np.random.default_rng(0)
    m = rng.standard_normal((4, 4))
    A = m @ m.T + 4 * np.eye(4)
    t = rng.standard_normal(4)
    p = ParamStore(0)
    p["w"] = np.zeros(4)
    opt = cm.Optimizer(0.02, momentum=momentum)
    for _ in range(2000):
        opt.step(p, {"w": A @ (p["w"] - t)})
    assert np.allclose(p["w"], t, atol=1e-8)


def test_clip_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    c = cm.clip_global_norm(g, 1.0)
    assert np.sqrt(c["a"] ** 2 + c["b"] ** 2)[0] == pytest.approx(1.0)
    assert c["a"][0] / c["b"][0] == pytest.approx(0.75)
    assert cm.clip_global_norm(g, 10.0) is g


def test_relative_error_helper():
    assert relative_error([1.0], [1.0]) == 0.0
    assert relative_error([1.0], [1.1]) == pytest.approx(0.1 / 1.1)
