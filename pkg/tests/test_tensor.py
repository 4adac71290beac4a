import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmtad import tensor as tn
from mmtad.tensor import Tensor

from oracles import conv1d_loops, layer_norm_stats, matmul_loops, numeric_grad, softmax_mp

rng = np.random.default_rng(1234)


def leaf(a):
    return Tensor(a, requires_grad=True)


def fd_check(build, leaves, h=1e-5, tol=1e-4):
    """Compare autodiff gradients with central differences for every entry."""
    out = build()
    tn.backward(out, leaves)
    worst = 0.0
    for x in leaves:
        analytic = x.grad.copy()
        for idx in np.ndindex(x.shape):
            num = numeric_grad(lambda: float(build().data), x.data, idx, h)
            a = analytic[idx]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-8))
        x.grad = None
    assert worst <= tol, worst


# ---------------------------------------------------------------- matmul

def test_matmul_identity_and_zero():
    b = rng.normal(size=(3, 4))
    assert np.array_equal((Tensor(np.eye(3)) @ Tensor(b)).data, b)
    assert np.array_equal((Tensor(b.T) @ Tensor(np.zeros((3, 2)))).data, np.zeros((4, 2)))


def test_matmul_matches_triple_loop():
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert np.allclose((Tensor(a) @ Tensor(b)).data, matmul_loops(a, b), atol=1e-14)


def test_matmul_shape_error_reports_both_shapes():
    with pytest.raises(tn.ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))


# ---------------------------------------------------------------- softmax

def test_softmax_uniform_row():
    out = tn.softmax_rows(Tensor(np.full((1, 5), 3.7))).data
    assert np.allclose(out, 0.2, atol=1e-15)


def test_softmax_large_logits_do_not_overflow():
    out = tn.softmax_rows(Tensor([[1000.0, 0.0]])).data
    assert np.all(np.isfinite(out))
    assert out[0, 0] == 1.0 and out[0, 1] < 1e-300


def test_softmax_matches_extended_precision():
    a = rng.normal(size=(2, 3))
    out = tn.softmax_rows(Tensor(a)).data
    for r in range(2):
        assert np.allclose(out[r], softmax_mp(a[r]), atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_rows_sum_to_one_and_shift_invariant(a, shift):
    out = tn.softmax_rows(Tensor(a)).data
    assert np.all(out >= 0)
    assert np.all(np.abs(out.sum(axis=1) - 1) <= 1e-12)
    shifted = tn.softmax_rows(Tensor(a + shift)).data
    assert np.max(np.abs(out - shifted)) <= 1e-12


# ---------------------------------------------------------------- layer norm

def test_layer_norm_constant_row_is_bias():
    out = tn.layer_norm(Tensor(np.full((2, 4), 5.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)), 1e-5)
    assert np.array_equal(out.data, np.zeros((2, 4)))


def test_layer_norm_already_normalized():
    out = tn.layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), 1e-300)
    assert np.allclose(out.data, [[1.0, -1.0]], atol=1e-15)


def test_layer_norm_statistics_oracle():
    x = rng.normal(size=(3, 6)) * 4 + 2
    g, b = rng.normal(size=6), rng.normal(size=6)
    out = tn.layer_norm(Tensor(x), Tensor(g), Tensor(b), 1e-12).data
    for r in range(3):
        assert np.allclose(out[r], layer_norm_stats(x[r], g, b, 1e-12), atol=1e-12)
    plain = tn.layer_norm(Tensor(x), Tensor(np.ones(6)), Tensor(np.zeros(6)), 1e-12).data
    assert np.all(np.abs(plain.mean(axis=1)) <= 1e-9)
    assert np.all(np.abs(plain.var(axis=1) - 1) <= 1e-9)


# ---------------------------------------------------------------- conv

def test_conv_identity_kernel():
    x = rng.normal(size=(5, 3))
    out = tn.conv1d_temporal(Tensor(x), Tensor(np.eye(3)[None]), Tensor(np.zeros(3)))
    assert np.array_equal(out.data, x)


def test_conv_zero_kernel_gives_bias_rows():
    b = np.array([1.0, -2.0])
    out = tn.conv1d_temporal(Tensor(rng.normal(size=(4, 3))), Tensor(np.zeros((3, 3, 2))), Tensor(b))
    assert np.array_equal(out.data, np.tile(b, (4, 1)))


def test_conv_matches_sliding_window_loops():
    x, k, b = rng.normal(size=(5, 2)), rng.normal(size=(3, 2, 3)), rng.normal(size=3)
    out = tn.conv1d_temporal(Tensor(x), Tensor(k), Tensor(b)).data
    assert out.shape == (5, 3)
    assert np.allclose(out, conv1d_loops(x, k, b), atol=1e-13)


def test_conv_rejects_even_kernel():
    with pytest.raises(tn.ShapeError):
        tn.conv1d_temporal(Tensor(np.ones((4, 2))), Tensor(np.ones((2, 2, 2))), Tensor(np.zeros(2)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 2), elements=st.floats(-5, 5)),
       arrays(np.float64, (6, 2), elements=st.floats(-5, 5)))
def test_conv_is_linear(a, b):
    k = Tensor(np.linspace(-1, 1, 3 * 2 * 3).reshape(3, 2, 3))
    zero = Tensor(np.zeros(3))
    lhs = tn.conv1d_temporal(Tensor(a + b), k, zero).data
    rhs = tn.conv1d_temporal(Tensor(a), k, zero).data + tn.conv1d_temporal(Tensor(b), k, zero).data
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


# ---------------------------------------------------------------- backward

def test_sum_gradient_is_ones():
    x = leaf(rng.normal(size=(3, 2)))
    tn.backward(tn.sum_all(x))
    assert np.array_equal(x.grad, np.ones((3, 2)))


def test_dot_self_gradient_is_2x():
    xv = rng.normal(size=(1, 4))
    x = leaf(xv)
    tn.backward(x @ tn.transpose(x))
    assert np.allclose(x.grad, 2 * xv, atol=1e-15)


def test_composite_graph_matches_finite_differences():
    a, b = leaf(rng.uniform(-2, 2, (3, 4))), leaf(rng.uniform(-2, 2, (4, 2)))
    w = Tensor(rng.normal(size=(3, 2)))
    fd_check(lambda: tn.sum_all(tn.softmax_rows(a @ b) * w), [a, b])


def test_backward_rejects_nonscalar():
    with pytest.raises(tn.ShapeError):
        tn.backward(leaf(np.ones((2, 2))))


def test_unused_leaf_gets_exact_zero_gradient():
    x, unused = leaf(rng.normal(size=3)), leaf(rng.normal(size=3))
    tn.backward(tn.sum_all(x * x), [x, unused])
    assert np.array_equal(unused.grad, np.zeros(3))


def test_shared_node_visited_once():
    x = leaf(np.array([2.0]))
    y = x * x
    tn.backward(tn.sum_all(y + y))   # d/dx 2x^2 = 4x
    assert x.grad[0] == 8.0
    order = tn.topological_order(tn.sum_all(y + y))
    assert len({id(n) for n in order}) == len(order)


def _each_op():
    g = lambda *s: leaf(rng.uniform(-2, 2, s))  # noqa: E731
    w = Tensor(rng.normal(size=(4, 3)))
    cases = {}
    a, b = g(4, 5), g(5, 3)
    cases["matmul"] = (lambda: tn.sum_all((a @ b) * w), [a, b])
    s = g(4, 3)
    cases["softmax"] = (lambda: tn.sum_all(tn.softmax_rows(s) * w), [s])
    x, gn, bs = g(4, 3), g(3), g(3)
    cases["layer_norm"] = (lambda: tn.sum_all(tn.layer_norm(x, gn, bs, 1e-5) * w), [x, gn, bs])
    cx, ck, cb = g(4, 2), g(3, 2, 3), g(3)
    cases["conv"] = (lambda: tn.sum_all(tn.conv1d_temporal(cx, ck, cb) * w), [cx, ck, cb])
    e1, e2 = g(4, 3), g(4, 3)
    cases["elementwise"] = (lambda: tn.sum_all((e1 * e2 - e1 / (e2 * e2 + 3.0) + e2) * w), [e1, e2])
    ge = g(4, 3)
    cases["gelu"] = (lambda: tn.sum_all(tn.gelu(ge) * w), [ge])
    p = leaf(rng.uniform(0.1, 2, (4, 3)))
    cases["log"] = (lambda: tn.sum_all(tn.log(p) * w), [p])
    c1, c2 = g(4, 1), g(4, 2)
    cases["concat"] = (lambda: tn.sum_all(tn.concat([c1, c2]) * w), [c1, c2])
    m1 = g(4, 3)
    m2 = Tensor(m1.data + rng.choice([-0.5, 0.5], size=(4, 3)))
    cases["min_max"] = (lambda: tn.sum_all((tn.minimum(m1, m2) + tn.maximum(m1, m2) * 2.0) * w), [m1])
    r = g(4, 3)
    cases["sum_axis"] = (lambda: tn.sum_all(tn.sum_axis(r, 0) * Tensor(np.arange(3.0))), [r])
    bb, bias = g(2, 4, 3), g(3)
    cases["broadcast_add"] = (lambda: tn.sum_all((bb + bias) * w), [bb, bias])
    return cases


@pytest.mark.parametrize("name", list(_each_op()))
def test_every_op_gradient_matches_finite_differences(name):
    build, leaves = _each_op()[name]
    fd_check(build, leaves)
