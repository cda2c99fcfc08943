import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cmin import tensor as T
from cmin.params import ParamTree, grad_check, gradients
from cmin.tensor import DomainError, ShapeError, Tensor


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------- forward examples


def test_matmul_identity():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(T.matmul(np.eye(2), m).data, m)


def test_matmul_by_hand():
    assert T.matmul([[1.0, 2.0]], [[3.0], [4.0]]).data.tolist() == [[11.0]]


def test_relu_definition():
    assert T.relu([-1.0, 0.0, 2.0]).data.tolist() == [0.0, 0.0, 2.0]


def test_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(np.ones((2, 3)), np.ones((4, 5)))
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2,\)"):
        T.add(np.ones((2, 3)), np.ones(2))


def test_bias_broadcast_over_leading_axes_only():
    out = T.add(np.zeros((2, 3, 4)), np.arange(4.0))
    assert out.shape == (2, 3, 4)
    with pytest.raises(ShapeError):
        T.mul(np.ones((3, 4)), np.ones((3, 1)))


def test_log_domain():
    with pytest.raises(DomainError):
        T.log([1.0, 0.0])
    with pytest.raises(DomainError):
        T.log([-2.0])


def test_softmax_rows_examples():
    np.testing.assert_allclose(T.softmax_rows([[2.5, 2.5, 2.5]]).data, [[1 / 3] * 3], atol=1e-15)
    np.testing.assert_allclose(T.softmax_rows([[0.0, math.log(2.0)]]).data, [[1 / 3, 2 / 3]], atol=1e-15)
    big = T.softmax_rows([[1000.0, 1000.0]]).data
    assert np.all(np.isfinite(big))
    np.testing.assert_array_equal(big, [[0.5, 0.5]])
    with pytest.raises(ShapeError):
        T.softmax_rows([1.0, 2.0])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)),
              elements=st.floats(-500, 500)))
def test_softmax_rows_stochastic(m):
    y = T.softmax_rows(m).data
    assert np.all(y >= 0) and np.all(y <= 1)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-6)


# ---------------------------------------------------------------- backward examples


def test_backward_product_rule():
    x, y = leaf(3.0), leaf(5.0)
    g = T.backward(x * y)
    assert g[id(x)] == 5.0 and g[id(y)] == 3.0


def test_backward_sigmoid_at_zero():
    x = leaf(0.0)
    T.sigmoid(x).backward()
    assert x.grad == pytest.approx(0.25, abs=1e-15)


def test_backward_relu_flat_region():
    x = leaf(-1.0)
    T.relu(x).backward()
    assert x.grad == 0.0


def test_backward_requires_scalar():
    with pytest.raises(ShapeError):
        T.backward(T.mul(leaf([1.0, 2.0]), 2.0))


def test_reused_leaf_accumulates():
    x = leaf(2.0)
    T.backward(x * x + x)
    assert x.grad == pytest.approx(5.0)


def test_unused_leaf_gets_zero_gradient():
    a, b = leaf([1.0, 2.0]), leaf([[3.0]])
    grads = gradients(T.tsum(a * a), ParamTree({"a": a, "b": b}))
    np.testing.assert_array_equal(grads["b"], np.zeros((1, 1)))
    np.testing.assert_array_equal(grads["a"], [2.0, 4.0])


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with T.no_grad():
        y = T.sigmoid(x)
    assert not y.requires_grad and y._parents == ()


def test_backward_linearity():
    rng = np.random.default_rng(0)
    w = leaf(rng.standard_normal((3, 4)))
    x = rng.standard_normal((5, 4))

    def f():
        return T.tsum(T.tanh(T.linear(x, w)))

    def g():
        return T.tsum(T.sigmoid(T.linear(x, w)) * T.sigmoid(T.linear(x, w)))

    a, b = 0.7, -1.3
    tree = ParamTree({"w": w})
    gf = gradients(f(), tree)["w"]
    gg = gradients(g(), tree)["w"]
    both = gradients(T.add(T.mul(f(), a), T.mul(g(), b)), tree)["w"]
    np.testing.assert_allclose(both, a * gf + b * gg, rtol=1e-12, atol=1e-14)


def test_forward_determinism():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 6))
    w = rng.standard_normal((3, 6))
    run = lambda: T.softmax(T.tanh(T.linear(x, w))).data  # noqa: E731
    assert run().tobytes() == run().tobytes()


# ---------------------------------------------------------------- grad_check


def test_grad_check_square():
    p = leaf([1.0, 2.0])
    assert grad_check(lambda: T.tsum(p * p), ParamTree({"p": p}), eps=1e-5) <= 1e-6


def test_grad_check_constant():
    p = leaf([1.0, 2.0])
    tree = ParamTree({"p": p})
    assert np.all(gradients(T.tsum(T.mul(Tensor([1.0, 1.0]), 3.0)), tree)["p"] == 0.0)
    assert grad_check(lambda: T.add(T.mul(p, 0.0).sum(), 4.0), tree, eps=1e-5) <= 1e-5


def test_grad_check_detects_wrong_gradient():
    p = leaf([0.3, -0.4])

    def wrong():
        # claims d/dp sum(p^2) = p instead of 2p
        return T._record(np.array((p.data ** 2).sum()), (p,), lambda g: (g * p.data,), "wrong")

    assert grad_check(wrong, ParamTree({"p": p})) > 0.1


COMPOSITES = {
    "linear": lambda x, w, b: T.linear(x, w, b),
    "matmul_batched": lambda x, w, b: T.matmul(T.reshape(x, (2, 3, 4)), T.swap_last(w)),
    "softmax": lambda x, w, b: T.softmax(T.linear(x, w)),
    "sigmoid_tanh": lambda x, w, b: T.sigmoid(x) * T.tanh(x),
    "broadcast": lambda x, w, b: T.broadcast_to(T.reshape(b, (1, 3)), (6, 3)),
    "concat_slice": lambda x, w, b: T.concat([x[:, :2], T.linear(x, w)], axis=-1)[1:4],
    "transpose": lambda x, w, b: T.transpose(T.reshape(x, (2, 3, 4)), (2, 0, 1)),
    "mean_log": lambda x, w, b: T.log(T.sigmoid(x)).sum(axis=0) + T.mean(x, axis=1).sum(),
    "clamp_interior": lambda x, w, b: T.clamp(x, -10.0, 10.0) * x,
    "take_rows": lambda x, w, b: T.take_rows(w, [[0, 2], [2, 1]]),
}


@pytest.mark.parametrize("name", sorted(COMPOSITES))
def test_composite_gradients(name):
    rng = np.random.default_rng(11)
    x = leaf(rng.standard_normal((6, 4)))
    w = leaf(rng.standard_normal((3, 4)))
    b = leaf(rng.standard_normal(3))
    proj = rng.standard_normal(np.asarray(COMPOSITES[name](x, w, b).shape))
    loss = lambda: T.tsum(T.mul(COMPOSITES[name](x, w, b), proj))  # noqa: E731
    assert grad_check(loss, ParamTree({"x": x, "w": w, "b": b}), eps=1e-5) <= 1e-6


def test_smooth_l1_gradient_off_kink():
    x = leaf([-2.3, -0.4, 0.2, 0.9, 1.7])
    assert grad_check(lambda: T.tsum(T.smooth_l1(x)), ParamTree({"x": x})) <= 1e-7


# ---------------------------------------------------------------- GRU scan vs primitive-op oracle


def reference_gru(gx, U, reverse=False):
    """GRU over one (T, 3h) sequence built only from primitive ops."""
    steps, three_h = gx.shape
    h = three_h // 3
    state = Tensor(np.zeros((1, h)))
    outs = [None] * steps
    for t in (range(steps - 1, -1, -1) if reverse else range(steps)):
        x = T.reshape(gx[t], (1, three_h))
        z = T.sigmoid(x[:, :h] + T.matmul(state, T.swap_last(U[:h])))
        r = T.sigmoid(x[:, h:2 * h] + T.matmul(state, T.swap_last(U[h:2 * h])))
        c = T.tanh(x[:, 2 * h:] + T.matmul(r * state, T.swap_last(U[2 * h:])))
        state = (1.0 - z) * state + z * c
        outs[t] = state
    return T.concat(outs, axis=0)


@pytest.mark.parametrize("reverse", [False, True])
def test_gru_scan_matches_reference(reverse):
    rng = np.random.default_rng(5)
    gx = leaf(rng.standard_normal((1, 7, 9)))
    U = leaf(rng.standard_normal((9, 3)) * 0.5)
    proj = rng.standard_normal((7, 3))
    tree = ParamTree({"gx": gx, "U": U})
    fused = T.gru_scan(gx, U, reverse=reverse)
    ref = reference_gru(T.reshape(gx, (7, 9)), U, reverse=reverse)
    np.testing.assert_allclose(fused.data[0], ref.data, atol=1e-13)
    g1 = gradients(T.tsum(T.mul(T.reshape(fused, (7, 3)), proj)), tree)
    g2 = gradients(T.tsum(T.mul(ref, proj)), tree)
    for k in g1:
        np.testing.assert_allclose(g1[k], g2[k], atol=1e-12)


@pytest.mark.parametrize("reverse", [False, True])
def test_gru_scan_mask_equals_unpadded_runs(reverse):
    rng = np.random.default_rng(6)
    lengths = [5, 2, 4]
    gx = rng.standard_normal((3, 5, 6))
    U = rng.standard_normal((6, 2))
    mask = np.array([[1.0] * n + [0.0] * (5 - n) for n in lengths])
    out = T.gru_scan(gx, U, mask=mask, reverse=reverse).data
    for b, n in enumerate(lengths):
        single = T.gru_scan(gx[b:b + 1, :n], U, reverse=reverse).data[0]
        np.testing.assert_allclose(out[b, :n], single, atol=1e-14)
        assert np.all(out[b, n:] == 0.0)


def test_gru_scan_masked_gradcheck():
    rng = np.random.default_rng(8)
    gx = leaf(rng.standard_normal((2, 4, 6)))
    U = leaf(rng.standard_normal((6, 2)))
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=float)
    proj = rng.standard_normal((2, 4, 2))
    for rev in (False, True):
        loss = lambda: T.tsum(T.mul(T.gru_scan(gx, U, mask=mask, reverse=rev), proj))  # noqa: E731
        assert grad_check(loss, ParamTree({"gx": gx, "U": U})) <= 1e-7
