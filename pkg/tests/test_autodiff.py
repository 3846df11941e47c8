import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from heatsmoothing import autodiff as ad
from heatsmoothing import nn

from conftest import central_fd, leaf, rel_err


def test_dot_hand_arithmetic():
    assert ad.dot(leaf([1, 2]), leaf([3, 4])).item() == 11.0


def test_softmax_symmetry():
    np.testing.assert_allclose(ad.softmax(leaf([0.0, 0.0])).data, [0.5, 0.5])


def test_relu_values_and_subgradient_at_zero():
    x = leaf([-1.0, 0.0, 2.0])
    y = ad.relu(x)
    np.testing.assert_array_equal(y.data, [0.0, 0.0, 2.0])
    g = ad.grad(ad.sum(y), [x])[x]
    np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])


def test_shape_mismatch_names_operation_and_shapes():
    with pytest.raises(ValueError, match=r"matmul.*\(2, 3\).*\(2, 2\)"):
        ad.matmul(leaf(np.ones((2, 3))), leaf(np.ones((2, 2))))
    with pytest.raises(ValueError, match=r"add.*\(3,\).*\(4,\)"):
        ad.add(leaf(np.ones(3)), leaf(np.ones(4)))


def test_leaf_rejects_nonfinite_and_empty():
    with pytest.raises(ValueError):
        ad.Tensor([1.0, np.nan])
    with pytest.raises(ValueError):
        ad.Tensor([np.inf])
    with pytest.raises(ValueError):
        ad.Tensor(np.zeros(0))


def test_grad_of_squared_norm():
    x = leaf([1.0, 2.0])
    np.testing.assert_array_equal(ad.grad(ad.dot(x, x), [x])[x], [2.0, 4.0])


def test_grad_of_linear_form_is_transpose(rng):
    A = rng.standard_normal((3, 4))
    w = rng.standard_normal(3)
    x = leaf(rng.standard_normal(4))
    root = ad.dot(ad.Tensor(w), ad.matmul(ad.Tensor(A), x))
    np.testing.assert_allclose(ad.grad(root, [x])[x], A.T @ w, rtol=1e-14)


def test_non_scalar_root_rejected():
    x = leaf([1.0, 2.0])
    with pytest.raises(ValueError, match="scalar"):
        ad.grad(ad.square(x), [x])


def test_freed_graph_rejected():
    x = leaf([1.0, 2.0])
    root = ad.sum(ad.square(x))
    ad.free(root)
    with pytest.raises(RuntimeError):
        ad.grad(root, [x])


def test_repeated_backward_is_identical(rng):
    x = leaf(rng.standard_normal(5))
    root = ad.sum(ad.tanh(x) * x)
    g1 = ad.grad(root, [x])[x]
    g2 = ad.grad(root, [x])[x]
    np.testing.assert_array_equal(g1, g2)


def test_detach_product_rule():
    x = leaf([1.5, -2.0, 3.0])
    root = ad.sum(ad.detach(x) * x)
    np.testing.assert_array_equal(ad.grad(root, [x])[x], x.data)


def test_detach_preserves_value():
    y = ad.tanh(leaf([0.3, -0.7]))
    np.testing.assert_array_equal(ad.detach(y).data, y.data)


def test_detach_nullity():
    # a leaf reachable only through a detached node gets exactly zero
    a, b = leaf([1.0, 2.0]), leaf([0.5, 0.5])
    root = ad.sum(ad.detach(ad.square(a)) * b)
    g = ad.grad(root, [a, b])
    np.testing.assert_array_equal(g[a], [0.0, 0.0])
    np.testing.assert_array_equal(g[b], [1.0, 4.0])


# every primitive against central differences
UNARY = {
    "relu": lambda t: ad.sum(ad.relu(t) * ad.Tensor(np.arange(1.0, 7.0).reshape(2, 3))),
    "tanh": lambda t: ad.sum(ad.tanh(t)),
    "exp": lambda t: ad.sum(ad.exp(t)),
    "log": lambda t: ad.sum(ad.log(ad.square(t) + 1.0)),
    "softmax": lambda t: ad.sum(ad.square(ad.softmax(t)) * ad.Tensor(np.arange(6.0).reshape(2, 3))),
    "log_softmax": lambda t: ad.sum(ad.log_softmax(t) * ad.Tensor(np.arange(6.0).reshape(2, 3))),
    "logsumexp": lambda t: ad.sum(ad.logsumexp(t, axis=0)),
    "mean": lambda t: ad.mean(ad.square(t)),
    "sum_axis": lambda t: ad.dot(ad.sum(ad.square(t), axis=1), ad.Tensor([1.0, -2.0])),
    "norm_sq": lambda t: ad.sum(ad.norm_sq(t, axis=1)),
    "reshape": lambda t: ad.sum(ad.reshape(t, (3, 2)) @ ad.Tensor([[1.0], [2.0]])),
    "scale_neg_sub": lambda t: ad.sum(ad.square(-(2.5 * t) - t)),
    "matmul": lambda t: ad.sum(ad.square(t @ ad.Tensor(np.arange(12.0).reshape(3, 4) / 10))),
    "bias": lambda t: ad.sum(ad.square(t + ad.Tensor([0.1, 0.2, 0.3]))),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_primitive_gradcheck(name, rng):
    x = leaf(rng.standard_normal((2, 3)) + 0.1)
    fn = UNARY[name]
    g = ad.grad(fn(x), [x])[x]
    fd = central_fd(lambda: fn(ad.Tensor(x.data)).item(), x.data)
    assert rel_err(g, fd) < 1e-6


def test_mlp_gradcheck_inputs_and_weights(rng):
    m = nn.init_mlp([3, 16, 16, 4], "tanh", seed=1)
    X = leaf(rng.standard_normal((5, 3)))

    def loss(inp):
        return ad.sum(ad.square(ad.softmax(m.logits(inp)))) + ad.mean(ad.log_softmax(m.logits(inp)))

    g = ad.grad(loss(X), m.params + [X])
    for p in m.params + [X]:
        fd = central_fd(lambda: loss(ad.Tensor(X.data)).item(), p.data)
        assert rel_err(g[p], fd) < 1e-6


def test_detached_direction_loss_gradcheck(rng):
    # the JL-style pattern: first sweep gives a direction, detached, second builds the loss
    m = nn.init_mlp([2, 8, 3], "tanh", seed=2)
    x = rng.standard_normal((4, 2))
    w = rng.standard_normal((4, 3))

    def direction():
        X = ad.Tensor(x, requires_grad=True)
        G = ad.grad(ad.sum(m.logits(X) * ad.Tensor(w)), [X])[X]
        return G / np.linalg.norm(G, axis=1, keepdims=True)

    L = direction()  # detached: a constant for both routes

    def loss():
        V = m.logits(x)
        q = ad.sum((m.logits(ad.Tensor(x + 0.1 * L)) - V) * ad.Tensor(w), axis=1)
        return ad.sum(ad.square(q))

    g = ad.grad(loss(), m.params)
    for p in m.params:
        fd = central_fd(lambda: loss().item(), p.data)
        assert rel_err(g[p], fd) < 1e-6


finite = arrays(np.float64, 4, elements=st.floats(-5, 5))


@settings(max_examples=40, deadline=None)
@given(finite, st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(xv, a, b):
    x = leaf(xv)
    f = ad.sum(ad.tanh(x))
    g = ad.dot(x, x)
    combo = ad.grad(a * f + b * g, [x])[x]
    sep = a * ad.grad(f, [x])[x] + b * ad.grad(g, [x])[x]
    np.testing.assert_allclose(combo, sep, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-30, 30)))
def test_softmax_normalized(z):
    p = ad.softmax(ad.Tensor(z)).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p >= 0) and np.all(p <= 1)


def test_log_softmax_stable_for_large_logits():
    z = ad.Tensor([[1000.0, 0.0, -1000.0]])
    out = ad.log_softmax(z).data
    assert np.all(np.isfinite(out))
    assert out[0, 0] == 0.0
