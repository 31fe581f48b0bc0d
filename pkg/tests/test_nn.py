import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import naive_attention, naive_conv
from tinyloc.nn import Adam, Linear, NonFiniteGradient, Tensor, grad_check, param_count
from tinyloc.nn import functional as F
from tinyloc.nn import tensor as ops


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


# -- elementwise and reduction ops ------------------------------------------
UNARY = {
    "exp": ops.exp,
    "log": lambda t: ops.log(t * t + 0.5),
    "sqrt": lambda t: ops.sqrt(t * t + 0.5),
    "sigmoid": ops.sigmoid,
    "softplus": ops.softplus,
    "silu": ops.silu,
    "tanh": ops.tanh,
    "logsumexp": lambda t: ops.logsumexp(t, axis=-1),
    "softmax": lambda t: F.softmax(t, axis=-1),
    "log_softmax": lambda t: F.log_softmax(t, axis=-1),
    "layer_norm": lambda t: F.layer_norm(t),
    "getitem": lambda t: t[1:, ::2],
    "swapaxes": lambda t: t.swapaxes(0, 1),
    "reshape": lambda t: t.reshape(-1),
    "pad_time": lambda t: ops.pad_time(t, 2),
    "mean": lambda t: t.mean(axis=0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_op_gradients(name, rng):
    x = leaf(rng, 3, 4)
    w = rng.normal(size=UNARY[name](Tensor(x.data)).shape)
    err, n = grad_check(lambda: (UNARY[name](x) * w).sum(), [x], eps=1e-3, stencil=4)
    assert n == 12
    assert err < 1e-5


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div", "matmul"])
def test_binary_op_gradients_with_broadcast(op, rng):
    a = leaf(rng, 2, 3, 4)
    b = leaf(rng, 4, 4) if op == "matmul" else leaf(rng, 4)
    if op == "div":
        b.data = np.abs(b.data) + 1.0
    f = {"add": ops.add, "sub": ops.sub, "mul": ops.mul, "div": ops.div, "matmul": ops.matmul}[op]
    err, _ = grad_check(lambda: f(a, b).sum() + (f(a, b) * f(a, b)).sum(), [a, b])
    assert err < 1e-6


def test_concat_and_where_const_gradients(rng):
    a, b = leaf(rng, 2, 3), leaf(rng, 2, 2)
    mask = np.array([[True, False, True, True, False], [False, True, True, False, True]])

    def loss():
        c = ops.concat([a, b], -1)
        return (ops.where_const(mask, c, 0.0) * c).sum()

    err, _ = grad_check(loss, [a, b])
    assert err < 1e-6


def test_gradient_accumulates_over_reuse(rng):
    x = leaf(rng, 5)
    (x * x + x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


# -- linear -------------------------------------------------------------------
def test_linear_identity_and_zero_input(rng):
    x = rng.normal(size=(3, 4))
    w = Tensor(np.eye(4))
    b = Tensor(rng.normal(size=4))
    np.testing.assert_array_equal(F.linear(x, w).data, x)
    np.testing.assert_array_equal(F.linear(np.zeros((2, 4)), w, b).data, np.tile(b.data, (2, 1)))


def test_linear_matches_hand_matmul(rng):
    x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=5)
    hand = np.array([[sum(x[i, k] * w[j, k] for k in range(4)) + b[j] for j in range(5)]
                     for i in range(3)])
    np.testing.assert_allclose(F.linear(x, Tensor(w), Tensor(b)).data, hand, atol=1e-12)


def test_linear_shape_error_names_dims():
    with pytest.raises(ValueError, match="3 != weight in_features 4"):
        F.linear(np.zeros((2, 3)), Tensor(np.zeros((5, 4))))


def test_param_count_of_linear():
    assert param_count(Linear(8, 4)) == 36


def test_linear_gradient(rng):
    layer = Linear(4, 3, rng=rng).astype(np.float64)
    x = rng.normal(size=(2, 5, 4))
    err, _ = grad_check(lambda: (layer(x) * layer(x)).sum(), layer.parameters())
    assert err < 1e-7


# -- causal convolution ------------------------------------------------------
def test_conv_width_one_unit_weight_is_identity(rng):
    x = rng.normal(size=(6, 3))
    w = np.zeros((3, 3, 1))
    w[np.arange(3), np.arange(3), 0] = 1.0
    np.testing.assert_array_equal(F.causal_conv1d(x, Tensor(w)).data, x)


def test_conv_impulse_reproduces_taps():
    x = np.zeros((6, 1))
    x[1, 0] = 1.0
    taps = np.array([[[0.5, -2.0, 3.0]]])
    y = F.causal_conv1d(x, Tensor(taps)).data[:, 0]
    np.testing.assert_array_equal(y, [0, 0.5, -2.0, 3.0, 0, 0])


def test_conv_zero_input_gives_bias(rng):
    b = rng.normal(size=2)
    y = F.causal_conv1d(np.zeros((4, 3)), Tensor(rng.normal(size=(2, 3, 3))), Tensor(b)).data
    np.testing.assert_array_equal(y, np.tile(b, (4, 1)))


def test_conv_matches_direct_convolution(rng):
    for T, I, O, k in [(5, 2, 3, 3), (2, 3, 2, 4), (7, 1, 1, 1)]:
        x, w, b = rng.normal(size=(T, I)), rng.normal(size=(O, I, k)), rng.normal(size=O)
        np.testing.assert_allclose(F.causal_conv1d(x, Tensor(w), Tensor(b)).data,
                                   naive_conv(x, w, b), atol=1e-12)


def test_depthwise_conv_matches_direct_convolution(rng):
    x, w = rng.normal(size=(6, 3)), rng.normal(size=(3, 4))
    full = np.zeros((3, 3, 4))
    full[np.arange(3), np.arange(3)] = w
    np.testing.assert_allclose(F.depthwise_causal_conv1d(x, Tensor(w)).data, naive_conv(x, full),
                               atol=1e-12)


def test_conv_rejects_zero_width():
    with pytest.raises(ValueError):
        F.causal_conv1d(np.zeros((3, 1)), Tensor(np.zeros((1, 1, 0))))


def test_conv_gradients(rng):
    x, w, b = leaf(rng, 2, 5, 3), leaf(rng, 2, 3, 3), leaf(rng, 2)
    wd = leaf(rng, 3, 2)
    err, _ = grad_check(lambda: (F.causal_conv1d(x, w, b) * F.causal_conv1d(x, w, b)).sum()
                        + F.depthwise_causal_conv1d(x, wd).sum(), [x, w, b, wd])
    assert err < 1e-6


# -- attention -----------------------------------------------------------------
def test_attention_single_step_returns_value(rng):
    q, k, v = rng.normal(size=(3, 1, 4))
    out, w = F.scaled_dot_attention(q, k, v, return_weights=True)
    np.testing.assert_allclose(out.data, v)
    np.testing.assert_array_equal(w.data, [[1.0]])


def test_attention_identical_keys_is_running_mean(rng):
    T = 5
    q = rng.normal(size=(T, 3))
    k = np.tile(rng.normal(size=3), (T, 1))
    v = rng.normal(size=(T, 3))
    out = F.scaled_dot_attention(q, k, v).data
    expect = np.cumsum(v, axis=0) / np.arange(1, T + 1)[:, None]
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_attention_matches_brute_force(rng):
    q, k, v = rng.normal(size=(3, 3, 2))
    np.testing.assert_allclose(F.scaled_dot_attention(q, k, v).data, naive_attention(q, k, v),
                               atol=1e-10)


@given(T=st.integers(2, 6), s=st.integers(0, 5), seed=st.integers(0, 2**16))
def test_attention_is_causal(T, s, seed):
    s = s % (T - 1)
    r = np.random.default_rng(seed)
    q, k, v = r.normal(size=(3, T, 3))
    base = F.scaled_dot_attention(q, k, v).data
    q2, k2, v2 = q.copy(), k.copy(), v.copy()
    for a in (q2, k2, v2):
        a[s + 1:] += r.normal(size=a[s + 1:].shape) * 10
    pert = F.scaled_dot_attention(q2, k2, v2).data
    np.testing.assert_array_equal(base[:s + 1], pert[:s + 1])


def test_attention_weights_rows_sum_to_one(rng):
    q, k, v = rng.normal(size=(3, 6, 4))
    _, w = F.scaled_dot_attention(q, k, v, return_weights=True)
    np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-12)
    assert np.all(np.triu(w.data, 1) == 0)


def test_attention_gradients(rng):
    q, k, v = leaf(rng, 2, 4, 3), leaf(rng, 2, 4, 3), leaf(rng, 2, 4, 3)
    c = rng.normal(size=(2, 4, 3))
    err, _ = grad_check(lambda: (F.scaled_dot_attention(q, k, v) * c).sum(), [q, k, v])
    assert err < 1e-6


# -- activations --------------------------------------------------------------
def test_activation_examples():
    assert F.silu(Tensor(np.array(0.0))).data == 0.0
    np.testing.assert_allclose(F.softmax(np.full(7, 3.3)).data, np.full(7, 1 / 7), atol=1e-15)
    y = F.layer_norm(Tensor(np.random.default_rng(0).normal(3, 5, size=(4, 16)))).data
    np.testing.assert_allclose(y.mean(-1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(-1), 1, atol=1e-4)


@given(st.lists(st.floats(-700, 700), min_size=1, max_size=12))
def test_softmax_is_a_distribution(vals):
    p = F.softmax(np.array(vals)).data
    assert abs(p.sum() - 1) < 1e-12
    assert np.all(p >= 0) and np.all(p <= 1)


def test_sigmoid_is_stable_at_extremes():
    s = ops.sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
    np.testing.assert_array_equal(s, [0.0, 0.5, 1.0])


# -- optimizer ----------------------------------------------------------------
def test_adam_zero_gradient_leaves_params():
    w = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([w], lr=0.1)
    w.grad = np.zeros(2)
    opt.step()
    np.testing.assert_array_equal(w.data, [1.0, -2.0])


def test_adam_descends_quadratic():
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([w], lr=0.1)
    (w * w).sum().backward()
    opt.step()
    assert w.data[0] < 1.0
    for _ in range(99):
        opt.zero_grad()
        (w * w).sum().backward()
        opt.step()
    assert abs(w.data[0]) < 1e-2


def test_adam_first_step_is_lr_sized():
    # with bias correction the first update is lr * g / (|g| + eps)
    w = Tensor(np.array([3.0]), requires_grad=True)
    opt = Adam([w], lr=0.05)
    w.grad = np.array([0.2])
    opt.step()
    np.testing.assert_allclose(w.data, 3.0 - 0.05 * 0.2 / (0.2 + 1e-8))


def test_adam_rejects_nan_gradient():
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([w])
    w.grad = np.array([np.nan])
    with pytest.raises(NonFiniteGradient, match="weight"):
        opt.step(names=["weight"])
    assert w.data[0] == 1.0


# -- grad check itself ---------------------------------------------------------
def test_grad_check_linear_regression(rng):
    X, y = rng.normal(size=(20, 3)), rng.normal(size=20)
    w = Tensor(rng.normal(size=3), requires_grad=True)

    def loss():
        r = ops.matmul(Tensor(X), w) - y
        return (r * r).mean()

    err, n = grad_check(loss, [w])
    assert n == 3 and err < 1e-7


def test_grad_check_detects_wrong_gradient(rng):
    x = leaf(rng, 4)

    def bad():
        out = ops.exp(x)
        return ops._make(out.data.sum() * 2.0, (x,), lambda g: (g * np.exp(x.data),))

    err, _ = grad_check(bad, [x])
    assert err > 0.4


def test_grad_check_sampling_counts(rng):
    x = leaf(rng, 10, 10)
    err, n = grad_check(lambda: ops.tanh(x).sum(), [x], n_samples=17, stencil=4, eps=1e-3)
    assert n == 17 and err < 1e-8
