import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from act_sr import tensor as T
from act_sr.errors import DimensionError, GeometryError, NonFiniteError, UsageError
from act_sr.tensor import Tensor

from gradcheck import max_rel_error, projected
from oracles import conv2d_loops, fold_loops, matmul_loops, unfold_loops

seeds = st.integers(0, 2**32 - 1)


# ---------------------------------------------------------------- matmul


def test_matmul_identity_and_zero(rng):
    a = rng.standard_normal((3, 5))
    assert np.array_equal(T.matmul(Tensor(np.eye(3)), Tensor(a)).data, a)
    assert np.array_equal(T.matmul(Tensor(np.zeros((1, 5))), Tensor(a.T)).data, np.zeros((1, 3)))


def test_matmul_worked_example():
    a, b = [[1, 2], [3, 4]], [[5, 6], [7, 8]]
    expected = matmul_loops(a, b)
    assert expected == [[19, 22], [43, 50]]
    assert T.matmul(Tensor(a), Tensor(b)).data.tolist() == expected


@given(seeds, st.integers(1, 5), st.integers(1, 5), st.integers(1, 5))
def test_matmul_matches_loops(seed, m, k, p):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal((m, k)), r.standard_normal((k, p))
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, matmul_loops(a, b), rtol=1e-12, atol=1e-12)


def test_matmul_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_matmul_broadcast_batch(rng):
    a, b = rng.standard_normal((2, 1, 3, 4)), rng.standard_normal((5, 4, 2))
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, a @ b)


# ---------------------------------------------------------------- softmax / gelu / layer norm


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax_lastdim(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(T.softmax_lastdim(Tensor([1000.0, 0.0])).data, [1.0, 0.0], atol=1e-12)
    mpmath.mp.dps = 50
    z = sum(mpmath.e ** k for k in (1, 2, 3))
    oracle = [float(mpmath.e ** k / z) for k in (1, 2, 3)]
    np.testing.assert_allclose(T.softmax_lastdim(Tensor([1.0, 2.0, 3.0])).data, oracle, rtol=1e-14)


@given(seeds, st.integers(1, 12), st.floats(0.1, 50.0))
def test_softmax_rows_are_distributions(seed, n, spread):
    x = np.random.default_rng(seed).standard_normal((4, n)) * spread
    y = T.softmax_lastdim(Tensor(x)).data
    assert (y >= 0).all()
    np.testing.assert_allclose(y.sum(-1), 1.0, atol=1e-12)


def test_gelu_examples():
    assert T.gelu(Tensor([0.0])).data[0] == 0.0
    assert abs(T.gelu(Tensor([10.0])).data[0] - 10.0) < 1e-6


@given(st.floats(-8, 8))
def test_gelu_matches_high_precision(x):
    mpmath.mp.dps = 40
    oracle = float(mpmath.mpf(x) * mpmath.ncdf(mpmath.mpf(x)))
    assert math.isclose(T.gelu(Tensor([x])).data[0], oracle, rel_tol=1e-13, abs_tol=1e-15)


def test_layer_norm_unit_affine(rng):
    x = rng.standard_normal((5, 16)) * 3 + 2
    y = T.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16)), 1e-5).data
    np.testing.assert_allclose(y.mean(-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(-1), x.var(-1) / (x.var(-1) + 1e-5), rtol=1e-12)


def test_layer_norm_constant_row_is_beta():
    beta = np.arange(4.0)
    y = T.layer_norm(Tensor(np.full((2, 4), 7.0)), Tensor(np.ones(4)), Tensor(beta), 1e-5).data
    np.testing.assert_allclose(y, np.broadcast_to(beta, (2, 4)), atol=1e-12)


# ---------------------------------------------------------------- conv


@given(seeds, st.integers(1, 3), st.integers(1, 4), st.sampled_from([1, 3]), st.integers(3, 7))
def test_conv2d_matches_loops(seed, cin, cout, k, size):
    r = np.random.default_rng(seed)
    x, w, b = r.standard_normal((cin, size, size + 1)), r.standard_normal((cout, cin, k, k)), r.standard_normal(cout)
    y = T.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    np.testing.assert_allclose(y, conv2d_loops(x, w, b), rtol=1e-12, atol=1e-12)


def test_conv2d_identity_kernel(rng):
    x = rng.standard_normal((2, 5, 5))
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = w[1, 1, 1, 1] = 1.0
    assert np.array_equal(T.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(2))).data, x)


def test_conv2d_channel_mismatch():
    with pytest.raises(DimensionError, match="channels"):
        T.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))


def test_conv2d_records_macs(rng):
    x = Tensor(rng.standard_normal((2, 3, 6, 5)))
    with T.count_macs() as c:
        T.conv2d(x, Tensor(np.ones((4, 3, 3, 3))), Tensor(np.zeros(4)))
    assert c.total == 2 * 4 * 3 * 9 * 6 * 5


# ---------------------------------------------------------------- fold / unfold / shuffle


@given(seeds, st.integers(1, 3), st.integers(1, 4), st.integers(1, 3), st.integers(3, 12), st.integers(3, 12))
def test_unfold_fold_match_loops(seed, c, k, s, h, w):
    if k > h or k > w:
        return
    img = np.random.default_rng(seed).standard_normal((c, h, w))
    tokens = T.unfold(Tensor(img), k, s).data
    np.testing.assert_array_equal(tokens, unfold_loops(img, k, s))
    np.testing.assert_array_equal(T.fold(Tensor(tokens), c, (h, w), k, s).data,
                                  fold_loops(tokens, c, h, w, k, s))


def test_unfold_bad_geometry():
    with pytest.raises(GeometryError):
        T.unfold(Tensor(np.ones((1, 4, 4))), 5, 1)


def test_pixel_shuffle_order():
    x = np.arange(8.0).reshape(8, 1, 1)
    y = T.pixel_shuffle(Tensor(x), 2).data
    assert y.shape == (2, 2, 2)
    assert y[0].tolist() == [[0, 1], [2, 3]]
    assert y[1].tolist() == [[4, 5], [6, 7]]


@given(seeds, st.integers(1, 3), st.integers(1, 3))
def test_pixel_unshuffle_inverts_shuffle(seed, c, s):
    x = np.random.default_rng(seed).standard_normal((c * s * s, 3, 4))
    assert np.array_equal(T.pixel_unshuffle(T.pixel_shuffle(Tensor(x), s), s).data, x)


# ---------------------------------------------------------------- autodiff plumbing


def test_plain_tensor_never_gets_grad():
    a = Tensor(np.ones(3))
    b = Tensor(np.ones(3), requires_grad=True)
    (a * b).sum().backward()
    assert a.grad is None
    np.testing.assert_array_equal(b.grad, np.ones(3))


def test_backward_usage_errors():
    with pytest.raises(UsageError):
        Tensor(np.ones(1)).backward()
    with pytest.raises(UsageError):
        (Tensor(np.ones(3), requires_grad=True) * 2).backward()


def test_no_grad_blocks_recording():
    a = Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = a * 3
    assert not y.requires_grad


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_raises():
    with pytest.raises(NonFiniteError):
        Tensor([1e308]) * 1e10
    with pytest.raises(NonFiniteError):
        Tensor([1.0]) / Tensor([0.0])


def test_gradient_accumulates_across_reuse():
    a = Tensor(np.array([2.0]), requires_grad=True)
    (a * a + a).sum().backward()
    assert a.grad.tolist() == [5.0]


# ---------------------------------------------------------------- finite-difference checks


def _leaf(r, shape, scale=1.0):
    return Tensor(r.standard_normal(shape) * scale, requires_grad=True)


OPS = {
    "matmul": lambda r: ((a := _leaf(r, (2, 3, 4)), b := _leaf(r, (4, 5))), lambda: T.matmul(a, b), (2, 3, 5)),
    "mul_div": lambda r: ((a := _leaf(r, (3, 4)), b := Tensor(r.uniform(1, 2, (1, 4)), requires_grad=True)),
                          lambda: a * b / (b + a * a + 3.0) - a, (3, 4)),
    "softmax": lambda r: ((a := _leaf(r, (3, 6), 3.0),), lambda: T.softmax_lastdim(a), (3, 6)),
    "gelu": lambda r: ((a := _leaf(r, (20,), 2.0),), lambda: T.gelu(a), (20,)),
    "relu_sigmoid": lambda r: ((a := _leaf(r, (20,), 2.0),), lambda: T.sigmoid(a) * 2 + T.relu(a), (20,)),
    "layer_norm": lambda r: ((a := _leaf(r, (4, 8)), g := _leaf(r, (8,)), b := _leaf(r, (8,))),
                             lambda: T.layer_norm(a, g, b, 1e-5), (4, 8)),
    "mean_sum": lambda r: ((a := _leaf(r, (3, 4, 5)),),
                           lambda: a.mean(axis=(-2, -1), keepdims=True) * a + a.sum(axis=0), (3, 4, 5)),
    "conv3x3": lambda r: ((x := _leaf(r, (2, 3, 5, 6)), w := _leaf(r, (4, 3, 3, 3)), b := _leaf(r, (4,))),
                          lambda: T.conv2d(x, w, b), (2, 4, 5, 6)),
    "conv1x1": lambda r: ((x := _leaf(r, (3, 4, 4)), w := _leaf(r, (2, 3, 1, 1)), b := _leaf(r, (2,))),
                          lambda: T.conv2d(x, w, b), (2, 4, 4)),
    "unfold_fold": lambda r: ((x := _leaf(r, (2, 8, 8)),),
                              lambda: T.fold(T.unfold(x, 4, 2) * 1.5, 2, (8, 8), 4, 2), (2, 8, 8)),
    "pixel_shuffle": lambda r: ((x := _leaf(r, (8, 3, 3)),), lambda: T.pixel_shuffle(x, 2), (2, 6, 6)),
    "concat_split_getitem": lambda r: ((x := _leaf(r, (4, 6)),),
                                       lambda: T.concat(T.split(x, [2, 4])[::-1], axis=-1)[[0, 0, 2]], (3, 6)),
    "abs": lambda r: ((x := _leaf(r, (10,)),), lambda: T.tabs(x), (10,)),
}


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", range(5))
def test_op_gradients(name, seed):
    r = np.random.default_rng(seed)
    leaves, fn, shape = OPS[name](r)
    err = max_rel_error(projected(fn, shape, r), leaves, r, n_coords=10)
    assert err < 1e-5, f"{name}: relative error {err:.2e}"


def test_backward_helper_returns_zero_for_unreachable():
    p = T.Parameter(np.ones(2), "p")
    q = T.Parameter(np.ones(3), "q")
    grads = T.backward((p * 2).sum(), [("p", p), ("q", q)])
    assert grads["p"].tolist() == [2.0, 2.0]
    assert grads["q"].tolist() == [0.0, 0.0, 0.0]
