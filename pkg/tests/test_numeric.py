import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ept.errors import ContractError, DegenerateInputError, NumericError, ParameterError, ShapeError
from ept.numeric import (GradTape, Tensor, backward, cross_entropy, crop, finite_diff_check, kron_expand,
                         l2_normalize, layer_norm, log_softmax, masked_softmax, matmul, mean, mul, pca2d,
                         relu, scale, softmax_temp, sum_all, take, transpose, transposed_conv2d)
from oracles import explicit_ce, jacobi_eigenvalues, naive_matmul, scatter_deconv, softmax_mp


def param(a, name="p"):
    return Tensor(np.array(a, dtype=float), requires_grad=True, name=name)


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    x = np.random.default_rng(1).normal(size=(3, 5))
    assert np.array_equal(matmul(np.eye(3), x).data, x)


def test_matmul_hand_example():
    assert matmul([[1, 2], [3, 4]], [[1], [1]]).data.tolist() == [[3.0], [7.0]]


def test_matmul_matches_triple_loop_exactly():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
    assert np.array_equal(matmul(a, b).data, naive_matmul(a, b))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 9), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_matmul_triple_loop_property(n, m, p, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, m)), rng.normal(size=(m, p))
    assert np.array_equal(matmul(a, b).data, naive_matmul(a, b))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


# ------------------------------------------------------ transposed conv


def test_deconv_worked_example():
    out = transposed_conv2d([[1, 2], [3, 4]], [[1, 0], [0, 2]], 2).data
    assert out.tolist() == scatter_deconv([[1, 2], [3, 4]], [[1, 0], [0, 2]], 2).tolist()
    assert out.tolist() == [[1, 0, 2, 0], [0, 2, 0, 4], [3, 0, 4, 0], [0, 6, 0, 8]]


def test_deconv_zero_kernel_gives_zeros():
    z = np.random.default_rng(3).normal(size=(4, 3))
    out = transposed_conv2d(z, np.zeros((3, 3)), 3).data
    assert out.shape == (12, 9) and not out.any()


@pytest.mark.parametrize("s", [1, 2, 3, 5])
def test_deconv_stride_equal_kernel_is_kronecker(s):
    rng = np.random.default_rng(s)
    z, k = rng.normal(size=(3, 4)), rng.normal(size=(s, s))
    out = transposed_conv2d(z, k, s).data
    assert np.array_equal(out, scatter_deconv(z, k, s))
    assert np.array_equal(out, np.kron(z, k))


@pytest.mark.parametrize("stride,s", [(1, 3), (2, 3), (1, 2), (3, 4), (4, 2)])
def test_deconv_overlapping_strides_match_scatter(stride, s):
    rng = np.random.default_rng(10 * stride + s)
    z, k = rng.normal(size=(3, 4)), rng.normal(size=(s, s))
    out = transposed_conv2d(z, k, stride).data
    assert out.shape == ((3 - 1) * stride + s, (4 - 1) * stride + s)
    assert np.array_equal(out, scatter_deconv(z, k, stride))


def test_deconv_errors():
    with pytest.raises(ShapeError):
        transposed_conv2d(np.ones((2, 2)), np.ones((2, 3)), 2)
    with pytest.raises(ParameterError):
        transposed_conv2d(np.ones((2, 2)), np.ones((2, 2)), 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_kronecker_identity_property(r, c, s, seed):
    rng = np.random.default_rng(seed)
    z, k = rng.normal(size=(r, c)), rng.normal(size=(s, s))
    out = transposed_conv2d(z, k, s).data
    for a in range(r):
        for b in range(c):
            assert np.array_equal(out[a * s:(a + 1) * s, b * s:(b + 1) * s], z[a, b] * k)


# ---------------------------------------------------------------- softmax


def test_softmax_symmetric():
    for tau in (0.1, 1.0, 7.0):
        assert np.allclose(softmax_temp([2.5, 2.5, 2.5], tau).data, 1 / 3, atol=1e-15)


def test_softmax_two_values():
    p = softmax_temp([2.0, 1.0], 1.0).data
    assert np.allclose(p, softmax_mp([2.0, 1.0]), atol=1e-15)
    assert np.allclose(p, [0.73106, 0.26894], atol=1e-5)


def test_softmax_low_temperature():
    assert softmax_temp([2.0, 1.0], 1e-6).data[0] > 1 - 1e-6


def test_softmax_errors():
    with pytest.raises(ParameterError):
        softmax_temp([1.0, 2.0], 0.0)
    with pytest.raises(NumericError):
        softmax_temp([1.0, np.inf], 1.0)


finite_vecs = arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50))


@settings(max_examples=100, deadline=None)
@given(finite_vecs, st.floats(0.05, 20), st.floats(-1e3, 1e3))
def test_softmax_normalised_and_shift_invariant(v, tau, c):
    p = softmax_temp(v, tau).data
    assert abs(p.sum() - 1) < 1e-12
    assert np.all(p >= 0)
    assert np.allclose(softmax_temp(v + c, tau).data, p, atol=1e-12, rtol=0)


def test_masked_softmax_zero_outside():
    p = masked_softmax([2.0, 1.0, 0.0], [True, True, False], 1.0).data
    assert p[2] == 0.0
    assert np.allclose(p, [0.73106, 0.26894, 0], atol=1e-5)


# --------------------------------------------------------- cross entropy


def test_cross_entropy_uniform():
    for c in (2, 5, 10):
        assert abs(cross_entropy(np.zeros(c), 1).item() - math.log(c)) < 1e-14


def test_cross_entropy_confident():
    assert cross_entropy([10.0, -10.0], 0).item() < 1e-4


def test_cross_entropy_matches_explicit():
    rng = np.random.default_rng(5)
    for _ in range(20):
        logits = rng.normal(size=6) * 3
        t = int(rng.integers(6))
        assert abs(cross_entropy(logits, t).item() - explicit_ce(logits, t)) < 1e-12


def test_cross_entropy_bad_target():
    with pytest.raises(IndexError):
        cross_entropy([1.0, 2.0], 2)


# ------------------------------------------------------------- backward


def test_backward_linear_sum():
    rng = np.random.default_rng(6)
    W = param(rng.normal(size=(3, 4)), "W")
    x = rng.normal(size=(4, 1))
    loss = sum_all(matmul(W, x))
    g = backward({"W": W}, loss)["W"]
    assert np.allclose(g, np.ones((3, 1)) @ x.T, atol=1e-15)
    err = finite_diff_check(lambda: sum_all(matmul(W, x)).item(), {"W": W}, {"W": g})
    assert err < 1e-6


def test_backward_disconnected_parameter_gets_exact_zero():
    a, b = param([1.0, 2.0], "a"), param([[3.0]], "b")
    grads = backward({"a": a, "b": b}, sum_all(mul(a, a)))
    assert np.array_equal(grads["b"], np.zeros((1, 1)))


def test_backward_non_scalar_loss():
    a = param([1.0, 2.0])
    with pytest.raises(ContractError):
        backward({"a": a}, mul(a, a))


def test_tape_rejects_double_registration():
    tape = GradTape()
    p = param([1.0])
    tape.register("p", p)
    with pytest.raises(ContractError):
        tape.register("p", p)
    with pytest.raises(ContractError):
        tape.register("q", p)


def test_constants_get_no_gradient():
    a = param([1.0, 2.0], "a")
    c = Tensor([3.0, 4.0])
    grads = backward({"a": a}, sum_all(mul(a, c)))
    assert set(grads) == {"a"}
    assert grads["a"].tolist() == [3.0, 4.0]


# -------------------------------------------------------- gradient checks


def test_fd_quadratic():
    th = param([3.0], "t")
    g = backward({"t": th}, sum_all(mul(th, th)))["t"]
    assert abs(g[0] - 6.0) < 1e-12
    assert finite_diff_check(lambda: float(th.data[0] ** 2), {"t": th}, {"t": g}) < 1e-8


def _chain():
    rng = np.random.default_rng(7)
    ps = {n: param(rng.normal(size=s), n) for n, s in [("A", (3, 4)), ("B", (4, 5)), ("C", (5, 2))]}

    def f():
        return sum_all(mul(matmul(matmul(ps["A"], ps["B"]), ps["C"]), 1.0)).item()

    grads = backward(ps, sum_all(matmul(matmul(ps["A"], ps["B"]), ps["C"])))
    return ps, f, grads


def test_fd_matmul_chain():
    ps, f, grads = _chain()
    assert finite_diff_check(f, ps, grads) < 1e-6


def test_fd_negative_control_flags_doubled_gradient():
    ps, f, grads = _chain()
    bad = {k: 2 * v for k, v in grads.items()}
    err = finite_diff_check(f, ps, bad)
    assert abs(err - 1 / 3) < 1e-3
    assert err > 1e-5


def test_fd_non_finite_reports_location():
    p = param([0.0, 1.0], "p")

    def f():
        return float("nan") if p.data[1] > 1.0 else float(p.data.sum())

    with pytest.raises(NumericError, match=r"p\[1\]"):
        finite_diff_check(f, {"p": p}, {"p": np.ones(2)})


PRIMITIVES = {
    "matmul": lambda x, y: sum_all(mul(matmul(x, transpose(y)), matmul(x, transpose(y)))),
    "deconv_overlap": lambda x, y: sum_all(mul(transposed_conv2d(x, crop(y, 3, 3), 2),
                                               transposed_conv2d(x, crop(y, 3, 3), 2))),
    "kron": lambda x, y: sum_all(mul(kron_expand(x, crop(y, 2, 2)), kron_expand(x, crop(y, 2, 2)))),
    "softmax": lambda x, y: sum_all(mul(softmax_temp(mul(x, y), 0.7), Tensor(np.arange(12.0).reshape(3, 4)))),
    "log_softmax_ce": lambda x, y: mean(cross_entropy(mul(x, y), [0, 3, 1])),
    "layer_norm": lambda x, y: sum_all(mul(layer_norm(x), y)),
    "l2_normalize": lambda x, y: sum_all(mul(l2_normalize(x), y)),
    "relu_take": lambda x, y: sum_all(mul(relu(take(x, [0, 2, 2], axis=0)), take(y, [1, 1, 0], axis=0))),
    "masked_softmax": lambda x, y: sum_all(mul(masked_softmax(x, np.eye(3, 4, dtype=bool) | np.eye(3, 4, 1, dtype=bool), 0.5), y)),
    "mean_axis": lambda x, y: sum_all(mul(mean(x, axis=0), mean(y, axis=0))),
    "scale_sub": lambda x, y: sum_all(mul(scale(x - y, 3.0), x)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    x, y = param(rng.normal(size=(3, 4)), "x"), param(rng.normal(size=(3, 4)), "y")
    fn = PRIMITIVES[name]
    grads = backward({"x": x, "y": y}, fn(x, y))
    assert finite_diff_check(lambda: fn(x, y).item(), {"x": x, "y": y}, grads) < 1e-6


def test_batched_matmul_gradient():
    rng = np.random.default_rng(8)
    x, y = param(rng.normal(size=(2, 3, 4)), "x"), param(rng.normal(size=(4, 5)), "y")

    def fn():
        out = matmul(x, y)
        return sum_all(mul(out, out))

    grads = backward({"x": x, "y": y}, fn())
    assert finite_diff_check(lambda: fn().item(), {"x": x, "y": y}, grads) < 1e-6


# -------------------------------------------------------------------- PCA


def test_pca_two_dim_lossless():
    rng = np.random.default_rng(9)
    pts = rng.normal(size=(6, 2))
    pts -= pts.mean(axis=0)
    coords, comps = pca2d(pts, return_components=True)
    assert np.allclose(coords @ comps.T, pts, atol=1e-8)


def test_pca_collinear_points():
    d = np.array([1.0, -2.0, 0.5, 3.0, 1.0])
    pts = np.outer([0.0, 1.0, 3.5], d)
    coords = pca2d(pts)
    assert np.var(coords[:, 1]) < 1e-10


def test_pca_matches_jacobi_eigenvalues():
    rng = np.random.default_rng(10)
    pts = rng.normal(size=(8, 6))
    coords = pca2d(pts)
    cov = np.cov(pts.T)
    lam = jacobi_eigenvalues(cov)
    var = coords.var(axis=0, ddof=1)
    assert np.allclose(var, lam[:2], atol=1e-6)


def test_pca_sign_convention():
    rng = np.random.default_rng(11)
    _, comps = pca2d(rng.normal(size=(7, 4)), return_components=True)
    for j in range(2):
        v = comps[:, j]
        assert v[np.flatnonzero(np.abs(v) > 1e-15)[0]] > 0


def test_pca_degenerate():
    with pytest.raises(DegenerateInputError):
        pca2d(np.ones((4, 3)))
