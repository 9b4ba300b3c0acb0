import numpy as np
import pytest
from hypothesis import given, strategies as st

from logcvx.errors import ConfigurationError, DimensionError, UnsupportedRankError
from logcvx.geometry import PRESETS, BundleStructure, TorusGrid, build_preset, scalar_bundle
from logcvx.operators import (Section, dense_derivative_matrix, dense_elliptic_matrix,
                              elliptic_apply, grad_hat, ibp_residual, l_backward, l_forward,
                              laplace_power)

from conftest import mode


def _wide(grid, a, top=14):
    x = grid.points[0]
    return sum(a[j] * np.sin(j * x) for j in range(1, top + 1))


def test_grad_hat_plain_derivative(g1):
    b = scalar_bundle(g1)
    x = g1.points[0]
    assert np.allclose(grad_hat(mode(g1, 3), b, 0.0)[0, 0], 3 * np.cos(3 * x), atol=1e-12)
    assert np.abs(grad_hat(np.full((1, 64), 2.5), b, 0.0)).max() < 1e-13


def test_grad_hat_skew_connection_against_dense(g1):
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    A = 0.1 * J[None, :, :, None] * np.ones((1, 2, 2, 64))
    base = scalar_bundle(g1, 2)
    b = BundleStructure(g1, 2, base.gamma, base.beta, lambda t: A, lambda t: 0 * A, 2,
                        base.gamma_y, base.beta_y)
    X = mode(g1, 1, m=2)
    D = dense_derivative_matrix(64)
    expect = np.stack([D @ X[0], D @ X[1]]) + np.einsum("ab,bx->ax", 0.1 * J, X)
    assert np.allclose(grad_hat(X, b, 0.0)[0], expect, atol=1e-12)


def test_grad_hat_rank_two_unsupported(g1):
    with pytest.raises(UnsupportedRankError):
        grad_hat(np.zeros((1, 1, 1, 64)), scalar_bundle(g1), 0.0)


def test_elliptic_examples(g1):
    x = g1.points[0]
    bg = build_preset("flat-static", g1)
    X = mode(g1, 3)
    assert np.allclose(elliptic_apply(X, *[bg.coeff, bg.bundle, bg.metric], 0.0)[0],
                       -9 * np.sin(3 * x), atol=1e-11)
    two = bg.coeff.__class__(g1, lambda t: 2 * bg.coeff.Lam(t), bg.coeff.dLam, bg.coeff.divLam, 2.0)
    assert np.allclose(elliptic_apply(X, two, bg.bundle, bg.metric, 0.0)[0], -18 * np.sin(3 * x),
                       atol=1e-11)
    an = build_preset("anisotropic-lambda", g1)
    got = elliptic_apply(mode(g1, 2), an.coeff, an.bundle, an.metric, 0.0)[0]
    closed = (2 + np.cos(x)) * (-4 * np.sin(2 * x)) + (-np.sin(x)) * (2 * np.cos(2 * x))
    assert np.allclose(got, closed, atol=1e-11)


def test_backward_forward_on_closed_form(g1):
    bg = build_preset("flat-static", g1)
    tau = 0.07
    X = np.exp(9 * tau) * mode(g1, 3)
    LB = l_backward(X, 9 * X, bg.coeff, bg.bundle, bg.metric, tau)
    LF = l_forward(X, 9 * X, bg.coeff, bg.bundle, bg.metric, tau)
    assert np.abs(LB).max() <= 1e-10 * np.abs(X).max() * 9
    assert np.allclose(LF, 18 * X, rtol=0, atol=1e-10 * 18 * np.abs(X).max())
    Z = np.zeros_like(X)
    assert not np.any(l_backward(Z, Z, *[bg.coeff, bg.bundle, bg.metric], tau))
    assert not np.any(l_forward(Z, Z, *[bg.coeff, bg.bundle, bg.metric], tau))


def test_backward_rejects_shape_mismatch(g1):
    bg = build_preset("flat-static", g1)
    with pytest.raises(DimensionError):
        l_backward(mode(g1, 1), np.zeros((1, 32)), bg.coeff, bg.bundle, bg.metric, 0.0)


def test_laplace_power_examples(g1):
    x = g1.points[0]
    assert np.allclose(laplace_power(mode(g1, 2), g1, 2)[0], 16 * np.sin(2 * x), atol=1e-10)
    X = (np.sin(x) + np.sin(3 * x))[None]
    # round-off in the empty high modes is amplified by the largest symbol (n/2)^4
    atol = 64 * np.finfo(float).eps * (64 / 2) ** 4
    assert np.allclose(laplace_power(X, g1, 2)[0], np.sin(x) + 81 * np.sin(3 * x), atol=atol)
    for k in (1, 2, 3):
        assert np.abs(laplace_power(np.full((1, 64), 1.7), g1, k)).max() < 1e-12
    with pytest.raises(ConfigurationError):
        laplace_power(X, g1, 0)
    with pytest.raises(ConfigurationError):
        laplace_power(X, g1, 4)


def test_ibp_examples(rng):
    g = TorusGrid(1, 64)
    bg = build_preset("flat-static", g)
    args = (bg.coeff, bg.bundle, bg.metric, 0.0)
    assert ibp_residual(mode(g, 5), *args) <= 1e-12
    assert ibp_residual(np.zeros((1, 64)), *args) == 0.0
    g128 = TorusGrid(1, 128)
    an = build_preset("anisotropic-lambda", g128)
    X = g128.band_limited(rng, 32, (1,))
    assert ibp_residual(X, an.coeff, an.bundle, an.metric, 0.0) <= 1e-8


def test_ibp_refines_spectrally_on_graded_fiber():
    a = np.random.default_rng(1).standard_normal(15)
    res = []
    for n in (32, 64):
        g = TorusGrid(1, n)
        bg = build_preset("graded-fiber", g)
        res.append(ibp_residual(_wide(g, a)[None], bg.coeff, bg.bundle, bg.metric, 0.0))
    assert res[0] > 1e-6
    assert res[0] / max(res[1], np.finfo(float).tiny) >= 1e3


def test_dense_derivative_matches_fft(g1, rng):
    u = g1.band_limited(rng, 32)
    assert np.allclose(dense_derivative_matrix(64) @ u, g1.derivative(u, 0), atol=1e-11)


@pytest.mark.parametrize("name", PRESETS)
@pytest.mark.parametrize("dim,n", [(1, 64), (2, 16)])
def test_elliptic_agrees_with_dense_assembly(name, dim, n, rng):
    grid = TorusGrid(dim, n)
    bg = build_preset(name, grid, m=2)
    X = grid.band_limited(rng, n // 4, (bg.bundle.m,))
    M = dense_elliptic_matrix(bg.coeff, bg.bundle, bg.metric, 0.4)
    got = elliptic_apply(X, bg.coeff, bg.bundle, bg.metric, 0.4)
    ref = (M @ X.reshape(-1)).reshape(X.shape)
    assert np.abs(got - ref).max() <= 1e-10 * max(1.0, np.abs(ref).max())


def test_section_validation(g1):
    Section(g1, np.zeros((2, 64)))
    with pytest.raises(DimensionError):
        Section(g1, np.zeros((2, 32)))
    with pytest.raises(DimensionError):
        Section(g1, np.full((1, 64), np.nan))
    with pytest.raises(DimensionError):
        Section(g1, np.zeros((2, 1, 64)), covariant_rank=1)


@given(st.integers(0, 2**31 - 1))
def test_spectral_derivative_is_skew(seed):
    grid = TorusGrid(1, 64)
    rng = np.random.default_rng(seed)
    u, v = grid.band_limited(rng, 40), grid.band_limited(rng, 40)
    h = grid.cell_volume
    lhs = h * np.sum(grid.derivative(u, 0) * v) + h * np.sum(u * grid.derivative(v, 0))
    scale = h * np.linalg.norm(grid.derivative(u, 0)) * np.linalg.norm(v) + h * np.linalg.norm(u) * np.linalg.norm(grid.derivative(v, 0))
    assert abs(lhs) <= 1e-12 * scale


@given(st.integers(0, 2**31 - 1), st.integers(1, 3), st.sampled_from([1, 2]))
def test_laplace_power_symmetric(seed, k, dim):
    grid = TorusGrid(dim, 32 if dim == 1 else 16)
    rng = np.random.default_rng(seed)
    u, v = grid.band_limited(rng, 8, (1,)), grid.band_limited(rng, 8, (1,))
    a = np.sum(laplace_power(u, grid, k) * v)
    b = np.sum(u * laplace_power(v, grid, k))
    assert abs(a - b) <= 1e-10 * max(abs(a), abs(b), 1.0)


@given(st.integers(0, 2**31 - 1), st.sampled_from(PRESETS), st.floats(0, 1))
def test_backward_plus_forward_is_twice_dtau(seed, name, tau):
    grid = TorusGrid(1, 32)
    bg = build_preset(name, grid, m=2)
    rng = np.random.default_rng(seed)
    X = grid.band_limited(rng, 8, (bg.bundle.m,))
    D = grid.band_limited(rng, 8, (bg.bundle.m,))
    s = (l_backward(X, D, bg.coeff, bg.bundle, bg.metric, tau)
         + l_forward(X, D, bg.coeff, bg.bundle, bg.metric, tau))
    assert np.abs(s - 2 * D).max() <= 1e-12 * max(1.0, np.abs(elliptic_apply(
        X, bg.coeff, bg.bundle, bg.metric, tau)).max())
