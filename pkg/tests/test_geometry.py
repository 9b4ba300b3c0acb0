import numpy as np
import pytest
from hypothesis import given, strategies as st

from logcvx.errors import ConfigurationError, InvariantViolation
from logcvx.geometry import (PRESETS, MetricFamily, TorusGrid, build_preset, flat_metric,
                             quadrature, volume_density)


def _const_metric(grid, c):
    eye = np.ones((1, 1) + grid.shape) * c
    return MetricFamily(grid, lambda t: eye, lambda t: 0 * eye, eig_floor=c)


def test_grid_rejects_bad_sizes():
    with pytest.raises(ConfigurationError):
        TorusGrid(3, 16)
    with pytest.raises(ConfigurationError):
        TorusGrid(1, 15)


def test_flat_static_is_identity(g1):
    bg = build_preset("flat-static", g1)
    assert np.all(bg.metric.g(0.3) == 1) and np.all(bg.metric.b(0.3) == 0)
    assert np.all(bg.metric.B_trace(0.3) == 0)
    assert np.all(bg.coeff.Lam(0.3) == 1) and bg.coeff.lam_floor == 1.0
    assert bg.constant_symbol == 1.0 and bg.static


def test_breathing_b_matches_centered_difference(g1):
    bg = build_preset("conformal-breathing", g1, a=0.1)
    for tau in (0.0, 0.4, 1.3):
        closed = 0.2 * np.cos(tau) * np.exp(0.2 * np.sin(tau))
        assert np.allclose(bg.metric.b(tau)[0, 0], closed, rtol=0, atol=1e-15)
        h = 1e-4
        fd = (bg.metric.g(tau + h) - bg.metric.g(tau - h)) / (2 * h)
        assert np.allclose(fd, bg.metric.b(tau), atol=1e-8)


def test_anisotropic_divergence_against_spectral_derivative(g1):
    bg = build_preset("anisotropic-lambda", g1)
    x = g1.points[0]
    div = bg.coeff.divLam(0.0)[0]
    assert np.allclose(div, -np.sin(x), atol=1e-14)
    assert np.allclose(g1.derivative(bg.coeff.Lam(0.0)[0, 0], 0), div, atol=1e-12)


def test_volume_density_cases():
    g1 = TorusGrid(1, 32)
    assert np.all(volume_density(flat_metric(g1), 0.0) == 1.0)
    assert np.allclose(volume_density(_const_metric(g1, 4.0), 0.0), 2.0)
    g2 = TorusGrid(2, 32)
    u = 0.3 * np.sin(g2.points[0])
    eye = np.einsum("ij,...->ij...", np.eye(2), np.exp(2 * u))
    m = MetricFamily(g2, lambda t: eye, lambda t: 0 * eye, eig_floor=np.exp(-0.6))
    assert np.allclose(volume_density(m, 0.0), np.exp(0.6 * np.sin(g2.points[0])), rtol=1e-14)


def test_quadrature_examples():
    g1 = TorusGrid(1, 64)
    x = g1.points[0]
    flat = flat_metric(g1)
    assert quadrature(np.ones_like(x), flat, 0.0) == pytest.approx(2 * np.pi, rel=1e-15)
    assert quadrature(np.sin(x) ** 2, flat, 0.0) == pytest.approx(np.pi, rel=1e-14)
    assert quadrature(np.ones_like(x), _const_metric(g1, 4.0), 0.0) == pytest.approx(4 * np.pi)


@given(st.integers(0, 2**31 - 1), st.integers(1, 31))
def test_quadrature_exact_for_band_limited(seed, top):
    grid = TorusGrid(1, 64)
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(top + 1)
    b = rng.standard_normal(top + 1)
    x = grid.points[0]
    f = sum(a[j] * np.cos(j * x) + b[j] * np.sin(j * x) for j in range(top + 1))
    exact = 2 * np.pi * a[0]
    got = quadrature(f, flat_metric(grid), 0.0)
    assert abs(got - exact) <= 1e-12 * max(1.0, np.abs(a).sum() + np.abs(b).sum()) * 2 * np.pi


@pytest.mark.parametrize("name", PRESETS)
@pytest.mark.parametrize("dim", [1, 2])
def test_preset_invariants(name, dim):
    # e^{2 cos x} in the graded fiber needs more than 16 points to resolve
    grid = TorusGrid(dim, 32)
    bg = build_preset(name, grid, m=2)
    taus = np.linspace(0, 1, 5)
    rep = bg.metric.check_invariants(taus)
    assert rep["b_fd_err"] < 1e-7
    brep = bg.bundle.check_invariants(taus)
    assert brep["dA_fd_err"] < 1e-7 and brep["beta_fd_err"] < 1e-7
    crep = bg.coeff.check_invariants(bg.metric, taus)
    assert crep["psd_margin"] >= -1e-12 and crep["divLam_err"] < 1e-10


def test_unknown_preset_names_valid_ones():
    with pytest.raises(ConfigurationError, match="flat-static"):
        build_preset("nope", TorusGrid(1, 16))


def test_metric_floor_violation_raises():
    grid = TorusGrid(1, 16)
    with pytest.raises(InvariantViolation):
        _const_metric(grid, 0.5).__class__(grid, lambda t: 0.5 * np.ones((1, 1, 16)),
                                           lambda t: np.zeros((1, 1, 16)),
                                           eig_floor=1.0).check_invariants([0.0])


def test_twisted_bundle_needs_even_fiber():
    with pytest.raises(ConfigurationError):
        build_preset("twisted-bundle", TorusGrid(1, 16), m=3)
