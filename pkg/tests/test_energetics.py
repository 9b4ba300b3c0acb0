import numpy as np
import pytest
from hypothesis import given, strategies as st

from logcvx.energetics import (check_identity_h1arr1, check_identity_h1ev, check_identity_l2ev,
                               dirichlet, energy, energy_report, error_terms, frequency_sandwich,
                               time_derivative, uniform_step)
from logcvx.errors import SamplingError, UndefinedFrequencyError
from logcvx.evolution import CoupledSystem, exact_linear_trajectory, frequency_trace
from logcvx.geometry import Background, TorusGrid, build_preset, flat_metric, scalar_bundle
from logcvx.operators import grad_hat

from conftest import mode

PI = np.pi


def _flat(grid):
    return build_preset("flat-static", grid)


def _exact_trace(grid, X0, omega=0.05, dt=1e-3):
    system = CoupledSystem(_flat(grid))
    times = np.arange(int(round(omega / dt)) + 1) * dt
    return frequency_trace(exact_linear_trajectory(system, X0, times))


def test_energy_examples(g1):
    bg = _flat(g1)
    Z = np.zeros((1, 64))
    E, parts = energy(mode(g1, 1), Z, bg.bundle, bg.metric, 0.0)
    assert E == pytest.approx(PI, rel=1e-14)
    assert energy(Z, Z, bg.bundle, bg.metric, 0.0)[0] == 0.0
    E, parts = energy(mode(g1, 1), mode(g1, 1, fn=np.cos), bg.bundle, bg.metric, 0.0)
    assert E == pytest.approx(2 * PI, rel=1e-14)
    assert parts["X"] == pytest.approx(PI, rel=1e-14) and parts["Y"] == pytest.approx(PI, rel=1e-14)


def test_dirichlet_examples(g1):
    bg = _flat(g1)
    assert dirichlet(mode(g1, 3), bg.coeff, bg.bundle, bg.metric, 0.0) == pytest.approx(9 * PI, rel=1e-13)
    assert abs(dirichlet(np.full((1, 64), 3.0), bg.coeff, bg.bundle, bg.metric, 0.0)) < 1e-25
    two = bg.coeff.__class__(g1, lambda t: 2 * bg.coeff.Lam(t), bg.coeff.dLam, bg.coeff.divLam, 2.0)
    assert dirichlet(mode(g1, 3), two, bg.bundle, bg.metric, 0.0) == pytest.approx(18 * PI, rel=1e-13)


def test_error_terms_vanish_on_flat_static(g1, rng):
    bg = _flat(g1)
    X, Y = g1.band_limited(rng, 10, (1,)), g1.band_limited(rng, 10, (1,))
    assert error_terms(X, Y, grad_hat(X, bg.bundle, 0.3), bg, 0.3) == (0.0, 0.0)


def test_error_terms_breathing_against_quadrature(g1):
    bg = build_preset("conformal-breathing", g1, a=0.1)
    X = mode(g1, 1)
    I1, _ = error_terms(X, 0 * X, grad_hat(X, bg.bundle, 0.0), bg, 0.0)
    # at τ = 0: √g = 1 and B = tr(g⁻¹b) = 0.2 in one dimension
    direct = g1.cell_volume * np.sum(0.5 * 0.2 * X[0] ** 2)
    assert I1 == pytest.approx(direct, rel=1e-14)
    assert I1 == pytest.approx(0.1 * PI, rel=1e-13)
    # frozen section: E(τ) = π e^{0.1 sin τ}, so dE/dτ(0) = 0.1π
    h = 1e-4
    dE = (energy(X, 0 * X, bg.bundle, bg.metric, h)[0]
          - energy(X, 0 * X, bg.bundle, bg.metric, -h)[0]) / (2 * h)
    assert I1 == pytest.approx(dE, rel=1e-7)


def test_error_terms_growing_fiber_metric(g1):
    bundle = scalar_bundle(g1, 1, factor=np.exp, dfactor=np.exp)
    bg = Background(flat_metric(g1), bundle, _flat(g1).coeff)
    Y = mode(g1, 1)
    tau = 0.3
    I1, I2 = error_terms(0 * Y, Y, np.zeros((1, 1, 64)), bg, tau)
    h = 1e-4
    dE = (energy(0 * Y, Y, bundle, bg.metric, tau + h)[0]
          - energy(0 * Y, Y, bundle, bg.metric, tau - h)[0]) / (2 * h)
    assert I1 == pytest.approx(np.exp(tau) * PI, rel=1e-13)
    assert I1 == pytest.approx(dE, rel=1e-7)
    assert I2 == 0.0


@pytest.mark.parametrize("k", [1, 2, 3])
def test_identity_l2ev_single_mode(g1, k):
    tr = _exact_trace(g1, mode(g1, k), omega=0.05)
    m = tr.interior
    assert tr.identity_residuals["l2ev"][m].max() <= 1e-6
    assert tr.identity_residuals["l2ev_forms"].max() <= 1e-12
    # dE/dτ = 2k²E in closed form
    assert np.allclose(tr.extra["dE"][m], 2 * k**2 * tr.E[m], rtol=1e-6)


def test_identities_vanish_on_zero_data(g1):
    bg = _flat(g1)
    Z = np.zeros((1, 64))
    times = np.arange(6) * 1e-3
    reps = [energy_report(Z, Z, Z, Z, bg, t) for t in times]
    assert check_identity_l2ev(reps, times, 2)[:2] == (0.0, 0.0)
    assert check_identity_h1ev(reps, times, 2)[0] == 0.0
    assert check_identity_h1arr1(reps[0]) == 0.0
    with pytest.raises(UndefinedFrequencyError):
        frequency_sandwich(reps[0])


def test_identity_l2ev_breathing_frozen_section(g1):
    bg = build_preset("conformal-breathing", g1, a=0.1)
    X = mode(g1, 2)
    Z = 0 * X
    times = np.arange(9) * 1e-3
    reps = [energy_report(X, Z, Z, Z, bg, t) for t in times]
    res, gap, flag = check_identity_l2ev(reps, times, 4)
    assert flag == "c5" and res <= 1e-9 and gap <= 1e-12
    direct = g1.cell_volume * np.sum(0.5 * bg.metric.B_trace(times[4])[..., :] * X[0] ** 2
                                     * bg.metric.sqrt_det(times[4]))
    assert reps[4].I1 == pytest.approx(direct, rel=1e-13)


@pytest.mark.parametrize("k", [1, 2, 4])
def test_h1arr1_exact_mode(g1, k):
    bg = _flat(g1)
    X = mode(g1, k)
    r = energy_report(X, 0 * X, k**2 * X, 0 * X, bg, 0.0)
    assert r.F == pytest.approx(k**2 * r.E, rel=1e-12)
    assert r.F == pytest.approx(0.5 * r.pairLF, rel=1e-12)
    assert check_identity_h1arr1(r) <= 1e-12


@pytest.mark.parametrize("name", ["flat-static", "anisotropic-lambda", "graded-fiber"])
def test_h1arr1_sbp_exact_for_static_presets(name, rng):
    g = TorusGrid(1, 64)
    bg = build_preset(name, g)
    X = g.band_limited(rng, 16, (1,))
    r = energy_report(X, 0 * X, 0 * X, 0 * X, bg, 0.0)
    assert check_identity_h1arr1(r) <= 1e-10


def test_sandwich_exact_static_solution(g1):
    tr = _exact_trace(g1, mode(g1, 1) + mode(g1, 2), omega=0.1)
    scale = np.abs(tr.sandwich_upper).max()
    assert np.abs(tr.sandwich_lower).max() <= 1e-10 * scale
    assert tr.sandwich_ok()
    assert tr.N[0] == pytest.approx(2.5, rel=1e-13)
    t = tr.times
    closed = (np.exp(2 * t) + 4 * np.exp(8 * t)) / (np.exp(2 * t) + np.exp(8 * t))
    assert np.max(np.abs(tr.N / closed - 1)) <= 1e-12


def test_sandwich_single_mode(g1):
    tr = _exact_trace(g1, mode(g1, 3))
    m = tr.interior
    assert np.allclose(tr.N, 9.0, rtol=1e-12)
    assert np.all(tr.sandwich_lower[m] <= 0) and np.all(tr.sandwich_upper[m] >= 0)
    assert np.abs(tr.dN_dt_numeric[m]).max() <= 1e-8
    assert tr.sandwich_ok()


def test_time_derivative_orders_and_flags():
    t = np.arange(11) * 0.01
    d, err, flags = time_derivative(np.sin(t), t)
    assert list(flags[:3]) == ["os", "c3", "c5"] and list(flags[-2:]) == ["c3", "os"]
    assert np.abs(d[2:-2] - np.cos(t[2:-2])).max() < 1e-8
    assert np.all(err[2:-2] >= np.abs(d[2:-2] - np.cos(t[2:-2])))


def test_uniform_step_errors():
    with pytest.raises(SamplingError):
        uniform_step([0.0, 1.0])
    with pytest.raises(SamplingError):
        uniform_step([0.0, 1.0, 1.5, 3.0])
    with pytest.raises(SamplingError):
        uniform_step([0.0, 1.0, 1.0])


@given(st.integers(0, 2**31 - 1), st.floats(-1e3, 1e3).filter(lambda c: abs(c) > 1e-3),
       st.sampled_from(["flat-static", "conformal-breathing", "anisotropic-lambda",
                        "twisted-bundle", "graded-fiber"]))
def test_report_scaling_invariance(seed, c, name):
    g = TorusGrid(1, 32)
    bg = build_preset(name, g, m=2)
    rng = np.random.default_rng(seed)
    X, Y, dX, dY = (g.band_limited(rng, 6, (bg.bundle.m,)) for _ in range(4))
    r = energy_report(X, Y, dX, dY, bg, 0.2)
    s = energy_report(c * X, c * Y, c * dX, c * dY, bg, 0.2)
    assert s.N == pytest.approx(r.N, rel=1e-12)
    lo, hi = frequency_sandwich(r)
    slo, shi = frequency_sandwich(s)
    scale = abs(lo) + abs(hi)
    assert abs(slo - lo) <= 1e-11 * scale and abs(shi - hi) <= 1e-11 * scale
    assert check_identity_h1arr1(s) == pytest.approx(check_identity_h1arr1(r), abs=1e-13)
    # Ic consistency
    assert r.Ic == pytest.approx(r.I2 * r.E - r.I1 * r.F, rel=1e-15, abs=1e-300)
    assert s.E == pytest.approx(c * c * r.E, rel=1e-12)
    sc = r.scaled(c)
    assert sc.N == pytest.approx(r.N, rel=1e-15)


@given(st.integers(0, 2**31 - 1))
def test_frequency_nondecreasing_for_exact_static_data(seed):
    g = TorusGrid(1, 64)
    X0 = g.band_limited(np.random.default_rng(seed), 6, (1,))
    tr = _exact_trace(g, X0, omega=0.05, dt=5e-3)
    assert np.all(np.diff(tr.N) >= -1e-12 * tr.N[1:])
    assert tr.sandwich_ok()
