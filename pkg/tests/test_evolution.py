import numpy as np
import pytest
from hypothesis import given, strategies as st

from logcvx.errors import ConfigurationError, StepperFailure
from logcvx.evolution import (Coupling, CoupledSystem, backward_uniqueness_experiment,
                              check_stability, evolve, exact_linear_trajectory,
                              frequency_bound_experiment, frequency_trace, log_second_differences,
                              logconvexity_certificate, tolerance_budget)
from logcvx.geometry import PRESETS, TorusGrid, build_preset

from conftest import mode


def _system(name="flat-static", dim=1, n=64, c=0.0, order=2, m=None):
    grid = TorusGrid(dim, n)
    m = m or (2 if name == "twisted-bundle" else 1)
    bg = build_preset(name, grid, m=m)
    return CoupledSystem(bg, order, Coupling("xy" if c else "none", c))


def _times(omega, dt):
    return np.arange(int(round(omega / dt)) + 1) * dt


def test_evolve_matches_closed_form_mode():
    s = _system()
    X0 = mode(s.grid, 3)
    tr = evolve(s, X0, 0 * X0, 0.1, 1e-3)
    expect = np.exp(0.9) * X0
    assert np.abs(tr.X[-1] - expect).max() <= 1e-8 * np.abs(expect).max()
    assert tr.meta["method"] == "lawson-rk4"


@pytest.mark.parametrize("name", PRESETS)
def test_zero_data_stays_zero(name):
    s = _system(name, c=0.3)
    bg = s.background
    Z = np.zeros((bg.bundle.m, 64))
    tr = evolve(s, Z, np.zeros((bg.bundle.my, 64)), 0.1, 2e-3)
    assert not np.any(tr.X) and not np.any(tr.Y)


def test_terminal_energy_scales_quadratically():
    s = _system(c=0.3)
    base = mode(s.grid, 1)
    E = [evolve(s, e * base, 0 * base, 0.1, 2e-3).energies()[-1] for e in (1e-2, 1e-3, 1e-4)]
    assert E[0] / E[1] == pytest.approx(1e2, rel=1e-10)
    assert E[1] / E[2] == pytest.approx(1e2, rel=1e-10)


@given(st.integers(0, 2**31 - 1), st.floats(-50, 50).filter(lambda c: abs(c) > 1e-2),
       st.sampled_from(PRESETS))
def test_linearity_of_trajectories(seed, c, name):
    s = _system(name, n=32, c=0.3)
    bg = s.background
    rng = np.random.default_rng(seed)
    X0 = s.grid.band_limited(rng, 4, (bg.bundle.m,))
    Y0 = s.grid.band_limited(rng, 4, (bg.bundle.my,))
    a = evolve(s, X0, Y0, 0.02, 2e-3)
    b = evolve(s, c * X0, c * Y0, 0.02, 2e-3)
    scale = abs(c) * np.abs(a.X).max()
    assert np.abs(b.X - c * a.X).max() <= 1e-10 * scale
    assert np.abs(b.Y - c * a.Y).max() <= 1e-10 * max(scale, abs(c) * np.abs(a.Y).max())


def test_stepper_order_on_variable_coefficients():
    s = _system("anisotropic-lambda", c=0.3)
    rng = np.random.default_rng(3)
    X0 = s.grid.band_limited(rng, 5, (1,))
    Y0 = s.grid.band_limited(rng, 5, (1,))
    ref = evolve(s, X0, Y0, 0.08, 2.5e-4).X[-1]
    err = [np.abs(evolve(s, X0, Y0, 0.08, dt).X[-1] - ref).max() for dt in (4e-3, 2e-3, 1e-3)]
    # advertised order 4: each halving must gain at least 2^{3.5}
    assert err[0] / err[1] >= 2**3.5 and err[1] / err[2] >= 2**3.5


def test_stability_violation_is_reported():
    s = _system("anisotropic-lambda", c=0.3)
    with pytest.raises(StepperFailure) as exc:
        check_stability(s, 0.2, 0.1)
    assert "rho_remainder" in exc.value.diagnostics


def test_out_of_band_data_is_rejected():
    s = _system()
    X0 = mode(s.grid, 20)
    with pytest.raises(ConfigurationError):
        evolve(s, X0, 0 * X0, 0.1, 1e-3)


def test_system_configuration_errors():
    with pytest.raises(ConfigurationError):
        _system(order=3)
    with pytest.raises(ConfigurationError):
        _system("conformal-breathing", order=4)
    grid = TorusGrid(1, 32)
    with pytest.raises(ConfigurationError):
        CoupledSystem(build_preset("flat-static", grid, m=1, my=2), 2, Coupling("xy", 0.3))
    with pytest.raises(ConfigurationError):
        Coupling("zz", 0.1)
    with pytest.raises(ConfigurationError):
        Coupling("xy", -1.0)


@pytest.mark.parametrize("name", PRESETS)
def test_structural_audit_respects_declared_constant(name):
    s = _system(name, n=32, c=0.4)
    rep = s.structural_audit(np.random.default_rng(0), taus=(0.0, 0.5))
    assert rep["ok"] and rep["measured"] <= 0.4 * (1 + 1e-9)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_frequency_bound_single_mode(k):
    s = _system()
    tr = frequency_trace(exact_linear_trajectory(s, mode(s.grid, k), _times(0.1, 1e-3)))
    fb = frequency_bound_experiment(tr)
    assert fb.certificate and fb.C <= 1e-8
    # N0 = e^{C span}(N(ω) + 1)
    assert fb.N0 == pytest.approx(k**2 + 1, rel=1e-7)
    lc = logconvexity_certificate(tr, fb)
    assert lc.certificate
    assert np.allclose(np.diff(np.log(tr.E)) / 1e-3, 2 * k**2, rtol=1e-9)


def test_two_mode_certificate_and_convexity():
    s = _system()
    tr = frequency_trace(exact_linear_trajectory(s, mode(s.grid, 1) + mode(s.grid, 2),
                                                 _times(0.2, 1e-3)))
    fb = frequency_bound_experiment(tr)
    assert fb.certificate and fb.C <= 1e-8
    assert np.all(tr.N <= tr.N[-1] * (1 + 1e-12))
    assert log_second_differences(tr.E).min() >= -1e-8
    assert logconvexity_certificate(tr, fb).certificate


def test_coupled_certificate_finite():
    s = _system(c=0.3)
    rng = np.random.default_rng(5)
    tr = frequency_trace(evolve(s, s.grid.band_limited(rng, 4, (1,)),
                                s.grid.band_limited(rng, 4, (1,)), 0.2, 2e-3))
    fb = frequency_bound_experiment(tr)
    lc = logconvexity_certificate(tr, fb)
    assert fb.certificate and np.isfinite(fb.C) and lc.certificate


def test_zero_trajectory_is_trivially_zero():
    s = _system()
    Z = np.zeros((1, 64))
    tr = frequency_trace(evolve(s, Z, Z, 0.02, 2e-3))
    fb = frequency_bound_experiment(tr)
    assert fb.trivially_zero and fb.certificate
    assert logconvexity_certificate(tr, fb).trivially_zero


def test_backward_uniqueness_sweep():
    rep = backward_uniqueness_experiment(_system(c=0.3), [1e-2, 1e-4, 1e-6, 0.0], 0.2, 2e-3)
    assert rep["zero_max_E"] <= 1e-25
    assert rep["ratio_spread"] <= 0.01
    assert rep["certificate"]
    assert rep["rows"][-1]["trivially_zero"]


def test_pure_heat_mode_ratio():
    rep = backward_uniqueness_experiment(_system(), [1.0, 1e-3], 0.1, 1e-3, mode=2)
    for row in rep["rows"]:
        assert row["ratio"] == pytest.approx(np.exp(2 * 4 * 0.1), rel=1e-9)
        assert row["bound_ok"]


def test_tolerance_budget_floor():
    assert tolerance_budget(1e-3, 1.0) == 1e-8
    assert tolerance_budget(0.1, 1.0) == pytest.approx(10 * 0.1**4)
