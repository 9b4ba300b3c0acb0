import numpy as np
import pytest

from logcvx.errors import ConfigurationError, SamplingError, StepperFailure
from logcvx.geometry import TorusGrid
from logcvx.prolongation import (build_prolonged, christoffel_difference_formula,
                                 default_profiles, solve_conformal_ricci, structural_audit)

G = TorusGrid(2, 32)
OMEGA, DT = 0.1, 1e-3


def _flow(u0, omega=OMEGA, dt=DT, **kw):
    return solve_conformal_ricci(G, u0, omega, dt, **kw)


@pytest.fixture(scope="module")
def family():
    u0, v = default_profiles(G)
    ref = _flow(u0)
    return u0, v, ref, {e: _flow(u0 + e * v) for e in (1e-3, 1e-4, 5e-5)}


def test_fixed_points():
    z = _flow(np.zeros(G.shape), omega=0.02)
    assert not np.any(z.u) and not np.any(z.K)
    c = _flow(np.full(G.shape, 0.5), omega=0.02)
    assert np.all(c.u == 0.5)


def test_richardson_order():
    u0 = 0.05 * np.sin(G.points[0])
    ref = _flow(u0, dt=2.5e-4).u[-1]
    err = [np.abs(_flow(u0, dt=dt).u[-1] - ref).max() for dt in (4e-3, 2e-3, 1e-3)]
    assert err[0] / err[1] >= 2**3.5 and err[1] / err[2] >= 2**3.5


def test_identical_flows_give_zero_sections(family):
    _, _, ref, _ = family
    for i in range(len(ref.times)):
        assert build_prolonged(ref, ref, i).max_abs() == 0.0
    audit = structural_audit(ref, ref, epsilon=0.0)
    assert audit["C0_empirical"] == 0.0 and audit["vacuous"]


def test_sections_scale_linearly(family):
    _, _, ref, others = family
    i = len(ref.times) // 2
    a = build_prolonged(ref, others[1e-4], i).fields()
    b = build_prolonged(ref, others[5e-5], i).fields()
    for name in a:
        ratio = np.linalg.norm(a[name]) / np.linalg.norm(b[name])
        assert ratio == pytest.approx(2.0, rel=0.01), name


def test_constant_conformal_factors():
    c = 0.3
    a = _flow(np.zeros(G.shape), omega=0.01)
    b = _flow(np.full(G.shape, c), omega=0.01)
    s = build_prolonged(a, b, 3)
    # Y0 = g - g̃ with the reference metric first
    assert np.allclose(s.Y0, (1 - np.exp(2 * c)) * np.eye(2)[:, :, None, None], atol=1e-15)
    assert not np.any(s.X0) and not np.any(s.Y1)
    audit = structural_audit(a, b, epsilon=c)
    assert audit["C0_empirical"] <= 1e-12


def test_epsilon_stability_of_C0(family):
    _, _, ref, others = family
    c0 = [structural_audit(ref, others[e], epsilon=e)["C0_empirical"] for e in (1e-3, 1e-4)]
    assert max(c0) / min(c0) - 1 <= 0.1


def test_christoffel_difference_identity(family):
    _, _, ref, others = family
    for i in (0, len(ref.times) // 2, len(ref.times) - 1):
        direct = build_prolonged(ref, others[1e-3], i).Y1
        formula = christoffel_difference_formula(ref, others[1e-3], i)
        assert np.abs(direct - formula).max() <= 1e-9 * np.abs(direct).max()


def test_shift_preserves_zero_classification(family):
    u0, v, _, _ = family
    c = 0.2
    ref = _flow(u0 + c, omega=0.02)
    assert structural_audit(ref, ref)["C0_empirical"] == 0.0
    other = _flow(u0 + c + 1e-3 * v, omega=0.02)
    assert structural_audit(ref, other)["C0_empirical"] > 0.0


def test_coarse_sampling_is_refused(family):
    u0, v, _, _ = family
    a = _flow(u0, dt=4e-3, sample_every=10, omega=0.2)
    b = _flow(u0 + 1e-3 * v, dt=4e-3, sample_every=10, omega=0.2)
    with pytest.raises(SamplingError):
        structural_audit(a, b)


def test_stepper_and_grid_errors():
    u0, _ = default_profiles(G)
    with pytest.raises(StepperFailure):
        _flow(u0, dt=0.05)
    with pytest.raises(ConfigurationError):
        solve_conformal_ricci(TorusGrid(1, 32), np.zeros(32), 0.1, 1e-3)
