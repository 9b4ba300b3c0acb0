"""Distance-like weight, cutoffs and the R → ∞ limit of localized energies.

Noncompactness is modelled on a long one-dimensional torus: a protected window
around the center plays the role of the line, and the periodic seam is kept
out of every support set.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, SupportViolation
from .geometry import TorusGrid
from .energetics import positivity_threshold, time_derivative

SMOOTHSTEP = {
    # 1 - φ as a function of the transition coordinate t ∈ [0, 1]
    5: np.polynomial.Polynomial([0, 0, 0, 10, -15, 6]),
    9: np.polynomial.Polynomial([0, 0, 0, 0, 0, 126, -420, 540, -315, 70]),
}
SUPPORT_FLOOR = 1e-12


def weight_rate(L1: float, V0: float) -> float:
    """Bw = max{L1, V0}."""
    return float(max(L1, V0))


def _smoothstep_bounds(degree: int) -> tuple[float, float]:
    S = SMOOTHSTEP[degree]
    t = np.linspace(0.0, 1.0, 100001)
    return float(np.abs(S.deriv(1)(t)).max()), float(np.abs(S.deriv(2)(t)).max())


@dataclass(frozen=True, eq=False)
class WeightProfile:
    grid: TorusGrid
    center: float
    r: np.ndarray
    rho: np.ndarray
    drho: tuple  # ∂^p ρ for p = 1..4
    C1: float
    C2: float
    derivative_bounds: dict
    Bw: float = 1.0
    R: float | None = None
    degree: int = 5
    phi: np.ndarray | None = None
    dphi: np.ndarray | None = None
    d2phi: np.ndarray | None = None
    C3: float | None = None
    safe_radius: float = 0.0

    @property
    def complete(self) -> bool:
        return self.phi is not None


def build_rho(grid: TorusGrid, center: float | None = None, R_max: float = 16.0,
              Bw: float = 1.0) -> WeightProfile:
    """ρ = √(1 + r²) with r the distance to ``center`` inside the protected window."""
    if grid.dim != 1:
        raise ConfigurationError("the noncompact model lives on a one-dimensional torus")
    L = grid.length
    center = L / 2 if center is None else float(center)
    safe = L / 4
    if 2 * R_max > safe:
        raise ConfigurationError(
            f"support radius 2*R_max={2 * R_max} reaches the periodic seam; "
            f"need 2*R_max <= length/4 = {safe}"
        )
    if Bw <= 0:
        raise ConfigurationError("Bw must be positive")
    x = grid.points[0]
    y = (x - center + L / 2) % L - L / 2
    q = 1 + y**2
    rho = np.sqrt(q)
    drho = (y / rho, q**-1.5, -3 * y * q**-2.5, (12 * y**2 - 3) * q**-3.5)
    r = np.abs(y)
    inner = r <= safe
    bounds = {p + 1: float(np.abs(d[inner]).max()) for p, d in enumerate(drho)}
    ratio = rho[inner] / (1 + r[inner])
    C1 = float(np.sqrt(2))
    if ratio.min() < 1 / C1 - 1e-15 or ratio.max() > C1 + 1e-15:
        raise ConfigurationError("comparability of rho with 1 + r failed")
    return WeightProfile(grid, center, r, rho, drho, C1, max(bounds[1], bounds[2]), bounds,
                         Bw=float(Bw), safe_radius=safe)


def cutoff_constant(degree: int = 5, R_min: float = 1.0) -> float:
    """R-independent bound on |∇φ_R| + |∇∇φ_R| valid for every R ≥ R_min."""
    S1, S2 = _smoothstep_bounds(degree)
    gap = np.sqrt(1 + 4 * R_min**2) - np.sqrt(1 + R_min**2)
    rho_in = np.sqrt(1 + R_min**2)
    return float(S1 / gap + S2 / gap**2 + S1 * rho_in**-3 / gap)


def build_cutoff(profile: WeightProfile, R: float, degree: int = 5) -> WeightProfile:
    """φ_R ≡ 1 for r ≤ R, ≡ 0 for r ≥ 2R, a smoothstep in ρ in between."""
    if degree not in SMOOTHSTEP:
        raise ConfigurationError(f"smoothstep degree must be 5 or 9, got {degree}")
    if R < 1:
        raise ConfigurationError(f"R must be at least 1, got {R}")
    if 2 * R > profile.safe_radius:
        raise ConfigurationError(f"2R={2 * R} exceeds the safe radius {profile.safe_radius}")
    lo, hi = np.sqrt(1 + R**2), np.sqrt(1 + 4 * R**2)
    gap = hi - lo
    t = np.clip((profile.rho - lo) / gap, 0.0, 1.0)
    S = SMOOTHSTEP[degree]
    phi = 1 - S(t)
    s1 = S.deriv(1)(t) / gap
    s2 = S.deriv(2)(t) / gap**2
    d1, d2 = profile.drho[0], profile.drho[1]
    dphi = -s1 * d1
    d2phi = -(s2 * d1**2 + s1 * d2)
    C3 = cutoff_constant(degree)
    if np.max(np.abs(dphi) + np.abs(d2phi)) > C3:
        raise ConfigurationError("cutoff derivative bound violated")
    return replace(profile, R=float(R), degree=degree, phi=phi, dphi=dphi, d2phi=d2phi, C3=C3)


def weighted_localize(X, Y, profile: WeightProfile):
    """(X̃_R, Ỹ_R) = φ_R e^{-3Bwρ}(X, Y); without a cutoff only the weight is applied."""
    w = np.exp(-3 * profile.Bw * profile.rho)
    if profile.complete:
        w = w * profile.phi
    return w * np.asarray(X, float), w * np.asarray(Y, float)


def check_support(X, profile: WeightProfile, radius: float, floor: float = SUPPORT_FLOOR):
    """Raise unless |X| ≤ floor·max|X| outside the ball of the given radius."""
    X = np.abs(np.asarray(X, float))
    peak = X.max()
    if peak == 0:
        return
    outside = X[..., profile.r > radius]
    if outside.size and outside.max() > floor * peak:
        raise SupportViolation(
            f"section exceeds {floor:g}*max outside radius {radius} "
            f"(ratio {outside.max() / peak:.3e})"
        )


def _localized_energies(Xs, Ys, profile: WeightProfile):
    grid = profile.grid
    h = grid.cell_volume
    E, F = [], []
    for X, Y in zip(Xs, Ys):
        Xt, Yt = weighted_localize(X, Y, profile)
        E.append(h * (np.sum(Xt**2) + np.sum(Yt**2)))
        F.append(h * np.sum(grid.derivative(Xt, 0) ** 2))
    return np.array(E), np.array(F)


def _tail_integral(f, t):
    """Q(τ_i) = ∫_{τ_i}^{ω} f ds by the trapezoid rule."""
    seg = 0.5 * (f[1:] + f[:-1]) * np.diff(t)
    return np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])


@dataclass
class CutoffLimitReport:
    R_list: list
    Bw: float
    N0: float
    rows: list = field(default_factory=list)
    per_R: list = field(default_factory=list)
    trivially_zero: bool = False
    n_gaps: list = field(default_factory=list)
    n_monotone: bool = True
    correction_ratios: list = field(default_factory=list)
    weight_factors: list = field(default_factory=list)
    correction_ok: bool = True
    global_match: float = 0.0
    certificate: bool = True


def cutoff_limit_experiment(traj, R_list=(4.0, 8.0, 16.0), Bw: float = 1.0,
                            degree: int = 5, center: float | None = None) -> CutoffLimitReport:
    """Localized energies for each R, Q_R, the correction e^{-2BwR}Q_R(a) and the
    localized Grönwall bound."""
    grid = traj.system.grid
    R_list = sorted(float(R) for R in R_list)
    base = build_rho(grid, center, R_max=R_list[-1], Bw=Bw)
    Xs, Ys, t = traj.X, traj.Y, np.asarray(traj.times, float)
    Ew, Fw = _localized_energies(Xs, Ys, base)
    thr = positivity_threshold(grid.npoints)
    if np.all(Ew <= thr):
        return CutoffLimitReport(R_list, Bw, 0.0, trivially_zero=True)
    for X, Y in zip(Xs, Ys):
        Xt, Yt = weighted_localize(X, Y, base)
        check_support(Xt, base, R_list[-1])
        check_support(Yt, base, R_list[-1])
    Nw = Fw / Ew
    dN, err, flags = time_derivative(Nw, t)
    inner = flags == "c5"
    C_N = float(max(0.0, np.max(((-dN - err) / (Nw + 1))[inner]))) if inner.any() else 0.0
    N0 = float(np.exp(C_N * (t[-1] - t[0])) * (Nw[-1] + 1))
    report = CutoffLimitReport(R_list, Bw, N0)
    corr_prev = None
    for R in R_list:
        prof = build_cutoff(base, R, degree)
        ER, FR = _localized_energies(Xs, Ys, prof)
        NR = FR / ER
        Q = _tail_integral(1 / ER, t)
        corr = np.exp(-2 * Bw * R) * Q
        P = N0 + 1 + corr[0]
        dE, _, _ = time_derivative(ER, t)
        C = float(max(0.0, np.max(dE / (P * ER + np.exp(-2 * Bw * R)))))
        span = t[-1] - t[0]
        bound = np.exp(C * P * span) * (ER[0] + np.exp(-2 * Bw * R) / P
                                        * (1 - np.exp(-C * P * span)))
        gap = float(np.max(np.abs(NR - Nw)))
        ok = bool(ER[-1] <= bound * (1 + 1e-9))
        report.per_R.append({
            "R": R, "C3": prof.C3, "N_gap": gap, "Q_a": float(Q[0]), "correction": float(corr[0]),
            "P": float(P), "C": C, "E_R_omega": float(ER[-1]), "bound": float(bound),
            "bound_ok": ok, "E_match": float(np.max(np.abs(ER - Ew) / Ew)),
        })
        for k in range(len(t)):
            report.rows.append({"tau": float(t[k]), "R": R, "E_R": float(ER[k]),
                                "F_R": float(FR[k]), "N_R": float(NR[k]), "Q_R": float(Q[k]),
                                "correction": float(corr[k])})
        report.n_gaps.append(gap)
        if corr_prev is not None:
            R_prev = report.per_R[-2]["R"]
            report.correction_ratios.append(float(corr[0] / corr_prev))
            report.weight_factors.append(float(np.exp(-2 * Bw * (R - R_prev))))
        corr_prev = corr[0]
    floor = 64 * np.finfo(float).eps * float(np.max(Nw))
    g = report.n_gaps
    report.n_monotone = all(b < a or a <= floor for a, b in zip(g, g[1:]))
    report.correction_ok = all(r <= w * (1 + 1e-12)
                               for r, w in zip(report.correction_ratios, report.weight_factors))
    report.global_match = report.per_R[-1]["E_match"]
    report.certificate = bool(report.n_monotone and report.correction_ok
                              and all(p["bound_ok"] for p in report.per_R)
                              and report.global_match <= 1e-12)
    return report


def gaussian_bump(grid: TorusGrid, width: float, center: float | None = None) -> np.ndarray:
    center = grid.length / 2 if center is None else center
    x = grid.points[0]
    y = (x - center + grid.length / 2) % grid.length - grid.length / 2
    return np.exp(-(y**2) / (2 * width**2))
