"""Energies, frequency quotient, error integrals and the frequency sandwich.

For a state (X, Y) with caller-supplied time derivatives this module evaluates

* E  = ‖X‖² + ‖Y‖²,
* F  = ∫ Λ^ij γ(∇̂_iX, ∇̂_jX) dμ,
* N  = F / E,
* I1, I2, the error integrals produced by the time dependence of g, γ, Λ, ∇̂,
* the pairings (L_B X, X), (L_F X, X), (∂τY, Y) and the norms of L_B X, L_F X, ∂τY,

and checks the three integral identities and the two-sided bound on dN/dτ
along a sampled trajectory. Time derivatives of the integrated quantities are
taken by centered differences of the sampled scalars, never from the stepper.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, SamplingError, UndefinedFrequencyError
from .geometry import Background
from .operators import dirichlet_density, elliptic_apply, fiber_apply, fiber_inner, grad_hat

POSITIVITY_FACTOR = 1e-30

TRACE_COLUMNS = ("tau", "E", "F", "N", "dN_numeric", "sandwich_lower", "sandwich_upper",
                 "I1", "I2", "Ic", "res_l2ev", "res_h1arr1", "res_h1ev", "tol", "flag")


def positivity_threshold(npoints: int) -> float:
    return POSITIVITY_FACTOR * npoints


@dataclass(frozen=True)
class EnergyReport:
    tau: float
    E: float
    F: float
    I1: float
    I2: float
    normLB2: float
    normLF2: float
    normdY2: float
    pairLB: float
    pairLF: float
    pairdY: float
    EX: float = 0.0
    EY: float = 0.0
    threshold: float = 0.0
    order: int = 2

    @property
    def defined(self) -> bool:
        return self.E > self.threshold

    @property
    def N(self) -> float:
        return self.F / self.E if self.defined else float("nan")

    @property
    def Ic(self) -> float:
        return self.I2 * self.E - self.I1 * self.F

    def scaled(self, c: float) -> "EnergyReport":
        """Report of (cX, cY): quadratic quantities scale by c², thresholds do not."""
        c2 = c * c
        return EnergyReport(self.tau, c2 * self.E, c2 * self.F, c2 * self.I1, c2 * self.I2,
                            c2 * self.normLB2, c2 * self.normLF2, c2 * self.normdY2,
                            c2 * self.pairLB, c2 * self.pairLF, c2 * self.pairdY,
                            c2 * self.EX, c2 * self.EY, self.threshold, self.order)


def _integrate(density, bg: Background, tau, sg=None) -> float:
    sg = bg.metric.sqrt_det(tau) if sg is None else sg
    return float(bg.grid.cell_volume * np.sum(density * sg))


def energy(X, Y, bundle, metric, tau):
    """E = ‖X‖² + ‖Y‖² with the partials returned alongside."""
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    if X.shape[1:] != Y.shape[1:]:
        raise DimensionError(f"X {X.shape} and Y {Y.shape} live on different grids")
    sg = metric.sqrt_det(tau)
    h = metric.grid.cell_volume
    ex = float(h * np.sum(fiber_inner(X, X, bundle.gamma(tau)) * sg))
    ey = float(h * np.sum(fiber_inner(Y, Y, bundle.gamma_y(tau)) * sg))
    return ex + ey, {"X": ex, "Y": ey}


def dirichlet(X, coeff, bundle, metric, tau) -> float:
    dX = grad_hat(X, bundle, tau)
    return float(metric.grid.cell_volume
                 * np.sum(dirichlet_density(dX, coeff, bundle, tau) * metric.sqrt_det(tau)))


def error_terms(X, Y, dX_hat, bg: Background, tau):
    """The error integrals (I1, I2) generated by the τ-dependence of the geometry."""
    metric, bundle, coeff = bg
    sg = metric.sqrt_det(tau)
    B = metric.B_trace(tau)
    gam, gam_y = bundle.gamma(tau), bundle.gamma_y(tau)
    i1 = (fiber_inner(X, X, bundle.beta(tau)) + fiber_inner(Y, Y, bundle.beta_y(tau))
          + 0.5 * B * (fiber_inner(X, X, gam) + fiber_inner(Y, Y, gam_y)))
    Lam = coeff.Lam(tau)
    comm = np.stack([fiber_apply(a, X) for a in bundle.dA(tau)])  # [∂τ, ∇̂_i] X
    i2 = (np.einsum("ij...,ia...,ab...,jb...->...", coeff.dLam(tau), dX_hat, gam, dX_hat)
          + 2 * np.einsum("ij...,ia...,ab...,jb...->...", Lam, comm, gam, dX_hat)
          + np.einsum("ij...,ia...,ab...,jb...->...", Lam, dX_hat, bundle.beta(tau), dX_hat)
          + 0.5 * B * dirichlet_density(dX_hat, coeff, bundle, tau))
    return _integrate(i1, bg, tau, sg), _integrate(i2, bg, tau, sg)


def energy_report(X, Y, dX, dY, bg: Background, tau: float) -> EnergyReport:
    """All second-order functionals at one time, given ∂τX and ∂τY."""
    metric, bundle, coeff = bg
    X, Y, dX, dY = (np.asarray(a, float) for a in (X, Y, dX, dY))
    sg = metric.sqrt_det(tau)
    gam, gam_y = bundle.gamma(tau), bundle.gamma_y(tau)
    gX = grad_hat(X, bundle, tau)
    ell = elliptic_apply(X, coeff, bundle, metric, tau)
    LB, LF = dX + ell, dX - ell

    def ip(U, V, k=gam):
        return _integrate(fiber_inner(U, V, k), bg, tau, sg)

    EX, EY = ip(X, X), ip(Y, Y, gam_y)
    F = _integrate(dirichlet_density(gX, coeff, bundle, tau), bg, tau, sg)
    I1, I2 = error_terms(X, Y, gX, bg, tau)
    return EnergyReport(
        tau=float(tau), E=EX + EY, F=F, I1=I1, I2=I2,
        normLB2=ip(LB, LB), normLF2=ip(LF, LF), normdY2=ip(dY, dY, gam_y),
        pairLB=ip(LB, X), pairLF=ip(LF, X), pairdY=ip(dY, Y, gam_y),
        EX=EX, EY=EY, threshold=positivity_threshold(bg.grid.npoints),
    )


def frequency_sandwich(report: EnergyReport):
    """Lower and upper bounds on dN/dτ at one time."""
    if not report.defined:
        raise UndefinedFrequencyError(
            f"E = {report.E:.3e} is below the positivity threshold {report.threshold:.3e}"
        )
    E = report.E
    ic = report.Ic / E**2
    lower = -(report.normLB2 + report.normdY2) / (2 * E) + ic
    upper = (report.normLF2 + report.normdY2) / (2 * E) + ic
    return lower, upper


# ---------------------------------------------------------------------------
# time derivatives of sampled scalars

def uniform_step(times) -> float:
    t = np.asarray(times, float)
    if t.size < 3:
        raise SamplingError("need at least three samples for centered differences")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise SamplingError("sample times must be strictly increasing")
    if np.abs(dt - dt.mean()).max() > 1e-9 * dt.mean():
        raise SamplingError("centered differences need uniformly spaced samples")
    return float(dt.mean())


def time_derivative(values, times):
    """Fourth-order centered differences where the stencil fits.

    Returns ``(derivative, error_estimate, flags)``; flags are ``"c5"`` for the
    5-point stencil, ``"c3"`` next to the ends and ``"os"`` (one-sided,
    second order) at the two end samples. The error estimate is the gap
    between the stencil used and the next lower-order one.
    """
    f = np.asarray(values, float)
    h = uniform_step(times)
    n = f.size
    d = np.empty(n)
    err = np.zeros(n)
    flags = np.empty(n, dtype=object)
    d3 = np.empty(n)
    d3[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    d3[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
    d3[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
    d[:] = d3
    flags[:] = "c3"
    flags[0] = flags[-1] = "os"
    if n >= 5:
        d5 = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
        d[2:-2] = d5
        err[2:-2] = np.abs(d5 - d3[2:-2])
        flags[2:-2] = "c5"
    return d, err, flags


# ---------------------------------------------------------------------------
# identity checks

def _rel(a, b, *scales):
    s = max(abs(a), abs(b), *scales)
    return 0.0 if s == 0.0 else abs(a - b) / s


def check_identity_l2ev(reports, times, index: int):
    """Residual of dE/dτ against its first form, and the gap between both forms.

    Returns ``(residual, forms_gap, flag)``.
    """
    E = np.array([r.E for r in reports])
    dE, _, flags = time_derivative(E, times)
    r = reports[index]
    rhs1 = 2 * r.F + 2 * r.pairLB + 2 * r.pairdY + r.I1
    rhs2 = r.pairLB + r.pairLF + 2 * r.pairdY + r.I1
    return _rel(dE[index], rhs1, r.E), _rel(rhs1, rhs2, r.E), flags[index]


def check_identity_h1arr1(report: EnergyReport) -> float:
    """Time-local residual of F = ½((L_F X, X) - (L_B X, X))."""
    return _rel(report.F, 0.5 * (report.pairLF - report.pairLB))


def check_identity_h1ev(reports, times, index: int):
    F = np.array([r.F for r in reports])
    dF, _, flags = time_derivative(F, times)
    r = reports[index]
    rhs = 0.5 * (r.normLF2 - r.normLB2) + r.I2
    return _rel(dF[index], rhs, r.F), flags[index]


# ---------------------------------------------------------------------------

@dataclass
class FrequencyTrace:
    samples: list
    dN_dt_numeric: np.ndarray
    sandwich_lower: np.ndarray
    sandwich_upper: np.ndarray
    identity_residuals: dict
    flags: np.ndarray
    tol: np.ndarray
    budget: float
    order: int = 2
    identity_tolerances: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([r.tau for r in self.samples])

    @property
    def E(self) -> np.ndarray:
        return np.array([r.E for r in self.samples])

    @property
    def F(self) -> np.ndarray:
        return np.array([r.F for r in self.samples])

    @property
    def N(self) -> np.ndarray:
        return np.array([r.N for r in self.samples])

    @property
    def interior(self) -> np.ndarray:
        return self.flags == "c5"

    def sandwich_margins(self):
        """Signed margins (dN - lower + tol, upper + tol - dN) at interior samples."""
        m = self.interior & np.isfinite(self.sandwich_lower)
        lo = self.dN_dt_numeric - self.sandwich_lower + self.tol
        hi = self.sandwich_upper + self.tol - self.dN_dt_numeric
        return np.where(m, lo, np.inf), np.where(m, hi, np.inf)

    def sandwich_ok(self) -> bool:
        lo, hi = self.sandwich_margins()
        return bool(np.all(lo >= 0) and np.all(hi >= 0))

    def worst_sandwich_sample(self) -> int:
        lo, hi = self.sandwich_margins()
        return int(np.argmin(np.minimum(lo, hi)))

    def max_residual(self, name: str, interior_only: bool = True) -> float:
        r = np.asarray(self.identity_residuals[name])
        if interior_only and name != "h1arr1":
            r = r[self.interior]
        return float(np.max(r)) if r.size else 0.0

    def identity_ok(self, forms_tol: float = 1e-12, ibp_tol: float = 1e-10) -> bool:
        """Time-differenced identities within their per-sample tolerance at interior
        samples; the time-local ones to round-off everywhere."""
        m = self.interior
        res, tol = self.identity_residuals, self.identity_tolerances
        return bool(np.all(res["l2ev"][m] <= tol["l2ev"][m])
                    and np.all(res["h1ev"][m] <= tol["h1ev"][m])
                    and np.all(res["l2ev_forms"] <= forms_tol)
                    and np.all(res["h1arr1"] <= ibp_tol))

    def rows(self):
        res = self.identity_residuals
        for k, r in enumerate(self.samples):
            yield {
                "tau": r.tau, "E": r.E, "F": r.F, "N": r.N,
                "dN_numeric": self.dN_dt_numeric[k],
                "sandwich_lower": self.sandwich_lower[k],
                "sandwich_upper": self.sandwich_upper[k],
                "I1": r.I1, "I2": r.I2, "Ic": r.Ic,
                "res_l2ev": res["l2ev"][k], "res_h1arr1": res["h1arr1"][k],
                "res_h1ev": res["h1ev"][k], "tol": self.tol[k], "flag": str(self.flags[k]),
            }


def build_trace(reports, budget: float, order: int = 2) -> FrequencyTrace:
    """Assemble the sandwich, numeric dN/dτ and identity residuals for sampled reports."""
    times = np.array([r.tau for r in reports])
    n = len(reports)
    N = np.array([r.N for r in reports])
    lower = np.full(n, np.nan)
    upper = np.full(n, np.nan)
    for k, r in enumerate(reports):
        if r.defined:
            lower[k], upper[k] = frequency_sandwich(r)
    if np.all(np.isfinite(N)):
        dN, dN_err, flags = time_derivative(N, times)
    else:
        dN = np.full(n, np.nan)
        dN_err = np.zeros(n)
        flags = time_derivative(np.zeros(n), times)[2]
    E = np.array([r.E for r in reports])
    F = np.array([r.F for r in reports])
    dE, errE, _ = time_derivative(E, times)
    dF, errF, _ = time_derivative(F, times)
    tol_l2ev = np.zeros(n)
    tol_h1ev = np.zeros(n)
    l2ev = np.zeros(n)
    forms = np.zeros(n)
    h1ev = np.zeros(n)
    h1arr1 = np.zeros(n)
    for k, r in enumerate(reports):
        rhs1 = 2 * r.F + 2 * r.pairLB + 2 * r.pairdY + r.I1
        rhs2 = r.pairLB + r.pairLF + 2 * r.pairdY + r.I1
        rhs_f = 0.5 * (r.normLF2 - r.normLB2) + r.I2
        l2ev[k] = _rel(dE[k], rhs1, r.E)
        forms[k] = _rel(rhs1, rhs2, r.E)
        h1arr1[k] = check_identity_h1arr1(r)
        h1ev[k] = _rel(dF[k], rhs_f, r.F)
        se = max(abs(dE[k]), abs(rhs1), r.E)
        sf = max(abs(dF[k]), abs(rhs_f), r.F)
        tol_l2ev[k] = budget + (errE[k] / se if se > 0 else 0.0)
        tol_h1ev[k] = budget + (errF[k] / sf if sf > 0 else 0.0)
    with np.errstate(invalid="ignore"):
        tol = dN_err + budget * (1 + np.abs(N) + np.abs(lower) + np.abs(upper))
    return FrequencyTrace(
        samples=list(reports), dN_dt_numeric=dN, sandwich_lower=lower, sandwich_upper=upper,
        identity_residuals={"l2ev": l2ev, "l2ev_forms": forms, "h1arr1": h1arr1, "h1ev": h1ev},
        flags=flags, tol=tol, budget=budget, order=order,
        identity_tolerances={"l2ev": tol_l2ev, "h1ev": tol_h1ev},
        extra={"dE": dE, "dF": dF},
    )
