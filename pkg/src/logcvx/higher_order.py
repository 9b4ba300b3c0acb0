"""Higher-order (polyharmonic) frequency analysis on flat tori.

The order 2k+2 model is ∂τX = (-1)^{k+1}Δ^{k+1}X + S_X. With
P = (-1)^k Δ^{k+1} the backward and forward operators are L_B = ∂τ + P and
L_F = ∂τ - P, and F = -(PX, X) has Fourier multiplier |ξ|^{2k+2}. The three
integral identities and the frequency sandwich then carry over verbatim with
vanishing geometric error terms, which is what :func:`flat_power_report`
encodes so that the second-order trace machinery can be reused.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energetics import EnergyReport, FrequencyTrace, positivity_threshold
from .errors import ConfigurationError
from .geometry import BundleStructure, TorusGrid, scalar_bundle
from .operators import grad_hat, laplace_power

MAX_K = 3


def _norm2(grid: TorusGrid, V) -> float:
    return float(grid.cell_volume * np.sum(np.asarray(V) ** 2))


def polyharmonic(X, grid: TorusGrid, k: int) -> np.ndarray:
    """P X = (-1)^k Δ^{k+1} X."""
    return (-1) ** k * laplace_power(X, grid, k + 1, kmax=MAX_K + 1)


def flat_power_report(X, Y, dX, dY, grid: TorusGrid, k: int, tau: float) -> EnergyReport:
    """Order-(2k+2) energy report on a flat torus with trivial bundle."""
    X, Y, dX, dY = (np.asarray(a, float) for a in (X, Y, dX, dY))
    PX = polyharmonic(X, grid, k)
    h = grid.cell_volume
    LB, LF = dX + PX, dX - PX
    EX, EY = _norm2(grid, X), _norm2(grid, Y)
    return EnergyReport(
        tau=float(tau), E=EX + EY, F=float(-h * np.sum(PX * X)), I1=0.0, I2=0.0,
        normLB2=_norm2(grid, LB), normLF2=_norm2(grid, LF), normdY2=_norm2(grid, dY),
        pairLB=float(h * np.sum(LB * X)), pairLF=float(h * np.sum(LF * X)),
        pairdY=float(h * np.sum(dY * Y)), EX=EX, EY=EY,
        threshold=positivity_threshold(grid.npoints), order=2 * k + 2,
    )


# ---------------------------------------------------------------------------
# derivative norms on the flat torus

def derivative_norm2(X, grid: TorusGrid, l: int) -> float:
    """‖∇^{(l)}X‖² = Σ_α ‖∂^α X‖² over all ordered multi-indices, via Parseval."""
    Xh = grid.rfft(np.asarray(X, float))
    return _parseval(grid, grid.ksq**l * np.abs(Xh) ** 2)


def _parseval(grid: TorusGrid, spec) -> float:
    # rfft stores half the spectrum: double every column except 0 and Nyquist
    w = np.full(grid.ksq.shape[-1], 2.0)
    w[0] = 1.0
    if grid.n % 2 == 0:
        w[-1] = 1.0
    spec = np.asarray(spec)
    total = np.sum(spec * w)
    return float(total * grid.cell_volume / grid.npoints)


def hessian_norm2(X, grid: TorusGrid, bundle: BundleStructure | None = None, tau=0.0) -> float:
    """‖∇̂²X‖² summed over both covector indices, computed in physical space."""
    X = np.asarray(X, float)
    bundle = bundle or scalar_bundle(grid, X.shape[0])
    H = grad_hat(grad_hat(X, bundle, tau), bundle, tau)
    return _norm2(grid, H)


def bundle_laplacian(X, grid: TorusGrid, bundle: BundleStructure | None = None, tau=0.0):
    X = np.asarray(X, float)
    bundle = bundle or scalar_bundle(grid, X.shape[0])
    H = grad_hat(grad_hat(X, bundle, tau), bundle, tau)
    return sum(H[i, i] for i in range(grid.dim))


def kcf_functionals(X, grid: TorusGrid, k: int) -> float:
    """F = ‖Δ^m X‖² for k = 2m - 1 and ‖∇Δ^m X‖² for k = 2m."""
    if not 1 <= k <= MAX_K:
        raise ConfigurationError(f"k must lie in [1, {MAX_K}], got {k}")
    m = (k + 1) // 2
    V = laplace_power(X, grid, m)
    if k % 2:
        return _norm2(grid, V)
    return _norm2(grid, np.stack([grid.derivative(V, i) for i in range(grid.dim)]))


# ---------------------------------------------------------------------------
# interpolation

def interpolation_constant(eps: float, k: int, l: int) -> float:
    """C(ε, k, l) = ε^{-l/(k-l)}, from |ξ|^{2l} ≤ ε|ξ|^{2k} + ε^{-l/(k-l)} per mode."""
    _check_lk(l, k)
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    return float(eps ** (-l / (k - l)))


def sharp_interpolation_constant(eps: float, k: int, l: int) -> float:
    """Smallest C with s^l ≤ εs^k + C for all s ≥ 0."""
    _check_lk(l, k)
    if l == 0:
        return 1.0
    return float((l / (k * eps)) ** (l / (k - l)) * (k - l) / k)


def _check_lk(l, k):
    if not (0 <= l < k <= MAX_K):
        raise ConfigurationError(f"need 0 <= l < k <= {MAX_K}, got l={l}, k={k}")


@dataclass(frozen=True)
class InterpolationResult:
    lhs: float
    rhs: float
    C_used: float
    passed: bool

    @property
    def slack(self) -> float:
        return 1.0 - self.lhs / self.rhs if self.rhs > 0 else 0.0


def interpolation_check(X, grid: TorusGrid, l: int, k: int, eps: float) -> InterpolationResult:
    """‖∇^{(l)}X‖² ≤ C‖X‖² + ε‖∇^{(k)}X‖²."""
    C = interpolation_constant(eps, k, l)
    lhs = derivative_norm2(X, grid, l)
    rhs = C * derivative_norm2(X, grid, 0) + eps * derivative_norm2(X, grid, k)
    return InterpolationResult(lhs, rhs, C, bool(lhs <= rhs * (1 + 1e-12) + 1e-300))


def near_tight_mode(grid: TorusGrid, l: int, k: int, eps: float) -> tuple[int, float]:
    """Integer mode j < n/2 minimising the relative slack of the interpolation bound."""
    C = interpolation_constant(eps, k, l)
    j = np.arange(1, grid.n // 2)
    s = (2 * np.pi / grid.length * j) ** 2
    slack = 1 - s**l / (C + eps * s**k)
    best = int(np.argmin(slack))
    return int(j[best]), float(slack[best])


# ---------------------------------------------------------------------------
# Gårding-type comparison

def curved_bundle(grid: TorusGrid, a: float = 0.2) -> BundleStructure:
    """Rank-2 bundle on T² with A_2 = a·sin(x_1)·J, curvature R_12 = a·cos(x_1)·J."""
    if grid.dim != 2:
        raise ConfigurationError("curved_bundle needs a two-dimensional grid")
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    A = np.zeros((2, 2, 2) + grid.shape)
    A[1] = a * np.sin(grid.points[0]) * J[:, :, None, None]
    base = scalar_bundle(grid, 2)
    return BundleStructure(grid, 2, base.gamma, base.beta, lambda t: A,
                           lambda t: np.zeros_like(A), 2, base.gamma_y, base.beta_y)


def curvature_bound(bundle: BundleStructure, tau: float = 0.0) -> float:
    """max_x max_{i,j} operator norm of R_ij = ∂_iA_j - ∂_jA_i + [A_i, A_j]."""
    grid = bundle.grid
    A = bundle.A(tau)
    d = grid.dim
    worst = 0.0
    for i in range(d):
        for j in range(i + 1, d):
            R = (grid.derivative(A[j], i) - grid.derivative(A[i], j)
                 + np.einsum("ab...,bc...->ac...", A[i], A[j])
                 - np.einsum("ab...,bc...->ac...", A[j], A[i]))
            M = np.moveaxis(R.reshape(R.shape[:2] + (-1,)), -1, 0)
            worst = max(worst, float(np.linalg.norm(M, ord=2, axis=(1, 2)).max()))
    return worst


@dataclass(frozen=True)
class GaardingResult:
    lap2: float
    hess2: float
    x2: float
    C_pred: float
    C_measured: float
    lower_ok: bool
    upper_ok: bool
    slack: float


def gaarding_check(X, grid: TorusGrid, eps: float, bundle: BundleStructure | None = None,
                   tau: float = 0.0) -> GaardingResult:
    """-C‖X‖² + (1-ε)‖∇²X‖² ≤ ‖ΔX‖² ≤ (1+ε)‖∇²X‖² + C‖X‖².

    The predicted constant is C = (ω·d(1 + √d))²/(4ε) with ω the curvature bound;
    ``C_measured`` is the smallest constant that the given X actually needs.
    """
    X = np.asarray(X, float)
    bundle = bundle or scalar_bundle(grid, X.shape[0])
    d = grid.dim
    lap2 = _norm2(grid, bundle_laplacian(X, grid, bundle, tau))
    hess2 = hessian_norm2(X, grid, bundle, tau)
    x2 = _norm2(grid, X)
    omega = curvature_bound(bundle, tau)
    C = (omega * d * (1 + np.sqrt(d))) ** 2 / (4 * eps)
    lo_gap = lap2 - ((1 - eps) * hess2 - C * x2)
    hi_gap = (1 + eps) * hess2 + C * x2 - lap2
    rnd = 1e-12 * max(lap2, hess2)
    need = max(0.0, (1 - eps) * hess2 - lap2, lap2 - (1 + eps) * hess2)
    C_meas = need / x2 if x2 > 0 else 0.0
    return GaardingResult(lap2, hess2, x2, float(C), float(C_meas),
                          bool(lo_gap >= -rnd), bool(hi_gap >= -rnd),
                          float(min(lo_gap, hi_gap)))


# ---------------------------------------------------------------------------

@dataclass
class FourthOrderFunctionals:
    E: float
    F4: float
    N4: float
    gn_constants: dict = field(default_factory=dict)
    E_tilde: float = 0.0


def fourth_order_functionals(X, Y, grid: TorusGrid,
                             eps_list=(1.0, 0.1, 0.01)) -> FourthOrderFunctionals:
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    E = _norm2(grid, X) + _norm2(grid, Y)
    F4 = _norm2(grid, laplace_power(X, grid, 1))
    N4 = F4 / E if E > positivity_threshold(grid.npoints) else float("nan")
    table = {(e, k, l): interpolation_constant(e, k, l)
             for e in eps_list for k in range(1, MAX_K + 1) for l in range(k)}
    Et = E + derivative_norm2(X, grid, 4) + derivative_norm2(Y, grid, 4)
    return FourthOrderFunctionals(E, F4, N4, table, Et)


@dataclass
class FourthOrderSandwich:
    C: float
    ok: bool
    worst_index: int


def fourth_order_sandwich(trace: FrequencyTrace) -> FourthOrderSandwich:
    """dN/dτ ≥ -C(N+1) - (‖L_B X‖² + ‖∂τY‖²)/(2E) - tol with the smallest such C ≥ 0."""
    if not any(r.defined for r in trace.samples):
        return FourthOrderSandwich(0.0, True, 0)
    E = trace.E
    N = trace.N
    base = -np.array([(r.normLB2 + r.normdY2) for r in trace.samples]) / (2 * E)
    need = (base - trace.dN_dt_numeric - trace.tol) / (N + 1)
    m = trace.interior
    C = float(max(0.0, need[m].max())) if m.any() else 0.0
    gap = trace.dN_dt_numeric - (-C * (N + 1) + base) + trace.tol
    gap = np.where(m, gap, np.inf)
    return FourthOrderSandwich(C, bool(np.all(gap >= 0)), int(np.argmin(gap)))


def fourth_order_frequency_trace(traj) -> FrequencyTrace:
    from .evolution import frequency_trace

    if traj.system.order != 4:
        raise ConfigurationError(f"expected an order-4 trajectory, got order {traj.system.order}")
    trace = frequency_trace(traj)
    trace.extra["fourth_order_sandwich"] = fourth_order_sandwich(trace)
    return trace
