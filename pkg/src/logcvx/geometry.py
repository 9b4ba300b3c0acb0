"""Periodic grids, time-dependent metrics, bundle data and quadrature.

Every geometric object is a closed-form family evaluated on demand: calling
``metric.g(tau)`` returns the sampled tensor field for that time. Exact
tau-derivatives (``b``, ``beta``, ``dLam``, ``dA``) are supplied alongside so
that the integral identities downstream can be checked without numerical
differentiation in time; ``check_invariants`` cross-checks them by centered
differences.

Array layout, with ``S = grid.shape``:

* scalar field ............ ``S``
* metric-type tensor ...... ``(d, d, *S)``
* bundle endomorphism ..... ``(m, m, *S)``
* connection form ......... ``(d, m, m, *S)``
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DimensionError, InvariantViolation

Field = Callable[[float], np.ndarray]


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on the torus ``[0, length)^dim``."""

    dim: int
    n: int
    length: float = 2.0 * np.pi

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigurationError(f"grid.dim must be 1 or 2, got {self.dim}")
        if self.n < 8 or self.n % 2:
            raise ConfigurationError(f"grid.n must be even and >= 8, got {self.n}")
        if not self.length > 0:
            raise ConfigurationError(f"grid.length must be positive, got {self.length}")

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def npoints(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    @cached_property
    def points(self) -> tuple[np.ndarray, ...]:
        x = np.arange(self.n) * self.spacing
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    @cached_property
    def _freqs(self) -> tuple[np.ndarray, ...]:
        # integer mode indices on the rfftn layout, broadcastable
        out = []
        for i in range(self.dim):
            if i == self.dim - 1:
                f = np.fft.rfftfreq(self.n, 1.0 / self.n)
            else:
                f = np.fft.fftfreq(self.n, 1.0 / self.n)
            shp = [1] * self.dim
            shp[i] = f.size
            out.append(np.round(f).reshape(shp))
        return tuple(out)

    def mode_indices(self) -> tuple[np.ndarray, ...]:
        return self._freqs

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Angular wavenumbers with the Nyquist entry zeroed (derivative convention)."""
        scale = 2.0 * np.pi / self.length
        out = []
        for f in self._freqs:
            k = scale * f.copy()
            k[np.abs(f) == self.n // 2] = 0.0
            out.append(k)
        return tuple(out)

    @cached_property
    def ksq(self) -> np.ndarray:
        """``|xi|^2`` on the rfft layout, consistent with ``D_i D_i``."""
        return sum(k**2 for k in self.wavenumbers)

    def rfft(self, a: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(a, axes=self.axes)

    def irfft(self, ahat: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(ahat, s=self.shape, axes=self.axes)

    def derivative(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Spectral partial derivative along spatial ``axis`` of the trailing grid axes."""
        self.check_field(f)
        return self.irfft(1j * self.wavenumbers[axis] * self.rfft(f))

    def check_field(self, f: np.ndarray) -> None:
        if np.shape(f)[-self.dim:] != self.shape:
            raise DimensionError(
                f"field shape {np.shape(f)} does not end with grid shape {self.shape}"
            )

    def band_limited(self, rng: np.random.Generator, max_mode: int, leading=()) -> np.ndarray:
        """Random real field whose Fourier support is ``|k_i| < max_mode`` on every axis."""
        spec_shape = tuple(leading) + self.ksq.shape
        coef = rng.standard_normal(spec_shape) + 1j * rng.standard_normal(spec_shape)
        mask = np.ones(self.ksq.shape, dtype=bool)
        for f in self._freqs:
            mask &= np.abs(f) < max_mode
        return self.irfft(coef * mask)


def _eye_field(k: int, grid: TorusGrid, scale=1.0) -> np.ndarray:
    scale = np.broadcast_to(np.asarray(scale, dtype=float), grid.shape)
    out = np.zeros((k, k) + grid.shape)
    for i in range(k):
        out[i, i] = scale
    return out


def _to_matrix_last(t: np.ndarray) -> np.ndarray:
    return np.moveaxis(np.moveaxis(t, 0, -1), 0, -1)


def _from_matrix_last(t: np.ndarray) -> np.ndarray:
    return np.moveaxis(np.moveaxis(t, -1, 0), -1, 0)


def tensor_inverse(t: np.ndarray) -> np.ndarray:
    return _from_matrix_last(np.linalg.inv(_to_matrix_last(t)))


def min_eigenvalue(t: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(_to_matrix_last(t)).min())


@dataclass(frozen=True, eq=False)
class MetricFamily:
    grid: TorusGrid
    g: Field
    b: Field
    eig_floor: float
    L0: float = float("nan")
    christoffel_fn: Field | None = None

    def g_inv(self, tau: float) -> np.ndarray:
        return tensor_inverse(self.g(tau))

    def sqrt_det(self, tau: float) -> np.ndarray:
        return volume_density(self, tau)

    def B_trace(self, tau: float) -> np.ndarray:
        return np.einsum("ij...,ji...->...", self.g_inv(tau), self.b(tau))

    def christoffel(self, tau: float) -> np.ndarray:
        """``Gamma[k, i, j]`` = Γ^k_ij; closed form if the preset provides one."""
        if self.christoffel_fn is not None:
            return self.christoffel_fn(tau)
        g = self.g(tau)
        d = self.grid.dim
        dg = np.stack([self.grid.derivative(g, ax) for ax in range(d)])  # dg[l, i, j]
        lower = 0.5 * (
            np.einsum("ijl...->lij...", dg)
            + np.einsum("jil...->lij...", dg)
            - dg
        )  # lower[l, i, j] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
        return np.einsum("kl...,lij...->kij...", self.g_inv(tau), lower)

    def check_invariants(self, taus, delta: float = 1e-4) -> dict:
        worst_sym = worst_b = worst_B = 0.0
        lam_min = np.inf
        for tau in taus:
            g = self.g(tau)
            worst_sym = max(worst_sym, float(np.abs(g - np.swapaxes(g, 0, 1)).max()))
            lam_min = min(lam_min, min_eigenvalue(g))
            fd = (self.g(tau + delta) - self.g(tau - delta)) / (2 * delta)
            scale = max(1.0, float(np.abs(self.b(tau)).max()))
            worst_b = max(worst_b, float(np.abs(fd - self.b(tau)).max()) / scale)
            Bt = np.trace(np.linalg.solve(_to_matrix_last(g), _to_matrix_last(self.b(tau))),
                          axis1=-2, axis2=-1)
            worst_B = max(worst_B, float(np.abs(Bt - self.B_trace(tau)).max()))
        if worst_sym > 1e-14 or lam_min < self.eig_floor:
            raise InvariantViolation(
                f"metric not SPD above floor {self.eig_floor}: min eig {lam_min}, asym {worst_sym}"
            )
        return {"asymmetry": worst_sym, "min_eig": lam_min, "b_fd_err": worst_b,
                "B_trace_err": worst_B}


@dataclass(frozen=True, eq=False)
class BundleStructure:
    """Block-diagonal bundle metric on W = X ⊕ Y with a connection on the X block."""

    grid: TorusGrid
    m: int
    gamma: Field
    beta: Field
    A: Field
    dA: Field
    my: int
    gamma_y: Field
    beta_y: Field
    compatible: bool = True

    def check_invariants(self, taus, delta: float = 1e-4) -> dict:
        d = self.grid.dim
        worst_compat = worst_dA = worst_beta = 0.0
        for tau in taus:
            gam = self.gamma(tau)
            A = self.A(tau)
            if self.compatible:
                for i in range(d):
                    dgam = self.grid.derivative(gam, i)
                    rhs = np.einsum("ab...,bc...->ac...", gam, A[i])
                    rhs = rhs + np.einsum("ba...,bc...->ac...", A[i], gam)
                    worst_compat = max(worst_compat, float(np.abs(dgam - rhs).max()))
            fd = (self.A(tau + delta) - self.A(tau - delta)) / (2 * delta)
            worst_dA = max(worst_dA, float(np.abs(fd - self.dA(tau)).max()))
            fd = (self.gamma(tau + delta) - self.gamma(tau - delta)) / (2 * delta)
            worst_beta = max(worst_beta, float(np.abs(fd - self.beta(tau)).max()))
            for k in (gam, self.gamma_y(tau)):
                if min_eigenvalue(k) <= 0:
                    raise InvariantViolation("bundle metric is not positive definite")
        if worst_compat > 1e-9:
            raise InvariantViolation(f"connection not metric compatible: {worst_compat:.3e}")
        return {"compatibility": worst_compat, "dA_fd_err": worst_dA, "beta_fd_err": worst_beta}


@dataclass(frozen=True, eq=False)
class EllipticCoefficient:
    grid: TorusGrid
    Lam: Field
    dLam: Field
    divLam: Field
    lam_floor: float

    def check_invariants(self, metric: MetricFamily, taus, delta: float = 1e-4) -> dict:
        d = self.grid.dim
        worst_psd = np.inf
        worst_dlam = worst_div = 0.0
        for tau in taus:
            L = self.Lam(tau)
            worst_psd = min(worst_psd, min_eigenvalue(L - self.lam_floor * metric.g_inv(tau)))
            fd = (self.Lam(tau + delta) - self.Lam(tau - delta)) / (2 * delta)
            worst_dlam = max(worst_dlam, float(np.abs(fd - self.dLam(tau)).max()))
            # coordinate divergence; presets with spatially varying metrics add Γ terms
            div = sum(self.grid.derivative(L[i], i) for i in range(d))
            G = metric.christoffel(tau)
            div = div + np.einsum("iik...,kj...->j...", G, L) + np.einsum("jik...,ik...->j...", G, L)
            worst_div = max(worst_div, float(np.abs(div - self.divLam(tau)).max()))
        if worst_psd < -1e-12:
            raise InvariantViolation(
                f"Lambda - lambda*g^-1 is not positive semidefinite (min eig {worst_psd:.3e})"
            )
        return {"psd_margin": worst_psd, "dLam_fd_err": worst_dlam, "divLam_err": worst_div}


@dataclass(frozen=True, eq=False)
class Background:
    """The geometric data of one preset; iterates as ``(metric, bundle, coeff)``."""

    metric: MetricFamily
    bundle: BundleStructure
    coeff: EllipticCoefficient
    name: str = "custom"
    params: dict = field(default_factory=dict)
    # Λ constant multiple of δ, flat static metric, trivial connection
    constant_symbol: float | None = None
    static: bool = False
    info: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.metric, self.bundle, self.coeff))

    @property
    def grid(self) -> TorusGrid:
        return self.metric.grid


def volume_density(metric: MetricFamily, tau: float) -> np.ndarray:
    g = metric.g(tau)
    if min_eigenvalue(g) <= 0:
        raise InvariantViolation(f"metric sample at tau={tau} is not positive definite")
    return np.sqrt(np.linalg.det(_to_matrix_last(g)))


def quadrature(f: np.ndarray, metric: MetricFamily, tau: float) -> float:
    """Periodic trapezoid rule for the integral of ``f`` against dμ_g(τ)."""
    grid = metric.grid
    if np.shape(f) != grid.shape:
        raise DimensionError(f"field shape {np.shape(f)} != grid shape {grid.shape}")
    return float(grid.cell_volume * np.sum(f * volume_density(metric, tau)))


# ---------------------------------------------------------------------------
# presets

PRESETS = ("flat-static", "conformal-breathing", "anisotropic-lambda", "twisted-bundle",
           "graded-fiber")


def _const(arr):
    return lambda tau: arr


def flat_metric(grid: TorusGrid) -> MetricFamily:
    d = grid.dim
    eye = _eye_field(d, grid)
    zero = np.zeros_like(eye)
    gam0 = np.zeros((d, d, d) + grid.shape)
    return MetricFamily(grid, _const(eye), _const(zero), eig_floor=1.0, christoffel_fn=_const(gam0))


def scalar_bundle(grid: TorusGrid, m: int = 1, factor: Callable | None = None,
                  dfactor: Callable | None = None, my: int | None = None) -> BundleStructure:
    """Bundle with γ = factor(τ)·I on both blocks and trivial connection."""
    my = m if my is None else my
    factor = factor or (lambda tau: 1.0)
    dfactor = dfactor or (lambda tau: 0.0)
    zero_A = np.zeros((grid.dim, m, m) + grid.shape)
    return BundleStructure(
        grid, m,
        gamma=lambda tau: _eye_field(m, grid, factor(tau)),
        beta=lambda tau: _eye_field(m, grid, dfactor(tau)),
        A=_const(zero_A), dA=_const(zero_A), my=my,
        gamma_y=lambda tau: _eye_field(my, grid, factor(tau)),
        beta_y=lambda tau: _eye_field(my, grid, dfactor(tau)),
    )


def _isotropic_coeff(grid, lam, dlam, divlam, floor) -> EllipticCoefficient:
    d = grid.dim
    return EllipticCoefficient(
        grid,
        Lam=lambda tau: _eye_field(d, grid, lam(tau)),
        dLam=lambda tau: _eye_field(d, grid, dlam(tau)),
        divLam=divlam,
        lam_floor=floor,
    )


def _flat_static(grid, m, my, **_):
    d = grid.dim
    my = m if my is None else my
    coeff = _isotropic_coeff(grid, lambda t: 1.0, lambda t: 0.0,
                             _const(np.zeros((d,) + grid.shape)), 1.0)
    return flat_metric(grid), scalar_bundle(grid, m, my=my), coeff, {"constant_symbol": 1.0,
                                                                     "static": True}


def _conformal_breathing(grid, m, my, a=0.1, **_):
    d = grid.dim
    my = m if my is None else my
    eye = _eye_field(d, grid)
    metric = MetricFamily(
        grid,
        g=lambda tau: np.exp(2 * a * np.sin(tau)) * eye,
        b=lambda tau: 2 * a * np.cos(tau) * np.exp(2 * a * np.sin(tau)) * eye,
        eig_floor=float(np.exp(-2 * abs(a))),
        christoffel_fn=_const(np.zeros((d, d, d) + grid.shape)),
    )
    # Λ = g^{-1}: Ell is the Laplace-Beltrami operator of g(τ)
    coeff = _isotropic_coeff(
        grid,
        lambda t: np.exp(-2 * a * np.sin(t)),
        lambda t: -2 * a * np.cos(t) * np.exp(-2 * a * np.sin(t)),
        _const(np.zeros((d,) + grid.shape)),
        1.0,
    )
    return metric, scalar_bundle(grid, m, my=my), coeff, {"static": False}


def _anisotropic_lambda(grid, m, my, **_):
    d = grid.dim
    my = m if my is None else my
    x = grid.points[0]
    div = np.zeros((d,) + grid.shape)
    div[0] = -np.sin(x)
    coeff = _isotropic_coeff(grid, lambda t: 2.0 + np.cos(x), lambda t: 0.0, _const(div), 1.0)
    return flat_metric(grid), scalar_bundle(grid, m, my=my), coeff, {"static": True}


def _skew(m: int) -> np.ndarray:
    if m % 2:
        raise ConfigurationError(f"twisted-bundle needs an even fiber dimension, got m={m}")
    J = np.zeros((m, m))
    for p in range(0, m, 2):
        J[p, p + 1], J[p + 1, p] = -1.0, 1.0
    return J


def _twisted_bundle(grid, m, my, a=0.2, **_):
    m = 2 if m is None or m == 1 else m
    my = m if my is None else my
    d = grid.dim
    J = _skew(m)
    prof = np.stack([1.0 + 0.5 * np.cos(grid.points[i]) for i in range(d)])  # (d, *S)
    JA = J[None, :, :, ...].reshape((1, m, m) + (1,) * d)
    shape_A = (d, 1, 1) + grid.shape

    def A(tau):
        return a * (1.0 + 0.5 * np.sin(tau)) * prof.reshape(shape_A) * JA

    def dA(tau):
        return a * 0.5 * np.cos(tau) * prof.reshape(shape_A) * JA

    base = scalar_bundle(grid, m, my=my)
    bundle = BundleStructure(grid, m, base.gamma, base.beta, A, dA, my, base.gamma_y, base.beta_y)
    coeff = _isotropic_coeff(grid, lambda t: 1.0, lambda t: 0.0,
                             _const(np.zeros((d,) + grid.shape)), 1.0)
    return flat_metric(grid), bundle, coeff, {"static": False, "m": m}


def _graded_fiber(grid, m, my, c=2.0, **_):
    d = grid.dim
    my = m if my is None else my
    x = grid.points[0]
    w = np.exp(c * np.cos(x))
    gam = _eye_field(m, grid, w)
    gam_y = _eye_field(my, grid, w)
    # compatibility d_1 γ = γA_1 + A_1^T γ forces sym(A_1) = -(c/2) sin x
    A = np.zeros((d, m, m) + grid.shape)
    for p in range(m):
        A[0, p, p] = -0.5 * c * np.sin(x)
    zeros_m = np.zeros_like(gam)
    bundle = BundleStructure(grid, m, _const(gam), _const(zeros_m), _const(A),
                             _const(np.zeros_like(A)), my, _const(gam_y),
                             _const(np.zeros_like(gam_y)))
    div = np.zeros((d,) + grid.shape)
    div[0] = -np.sin(x)
    coeff = _isotropic_coeff(grid, lambda t: 2.0 + np.cos(x), lambda t: 0.0, _const(div), 1.0)
    return flat_metric(grid), bundle, coeff, {"static": True}


_BUILDERS = {
    "flat-static": _flat_static,
    "conformal-breathing": _conformal_breathing,
    "anisotropic-lambda": _anisotropic_lambda,
    "twisted-bundle": _twisted_bundle,
    "graded-fiber": _graded_fiber,
}


def empirical_L0(metric: MetricFamily, bundle: BundleStructure, coeff: EllipticCoefficient,
                 taus) -> float:
    """Grid max of |b| + |∇b| + |Λ| + |∇Λ| + |∂τΛ| + |[∂τ, ∇̂]| (coordinate Frobenius norms)."""
    grid = metric.grid

    def fro(t, lead):
        return np.sqrt(np.sum(t**2, axis=tuple(range(lead))))

    best = 0.0
    for tau in taus:
        b, L = metric.b(tau), coeff.Lam(tau)
        db = np.stack([grid.derivative(b, i) for i in range(grid.dim)])
        dL = np.stack([grid.derivative(L, i) for i in range(grid.dim)])
        tot = (fro(b, 2) + fro(db, 3) + fro(L, 2) + fro(dL, 3) + fro(coeff.dLam(tau), 2)
               + fro(bundle.dA(tau), 3))
        best = max(best, float(tot.max()))
    return best


def gauss_curvature(metric: MetricFamily, tau: float) -> np.ndarray | None:
    """K = -e^{-2φ} Δ₀φ for conformal metrics g = e^{2φ}δ on a 2-torus, else None."""
    grid = metric.grid
    if grid.dim != 2:
        return None
    g = metric.g(tau)
    if np.abs(g[0, 1]).max() > 0 or np.abs(g[0, 0] - g[1, 1]).max() > 1e-14:
        return None
    phi = 0.5 * np.log(g[0, 0])
    lap = grid.irfft(-grid.ksq * grid.rfft(phi))
    return -np.exp(-2 * phi) * lap


def build_preset(name: str, grid: TorusGrid, *, m: int = 1, my: int | None = None,
                 interval: tuple[float, float] = (0.0, 1.0), **params) -> Background:
    """Build the (metric, bundle, Λ) triple of a named preset.

    Parameters
    ----------
    name : one of ``PRESETS``.
    grid : the torus the fields are sampled on.
    m, my : fiber dimensions of the X and Y blocks (``my`` defaults to ``m``).
    interval : τ-range over which the empirical bound ``L0`` is sampled.
    **params : preset parameters (``a`` for breathing and twisted, ``c`` for graded).
    """
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}"
        ) from None
    metric, bundle, coeff, flags = builder(grid, m, my, **params)
    taus = np.linspace(interval[0], interval[1], 9)
    L0 = empirical_L0(metric, bundle, coeff, taus)
    metric = MetricFamily(metric.grid, metric.g, metric.b, metric.eig_floor, L0,
                          metric.christoffel_fn)
    info = {"L0": L0, "lambda": coeff.lam_floor}
    K = gauss_curvature(metric, taus[0])
    if K is not None:
        info["gauss_curvature_max"] = float(max(np.abs(gauss_curvature(metric, t)).max()
                                                for t in taus))
    return Background(metric, bundle, coeff, name=name, params=dict(params),
                      constant_symbol=flags.get("constant_symbol"),
                      static=flags.get("static", False), info=info)
