"""Discrete connection gradient, divergence-form elliptic operator, L_B / L_F and Δ^k.

Sections are plain arrays: a rank-0 section of a rank-``m`` bundle has shape
``(m, *S)``, its gradient ``(d, m, *S)`` and the Hessian ``(d, d, m, *S)``.
:class:`Section` wraps an array with its grid and covariant rank for callers
that want the shape invariants checked at a boundary.

The canonical backend is spectral: with ``n`` even and the Nyquist derivative
mode dropped, the differentiation matrix is exactly skew-symmetric, so under
the periodic trapezoid rule ``(Du, v) = -(u, Dv)`` holds to round-off for any
grid functions. The ``"fd"`` backend (second-order centered differences) is
kept only for convergence-rate cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, UnsupportedRankError
from .geometry import BundleStructure, EllipticCoefficient, MetricFamily, TorusGrid

MAX_LAPLACE_POWER = 3


@dataclass(frozen=True, eq=False)
class Section:
    grid: TorusGrid
    values: np.ndarray
    covariant_rank: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        d = self.grid.dim
        if v.ndim != self.covariant_rank + 1 + d:
            raise DimensionError(
                f"rank-{self.covariant_rank} section needs {self.covariant_rank + 1 + d} axes, "
                f"got shape {v.shape}"
            )
        if v.shape[: self.covariant_rank] != (d,) * self.covariant_rank:
            raise DimensionError(f"covariant axes of {v.shape} must all have length {d}")
        self.grid.check_field(v)
        if not np.all(np.isfinite(v)):
            raise DimensionError("section contains non-finite values")

    @property
    def fiber_dim(self) -> int:
        return self.values.shape[self.covariant_rank]


def _values(X):
    return X.values if isinstance(X, Section) else np.asarray(X, dtype=float)


def spectral_derivative(f: np.ndarray, grid: TorusGrid, axis: int,
                        backend: str = "spectral") -> np.ndarray:
    if backend == "spectral":
        return grid.derivative(f, axis)
    if backend == "fd":
        ax = axis - grid.dim
        return (np.roll(f, -1, axis=ax) - np.roll(f, 1, axis=ax)) / (2 * grid.spacing)
    raise ConfigurationError(f"unknown backend {backend!r}")


def fiber_apply(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Pointwise ``M·X`` for ``M`` of shape (m, m, *S) and ``X`` of shape (*cov, m, *S)."""
    lead = X.ndim - M.ndim + 1
    Xm = np.moveaxis(X, lead, 0)
    Mb = M.reshape(M.shape[:2] + (1,) * lead + M.shape[2:])
    out = np.sum(Mb * Xm[None], axis=1)
    return np.moveaxis(out, 0, lead)


def grad_hat(X, bundle: BundleStructure, tau: float, metric: MetricFamily | None = None,
             backend: str = "spectral") -> np.ndarray:
    """∇̂X = ∂X + A·X, plus the Levi-Civita term on the covector index for rank-1 input."""
    V = _values(X)
    grid = bundle.grid
    d = grid.dim
    rank = V.ndim - 1 - d
    if rank > 1:
        raise UnsupportedRankError(f"grad_hat supports rank 0 and 1, got rank {rank}")
    A = bundle.A(tau)
    out = np.stack([spectral_derivative(V, grid, i, backend) + fiber_apply(A[i], V)
                    for i in range(d)])
    if rank == 1 and metric is not None:
        G = metric.christoffel(tau)  # G[k, i, j]
        # (∇̂_i V)_j -= Γ^k_ij V_k
        out = out - np.einsum("kij...,ka...->ija...", G, V)
    return out


def elliptic_apply(X, coeff: EllipticCoefficient, bundle: BundleStructure,
                   metric: MetricFamily, tau: float, backend: str = "spectral") -> np.ndarray:
    """Ell X = Box X + (∇_iΛ^ij)∇̂_jX in divergence form, (1/√g) D̂_i(√g Λ^ij ∇̂_j X)."""
    V = _values(X)
    grid = bundle.grid
    d = grid.dim
    if V.ndim != 1 + d:
        raise UnsupportedRankError("elliptic_apply needs a rank-0 section")
    if V.shape[0] != bundle.m:
        raise DimensionError(f"fiber dim {V.shape[0]} != bundle m={bundle.m}")
    sg = metric.sqrt_det(tau)
    Lam = coeff.Lam(tau)
    dX = grad_hat(V, bundle, tau, backend=backend)
    W = np.einsum("ij...,ja...->ia...", Lam, dX) * sg
    A = bundle.A(tau)
    div = sum(spectral_derivative(W[i], grid, i, backend) + fiber_apply(A[i], W[i])
              for i in range(d))
    return div / sg


def l_backward(X, dtauX, coeff, bundle, metric, tau, backend="spectral") -> np.ndarray:
    """L_B X = ∂τX + Ell X, with ∂τX supplied by the caller."""
    D = _values(dtauX)
    if D.shape != _values(X).shape:
        raise DimensionError("X and dtauX shapes differ")
    return D + elliptic_apply(X, coeff, bundle, metric, tau, backend)


def l_forward(X, dtauX, coeff, bundle, metric, tau, backend="spectral") -> np.ndarray:
    """L_F X = ∂τX - Ell X."""
    D = _values(dtauX)
    if D.shape != _values(X).shape:
        raise DimensionError("X and dtauX shapes differ")
    return D - elliptic_apply(X, coeff, bundle, metric, tau, backend)


def laplace_power(X, grid: TorusGrid, k: int, kmax: int = MAX_LAPLACE_POWER) -> np.ndarray:
    """Flat Δ^k, exact per mode with multiplier (-|ξ|²)^k."""
    if not 1 <= k <= kmax:
        raise ConfigurationError(f"laplace power k must lie in [1, {kmax}], got {k}")
    V = _values(X)
    grid.check_field(V)
    return grid.irfft((-grid.ksq) ** k * grid.rfft(V))


def fiber_inner(U: np.ndarray, V: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Pointwise γ(U, V) for fiber-leading arrays of shape (m, *S)."""
    return np.einsum("a...,ab...,b...->...", U, gamma, V)


def dirichlet_density(dX: np.ndarray, coeff, bundle, tau) -> np.ndarray:
    """Λ^ij γ(∇̂_iX, ∇̂_jX) pointwise."""
    gam = bundle.gamma(tau)
    Lam = coeff.Lam(tau)
    return np.einsum("ij...,ia...,ab...,jb...->...", Lam, dX, gam, dX)


def ibp_residual(X, coeff, bundle, metric, tau, backend="spectral") -> float:
    """|(Ell X, X) + F(X)| / max(F(X), eps); zero for X ≡ 0 by convention."""
    V = _values(X)
    grid = bundle.grid
    sg = metric.sqrt_det(tau)
    h = grid.cell_volume
    gam = bundle.gamma(tau)
    EX = elliptic_apply(V, coeff, bundle, metric, tau, backend)
    pair = h * np.sum(fiber_inner(EX, V, gam) * sg)
    dX = grad_hat(V, bundle, tau, backend=backend)
    F = h * np.sum(dirichlet_density(dX, coeff, bundle, tau) * sg)
    if F == 0.0 and pair == 0.0:
        return 0.0
    return float(abs(pair + F) / max(F, np.finfo(float).eps))


# ---------------------------------------------------------------------------
# dense oracles

def dense_derivative_matrix(n: int, length: float = 2 * np.pi) -> np.ndarray:
    """Periodic spectral differentiation matrix for even n (cotangent formula)."""
    h = 2 * np.pi / n
    j = np.arange(n)
    diff = j[:, None] - j[None, :]
    D = np.zeros((n, n))
    off = diff != 0
    D[off] = 0.5 * (-1.0) ** diff[off] / np.tan(diff[off] * h / 2)
    return D * (2 * np.pi / length)


def dense_elliptic_matrix(coeff, bundle, metric, tau) -> np.ndarray:
    """Dense assembly of Ell acting on X.reshape(-1) for X of shape (m, *S)."""
    grid = bundle.grid
    d, m, N = grid.dim, bundle.m, grid.npoints
    D1 = dense_derivative_matrix(grid.n, grid.length)
    I1 = np.eye(grid.n)
    if d == 1:
        Dpt = [D1]
    else:
        Dpt = [np.kron(D1, I1), np.kron(I1, D1)]
    A = bundle.A(tau)

    def cov(i):
        M = np.kron(np.eye(m), Dpt[i])
        for a in range(m):
            for b in range(m):
                M[a * N:(a + 1) * N, b * N:(b + 1) * N] += np.diag(A[i, a, b].ravel())
        return M

    sg = np.tile(metric.sqrt_det(tau).ravel(), m)
    Lam = coeff.Lam(tau)
    C = [cov(i) for i in range(d)]
    out = np.zeros((m * N, m * N))
    for i in range(d):
        for j in range(d):
            lam = np.tile(Lam[i, j].ravel(), m)
            out += C[i] @ ((sg * lam)[:, None] * C[j])
    return out / sg[:, None]
