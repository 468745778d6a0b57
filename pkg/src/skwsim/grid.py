"""One-dimensional Dirichlet grid: sine transforms, Laplacian, Sobolev norms.

All state in the package lives on the interior points of an interval
(0, L) with homogeneous Dirichlet conditions.  Boundary values are never
stored, so the boundary condition cannot be violated by construction.
Array-valued operations accept any leading batch axes and act on the last
axis, which must have length M.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft
from scipy.linalg.lapack import dgtsv as _dgtsv


class TridiagonalSolveError(RuntimeError):
    """Raised when a tridiagonal system cannot be solved reliably."""


PIVOT_FLOOR = 1e-14


def _lapack_tridiagonal(sub: np.ndarray, diag: np.ndarray, sup: np.ndarray, rhs: np.ndarray):
    out = _dgtsv(sub, diag, sup, rhs)
    return out[3], int(out[-1])


@dataclass(frozen=True)
class Domain:
    """Interval (0, L) discretized by M interior points, h = L/(M+1).

    Grid points are x_j = j*h for j = 1..M.  The discrete L2 inner
    product is <f, g>_h = h * sum_j f_j g_j.
    """

    L: float
    M: int

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"domain length must be positive, got {self.L}")
        if self.M < 3:
            raise ValueError(f"need at least 3 interior points, got {self.M}")

    @property
    def h(self) -> float:
        return self.L / (self.M + 1)

    @cached_property
    def x(self) -> np.ndarray:
        return self.h * np.arange(1, self.M + 1)

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues alpha_i of minus the discrete Laplacian, i = 1..M.

        alpha_i = (4/h^2) sin^2(i pi h / (2L)), increasing in i, tending
        to the continuum values (i pi / L)^2 as M grows.
        """
        i = np.arange(1, self.M + 1)
        return (4.0 / self.h**2) * np.sin(i * np.pi * self.h / (2 * self.L)) ** 2

    @cached_property
    def basis(self) -> np.ndarray:
        """Orthonormal sine vectors, basis[i-1, j-1] = e_i(x_j).

        e_i(x) = sqrt(2/L) sin(i pi x / L).  With the h-weighted inner
        product these are exactly orthonormal at every M.
        """
        i = np.arange(1, self.M + 1)
        return np.sqrt(2.0 / self.L) * np.sin(
            np.outer(i, self.x) * (np.pi / self.L)
        )


@dataclass
class Field:
    """Grid function on the interior points of a Domain."""

    dom: Domain
    vals: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        self.vals = np.asarray(self.vals, dtype=np.float64)
        if self.vals.shape != (self.dom.M,):
            raise ValueError(
                f"expected {self.dom.M} interior values, got shape {self.vals.shape}"
            )
        if not np.all(np.isfinite(self.vals)):
            raise ValueError("field contains non-finite entries")


def sample_mode(dom: Domain, i: int, amplitude: float = 1.0) -> np.ndarray:
    """Return amplitude * e_i sampled on the grid."""
    if not 1 <= i <= dom.M:
        raise ValueError(f"mode index {i} outside 1..{dom.M}")
    return amplitude * dom.basis[i - 1]


def l2_inner(dom: Domain, f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Discrete L2 inner product h * sum_j f_j g_j over the last axis."""
    return dom.h * np.sum(np.asarray(f) * np.asarray(g), axis=-1)


def dst_forward(dom: Domain, vals: np.ndarray, method: str = "direct") -> np.ndarray:
    """Coefficients c_i = h * sum_j vals_j e_i(x_j) against the sine basis.

    Parameters
    ----------
    vals : array (..., M)
    method : "direct" for the O(M^2) summation, "fft" for the fast path.
        Both agree to 1e-12; direct is the default at desk scale.
    """
    vals = np.asarray(vals, dtype=np.float64)
    if method == "direct":
        return dom.h * (vals @ dom.basis.T)
    if method == "fft":
        # DST-I computes 2 sum_j f_j sin(i j pi/(M+1)); rescale to match.
        scale = 0.5 * dom.h * np.sqrt(2.0 / dom.L)
        return scale * scipy.fft.dst(vals, type=1, axis=-1)
    raise ValueError(f"unknown dst method {method!r}")


def dst_inverse(dom: Domain, coeffs: np.ndarray, method: str = "direct") -> np.ndarray:
    """Reconstruct vals_j = sum_i c_i e_i(x_j); inverse of dst_forward."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if method == "direct":
        return coeffs @ dom.basis
    if method == "fft":
        scale = 0.5 * np.sqrt(2.0 / dom.L)
        return scale * scipy.fft.dst(coeffs, type=1, axis=-1)
    raise ValueError(f"unknown dst method {method!r}")


def discrete_eigenvalue(dom: Domain, i: int) -> float:
    """alpha_i for one mode index, 1 <= i <= M."""
    if not 1 <= i <= dom.M:
        raise ValueError(f"mode index {i} outside 1..{dom.M}")
    return float(dom.eigenvalues[i - 1])


def sobolev_norm(
    dom: Domain,
    vals: np.ndarray,
    delta: float,
    weights: str = "discrete",
) -> np.ndarray:
    """Spectral Sobolev norm sqrt(sum_i w_i^delta c_i^2) over the last axis.

    weights = "discrete" uses the discrete eigenvalues alpha_i so that
    Poincare and semigroup identities are exact at finite M; "continuum"
    uses (i pi / L)^2 for convergence studies.
    """
    coeffs = dst_forward(dom, vals)
    if weights == "discrete":
        w = dom.eigenvalues
    elif weights == "continuum":
        w = (np.arange(1, dom.M + 1) * np.pi / dom.L) ** 2
    else:
        raise ValueError(f"unknown weights {weights!r}")
    return np.sqrt(np.sum(w**delta * coeffs**2, axis=-1))


def laplacian_apply(dom: Domain, vals: np.ndarray) -> np.ndarray:
    """Three-point Laplacian with implicit zero boundaries.

    (Lap f)_j = (f_{j-1} - 2 f_j + f_{j+1}) / h^2, f_0 = f_{M+1} = 0.
    Diagonalized by the sine transform with eigenvalues -alpha_i.
    """
    vals = np.asarray(vals, dtype=np.float64)
    out = -2.0 * vals
    out[..., :-1] += vals[..., 1:]
    out[..., 1:] += vals[..., :-1]
    return out / dom.h**2


def solve_tridiagonal(
    diag: np.ndarray,
    sub: np.ndarray,
    sup: np.ndarray,
    rhs: np.ndarray,
) -> np.ndarray:
    """Solve tridiagonal systems; batched Thomas sweep or LAPACK.

    Parameters
    ----------
    diag : array (..., M)   main diagonal
    sub  : array (..., M-1) subdiagonal (row j+1, column j)
    sup  : array (..., M-1) superdiagonal (row j, column j+1)
    rhs  : array (..., M)

    Arguments broadcast over leading axes, so a batch of independent
    systems (one per replica) is eliminated in one vectorized Thomas
    sweep; pivots below 1e-14 in magnitude raise TridiagonalSolveError
    once the sweep has collected them.  When every argument is
    one-dimensional the system goes to LAPACK's tridiagonal solver
    instead, whose partial pivoting has no per-row pivot floor; there
    a singular factorization, a non-finite solution, or a residual
    above 1e-10 * (1 + |rhs|_inf) raises the same error.  The two
    paths agree to roundoff, not bitwise, and the path is a function
    of the argument shapes alone, so reruns are reproducible.
    Intended for the strictly diagonally dominant or SPD systems
    produced by the implicit steppers.
    """
    diag = np.asarray(diag, dtype=np.float64)
    sub = np.asarray(sub, dtype=np.float64)
    sup = np.asarray(sup, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if diag.ndim == 1 and sub.ndim == 1 and sup.ndim == 1 and rhs.ndim == 1:
        x, info = _lapack_tridiagonal(sub, diag, sup, rhs)
        if info != 0:
            raise TridiagonalSolveError(f"singular factorization (info={info})")
        resid = diag * x
        resid[:-1] += sup * x[1:]
        resid[1:] += sub * x[:-1]
        bound = 1e-10 * (1.0 + float(np.max(np.abs(rhs))))
        if not np.all(np.isfinite(x)) or float(np.max(np.abs(resid - rhs))) > bound:
            raise TridiagonalSolveError("system is singular or ill-conditioned")
        return x
    m = rhs.shape[-1]
    batch = np.broadcast_shapes(diag.shape[:-1], sub.shape[:-1], sup.shape[:-1], rhs.shape[:-1])
    diag = np.broadcast_to(diag, batch + (m,))
    sub = np.broadcast_to(sub, batch + (m - 1,))
    sup = np.broadcast_to(sup, batch + (m - 1,))
    rhs = np.broadcast_to(rhs, batch + (m,))

    cp = np.empty(batch + (m - 1,))
    dp = np.empty(batch + (m,))
    pivots = np.empty(batch + (m,))
    with np.errstate(divide="ignore", invalid="ignore"):
        den = diag[..., 0]
        pivots[..., 0] = den
        if m > 1:
            cp[..., 0] = sup[..., 0] / den
        dp[..., 0] = rhs[..., 0] / den
        for j in range(1, m):
            den = diag[..., j] - sub[..., j - 1] * cp[..., j - 1]
            pivots[..., j] = den
            if j < m - 1:
                cp[..., j] = sup[..., j] / den
            dp[..., j] = (rhs[..., j] - sub[..., j - 1] * dp[..., j - 1]) / den

        x = np.empty(batch + (m,))
        x[..., m - 1] = dp[..., m - 1]
        for j in range(m - 2, -1, -1):
            x[..., j] = dp[..., j] - cp[..., j] * x[..., j + 1]
    # >= comparison so nan pivots (downstream of an exact zero) also fail
    row_ok = np.min(np.abs(pivots), axis=tuple(range(pivots.ndim - 1))) >= PIVOT_FLOOR
    if not row_ok.all():
        row = int(np.argmax(~row_ok))
        raise TridiagonalSolveError(f"pivot below 1e-14 at row {row}")
    return x
