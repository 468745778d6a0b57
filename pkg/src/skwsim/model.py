"""Coefficient families and derived objects for the friction system.

A model is the triple (gamma, f, sigma) plus the noise spectrum:

  gamma : state-dependent friction, 0 < gamma0 <= gamma(r) <= gamma1, C1 bounded
  f     : reaction term f(x, r), globally Lipschitz in r
  sigma : multiplicative noise sigma_i(x, y) = q_i e_i(x) s(y) with
          amplitude s bounded and Lipschitz and weights q_i >= 0

Derived objects implemented here: the antiderivative g of gamma and its
inverse, the divergence-form coefficient b = 1/(gamma o g^-1) and its
antiderivative B (identically g^-1), the transformed reaction f_g, the
noise-induced correction drift gamma'(u)/(2 gamma(u)^2) * sum_i
sigma_i(x, u)^2, the energy functionals used as trajectory diagnostics,
and the standing-assumption checker with margins.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .grid import Domain, l2_inner, sobolev_norm

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 100


class InversionError(RuntimeError):
    """Raised when the g-inverse iteration fails to converge."""


# ---------------------------------------------------------------------------
# friction families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrictionSpec:
    """State-dependent friction coefficient.

    The built-in family is gamma(r) = a + b / (1 + r^2) with a > 0 and
    b >= 0, for which g(r) = a r + b arctan(r) is closed form while the
    inverse still requires iteration.  Additional families can be
    registered; a family must supply gamma, gamma', g, and the constants
    gamma0 = inf gamma, gamma1 = sup gamma, lip = sup |gamma'|.
    """

    family: str
    params: tuple

    @staticmethod
    def lorentzian(a: float, b: float) -> "FrictionSpec":
        if not a > 0:
            raise ValueError(f"friction floor must be positive, got a={a}")
        if b < 0:
            raise ValueError(f"friction bump must be nonnegative, got b={b}")
        return FrictionSpec("lorentzian", (float(a), float(b)))

    @staticmethod
    def from_config(cfg: dict) -> "FrictionSpec":
        family = cfg["family"]
        if family not in _FRICTION_FAMILIES:
            raise ValueError(f"unknown friction family {family!r}")
        return _FRICTION_FAMILIES[family](cfg)

    @cached_property
    def _impl(self) -> "_FrictionImpl":
        if self.family == "lorentzian":
            a, b = self.params
            return _FrictionImpl(
                gamma=lambda r: a + b / (1.0 + np.square(r)),
                gamma_prime=lambda r: -2.0 * b * r / np.square(1.0 + np.square(r)),
                g=lambda r: a * r + b * np.arctan(r),
                gamma0=a,
                gamma1=a + b,
                lip=9.0 * b / (8.0 * math.sqrt(3.0)),
            )
        raise ValueError(f"unknown friction family {self.family!r}")

    @property
    def gamma0(self) -> float:
        return self._impl.gamma0

    @property
    def gamma1(self) -> float:
        return self._impl.gamma1

    @property
    def lip_gamma_prime(self) -> float:
        return self._impl.lip


@dataclass(frozen=True)
class _FrictionImpl:
    gamma: Callable
    gamma_prime: Callable
    g: Callable
    gamma0: float
    gamma1: float
    lip: float


def _lorentzian_from_config(cfg: dict) -> FrictionSpec:
    return FrictionSpec.lorentzian(cfg["a"], cfg.get("b", 0.0))


_FRICTION_FAMILIES: dict[str, Callable[[dict], FrictionSpec]] = {
    "lorentzian": _lorentzian_from_config,
}


# ---------------------------------------------------------------------------
# reaction families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReactionSpec:
    """Reaction term f(x, r), globally Lipschitz in r.

    Built-in family: f(x, r) = kappa * arctan(r) + beta * sin(pi x / L),
    so the Lipschitz constant is |kappa| and sup_x |f(x, 0)| = |beta|.
    The r-antiderivative is closed form:
    kappa (r arctan r - log(1 + r^2)/2) + beta sin(pi x / L) r.
    """

    family: str
    params: tuple

    @staticmethod
    def arctan_sine(kappa: float, beta: float) -> "ReactionSpec":
        return ReactionSpec("arctan_sine", (float(kappa), float(beta)))

    @staticmethod
    def from_config(cfg: dict) -> "ReactionSpec":
        family = cfg["family"]
        if family != "arctan_sine":
            raise ValueError(f"unknown reaction family {family!r}")
        return ReactionSpec.arctan_sine(cfg.get("kappa", 0.0), cfg.get("beta", 0.0))

    @property
    def lip_f(self) -> float:
        kappa, _ = self.params
        return abs(kappa)

    @property
    def sup_f0(self) -> float:
        _, beta = self.params
        return abs(beta)

    def f(self, x: np.ndarray, r: np.ndarray, L: float) -> np.ndarray:
        kappa, beta = self.params
        return kappa * np.arctan(r) + beta * np.sin(np.pi * np.asarray(x) / L)

    def antiderivative(self, x: np.ndarray, r: np.ndarray, L: float) -> np.ndarray:
        """Closed-form integral of f(x, s) ds from 0 to r."""
        kappa, beta = self.params
        r = np.asarray(r)
        return kappa * (r * np.arctan(r) - 0.5 * np.log1p(np.square(r))) + (
            beta * np.sin(np.pi * np.asarray(x) / L) * r
        )

    def antiderivative_numeric(
        self, x: np.ndarray, r: np.ndarray, L: float, tol: float = 1e-10
    ) -> np.ndarray:
        """Adaptive-Simpson fallback for families without a closed form."""
        x = np.asarray(x, dtype=np.float64)
        r = np.asarray(r, dtype=np.float64)
        x_b, r_b = np.broadcast_arrays(x, r)
        out = np.empty(r_b.shape)
        flat_x, flat_r, flat_out = x_b.ravel(), r_b.ravel(), out.ravel()
        for k in range(flat_r.size):
            flat_out[k] = _adaptive_simpson(
                lambda s: float(self.f(flat_x[k], s, L)), 0.0, float(flat_r[k]), tol
            )
        return out


def _adaptive_simpson(fn, a, b, tol):
    if a == b:
        return 0.0
    c = 0.5 * (a + b)
    fa, fb, fc = fn(a), fn(b), fn(c)
    whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb)
    return _simpson_recurse(fn, a, b, fa, fb, fc, whole, tol, 50)


def _simpson_recurse(fn, a, b, fa, fb, fc, whole, tol, depth):
    c = 0.5 * (a + b)
    d, e = 0.5 * (a + c), 0.5 * (c + b)
    fd, fe = fn(d), fn(e)
    left = (c - a) / 6.0 * (fa + 4.0 * fd + fc)
    right = (b - c) / 6.0 * (fc + 4.0 * fe + fb)
    if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
        return left + right + (left + right - whole) / 15.0
    return _simpson_recurse(fn, a, c, fa, fc, fd, left, tol / 2, depth - 1) + (
        _simpson_recurse(fn, c, b, fc, fb, fe, right, tol / 2, depth - 1)
    )


# ---------------------------------------------------------------------------
# diffusion (noise) family
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionSpec:
    """Multiplicative noise sigma_i(x, y) = q_i e_i(x) s(y).

    Built-in amplitude family: s(y) = s0 + s1 * y / sqrt(1 + y^2), which
    is bounded with |s| <= max(|s0 - s1|, |s0 + s1|) and Lipschitz with
    constant |s1|.  Weights q_i = i^(-p) truncated at n_modes; an
    explicit weight list is also accepted.
    """

    s0: float
    s1: float
    n_modes: int
    q_power: float | None = None
    q_weights: tuple | None = None

    @staticmethod
    def from_config(cfg: dict) -> "DiffusionSpec":
        family = cfg.get("family", "saturating")
        if family != "saturating":
            raise ValueError(f"unknown diffusion family {family!r}")
        if "q_weights" in cfg:
            w = tuple(float(q) for q in cfg["q_weights"])
            return DiffusionSpec(cfg["s0"], cfg["s1"], len(w), q_weights=w)
        return DiffusionSpec(
            cfg["s0"], cfg["s1"], int(cfg["n_modes"]), q_power=float(cfg["q_power"])
        )

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("need at least one noise mode")
        if (self.q_power is None) == (self.q_weights is None):
            raise ValueError("specify exactly one of q_power, q_weights")
        if self.q_weights is not None and len(self.q_weights) != self.n_modes:
            raise ValueError(
                f"got {len(self.q_weights)} weights for {self.n_modes} modes"
            )

    def s(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y)
        return self.s0 + self.s1 * y / np.sqrt(1.0 + np.square(y))

    @property
    def lip_s(self) -> float:
        return abs(self.s1)

    @property
    def sup_s(self) -> float:
        return max(abs(self.s0 - self.s1), abs(self.s0 + self.s1))

    @cached_property
    def q(self) -> np.ndarray:
        if self.q_weights is not None:
            return np.asarray(self.q_weights, dtype=np.float64)
        return np.arange(1, self.n_modes + 1, dtype=np.float64) ** (-self.q_power)

    @property
    def q_tail_bound(self) -> float:
        """Upper bound on sum_{i > n_modes} q_i^2 for the power family.

        Explicit weight lists are truncations by definition, tail 0.
        """
        if self.q_weights is not None:
            return 0.0
        if self.q_power <= 0.5:
            return math.inf
        p2 = 2.0 * self.q_power
        return self.n_modes ** (1.0 - p2) / (p2 - 1.0)


# ---------------------------------------------------------------------------
# assembled model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """Immutable coefficient bundle on a fixed Domain.

    Mode-dependent quantities (the noise basis slice and the pointwise
    sum over modes of q_i^2 e_i(x)^2) are precomputed once and shared;
    every evaluation below is a pure function, safe across threads.
    """

    dom: Domain
    friction: FrictionSpec
    reaction: ReactionSpec
    diffusion: DiffusionSpec

    def __post_init__(self):
        if self.diffusion.n_modes > self.dom.M:
            raise ValueError(
                f"noise truncation {self.diffusion.n_modes} exceeds grid modes {self.dom.M}"
            )

    @cached_property
    def noise_basis(self) -> np.ndarray:
        """e_i(x_j) for i = 1..n_modes, shape (n_modes, M)."""
        return self.dom.basis[: self.diffusion.n_modes]

    @cached_property
    def mode_sum(self) -> np.ndarray:
        """sum_i q_i^2 e_i(x_j)^2 on the grid, shape (M,)."""
        q = self.diffusion.q
        return np.einsum("i,ij->j", q**2, self.noise_basis**2)

    @property
    def lip_sigma(self) -> float:
        """L such that sup_x sum_i |sigma_i(x,y1) - sigma_i(x,y2)|^2 <= L |y1-y2|^2."""
        return self.diffusion.lip_s**2 * float(np.max(self.mode_sum))

    @property
    def sigma_sup(self) -> float:
        """Bound on the Hilbert-Schmidt norm of the noise operator."""
        return self.diffusion.sup_s * float(np.sqrt(np.sum(self.diffusion.q**2)))

    def digest(self) -> str:
        """Stable hash of the coefficient tuple for provenance records."""
        payload = {
            "domain": [self.dom.L, self.dom.M],
            "friction": [self.friction.family, list(self.friction.params)],
            "reaction": [self.reaction.family, list(self.reaction.params)],
            "diffusion": [
                self.diffusion.s0,
                self.diffusion.s1,
                self.diffusion.n_modes,
                self.diffusion.q_power,
                list(self.diffusion.q_weights) if self.diffusion.q_weights else None,
            ],
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def gamma_eval(model: ModelSpec, r: np.ndarray) -> np.ndarray:
    return model.friction._impl.gamma(np.asarray(r, dtype=np.float64))


def gamma_prime_eval(model: ModelSpec, r: np.ndarray) -> np.ndarray:
    return model.friction._impl.gamma_prime(np.asarray(r, dtype=np.float64))


def g_eval(model: ModelSpec, r: np.ndarray) -> np.ndarray:
    """Antiderivative of gamma vanishing at zero; strictly increasing."""
    return model.friction._impl.g(np.asarray(r, dtype=np.float64))


def g_inverse(model: ModelSpec, y: np.ndarray) -> np.ndarray:
    """Invert g by safeguarded Newton iteration, elementwise.

    Since gamma0 |r| <= |g(r)| <= gamma1 |r|, the root lies in the
    bracket [y/gamma1, y/gamma0] (order swapped for negative y).  Newton
    steps that leave the bracket fall back to bisection; g' = gamma >=
    gamma0 > 0 guarantees convergence.  Residual tolerance 1e-12.
    """
    impl = model.friction._impl
    y = np.asarray(y, dtype=np.float64)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    lo = np.minimum(y / impl.gamma1, y / impl.gamma0)
    hi = np.maximum(y / impl.gamma1, y / impl.gamma0)
    r = y / impl.gamma(0.0 * y)
    res = impl.g(r) - y
    for _ in range(NEWTON_MAX_ITER):
        if np.max(np.abs(res)) <= NEWTON_TOL:
            break
        lo = np.where(res < 0, r, lo)
        hi = np.where(res > 0, r, hi)
        step = r - res / impl.gamma(r)
        outside = (step < lo) | (step > hi)
        r = np.where(outside, 0.5 * (lo + hi), step)
        res = impl.g(r) - y
    else:
        raise InversionError("g-inverse did not converge in 100 iterations")
    r = r if not scalar else r[0]
    return r


def b_eval(model: ModelSpec, r: np.ndarray) -> np.ndarray:
    """Divergence-form coefficient b(r) = 1 / gamma(g^-1(r)) in [1/gamma1, 1/gamma0]."""
    return 1.0 / gamma_eval(model, g_inverse(model, r))


def B_eval(model: ModelSpec, r: np.ndarray) -> np.ndarray:
    """Antiderivative of b; equals g^-1 exactly by the chain rule."""
    return g_inverse(model, r)


def reaction_apply(model: ModelSpec, u: np.ndarray) -> np.ndarray:
    """Nemytskii action of f: (x_j, u_j) -> f(x_j, u_j), batched."""
    return model.reaction.f(model.dom.x, np.asarray(u), model.dom.L)


def reaction_g_apply(model: ModelSpec, rho: np.ndarray) -> np.ndarray:
    """Transformed reaction f_g(x, r) = f(x, g^-1(r))."""
    return reaction_apply(model, g_inverse(model, rho))


def diffusion_apply(model: ModelSpec, u: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """Noise action sum_i sigma_i(x_j, u_j) dW_i = s(u_j) sum_i q_i e_i(x_j) dW_i.

    dW has shape (..., n_modes); output matches u with shape (..., M).
    """
    dW = np.asarray(dW, dtype=np.float64)
    # fixed-order einsum, not matmul: BLAS kernels round differently for
    # different batch shapes, which would make replica chunking (and so
    # the thread count) visible in trajectories at the last bit
    colored = np.einsum("...i,ij->...j", dW * model.diffusion.q, model.noise_basis)
    return model.diffusion.s(np.asarray(u)) * colored


def correction_eval(model: ModelSpec, u: np.ndarray) -> np.ndarray:
    """Noise-induced drift gamma'(u)/(2 gamma(u)^2) * s(u)^2 * sum_i q_i^2 e_i(x)^2.

    This is the extra term created in the small-mass limit by the state
    dependence of the friction; it vanishes identically when gamma is
    constant or the noise amplitude is zero.  The limit stepper
    subtracts it from the reaction.
    """
    u = np.asarray(u)
    gam = gamma_eval(model, u)
    return (
        gamma_prime_eval(model, u)
        / (2.0 * gam**2)
        * model.diffusion.s(u) ** 2
        * model.mode_sum
    )


@dataclass(frozen=True)
class LyapunovValues:
    phi: float
    psi: float
    Lambda: float


def lyapunov_values(
    model: ModelSpec, u: np.ndarray, v: np.ndarray, mu: float, numeric_antiderivative: bool = False
) -> LyapunovValues:
    """Energy functionals of the second-order system.

    phi = (|u|_{H1}^2 + mu |v|_H^2)/2 - Lambda(u)
    psi = (mu |u|_{H1}^2 + |g(u) + mu v|_H^2)/2
    Lambda(u) = h * sum_j int_0^{u_j} f(x_j, s) ds
    """
    dom = model.dom
    if numeric_antiderivative:
        frak_f = model.reaction.antiderivative_numeric(dom.x, u, dom.L)
    else:
        frak_f = model.reaction.antiderivative(dom.x, u, dom.L)
    Lambda = float(dom.h * np.sum(frak_f, axis=-1))
    u_h1 = float(sobolev_norm(dom, u, 1.0))
    v_h = float(np.sqrt(l2_inner(dom, v, v)))
    phi = 0.5 * (u_h1**2 + mu * v_h**2) - Lambda
    gu_mu_v = g_eval(model, u) + mu * np.asarray(v)
    psi = 0.5 * (mu * u_h1**2 + float(l2_inner(dom, gu_mu_v, gu_mu_v)))
    return LyapunovValues(phi=phi, psi=psi, Lambda=Lambda)


# ---------------------------------------------------------------------------
# standing-assumption checker
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HypothesisReport:
    """Derived constants and pass/fail for the standing assumptions.

    Conditions checked, with margin = 1 - lhs/threshold:
      friction_bounds : 0 < gamma0 <= gamma1, bounded derivative
      reaction_gap    : lip_f < alpha1 * gamma0 / gamma1
      joint_gap       : lip_f + lip_sigma/(2 gamma0) < alpha1 * gamma0 / gamma1
    """

    gamma0: float
    gamma1: float
    lip_f: float
    lip_sigma: float
    sigma_sup: float
    alpha1: float
    q_tail: float
    friction_bounds_ok: bool
    reaction_gap_ok: bool
    reaction_margin: float
    joint_gap_ok: bool
    joint_margin: float

    @property
    def passed(self) -> bool:
        return self.friction_bounds_ok and self.reaction_gap_ok and self.joint_gap_ok

    def rows(self) -> list[tuple[str, str]]:
        return [
            ("gamma0", f"{self.gamma0:.6g}"),
            ("gamma1", f"{self.gamma1:.6g}"),
            ("lip_f", f"{self.lip_f:.6g}"),
            ("lip_sigma", f"{self.lip_sigma:.6g}"),
            ("sigma_sup", f"{self.sigma_sup:.6g}"),
            ("alpha1", f"{self.alpha1:.6g}"),
            ("q_tail", f"{self.q_tail:.6g}"),
            ("friction_bounds", "pass" if self.friction_bounds_ok else "FAIL"),
            ("reaction_gap", f"{'pass' if self.reaction_gap_ok else 'FAIL'} (margin {self.reaction_margin:+.1%})"),
            ("joint_gap", f"{'pass' if self.joint_gap_ok else 'FAIL'} (margin {self.joint_margin:+.1%})"),
        ]


def hypothesis_check(model: ModelSpec) -> HypothesisReport:
    """Check the standing assumptions and report margins.

    The threshold for both gap conditions is alpha1 * gamma0 / gamma1
    with alpha1 the first discrete eigenvalue; the joint condition adds
    the noise Lipschitz constant to the reaction one.
    """
    fr = model.friction
    alpha1 = float(model.dom.eigenvalues[0])
    threshold = alpha1 * fr.gamma0 / fr.gamma1
    lip_f = model.reaction.lip_f
    lip_sigma = model.lip_sigma
    reaction_lhs = lip_f
    joint_lhs = lip_f + lip_sigma / (2.0 * fr.gamma0)
    return HypothesisReport(
        gamma0=fr.gamma0,
        gamma1=fr.gamma1,
        lip_f=lip_f,
        lip_sigma=lip_sigma,
        sigma_sup=model.sigma_sup,
        alpha1=alpha1,
        q_tail=model.diffusion.q_tail_bound,
        friction_bounds_ok=fr.gamma0 > 0 and fr.gamma1 >= fr.gamma0 and math.isfinite(fr.lip_gamma_prime),
        reaction_gap_ok=reaction_lhs < threshold,
        reaction_margin=1.0 - reaction_lhs / threshold,
        joint_gap_ok=joint_lhs < threshold,
        joint_margin=1.0 - joint_lhs / threshold,
    )
