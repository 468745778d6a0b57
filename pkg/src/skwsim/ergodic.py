"""Stationary sampling, occupation averaging, moments, contraction rates.

Replicas are embarrassingly parallel: each owns a derived noise stream,
states are stepped as one (R, M) batch, and an optional thread pool
splits the batch into contiguous replica chunks.  Chunking never changes
results because streams are derived per replica, not per chunk.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import model as md
from .grid import l2_inner, sobolev_norm
from .integrators import ParabolicState, StepConfig, WaveState, parabolic_step_rho, parabolic_step_u, wave_step
from .noise import _label64, derive_stream, next_increments
from .transport import EmpiricalMeasure

_BLOCK_STEPS = 512


@dataclass(frozen=True)
class StationaryRunConfig:
    """Burn-in, spacing, and replica layout for stationary sampling."""

    burn_in: float
    spacing: float
    replicas: int
    samples_per_replica: int
    estimator: str = "ensemble"

    def __post_init__(self):
        if self.burn_in < 0 or self.spacing <= 0:
            raise ValueError("burn-in must be nonnegative and spacing positive")
        if self.replicas < 1 or self.samples_per_replica < 1:
            raise ValueError("need at least one replica and one sample")
        if self.estimator not in ("ensemble", "cesaro"):
            raise ValueError(f"unknown estimator {self.estimator!r}")


@dataclass(frozen=True)
class MomentQuantity:
    mean: float
    se: float


@dataclass(frozen=True)
class MomentReport:
    """Plug-in invariant-moment estimates with replica-block standard errors."""

    u_h1_sq: MomentQuantity
    u_h_sq: MomentQuantity
    u_hm1_sq: MomentQuantity
    mu_v_h_sq: MomentQuantity | None
    mu: float | None
    n_samples: int
    replicas: int
    autocorr_spacing: float | None = None


@dataclass(frozen=True)
class ContractionReport:
    t_grid: np.ndarray
    mean_gap_sq: np.ndarray
    lambda_hat: float
    intercept: float
    r_squared: float
    gap0: float
    gap0_expected: float


def _step_batch(kind, model, cfg, mu, u, v, dw):
    if kind == "wave":
        st = wave_step(WaveState(u=u, v=v, t=0.0, mu=mu), model, cfg, dw)
        return st.u, st.v
    if kind == "rho":
        return parabolic_step_rho(ParabolicState(w=u, t=0.0), model, cfg, dw).w, None
    if kind == "u":
        return parabolic_step_u(ParabolicState(w=u, t=0.0), model, cfg, dw).w, None
    raise ValueError(f"unknown stepper kind {kind!r}")


def _evolve_chunk(
    kind, model, cfg, mu, u0, v0, streams, n_steps, sample_steps
):
    """Step one replica chunk, collecting states at the requested steps.

    u0 : (R, M); v0 : (R, M) or None; streams : list of R NoiseStream.
    Returns (samples_u, samples_v) with shape (len(sample_steps), R, M).
    """
    u = np.array(u0, dtype=np.float64)
    v = np.array(v0, dtype=np.float64) if v0 is not None else None
    wanted = {int(s): k for k, s in enumerate(sample_steps)}
    out_u = np.empty((len(sample_steps),) + u.shape)
    out_v = np.empty_like(out_u) if kind == "wave" else None
    done = 0
    while done < n_steps:
        block = min(_BLOCK_STEPS, n_steps - done)
        dw = np.stack(
            [next_increments(s, cfg.dt, block) for s in streams], axis=1
        )  # (block, R, n_modes)
        for b in range(block):
            u, v = _step_batch(kind, model, cfg, mu, u, v, dw[b])
            step = done + b + 1
            if step in wanted:
                out_u[wanted[step]] = u
                if out_v is not None:
                    out_v[wanted[step]] = v
        done += block
    return out_u, out_v


def _evolve(
    kind, model, cfg, mu, u0, v0, seed, label, n_steps, sample_steps, threads=1
):
    replicas = u0.shape[0]
    streams = [
        derive_stream(seed, label, r, model.diffusion.n_modes) for r in range(replicas)
    ]
    if threads <= 1 or replicas == 1:
        return _evolve_chunk(kind, model, cfg, mu, u0, v0, streams, n_steps, sample_steps)
    bounds = np.linspace(0, replicas, min(threads, replicas) + 1).astype(int)
    chunks = [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        futures = [
            pool.submit(
                _evolve_chunk,
                kind,
                model,
                cfg,
                mu,
                u0[lo:hi],
                None if v0 is None else v0[lo:hi],
                streams[lo:hi],
                n_steps,
                sample_steps,
            )
            for lo, hi in chunks
        ]
        parts = [f.result() for f in futures]
    out_u = np.concatenate([p[0] for p in parts], axis=1)
    out_v = (
        np.concatenate([p[1] for p in parts], axis=1) if parts[0][1] is not None else None
    )
    return out_u, out_v


def _sample_steps(cfg: StepConfig, run: StationaryRunConfig) -> tuple[np.ndarray, int]:
    burn = round(run.burn_in / cfg.dt)
    spacing = max(1, round(run.spacing / cfg.dt))
    steps = burn + spacing * np.arange(1, run.samples_per_replica + 1)
    return steps, int(steps[-1])


def _flatten_samples(dom, out_u):
    """(K, R, M) sample stack to (R*K, M) rows plus replica ids."""
    k, r, m = out_u.shape
    samples = out_u.transpose(1, 0, 2).reshape(r * k, m)
    replica_ids = np.repeat(np.arange(r), k)
    return samples, replica_ids


def _lag_autocorr(series: np.ndarray) -> float:
    """Mean lag-1 autocorrelation of per-replica scalar sample series."""
    k = series.shape[1]
    if k < 2:
        return math.nan
    x = series - series.mean(axis=1, keepdims=True)
    num = np.sum(x[:, :-1] * x[:, 1:])
    den = np.sum(x * x)
    return float(num / den) if den > 0 else 0.0


def moment_estimate(
    measure: EmpiricalMeasure, mu: float | None = None, v_measure: EmpiricalMeasure | None = None
) -> MomentReport:
    """Plug-in means of the squared norms with replica-block standard errors."""
    dom = measure.dom
    u = measure.samples
    quantities = {
        "u_h1_sq": sobolev_norm(dom, u, 1.0) ** 2,
        "u_h_sq": l2_inner(dom, u, u),
        "u_hm1_sq": sobolev_norm(dom, u, -1.0) ** 2,
    }
    if v_measure is not None:
        if mu is None:
            raise ValueError("mu is required alongside a velocity measure")
        vv = v_measure.samples
        quantities["mu_v_h_sq"] = mu * l2_inner(dom, vv, vv)
    ids = (
        measure.replica_ids
        if measure.replica_ids is not None
        else np.arange(measure.n)
    )
    blocks = np.unique(ids)
    out = {}
    for name, vals in quantities.items():
        block_means = np.array([vals[ids == b].mean() for b in blocks])
        se = (
            float(block_means.std(ddof=1) / np.sqrt(len(blocks)))
            if len(blocks) > 1
            else math.nan
        )
        out[name] = MomentQuantity(mean=float(vals.mean()), se=se)
    return MomentReport(
        u_h1_sq=out["u_h1_sq"],
        u_h_sq=out["u_h_sq"],
        u_hm1_sq=out["u_hm1_sq"],
        mu_v_h_sq=out.get("mu_v_h_sq"),
        mu=mu,
        n_samples=measure.n,
        replicas=len(blocks),
    )


def sample_stationary_wave(
    model: md.ModelSpec,
    mu: float,
    cfg: StepConfig,
    run: StationaryRunConfig,
    seed: int,
    label: str = "stationary-wave",
    u0: np.ndarray | None = None,
    v0: np.ndarray | None = None,
    threads: int = 1,
):
    """Ensemble draws from the long-run law of the wave system.

    Runs R independent replicas, discards the burn-in window, then keeps
    samples_per_replica states at the configured spacing.  Returns the
    position marginal, the velocity marginal, and their moment report.
    """
    m, r = model.dom.M, run.replicas
    u_init = np.zeros((r, m)) if u0 is None else np.broadcast_to(u0, (r, m)).copy()
    v_init = np.zeros((r, m)) if v0 is None else np.broadcast_to(v0, (r, m)).copy()
    steps, n_steps = _sample_steps(cfg, run)
    out_u, out_v = _evolve(
        "wave", model, cfg, mu, u_init, v_init, seed, label, n_steps, steps, threads
    )
    samples_u, ids = _flatten_samples(model.dom, out_u)
    samples_v, _ = _flatten_samples(model.dom, out_v)
    meta = {
        "model": model.digest(),
        "mu": mu,
        "burn_in": run.burn_in,
        "spacing": run.spacing,
        "seed": seed,
        "label": label,
    }
    meas_u = EmpiricalMeasure(model.dom, samples_u, ids, dict(meta, marginal="u"))
    meas_v = EmpiricalMeasure(model.dom, samples_v, ids, dict(meta, marginal="v"))
    report = moment_estimate(meas_u, mu=mu, v_measure=meas_v)
    series = l2_inner(model.dom, out_u, out_u).T  # (R, K)
    report = _with_autocorr(report, _lag_autocorr(series))
    return meas_u, meas_v, report


def sample_stationary_parabolic(
    model: md.ModelSpec,
    form: str,
    cfg: StepConfig,
    run: StationaryRunConfig,
    seed: int,
    label: str = "stationary-limit",
    w0: np.ndarray | None = None,
    threads: int = 1,
):
    """Ensemble draws from the long-run law of the limit equation.

    form = "rho" samples the divergence-form variable; form = "u"
    samples the friction-form variable (the g-preimage law).
    """
    if form not in ("rho", "u"):
        raise ValueError(f"form must be 'rho' or 'u', got {form!r}")
    m, r = model.dom.M, run.replicas
    w_init = np.zeros((r, m)) if w0 is None else np.broadcast_to(w0, (r, m)).copy()
    steps, n_steps = _sample_steps(cfg, run)
    out_w, _ = _evolve(
        form, model, cfg, None, w_init, None, seed, label, n_steps, steps, threads
    )
    samples, ids = _flatten_samples(model.dom, out_w)
    meta = {
        "model": model.digest(),
        "mu": 0.0,
        "form": form,
        "burn_in": run.burn_in,
        "spacing": run.spacing,
        "seed": seed,
        "label": label,
        "correction": cfg.correction,
    }
    meas = EmpiricalMeasure(model.dom, samples, ids, meta)
    report = moment_estimate(meas)
    series = l2_inner(model.dom, out_w, out_w).T
    report = _with_autocorr(report, _lag_autocorr(series))
    return meas, report


def _with_autocorr(report: MomentReport, rho: float) -> MomentReport:
    return MomentReport(
        u_h1_sq=report.u_h1_sq,
        u_h_sq=report.u_h_sq,
        u_hm1_sq=report.u_hm1_sq,
        mu_v_h_sq=report.mu_v_h_sq,
        mu=report.mu,
        n_samples=report.n_samples,
        replicas=report.replicas,
        autocorr_spacing=rho,
    )


def cesaro_measure(
    model: md.ModelSpec,
    form: str,
    cfg: StepConfig,
    T: float,
    m_samples: int,
    seed: int,
    label: str = "cesaro",
    mu: float | None = None,
) -> EmpiricalMeasure:
    """Occupation-measure estimator along one trajectory from zero.

    Samples the trajectory at m states drawn uniformly at random from
    [0, T]; their empirical law is the plug-in time-average estimator
    whose weak limits are invariant.
    """
    if T <= 0 or m_samples < 1:
        raise ValueError("need positive horizon and at least one sample")
    n_steps = round(T / cfg.dt)
    rng = np.random.default_rng([seed & 0xFFFFFFFF, _label64(label + "/times") & 0xFFFFFFFF])
    pick = np.sort(rng.integers(1, n_steps + 1, size=m_samples))
    unique_steps = np.unique(pick)
    kind = form if form in ("rho", "u") else "wave"
    dom_m = model.dom.M
    u0 = np.zeros((1, dom_m))
    v0 = np.zeros((1, dom_m)) if kind == "wave" else None
    out_u, _ = _evolve(kind, model, cfg, mu, u0, v0, seed, label, int(unique_steps[-1]), unique_steps)
    by_step = {int(s): out_u[k, 0] for k, s in enumerate(unique_steps)}
    samples = np.stack([by_step[int(s)] for s in pick])
    meta = {"model": model.digest(), "estimator": "cesaro", "T": T, "seed": seed, "label": label}
    return EmpiricalMeasure(model.dom, samples, None, meta)


def contraction_estimate(
    model: md.ModelSpec,
    form: str,
    r1: np.ndarray,
    r2: np.ndarray,
    cfg: StepConfig,
    replicas: int,
    T: float,
    seed: int,
    label: str = "contraction",
    n_grid: int = 100,
) -> ContractionReport:
    """Fit the exponential rate of the mean squared H^-1 coupling gap.

    Pairs of solutions from r1 and r2 share one noise realization per
    replica (synchronous coupling).  The rate is the least-squares slope
    of log mean gap over the window where the gap still exceeds ten
    times the accumulation floor of double precision; the t = 0 point
    doubles as a normalization check.
    """
    r1 = np.asarray(r1, dtype=np.float64)
    r2 = np.asarray(r2, dtype=np.float64)
    if np.array_equal(r1, r2):
        raise ValueError("contraction estimate needs distinct initial states")
    dom = model.dom
    n_steps = round(T / cfg.dt)
    record = np.unique(np.linspace(0, n_steps, n_grid + 1).round().astype(int))
    record = record[record > 0]

    gap0_expected = float(sobolev_norm(dom, r1 - r2, -1.0) ** 2)

    # One batch holds both coupled solutions stacked along the replica
    # axis; the same increments are fed to both halves (fork semantics).
    u = np.concatenate(
        [np.broadcast_to(r1, (replicas, dom.M)), np.broadcast_to(r2, (replicas, dom.M))]
    ).astype(np.float64)
    gap0 = float(np.mean(sobolev_norm(dom, u[:replicas] - u[replicas:], -1.0) ** 2))

    streams = [derive_stream(seed, label, r, model.diffusion.n_modes) for r in range(replicas)]
    wanted = {int(s): k for k, s in enumerate(record)}
    gaps = np.empty((len(record), replicas))
    done = 0
    while done < n_steps:
        block = min(_BLOCK_STEPS, n_steps - done)
        dw = np.stack([next_increments(s, cfg.dt, block) for s in streams], axis=1)
        dw = np.concatenate([dw, dw], axis=1)
        for b in range(block):
            u, _ = _step_batch(form, model, cfg, None, u, None, dw[b])
            step = done + b + 1
            if step in wanted:
                diff = u[:replicas] - u[replicas:]
                gaps[wanted[step]] = sobolev_norm(dom, diff, -1.0) ** 2
        done += block

    t_grid = np.concatenate([[0.0], record * cfg.dt])
    mean_gap = np.concatenate([[gap0], gaps.mean(axis=1)])
    floor = 10.0 * (np.finfo(float).eps ** 2) * max(gap0, 1.0)
    window = mean_gap > floor
    if window.sum() < 3:
        raise RuntimeError("contraction fit window is degenerate")
    tw, gw = t_grid[window], np.log(mean_gap[window])
    slope, intercept = np.polyfit(tw, gw, 1)
    resid = gw - (slope * tw + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((gw - gw.mean()) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ContractionReport(
        t_grid=t_grid,
        mean_gap_sq=mean_gap,
        lambda_hat=float(-slope),
        intercept=float(intercept),
        r_squared=r_squared,
        gap0=gap0,
        gap0_expected=gap0_expected,
    )


def pilot_rate(model: md.ModelSpec, cfg: StepConfig, seed: int) -> float:
    """Cheap contraction fit used to calibrate burn-in and spacing."""
    from .grid import sample_mode

    e1 = sample_mode(model.dom, 1)
    rep = contraction_estimate(
        model, "rho", e1, np.zeros(model.dom.M), cfg, replicas=2, T=3.0,
        seed=seed, label="pilot", n_grid=30,
    )
    return max(rep.lambda_hat, 1e-3)


def derived_run_config(
    pilot_lambda: float, replicas: int, samples_per_replica: int,
    burn_in: float | None = None, spacing: float | None = None,
) -> StationaryRunConfig:
    """Fill burn-in and spacing from a pilot rate unless given explicitly.

    Defaults: burn-in 20 rate constants, spacing 5.
    """
    return StationaryRunConfig(
        burn_in=20.0 / pilot_lambda if burn_in is None else burn_in,
        spacing=5.0 / pilot_lambda if spacing is None else spacing,
        replicas=replicas,
        samples_per_replica=samples_per_replica,
    )
