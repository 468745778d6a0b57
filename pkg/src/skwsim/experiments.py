"""Drivers behind the command-line interface.

Each driver runs one experiment, writes delimited tables and a JSON
manifest into an output directory, and returns its headline numbers.
Tables open with a single '#' comment line carrying the wall-clock
timestamp; hashes recorded in the manifest cover the table body only,
so a rerun with the same configuration, seed, and thread count must
reproduce every body hash exactly.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime
import hashlib
import json
import math
import os
import platform

import numpy as np
import scipy

from . import __version__
from . import model as md
from .config import ExperimentConfig
from .ergodic import (
    _BLOCK_STEPS,
    _step_batch,
    contraction_estimate,
    derived_run_config,
    pilot_rate,
    sample_stationary_parabolic,
    sample_stationary_wave,
)
from .grid import l2_inner, sobolev_norm
from .model import hypothesis_check
from .noise import derive_stream, next_increments
from .transport import EmpiricalMeasure, cost_matrix, noise_floor, plan_table, w1_exact


class GateError(RuntimeError):
    """Raised when a configuration violates the standing assumptions."""

    def __init__(self, report):
        self.report = report
        super().__init__("configuration fails the hypothesis checks")


def check_gate(cfg: ExperimentConfig, allow_nonconforming: bool = False):
    report = hypothesis_check(cfg.model)
    if not report.passed and not allow_nonconforming:
        raise GateError(report)
    return report


# ---------------------------------------------------------------- output


def _cell(value) -> str:
    # repr gives the shortest round-trip float; keeps bodies byte-stable
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table(path: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        stamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
        fh.write(f"# written {stamp}\r\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def read_table(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        return header, [row for row in reader if row]


def body_sha256(path: str) -> str:
    """Content hash of a delimited table, comment lines excluded."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for line in fh:
            if not line.startswith(b"#"):
                digest.update(line)
    return digest.hexdigest()


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    out_dir: str,
    command: str,
    cfg: ExperimentConfig | None,
    seed: int,
    threads: int,
    results: dict,
    tables: list[str],
    binaries: list[str] = (),
    gate=None,
    extra: dict | None = None,
) -> dict:
    outputs = {name: body_sha256(os.path.join(out_dir, name)) for name in tables}
    outputs.update(
        {name: file_sha256(os.path.join(out_dir, name)) for name in binaries}
    )
    manifest = {
        "command": command,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "package": {"name": "skwsim", "version": __version__},
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "seed": seed,
        "threads": threads,
        "outputs": outputs,
        "results": results,
    }
    if cfg is not None:
        manifest["config_sha256"] = cfg.config_hash()
        manifest["config"] = cfg.raw
    if gate is not None:
        manifest["hypothesis"] = {"passed": gate.passed, "rows": gate.rows()}
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------- validate


def run_validate(cfg: ExperimentConfig) -> tuple[list[str], bool]:
    """Check the standing assumptions; report constants and margins."""
    report = hypothesis_check(cfg.model)
    lines = [f"{name:>16}  {value}" for name, value in report.rows()]
    lines.append(f"{'overall':>16}  {'pass' if report.passed else 'FAIL'}")
    return lines, report.passed


# ------------------------------------------------------------- equivalence


def _match_moments(x: np.ndarray, target: float) -> np.ndarray:
    """Center x over its second axis and scale each column's mean square to target."""
    x = x - x.mean(axis=-2, keepdims=True)
    v = np.mean(np.square(x), axis=-2, keepdims=True)
    return x * np.sqrt(target / np.where(v > 0, v, 1.0))


def _project_out(y: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Remove the empirical projection of y onto c, column by column."""
    num = np.sum(y * c, axis=-2, keepdims=True)
    den = np.sum(c * c, axis=-2, keepdims=True)
    return y - (num / np.where(den > 0, den, 1.0)) * c


def run_equivalence(cfg: ExperimentConfig, out_dir: str, seed: int, threads: int = 1) -> dict:
    """Coupled runs of the two limit forms at dt and dt/2.

    Both levels and both forms consume one ensemble of Brownian paths:
    each fine step pair sums to the coarse increment up to roundoff, so
    the recorded gap is pure discretization error.  err_h at each grid time
    is |mean(g(u) - rho)|_H with the mean over replicas.  Averaging
    before the norm is essential: the pathwise gap carries a zero-mean
    fluctuation whose size scales like sqrt(dt), and only the ensemble
    mean isolates the first-order drift part this experiment asserts
    on.

    The ensemble itself is variance-reduced so that desk-sized replica
    counts resolve the drift: replicas come in antithetic pairs (the
    second half consumes the negated increments, cancelling every
    odd-order noise response exactly), and within each step window the
    increments are moment-matched across pairs - the coarse sums and
    the intra-window splits are centered, decorrelated, and rescaled to
    their exact second moments.  Matching zeroes the empirical
    quadratic-variation fluctuation, which would otherwise dominate the
    residual variance of the mean gap; it perturbs each path's law only
    at O(1/pairs), far below the halving tolerance.  The friction-form
    leg always carries the noise-induced drift; dropping it breaks the
    pathwise identity this experiment measures.
    """
    model, run = cfg.model, cfg.run
    dom = model.dom
    step = dataclasses.replace(cfg.step, correction=True)
    dt_fine = step.dt / 2.0
    replicas = run.replicas
    if replicas < 4 or replicas % 2:
        raise ValueError(
            f"equivalence needs an even replica count of at least 4 for "
            f"antithetic pairing, got {replicas}"
        )
    pairs = replicas // 2
    u0 = np.broadcast_to(cfg.initial_field(), (replicas, dom.M)).copy()

    n_coarse = round(run.T / step.dt)
    every = max(1, n_coarse // 100)
    streams = [
        derive_stream(seed, "equivalence", p, model.diffusion.n_modes)
        for p in range(pairs)
    ]
    lvl_c = step
    lvl_f = dataclasses.replace(step, dt=dt_fine)
    u_c = u0.copy()
    rho_c = md.g_eval(model, u0)
    u_f = u0.copy()
    rho_f = rho_c.copy()
    sup_c = sup_f = 0.0
    rows_c = [(0.0, 0.0, step.dt)]
    rows_f = [(0.0, 0.0, dt_fine)]

    def _gap(u, rho):
        diff = np.mean(md.g_eval(model, u) - rho, axis=0)
        return float(np.sqrt(l2_inner(dom, diff, diff)))

    done = 0
    while done < n_coarse:
        block = min(_BLOCK_STEPS, n_coarse - done)
        raw = np.stack(
            [next_increments(s, dt_fine, 2 * block) for s in streams], axis=1
        ).reshape(block, 2, pairs, model.diffusion.n_modes)
        half_a, half_b = raw[:, 0], raw[:, 1]
        coarse = _match_moments(half_a + half_b, step.dt)
        split = _match_moments(
            _project_out((half_a - half_b) / 2.0, coarse), dt_fine / 2.0
        )
        fine_a = coarse / 2.0 + split
        fine_b = coarse / 2.0 - split
        for b in range(block):
            dw_c = np.concatenate([coarse[b], -coarse[b]], axis=0)
            dw_a = np.concatenate([fine_a[b], -fine_a[b]], axis=0)
            dw_b = np.concatenate([fine_b[b], -fine_b[b]], axis=0)
            u_c, _ = _step_batch("u", model, lvl_c, None, u_c, None, dw_c)
            rho_c, _ = _step_batch("rho", model, lvl_c, None, rho_c, None, dw_c)
            u_f, _ = _step_batch("u", model, lvl_f, None, u_f, None, dw_a)
            rho_f, _ = _step_batch("rho", model, lvl_f, None, rho_f, None, dw_a)
            u_f, _ = _step_batch("u", model, lvl_f, None, u_f, None, dw_b)
            rho_f, _ = _step_batch("rho", model, lvl_f, None, rho_f, None, dw_b)
            k = done + b + 1
            if k % every == 0 or k == n_coarse:
                t = k * step.dt
                gap_c = _gap(u_c, rho_c)
                gap_f = _gap(u_f, rho_f)
                sup_c = max(sup_c, gap_c)
                sup_f = max(sup_f, gap_f)
                rows_c.append((t, gap_c, step.dt))
                rows_f.append((t, gap_f, dt_fine))
        done += block

    rows = rows_c + rows_f
    sup_gap = {step.dt: sup_c, dt_fine: sup_f}
    ratio = sup_gap[dt_fine] / sup_gap[step.dt]
    results = {
        "dt": step.dt,
        "sup_gap_coarse": sup_gap[step.dt],
        "sup_gap_fine": sup_gap[dt_fine],
        "ratio": ratio,
    }
    write_table(
        os.path.join(out_dir, "equivalence.csv"),
        ["t", "err_h", "dt"],
        rows,
    )
    return results


# ------------------------------------------------------------- contraction


def run_contraction(cfg: ExperimentConfig, out_dir: str, seed: int, threads: int = 1) -> dict:
    """Synchronous-coupling decay rate of the limit dynamics.

    Couples the configured initial state against zero in the
    divergence form and fits the exponential rate of the mean squared
    negative-order gap.
    """
    model, run = cfg.model, cfg.run
    r1 = cfg.initial_field()
    if not np.any(r1):
        raise ValueError("contraction needs a nonzero initial state; set run.initial")
    r2 = np.zeros(model.dom.M)
    report = contraction_estimate(
        model, "rho", r1, r2, cfg.step, run.replicas, run.T, seed, label="contraction"
    )
    write_table(
        os.path.join(out_dir, "contraction.csv"),
        ["t", "mean_gap_hm1_sq"],
        list(zip(report.t_grid.tolist(), report.mean_gap_sq.tolist())),
    )
    results = {
        "lambda_hat": report.lambda_hat,
        "intercept": report.intercept,
        "r_squared": report.r_squared,
        "gap0": report.gap0,
        "gap0_expected": report.gap0_expected,
    }
    write_table(
        os.path.join(out_dir, "contraction_fit.csv"),
        ["lambda_hat", "intercept", "r_squared", "gap0", "gap0_expected"],
        [tuple(results[k] for k in ("lambda_hat", "intercept", "r_squared", "gap0", "gap0_expected"))],
    )
    return results


# -------------------------------------------------------------- limit sweep


def run_limit_sweep(cfg: ExperimentConfig, out_dir: str, seed: int, threads: int = 1) -> dict:
    """Coupled second-order and limit runs across the mass list.

    For every mu the wave pair (u, v) and the divergence-form leg share
    one Brownian path per replica, and the same paths are reused across
    mu values, so the recorded gaps are directly comparable.  Two
    initial-data modes: 'fixed' starts every replica from the
    configured field at rest; 'stationary' draws (u, v) per replica
    from a prior long-run wave ensemble at the same mu.  Records the
    mean squared negative-order gap at the configured checkpoints and
    the time integral of the mean squared field gap.
    """
    model, run = cfg.model, cfg.run
    dom, step = model.dom, cfg.step
    replicas = run.replicas
    n_steps = round(run.T / step.dt)
    check_steps = sorted({round(t / step.dt) for t in run.checkpoints})
    if any(s < 1 or s > n_steps for s in check_steps):
        raise ValueError("checkpoints fall outside the run horizon")
    check_set = set(check_steps)
    rec = set(np.linspace(0, n_steps, 201).round().astype(int).tolist())
    modes = ("fixed", "stationary") if run.sweep_initial == "both" else (run.sweep_initial,)

    u0_fixed = np.broadcast_to(cfg.initial_field(), (replicas, dom.M)).copy()
    pilot = None
    rows, integral_rows = [], []
    by_mode = {}
    for mode in modes:
        gaps_final = {}
        for mu in cfg.mu_list:
            if mode == "stationary":
                if pilot is None:
                    pilot = pilot_rate(model, step, seed)
                warm = derived_run_config(pilot, replicas, 1, run.burn_in, run.spacing)
                meas_u, meas_v, _ = sample_stationary_wave(
                    model, mu, step, warm, seed, label="sweep-init", threads=threads
                )
                u_w, v_w = meas_u.samples.copy(), meas_v.samples.copy()
            else:
                u_w, v_w = u0_fixed.copy(), np.zeros((replicas, dom.M))
            rho = md.g_eval(model, u_w)

            streams = [
                derive_stream(seed, "sweep", r, model.diffusion.n_modes)
                for r in range(replicas)
            ]
            rec_vals = {0: 0.0}
            done = 0
            while done < n_steps:
                block = min(_BLOCK_STEPS, n_steps - done)
                dw = np.stack([next_increments(s, step.dt, block) for s in streams], axis=1)
                for b in range(block):
                    u_w, v_w = _step_batch("wave", model, step, mu, u_w, v_w, dw[b])
                    rho, _ = _step_batch("rho", model, step, None, rho, None, dw[b])
                    k = done + b + 1
                    if k in check_set:
                        diff = md.g_eval(model, u_w) - rho
                        gap = float(np.mean(sobolev_norm(dom, diff, -1.0) ** 2))
                        rows.append((mode, mu, k * step.dt, gap))
                        if k == check_steps[-1]:
                            gaps_final[mu] = gap
                    if k in rec:
                        d = u_w - md.g_inverse(model, rho)
                        rec_vals[k] = float(np.mean(l2_inner(dom, d, d)))
                done += block
            ks = np.array(sorted(rec_vals))
            vals = np.array([rec_vals[k] for k in ks])
            trapezoid = getattr(np, "trapezoid", np.trapz)
            integral_rows.append((mode, mu, float(trapezoid(vals, ks * step.dt))))

        mus = np.array(sorted(gaps_final, reverse=True))
        finals = np.array([gaps_final[m] for m in mus])
        slope = (
            float(np.polyfit(np.log(mus), np.log(finals), 1)[0]) if len(mus) > 1 else math.nan
        )
        by_mode[mode] = {
            "gaps_final": {repr(m): gaps_final[m] for m in cfg.mu_list},
            "slope": slope,
            "monotone": bool(np.all(np.diff(finals) < 0)),
        }

    write_table(
        os.path.join(out_dir, "sweep.csv"), ["initial", "mu", "t", "gap_hm1_sq"], rows
    )
    write_table(
        os.path.join(out_dir, "sweep_integrals.csv"),
        ["initial", "mu", "integral_gap_h_sq"],
        integral_rows,
    )
    head = by_mode[modes[0]]
    return {
        "t_final": check_steps[-1] * step.dt,
        "modes": by_mode,
        "slope": head["slope"],
        "monotone": head["monotone"],
    }


# ---------------------------------------------------------------- transport


def _subsample(meas: EmpiricalMeasure, n: int) -> EmpiricalMeasure:
    if n >= meas.n:
        return meas
    idx = np.unique(np.linspace(0, meas.n - 1, n).round().astype(int))
    ids = meas.replica_ids[idx] if meas.replica_ids is not None else None
    return EmpiricalMeasure(meas.dom, meas.samples[idx], ids, dict(meas.meta, subsample=n))


def transport_tables(cfg: ExperimentConfig, seed: int, threads: int = 1) -> dict:
    """Stationary marginals, coupling distances, floors, and moments.

    Draws ensemble samples of the wave position marginal at every mu
    and of the limit law with the noise-induced drift both kept and
    dropped, then tabulates exact coupling distances between each wave
    marginal and both limit variants, alongside the split-half floors
    and the moment estimates.  One shared noise label drives every run:
    the wave ensembles across mu and both limit variants all consume
    the same increments replica for replica.  The synchronous coupling
    matters for the distances: with independently sampled clouds the
    empirical coupling cost bottoms out at the finite-sample floor
    (roughly 0.02 here at 256 samples), which buries the mass
    dependence at the two smaller masses; with common draws the
    assignment can follow the pathwise coupling, so the estimate stays
    consistent for the same distance while its finite-sample bias drops
    well below the floor, and the decrease in mass becomes visible.
    The split-half floors are a within-cloud property and are computed
    exactly as before.
    """
    model, run, step = cfg.model, cfg.run, cfg.step
    pilot = pilot_rate(model, step, seed)
    run_cfg = derived_run_config(
        pilot, run.replicas, run.samples_per_replica, run.burn_in, run.spacing
    )
    n = run.transport_samples

    step_on = dataclasses.replace(step, correction=True)
    step_off = dataclasses.replace(step, correction=False)
    meas_on, rep_on = sample_stationary_parabolic(
        model, "u", step_on, run_cfg, seed, label="stationary/wave", threads=threads
    )
    meas_off, rep_off = sample_stationary_parabolic(
        model, "u", step_off, run_cfg, seed, label="stationary/wave", threads=threads
    )
    sub_on, sub_off = _subsample(meas_on, n), _subsample(meas_off, n)

    moment_rows = []

    def _moments(variant, mu_label, report):
        for name in ("u_h1_sq", "u_h_sq", "u_hm1_sq", "mu_v_h_sq"):
            q = getattr(report, name)
            if q is None:
                continue
            moment_rows.append(
                (variant, mu_label, name, q.mean, q.se, report.autocorr_spacing)
            )

    _moments("limit", 0.0, rep_on)
    _moments("limit_nocorr", 0.0, rep_off)

    w1_rows = []
    plan_rows: list[tuple] = []
    plan_mu = math.nan
    phi_means = []
    phi_by_replica = []
    dom = model.dom
    for mu in cfg.mu_list:
        meas_u, meas_v, rep_w = sample_stationary_wave(
            model, mu, step, run_cfg, seed, label="stationary/wave", threads=threads
        )
        sub_w = _subsample(meas_u, n)
        _moments("wave", mu, rep_w)

        # combined functional |u|_{H1}^2 + mu |v|_H^2, per sample
        phi = sobolev_norm(dom, meas_u.samples, 1.0) ** 2 + mu * l2_inner(
            dom, meas_v.samples, meas_v.samples
        )
        ids = meas_u.replica_ids
        blocks = np.unique(ids)
        block_means = np.array([phi[ids == blk].mean() for blk in blocks])
        phi_by_replica.append(block_means)
        phi_means.append(float(phi.mean()))
        phi_se = (
            float(block_means.std(ddof=1) / np.sqrt(len(blocks)))
            if len(blocks) > 1
            else math.nan
        )
        moment_rows.append(("wave", mu, "phi", phi_means[-1], phi_se, rep_w.autocorr_spacing))

        for delta in (-1.0, 0.0):
            on = w1_exact(cost_matrix(sub_w, sub_on, delta))
            off = w1_exact(cost_matrix(sub_w, sub_off, delta))
            w1_rows.append(
                (
                    mu,
                    delta,
                    on.value,
                    off.value,
                    noise_floor(sub_w, run.noise_floor_splits, delta, seed),
                    noise_floor(sub_on, run.noise_floor_splits, delta, seed),
                )
            )
            if delta == -1.0 and mu == min(cfg.mu_list):
                plan_rows = [
                    (r["row"], r["col"], r["mass"]) for r in plan_table(on)
                ]
                plan_mu = mu

    trend_rho, trend_ci = _phi_trend(cfg.mu_list, phi_by_replica)
    ratio = max(phi_means) / min(phi_means) if phi_means else math.nan
    return {
        "pilot_lambda": pilot,
        "burn_in": run_cfg.burn_in,
        "spacing": run_cfg.spacing,
        "n_transport": n,
        "w1_header": ["mu", "delta", "w1_limit", "w1_limit_nocorr", "floor_wave", "floor_limit"],
        "w1_rows": w1_rows,
        "moment_header": ["variant", "mu", "quantity", "mean", "se", "autocorr"],
        "moment_rows": moment_rows,
        "plan_header": ["row", "col", "mass"],
        "plan_rows": plan_rows,
        "plan_mu": plan_mu,
        "phi_by_mu": {repr(m): v for m, v in zip(cfg.mu_list, phi_means)},
        "phi_ratio": ratio,
        "phi_trend_rho": trend_rho,
        "phi_trend_ci": trend_ci,
    }


def _phi_trend(mu_list, phi_by_replica) -> tuple[float, list[float]]:
    """Rank correlation of the combined moment against decreasing mass.

    Computed per replica across the mass grid, then averaged; the
    interval is mean +- 1.96 standard errors.  Positive values mean the
    moment grows as the mass shrinks.
    """
    if len(mu_list) < 2:
        return math.nan, [math.nan, math.nan]
    from scipy.stats import spearmanr

    order = np.argsort(mu_list)[::-1]  # decreasing mass
    mat = np.stack([phi_by_replica[k] for k in order])  # (n_mu, R)
    rhos = []
    for r in range(mat.shape[1]):
        rho = spearmanr(np.arange(mat.shape[0]), mat[:, r])[0]
        if not math.isnan(rho):
            rhos.append(float(rho))
    if not rhos:
        return math.nan, [math.nan, math.nan]
    mean = float(np.mean(rhos))
    se = float(np.std(rhos, ddof=1) / math.sqrt(len(rhos))) if len(rhos) > 1 else 0.0
    return mean, [mean - 1.96 * se, mean + 1.96 * se]


def run_transport(cfg: ExperimentConfig, out_dir: str, seed: int, threads: int = 1) -> dict:
    tables = transport_tables(cfg, seed, threads)
    write_table(os.path.join(out_dir, "transport.csv"), tables["w1_header"], tables["w1_rows"])
    write_table(os.path.join(out_dir, "moments.csv"), tables["moment_header"], tables["moment_rows"])
    # audit trail: the optimal coupling behind the headline distance
    write_table(os.path.join(out_dir, "transport_plan.csv"), tables["plan_header"], tables["plan_rows"])
    w1_neg = sorted(
        (r for r in tables["w1_rows"] if r[1] == -1.0), key=lambda r: -r[0]
    )
    values = [r[2] for r in w1_neg]
    return {
        "pilot_lambda": tables["pilot_lambda"],
        "burn_in": tables["burn_in"],
        "spacing": tables["spacing"],
        "n_transport": tables["n_transport"],
        "w1_hm1_by_decreasing_mu": values,
        "w1_floor_wave_hm1": [r[4] for r in w1_neg],
        "w1_floor_limit_hm1": [r[5] for r in w1_neg],
        "w1_monotone": bool(np.all(np.diff(values) < 0)) if len(values) > 1 else True,
        "plan_mu": tables["plan_mu"],
        "phi_by_mu": tables["phi_by_mu"],
        "phi_ratio": tables["phi_ratio"],
        "phi_trend_rho": tables["phi_trend_rho"],
        "phi_trend_ci": tables["phi_trend_ci"],
    }


# ------------------------------------------------------------------ report


def _refit_contraction(rows: list[list[str]]) -> float:
    """Independent refit of the decay rate from the raw table."""
    t = np.array([float(r[0]) for r in rows])
    g = np.array([float(r[1]) for r in rows])
    floor = 10.0 * (np.finfo(float).eps ** 2) * max(g[0], 1.0)
    window = g > floor
    slope, _ = np.polyfit(t[window], np.log(g[window]), 1)
    return float(-slope)


def _sweep_finals(rows: list[list[str]], mode: str) -> dict[float, float]:
    by_mu: dict[float, tuple[float, float]] = {}
    for r in rows:
        if r[0] != mode:
            continue
        mu, t, gap = float(r[1]), float(r[2]), float(r[3])
        if mu not in by_mu or t > by_mu[mu][0]:
            by_mu[mu] = (t, gap)
    return {m: v[1] for m, v in by_mu.items()}


def _refit_sweep(rows: list[list[str]], mode: str) -> float:
    finals = _sweep_finals(rows, mode)
    mus = sorted(finals)
    if len(mus) < 2:
        return math.nan
    return float(np.polyfit(np.log(mus), np.log([finals[m] for m in mus]), 1)[0])


def _figure_backend():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _render_figures(out_dir: str, found: dict) -> list[str]:
    plt = _figure_backend()
    written = []

    def save(fig, name):
        fig.savefig(os.path.join(out_dir, name), dpi=120)
        plt.close(fig)
        written.append(name)

    if "equivalence" in found:
        _, rows = found["equivalence"]
        fig, ax = plt.subplots(figsize=(6, 4))
        levels = sorted({float(r[2]) for r in rows}, reverse=True)
        for dt in levels:
            pts = [(float(r[0]), float(r[1])) for r in rows if float(r[2]) == dt]
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], label=f"dt={dt:g}")
        ax.set_xlabel("t")
        ax.set_ylabel("mean |g(u) - rho|_H")
        ax.legend()
        ax.set_title("form equivalence gap")
        save(fig, "equivalence.png")

    if "contraction" in found:
        _, rows = found["contraction"]
        t = [float(r[0]) for r in rows]
        g = [float(r[1]) for r in rows]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.semilogy(t, g, marker=".", linestyle="none", label="mean gap")
        lam = _refit_contraction(rows)
        g0 = g[0] if g[0] > 0 else 1.0
        ax.semilogy(t, g0 * np.exp(-lam * np.array(t)), label=f"fit rate {lam:.3g}")
        ax.set_xlabel("t")
        ax.set_ylabel("mean squared gap")
        ax.legend()
        ax.set_title("coupling contraction")
        save(fig, "contraction.png")

    if "sweep" in found:
        _, rows = found["sweep"]
        modes = sorted({r[0] for r in rows})
        fig, ax = plt.subplots(figsize=(6, 4))
        labels = []
        for mode in modes:
            finals = _sweep_finals(rows, mode)
            mus = sorted(finals)
            ax.loglog(mus, [finals[m] for m in mus], marker="o", label=mode)
            labels.append(f"{mode} slope {_refit_sweep(rows, mode):.3g}")
        ax.set_xlabel("mu")
        ax.set_ylabel("terminal mean squared gap")
        ax.legend()
        ax.set_title("small-mass gap: " + ", ".join(labels))
        save(fig, "sweep.png")

    if "transport" in found:
        _, rows = found["transport"]
        fig, ax = plt.subplots(figsize=(6, 4))
        for delta, style in ((-1.0, "o-"), (0.0, "s--")):
            pts = [
                (float(r[0]), float(r[2]), float(r[5]))
                for r in rows
                if float(r[1]) == delta
            ]
            if not pts:
                continue
            pts.sort(reverse=True)
            ax.loglog([p[0] for p in pts], [p[1] for p in pts], style, label=f"delta={delta:g}")
            ax.axhline(2 * pts[-1][2], color="gray", linewidth=0.8, linestyle=":")
        ax.set_xlabel("mu")
        ax.set_ylabel("W1 to limit")
        ax.legend()
        ax.set_title("stationary coupling distance (dotted: twice the floor)")
        save(fig, "transport.png")

    return written


def run_report(run_dirs: list[str], out_dir: str) -> dict:
    """Collate earlier runs: verify hashes, refit, draw figures.

    Fits are recomputed from the raw tables rather than read back from
    the manifests; a manifest whose recorded hash or headline number
    disagrees with its tables marks the run as not verified.
    """
    inputs = {}
    found_tables: dict[str, tuple[list[str], list[list[str]]]] = {}
    summary_rows = []
    for run_dir in run_dirs:
        name = os.path.basename(os.path.normpath(run_dir))
        mpath = os.path.join(run_dir, "manifest.json")
        entry = {"verified": True, "problems": []}
        try:
            with open(mpath, "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            inputs[name] = {"verified": False, "problems": [f"manifest unreadable: {exc}"]}
            continue
        entry["command"] = manifest.get("command", "?")
        for fname, recorded in manifest.get("outputs", {}).items():
            fpath = os.path.join(run_dir, fname)
            if not os.path.exists(fpath):
                entry["problems"].append(f"{fname}: missing")
                continue
            actual = body_sha256(fpath) if fname.endswith(".csv") else file_sha256(fpath)
            if actual != recorded:
                entry["problems"].append(f"{fname}: hash mismatch")

        for key, fname in (
            ("equivalence", "equivalence.csv"),
            ("contraction", "contraction.csv"),
            ("sweep", "sweep.csv"),
            ("transport", "transport.csv"),
            ("moments", "moments.csv"),
        ):
            fpath = os.path.join(run_dir, fname)
            if os.path.exists(fpath):
                found_tables[key] = read_table(fpath)

        results = manifest.get("results", {})
        if "contraction.csv" in manifest.get("outputs", {}):
            refit = _refit_contraction(read_table(os.path.join(run_dir, "contraction.csv"))[1])
            stated = results.get("lambda_hat")
            if stated is not None and not math.isclose(refit, stated, rel_tol=1e-6):
                entry["problems"].append(
                    f"lambda_hat refit {refit!r} disagrees with manifest {stated!r}"
                )
            summary_rows.append((name, entry["command"], "lambda_hat_refit", refit))
        if "sweep.csv" in manifest.get("outputs", {}):
            sweep_rows = read_table(os.path.join(run_dir, "sweep.csv"))[1]
            for mode, stats in results.get("modes", {}).items():
                refit = _refit_sweep(sweep_rows, mode)
                stated = stats.get("slope")
                if stated is not None and not math.isclose(refit, stated, rel_tol=1e-6):
                    entry["problems"].append(
                        f"{mode} slope refit {refit!r} disagrees with manifest {stated!r}"
                    )
                summary_rows.append(
                    (name, entry["command"], f"sweep_slope_refit_{mode}", refit)
                )
        for key, value in results.items():
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                summary_rows.append((name, entry["command"], key, float(value)))

        entry["verified"] = not entry["problems"]
        inputs[name] = entry

    figures = _render_figures(out_dir, found_tables)
    write_table(
        os.path.join(out_dir, "summary.csv"),
        ["run", "command", "quantity", "value"],
        summary_rows,
    )
    all_ok = all(e.get("verified") for e in inputs.values()) if inputs else False
    results = {"inputs_verified": all_ok, "figures": figures}
    write_manifest(
        out_dir,
        "report",
        None,
        0,
        1,
        results,
        ["summary.csv"],
        binaries=figures,
        extra={"inputs": inputs},
    )
    return dict(results, inputs=inputs)
