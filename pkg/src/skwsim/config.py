"""JSON experiment configuration: schema validation and object assembly.

One experiment is one JSON document; every key is checked against the
schema below and unknown keys are rejected with the line on which they
appear, so typos can never silently change an experiment.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field

import numpy as np

from .grid import Domain, sample_mode
from .integrators import StepConfig
from .model import DiffusionSpec, FrictionSpec, ModelSpec, ReactionSpec


class ConfigError(ValueError):
    """Carries (line, message) pairs for every violation found."""

    def __init__(self, errors: list[tuple[int, str]], path: str = "<config>"):
        self.errors = errors
        self.path = path
        lines = "\n".join(f"{path}:{ln}: {msg}" for ln, msg in errors)
        super().__init__(lines)


_BOOL = "bool"
_INT = "int"
_NUM = "number"
_STR = "string"
_LIST = "list"
_DICT = "dict"

# schema: key -> (type, required, child schema or None)
_SCHEMA = {
    "domain": (_DICT, True, {
        "L": (_NUM, True, None),
        "M": (_INT, True, None),
    }),
    "model": (_DICT, True, {
        "friction": (_DICT, True, {
            "family": (_STR, True, None),
            "a": (_NUM, True, None),
            "b": (_NUM, False, None),
        }),
        "reaction": (_DICT, True, {
            "family": (_STR, True, None),
            "kappa": (_NUM, False, None),
            "beta": (_NUM, False, None),
        }),
        "diffusion": (_DICT, True, {
            "family": (_STR, True, None),
            "s0": (_NUM, True, None),
            "s1": (_NUM, True, None),
            "q_power": (_NUM, False, None),
            "q_weights": (_LIST, False, None),
            "n_modes": (_INT, False, None),
        }),
    }),
    "integrator": (_DICT, True, {
        "dt": (_NUM, True, None),
        "eps": (_NUM, False, None),
        "correction": (_BOOL, False, None),
    }),
    "run": (_DICT, True, {
        "T": (_NUM, True, None),
        "burn_in": (_NUM, False, None),
        "spacing": (_NUM, False, None),
        "replicas": (_INT, True, None),
        "samples_per_replica": (_INT, True, None),
        "transport_samples": (_INT, False, None),
        "checkpoints": (_LIST, False, None),
        "noise_floor_splits": (_INT, False, None),
        "sweep_initial": (_STR, False, None),
        "initial": (_DICT, False, {
            "kind": (_STR, True, None),
            "mode": (_INT, False, None),
            "amplitude": (_NUM, False, None),
        }),
    }),
    "mu_list": (_LIST, True, None),
    "seed": (_INT, True, None),
    "out_dir": (_STR, False, None),
}


def _type_ok(value, kind) -> bool:
    if kind == _BOOL:
        return isinstance(value, bool)
    if kind == _INT:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == _NUM:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == _STR:
        return isinstance(value, str)
    if kind == _LIST:
        return isinstance(value, list)
    if kind == _DICT:
        return isinstance(value, dict)
    raise AssertionError(kind)


def _key_line(text: str, key: str) -> int:
    """Best-effort line of a key's first occurrence in the source text."""
    pattern = re.compile(r'"' + re.escape(key) + r'"\s*:')
    match = pattern.search(text)
    if match is None:
        return 0
    return text.count("\n", 0, match.start()) + 1


def _walk(raw: dict, schema: dict, text: str, prefix: str, errors: list):
    for key, value in raw.items():
        if key not in schema:
            errors.append((_key_line(text, key), f"unknown key {prefix}{key}"))
            continue
        kind, _, child = schema[key]
        if not _type_ok(value, kind):
            errors.append(
                (_key_line(text, key), f"{prefix}{key} must be of type {kind}")
            )
            continue
        if child is not None:
            _walk(value, child, text, f"{prefix}{key}.", errors)
    for key, (kind, required, _) in schema.items():
        if required and key not in raw:
            errors.append((0, f"missing required key {prefix}{key}"))


@dataclass(frozen=True)
class RunBlock:
    T: float
    burn_in: float | None
    spacing: float | None
    replicas: int
    samples_per_replica: int
    transport_samples: int
    checkpoints: tuple
    noise_floor_splits: int
    sweep_initial: str
    initial_kind: str
    initial_mode: int
    initial_amplitude: float


@dataclass(frozen=True)
class ExperimentConfig:
    domain: Domain
    model: ModelSpec
    step: StepConfig
    run: RunBlock
    mu_list: tuple
    seed: int
    out_dir: str | None
    raw: dict = field(repr=False)

    def initial_field(self) -> np.ndarray:
        if self.run.initial_kind == "zero":
            return np.zeros(self.domain.M)
        return sample_mode(self.domain, self.run.initial_mode, self.run.initial_amplitude)

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def parse_config(text: str, path: str = "<config>") -> ExperimentConfig:
    """Parse and validate a JSON experiment configuration.

    Raises ConfigError with one (line, message) entry per violation;
    syntax errors are reported with the decoder's line number.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([(exc.lineno, f"invalid JSON: {exc.msg}")], path) from exc
    if not isinstance(raw, dict):
        raise ConfigError([(1, "top level must be a JSON object")], path)

    errors: list[tuple[int, str]] = []
    _walk(raw, _SCHEMA, text, "", errors)
    if errors:
        raise ConfigError(sorted(errors), path)

    def fail(key, msg):
        raise ConfigError([(_key_line(text, key), msg)], path)

    dom_blk = raw["domain"]
    if dom_blk["M"] < 3:
        fail("M", "domain.M must be at least 3")
    if dom_blk["L"] <= 0:
        fail("L", "domain.L must be positive")
    dom = Domain(L=float(dom_blk["L"]), M=int(dom_blk["M"]))

    try:
        friction = FrictionSpec.from_config(raw["model"]["friction"])
        reaction = ReactionSpec.from_config(raw["model"]["reaction"])
        diffusion = DiffusionSpec.from_config(raw["model"]["diffusion"])
        model = ModelSpec(dom=dom, friction=friction, reaction=reaction, diffusion=diffusion)
    except (KeyError, ValueError) as exc:
        key = exc.args[0] if isinstance(exc, KeyError) else "model"
        fail(str(key), f"model block invalid: {exc}")

    integ = raw["integrator"]
    if integ["dt"] <= 0:
        fail("dt", "integrator.dt must be positive")
    if integ.get("eps", 0.0) < 0:
        fail("eps", "integrator.eps must be nonnegative")
    step = StepConfig(
        dt=float(integ["dt"]),
        eps=float(integ.get("eps", 0.0)),
        correction=bool(integ.get("correction", True)),
    )

    run_blk = raw["run"]
    initial = run_blk.get("initial", {"kind": "zero"})
    if initial.get("kind") not in ("zero", "sine"):
        fail("kind", "run.initial.kind must be 'zero' or 'sine'")
    sweep_initial = run_blk.get("sweep_initial", "both")
    if sweep_initial not in ("fixed", "stationary", "both"):
        fail("sweep_initial", "run.sweep_initial must be 'fixed', 'stationary', or 'both'")
    checkpoints = tuple(float(t) for t in run_blk.get("checkpoints", [run_blk["T"]]))
    if any(t <= 0 or t > run_blk["T"] for t in checkpoints):
        fail("checkpoints", "run.checkpoints must lie in (0, T]")
    ensemble = int(run_blk["replicas"]) * int(run_blk["samples_per_replica"])
    run = RunBlock(
        T=float(run_blk["T"]),
        burn_in=run_blk.get("burn_in"),
        spacing=run_blk.get("spacing"),
        replicas=int(run_blk["replicas"]),
        samples_per_replica=int(run_blk["samples_per_replica"]),
        transport_samples=int(run_blk.get("transport_samples", min(256, ensemble))),
        checkpoints=checkpoints,
        noise_floor_splits=int(run_blk.get("noise_floor_splits", 8)),
        sweep_initial=sweep_initial,
        initial_kind=initial.get("kind", "zero"),
        initial_mode=int(initial.get("mode", 1)),
        initial_amplitude=float(initial.get("amplitude", 1.0)),
    )
    if run.replicas < 1:
        fail("replicas", "run.replicas must be at least 1")
    if run.transport_samples > run.replicas * run.samples_per_replica:
        fail(
            "transport_samples",
            "run.transport_samples cannot exceed replicas * samples_per_replica",
        )

    mu_list = raw["mu_list"]
    if not mu_list or any(
        not isinstance(m, (int, float)) or isinstance(m, bool) or m <= 0 for m in mu_list
    ):
        fail("mu_list", "mu_list must be a nonempty list of positive numbers")

    return ExperimentConfig(
        domain=dom,
        model=model,
        step=step,
        run=run,
        mu_list=tuple(float(m) for m in mu_list),
        seed=int(raw["seed"]),
        out_dir=raw.get("out_dir"),
        raw=raw,
    )


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), path)
