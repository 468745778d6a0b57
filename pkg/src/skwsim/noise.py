"""Reproducible counter-based noise increment streams.

Every increment is a pure function of (master seed, stream label, replica
index, step counter, mode count), so coupled solvers can replay identical
Brownian paths and replicas can run in any order or thread without
coordination.

Derivation and generation are fixed as follows and must not change
between releases, since run manifests promise bit reproducibility:

  key     = splitmix64(splitmix64(seed) ^ blake2b64(label) ) ^ replica,
            passed through splitmix64 once more
  raws    = Philox(key, counter = step * stride) 64-bit outputs, where
            stride = ceil(D/4) counter blocks and D = 4*ceil(n_modes/4)
            uniforms are consumed per step
  uniform = (raw >> 11 + 1) * 2^-53  in (0, 1]
  normals = Box-Muller on consecutive pairs (u1, u2):
            sqrt(-2 log u1) * (cos, sin)(2 pi u2), interleaved
  dW_i    = normals[i] * sqrt(dt)  for i < n_modes

Floating point for log/cos/sin follows the platform libm; the run
manifest records the build so reproducibility is exact per build.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _label64(label: str) -> int:
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass
class NoiseStream:
    """Stream of mode-wise Wiener increments for one (label, replica)."""

    seed: int
    label: str
    replica: int
    n_modes: int
    key: int
    counter: int = 0

    @property
    def _draws_per_step(self) -> int:
        # whole Philox blocks per step keep block and single-step paths bit-identical
        return 4 * ((self.n_modes + 3) // 4)

    @property
    def _stride(self) -> int:
        return self._draws_per_step // 4


def derive_stream(seed: int, label: str, replica: int, n_modes: int) -> NoiseStream:
    """Derive an independent stream from (seed, label, replica)."""
    key = _splitmix64(_splitmix64(seed & _MASK64) ^ _label64(label))
    key = _splitmix64(key ^ (replica & _MASK64))
    return NoiseStream(seed=seed, label=label, replica=replica, n_modes=n_modes, key=key)


def _raw_uniforms(stream: NoiseStream, start_step: int, n_steps: int) -> np.ndarray:
    d = stream._draws_per_step
    bitgen = np.random.Philox(key=stream.key, counter=start_step * stream._stride)
    raw = bitgen.random_raw(n_steps * d).reshape(n_steps, d)
    return ((raw >> np.uint64(11)) + np.uint64(1)) * (2.0**-53)


def _box_muller(uniforms: np.ndarray) -> np.ndarray:
    u1 = uniforms[..., 0::2]
    u2 = uniforms[..., 1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty_like(uniforms)
    out[..., 0::2] = radius * np.cos(theta)
    out[..., 1::2] = radius * np.sin(theta)
    return out


def next_increments(stream: NoiseStream, dt: float, n_steps: int) -> np.ndarray:
    """Return (n_steps, n_modes) Normal(0, dt) draws, advancing the counter.

    Generating a block of n_steps is bit-identical to n_steps single
    calls: each step owns a fixed range of Philox counter blocks.
    """
    if dt <= 0:
        raise ValueError(f"time step must be positive, got {dt}")
    uniforms = _raw_uniforms(stream, stream.counter, n_steps)
    stream.counter += n_steps
    normals = _box_muller(uniforms)[:, : stream.n_modes]
    return normals * np.sqrt(dt)


def next_increment(stream: NoiseStream, dt: float) -> np.ndarray:
    """Single step of next_increments, shape (n_modes,)."""
    return next_increments(stream, dt, 1)[0]


def fork_coupled(stream: NoiseStream) -> tuple[NoiseStream, NoiseStream]:
    """Two handles that replay one increment sequence independently.

    Both copies start at the current counter; consuming from one does
    not perturb the other, which is the synchronous coupling used by the
    contraction and limit experiments.
    """
    return copy.copy(stream), copy.copy(stream)


def coarsened_increments(
    stream: NoiseStream, dt_fine: float, m: int, n_steps: int
) -> np.ndarray:
    """Sum m consecutive fine increments into each coarse one.

    Gives a Brownian-consistent coupling between solvers running at
    dt_fine and m * dt_fine: the coarse increments are exactly the sums
    of the fine ones the other solver consumes.
    """
    fine = next_increments(stream, dt_fine, m * n_steps)
    return fine.reshape(n_steps, m, stream.n_modes).sum(axis=1)


def stream_manifest(stream: NoiseStream) -> dict:
    """Provenance fields recorded in run manifests."""
    return {
        "seed": stream.seed,
        "label": stream.label,
        "replica": stream.replica,
        "n_modes": stream.n_modes,
        "counter": stream.counter,
    }
