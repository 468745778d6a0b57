"""Determinism, coupling, and distributional checks for the increment streams.

The statistical assertions run on fixed seeds, so they are exact
regressions rather than flaky thresholds; the bounds were chosen at
5 sigma or wider for the sample sizes used.
"""

import numpy as np
import pytest
import scipy.stats

from skwsim.noise import (
    coarsened_increments,
    derive_stream,
    fork_coupled,
    next_increment,
    next_increments,
    stream_manifest,
)

JB_CRITICAL_01PCT = 13.815510557964274  # chi^2_2 quantile at 99.9%


def test_same_identity_same_stream():
    a = derive_stream(12345, "exp", 0, 8)
    b = derive_stream(12345, "exp", 0, 8)
    assert np.array_equal(next_increments(a, 1e-3, 100), next_increments(b, 1e-3, 100))


def test_label_change_changes_stream():
    a = derive_stream(12345, "exp", 0, 8)
    b = derive_stream(12345, "exp2", 0, 8)
    assert not np.array_equal(next_increments(a, 1e-3, 10), next_increments(b, 1e-3, 10))


def test_replica_change_changes_stream():
    a = derive_stream(12345, "exp", 0, 8)
    b = derive_stream(12345, "exp", 1, 8)
    assert not np.array_equal(next_increments(a, 1e-3, 10), next_increments(b, 1e-3, 10))


def test_replicas_uncorrelated():
    a = derive_stream(777, "corr", 0, 1)
    b = derive_stream(777, "corr", 1, 1)
    xa = next_increments(a, 1.0, 10_000)[:, 0]
    xb = next_increments(b, 1.0, 10_000)[:, 0]
    r = np.corrcoef(xa, xb)[0, 1]
    assert abs(r) < 0.05


def test_increment_shape_and_counter():
    s = derive_stream(1, "shape", 0, 5)
    one = next_increment(s, 1e-2)
    assert one.shape == (5,)
    assert s.counter == 1
    many = next_increments(s, 1e-2, 7)
    assert many.shape == (7, 5)
    assert s.counter == 8


def test_dt_must_be_positive():
    s = derive_stream(1, "dt", 0, 3)
    with pytest.raises(ValueError):
        next_increment(s, 0.0)
    with pytest.raises(ValueError):
        next_increments(s, -1e-3, 4)


def test_moments_first_mode():
    s = derive_stream(20260817, "moments", 0, 2)
    dt = 1e-3
    x = next_increments(s, dt, 100_000)[:, 0]
    assert abs(np.mean(x / np.sqrt(dt))) < 0.02
    assert dt * 0.98 < np.var(x) < dt * 1.02


def test_modes_independent():
    s = derive_stream(20260817, "modes", 0, 2)
    x = next_increments(s, 1.0, 100_000)
    assert abs(np.corrcoef(x[:, 0], x[:, 1])[0, 1]) < 0.02


def test_gaussianity_jarque_bera():
    s = derive_stream(20260817, "jb", 0, 1)
    x = next_increments(s, 1.0, 100_000)[:, 0]
    stat = scipy.stats.jarque_bera(x).statistic
    assert stat < JB_CRITICAL_01PCT


def test_block_and_single_draws_identical():
    # each step owns fixed counter blocks, so chunking cannot matter
    a = derive_stream(42, "chunk", 3, 6)
    b = derive_stream(42, "chunk", 3, 6)
    block = next_increments(a, 1e-3, 50)
    singles = np.stack([next_increment(b, 1e-3) for _ in range(50)])
    assert np.array_equal(block, singles)


def test_chunked_consumption_identical():
    a = derive_stream(42, "chunk2", 0, 4)
    b = derive_stream(42, "chunk2", 0, 4)
    whole = next_increments(a, 1e-3, 64)
    parts = np.concatenate(
        [next_increments(b, 1e-3, 10), next_increments(b, 1e-3, 30), next_increments(b, 1e-3, 24)]
    )
    assert np.array_equal(whole, parts)


def test_fork_coupled_replays():
    s = derive_stream(9, "fork", 0, 4)
    next_increments(s, 1e-3, 5)  # advance before forking
    h1, h2 = fork_coupled(s)
    x1 = next_increments(h1, 1e-3, 1000)
    x2 = next_increments(h2, 1e-3, 1000)
    assert np.array_equal(x1, x2)
    # consuming h1 further must not disturb h2
    more1 = next_increments(h1, 1e-3, 3)
    more2 = next_increments(h2, 1e-3, 3)
    assert np.array_equal(more1, more2)


def test_coarse_sums_of_fine():
    s = derive_stream(5, "coarse", 0, 3)
    fine_replay = derive_stream(5, "coarse", 0, 3)
    coarse = coarsened_increments(s, dt_fine=5e-4, m=2, n_steps=20)
    fine = next_increments(fine_replay, 5e-4, 40)
    assert np.array_equal(coarse, fine.reshape(20, 2, 3).sum(axis=1))


def test_scaling_with_dt():
    # same underlying normals, scaled by sqrt(dt)
    a = derive_stream(8, "scale", 0, 4)
    b = derive_stream(8, "scale", 0, 4)
    xa = next_increments(a, 1.0, 10)
    xb = next_increments(b, 4.0, 10)
    assert np.max(np.abs(2.0 * xa - xb)) < 1e-15


def test_manifest_contents():
    s = derive_stream(31, "mani", 2, 6)
    next_increments(s, 1e-3, 12)
    m = stream_manifest(s)
    assert m["seed"] == 31
    assert m["label"] == "mani"
    assert m["replica"] == 2
    assert m["n_modes"] == 6
    assert m["counter"] == 12
