"""Deterministic seed-substream helpers and batched mechanism execution.

Every randomized routine in the toolkit receives either a seed (int or
``numpy.random.SeedSequence``) or an explicit ``numpy.random.Generator``.
Seeds are split into child streams with :func:`substream`, which derives a
child purely from the parent's entropy and a key tuple, so a batch of runs
produces the same numbers regardless of execution order or worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

__all__ = ["as_seed_sequence", "substream", "generator", "sample_runs"]

SeedLike = "int | np.random.SeedSequence"


def as_seed_sequence(seed) -> np.random.SeedSequence:
    """Coerce an int or SeedSequence into a SeedSequence (without mutating it)."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, (int, np.integer)):
        return np.random.SeedSequence(int(seed))
    raise TypeError(f"expected int or SeedSequence, got {type(seed).__name__}")


def substream(seed, *key: int) -> np.random.SeedSequence:
    """Child seed identified by a key tuple; pure function of (seed, key)."""
    ss = as_seed_sequence(seed)
    return np.random.SeedSequence(
        entropy=ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(int(k) for k in key))


def generator(seed) -> np.random.Generator:
    """Fresh Generator for a seed; Generators pass through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(as_seed_sequence(seed))


def sample_runs(mechanism, sensor_data, n: int, rng, workers: int = 1) -> np.ndarray:
    """Draw ``n`` independent mechanism outputs, shape (n, steps, dim).

    Results depend only on (sensor_data, seed, n); worker count and batching
    strategy never change the numbers.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    out = np.asarray(mechanism.sample_batch(sensor_data, n, as_seed_sequence(rng),
                                            workers=workers), dtype=float)
    expected = (n, mechanism.steps, mechanism.estimate_dim)
    if out.shape != expected:
        raise ValueError(
            f"mechanism produced shape {out.shape}, expected {expected}")
    return out


def run_indexed(fn, n: int, out: np.ndarray, workers: int = 1) -> None:
    """Fill ``out[i] = fn(i)`` for i in range(n), optionally with threads."""
    if workers <= 1:
        for i in range(n):
            out[i] = fn(i)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        def assign(i):
            out[i] = fn(i)
        list(pool.map(assign, range(n)))
