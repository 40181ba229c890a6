"""End-to-end privacy test: event counting, worst-event selection, the final
hypothesis test, critical-level sweeps, and the approximate-privacy budget.

Random-stream layout for a root seed ``s`` (children are pure functions of
the seed, so any worker count or batching reproduces the same numbers):

    child(s, 0)          high-likely-set sampling
    child(s, 1, i, 0|1)  selection-phase runs under input 1|2, grid point i
    child(s, 1, i, 2)    selection-phase thinning draws
    child(s, 2, i, ...)  same layout for the fresh test phase

A single test is grid point ``i = 0``.  Selection and test phases therefore
never share a stream.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .highlikely import (HighLikelySet, estimate_high_likely_set,
                         grid_partition)
from .sampling import as_seed_sequence, generator, sample_runs, substream
from .stats import CountPair, PValuePair, pvalue

__all__ = [
    "AdjacencyWarning",
    "ApproxDpBudget",
    "SweepResult",
    "TestConfig",
    "TestVerdict",
    "approx_dp_budget",
    "count_occurrences",
    "critical_epsilon_sweep",
    "estimation_error",
    "hypothesis_test",
    "run_test",
    "worst_event_selector",
]

STREAM_HIGH_LIKELY = 0
STREAM_SELECTION = 1
STREAM_TEST = 2


class AdjacencyWarning(UserWarning):
    """The supplied input pair is farther apart than the declared radius."""


@dataclass(frozen=True)
class TestConfig:
    """Parameters of one privacy test run."""

    __test__ = False  # not a pytest case, despite the name

    epsilon: float = 1.0
    delta: float = 10.0
    alpha: float = 0.05
    beta: float = 0.05
    gamma: float = 1e-9
    r: int = 2
    n: int = 10_000
    seed: int = 0
    thinning_replicates: int = 1

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.r < 1:
            raise ValueError(f"r must be at least 1, got {self.r}")
        if self.n < 1:
            raise ValueError(f"n must be at least 1, got {self.n}")
        if self.thinning_replicates < 1:
            raise ValueError(
                f"thinning_replicates must be positive, got {self.thinning_replicates}")

    def to_dict(self) -> dict:
        return {
            "epsilon": float(self.epsilon),
            "delta": float(self.delta),
            "alpha": float(self.alpha),
            "beta": float(self.beta),
            "gamma": float(self.gamma),
            "r": int(self.r),
            "n": int(self.n),
            "seed": int(self.seed),
            "thinning_replicates": int(self.thinning_replicates),
        }


@dataclass(frozen=True)
class ApproxDpBudget:
    """Additive slack certificate: lambda = beta + 2 * eta * e^epsilon.

    ``theta`` is the mass allowed outside the high-likely set (the beta that
    produced it) and the certificate holds with probability ``confidence``.
    ``source`` records whether eta is a certified partition resolution or the
    largest per-event frequency observed during selection.
    """

    lambda_: float
    theta: float
    confidence: float
    eta: float
    epsilon: float
    source: str = "certified"

    def to_dict(self) -> dict:
        return {
            "lambda": float(self.lambda_),
            "theta": float(self.theta),
            "confidence": float(self.confidence),
            "eta": float(self.eta),
            "epsilon": float(self.epsilon),
            "source": self.source,
        }


def approx_dp_budget(beta: float, eta: float, epsilon: float, alpha: float,
                     gamma: float, source: str = "certified") -> ApproxDpBudget:
    """Budget of the accepted test: lambda = beta + 2*eta*e^eps, confidence
    (1 - alpha) * (1 - gamma).  ``beta = 0`` gives the pure-partition slack
    ``2 * eta * e^eps``."""
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    for name, v in (("alpha", alpha), ("gamma", gamma)):
        if not 0.0 < v < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {v}")
    lam = beta + 2.0 * eta * math.exp(epsilon)
    return ApproxDpBudget(lambda_=lam, theta=beta,
                          confidence=(1.0 - alpha) * (1.0 - gamma),
                          eta=eta, epsilon=epsilon, source=source)


@dataclass(frozen=True)
class TestVerdict:
    """Outcome of one full test."""

    worst_event: object
    pvalues: PValuePair
    accepted: bool
    budget: ApproxDpBudget
    counts: CountPair

    def to_dict(self) -> dict:
        return {
            "worst_event_id": int(self.worst_event.id),
            "p_upper": float(self.pvalues.p_upper),
            "p_lower": float(self.pvalues.p_lower),
            "accepted": bool(self.accepted),
            "budget": self.budget.to_dict(),
            "counts": {"c1": self.counts.c1, "c2": self.counts.c2,
                       "n": self.counts.n},
        }


@dataclass(frozen=True)
class SweepResult:
    """Minimum p-value per tested privacy level."""

    epsilon_grid: tuple
    min_pvalues: tuple
    pvalue_pairs: tuple
    epsilon_critical: float | None
    epsilon_critical_interp: float | None

    def to_dict(self) -> dict:
        return {
            "epsilon_grid": [float(e) for e in self.epsilon_grid],
            "min_pvalues": [float(p) for p in self.min_pvalues],
            "p_upper": [float(p.p_upper) for p in self.pvalue_pairs],
            "p_lower": [float(p.p_lower) for p in self.pvalue_pairs],
            "epsilon_critical": None if self.epsilon_critical is None
            else float(self.epsilon_critical),
            "epsilon_critical_interp": None if self.epsilon_critical_interp is None
            else float(self.epsilon_critical_interp),
        }


def count_occurrences(mechanism, sensor_data, events, n: int, rng,
                      workers: int = 1) -> np.ndarray:
    """Per-event occurrence counts over n fresh runs.

    Runs that land outside every event are counted nowhere, so the counts sum
    to at most n.
    """
    outputs = sample_runs(mechanism, sensor_data, n, rng, workers=workers)
    ids = events.locate(outputs)
    return np.bincount(ids[ids >= 0], minlength=len(events))


def _select_worst(events, counts1, counts2, n, epsilon, gen,
                  thinning_replicates=1):
    # Events nobody hit have p = 1 by the degenerate-table rule and their
    # thinning consumes no randomness, so skipping them is stream-neutral.
    per_event = np.ones(len(events))
    occupied = np.flatnonzero(np.asarray(counts1) + np.asarray(counts2))
    for i in occupied:
        pair = pvalue(CountPair(int(counts1[i]), int(counts2[i]), n), epsilon,
                      gen, thinning_replicates)
        per_event[i] = pair.smallest()
    best_id = int(np.argmin(per_event))
    return best_id, per_event


def worst_event_selector(mechanism, epsilon: float, y1, y2, events, n: int,
                         rng, thinning_replicates: int = 1, workers: int = 1):
    """Event with the smallest min(p_upper, p_lower) over fresh counts.

    Ties keep the lowest event id.  The stream is split into run streams for
    the two inputs and a thinning stream, in that order.
    """
    if len(events) == 0:
        raise ValueError("events must be nonempty")
    ss = as_seed_sequence(rng)
    counts1 = count_occurrences(mechanism, y1, events, n, substream(ss, 0),
                                workers=workers)
    counts2 = count_occurrences(mechanism, y2, events, n, substream(ss, 1),
                                workers=workers)
    gen = generator(substream(ss, 2))
    best_id, _ = _select_worst(events, counts1, counts2, n, epsilon, gen,
                               thinning_replicates)
    return events[best_id]


def hypothesis_test(mechanism, epsilon: float, y1, y2, worst_event, n: int,
                    rng, thinning_replicates: int = 1, workers: int = 1,
                    return_counts: bool = False):
    """P-values for one fixed event from runs independent of its selection."""
    ss = as_seed_sequence(rng)
    out1 = sample_runs(mechanism, y1, n, substream(ss, 0), workers=workers)
    out2 = sample_runs(mechanism, y2, n, substream(ss, 1), workers=workers)
    c1 = int(np.count_nonzero(worst_event.contains_batch(out1)))
    c2 = int(np.count_nonzero(worst_event.contains_batch(out2)))
    counts = CountPair(c1, c2, n)
    pair = pvalue(counts, epsilon, generator(substream(ss, 2)),
                  thinning_replicates)
    if return_counts:
        return pair, counts
    return pair


def _empirical_eta(counts1, counts2, n) -> float:
    return float(max(counts1.max(initial=0), counts2.max(initial=0)) / n)


def _check_adjacency(y1, y2, delta) -> None:
    distance = float(np.linalg.norm((y1 - y2).ravel()))
    if distance > delta * (1.0 + 1e-12):
        warnings.warn(
            f"input distance {distance:.6g} exceeds the adjacency radius "
            f"delta={delta:.6g}; the verdict only covers this pair",
            AdjacencyWarning, stacklevel=3)


def run_test(config: TestConfig, mechanism, y1, y2, *, workers: int = 1,
             events=None, hls: HighLikelySet | None = None) -> TestVerdict:
    """Full pipeline for one privacy level.

    High-likely set and grid partition are fitted to runs under the first
    input, the worst event is selected from one batch of counts, and the
    verdict comes from an independent batch.  The reported budget uses the
    largest per-event frequency seen during selection as a conservative
    empirical stand-in for the partition resolution (a certified resolution
    is available through the bounded-probability partition instead).

    A precomputed partition may be passed in (as done by the sweep); it must
    then match the mechanism's output layout.
    """
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    _check_adjacency(y1, y2, config.delta)

    root = as_seed_sequence(config.seed)
    if events is None:
        if hls is None:
            hls = estimate_high_likely_set(
                mechanism, y1, config.beta, config.gamma,
                substream(root, STREAM_HIGH_LIKELY), workers=workers)
        events = grid_partition(hls, config.r)
    return _test_at_epsilon(config, mechanism, y1, y2, events, root, 0,
                            config.epsilon, workers)


def _test_at_epsilon(config, mechanism, y1, y2, events, root, grid_index,
                     epsilon, workers) -> TestVerdict:
    sel = substream(root, STREAM_SELECTION, grid_index)
    counts1 = count_occurrences(mechanism, y1, events, config.n,
                                substream(sel, 0), workers=workers)
    counts2 = count_occurrences(mechanism, y2, events, config.n,
                                substream(sel, 1), workers=workers)
    best_id, _ = _select_worst(events, counts1, counts2, config.n, epsilon,
                               generator(substream(sel, 2)),
                               config.thinning_replicates)
    worst = events[best_id]

    pair, counts = hypothesis_test(
        mechanism, epsilon, y1, y2, worst, config.n,
        substream(root, STREAM_TEST, grid_index),
        thinning_replicates=config.thinning_replicates, workers=workers,
        return_counts=True)
    budget = approx_dp_budget(config.beta, _empirical_eta(counts1, counts2, config.n),
                              epsilon, config.alpha, config.gamma,
                              source="empirical")
    return TestVerdict(worst_event=worst, pvalues=pair,
                       accepted=pair.smallest() > config.alpha,
                       budget=budget, counts=counts)


def critical_epsilon_sweep(config: TestConfig, mechanism, y1, y2,
                           epsilon_grid, *, workers: int = 1) -> SweepResult:
    """Re-run selection and test at each grid level over one shared partition.

    The critical level is the first grid entry whose min p-value exceeds
    alpha (None when the test rejects everywhere); the linearly interpolated
    alpha-crossing between the surrounding grid points is also reported.
    """
    grid = [float(e) for e in epsilon_grid]
    if not grid:
        raise ValueError("epsilon grid must be nonempty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("epsilon grid must be strictly ascending")

    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    _check_adjacency(y1, y2, config.delta)
    root = as_seed_sequence(config.seed)
    hls = estimate_high_likely_set(mechanism, y1, config.beta, config.gamma,
                                   substream(root, STREAM_HIGH_LIKELY),
                                   workers=workers)
    events = grid_partition(hls, config.r)

    pairs = []
    mins = []
    for i, eps in enumerate(grid):
        verdict = _test_at_epsilon(config, mechanism, y1, y2, events, root, i,
                                   eps, workers)
        pairs.append(verdict.pvalues)
        mins.append(verdict.pvalues.smallest())

    critical = None
    interp = None
    for i, p in enumerate(mins):
        if p > config.alpha:
            critical = grid[i]
            if i == 0:
                interp = grid[0]
            else:
                p_lo, p_hi = mins[i - 1], p
                frac = (config.alpha - p_lo) / (p_hi - p_lo)
                interp = grid[i - 1] + frac * (grid[i] - grid[i - 1])
            break
    return SweepResult(epsilon_grid=tuple(grid), min_pvalues=tuple(mins),
                       pvalue_pairs=tuple(pairs), epsilon_critical=critical,
                       epsilon_critical_interp=interp)


def estimation_error(estimates, truth) -> float:
    """Root mean square of the per-step estimate error norm.

    ``estimates`` is one trajectory (steps, dim) or a batch of runs
    (runs, steps, dim); ``truth`` is a single (steps, dim) trajectory.
    """
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.ndim == 2:
        est = est[None]
    if est.ndim != 3 or tru.ndim != 2:
        raise ValueError("estimates must be (runs, steps, dim); truth (steps, dim)")
    if est.shape[1:] != tru.shape:
        raise ValueError(
            f"estimate steps/dim {est.shape[1:]} do not match truth {tru.shape}")
    sq = np.sum((est - tru) ** 2, axis=2)
    return float(np.sqrt(sq.mean()))
