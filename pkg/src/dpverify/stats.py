"""Exact statistical kernels: binomial thinning, hypergeometric tails, and
the paired one-sided p-values used by the privacy test.

The two hypotheses under test for a fixed event E and target level eps are

    H0:   p1 <= e^eps * p2      (upper test, p-value ``p_upper``)
    H0':  p2 <= e^eps * p1      (lower test, p-value ``p_lower``)

where ``p_i`` is the probability that a run with input i lands in E.  Each
test thins the corresponding count by ``e^-eps`` (turning the weighted
hypothesis into an equality hypothesis) and applies a one-sided Fisher exact
test via the hypergeometric survival function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

__all__ = [
    "CountPair",
    "PValuePair",
    "binomial_thin",
    "hypergeom_sf",
    "pvalue",
]


@dataclass(frozen=True)
class CountPair:
    """Occurrence counts of one event under the two inputs, out of n runs each."""

    c1: int
    c2: int
    n: int

    def __post_init__(self):
        for name in ("c1", "c2", "n"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.n < 0:
            raise ValueError(f"n must be nonnegative, got {self.n}")
        for name in ("c1", "c2"):
            c = getattr(self, name)
            if not 0 <= c <= self.n:
                raise ValueError(f"{name} must lie in [0, n={self.n}], got {c}")


@dataclass(frozen=True)
class PValuePair:
    """The two one-sided p-values; both must exceed alpha to accept."""

    p_upper: float
    p_lower: float

    def __post_init__(self):
        for name in ("p_upper", "p_lower"):
            p = float(getattr(self, name))
            if not 0.0 <= p <= 1.0 or math.isnan(p):
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
            object.__setattr__(self, name, p)

    def smallest(self) -> float:
        return min(self.p_upper, self.p_lower)


def binomial_thin(c: int, epsilon: float, uniforms) -> int:
    """Thin a count: keep each of ``c`` items independently with prob e^-epsilon.

    ``uniforms`` supplies the c uniform(0,1) variates explicitly (the first c
    entries are used), which makes the output non-increasing in epsilon for a
    fixed stream.  The result is distributed Binomial(c, e^-epsilon).
    """
    c = int(c)
    if c < 0:
        raise ValueError(f"count must be nonnegative, got {c}")
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    if c == 0:
        return 0
    u = np.asarray(uniforms, dtype=float)
    if u.size < c:
        raise ValueError(f"need at least {c} uniforms, got {u.size}")
    return int(np.count_nonzero(u.ravel()[:c] < math.exp(-epsilon)))


def hypergeom_sf(k: int, population: int, draws: int, successes: int) -> float:
    """P(X > k) for X hypergeometric(population, successes, draws).

    Computed by log-gamma summation over the lighter tail (split at the
    distribution's mode), accumulated with compensated summation; this keeps
    the relative error small on both tails because the complement is only
    taken when the survival probability is near one.  Exact edge cases:
    returns 1.0 for k below the support and 0.0 for k at or above its top.
    """
    k = int(k)
    population = int(population)
    draws = int(draws)
    successes = int(successes)
    if population < 0:
        raise ValueError(f"population must be nonnegative, got {population}")
    if not 0 <= draws <= population:
        raise ValueError(f"draws must lie in [0, population={population}], got {draws}")
    if not 0 <= successes <= population:
        raise ValueError(
            f"successes must lie in [0, population={population}], got {successes}")

    lo = max(0, draws + successes - population)
    hi = min(draws, successes)
    if k < lo:
        return 1.0
    if k >= hi:
        return 0.0

    def tail_sum(xs: np.ndarray) -> float:
        logp = (
            _log_comb(successes, xs)
            + _log_comb(population - successes, draws - xs)
            - _log_comb(population, draws)
        )
        return float(math.fsum(np.exp(logp)))

    mode = (draws + 1) * (successes + 1) // (population + 2)
    if k >= mode - 1:
        return min(1.0, tail_sum(np.arange(k + 1, hi + 1)))
    return max(0.0, 1.0 - tail_sum(np.arange(lo, k + 1)))


def _log_comb(n, x):
    return gammaln(n + 1.0) - gammaln(x + 1.0) - gammaln(n - x + 1.0)


def pvalue(counts: CountPair, epsilon: float, rng: np.random.Generator,
           thinning_replicates: int = 1) -> PValuePair:
    """One-sided Fisher p-values for the two thinned contingency tables.

    For the upper test, ``c1`` is thinned to ``c1_bar ~ Binomial(c1, e^-eps)``
    and the p-value is  P(X >= c1_bar)  for X hypergeometric with population
    2n, n draws, and ``c1_bar + c2`` successes; the lower test swaps roles.
    One thinning draw per test by default; ``thinning_replicates > 1``
    averages the p-values over that many independent thinnings (variance
    reduction only, the default matches the single-draw procedure).

    The rng is consumed in a fixed order: c1 uniforms then c2 uniforms, per
    replicate.
    """
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    reps = int(thinning_replicates)
    if reps < 1:
        raise ValueError(f"thinning_replicates must be positive, got {reps}")
    n = counts.n
    uppers = []
    lowers = []
    for _ in range(reps):
        c1_bar = binomial_thin(counts.c1, epsilon, rng.random(counts.c1))
        uppers.append(hypergeom_sf(c1_bar - 1, 2 * n, n, c1_bar + counts.c2))
        c2_bar = binomial_thin(counts.c2, epsilon, rng.random(counts.c2))
        lowers.append(hypergeom_sf(c2_bar - 1, 2 * n, n, c2_bar + counts.c1))
    return PValuePair(p_upper=math.fsum(uppers) / reps,
                      p_lower=math.fsum(lowers) / reps)
