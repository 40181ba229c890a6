import math
from fractions import Fraction

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from dpverify.stats import (CountPair, PValuePair, binomial_thin, hypergeom_sf,
                            pvalue)


def hypergeom_sf_oracle(k, population, draws, successes):
    """Exact rational enumeration of P(X > k)."""
    lo = max(0, draws + successes - population)
    hi = min(draws, successes)
    total = math.comb(population, draws)
    acc = 0
    for x in range(max(k + 1, lo), hi + 1):
        acc += math.comb(successes, x) * math.comb(population - successes, draws - x)
    return Fraction(acc, total)


class TestCountPair:
    def test_validation(self):
        CountPair(0, 10, 10)
        with pytest.raises(ValueError):
            CountPair(11, 0, 10)
        with pytest.raises(ValueError):
            CountPair(-1, 0, 10)


class TestPValuePair:
    def test_bounds(self):
        p = PValuePair(0.2, 0.9)
        assert p.smallest() == 0.2
        with pytest.raises(ValueError):
            PValuePair(1.5, 0.0)


class TestBinomialThin:
    def test_epsilon_zero_keeps_everything(self):
        rng = np.random.default_rng(0)
        assert binomial_thin(10, 0.0, rng.random(10)) == 10

    def test_zero_count(self):
        assert binomial_thin(0, 3.0, np.empty(0)) == 0

    def test_requires_enough_uniforms(self):
        with pytest.raises(ValueError):
            binomial_thin(5, 1.0, np.random.default_rng(0).random(3))

    def test_negative_epsilon_rejected(self):
        with pytest.raises(ValueError):
            binomial_thin(5, -0.1, np.random.default_rng(0).random(5))

    def test_monotone_in_epsilon_for_shared_uniforms(self):
        u = np.random.default_rng(42).random(500)
        values = [binomial_thin(500, eps, u) for eps in np.linspace(0, 3, 40)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_goodness_of_fit_against_binomial(self):
        # Monte Carlo oracle: thinned counts follow Binomial(c, e^-eps).
        rng = np.random.default_rng(2024)
        c, eps, reps = 100_000, math.log(2.0), 200
        draws = np.array([binomial_thin(c, eps, rng.random(c)) for _ in range(reps)])
        assert abs(draws.mean() - c * 0.5) < 5 * math.sqrt(c * 0.25 / reps)


class TestHypergeomSf:
    def test_small_case_exact(self):
        # Enumerating C(2,k) C(2,2-k) / C(4,2): P(X > 1) = 1/6.
        assert hypergeom_sf(1, 4, 2, 2) == pytest.approx(1.0 / 6.0, rel=1e-13)

    def test_below_support_is_one(self):
        assert hypergeom_sf(-1, 30, 10, 5) == 1.0

    def test_top_of_support_is_zero(self):
        assert hypergeom_sf(10, 30, 10, 20) == 0.0

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            hypergeom_sf(1, 10, 11, 5)
        with pytest.raises(ValueError):
            hypergeom_sf(1, 10, 5, 11)

    def test_matches_scipy_far_tail(self):
        ours = hypergeom_sf(80, 2000, 1000, 100)
        ref = scipy.stats.hypergeom.sf(80, 2000, 100, 1000)
        assert ours == pytest.approx(ref, rel=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(st.data())
    def test_matches_rational_enumeration(self, data):
        population = data.draw(st.integers(1, 60))
        draws = data.draw(st.integers(0, population))
        successes = data.draw(st.integers(0, population))
        lo = max(0, draws + successes - population)
        hi = min(draws, successes)
        k = data.draw(st.integers(lo - 1, hi))
        exact = hypergeom_sf_oracle(k, population, draws, successes)
        ours = hypergeom_sf(k, population, draws, successes)
        if exact == 0:
            assert ours == 0.0
        else:
            assert abs(ours - float(exact)) <= 1e-12 * float(exact)


class TestPValue:
    def test_zero_c1_gives_upper_one(self):
        rng = np.random.default_rng(0)
        pair = pvalue(CountPair(0, 37, 100), 1.0, rng)
        assert pair.p_upper == 1.0

    def test_full_counts_epsilon_zero(self):
        # successes equal the population, so the draw is forced: p = 1.
        rng = np.random.default_rng(0)
        pair = pvalue(CountPair(50, 50, 50), 0.0, rng)
        assert pair.p_upper == 1.0
        assert pair.p_lower == 1.0

    def test_gross_violation_vanishing_pvalue(self):
        rng = np.random.default_rng(0)
        pair = pvalue(CountPair(900, 100, 1000), 0.0, rng)
        assert pair.smallest() < 1e-10

    def test_degenerate_all_zero(self):
        rng = np.random.default_rng(0)
        pair = pvalue(CountPair(0, 0, 10), 0.5, rng)
        assert pair.p_upper == 1.0 and pair.p_lower == 1.0

    def test_pvalues_in_unit_interval(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(1, 200))
            c1 = int(rng.integers(0, n + 1))
            c2 = int(rng.integers(0, n + 1))
            eps = float(rng.uniform(0, 2))
            pair = pvalue(CountPair(c1, c2, n), eps, rng)
            assert 0.0 <= pair.p_upper <= 1.0
            assert 0.0 <= pair.p_lower <= 1.0

    def test_upper_pvalue_monotone_in_epsilon_shared_stream(self):
        # Identical generator state per epsilon shares the thinning uniforms.
        pairs = []
        for eps in np.linspace(0.0, 2.0, 21):
            rng = np.random.default_rng(99)
            pairs.append(pvalue(CountPair(400, 100, 1000), eps, rng).p_upper)
        assert all(a <= b + 1e-15 for a, b in zip(pairs, pairs[1:]))

    def test_thinning_replicates_average(self):
        rng1 = np.random.default_rng(5)
        rng2 = np.random.default_rng(5)
        single = pvalue(CountPair(300, 200, 1000), 0.4, rng1)
        averaged = pvalue(CountPair(300, 200, 1000), 0.4, rng2,
                          thinning_replicates=32)
        assert 0.0 <= averaged.p_upper <= 1.0
        # Averaging cannot leave [min, max] of achievable p-values.
        assert averaged.p_upper != single.p_upper or averaged.p_lower == single.p_lower

    def test_type_one_error_calibration_null_boundary(self):
        # c1 ~ B(n, e^eps q), c2 ~ B(n, q): rejecting the upper null at alpha
        # should not happen more often than alpha (plus Monte Carlo slack).
        rng = np.random.default_rng(7)
        n, q, eps, alpha, reps = 400, 0.2, 0.5, 0.05, 600
        rejects = 0
        for _ in range(reps):
            c1 = rng.binomial(n, min(1.0, math.exp(eps) * q))
            c2 = rng.binomial(n, q)
            if pvalue(CountPair(c1, c2, n), eps, rng).p_upper <= alpha:
                rejects += 1
        bound = alpha + 3 * math.sqrt(alpha * (1 - alpha) / reps)
        assert rejects / reps <= bound
