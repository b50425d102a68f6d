import itertools
import math

import mpmath
import numpy as np
import pytest

from museeg.errors import (
    DegenerateDifferencesError,
    DegenerateInputError,
    LengthMismatchError,
)
from museeg.stats import (
    mann_whitney_u,
    paired_t,
    regularized_incomplete_beta,
    t_two_sided_p,
    welch_t,
)

mpmath.mp.dps = 40


def t_two_sided_oracle(t, df):
    """Independent oracle: numerically integrate the t density."""
    t = abs(t)
    df = mpmath.mpf(df)
    c = mpmath.gamma((df + 1) / 2) / (mpmath.sqrt(df * mpmath.pi) * mpmath.gamma(df / 2))

    def pdf(x):
        return c * (1 + x * x / df) ** (-(df + 1) / 2)

    return float(2 * mpmath.quad(pdf, [t, mpmath.inf]))


def mw_exact_oracle(a, b):
    """Brute-force enumeration over all C(n1+n2, n1) group assignments."""
    combined = list(a) + list(b)
    n1 = len(a)
    order = sorted(range(len(combined)), key=combined.__getitem__)
    ranks = [0.0] * len(combined)
    for r, idx in enumerate(order):
        ranks[idx] = r + 1.0
    u_obs = sum(ranks[:n1]) - n1 * (n1 + 1) / 2.0
    u_min = min(u_obs, n1 * len(b) - u_obs)
    # both tails: assignments at least as extreme as observed
    lo = hi = total = 0
    for subset in itertools.combinations(range(1, len(combined) + 1), n1):
        u = sum(subset) - n1 * (n1 + 1) / 2.0
        total += 1
        if u <= u_min:
            lo += 1
        if u >= n1 * len(b) - u_min:
            hi += 1
    return min(1.0, (lo + hi) / total)


class TestTCdf:
    @pytest.mark.parametrize("t", [0.1, 0.5, 1.0, 2.0, 3.5, 7.0, 15.0])
    @pytest.mark.parametrize("df", [1, 2, 5, 9.3, 18, 40])
    def test_against_quadrature_oracle(self, t, df):
        mine = t_two_sided_p(t, df)
        oracle = t_two_sided_oracle(t, df)
        assert abs(mine - oracle) <= 1e-10 * max(oracle, 1e-30) + 1e-15

    def test_incomplete_beta_bounds(self):
        assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
        assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0

    def test_incomplete_beta_symmetry(self):
        a, b, x = 3.5, 0.5, 0.42
        lhs = regularized_incomplete_beta(a, b, x)
        rhs = 1.0 - regularized_incomplete_beta(b, a, 1.0 - x)
        assert abs(lhs - rhs) < 1e-12


class TestWelch:
    def test_identical_samples(self):
        r = welch_t([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert r.statistic == 0.0
        assert r.p_two_sided == 1.0

    def test_against_oracle(self):
        r = welch_t([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
        # hand-derived: means 3 and 4, var 2.5 each, se² = 1, t = −1, df = 8
        assert r.statistic == pytest.approx(-1.0)
        assert r.df == pytest.approx(8.0)
        assert abs(r.p_two_sided - t_two_sided_oracle(1.0, 8.0)) < 1e-6

    def test_degenerate(self):
        with pytest.raises(DegenerateInputError):
            welch_t([1.0, 1.0, 1.0], [1.0, 1.0, 1.0])

    def test_symmetry(self, rng):
        a = list(rng.normal(0, 1, 8))
        b = list(rng.normal(0.7, 2, 11))
        r1 = welch_t(a, b)
        r2 = welch_t(b, a)
        assert r1.statistic == -r2.statistic
        assert r1.p_two_sided == r2.p_two_sided

    def test_shift_invariance(self, rng):
        a = rng.normal(0, 1, 9)
        b = rng.normal(1, 1.5, 12)
        r1 = welch_t(a, b)
        r2 = welch_t(a + 5.0, b + 5.0)
        assert abs(r1.statistic - r2.statistic) < 1e-12
        assert abs(r1.p_two_sided - r2.p_two_sided) < 1e-12

    def test_monotonic_in_separation(self, rng):
        a = rng.normal(0, 1, 10)
        b0 = rng.normal(0, 1, 10)
        last_p = None
        for shift in np.linspace(0, 3, 13):
            p = welch_t(a, b0 + shift).p_two_sided if shift else welch_t(a, b0).p_two_sided
            if last_p is not None:
                assert p <= last_p + 1e-12
            last_p = p


class TestMannWhitney:
    def test_exact_simple_case(self):
        r = mann_whitney_u([1, 2], [3, 4])
        assert r.statistic == 0.0
        assert r.df is None
        assert r.p_two_sided == pytest.approx(2.0 / 6.0)

    def test_complete_tie(self):
        r = mann_whitney_u([5.0, 5.0, 5.0], [5.0, 5.0])
        assert r.statistic == pytest.approx(3.0 * 2.0 / 2.0)
        assert r.p_two_sided == 1.0

    def test_same_multiset(self):
        r = mann_whitney_u([1.0, 2.0, 7.0], [7.0, 1.0, 2.0])
        assert abs(r.p_two_sided - 1.0) < 1e-9

    def test_exact_matches_enumeration(self, rng):
        for _ in range(25):
            n1 = int(rng.integers(2, 7))
            n2 = int(rng.integers(2, 13 - n1))
            vals = rng.permutation(np.arange(1.0, n1 + n2 + 1.0))
            a, b = list(vals[:n1]), list(vals[n1:])
            mine = mann_whitney_u(a, b).p_two_sided
            oracle = mw_exact_oracle(a, b)
            assert mine == pytest.approx(oracle, abs=1e-12), (a, b)

    def test_large_samples_use_normal_approximation(self, rng):
        a = list(rng.normal(0, 1, 30))
        b = list(rng.normal(1, 1, 30))
        r = mann_whitney_u(a, b)
        assert 0.0 <= r.p_two_sided <= 1.0


class TestPairedT:
    def test_constant_shift_degenerate(self):
        with pytest.raises(DegenerateDifferencesError):
            paired_t([1.0, 2.0, 3.0], [3.0, 4.0, 5.0])

    def test_identical_degenerate(self):
        with pytest.raises(DegenerateDifferencesError):
            paired_t([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            paired_t([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_against_oracle(self):
        r = paired_t([1, 2, 3, 4], [2, 2, 4, 5])
        # differences (−1, 0, −1, −1): mean −0.75, sd 0.5, t = −3, df = 3
        assert r.statistic == pytest.approx(-3.0)
        assert r.df == 3
        assert abs(r.p_two_sided - t_two_sided_oracle(3.0, 3.0)) < 1e-6

    def test_shift_invariance(self, rng):
        a = rng.normal(0, 1, 10)
        b = rng.normal(0.5, 1, 10)
        r1 = paired_t(a, b)
        r2 = paired_t(a + 3.0, b + 3.0)
        assert abs(r1.statistic - r2.statistic) < 1e-12
