"""Two-sample contrasts: Welch's t, Mann-Whitney U, and the paired t.

All p-values are two-sided; directionality is carried by the statistic's
sign. The t CDF is computed here via the regularized incomplete beta
function (continued fraction) so the package needs no statistical
dependency and the tests can check it against an independent
implementation. Mann-Whitney uses midranks; the exact two-sided p comes
from the full null distribution when n1 + n2 ≤ 20 and there are no ties,
otherwise a normal approximation with tie and continuity corrections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateDifferencesError,
    DegenerateInputError,
    LengthMismatchError,
)

EXACT_MW_MAX_N = 20


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: Optional[float]
    p_two_sided: float
    n1: int
    n2: int
    method: str  # "welch" | "mannwhitney" | "paired"

    def __post_init__(self):
        if not (0.0 <= self.p_two_sided <= 1.0):
            raise ValueError(f"p must be in [0, 1], got {self.p_two_sided}")


# --- regularized incomplete beta (Lentz continued fraction) -----------------

_TINY = 1e-300
_EPS = 1e-15
_MAX_ITER = 500


def _betacf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, df: float) -> float:
    """P(T > t) for Student's t with df degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    if t == 0:
        return 0.5
    p_abs = regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
    return p_abs / 2.0 if t > 0 else 1.0 - p_abs / 2.0


def t_two_sided_p(t: float, df: float) -> float:
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


# --- the three contrasts -----------------------------------------------------


def _as_samples(x: Sequence[float], name: str, min_n: int = 2) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or len(arr) < min_n:
        raise ValueError(f"{name} must be 1-D with at least {min_n} values")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def welch_t(a: Sequence[float], b: Sequence[float]) -> TestResult:
    """Welch's unequal-variance t with Welch-Satterthwaite df."""
    x = _as_samples(a, "a")
    y = _as_samples(b, "b")
    n1, n2 = len(x), len(y)
    v1 = x.var(ddof=1)
    v2 = y.var(ddof=1)
    if v1 == 0 and v2 == 0:
        raise DegenerateInputError("both groups have zero variance")
    se2 = v1 / n1 + v2 / n2
    t = (x.mean() - y.mean()) / math.sqrt(se2)
    df = se2**2 / ((v1 / n1) ** 2 / (n1 - 1) + (v2 / n2) ** 2 / (n2 - 1))
    return TestResult(
        statistic=float(t),
        df=float(df),
        p_two_sided=t_two_sided_p(t, df) if t != 0 else 1.0,
        n1=n1,
        n2=n2,
        method="welch",
    )


def paired_t(a: Sequence[float], b: Sequence[float]) -> TestResult:
    """One-sample t on the paired differences a − b, df = n − 1."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if len(x) != len(y):
        raise LengthMismatchError(f"paired samples differ in length: {len(x)} vs {len(y)}")
    x = _as_samples(x, "a")
    y = _as_samples(y, "b")
    d = x - y
    sd = d.std(ddof=1)
    if sd == 0:
        raise DegenerateDifferencesError("paired differences have zero spread")
    n = len(d)
    t = d.mean() / (sd / math.sqrt(n))
    df = n - 1
    return TestResult(
        statistic=float(t),
        df=float(df),
        p_two_sided=t_two_sided_p(t, df) if t != 0 else 1.0,
        n1=n,
        n2=n,
        method="paired",
    )


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@lru_cache(maxsize=256)
def _u_counts(n1: int, n2: int) -> tuple[int, ...]:
    """Null distribution of U over 0..n1·n2: counts across all C(n1+n2, n1)
    rank assignments (tie-free case).

    Walk the combined ranks in increasing order. Placing a group-1 member
    after j group-2 members contributes j to U1 (it exceeds those j values).
    State: (group-1 members placed, accumulated U).
    """
    max_u = n1 * n2
    g = [[0] * (max_u + 1) for _ in range(n1 + 1)]
    g[0][0] = 1
    for pos in range(n1 + n2):
        new = [[0] * (max_u + 1) for _ in range(n1 + 1)]
        for k in range(min(pos, n1) + 1):
            placed2 = pos - k
            for u, ways in enumerate(g[k]):
                if ways == 0:
                    continue
                if placed2 < n2:
                    new[k][u] += ways
                if k < n1:
                    new[k + 1][u + placed2] += ways
        g = new
    return tuple(g[n1])


def mann_whitney_u(a: Sequence[float], b: Sequence[float]) -> TestResult:
    """Mann-Whitney U with midrank ties.

    Exact two-sided p (full null enumeration) when n1 + n2 ≤ 20 and the
    combined sample is tie-free; otherwise normal approximation with tie
    correction and a 0.5 continuity correction. The reported statistic is
    U for the first sample.
    """
    x = _as_samples(a, "a")
    y = _as_samples(b, "b")
    n1, n2 = len(x), len(y)
    combined = np.concatenate([x, y])
    ranks = _midranks(combined)
    r1 = ranks[:n1].sum()
    u1 = r1 - n1 * (n1 + 1) / 2.0
    u2 = n1 * n2 - u1
    has_ties = len(np.unique(combined)) < len(combined)

    if not has_ties and n1 + n2 <= EXACT_MW_MAX_N:
        counts = _u_counts(n1, n2)
        total = sum(counts)
        u_min = min(u1, u2)
        cum = sum(counts[u] for u in range(int(u_min) + 1))
        p = min(1.0, 2.0 * cum / total)
        return TestResult(
            statistic=float(u1), df=None, p_two_sided=p, n1=n1, n2=n2,
            method="mannwhitney",
        )

    # normal approximation with tie correction
    n = n1 + n2
    _, tie_counts = np.unique(combined, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts))
    correction = 1.0 - tie_term / (n**3 - n)
    if correction <= 0:
        # complete tie: every value identical, U is exactly its null mean
        return TestResult(
            statistic=float(u1), df=None, p_two_sided=1.0, n1=n1, n2=n2,
            method="mannwhitney",
        )
    sigma = math.sqrt(correction * n1 * n2 * (n + 1) / 12.0)
    mu = n1 * n2 / 2.0
    z = max(0.0, max(u1, u2) - mu - 0.5) / sigma
    p = min(1.0, 2.0 * normal_sf(z))
    return TestResult(
        statistic=float(u1), df=None, p_two_sided=p, n1=n1, n2=n2,
        method="mannwhitney",
    )
