"""Nonparametric tests used for flagging.

Mann-Whitney rank-sum (exact permutation distribution for small samples, tie
corrected normal approximation otherwise), Wilcoxon signed-rank, Pearson
chi-square on 2x2 tables and the Bonferroni threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InsufficientDataError, ValidationError
from .kernels import midranks

EXACT_MAX_N = 20
_SQRT2 = math.sqrt(2.0)
ALTERNATIVES = ("two-sided", "greater", "less")


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str

    def to_dict(self):
        return {"statistic": self.statistic, "p_value": self.p_value, "method": self.method}


def normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / _SQRT2)


def _normal_p(dev: float, sd: float, alternative: str) -> float:
    """p-value for a centred statistic ``dev`` with continuity correction 0.5."""
    if alternative == "two-sided":
        z = max(abs(dev) - 0.5, 0.0) / sd
        return min(1.0, 2.0 * normal_sf(z))
    if alternative == "less":
        dev = -dev
    return normal_sf((dev - 0.5) / sd)


def _check_alternative(alternative):
    if alternative not in ALTERNATIVES:
        raise ValidationError(f"alternative must be one of {ALTERNATIVES}")


def _exact_rank_sum_counts(doubled_ranks: np.ndarray, n1: int) -> np.ndarray:
    """counts[s] = number of size-n1 subsets whose doubled-rank sum is s."""
    total = int(doubled_ranks.sum())
    dp = np.zeros((n1 + 1, total + 1), dtype=np.int64)
    dp[0, 0] = 1
    for r in doubled_ranks.astype(np.int64):
        for j in range(n1, 0, -1):
            dp[j, r:] += dp[j - 1, : total + 1 - r]
    return dp[n1]


def rank_sum_test(x, y, alternative: str = "two-sided", exact: bool | None = None) -> TestResult:
    """Mann-Whitney U test of ``x`` against ``y``.

    ``statistic`` is U for ``x``. With ``exact=None`` the exact conditional
    permutation distribution (ties included) is used when ``len(x)+len(y) <= 20``.
    Two-sided exact p-values count rank sums at least as far from their mean
    as the observed one.
    """
    _check_alternative(alternative)
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    n1, n2 = x.size, y.size
    if n1 < 5 or n2 < 5:
        raise InsufficientDataError(f"rank-sum test needs >= 5 values per sample, got {n1}, {n2}")
    n = n1 + n2
    ranks, tie = midranks(np.concatenate([x, y]))
    if tie == n ** 3 - n:
        raise DegenerateInputError("all values are tied; rank-sum test undefined")
    r1 = float(ranks[:n1].sum())
    u1 = r1 - n1 * (n1 + 1) / 2.0
    if exact is None:
        exact = n <= EXACT_MAX_N
    if exact:
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        counts = _exact_rank_sum_counts(doubled, n1).astype(np.float64)
        sums = np.arange(counts.size)
        obs = int(doubled[:n1].sum())
        total = counts.sum()
        if alternative == "two-sided":
            centre = n1 * (n + 1)  # mean of the doubled rank sum
            far = np.abs(sums - centre) >= abs(obs - centre)
            p = counts[far].sum() / total
        elif alternative == "greater":
            p = counts[sums >= obs].sum() / total
        else:
            p = counts[sums <= obs].sum() / total
        return TestResult(u1, float(min(1.0, p)), "exact")
    mu = n1 * n2 / 2.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie / (n * (n - 1)))
    return TestResult(u1, _normal_p(u1 - mu, math.sqrt(var), alternative), "normal")


def signed_rank_test(diffs, alternative: str = "two-sided") -> TestResult:
    """Wilcoxon signed-rank test on paired differences (zeros dropped).

    Normal approximation with tie and continuity correction; ``statistic`` is
    the positive rank sum.
    """
    _check_alternative(alternative)
    d = np.asarray(diffs, dtype=np.float64).ravel()
    d = d[d != 0.0]
    n = d.size
    if n < 5:
        raise InsufficientDataError(f"signed-rank test needs >= 5 non-zero differences, got {n}")
    ranks, tie = midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie / 48.0
    if var <= 0.0:
        raise DegenerateInputError("signed-rank variance is zero")
    return TestResult(w_plus, _normal_p(w_plus - mu, math.sqrt(var), alternative), "normal")


def chi_square_test(table) -> TestResult:
    """Pearson chi-square test of independence on a 2x2 table (1 df, no Yates)."""
    t = np.asarray(table, dtype=np.float64)
    if t.shape != (2, 2):
        raise ValidationError(f"expected a 2x2 table, got shape {t.shape}")
    if np.any(t < 0):
        raise ValidationError("counts must be non-negative")
    rows = t.sum(axis=1)
    cols = t.sum(axis=0)
    total = t.sum()
    if np.any(rows == 0) or np.any(cols == 0):
        raise DegenerateInputError("a 2x2 table with a zero margin has no test")
    expected = np.outer(rows, cols) / total
    if np.any(expected < 1.0):
        raise InsufficientDataError("chi-square approximation needs expected counts >= 1")
    stat = float(((t - expected) ** 2 / expected).sum())
    return TestResult(stat, math.erfc(math.sqrt(stat / 2.0)), "pearson")


def bonferroni_alpha(alpha: float, n_tests: int) -> float:
    if not 0.0 < alpha < 0.5:
        raise ValidationError("alpha must be in (0, 0.5)")
    if n_tests < 1:
        raise ValidationError("n_tests must be >= 1")
    return alpha / n_tests
