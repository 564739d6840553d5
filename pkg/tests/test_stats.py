from itertools import combinations

import numpy as np
import pytest
from scipy import stats as sps

from aabaudit.errors import DegenerateInputError, InsufficientDataError
from aabaudit.stats import (bonferroni_alpha, chi_square_test, normal_sf, rank_sum_test,
                            signed_rank_test)


def test_bonferroni():
    assert bonferroni_alpha(0.05, 15) == pytest.approx(0.05 / 15)
    assert round(bonferroni_alpha(0.05, 15), 4) == 0.0033
    assert bonferroni_alpha(0.05, 1) == 0.05
    assert bonferroni_alpha(0.01, 4) == pytest.approx(0.0025)


def test_normal_sf():
    for z in (-3.0, -0.5, 0.0, 1.0, 2.5, 8.0):
        assert normal_sf(z) == pytest.approx(sps.norm.sf(z), rel=1e-12)


def test_rank_sum_examples():
    x = np.arange(1, 21, dtype=float)
    assert rank_sum_test(x, x.copy()).p_value >= 0.9
    assert rank_sum_test(x, x + 100).p_value < 1e-6
    with pytest.raises(DegenerateInputError):
        rank_sum_test(np.ones(6), np.ones(7))
    with pytest.raises(InsufficientDataError):
        rank_sum_test([1, 2, 3], [4, 5, 6, 7, 8])


@pytest.mark.parametrize("alt", ["two-sided", "less", "greater"])
def test_rank_sum_normal_matches_scipy(rng, alt):
    for _ in range(20):
        x = np.round(rng.normal(size=rng.integers(15, 60)), 1)  # rounding forces ties
        y = np.round(rng.normal(0.3, size=rng.integers(15, 60)), 1)
        got = rank_sum_test(x, y, alternative=alt, exact=False)
        ref = sps.mannwhitneyu(x, y, alternative=alt, method="asymptotic", use_continuity=True)
        assert got.statistic == ref.statistic
        assert got.p_value == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-15)


def _enumerated_rank_sum_p(x, y, alt):
    """Exact conditional p-value by listing every relabelling."""
    pooled = np.concatenate([x, y])
    ranks = sps.rankdata(pooled)
    n1, n = len(x), len(pooled)
    obs = ranks[:n1].sum()
    centre = n1 * (n + 1) / 2
    hits = total = 0
    for idx in combinations(range(n), n1):
        s = ranks[list(idx)].sum()
        total += 1
        if alt == "two-sided":
            hits += abs(s - centre) >= abs(obs - centre) - 1e-9
        elif alt == "greater":
            hits += s >= obs - 1e-9
        else:
            hits += s <= obs + 1e-9
    return hits / total


@pytest.mark.parametrize("alt", ["two-sided", "less", "greater"])
def test_rank_sum_exact_matches_enumeration(rng, alt):
    for _ in range(15):
        n1, n2 = int(rng.integers(5, 9)), int(rng.integers(5, 9))
        x = rng.integers(0, 6, size=n1).astype(float)
        y = rng.integers(1, 8, size=n2).astype(float)
        if np.all(np.concatenate([x, y]) == x[0]):
            continue
        got = rank_sum_test(x, y, alternative=alt, exact=True)
        assert got.method == "exact"
        assert got.p_value == pytest.approx(_enumerated_rank_sum_p(x, y, alt), abs=1e-12)


def test_rank_sum_exact_without_ties_matches_scipy(rng):
    x, y = rng.normal(size=8), rng.normal(1.0, size=9)
    got = rank_sum_test(x, y)
    ref = sps.mannwhitneyu(x, y, method="exact")
    assert got.p_value == pytest.approx(ref.pvalue, rel=1e-10)


@pytest.mark.parametrize("alt", ["two-sided", "less", "greater"])
def test_signed_rank_matches_scipy(rng, alt):
    for _ in range(20):
        d = np.round(rng.normal(0.2, size=rng.integers(10, 80)), 1)
        got = signed_rank_test(d, alternative=alt)
        ref = sps.wilcoxon(d, alternative=alt, zero_method="wilcox", correction=True,
                           method="approx")
        nz = d[d != 0]
        ranks = sps.rankdata(np.abs(nz))
        assert got.statistic == pytest.approx(ranks[nz > 0].sum())
        assert got.p_value == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-15)


def test_chi_square_examples():
    r = chi_square_test([[50, 50], [50, 50]])
    assert r.statistic == 0.0 and r.p_value == 1.0
    r = chi_square_test([[90, 10], [10, 90]])
    assert r.statistic == pytest.approx(128.0)
    assert r.p_value < 1e-6
    with pytest.raises(DegenerateInputError):
        chi_square_test([[0, 0], [3, 4]])


def test_chi_square_matches_scipy(rng):
    for _ in range(20):
        t = rng.integers(1, 200, size=(2, 2))
        got = chi_square_test(t)
        stat, p, _, _ = sps.chi2_contingency(t, correction=False)
        assert got.statistic == pytest.approx(stat, rel=1e-10)
        assert got.p_value == pytest.approx(p, rel=1e-9, abs=1e-300)
