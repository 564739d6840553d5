from itertools import combinations

import numpy as np
import pytest

from aabaudit.core import EmbeddingSpace
from aabaudit.errors import InsufficientDataError, ValidationError
from aabaudit.metrics import deaa, eaa_values, geaa, rripa
from aabaudit.significance import (EXACT_LIMIT, permutation_test_deaa, permutation_test_geaa,
                                   permutation_test_rripa, random_unit_vectors,
                                   rripa_subsample_test, subset_permutation_null,
                                   validate_direction)
from aabaudit.directions import centroid_difference_direction
from aabaudit.synthetic import PlantedConfig, generate_planted_space

from conftest import group


def _planted(**kw):
    cfg = dict(dim=8, n_A=40, n_B=40, n_E=20, n_P=20, bias_strength=1.0, noise_sigma=0.3, seed=0)
    cfg.update(kw)
    return generate_planted_space(PlantedConfig(**cfg))


def _enumerated_p(vals, k):
    """Two-sided exact p for the subset sum of the first k values (brute force)."""
    vals = np.asarray(vals, dtype=float)
    n = vals.size
    centre = k * vals.sum() / n
    obs = abs(vals[:k].sum() - centre)
    subs = np.array(list(combinations(range(n), k)))
    sums = vals[subs].sum(axis=1)
    return np.mean(np.abs(sums - centre) >= obs - 1e-12)


def test_deaa_exact_small_case_matches_enumeration():
    ps = _planted(n_E=5, n_P=5, bias_strength=0.2, noise_sigma=1.0, seed=3)
    sp, g = ps.space, ps.groups
    E, P = group("E", g["E"].members[:4]), group("P", g["P"].members[:4])
    res = permutation_test_deaa(E, P, g["A"], g["B"], sp, n_perm=1000, seed=1)
    assert res.exact and res.permutations == 70
    vals = eaa_values(E.members + P.members, g["A"], g["B"], sp)
    assert res.p_value == pytest.approx(_enumerated_p(vals, 4), abs=1e-15)
    assert res.observed_stat == pytest.approx(deaa(E, P, g["A"], g["B"], sp), abs=1e-12)


def test_resampled_p_converges_to_exact(rng):
    # C(20, 10) = 184756 > EXACT_LIMIT, so the Monte Carlo path is taken
    vals = rng.normal(size=20)
    vals[:10] += 0.4
    exact_p = _enumerated_p(vals, 10)
    sums, exact = subset_permutation_null(vals, 10, 40000, seed=5, stream=9)
    assert not exact
    centre = 10 * vals.sum() / 20
    mc_p = np.mean(np.abs(sums[:, 0] - centre) >= abs(vals[:10].sum() - centre) - 1e-12)
    se = np.sqrt(exact_p * (1 - exact_p) / 40000)
    assert abs(mc_p - exact_p) < 5 * se + 1e-4


def test_exact_limit_switch():
    vals = np.arange(16.0)
    _, exact = subset_permutation_null(vals, 8, 200, 0, 0)  # C(16, 8) = 12870
    assert exact
    _, exact = subset_permutation_null(np.arange(30.0), 10, 200, 0, 0)
    assert not exact
    assert EXACT_LIMIT == 50_000


def test_complement_draw_matches_direct_draw_distribution(rng):
    # k > n/2 draws the complement; sums must still be size-k subset sums
    vals = (2.0 ** np.arange(24))
    sums, _ = subset_permutation_null(vals, 20, 500, seed=2, stream=1)
    for s in sums[:, 0].astype(np.int64):
        assert bin(int(s)).count("1") == 20


def test_opposite_poles_give_minimal_p():
    ps = _planted(e_alignment=0.8, p_alignment=-0.8, noise_sigma=0.2, n_E=30, n_P=30)
    sp, g = ps.space, ps.groups
    res = permutation_test_deaa(g["E"], g["P"], g["A"], g["B"], sp, n_perm=999, seed=0)
    assert not res.exact
    assert res.p_value == 1 / 1000
    res = permutation_test_geaa(g["E"], g["A"], g["B"], sp, n_perm=999, seed=0)
    assert res.p_value == 1 / 1000
    assert res.observed_stat == pytest.approx(geaa(g["E"], g["A"], g["B"], sp), abs=1e-10)


def test_geaa_extra_groups_share_relabellings():
    ps = _planted(e_alignment=0.5, p_alignment=-0.5)
    sp, g = ps.space, ps.groups
    both = permutation_test_geaa(g["E"], g["A"], g["B"], sp, n_perm=500, seed=4,
                                 extra_groups=(g["P"],))
    alone = permutation_test_geaa(g["P"], g["A"], g["B"], sp, n_perm=500, seed=4)
    assert both[1].observed_stat == pytest.approx(alone.observed_stat, abs=1e-10)
    assert both[1].p_value == alone.p_value


def test_geaa_orthogonal_test_group_rarely_flags():
    rejections = 0
    for s in range(100):
        ps = _planted(e_alignment=0.0, p_alignment=0.0, seed=s, n_A=20, n_B=20, n_E=10, n_P=10)
        g = ps.groups
        # remove the planted component from E so it is exactly orthogonal to the axis
        M = ps.space.matrix.copy()
        rows = ps.space.positions(g["E"].members)
        M[rows] -= np.outer(M[rows] @ ps.direction, ps.direction)
        sp = EmbeddingSpace(ps.space.ids, M)
        res = permutation_test_geaa(g["E"], g["A"], g["B"], sp, n_perm=200, seed=s)
        rejections += res.p_value <= 0.05
    assert rejections <= 10


@pytest.mark.parametrize("workers", [2, 4])
def test_workers_do_not_change_results(workers):
    ps = _planted(n_E=60, n_P=60, noise_sigma=1.0, e_alignment=0.1)
    sp, g = ps.space, ps.groups
    one = permutation_test_deaa(g["E"], g["P"], g["A"], g["B"], sp, n_perm=3500, seed=7,
                                keep_null=True)
    many = permutation_test_deaa(g["E"], g["P"], g["A"], g["B"], sp, n_perm=3500, seed=7,
                                 workers=workers, keep_null=True)
    assert one.p_value == many.p_value
    np.testing.assert_array_equal(one.null_samples, many.null_samples)
    other = permutation_test_deaa(g["E"], g["P"], g["A"], g["B"], sp, n_perm=3500, seed=8,
                                  keep_null=True)
    assert not np.array_equal(one.null_samples, other.null_samples)


def test_p_values_bounded():
    ps = _planted(bias_strength=0.0, noise_sigma=1.0, n_E=15, n_P=15)
    sp, g = ps.space, ps.groups
    for s in range(5):
        p = permutation_test_deaa(g["E"], g["P"], g["A"], g["B"], sp, n_perm=100, seed=s).p_value
        assert 0.0 < p <= 1.0


def test_minimum_permutations():
    ps = _planted()
    g = ps.groups
    with pytest.raises(ValidationError):
        permutation_test_deaa(g["E"], g["P"], g["A"], g["B"], ps.space, n_perm=10)


def test_rripa_permutation():
    ps = _planted(e_alignment=0.7, p_alignment=-0.7)
    sp, g = ps.space, ps.groups
    res = permutation_test_rripa(g["E"], g["P"], ps.direction, sp, n_perm=999, seed=0)
    assert res.p_value == 1 / 1000
    diff = rripa(g["E"], ps.direction, sp) - rripa(g["P"], ps.direction, sp)
    assert res.observed_stat == pytest.approx(diff, abs=1e-12)
    sub = rripa_subsample_test(g["E"], g["P"], ps.direction, sp, n_chunks=10, seed=0)
    assert sub["p_value"] < 1e-3


def test_validation_planted_centroid_passes():
    ps = _planted(n_A=100, n_B=100)
    sp, g = ps.space, ps.groups
    d = centroid_difference_direction(g["A"], g["B"], sp)
    v = validate_direction(d, g["A"], g["B"], sp, n_random=1000, seed=0)
    assert v.passed
    assert max(v.test1_p, v.test2_p, v.test3_p) < 1e-3
    assert v.alpha_corrected == pytest.approx(0.05 / 3)


def test_validation_random_direction_fails_test1():
    ps = _planted(n_A=100, n_B=100)
    sp, g = ps.space, ps.groups
    r = np.random.default_rng(1)
    fails = 0
    for _ in range(20):
        v = random_unit_vectors(1, sp.dim, r)[0]
        v = v - (v @ ps.direction) * ps.direction  # orthogonal to the planted axis
        res = validate_direction(v, g["A"], g["B"], sp, n_random=200, seed=0)
        fails += not res.passed
        assert res.test1_p > 1e-4
    assert fails == 20


def test_validation_small_groups():
    ps = _planted()
    sp, g = ps.space, ps.groups
    with pytest.raises(InsufficientDataError):
        validate_direction(ps.direction, group("A", g["A"].members[:4]), g["B"], sp)


def test_validation_is_deterministic():
    ps = _planted()
    g = ps.groups
    a = validate_direction(ps.direction, g["A"], g["B"], ps.space, n_random=300, seed=9)
    b = validate_direction(ps.direction, g["A"], g["B"], ps.space, n_random=300, seed=9)
    assert a.to_dict() == b.to_dict()


def test_random_unit_vectors_on_sphere(rng):
    R = random_unit_vectors(5000, 6, rng)
    np.testing.assert_allclose(np.linalg.norm(R, axis=1), 1.0, atol=1e-12)
    assert np.all(np.abs(R.mean(axis=0)) < 0.05)


def test_space_type_is_plain():
    assert isinstance(_planted().space, EmbeddingSpace)
