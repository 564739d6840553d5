import itertools

import numpy as np
import pytest
from scipy import stats as sps

from aabaudit.core import EntityGroup
from aabaudit.directions import centroid_difference_direction
from aabaudit.errors import ValidationError
from aabaudit.io import write_embeddings
from aabaudit.metrics import deaa, geaa
from aabaudit.significance import permutation_test_deaa, validate_direction
from aabaudit.synthetic import (InteractionLog, PlantedConfig, generate_interaction_log,
                                generate_planted_space, train_toy_mf)


def test_planted_is_seed_deterministic(tmp_path):
    cfg = PlantedConfig(seed=11, n_background=20, nuisance_scale=1.0)
    write_embeddings(generate_planted_space(cfg).space, tmp_path / "a.tsv")
    write_embeddings(generate_planted_space(PlantedConfig.from_dict(cfg.to_dict())).space,
                     tmp_path / "b.tsv")
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    write_embeddings(generate_planted_space(PlantedConfig(seed=12)).space, tmp_path / "c.tsv")
    assert (tmp_path / "a.tsv").read_bytes() != (tmp_path / "c.tsv").read_bytes()


def test_planted_layout():
    ps = generate_planted_space(PlantedConfig(n_A=7, n_B=8, n_E=9, n_P=10, n_background=3))
    assert [len(ps.groups[r]) for r in "ABEP"] == [7, 8, 9, 10]
    assert len(ps.space) == 37
    assert np.linalg.norm(ps.direction) == pytest.approx(1.0)
    space, groups, g = ps
    assert space is ps.space


def test_planted_config_validation():
    with pytest.raises(ValidationError):
        PlantedConfig(noise_sigma=-1)
    with pytest.raises(ValidationError):
        PlantedConfig(e_alignment=2.0)


def test_noiseless_centroid_exact():
    ps = generate_planted_space(PlantedConfig(noise_sigma=0.0, bias_strength=1.0))
    d = centroid_difference_direction(ps.groups["A"], ps.groups["B"], ps.space)
    assert d.vector @ ps.direction == pytest.approx(1.0, abs=1e-10)


def test_null_config_fails_validation():
    failures = 0
    for s in range(10):
        ps = generate_planted_space(PlantedConfig(bias_strength=0.0, noise_sigma=1.0, seed=s))
        g = ps.groups
        v = validate_direction(ps.direction, g["A"], g["B"], ps.space, n_random=200, seed=s)
        failures += not v.passed
    assert failures == 10


def test_strong_separation_minimal_p():
    ps = generate_planted_space(PlantedConfig(bias_strength=1.0, noise_sigma=0.2,
                                              e_alignment=0.8, p_alignment=-0.8, seed=5))
    g = ps.groups
    res = permutation_test_deaa(g["E"], g["P"], g["A"], g["B"], ps.space, n_perm=1000, seed=5)
    assert res.p_value == 1 / 1001


def test_deaa_grows_with_bias_strength():
    grid = [0.1, 0.25, 0.5, 0.75, 1.0]
    means = []
    for c in grid:
        vals = []
        for s in range(20):
            ps = generate_planted_space(PlantedConfig(bias_strength=c, noise_sigma=0.5,
                                                      e_alignment=0.5, p_alignment=-0.5, seed=s))
            g = ps.groups
            vals.append(abs(deaa(g["E"], g["P"], g["A"], g["B"], ps.space)))
        means.append(np.mean(vals))
    assert sps.spearmanr(grid, means).statistic > 0.9


def test_validation_pass_is_monotone_in_bias_strength():
    # fit on one half, validate on the other, as the audit pipeline does
    grid = [0.0, 0.2, 0.4, 0.8, 1.6]
    for s in range(20):
        passed = []
        for c in grid:
            ps = generate_planted_space(PlantedConfig(dim=8, n_A=40, n_B=40, bias_strength=c,
                                                      noise_sigma=0.5, seed=s))
            A, B = ps.groups["A"], ps.groups["B"]
            d = centroid_difference_direction(EntityGroup("A", A.members[:20]),
                                              EntityGroup("B", B.members[:20]), ps.space)
            v = validate_direction(d, EntityGroup("A", A.members[20:]),
                                   EntityGroup("B", B.members[20:]), ps.space, n_random=200,
                                   seed=s)
            passed.append(v.passed)
        first = passed.index(True) if True in passed else len(passed)
        assert all(passed[first:]), (s, passed)
        assert not passed[0] and passed[-1]


def test_interaction_log_skew():
    log = generate_interaction_log(seed=1)
    R = log.matrix() > 0
    a = np.array([log.user_attribute[u] == "A" for u in log.users])
    x = np.array([log.item_genre[i] == "X" for i in log.items])
    rate_a = R[np.ix_(a, x)].mean()
    rate_b = R[np.ix_(~a, x)].mean()
    assert rate_a / rate_b == pytest.approx(4.0, rel=0.25)
    with pytest.raises(ValidationError):
        InteractionLog(users=("u",), items=("i",), triples=[("u", "i", 0.0)])


def test_rank_one_log_gives_collinear_items():
    users = tuple(f"u{i}" for i in range(12))
    items = tuple(f"i{i}" for i in range(6))
    log = InteractionLog(users, items, [(u, i, 1.0) for u in users for i in items],
                         user_attribute={u: "A" if k % 2 else "B" for k, u in enumerate(users)})
    sp = train_toy_mf(log, dim=4, use_attribute=False, seed=0)
    Y = sp.unit_vectors(items)
    for a, b in itertools.combinations(range(len(items)), 2):
        assert Y[a] @ Y[b] >= 0.99


def test_mf_deterministic_and_variant_tags():
    log = generate_interaction_log(n_users=60, n_items=40, seed=2)
    a = train_toy_mf(log, dim=8, epochs=5, seed=3)
    b = train_toy_mf(log, dim=8, epochs=5, seed=3)
    np.testing.assert_array_equal(a.matrix, b.matrix)
    assert a.variant_tag == "with-attribute"
    c = train_toy_mf(log, dim=8, epochs=5, seed=3, use_attribute=False)
    assert c.variant_tag == "without-attribute"
    assert a.ids == log.users + log.items


def test_mf_removal_reduces_genre_association():
    log = generate_interaction_log(seed=0)
    A, B = log.attribute_group("A"), log.attribute_group("B")
    X = log.genre_group("X")
    wg = train_toy_mf(log, use_attribute=True, seed=0)
    ng = train_toy_mf(log, use_attribute=False, seed=0)
    assert abs(geaa(X, A, B, ng)) < abs(geaa(X, A, B, wg))
    assert abs(geaa(X, A, B, ng)) > 0
