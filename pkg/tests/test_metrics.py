import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aabaudit import oracle
from aabaudit.errors import ContaminationError, DegenerateInputError
from aabaudit.metrics import (compute_bundle, deaa, eaa, eaa_effect_size, eaa_values, geaa,
                              rripa, rripa_effect_size)

from conftest import group, make_space, random_instance


def test_eaa_examples():
    sp = make_space({"e": (1, 0), "a": (1, 0), "b": (0, 1)})
    assert eaa("e", group("A", ["a"]), group("B", ["b"]), sp).value == 1.0

    sp = make_space({"e": (0, 0, 1), "a1": (1, 0, 0), "a2": (0, 1, 0), "b": (1, 1, 0)})
    assert eaa("e", group("A", ["a1", "a2"]), group("B", ["b"]), sp).value == 0.0

    sp = make_space({"e": (1, 0), "a1": (1, 0), "a2": (0, 1), "b": (-1, 0)})
    assert eaa("e", group("A", ["a1", "a2"]), group("B", ["b"]), sp).value == pytest.approx(1.5)


def test_eaa_contamination():
    sp = make_space({"e": (1, 0), "a": (1, 0), "b": (0, 1)})
    with pytest.raises(ContaminationError, match="a"):
        eaa("a", group("A", ["a"]), group("B", ["b"]), sp)


def _line_space(values):
    """Entities whose EAA against A={(1,0),(0,1)}, B={(-1,0)} equals the given values.

    A unit vector at angle t scores 1.5 cos t + 0.5 sin t = R cos(t - phi).
    """
    vecs = {"a1": (1.0, 0.0), "a2": (0.0, 1.0), "b": (-1.0, 0.0)}
    r, phi = np.hypot(1.5, 0.5), np.arctan2(0.5, 1.5)
    for i, v in enumerate(values):
        t = phi + np.arccos(v / r)
        vecs[f"x{i}"] = (np.cos(t), np.sin(t))
    return make_space(vecs)


AB = (group("A", ["a1", "a2"]), group("B", ["b"]))


def test_geaa_and_deaa_examples():
    sp = _line_space([1.0, 1.5, -1.0])
    A, B = AB
    E, P = group("E", ["x0", "x1"]), group("P", ["x2"])
    assert geaa(E, A, B, sp) == pytest.approx(2.5, abs=1e-12)
    assert geaa(P, A, B, sp) == pytest.approx(-1.0, abs=1e-12)
    assert deaa(E, P, A, B, sp) == pytest.approx(3.5, abs=1e-12)


def test_deaa_identical_composition_is_zero():
    sp = _line_space([0.3, -0.7, 0.3, -0.7])
    A, B = AB
    assert deaa(group("E", ["x0", "x1"]), group("P", ["x2", "x3"]), A, B, sp) == 0.0


def test_effect_size_examples():
    sp = _line_space([1.0, 1.0, -1.0, -1.0])
    A, B = AB
    E, P = group("E", ["x0", "x1"]), group("P", ["x2", "x3"])
    assert eaa_effect_size(E, P, A, B, sp) == pytest.approx(2.0, abs=1e-12)

    sp = _line_space([0.2, 0.8, 0.8, 0.2])
    assert eaa_effect_size(E, P, A, B, sp) == pytest.approx(0.0, abs=1e-12)

    sp = _line_space([0.5, 0.5, 0.5, 0.5])
    with pytest.raises(DegenerateInputError):
        eaa_effect_size(E, P, A, B, sp)


def test_rripa_examples():
    sp = make_space({"u": (1, 0), "v": (-1, 0), "w": (1, 0.0001), "z": (-1, 0.0001)})
    psi = np.array([1.0, 0.0])
    assert rripa(group("E", ["u"]), psi, sp) == 1.0
    assert rripa(group("E", ["u", "v"]), psi, sp) == 0.0
    # cosines {1, 1} vs {-1, -1}
    sp = make_space({"u": (2, 0), "w": (5, 0), "v": (-1, 0), "z": (-3, 0)})
    assert rripa_effect_size(group("E", ["u", "w"]), group("P", ["v", "z"]), psi, sp) == 2.0
    sp = make_space({"u": (1, 0), "w": (0, 1), "v": (0, 1), "z": (1, 0)})
    assert rripa_effect_size(group("E", ["u", "w"]), group("P", ["v", "z"]), psi, sp) == 0.0


def test_bundle_matches_oracle(rng):
    for _ in range(30):
        space, (A, B, E, P), psi = random_instance(rng)
        ref = oracle.brute_force_metrics(E.members, P.members, A.members, B.members, psi,
                                         space.vector)
        got = compute_bundle(E, P, A, B, space, psi)
        for key, val in [("geaa_E", got.geaa_E), ("geaa_P", got.geaa_P), ("deaa", got.deaa),
                         ("effect_size", got.effect_size), ("rripa_E", got.rripa_E),
                         ("rripa_P", got.rripa_P), ("rripa_effect", got.rripa_effect)]:
            assert val == pytest.approx(ref[key], abs=1e-10), key


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-4, 1e4))
def test_scale_invariance(seed, scale):
    space, (A, B, E, P), psi = random_instance(np.random.default_rng(seed))
    base = compute_bundle(E, P, A, B, space, psi)
    scaled = compute_bundle(E, P, A, B, space.scaled(scale), psi)
    for key in ("geaa_E", "geaa_P", "deaa", "effect_size", "rripa_E", "rripa_P", "rripa_effect"):
        assert getattr(scaled, key) == pytest.approx(getattr(base, key), abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_antisymmetry_exact(seed):
    space, (A, B, E, P), psi = random_instance(np.random.default_rng(seed))
    fwd = eaa_values(E.members, A, B, space)
    rev = eaa_values(E.members, B, A, space)
    np.testing.assert_array_equal(fwd, -rev)
    assert geaa(E, B, A, space) == -geaa(E, A, B, space)
    assert deaa(P, E, A, B, space) == -deaa(E, P, A, B, space)
    assert deaa(E, P, A, B, space) == geaa(E, A, B, space) - geaa(P, A, B, space)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_ranges(seed):
    space, (A, B, E, P), psi = random_instance(np.random.default_rng(seed))
    x = eaa_values(E.members + P.members, A, B, space)
    assert np.all(np.abs(x) <= 2.0)
    assert -1.0 <= rripa(E, psi, space) <= 1.0


def test_geaa_member_order_invariant(rng):
    space, (A, B, E, P), _ = random_instance(rng)
    shuffled = group("E", list(rng.permutation(E.members)))
    assert geaa(shuffled, A, B, space) == geaa(E, A, B, space)
