import numpy as np
import pytest

from aabaudit.core import EmbeddingSpace, EntityGroup


def make_space(vectors, name="t"):
    """Space from a ``{id: vector}`` dict (insertion order kept)."""
    ids = list(vectors)
    return EmbeddingSpace(ids, np.array([vectors[i] for i in ids], dtype=float), name=name)


def group(name, ids, role="unassigned"):
    return EntityGroup(name, tuple(ids), role)


def random_instance(rng, max_size=10, max_dim=8):
    """Random space with disjoint A, B, E, P of size 1..max_size (2..max_size for E, P)."""
    dim = int(rng.integers(2, max_dim + 1))
    sizes = {"a": rng.integers(1, max_size + 1), "b": rng.integers(1, max_size + 1),
             "e": rng.integers(2, max_size + 1), "p": rng.integers(2, max_size + 1)}
    vecs = {}
    members = {}
    for role, n in sizes.items():
        ids = [f"{role}{i}" for i in range(int(n))]
        members[role] = ids
        for i in ids:
            vecs[i] = rng.normal(size=dim) * rng.uniform(0.1, 10.0)
    space = make_space(vecs)
    groups = (group("A", members["a"], "A"), group("B", members["b"], "B"),
              group("E", members["e"], "E"), group("P", members["p"], "P"))
    psi = rng.normal(size=dim)
    return space, groups, psi / np.linalg.norm(psi)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
