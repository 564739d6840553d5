"""Embedding spaces, entity groups and the elementary vector statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateInputError,
    InsufficientDataError,
    MissingEntityError,
    ValidationError,
)

ROLES = ("A", "B", "E", "P", "unassigned")
_PARTNER = {"A": "B", "B": "A", "E": "P", "P": "E"}


class EmbeddingSpace:
    """Immutable id-indexed matrix of float64 entity vectors.

    Rows must be finite, non-zero and share one dimension >= 2; at least two
    rows are required. Vectors are never assumed to be unit length.
    """

    def __init__(self, ids: Sequence[str], matrix, name: str = "space", variant_tag: str = "",
                 metadata: dict | None = None):
        ids = [str(i) for i in ids]
        mat = np.array(matrix, dtype=np.float64, copy=True)
        if mat.ndim != 2:
            raise ValidationError(f"embedding matrix must be 2-D, got shape {mat.shape}")
        if mat.shape[0] != len(ids):
            raise ValidationError(f"{len(ids)} ids for {mat.shape[0]} rows")
        if mat.shape[0] < 2:
            raise ValidationError("an embedding space needs at least 2 rows")
        if mat.shape[1] < 2:
            raise ValidationError("embedding dimension must be at least 2")
        index = {}
        for pos, eid in enumerate(ids):
            if not eid:
                raise ValidationError(f"empty entity id at row {pos}")
            if eid in index:
                raise ValidationError(f"duplicate entity id {eid!r}")
            index[eid] = pos
        if not np.all(np.isfinite(mat)):
            bad = ids[int(np.flatnonzero(~np.all(np.isfinite(mat), axis=1))[0])]
            raise ValidationError(f"non-finite component in vector {bad!r}")
        norms = np.sqrt(np.einsum("ij,ij->i", mat, mat))
        if np.any(norms == 0.0):
            bad = ids[int(np.flatnonzero(norms == 0.0)[0])]
            raise DegenerateInputError(f"zero-norm vector for entity {bad!r}")
        mat.setflags(write=False)
        norms.setflags(write=False)
        self._ids = tuple(ids)
        self._index = index
        self._matrix = mat
        self._norms = norms
        self._unit = None
        self.name = name
        self.variant_tag = variant_tag
        self.metadata = dict(metadata or {})

    @property
    def ids(self) -> tuple:
        return self._ids

    @property
    def dim(self) -> int:
        return self._matrix.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def norms(self) -> np.ndarray:
        return self._norms

    @property
    def unit(self) -> np.ndarray:
        """Row-normalised copy of the matrix (computed once)."""
        if self._unit is None:
            unit = self._matrix / self._norms[:, None]
            unit.setflags(write=False)
            self._unit = unit
        return self._unit

    def __len__(self):
        return len(self._ids)

    def __contains__(self, eid):
        return eid in self._index

    def __repr__(self):
        tag = f", variant={self.variant_tag!r}" if self.variant_tag else ""
        return f"EmbeddingSpace({self.name!r}, n={len(self)}, dim={self.dim}{tag})"

    def positions(self, ids: Iterable[str]) -> np.ndarray:
        try:
            return np.fromiter((self._index[i] for i in ids), dtype=np.int64)
        except KeyError as exc:
            raise MissingEntityError(exc.args[0], self.name) from None

    def vector(self, eid: str) -> np.ndarray:
        if eid not in self._index:
            raise MissingEntityError(eid, self.name)
        return self._matrix[self._index[eid]]

    def vectors(self, ids: Iterable[str]) -> np.ndarray:
        return self._matrix[self.positions(ids)]

    def unit_vectors(self, ids: Iterable[str]) -> np.ndarray:
        return self.unit[self.positions(ids)]

    def subset(self, ids: Sequence[str], name: str | None = None) -> "EmbeddingSpace":
        return EmbeddingSpace(ids, self.vectors(ids), name or self.name, self.variant_tag)

    def scaled(self, factor: float) -> "EmbeddingSpace":
        return EmbeddingSpace(self._ids, self._matrix * factor, self.name, self.variant_tag)


@dataclass(frozen=True)
class EntityGroup:
    """Named ordered set of entity ids playing one role (A, B, E, P)."""

    name: str
    members: tuple
    role: str = "unassigned"

    def __post_init__(self):
        members = tuple(str(m) for m in self.members)
        object.__setattr__(self, "members", members)
        if self.role not in ROLES:
            raise ValidationError(f"group {self.name!r}: unknown role {self.role!r}")
        if not members:
            raise ValidationError(f"group {self.name!r} is empty")
        if len(set(members)) != len(members):
            seen, dup = set(), []
            for m in members:
                if m in seen:
                    dup.append(m)
                seen.add(m)
            raise ValidationError(f"group {self.name!r} has duplicate ids: {sorted(set(dup))}")

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def with_role(self, role: str) -> "EntityGroup":
        return EntityGroup(self.name, self.members, role)


@dataclass(frozen=True)
class AttributeLabeling:
    attribute_name: str
    positive_group: EntityGroup
    negative_group: EntityGroup

    def __post_init__(self):
        check_disjoint(self.positive_group, self.negative_group)

    def labels(self) -> dict:
        out = {m: 1 for m in self.positive_group}
        out.update({m: 0 for m in self.negative_group})
        return out


def check_disjoint(first: EntityGroup, second: EntityGroup) -> None:
    overlap = sorted(set(first.members) & set(second.members))
    if overlap:
        raise ValidationError(
            f"groups {first.name!r} and {second.name!r} overlap on ids: {overlap}"
        )


def check_group_roles(groups: Sequence[EntityGroup]) -> None:
    """Paired roles (A/B and E/P) must be disjoint."""
    by_role: dict = {}
    for g in groups:
        by_role.setdefault(g.role, []).append(g)
    for role, partner in (("A", "B"), ("E", "P")):
        for g in by_role.get(role, []):
            for h in by_role.get(partner, []):
                check_disjoint(g, h)


def partner_role(role: str) -> str:
    return _PARTNER[role]


def _as_vec(u) -> np.ndarray:
    return np.asarray(u, dtype=np.float64).ravel()


def cosine(u, v) -> float:
    """Cosine similarity. Zero-norm input raises :class:`DegenerateInputError`."""
    u = _as_vec(u)
    v = _as_vec(v)
    if u.shape != v.shape:
        raise ValidationError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = math.sqrt(float(np.dot(u, u)))
    nv = math.sqrt(float(np.dot(v, v)))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine of a zero-norm vector is undefined")
    c = float(np.dot(u, v)) / (nu * nv)
    return min(1.0, max(-1.0, c))


def normalize(v) -> np.ndarray:
    v = _as_vec(v)
    n = math.sqrt(float(np.dot(v, v)))
    if n == 0.0:
        raise DegenerateInputError("cannot normalise a zero vector")
    return v / n


def centroid(group: EntityGroup | Sequence[str], space: EmbeddingSpace) -> np.ndarray:
    """Component-wise mean of the member vectors.

    Column sums are correctly rounded (``math.fsum``), so the result does not
    depend on member order.
    """
    ids = group.members if isinstance(group, EntityGroup) else list(group)
    return exact_mean(space.vectors(ids))


def exact_mean(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    return np.array([math.fsum(col) for col in rows.T]) / rows.shape[0]


def group_stddev(values) -> float:
    """Population standard deviation (divisor n) of at least two values."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 2:
        raise InsufficientDataError(f"standard deviation needs >= 2 values, got {x.size}")
    mu = x.mean()
    return float(math.sqrt(float(np.mean((x - mu) ** 2))))

