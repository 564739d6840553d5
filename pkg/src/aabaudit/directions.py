"""Attribute bias directions.

Three constructions are provided: centroid difference, the weight vector of a
linear hinge-loss probe, and the leading principal component of paired
attribute vectors. Every direction is unit length and oriented so that its
cosine with ``centroid(A) - centroid(B)`` is non-negative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import EmbeddingSpace, EntityGroup, centroid, check_disjoint, exact_mean
from .errors import DegenerateDirectionError, InsufficientDataError, ValidationError
from .linalg import leading_eigenvectors

METHODS = ("centroid_difference", "linear_probe", "paired_pca")

# named probe presets: train on the k most biased members of each group
CSVC_PRESETS = {"csvc_1": 200, "csvc_2": 2500}


@dataclass
class BiasDirection:
    vector: np.ndarray
    method: str
    source_groups: tuple
    seed: int | None = None
    validation: object = None
    label: str = ""
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.method not in METHODS:
            raise ValidationError(f"unknown direction method {self.method!r}")
        if abs(float(np.linalg.norm(self.vector)) - 1.0) > 1e-10:
            raise ValidationError("bias direction must have unit norm")
        if not self.label:
            self.label = self.method

    @property
    def dim(self):
        return self.vector.shape[0]

    def to_dict(self) -> dict:
        out = {
            "label": self.label,
            "method": self.method,
            "source_groups": list(self.source_groups),
            "seed": self.seed,
            "vector": [float(x) for x in self.vector],
            "provenance": self.provenance,
        }
        if self.validation is not None:
            out["validation"] = self.validation.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BiasDirection":
        vec = np.asarray(data["vector"], dtype=np.float64)
        # stored vectors are rounded; restore exact unit length
        vec = vec / np.linalg.norm(vec)
        return cls(
            vector=vec,
            method=data["method"],
            source_groups=tuple(data["source_groups"]),
            seed=data.get("seed"),
            label=data.get("label", ""),
            provenance=dict(data.get("provenance", {})),
        )


@dataclass
class LinearProbe:
    """Linear classifier ``sign(w . v + b)`` with A -> +1 and B -> -1."""

    weights: np.ndarray
    intercept: float
    train_accuracy: float
    test_accuracy: float | None
    training_ids: tuple
    hyperparameters: dict
    positive_label: str = "A"
    negative_label: str = "B"
    reference: np.ndarray | None = None  # centroid(A) - centroid(B) over the training groups
    converged: bool = True
    warnings: list = field(default_factory=list)

    @property
    def dim(self):
        return self.weights.shape[0]

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise ValidationError(f"probe expects dim {self.dim}, got {X.shape[1]}")
        return X @ self.weights + self.intercept

    def summary(self) -> dict:
        return {
            "train_accuracy": self.train_accuracy,
            "test_accuracy": self.test_accuracy,
            "n_training": len(self.training_ids),
            "intercept": float(self.intercept),
            "weight_norm": float(np.linalg.norm(self.weights)),
            "hyperparameters": dict(self.hyperparameters),
            "converged": self.converged,
            "warnings": list(self.warnings),
        }


def orient(vector: np.ndarray, reference: np.ndarray | None) -> np.ndarray:
    """Flip ``vector`` so its dot product with ``reference`` is non-negative."""
    if reference is not None and float(np.dot(vector, reference)) < 0.0:
        return -vector
    return vector


def _unit_or_raise(v: np.ndarray, what: str) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if not math.isfinite(n) or n == 0.0:
        raise DegenerateDirectionError(f"{what}: zero vector, no attribute separation")
    return v / n


def centroid_difference_direction(A: EntityGroup, B: EntityGroup, space: EmbeddingSpace,
                                  label: str = "centroid_difference") -> BiasDirection:
    check_disjoint(A, B)
    ca = centroid(A, space)
    cb = centroid(B, space)
    diff = ca - cb
    scale = max(float(np.linalg.norm(ca)), float(np.linalg.norm(cb)), 1.0)
    if float(np.max(np.abs(diff))) <= 1e-12 * scale:
        raise DegenerateDirectionError(
            f"centroids of {A.name!r} and {B.name!r} coincide; no attribute separation"
        )
    return BiasDirection(
        vector=_unit_or_raise(diff, "centroid difference"),
        method="centroid_difference",
        source_groups=(A.name, B.name),
        label=label,
        provenance={"n_A": len(A), "n_B": len(B)},
    )


def _stratified_split(n_a, n_b, split_fraction, rng):
    """Indices into the stacked (A then B) rows for train and test."""
    train, test = [], []
    for offset, n in ((0, n_a), (n_a, n_b)):
        perm = rng.permutation(n) + offset
        n_train = min(n, max(1, int(round(split_fraction * n))))
        train.append(perm[:n_train])
        test.append(perm[n_train:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def _pegasos_full_batch(X, y, reg, epochs):
    """Full-batch subgradient descent on the L2-regularised mean hinge loss.

    Step ``1/(reg*t)`` followed by projection onto the ball of radius
    ``1/sqrt(reg)``. The intercept is an extra constant feature (the data are
    centred beforehand so its regularisation is immaterial). The returned
    weights are the running average of the iterates over the second half of
    the epochs; single iterates of this schedule keep oscillating.
    """
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    w = np.zeros(d + 1)
    avg = np.zeros(d + 1)
    start = epochs // 2
    radius = 1.0 / math.sqrt(reg)
    history = np.empty(epochs)

    def objective(v):
        return 0.5 * reg * float(v @ v) + float(np.mean(np.maximum(0.0, 1.0 - y * (Xa @ v))))

    for t in range(1, epochs + 1):
        margins = y * (Xa @ w)
        viol = margins < 1.0
        grad = reg * w
        if viol.any():
            grad = grad - (y[viol] @ Xa[viol]) / n
        w = w - grad / (reg * t)
        nw = float(np.linalg.norm(w))
        if nw > radius:
            w *= radius / nw
        if t > start:
            avg += (w - avg) / (t - start)
            history[t - 1] = objective(avg)
        else:
            history[t - 1] = objective(w)
    return avg[:d], float(avg[d]), history


def train_linear_probe(A: EntityGroup, B: EntityGroup, space: EmbeddingSpace,
                       split_fraction: float = 0.8, seed: int = 0, reg: float = 1e-3,
                       epochs: int = 500, tol: float = 1e-2) -> LinearProbe:
    """Train an L2-regularised linear hinge-loss classifier separating A from B.

    Members are split per group into train/test by ``split_fraction`` (seeded).
    Training is deterministic full-batch subgradient descent; if the objective
    still moves by more than ``tol`` (relative) over the last tenth of the
    epochs, a warning is recorded on the probe instead of raising.
    """
    check_disjoint(A, B)
    if len(A) + len(B) < 10:
        raise InsufficientDataError("a linear probe needs at least 10 labelled entities")
    if not 0.0 < split_fraction <= 1.0:
        raise ValidationError("split_fraction must be in (0, 1]")
    ids = list(A.members) + list(B.members)
    X = space.vectors(ids)
    y = np.r_[np.ones(len(A)), -np.ones(len(B))]
    rng = np.random.default_rng(seed)
    if split_fraction < 1.0:
        tr, te = _stratified_split(len(A), len(B), split_fraction, rng)
    else:
        tr, te = np.arange(len(ids)), np.arange(0)
    mean = exact_mean(X[tr])
    w, b0, history = _pegasos_full_batch(X[tr] - mean, y[tr], reg, epochs)
    intercept = b0 - float(w @ mean)

    def acc(idx):
        if idx.size == 0:
            return None
        pred = np.where(X[idx] @ w + intercept > 0.0, 1.0, -1.0)
        return float(np.mean(pred == y[idx]))

    tail = history[-max(2, epochs // 10):]
    rel = float(np.max(tail) - np.min(tail)) / max(abs(float(tail[-1])), 1e-12)
    converged = rel <= tol
    warnings = [] if converged else [
        f"objective still varies by {rel:.3g} (relative) over the last {tail.size} epochs"
    ]
    train_ids = A.members + B.members
    train_ids = tuple(train_ids[i] for i in tr)
    return LinearProbe(
        weights=w,
        intercept=intercept,
        train_accuracy=acc(tr),
        test_accuracy=acc(te),
        training_ids=train_ids,
        hyperparameters={"reg": reg, "epochs": epochs, "seed": seed,
                         "split_fraction": split_fraction},
        positive_label=A.name,
        negative_label=B.name,
        reference=centroid(A, space) - centroid(B, space),
        converged=converged,
        warnings=warnings,
    )


def probe_direction(probe: LinearProbe, label: str = "linear_probe", seed=None) -> BiasDirection:
    """Normalised probe weights; the intercept is discarded."""
    vec = _unit_or_raise(np.asarray(probe.weights, dtype=np.float64), "probe weights")
    vec = orient(vec, probe.reference)
    return BiasDirection(
        vector=vec,
        method="linear_probe",
        source_groups=(probe.positive_label, probe.negative_label),
        seed=probe.hyperparameters.get("seed", seed),
        label=label,
        provenance={"probe": probe.summary(), "intercept_discarded": True},
    )


def most_biased_entities(group: EntityGroup, direction: BiasDirection, space: EmbeddingSpace,
                         k: int, sign: int = 1) -> EntityGroup:
    """The ``k`` members most aligned with ``sign * direction``.

    Use ``sign=+1`` for the group the direction points toward (A) and
    ``sign=-1`` for the opposed group (B). Ties go to the smaller id.
    """
    if not 1 <= k <= len(group):
        raise ValidationError(f"k={k} outside 1..{len(group)} for group {group.name!r}")
    cos = space.unit_vectors(group.members) @ direction.vector
    keyed = sorted(zip(group.members, (sign * cos).tolist()), key=lambda t: (-t[1], t[0]))
    return EntityGroup(f"{group.name}[top{k}]", tuple(m for m, _ in keyed[:k]), group.role)


def random_pairs(A: EntityGroup, B: EntityGroup, n_pairs: int, seed: int) -> list:
    """Random cross-attribute pairs, sampled without replacement while possible."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n_pairs:
        m = min(len(A), len(B), n_pairs - len(out))
        ia = rng.permutation(len(A))[:m]
        ib = rng.permutation(len(B))[:m]
        out.extend((A.members[i], B.members[j]) for i, j in zip(ia, ib))
    return out


def paired_pca_direction(pairs: Sequence[tuple], space: EmbeddingSpace, seed: int = 0,
                         source_groups=("A", "B"), label: str = "paired_pca") -> BiasDirection:
    """First principal component of paired attribute vectors.

    Each pair ``(a, b)`` is centred on its own mean, contributing the two
    vectors ``+-(a - b)/2``; the leading eigenvector of their second-moment
    matrix is found by power iteration. Parallel differences are a valid
    (rank one) input and return their shared direction.
    """
    if len(pairs) < 2:
        raise InsufficientDataError("paired PCA needs at least 2 pairs")
    va = space.vectors([a for a, _ in pairs])
    vb = space.vectors([b for _, b in pairs])
    half = 0.5 * (va - vb)
    if not np.any(half):
        raise DegenerateDirectionError("all pairs are identical vectors")
    cov = (half.T @ half) / half.shape[0]
    eig = leading_eigenvectors(cov, 1, seed=seed)
    vec = _unit_or_raise(eig.vectors[0], "paired PCA")
    vec = orient(vec, exact_mean(va) - exact_mean(vb))
    total = float(np.trace(cov))
    return BiasDirection(
        vector=vec,
        method="paired_pca",
        source_groups=tuple(source_groups),
        seed=seed,
        label=label,
        provenance={
            "n_pairs": len(pairs),
            "explained_variance_ratio": float(eig.values[0] / total) if total > 0 else 1.0,
            "iterations": eig.iterations[0],
            "converged": eig.converged[0],
        },
    )
