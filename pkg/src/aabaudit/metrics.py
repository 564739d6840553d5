"""Entity attribute association metrics and R-RIPA.

EAA(e, A, B)  = mean_a cos(e, a) - mean_b cos(e, b)
GEAA(E, A, B) = sum over E of EAA (a sum, so it grows with |E|)
DEAA          = GEAA(E) - GEAA(P)
effect size   = (mean EAA over E - mean EAA over P) / std of EAA over E u P
R-RIPA(E, psi) = mean over E of cos(e, psi)
R-RIPA effect = (R-RIPA(E) - R-RIPA(P)) / std of cos(e, psi) over E u P

Standard deviations are population (divisor n). The effect-size denominator is
read as the spread of the per-entity EAA scores over E u P, as in the WEAT
effect size; the group sum itself is a single number and has no spread.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import EmbeddingSpace, EntityGroup, check_disjoint, exact_mean, group_stddev
from .errors import ContaminationError, DegenerateInputError


@dataclass(frozen=True)
class EaaScore:
    entity: str
    value: float


@dataclass
class MetricBundle:
    geaa_E: float
    geaa_P: float
    deaa: float
    effect_size: float
    eaa_E: dict = field(default_factory=dict)
    eaa_P: dict = field(default_factory=dict)
    direction: str | None = None
    rripa_E: float | None = None
    rripa_P: float | None = None
    rripa_differential: float | None = None
    rripa_effect: float | None = None

    def to_dict(self, per_entity: bool = False) -> dict:
        out = {
            "geaa_E": self.geaa_E,
            "geaa_P": self.geaa_P,
            "deaa": self.deaa,
            "effect_size": self.effect_size,
            # toolkit extra: size-free comparison across groups
            "mean_eaa_E": self.geaa_E / len(self.eaa_E),
            "mean_eaa_P": self.geaa_P / len(self.eaa_P),
        }
        if per_entity:
            out["eaa_E"] = dict(sorted(self.eaa_E.items()))
            out["eaa_P"] = dict(sorted(self.eaa_P.items()))
        return out


def _ensure_clean(test_ids, A: EntityGroup, B: EntityGroup):
    check_disjoint(A, B)
    attr = set(A.members) | set(B.members)
    bad = sorted(attr.intersection(test_ids))
    if bad:
        raise ContaminationError(
            f"test entities also in attribute groups {A.name!r}/{B.name!r}: {bad[:10]}"
            + (" ..." if len(bad) > 10 else "")
        )


def attribute_means(A: EntityGroup, B: EntityGroup, space: EmbeddingSpace):
    """Means of the unit vectors of A and B (so mean cosine = dot product)."""
    return exact_mean(space.unit_vectors(A.members)), exact_mean(space.unit_vectors(B.members))


def eaa_values(entities, A: EntityGroup, B: EntityGroup, space: EmbeddingSpace) -> np.ndarray:
    """Vector of EAA scores for ``entities`` (ids, in the given order)."""
    ids = list(entities)
    _ensure_clean(ids, A, B)
    mA, mB = attribute_means(A, B, space)
    U = space.unit_vectors(ids)
    return U @ mA - U @ mB


def eaa(entity: str, A: EntityGroup, B: EntityGroup, space: EmbeddingSpace) -> EaaScore:
    return EaaScore(entity, float(eaa_values([entity], A, B, space)[0]))


def geaa(E: EntityGroup, A: EntityGroup, B: EntityGroup, space: EmbeddingSpace) -> float:
    return math.fsum(eaa_values(E.members, A, B, space))


def deaa(E: EntityGroup, P: EntityGroup, A: EntityGroup, B: EntityGroup,
         space: EmbeddingSpace) -> float:
    check_disjoint(E, P)
    return geaa(E, A, B, space) - geaa(P, A, B, space)


def _effect(xe: np.ndarray, xp: np.ndarray, what: str) -> float:
    sd = group_stddev(np.concatenate([xe, xp]))
    if sd == 0.0:
        raise DegenerateInputError(f"{what}: zero spread over E u P, effect size undefined")
    return (math.fsum(xe) / xe.size - math.fsum(xp) / xp.size) / sd


def eaa_effect_size(E: EntityGroup, P: EntityGroup, A: EntityGroup, B: EntityGroup,
                    space: EmbeddingSpace) -> float:
    check_disjoint(E, P)
    return _effect(eaa_values(E.members, A, B, space), eaa_values(P.members, A, B, space),
                   "EAA effect size")


def direction_cosines(entities, psi, space: EmbeddingSpace) -> np.ndarray:
    vec = np.asarray(getattr(psi, "vector", psi), dtype=np.float64)
    n = float(np.linalg.norm(vec))
    if n == 0.0:
        raise DegenerateInputError("relation vector has zero norm")
    if vec.shape[0] != space.dim:
        raise DegenerateInputError(f"relation vector dim {vec.shape[0]} != space dim {space.dim}")
    return np.clip(space.unit_vectors(list(entities)) @ (vec / n), -1.0, 1.0)


def rripa(E: EntityGroup, psi, space: EmbeddingSpace) -> float:
    c = direction_cosines(E.members, psi, space)
    return math.fsum(c) / c.size


def rripa_effect_size(E: EntityGroup, P: EntityGroup, psi, space: EmbeddingSpace) -> float:
    check_disjoint(E, P)
    return _effect(direction_cosines(E.members, psi, space),
                   direction_cosines(P.members, psi, space), "R-RIPA effect size")


def compute_bundle(E: EntityGroup, P: EntityGroup, A: EntityGroup, B: EntityGroup,
                   space: EmbeddingSpace, psi=None) -> MetricBundle:
    """All six quantities for one (E, P, A, B) setup, sharing the EAA pass."""
    check_disjoint(E, P)
    xe = eaa_values(E.members, A, B, space)
    xp = eaa_values(P.members, A, B, space)
    ge, gp = math.fsum(xe), math.fsum(xp)
    bundle = MetricBundle(
        geaa_E=ge,
        geaa_P=gp,
        deaa=ge - gp,
        effect_size=_effect(xe, xp, "EAA effect size"),
        eaa_E=dict(zip(E.members, xe.tolist())),
        eaa_P=dict(zip(P.members, xp.tolist())),
    )
    if psi is not None:
        ce = direction_cosines(E.members, psi, space)
        cp = direction_cosines(P.members, psi, space)
        re, rp = math.fsum(ce) / ce.size, math.fsum(cp) / cp.size
        bundle.direction = getattr(psi, "label", None)
        bundle.rripa_E = re
        bundle.rripa_P = rp
        bundle.rripa_differential = re - rp
        bundle.rripa_effect = _effect(ce, cp, "R-RIPA effect size")
    return bundle
