"""Synthetic spaces with planted attribute association, and a toy MF trainer.

The planted model::

    A ~ +c g + N(0, s^2 I)        B ~ -c g + N(0, s^2 I)
    E ~  c (a_E g + sqrt(1 - a_E^2) k_E) + N(0, s^2 I)     (P likewise)

with ``g``, ``k_E``, ``k_P`` unit vectors and ``k_E``, ``k_P`` orthogonal to
``g``. Optionally every entity also gets ``(o + l z) u`` along a nuisance
axis ``u`` (``z`` standard normal per entity): a shared offset ``o`` and a
spread ``l`` that attribute-agnostic methods can mistake for signal.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core import EmbeddingSpace, EntityGroup
from .errors import ValidationError
from .scenarios import EngagementShares

ROLE_PREFIX = {"A": "a", "B": "b", "E": "e", "P": "p"}


@dataclass
class PlantedConfig:
    dim: int = 16
    n_A: int = 100
    n_B: int = 100
    n_E: int = 50
    n_P: int = 50
    bias_strength: float = 1.0
    noise_sigma: float = 0.3
    e_alignment: float = 0.0
    p_alignment: float = 0.0
    seed: int = 0
    n_background: int = 0
    nuisance_scale: float = 0.0
    nuisance_offset: float = 0.0
    nuisance_alignment: float = 0.0

    def __post_init__(self):
        if self.dim < 4:
            raise ValidationError("planted spaces need dim >= 4")
        for name in ("n_A", "n_B", "n_E", "n_P"):
            if getattr(self, name) < 5:
                raise ValidationError(f"{name} must be >= 5")
        if self.n_background < 0:
            raise ValidationError("n_background must be >= 0")
        if self.bias_strength < 0 or self.noise_sigma < 0 or self.nuisance_scale < 0:
            raise ValidationError("bias_strength, noise_sigma and nuisance_scale must be >= 0")
        for name in ("e_alignment", "p_alignment", "nuisance_alignment"):
            if not -1.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must be in [-1, 1]")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        extra = sorted(set(data) - known)
        if extra:
            raise ValidationError(f"unknown planted config keys {extra}")
        return cls(**data)


@dataclass
class PlantedSpace:
    space: EmbeddingSpace
    groups: dict
    direction: np.ndarray
    nuisance: np.ndarray | None
    config: PlantedConfig

    def __iter__(self):
        # unpacks as (space, groups, true direction)
        return iter((self.space, self.groups, self.direction))


def _unit_orthogonal(rng, dim, against):
    v = rng.standard_normal(dim)
    for b in against:
        v -= np.dot(v, b) * b
    return v / np.linalg.norm(v)


def generate_planted_space(config: PlantedConfig) -> PlantedSpace:
    """Draw a planted space. Each group has its own seeded stream, so adding
    background entities or resizing one group leaves the others unchanged."""
    cfg = config
    d = cfg.dim
    basis_rng = np.random.default_rng([cfg.seed, 0])
    g = _unit_orthogonal(basis_rng, d, [])
    k_e = _unit_orthogonal(basis_rng, d, [g])
    k_p = _unit_orthogonal(basis_rng, d, [g])
    h = _unit_orthogonal(basis_rng, d, [g])
    rho = cfg.nuisance_alignment
    u = rho * g + math.sqrt(1.0 - rho * rho) * h
    c = cfg.bias_strength

    def test_mean(a, k):
        return c * (a * g + math.sqrt(max(0.0, 1.0 - a * a)) * k)

    means = {"A": c * g, "B": -c * g, "E": test_mean(cfg.e_alignment, k_e),
             "P": test_mean(cfg.p_alignment, k_p), "N": np.zeros(d)}
    sizes = {"A": cfg.n_A, "B": cfg.n_B, "E": cfg.n_E, "P": cfg.n_P, "N": cfg.n_background}
    ids, blocks, groups = [], [], {}
    for stream, role in enumerate(("A", "B", "E", "P", "N"), start=1):
        n = sizes[role]
        if n == 0:
            continue
        rng = np.random.default_rng([cfg.seed, stream])
        X = means[role] + cfg.noise_sigma * rng.standard_normal((n, d))
        if cfg.nuisance_scale > 0 or cfg.nuisance_offset != 0:
            z = rng.standard_normal(n)
            X += np.outer(cfg.nuisance_offset + cfg.nuisance_scale * z, u)
        prefix = ROLE_PREFIX.get(role, "n")
        width = max(4, len(str(n - 1)))
        names = [f"{prefix}{i:0{width}d}" for i in range(n)]
        ids.extend(names)
        blocks.append(X)
        if role != "N":
            groups[role] = EntityGroup(role, tuple(names), role)
    space = EmbeddingSpace(ids, np.vstack(blocks), name=f"planted-{cfg.seed}",
                           variant_tag="planted", metadata={"config": cfg.to_dict()})
    has_nuisance = cfg.nuisance_scale > 0 or cfg.nuisance_offset != 0
    return PlantedSpace(space, groups, g, u if has_nuisance else None, cfg)


# -- listener scenario ----------------------------------------------------------

@dataclass
class ListenerScenario:
    space: EmbeddingSpace
    A: EntityGroup
    B: EntityGroup
    items: EntityGroup
    shares: list
    interactions: dict
    direction: np.ndarray


def generate_listener_scenario(dim=16, n_users=200, n_items=600, bias_strength=1.0,
                               noise_sigma=0.3, share_sharpness=4.0, history_length=10,
                               seed=0) -> ListenerScenario:
    """Users at +-c g, items spread along g; an item's A-side engagement share
    is ``logistic(sharpness * cos(v, g))`` and each user's history ranks
    items by affinity ``u . v``."""
    rng = np.random.default_rng([seed, 101])
    g = _unit_orthogonal(rng, dim, [])
    c = bias_strength
    UA = c * g + noise_sigma * rng.standard_normal((n_users, dim))
    UB = -c * g + noise_sigma * rng.standard_normal((n_users, dim))
    t = rng.uniform(-1.5 * c, 1.5 * c, n_items)
    V = np.outer(t, g) + noise_sigma * rng.standard_normal((n_items, dim))
    a_ids = [f"ua{i:04d}" for i in range(n_users)]
    b_ids = [f"ub{i:04d}" for i in range(n_users)]
    item_ids = [f"it{i:04d}" for i in range(n_items)]
    space = EmbeddingSpace(a_ids + b_ids + item_ids, np.vstack([UA, UB, V]),
                           name=f"listener-{seed}", variant_tag="planted")
    cos = space.unit_vectors(item_ids) @ g
    share = 1.0 / (1.0 + np.exp(-share_sharpness * cos))
    shares = [EngagementShares(i, float(s)) for i, s in zip(item_ids, share)]
    aff = np.vstack([UA, UB]) @ V.T
    interactions = {}
    for uid, row in zip(a_ids + b_ids, aff):
        top = np.argsort(-row, kind="stable")[:history_length]
        interactions[uid] = [item_ids[j] for j in top]
    return ListenerScenario(space, EntityGroup("A", tuple(a_ids), "A"),
                            EntityGroup("B", tuple(b_ids), "B"),
                            EntityGroup("items", tuple(item_ids)), shares, interactions, g)


# -- interaction logs and toy matrix factorisation ------------------------------

@dataclass
class InteractionLog:
    users: tuple
    items: tuple
    triples: list  # (user, item, weight)
    user_attribute: dict = field(default_factory=dict)
    item_genre: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.triples:
            raise ValidationError("interaction log is empty")
        seen = set()
        for u, i, w in self.triples:
            if not w > 0:
                raise ValidationError(f"non-positive weight for ({u}, {i})")
            if (u, i) in seen:
                raise ValidationError(f"duplicate interaction ({u}, {i})")
            seen.add((u, i))

    def matrix(self) -> np.ndarray:
        upos = {u: k for k, u in enumerate(self.users)}
        ipos = {i: k for k, i in enumerate(self.items)}
        R = np.zeros((len(self.users), len(self.items)))
        for u, i, w in self.triples:
            R[upos[u], ipos[i]] = w
        return R

    def genre_group(self, genre, name=None) -> EntityGroup:
        return EntityGroup(name or genre, tuple(i for i in self.items if self.item_genre.get(i) == genre))

    def attribute_group(self, attr, name=None) -> EntityGroup:
        return EntityGroup(name or attr, tuple(u for u in self.users if self.user_attribute.get(u) == attr))


def generate_interaction_log(n_users=300, n_items=120, genre_fraction=0.25, skew=4.0,
                             base_rate=0.15, taste_rank=3, seed=0) -> InteractionLog:
    """Implicit feedback where attribute-A users consume genre X items ``skew``
    times as often as attribute-B users, and genre Y the other way round.

    Remaining items are neutral. A random low-rank taste term modulates every
    consumption probability so the log is not a pure function of the attribute.
    """
    if skew <= 0 or not 0 < base_rate < 0.5:
        raise ValidationError("need skew > 0 and base_rate in (0, 0.5)")
    rng = np.random.default_rng([seed, 202])
    attr = np.array(["A"] * (n_users // 2) + ["B"] * (n_users - n_users // 2))
    n_genre = max(1, int(round(genre_fraction * n_items)))
    genre = np.array(["X"] * n_genre + ["Y"] * n_genre + ["N"] * (n_items - 2 * n_genre))
    hi = 2.0 * base_rate * skew / (1.0 + skew)
    lo = 2.0 * base_rate / (1.0 + skew)
    P = np.full((n_users, n_items), base_rate)
    isA = (attr == "A")[:, None]
    P[:, genre == "X"] = np.where(isA, hi, lo)
    P[:, genre == "Y"] = np.where(isA, lo, hi)
    theta = rng.standard_normal((n_users, taste_rank))
    phi = rng.standard_normal((n_items, taste_rank))
    taste = 2.0 / (1.0 + np.exp(-(theta @ phi.T) / math.sqrt(taste_rank)))
    P = np.clip(P * taste, 0.0, 1.0)
    hit = rng.random(P.shape) < P
    weight = 1.0 + rng.poisson(2.0, P.shape)
    users = tuple(f"u{i:04d}" for i in range(n_users))
    items = tuple(f"i{i:04d}" for i in range(n_items))
    triples = [(users[r], items[c], float(weight[r, c])) for r, c in zip(*np.nonzero(hit))]
    return InteractionLog(
        users=users,
        items=items,
        triples=triples,
        user_attribute=dict(zip(users, attr.tolist())),
        item_genre=dict(zip(items, genre.tolist())),
        params={"skew": skew, "base_rate": base_rate, "genre_fraction": genre_fraction,
                "taste_rank": taste_rank, "seed": seed},
    )


def _solve_rows(G, Y, C, T, reg):
    """Weighted ridge solutions, one per row of ``C``/``T``.

    Row ``i`` solves ``(Y' diag(c_i) Y + reg I) x = Y' diag(c_i) t_i`` using
    the shared Gram matrix ``G = Y'Y`` (confidence is ``1 + extra``).
    """
    k = Y.shape[1]
    out = np.empty((C.shape[0], k))
    eye = reg * np.eye(k)
    for i in range(C.shape[0]):
        extra = C[i] - 1.0
        nz = extra != 0.0
        Yn = Y[nz]
        lhs = G + (Yn.T * extra[nz]) @ Yn + eye
        rhs = Y.T @ (C[i] * T[i])
        out[i] = np.linalg.solve(lhs, rhs)
    return out


def train_toy_mf(log: InteractionLog, dim: int = 16, use_attribute: bool = True,
                 epochs: int = 20, seed: int = 0, reg: float = 20.0, alpha: float = 5.0,
                 tol: float = 1e-3) -> EmbeddingSpace:
    """Implicit-feedback ALS on a dense preference matrix.

    Preference is 1 where an interaction exists, confidence ``1 + alpha*w``.
    With ``use_attribute`` every user vector is ``p_u + s_attr(u)``, a shared
    learned offset per attribute value, and the exported user vectors include
    that offset. Training warnings (relative loss change above ``tol`` in the
    final epoch) are stored in ``metadata["warnings"]``.
    """
    R = log.matrix()
    if not np.any(R):
        raise ValidationError("interaction log has no positive entries")
    Pref = (R > 0).astype(np.float64)
    C = 1.0 + alpha * R
    n_u, n_i = R.shape
    rng = np.random.default_rng([seed, 303])
    U = 0.1 * rng.standard_normal((n_u, dim))
    Y = 0.1 * rng.standard_normal((n_i, dim))
    attrs = sorted(set(log.user_attribute.get(u, "") for u in log.users))
    a_idx = np.array([attrs.index(log.user_attribute.get(u, "")) for u in log.users])
    S = np.zeros((len(attrs), dim))
    losses = []

    def user_vectors():
        return U + S[a_idx] if use_attribute else U

    for _ in range(epochs):
        Ue = user_vectors()
        Y = _solve_rows(Ue.T @ Ue, Ue, C.T, Pref.T, reg)
        G = Y.T @ Y
        offset = S[a_idx] @ Y.T if use_attribute else 0.0
        U = _solve_rows(G, Y, C, Pref - offset, reg)
        if use_attribute:
            for a in range(len(attrs)):
                rows = np.flatnonzero(a_idx == a)
                lhs = reg * np.eye(dim)
                rhs = np.zeros(dim)
                for i in rows:
                    extra = C[i] - 1.0
                    lhs += G + (Y.T * extra) @ Y
                    rhs += Y.T @ (C[i] * (Pref[i] - Y @ U[i]))
                S[a] = np.linalg.solve(lhs, rhs)
        Ue = user_vectors()
        err = Pref - Ue @ Y.T
        loss = float(np.sum(C * err * err) + reg * (np.sum(U * U) + np.sum(Y * Y) + np.sum(S * S)))
        losses.append(loss)
    warnings = []
    if len(losses) > 1:
        rel = abs(losses[-2] - losses[-1]) / max(abs(losses[-1]), 1e-12)
        if rel > tol:
            warnings.append(f"ALS loss still changing by {rel:.3g} (relative) after {epochs} epochs")
    tag = "with-attribute" if use_attribute else "without-attribute"
    ids = list(log.users) + list(log.items)
    return EmbeddingSpace(ids, np.vstack([user_vectors(), Y]), name=f"toy-mf-{tag}",
                          variant_tag=tag,
                          metadata={"losses": losses, "warnings": warnings, "epochs": epochs,
                                    "seed": seed, "dim": dim})
