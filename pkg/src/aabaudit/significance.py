"""Flagging: direction validation and permutation tests for the metrics.

Permutation nulls are generated in fixed-size blocks; block ``b`` of a test
draws from ``default_rng([seed, stream, b])``. Workers only decide which
thread runs which block, so p-values are identical for any worker count.
"""
from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .core import EmbeddingSpace, EntityGroup, check_disjoint, exact_mean
from .errors import InsufficientDataError, ValidationError
from .kernels import subset_sums
from .metrics import _ensure_clean, direction_cosines, eaa_values
from .stats import bonferroni_alpha, rank_sum_test, signed_rank_test

BLOCK = 1000
EXACT_LIMIT = 50_000
MIN_PERMUTATIONS = 100
VALIDATION_TESTS = 3


def stream_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


# -- direction validation ----------------------------------------------------

@dataclass
class DirectionValidation:
    test1_p: float
    test2_p: float
    test3_p: float
    alpha_corrected: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "test1_p": self.test1_p,
            "test2_p": self.test2_p,
            "test3_p": self.test3_p,
            "alpha_corrected": self.alpha_corrected,
            "passed": self.passed,
            "details": self.details,
        }


def random_unit_vectors(n: int, dim: int, rng) -> np.ndarray:
    """Uniform on the sphere: normalised i.i.d. standard normal rows."""
    R = rng.standard_normal((n, dim))
    return R / np.linalg.norm(R, axis=1, keepdims=True)


def validate_direction(direction, A: EntityGroup, B: EntityGroup, space: EmbeddingSpace,
                       n_random: int = 1000, seed: int = 0, alpha_corrected: float | None = None,
                       alternative: str = "two-sided") -> DirectionValidation:
    """Three checks that a direction carries attribute signal.

    1. rank-sum test of cos(a, d) for a in A against cos(b, d) for b in B;
    2. signed-rank test, entity by entity, of |cos(x, d)| against
       |cos(x, r)| for a random unit direction r (A and B pooled);
    3. rank-sum test of the attribute-signed cosines (+cos for A, -cos for B)
       against cos(q, d) for random synthetic entities q.

    ``passed`` requires all three p-values below ``alpha_corrected``
    (default: 0.05 Bonferroni-corrected for the three tests).
    """
    if len(A) < 5 or len(B) < 5:
        raise InsufficientDataError("direction validation needs >= 5 members in A and in B")
    if n_random < 100:
        raise ValidationError("n_random must be >= 100")
    check_disjoint(A, B)
    if alpha_corrected is None:
        alpha_corrected = bonferroni_alpha(0.05, VALIDATION_TESTS)
    d = np.asarray(getattr(direction, "vector", direction), dtype=np.float64)
    d = d / np.linalg.norm(d)
    ca = np.clip(space.unit_vectors(A.members) @ d, -1.0, 1.0)
    cb = np.clip(space.unit_vectors(B.members) @ d, -1.0, 1.0)
    t1 = rank_sum_test(ca, cb, alternative=alternative)

    rng = np.random.default_rng([seed, stream_id("validate")])
    R = random_unit_vectors(n_random, space.dim, rng)
    X = space.unit_vectors(A.members + B.members)
    pick = np.arange(X.shape[0]) % n_random
    c_rand = np.einsum("ij,ij->i", X, R[pick])
    t2 = signed_rank_test(np.abs(np.r_[ca, cb]) - np.abs(c_rand),
                          alternative="greater" if alternative == "greater" else alternative)

    # random entities: sphere-uniform, scaled to the median entity norm
    scale = float(np.median(space.norms[space.positions(A.members + B.members)]))
    Q = random_unit_vectors(n_random, space.dim, rng) * scale
    cq = (Q / np.linalg.norm(Q, axis=1, keepdims=True)) @ d
    t3 = rank_sum_test(np.r_[ca, -cb], cq, alternative=alternative)

    ps = (t1.p_value, t2.p_value, t3.p_value)
    return DirectionValidation(
        test1_p=ps[0],
        test2_p=ps[1],
        test3_p=ps[2],
        alpha_corrected=alpha_corrected,
        passed=all(p < alpha_corrected for p in ps),
        details={
            "n_random": n_random,
            "seed": seed,
            "alternative": alternative,
            "n_A": len(A),
            "n_B": len(B),
            "mean_cos_A": float(ca.mean()),
            "mean_cos_B": float(cb.mean()),
            "statistics": [t1.statistic, t2.statistic, t3.statistic],
        },
    )


# -- permutation engine -------------------------------------------------------

@dataclass
class PermutationResult:
    statistic: str
    observed_stat: float
    permutations: int
    p_value: float
    seed: int
    exact: bool
    null_summary: dict
    null_samples: np.ndarray | None = None

    def to_dict(self, include_null: bool = False):
        out = {
            "statistic": self.statistic,
            "observed": self.observed_stat,
            "permutations": self.permutations,
            "p_value": self.p_value,
            "seed": self.seed,
            "exact": self.exact,
            "null_summary": self.null_summary,
        }
        if include_null and self.null_samples is not None:
            out["null_samples"] = [float(x) for x in self.null_samples]
        return out


def _summary(null: np.ndarray) -> dict:
    q = np.quantile(null, [0.025, 0.5, 0.975])
    return {
        "mean": float(np.mean(null)),
        "stddev": float(np.std(null)),
        "q025": float(q[0]),
        "q500": float(q[1]),
        "q975": float(q[2]),
    }


def _tolerance(values: np.ndarray) -> float:
    return 1e-12 * max(1.0, float(np.abs(values).sum(axis=0).max()))


def _block_worker(values, k, seed, stream, n_perm):
    n = values.shape[0]

    def run(b):
        rows = min(BLOCK, n_perm - b * BLOCK)
        rng = np.random.default_rng([seed, stream, b])
        return subset_sums(values, k, rng.random((rows, k)))

    return run


def subset_permutation_null(values, k: int, n_perm: int, seed: int, stream: int,
                            workers: int = 1):
    """Null subset sums for size-``k`` subsets of the rows of ``values``.

    Returns ``(sums, exact)``; ``sums`` has shape ``(replicates, m)``. When the
    number of distinct subsets is at most ``EXACT_LIMIT`` every subset is
    enumerated (lexicographic order, so row 0 is the first ``k`` rows).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    n = values.shape[0]
    if not 0 < k < n:
        raise ValidationError(f"subset size {k} must be in 1..{n - 1}")
    if math.comb(n, k) <= EXACT_LIMIT:
        combos = np.array(list(combinations(range(n), k)), dtype=np.int64)
        sums = np.zeros((combos.shape[0], values.shape[1]))
        for j in range(k):  # sequential accumulation, same order for every subset
            sums += values[combos[:, j]]
        return sums, True
    if n_perm < MIN_PERMUTATIONS:
        raise ValidationError(f"need at least {MIN_PERMUTATIONS} permutations")
    draw = min(k, n - k)
    run = _block_worker(values, draw, seed, stream, n_perm)
    blocks = range((n_perm + BLOCK - 1) // BLOCK)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    sums = np.vstack(parts)
    if draw != k:
        sums = values.sum(axis=0) - sums
    return sums, False


def _observed_sum(values: np.ndarray, k: int) -> np.ndarray:
    acc = np.zeros(values.shape[1])
    for j in range(k):
        acc += values[j]
    return acc


def _affine_test(values, k, slope, offset, n_perm, seed, stream, workers, name,
                 keep_null=False):
    """Two-sided permutation test of ``stat = slope*S + offset`` for every column.

    ``S`` is the sum over the first ``k`` rows; the null re-draws which rows
    form the subset. Deviations are measured from the exact permutation mean
    ``k*T/n``, so unequal group sizes do not skew the two-sided test.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    n = values.shape[0]
    total = values.sum(axis=0)
    centre = k * total / n
    observed = _observed_sum(values, k)
    null, exact = subset_permutation_null(values, k, n_perm, seed, stream, workers)
    tol = _tolerance(values)
    dev_obs = np.abs(observed - centre)
    dev_null = np.abs(null - centre)
    counts = (dev_null >= dev_obs - tol).sum(axis=0)
    reps = null.shape[0]
    if exact:
        p = counts / reps
    else:
        p = (counts + 1.0) / (reps + 1.0)
    slope = np.broadcast_to(np.asarray(slope, dtype=np.float64), total.shape)
    offset = np.broadcast_to(np.asarray(offset, dtype=np.float64), total.shape)
    obs_stat = slope * observed + offset
    null_stat = null * slope + offset
    out = []
    for c in range(values.shape[1]):
        out.append(PermutationResult(
            statistic=name[c] if isinstance(name, (list, tuple)) else name,
            observed_stat=float(obs_stat[c]),
            permutations=int(reps),
            p_value=float(min(1.0, p[c])),
            seed=seed,
            exact=exact,
            null_summary=_summary(null_stat[:, c]),
            null_samples=null_stat[:, c].copy() if keep_null else None,
        ))
    return out


def _check_perm(n_perm):
    if n_perm < MIN_PERMUTATIONS:
        raise ValidationError(f"n_perm must be >= {MIN_PERMUTATIONS}")


def permutation_test_deaa(E, P, A, B, space, n_perm=10_000, seed=0, workers=1,
                          keep_null=False) -> PermutationResult:
    """DEAA against random re-partitions of E u P into groups of |E| and |P|."""
    _check_perm(n_perm)
    check_disjoint(E, P)
    vals = eaa_values(E.members + P.members, A, B, space)
    total = vals.sum()
    # DEAA = S_E - (T - S_E) = 2 S_E - T
    return _affine_test(vals, len(E), 2.0, -total, n_perm, seed, stream_id("deaa"),
                        workers, "deaa", keep_null)[0]


def geaa_label_values(tests, A: EntityGroup, B: EntityGroup, space: EmbeddingSpace):
    """Per attribute entity h in A u B: sum over each test group of cos(e, h)."""
    _ensure_clean([m for g in tests for m in g.members], A, B)
    H = space.unit_vectors(A.members + B.members)
    cols = [H @ exact_mean(space.unit_vectors(g.members)) * len(g) for g in tests]
    return np.column_stack(cols)


def permutation_test_geaa(E, A, B, space, n_perm=10_000, seed=0, workers=1, keep_null=False,
                          extra_groups=()) -> PermutationResult | list:
    """GEAA(E) against random relabelling of A u B (group sizes kept).

    With ``extra_groups`` the same relabellings are applied to further test
    groups and a list of results (E first) is returned.
    """
    _check_perm(n_perm)
    check_disjoint(A, B)
    groups = [E, *extra_groups]
    vals = geaa_label_values(groups, A, B, space)
    na, nb = len(A), len(B)
    total = vals.sum(axis=0)
    # GEAA = S_A/na - (T - S_A)/nb
    res = _affine_test(vals, na, 1.0 / na + 1.0 / nb, -total / nb, n_perm, seed,
                       stream_id("geaa"), workers, [f"geaa:{g.name}" for g in groups], keep_null)
    return res if extra_groups else res[0]


def permutation_test_rripa(E, P, psi, space, n_perm=10_000, seed=0, workers=1,
                           keep_null=False) -> PermutationResult:
    """R-RIPA differential: cosine scores with ``psi`` permuted between E and P."""
    _check_perm(n_perm)
    check_disjoint(E, P)
    vals = direction_cosines(E.members + P.members, psi, space)
    ne, np_ = len(E), len(P)
    total = vals.sum()
    label = getattr(psi, "label", "psi")
    return _affine_test(vals, ne, 1.0 / ne + 1.0 / np_, -total / np_, n_perm, seed,
                        stream_id(f"rripa:{label}"), workers, "rripa_differential", keep_null)[0]


def rripa_subsample_test(E, P, psi, space, n_chunks=10, seed=0):
    """R-RIPA on disjoint random chunks of E and of P, compared by rank-sum test."""
    check_disjoint(E, P)
    n_chunks = min(n_chunks, len(E), len(P))
    if n_chunks < 5:
        raise InsufficientDataError("subsample R-RIPA test needs >= 5 chunks per group")
    label = getattr(psi, "label", "psi")
    rng = np.random.default_rng([seed, stream_id(f"rripa-sub:{label}")])
    scores = []
    for g in (E, P):
        c = direction_cosines(g.members, psi, space)
        parts = np.array_split(rng.permutation(c.size), n_chunks)
        scores.append(np.array([c[idx].mean() for idx in parts]))
    res = rank_sum_test(scores[0], scores[1])
    return {
        "statistic": "rripa_subsample_ranksum",
        "observed": float(np.mean(scores[0]) - np.mean(scores[1])),
        "u": res.statistic,
        "p_value": res.p_value,
        "method": res.method,
        "n_chunks": n_chunks,
        "seed": seed,
    }
