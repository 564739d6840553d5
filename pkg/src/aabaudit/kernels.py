"""Hot inner loops, each in a numba and a numpy flavour.

Both flavours perform the same floating point operations in the same order,
so they agree bit for bit; the public names dispatch on ``USE_NUMBA``.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# numpy fallback keeps its (rows x n) index scratch below this many entries
_SCRATCH_LIMIT = 4_000_000


@njit(nogil=True)
def _subset_sums_numba(values, k, uniforms):
    n, m = values.shape
    reps = uniforms.shape[0]
    out = np.zeros((reps, m))
    idx = np.arange(n)
    swaps = np.empty(k, dtype=np.int64)
    for r in range(reps):
        for i in range(k):
            j = i + int(uniforms[r, i] * (n - i))
            if j > n - 1:
                j = n - 1
            swaps[i] = j
            t = idx[i]
            idx[i] = idx[j]
            idx[j] = t
            row = idx[i]
            for c in range(m):
                out[r, c] += values[row, c]
        # undo in reverse so idx is the identity again
        for i in range(k - 1, -1, -1):
            j = swaps[i]
            t = idx[i]
            idx[i] = idx[j]
            idx[j] = t
    return out


def _subset_sums_numpy(values, k, uniforms):
    n, m = values.shape
    reps = uniforms.shape[0]
    out = np.zeros((reps, m))
    chunk = max(1, min(reps, _SCRATCH_LIMIT // max(n, 1)))
    for start in range(0, reps, chunk):
        stop = min(reps, start + chunk)
        u = uniforms[start:stop]
        rows = np.arange(stop - start)
        idx = np.tile(np.arange(n), (stop - start, 1))
        acc = np.zeros((stop - start, m))
        for i in range(k):
            j = i + (u[:, i] * (n - i)).astype(np.int64)
            np.minimum(j, n - 1, out=j)
            a = idx[rows, i].copy()
            b = idx[rows, j]
            idx[rows, i] = b
            idx[rows, j] = a
            acc += values[b]
        out[start:stop] = acc
    return out


def subset_sums(values, k, uniforms):
    """Column sums over random size-``k`` subsets of the rows of ``values``.

    Each replicate is a partial Fisher-Yates shuffle driven by one row of
    ``uniforms`` (shape ``(replicates, k)``, values in [0, 1)). Returns an
    array of shape ``(replicates, values.shape[1])``.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
    if uniforms.shape[1] != k:
        raise ValueError(f"uniforms must have {k} columns, got {uniforms.shape[1]}")
    if USE_NUMBA:
        return _subset_sums_numba(values, int(k), uniforms)
    return _subset_sums_numpy(values, int(k), uniforms)


@njit
def _midranks_numba(x):
    n = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(n)
    tie_term = 0.0
    i = 0
    while i < n:
        j = i
        while j + 1 < n and x[order[j + 1]] == x[order[i]]:
            j += 1
        r = (i + j + 2) / 2.0
        for q in range(i, j + 1):
            ranks[order[q]] = r
        t = j - i + 1
        if t > 1:
            tie_term += t * t * t - t
        i = j + 1
    return ranks, tie_term


def _midranks_numpy(x):
    n = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], n] - 1
    r = (starts + ends + 2) / 2.0
    counts = ends - starts + 1
    ranks = np.empty(n)
    ranks[order] = np.repeat(r, counts)
    t = counts[counts > 1].astype(np.float64)
    return ranks, float(np.sum(t * t * t - t)) if t.size else 0.0


def midranks(x):
    """1-based average ranks of ``x`` and the tie term ``sum(t**3 - t)``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if USE_NUMBA:
        ranks, tie = _midranks_numba(x)
        return ranks, float(tie)
    return _midranks_numpy(x)
