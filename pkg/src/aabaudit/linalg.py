"""Leading eigenvectors of symmetric PSD matrices by power iteration."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

_logger = logging.getLogger(__name__)

TOL = 1e-9
MAX_ITER = 10_000


@dataclass
class EigenResult:
    values: np.ndarray  # non-increasing
    vectors: np.ndarray  # (k, d), orthonormal rows
    iterations: list
    converged: list


def _orthogonalize(v, basis):
    for b in basis:
        v = v - np.dot(b, v) * b
    return v


def leading_eigenvectors(cov, k, seed=0, tol=TOL, max_iter=MAX_ITER) -> EigenResult:
    """Top ``k`` eigenpairs of a symmetric positive semi-definite matrix.

    Power iteration with deflation; every iterate is re-orthogonalised against
    the components already found, so the rows of ``vectors`` are orthonormal
    to machine precision even when eigenvalues are nearly tied. Start vectors
    come from ``numpy.random.default_rng(seed)``.
    """
    cov = np.array(cov, dtype=np.float64)
    d = cov.shape[0]
    if cov.shape != (d, d):
        raise ValueError("covariance must be square")
    k = min(k, d)
    rng = np.random.default_rng(seed)
    work = cov.copy()
    vals, vecs, iters, conv = [], [], [], []
    scale = max(float(np.trace(cov)), np.finfo(float).tiny)
    for _ in range(k):
        v = _orthogonalize(rng.standard_normal(d), vecs)
        v /= np.linalg.norm(v)
        done = False
        it = 0
        for it in range(1, max_iter + 1):
            w = _orthogonalize(work @ v, vecs)
            nw = np.linalg.norm(w)
            if nw <= 1e-300 or nw <= 1e-15 * scale:
                # remaining spectrum is numerically zero; keep the orthogonal start
                done = True
                break
            w /= nw
            if np.dot(w, v) < 0:
                w = -w
            delta = np.linalg.norm(w - v)
            v = w
            if delta < tol:
                done = True
                break
        if not done:
            _logger.warning("power iteration hit %d iterations without converging", max_iter)
        lam = float(v @ cov @ v)
        vals.append(max(lam, 0.0))
        vecs.append(v)
        iters.append(it)
        conv.append(done)
        work = work - lam * np.outer(v, v)
    order = np.argsort(-np.asarray(vals), kind="stable")
    return EigenResult(
        values=np.asarray(vals)[order],
        vectors=np.asarray(vecs)[order],
        iterations=[iters[i] for i in order],
        converged=[conv[i] for i in order],
    )
