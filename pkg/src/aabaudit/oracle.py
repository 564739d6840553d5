"""Naive reference implementations of the association metrics.

Plain Python double loops over lists of floats. Nothing here is shared with
:mod:`aabaudit.metrics`; the two are compared against each other in tests.
"""
import math


def _cos(u, v):
    dot = 0.0
    nu = 0.0
    nv = 0.0
    for x, y in zip(u, v):
        dot += x * y
        nu += x * x
        nv += y * y
    return dot / (math.sqrt(nu) * math.sqrt(nv))


def _vecs(ids, lookup):
    return [[float(x) for x in lookup(i)] for i in ids]


def eaa(e, A, B):
    """``e`` is a vector, ``A`` and ``B`` are lists of vectors."""
    sa = 0.0
    for a in A:
        sa += _cos(e, a)
    sb = 0.0
    for b in B:
        sb += _cos(e, b)
    return sa / len(A) - sb / len(B)


def geaa(E, A, B):
    total = 0.0
    for e in E:
        total += eaa(e, A, B)
    return total


def deaa(E, P, A, B):
    return geaa(E, A, B) - geaa(P, A, B)


def _pop_sd(xs):
    m = sum(xs) / len(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / len(xs))


def effect_size(E, P, A, B):
    se = [eaa(e, A, B) for e in E]
    sp = [eaa(p, A, B) for p in P]
    return (sum(se) / len(se) - sum(sp) / len(sp)) / _pop_sd(se + sp)


def rripa(E, psi):
    total = 0.0
    for e in E:
        total += _cos(e, psi)
    return total / len(E)


def rripa_effect(E, P, psi):
    ce = [_cos(e, psi) for e in E]
    cp = [_cos(p, psi) for p in P]
    return (rripa(E, psi) - rripa(P, psi)) / _pop_sd(ce + cp)


def brute_force_metrics(E, P, A, B, psi, lookup):
    """All six metrics from id lists and a ``lookup(id) -> vector`` callable."""
    vE, vP, vA, vB = (_vecs(g, lookup) for g in (E, P, A, B))
    psi = [float(x) for x in psi]
    return {
        "geaa_E": geaa(vE, vA, vB),
        "geaa_P": geaa(vP, vA, vB),
        "deaa": deaa(vE, vP, vA, vB),
        "effect_size": effect_size(vE, vP, vA, vB),
        "rripa_E": rripa(vE, psi),
        "rripa_P": rripa(vP, psi),
        "rripa_effect": rripa_effect(vE, vP, psi),
    }
