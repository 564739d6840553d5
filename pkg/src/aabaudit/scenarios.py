"""Classifier probes that explain attribute association.

Three scenarios are supported:

* ``majority_listener``: a probe trained on A/B entities labels items, and the
  labels are compared with each item's majority engagement side, optionally
  broken down by majority-share decile;
* ``history_centroid``: entities are represented by the centroid of their
  top-k interactions and classified by the same probe;
* ``stereotyped_genre``: items are scored against the label their stereotyped
  group is expected to carry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import EmbeddingSpace, EntityGroup, exact_mean
from .errors import InsufficientDataError, ValidationError
from .stats import chi_square_test, rank_sum_test

SCENARIOS = ("majority_listener", "history_centroid", "stereotyped_genre")
DEFAULT_DECILES = (0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class EngagementShares:
    entity: str
    share_positive: float

    def __post_init__(self):
        if not 0.0 <= self.share_positive <= 1.0 or math.isnan(self.share_positive):
            raise ValidationError(f"share for {self.entity!r} must be in [0, 1]")


def _shares_map(shares) -> dict:
    if isinstance(shares, Mapping):
        return {k: EngagementShares(k, float(v)).share_positive for k, v in shares.items()}
    return {s.entity: s.share_positive for s in shares}


def predict_labels(probe, targets: EntityGroup | Sequence[str], space: EmbeddingSpace,
                   return_scores: bool = False):
    """Map each target to the probe's positive label when ``w.v + b > 0``.

    A decision value of exactly zero maps to the negative label.
    """
    ids = list(getattr(targets, "members", targets))
    scores = probe.decision_function(space.vectors(ids))
    labels = {
        eid: probe.positive_label if s > 0.0 else probe.negative_label
        for eid, s in zip(ids, scores.tolist())
    }
    if return_scores:
        return labels, dict(zip(ids, scores.tolist()))
    return labels


@dataclass
class DecileTable:
    labels: tuple  # (A label, B label)
    deciles: tuple
    rows: list

    def row(self, side, decile):
        for r in self.rows:
            if r["side"] == side and r["decile"] == decile:
                return r
        raise KeyError((side, decile))

    def majority_fractions(self, side="all"):
        return [self.row(side, d)["majority_fraction"] for d in self.deciles]

    def to_dict(self):
        return {"labels": list(self.labels), "deciles": list(self.deciles), "rows": self.rows}


def decile_breakdown(predictions: Mapping[str, str], shares, deciles=DEFAULT_DECILES,
                     labels=("A", "B")) -> DecileTable:
    """Predicted-label shares per majority side and majority-share decile.

    ``share_positive`` is the engagement fraction from the ``labels[0]`` side.
    An entity's majority side is ``labels[0]`` when the share is >= 0.5; its
    bucket is the largest threshold not above its majority share. Rows are
    emitted for each side and for both sides pooled (side ``"all"``); empty
    buckets get count 0 and ``None`` shares.
    """
    share = _shares_map(shares)
    missing = sorted(set(predictions) - set(share))
    if missing:
        raise ValidationError(f"no engagement share for predicted entities {missing[:10]}")
    th = tuple(sorted(float(d) for d in deciles))
    if not th or th[0] < 0.5 or th[-1] > 1.0:
        raise ValidationError("decile thresholds must lie in [0.5, 1]")
    a_lab, b_lab = labels
    cells = {}
    for eid, pred in predictions.items():
        if pred not in labels:
            raise ValidationError(f"prediction {pred!r} for {eid!r} is not one of {labels}")
        s = share[eid]
        side, major = (a_lab, s) if s >= 0.5 else (b_lab, 1.0 - s)
        bucket = None
        for t in th:
            if major >= t:
                bucket = t
        if bucket is None:
            continue
        for key in ((side, bucket), ("all", bucket)):
            cells.setdefault(key, []).append((side, pred))
    rows = []
    for side in (a_lab, b_lab, "all"):
        for t in th:
            entries = cells.get((side, t), [])
            n = len(entries)
            if n == 0:
                rows.append({"side": side, "decile": t, "count": 0, "shares": None,
                             "majority_fraction": None})
                continue
            n_a = sum(1 for _, p in entries if p == a_lab)
            hits = sum(1 for s, p in entries if s == p)
            rows.append({
                "side": side,
                "decile": t,
                "count": n,
                "shares": {a_lab: n_a / n, b_lab: (n - n_a) / n},
                "majority_fraction": hits / n,
            })
    return DecileTable(labels=(a_lab, b_lab), deciles=th, rows=rows)


def history_centroid_features(interactions: Mapping[str, Sequence[str]], space: EmbeddingSpace,
                              k: int = 3, name: str = "history_centroids") -> EmbeddingSpace:
    """Per-entity centroid of the first ``k`` items of its ranked history.

    Entities with fewer than ``k`` items are skipped and listed in
    ``metadata["excluded"]`` of the returned space.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    ids, rows, excluded = [], [], []
    for user in sorted(interactions):
        items = list(interactions[user])
        if len(items) < k:
            excluded.append(user)
            continue
        ids.append(user)
        rows.append(exact_mean(space.vectors(items[:k])))
    if len(ids) < 2:
        raise InsufficientDataError(f"fewer than 2 entities have >= {k} interactions")
    return EmbeddingSpace(ids, np.vstack(rows), name=name, variant_tag=space.variant_tag,
                          metadata={"k": k, "excluded": excluded})


@dataclass
class ScenarioResult:
    scenario: str
    groups: dict
    confusion: dict
    decile_table: DecileTable | None = None
    comparison_p_values: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.scenario!r}")

    @property
    def n_scored(self):
        return sum(sum(row.values()) for row in self.confusion.values())

    def to_dict(self):
        out = {
            "scenario": self.scenario,
            "groups": self.groups,
            "confusion": self.confusion,
            "comparison_p_values": self.comparison_p_values,
            "notes": list(self.notes),
        }
        if self.decile_table is not None:
            out["decile_table"] = self.decile_table.to_dict()
        return out


def _prf(tp, fp, fn):
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def score_groups(predictions: Mapping[str, str], groups: Sequence[tuple], scenario: str,
                 labels=None) -> ScenarioResult:
    """Precision, recall and F1 per ``(group, expected_label)`` pair.

    Precision for a group counts every scored entity predicted with the
    group's expected label, whichever group it belongs to.
    """
    seen = {}
    for g, lab in groups:
        absent = [m for m in g.members if m not in predictions]
        if absent:
            raise ValidationError(f"group {g.name!r} has unscored members {absent[:10]}")
        for m in g.members:
            if m in seen:
                raise ValidationError(f"{m!r} belongs to both {seen[m]!r} and {g.name!r}")
            seen[m] = g.name
    truth = {m: lab for g, lab in groups for m in g.members}
    labels = tuple(labels) if labels else tuple(sorted({lab for _, lab in groups}
                                                      | {predictions[m] for m in truth}))
    confusion = {t: {p: 0 for p in labels} for t in labels}
    for m, t in truth.items():
        confusion[t][predictions[m]] += 1
    out = {}
    for g, lab in groups:
        tp = sum(1 for m in g.members if predictions[m] == lab)
        fn = len(g) - tp
        fp = sum(1 for m, t in truth.items() if t != lab and predictions[m] == lab)
        p, r, f1 = _prf(tp, fp, fn)
        out[g.name] = {"expected_label": lab, "precision": p, "recall": r, "f1": f1,
                       "support": len(g), "correct": tp, "incorrect": fn}
    return ScenarioResult(scenario=scenario, groups=out, confusion=confusion)


def variant_chi_square(first: ScenarioResult, second: ScenarioResult) -> dict:
    """Per group chi-square on (correct, incorrect) counts of two variants."""
    out = {}
    for name in sorted(set(first.groups) & set(second.groups)):
        a, b = first.groups[name], second.groups[name]
        table = [[a["correct"], a["incorrect"]], [b["correct"], b["incorrect"]]]
        try:
            out[f"chi2:{name}"] = chi_square_test(table).p_value
        except (InsufficientDataError, ValueError):
            # identical or degenerate margins: no evidence of a shift
            out[f"chi2:{name}"] = None
    return out


def stereotype_scores(predictions: Mapping[str, str], stereotype_truth: Sequence[tuple],
                      scores: Mapping[str, float] | None = None,
                      other_variant: ScenarioResult | None = None, labels=None) -> ScenarioResult:
    """Score predictions against stereotype labels.

    ``stereotype_truth`` is a list of ``(EntityGroup, expected_label)``. With
    decision ``scores`` the groups' score distributions are compared pairwise
    by rank-sum test; with ``other_variant`` a chi-square per group tests the
    shift in correct/incorrect counts.
    """
    res = score_groups(predictions, stereotype_truth, "stereotyped_genre", labels)
    if scores is not None:
        for i, (g1, _) in enumerate(stereotype_truth):
            for g2, _ in stereotype_truth[i + 1:]:
                x = [scores[m] for m in g1.members]
                y = [scores[m] for m in g2.members]
                try:
                    p = rank_sum_test(x, y).p_value
                except (InsufficientDataError, ValueError) as exc:
                    p = None
                    res.notes.append(f"rank-sum {g1.name} vs {g2.name} skipped: {exc}")
                res.comparison_p_values[f"rank_sum:{g1.name}:{g2.name}"] = p
    if other_variant is not None:
        res.comparison_p_values.update(variant_chi_square(res, other_variant))
    return res


def majority_listener_scenario(probe, items: EntityGroup, shares, space: EmbeddingSpace,
                               deciles=DEFAULT_DECILES) -> ScenarioResult:
    """Label items with a probe trained on A/B entities; truth is the majority side."""
    preds = predict_labels(probe, items, space)
    share = _shares_map(shares)
    a_lab, b_lab = probe.positive_label, probe.negative_label
    pos = tuple(m for m in items.members if share[m] >= 0.5)
    neg = tuple(m for m in items.members if share[m] < 0.5)
    groups = []
    if pos:
        groups.append((EntityGroup(f"{a_lab}-majority", pos), a_lab))
    if neg:
        groups.append((EntityGroup(f"{b_lab}-majority", neg), b_lab))
    res = score_groups(preds, groups, "majority_listener", labels=(a_lab, b_lab))
    res.decile_table = decile_breakdown(preds, share, deciles, labels=(a_lab, b_lab))
    res.notes.append(f"probe intercept {probe.intercept:.6g}")
    return res


def history_centroid_scenario(probe, interactions, truth_labels: Mapping[str, str],
                              space: EmbeddingSpace, k: int = 3) -> ScenarioResult:
    """Classify entities by the centroid of their top-``k`` interacted items."""
    feats = history_centroid_features(interactions, space, k)
    preds = predict_labels(probe, feats.ids, feats)
    a_lab, b_lab = probe.positive_label, probe.negative_label
    groups = []
    for lab in (a_lab, b_lab):
        members = tuple(u for u in feats.ids if truth_labels.get(u) == lab)
        if members:
            groups.append((EntityGroup(f"{lab}-history", members), lab))
    scored = {m: preds[m] for g, _ in groups for m in g.members}
    res = score_groups(scored, groups, "history_centroid", labels=(a_lab, b_lab))
    if feats.metadata["excluded"]:
        res.notes.append(f"{len(feats.metadata['excluded'])} entities with < {k} items excluded")
    return res


@dataclass
class MisclassificationTable:
    references: tuple
    rows: list
    per_entity: dict

    def to_dict(self):
        return {"references": list(self.references), "rows": self.rows,
                "per_entity": self.per_entity}


def misclassified_centroid_analysis(predictions: Mapping[str, str], truth_labels: Mapping[str, str],
                                    reference_centroids: Mapping[str, np.ndarray],
                                    space: EmbeddingSpace) -> MisclassificationTable:
    """Mean cosine of misclassified entities with each reference centroid.

    Rows aggregate per (truth, predicted) cell; ``per_entity`` keeps the
    individual cosines.
    """
    refs = tuple(sorted(reference_centroids))
    R = np.vstack([np.asarray(reference_centroids[r], dtype=np.float64) for r in refs]) \
        if refs else np.zeros((0, space.dim))
    if refs:
        R = R / np.linalg.norm(R, axis=1, keepdims=True)
    wrong = sorted(e for e, p in predictions.items() if e in truth_labels and truth_labels[e] != p)
    per_entity = {}
    cells = {}
    if wrong and refs:
        C = space.unit_vectors(wrong) @ R.T
        for eid, row in zip(wrong, C):
            per_entity[eid] = dict(zip(refs, row.tolist()))
            cells.setdefault((truth_labels[eid], predictions[eid]), []).append(row)
    rows = []
    for (t, p), vals in sorted(cells.items()):
        m = exact_mean(np.vstack(vals))
        rows.append({"truth": t, "predicted": p, "count": len(vals),
                     "mean_cosine": dict(zip(refs, m.tolist()))})
    return MisclassificationTable(references=refs, rows=rows, per_entity=per_entity)
