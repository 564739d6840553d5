"""The audit pipeline: directions, validation, metrics, permutation tests,
scenarios and projections for every embedding variant of a config, plus the
side-by-side comparison of two reports."""
from __future__ import annotations

import contextlib
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .core import EntityGroup
from .directions import (
    CSVC_PRESETS,
    centroid_difference_direction,
    most_biased_entities,
    paired_pca_direction,
    probe_direction,
    random_pairs,
    train_linear_probe,
)
from .errors import AuditError, InsufficientDataError, ValidationError
from .io import (
    AuditConfig,
    read_embeddings,
    read_interactions,
    read_shares,
    resolve_groups,
)
from .metrics import compute_bundle, rripa, rripa_effect_size
from .projection import emit_scatter, fit_projection, project
from .scenarios import (
    history_centroid_scenario,
    majority_listener_scenario,
    predict_labels,
    stereotype_scores,
    variant_chi_square,
)
from .significance import (
    VALIDATION_TESTS,
    permutation_test_deaa,
    permutation_test_geaa,
    permutation_test_rripa,
    rripa_subsample_test,
    stream_id,
    validate_direction,
)
from .stats import bonferroni_alpha, chi_square_test

EXIT_CLEAN = 0
EXIT_ERROR = 1
EXIT_FLAGGED = 10

NOTES = (
    "effect size: (mean EAA over E - mean EAA over P) / population std of per-entity EAA over E u P",
    "GEAA is a sum over the group; mean_eaa_E / mean_eaa_P are size-free extras",
    "probe directions use normalised weights; the probe intercept is discarded",
    "directions are fitted on one part of A/B and validated on the held-out part",
)


class StageError(AuditError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


@contextlib.contextmanager
def stage(name):
    try:
        yield
    except StageError:
        raise
    except (AuditError, OSError, ValueError, KeyError, TypeError) as exc:
        raise StageError(name, exc) from exc


@dataclass
class AssociationReport:
    data: dict
    exit_code: int

    def to_dict(self):
        return self.data

    @property
    def flagged(self):
        return self.exit_code == EXIT_FLAGGED


def count_tests(config: AuditConfig) -> int:
    n_dirs = len(config.directions)
    n = VALIDATION_TESTS * n_dirs
    if "deaa" in config.metrics:
        n += 1
    if "geaa" in config.metrics:
        n += 2
    if "rripa" in config.metrics:
        n += n_dirs
    return n


def corrected_alpha(config: AuditConfig) -> float:
    if config.correction == "none":
        return float(config.alpha)
    return bonferroni_alpha(float(config.alpha), count_tests(config))


def holdout_split(group: EntityGroup, fraction: float, seed: int):
    """Seeded split of a group into (fit, held-out) parts, order preserved."""
    if fraction <= 0.0:
        return group, group
    n = len(group)
    n_hold = int(round(fraction * n))
    if n_hold < 5 or n - n_hold < 5:
        raise InsufficientDataError(
            f"group {group.name!r} ({n} members) too small for a {fraction} hold-out split")
    rng = np.random.default_rng([seed, stream_id(f"holdout:{group.name}")])
    hold = np.zeros(n, dtype=bool)
    hold[rng.permutation(n)[:n_hold]] = True
    fit = tuple(m for m, h in zip(group.members, hold) if not h)
    held = tuple(m for m, h in zip(group.members, hold) if h)
    # both parts keep the group name: probe labels must match the full group
    return EntityGroup(group.name, fit, group.role), EntityGroup(group.name, held, group.role)


def build_direction(spec: dict, A, B, space, seed: int, probe_cfg: dict, pca_cfg: dict):
    """One direction from its config spec; returns ``(direction, probe or None)``."""
    method, label = spec["method"], spec["label"]
    params = {**probe_cfg, **{k: v for k, v in spec.items() if k not in ("method", "label")}}
    if method == "centroid_difference":
        return centroid_difference_direction(A, B, space, label=label), None
    if method in ("linear_probe", *CSVC_PRESETS):
        ga, gb = A, B
        if method in CSVC_PRESETS:
            k = int(params.pop("k", CSVC_PRESETS[method]))
            cd = centroid_difference_direction(A, B, space)
            ga = most_biased_entities(A, cd, space, min(k, len(A)), sign=1)
            gb = most_biased_entities(B, cd, space, min(k, len(B)), sign=-1)
        params.pop("k", None)
        probe = train_linear_probe(ga, gb, space, seed=seed, **params)
        return probe_direction(probe, label=label), probe
    if method == "paired_pca":
        pp = {**pca_cfg, **{k: v for k, v in spec.items() if k not in ("method", "label")}}
        n_pairs = int(pp.get("n_pairs", min(len(A), len(B))))
        pairs = random_pairs(A, B, n_pairs, seed=seed)
        return paired_pca_direction(pairs, space, seed=seed, source_groups=(A.name, B.name),
                                    label=label), None
    raise ValidationError(f"unknown direction method {method!r}")


def _flag(p, threshold, kind, counts=True):
    return {"p_value": p, "threshold": threshold, "flagged": p is not None and p < threshold,
            "kind": kind, "counts_toward_verdict": counts}


def _audit_variant(config: AuditConfig, tag, space, groups, alpha_c, shared, first_variant):
    seed = config.seed
    A, B, E, P = (groups[r] for r in ("A", "B", "E", "P"))
    out = {"space": {"name": space.name, "n": len(space), "dim": space.dim}}
    flags = {}

    with stage("directions"):
        A_fit, A_hold = holdout_split(A, config.validation_holdout, seed)
        B_fit, B_hold = holdout_split(B, config.validation_holdout, seed)
        directions, probes = {}, {}
        for spec in config.directions:
            d, probe = build_direction(spec, A_fit, B_fit, space, seed, dict(config.probe),
                                       dict(config.paired_pca))
            directions[spec["label"]] = d
            if probe is not None:
                probes[spec["label"]] = probe
    with stage("validation"):
        for label, d in directions.items():
            d.validation = validate_direction(d, A_hold, B_hold, space, n_random=config.n_random,
                                              seed=seed, alpha_corrected=alpha_c,
                                              alternative=config.alternative)
            v = d.validation
            for i, p in enumerate((v.test1_p, v.test2_p, v.test3_p), start=1):
                flags[f"validation:{label}:test{i}"] = _flag(p, alpha_c, "validation", False)
            flags[f"direction:{label}"] = {"passed": v.passed, "threshold": alpha_c,
                                           "flagged": v.passed, "kind": "direction",
                                           "counts_toward_verdict": True}
        labels = list(directions)
        out["directions"] = {label: d.to_dict() for label, d in directions.items()}
        out["cross_direction_cosines"] = {
            a: {b: float(directions[a].vector @ directions[b].vector) for b in labels}
            for a in labels}

    with stage("metrics"):
        bundle = compute_bundle(E, P, A, B, space)
        metrics = bundle.to_dict()
        if "rripa" in config.metrics:
            metrics["rripa"] = {}
            for label, d in directions.items():
                re, rp = rripa(E, d, space), rripa(P, d, space)
                metrics["rripa"][label] = {"rripa_E": re, "rripa_P": rp,
                                           "rripa_differential": re - rp,
                                           "rripa_effect": rripa_effect_size(E, P, d, space)}
        out["metrics"] = {k: v for k, v in metrics.items()
                          if k in ("deaa", "effect_size", "rripa", "mean_eaa_E", "mean_eaa_P")
                          or (k.startswith("geaa") and "geaa" in config.metrics)
                          or k in config.metrics}

    with stage("permutation"):
        tests = {}
        n_perm, w = config.permutations, config.workers
        if "deaa" in config.metrics:
            r = permutation_test_deaa(E, P, A, B, space, n_perm, seed, w, config.null_samples)
            tests["deaa"] = r.to_dict(config.null_samples)
            flags["deaa"] = _flag(r.p_value, alpha_c, "metric")
        if "geaa" in config.metrics:
            rE, rP = permutation_test_geaa(E, A, B, space, n_perm, seed, w, config.null_samples,
                                           extra_groups=(P,))
            tests["geaa_E"] = rE.to_dict(config.null_samples)
            tests["geaa_P"] = rP.to_dict(config.null_samples)
            flags["geaa_E"] = _flag(rE.p_value, alpha_c, "metric")
            flags["geaa_P"] = _flag(rP.p_value, alpha_c, "metric")
        if "rripa" in config.metrics:
            for label, d in directions.items():
                if config.rripa_test == "permutation":
                    r = permutation_test_rripa(E, P, d, space, n_perm, seed, w, config.null_samples)
                    res, p = r.to_dict(config.null_samples), r.p_value
                else:
                    res = rripa_subsample_test(E, P, d, space, seed=seed)
                    p = res["p_value"]
                res["route"] = config.rripa_test
                tests[f"rripa:{label}"] = res
                # R-RIPA only speaks for the attribute when its direction validated
                flags[f"rripa:{label}"] = _flag(p, alpha_c, "metric", d.validation.passed)
        out["tests"] = tests

    if config.scenarios:
        with stage("scenarios"):
            out["scenarios"] = _run_scenarios(config, space, groups, probes, A, B, E, P,
                                              shared, first_variant)
    if config.projection:
        with stage("projection"):
            out["projection"] = _run_projection(config, tag, space, groups, directions, shared,
                                                first_variant)
    out["flags"] = flags
    out["bias_flagged"] = any(f["flagged"] and f["counts_toward_verdict"] for f in flags.values())
    return out


def _run_scenarios(config, space, groups, probes, A, B, E, P, shared, first_variant):
    sc = config.scenarios
    want = sc.get("probe")
    if want is not None:
        if want not in probes:
            raise ValidationError(f"scenario probe {want!r} is not a probe-based direction")
        probe = probes[want]
    elif probes:
        probe = probes[next(iter(probes))]
    else:
        probe = train_linear_probe(A, B, space, seed=config.seed, **dict(config.probe))
    res = {"probe": probe.summary()}
    ml = sc.get("majority_listener")
    if ml:
        shares = read_shares(config.resolve(ml["shares_file"]))
        items = tuple(m for m in E.members + P.members if m in shares)
        if ml.get("items"):
            items = tuple(ml["items"])
        r = majority_listener_scenario(probe, EntityGroup("items", items), shares, space,
                                       ml.get("deciles", (0.5, 0.6, 0.7, 0.8, 0.9)))
        res["majority_listener"] = r.to_dict()
    hc = sc.get("history_centroid")
    if hc:
        inter = read_interactions(config.resolve(hc["interactions_file"]))
        truth = {m: A.name for m in A.members}
        truth.update({m: B.name for m in B.members})
        inter = {u: v for u, v in inter.items() if u in truth}
        r = history_centroid_scenario(probe, inter, truth, space, int(hc.get("k", 3)))
        res["history_centroid"] = r.to_dict()
    st = sc.get("stereotyped_genre")
    if st is not None:
        expect = {"E": st.get("E", A.name) if isinstance(st, dict) else A.name,
                  "P": st.get("P", B.name) if isinstance(st, dict) else B.name}
        targets = EntityGroup("targets", E.members + P.members)
        preds, scores = predict_labels(probe, targets, space, return_scores=True)
        r = stereotype_scores(preds, [(E, expect["E"]), (P, expect["P"])], scores=scores,
                              labels=(A.name, B.name))
        if first_variant is not None and "stereotyped_genre" in shared:
            r.comparison_p_values.update(variant_chi_square(shared["stereotyped_genre"], r))
        shared.setdefault("stereotyped_genre", r)
        res["stereotyped_genre"] = r.to_dict()
    return res


def _run_projection(config, tag, space, groups, directions, shared, first_variant):
    pc = config.projection
    A, B = groups["A"], groups["B"]
    top_k = int(pc.get("top_k", 400))
    cd = centroid_difference_direction(A, B, space)
    fit_ids = (most_biased_entities(A, cd, space, min(top_k // 2, len(A)), 1).members
               + most_biased_entities(B, cd, space, min(top_k // 2, len(B)), -1).members)
    mode = pc.get("mode", "retrain")
    if mode == "shared" and "projection" in shared:
        model = shared["projection"]
    else:
        model = fit_projection(EntityGroup("fit", fit_ids), space, int(pc.get("n_components", 2)),
                               seed=config.seed)
        shared.setdefault("projection", model)
    roles = pc.get("project", ["E", "P"])
    targets = [m for r in roles for m in groups[r].members]
    labels = {m: groups[r].name for r in roles for m in groups[r].members}
    coords = project(model, targets, space)
    pc1 = model.components[0]
    out = {"model": model.to_dict(), "mode": mode,
           "pc1_cosine": {lab: abs(float(pc1 @ d.vector)) for lab, d in directions.items()},
           "pc1_cosine_full_centroid": abs(float(pc1 @ cd.vector)), "files": []}
    out_dir = pc.get("out_dir")
    if out_dir:
        os.makedirs(config.resolve(out_dir), exist_ok=True)
        fmts = ["svg", "csv"] if pc.get("format", "svg") == "both" else [pc.get("format", "svg")]
        for fmt in fmts:
            rel = os.path.join(out_dir, f"{tag}_projection.{fmt}")
            emit_scatter(coords, labels, config.resolve(rel), fmt,
                         title=f"{config.attribute_name}: {tag}")
            out["files"].append(rel)
    return out


def load_variants(config: AuditConfig) -> dict:
    spaces = {}
    with stage("ingest"):
        for tag, spec in config.variants.items():
            spaces[tag] = read_embeddings(config.resolve(spec["path"]), spec.get("format"),
                                          variant_tag=tag)
    return spaces


def run_audit(config: AuditConfig, spaces: dict | None = None) -> AssociationReport:
    """Run every stage on every variant; raises :class:`StageError` on failure."""
    if spaces is None:
        spaces = load_variants(config)
    with stage("ingest"):
        groups = resolve_groups(config)
    with stage("config"):
        alpha_c = corrected_alpha(config)
    variants = {}
    shared = {}
    first = None
    for tag in config.variants:
        variants[tag] = _audit_variant(config, tag, spaces[tag], groups, alpha_c, shared, first)
        first = first or tag
    flagged = any(v["bias_flagged"] for v in variants.values())
    data = {
        "toolkit": {"name": "aabaudit", "version": __version__},
        "attribute_name": config.attribute_name,
        "seed": config.seed,
        "config": config.echo(),
        "groups": {r: {"name": g.name, "size": len(g)} for r, g in groups.items()},
        "alpha": float(config.alpha),
        "correction": config.correction,
        "n_tests": count_tests(config),
        "alpha_corrected": alpha_c,
        "variants": variants,
        "verdict": {"bias_flagged": flagged, "exit_code": EXIT_FLAGGED if flagged else EXIT_CLEAN},
        "notes": list(NOTES),
    }
    return AssociationReport(data, EXIT_FLAGGED if flagged else EXIT_CLEAN)


# -- comparison -----------------------------------------------------------------

def _delta(a, b):
    out = {"first": a, "second": b, "delta": b - a}
    out["percent_change"] = 100.0 * (b - a) / abs(a) if a != 0 else None
    return out


def compare_reports(first: dict, second: dict) -> dict:
    """Side-by-side metrics of two reports (e.g. with and without an attribute).

    Variants are paired by tag when the tags match, otherwise the single
    variant of each report is compared. A test is marked ``reduced but still
    significant`` when its metric shrinks in magnitude yet the second report
    still flags it.
    """
    if first.get("attribute_name") != second.get("attribute_name"):
        raise ValidationError("reports audit different attributes: "
                              f"{first.get('attribute_name')!r} vs {second.get('attribute_name')!r}")
    ga = {r: g["name"] for r, g in first.get("groups", {}).items()}
    gb = {r: g["name"] for r, g in second.get("groups", {}).items()}
    if ga != gb:
        raise ValidationError(f"group schemas differ: {ga} vs {gb}")
    va, vb = first["variants"], second["variants"]
    if set(va) == set(vb):
        pairs = [(t, t) for t in va]
    elif len(va) == 1 and len(vb) == 1:
        pairs = [(next(iter(va)), next(iter(vb)))]
    else:
        raise ValidationError("cannot pair variants of the two reports")
    out = {"attribute_name": first["attribute_name"], "comparisons": {}}
    for ta, tb in pairs:
        a, b = va[ta], vb[tb]
        metrics = {}
        for k, x in a["metrics"].items():
            y = b["metrics"].get(k)
            if isinstance(x, (int, float)) and isinstance(y, (int, float)):
                metrics[k] = _delta(float(x), float(y))
        for lab, x in a["metrics"].get("rripa", {}).items():
            y = b["metrics"].get("rripa", {}).get(lab)
            if y:
                metrics[f"rripa:{lab}"] = _delta(x["rripa_differential"], y["rripa_differential"])
        status = {}
        for name in ("deaa", "geaa_E", "geaa_P"):
            if name in metrics and name in b.get("flags", {}):
                m = metrics[name]
                still = b["flags"][name]["flagged"]
                reduced = abs(m["second"]) < abs(m["first"])
                if reduced and still:
                    s = "reduced but still significant"
                elif reduced:
                    s = "reduced, no longer significant"
                elif still:
                    s = "not reduced, significant"
                else:
                    s = "not reduced, not significant"
                status[name] = {"status": s, "p_value": b["flags"][name]["p_value"],
                                "threshold": b["flags"][name]["threshold"]}
        chi = {}
        for sc in ("stereotyped_genre", "majority_listener", "history_centroid"):
            sa = a.get("scenarios", {}).get(sc)
            sb = b.get("scenarios", {}).get(sc)
            if not sa or not sb:
                continue
            for gname in sorted(set(sa["groups"]) & set(sb["groups"])):
                x, y = sa["groups"][gname], sb["groups"][gname]
                table = [[x["correct"], x["incorrect"]], [y["correct"], y["incorrect"]]]
                try:
                    chi[f"{sc}:{gname}"] = chi_square_test(table).p_value
                except (AuditError, ValueError):
                    chi[f"{sc}:{gname}"] = None
        out["comparisons"][f"{ta}->{tb}"] = {"metrics": metrics, "status": status,
                                             "scenario_chi_square": chi}
    return out

