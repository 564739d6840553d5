"""Command line entry point: ``aabaudit <subcommand> ...``.

Exit codes for ``audit``: 0 ran clean with nothing flagged, 10 ran clean and
flagged bias, 1 error (the failing stage is named on stderr).
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .audit import (
    EXIT_ERROR,
    StageError,
    compare_reports,
    load_variants,
    run_audit,
    stage,
)
from .io import (
    dumps_canonical,
    load_config,
    read_direction,
    read_report,
    render_markdown,
    resolve_groups,
    write_direction,
    write_embeddings,
    write_groups,
    write_interactions,
    write_report,
    write_shares,
)
from .significance import validate_direction
from .stats import bonferroni_alpha


def _emit(text, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _overrides(args):
    return {"seed": getattr(args, "seed", None),
            "permutations": getattr(args, "permutations", None),
            "alpha": getattr(args, "alpha", None),
            "workers": getattr(args, "workers", None),
            "null_samples": True if getattr(args, "dump_null", False) else None}


def _load(args):
    with stage("config"):
        return load_config(args.config, _overrides(args))


def cmd_audit(args) -> int:
    config = _load(args)
    report = run_audit(config)
    fmt = args.format or config.output.get("format", "json")
    out = args.out or (config.resolve(config.output["path"]) if config.output.get("path") else None)
    with stage("report"):
        if out:
            write_report(report, out, fmt)
        else:
            _emit(dumps_canonical(report.data) if fmt == "json" else render_markdown(report.data), None)
        if args.save_directions:
            os.makedirs(args.save_directions, exist_ok=True)
            for tag, var in report.data["variants"].items():
                for label, d in var["directions"].items():
                    path = os.path.join(args.save_directions, f"{tag}_{label}.json")
                    with open(path, "w", encoding="utf-8", newline="\n") as fh:
                        fh.write(dumps_canonical(d))
    return report.exit_code


def cmd_compare(args) -> int:
    with stage("ingest"):
        a = read_report(args.report_a)
        b = read_report(args.report_b)
    with stage("compare"):
        result = compare_reports(a, b)
    with stage("report"):
        if args.format == "markdown":
            lines = [f"# Comparison: {result['attribute_name']}", ""]
            for pair, comp in sorted(result["comparisons"].items()):
                lines += [f"## {pair}", "", "| metric | first | second | change % |", "|---|---|---|---|"]
                for k, m in sorted(comp["metrics"].items()):
                    pct = "-" if m["percent_change"] is None else f"{m['percent_change']:.2f}"
                    lines.append(f"| {k} | {m['first']:.6g} | {m['second']:.6g} | {pct} |")
                lines.append("")
                for k, s in sorted(comp["status"].items()):
                    lines.append(f"- {k}: {s['status']} (p = {s['p_value']:.4g})")
                lines.append("")
            _emit("\n".join(lines).rstrip() + "\n", args.out)
        else:
            _emit(dumps_canonical(result), args.out)
    return 0


def _labels_file(path, labelled):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id\tlabel\n")
        for label, ids in labelled:
            for i in ids:
                fh.write(f"{i}\t{label}\n")


def _audit_template(variants, groups, seed, extra):
    cfg = {
        "attribute_name": extra.pop("attribute_name", "attribute"),
        "seed": seed,
        "variants": variants,
        "groups": {r: {"name": name, "labels_file": "labels.tsv", "label": name}
                   for r, name in groups.items()},
        "output": {"format": "json"},
    }
    cfg.update(extra)
    return cfg


def _write_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_generate(args) -> int:
    from .synthetic import (
        PlantedConfig,
        generate_interaction_log,
        generate_listener_scenario,
        generate_planted_space,
        train_toy_mf,
    )

    with stage("config"):
        with open(args.config, encoding="utf-8") as fh:
            gen = json.load(fh)
        kind = gen.get("kind", "planted")
        seed = args.seed if args.seed is not None else int(gen.get("seed", 0))
        base = os.path.dirname(os.path.abspath(args.config))
        out_dir = args.out_dir or os.path.join(base, gen.get("out_dir", "generated"))
        audit_extra = dict(gen.get("audit", {}))
    with stage("generate"):
        os.makedirs(out_dir, exist_ok=True)
        written = []
        if kind == "planted":
            cfg = PlantedConfig.from_dict({**gen.get("planted", {}), "seed": seed})
            ps = generate_planted_space(cfg)
            write_embeddings(ps.space, os.path.join(out_dir, "embeddings.tsv"))
            groups = [ps.groups[r] for r in ("A", "B", "E", "P")]
            write_groups(groups, os.path.join(out_dir, "groups.json"))
            _labels_file(os.path.join(out_dir, "labels.tsv"), [(g.name, g.members) for g in groups])
            _write_json({"vector": [float(x) for x in ps.direction], "seed": seed},
                        os.path.join(out_dir, "true_direction.json"))
            _write_json(_audit_template({"planted": "embeddings.tsv"},
                                        {r: r for r in "ABEP"}, seed, audit_extra),
                        os.path.join(out_dir, "audit.json"))
            written = ["embeddings.tsv", "groups.json", "labels.tsv", "true_direction.json", "audit.json"]
        elif kind == "mf":
            log = generate_interaction_log(seed=seed, **gen.get("log", {}))
            mf = dict(gen.get("mf", {}))
            labelled = [("A", log.attribute_group("A").members), ("B", log.attribute_group("B").members),
                        ("X", log.genre_group("X").members), ("Y", log.genre_group("Y").members)]
            _labels_file(os.path.join(out_dir, "labels.tsv"), labelled)
            weights = {}
            for u, i, w in log.triples:
                weights.setdefault(u, []).append((-w, i))
            write_interactions({u: [i for _, i in sorted(v)] for u, v in weights.items()},
                               os.path.join(out_dir, "interactions.tsv"))
            written = ["labels.tsv", "interactions.tsv"]
            for use, tag in ((True, "with_attribute"), (False, "without_attribute")):
                space = train_toy_mf(log, use_attribute=use, seed=seed, **mf)
                write_embeddings(space, os.path.join(out_dir, f"{tag}.tsv"))
                _write_json(_audit_template({tag: f"{tag}.tsv"},
                                            {"A": "A", "B": "B", "E": "X", "P": "Y"}, seed,
                                            dict(audit_extra)),
                            os.path.join(out_dir, f"audit_{tag}.json"))
                written += [f"{tag}.tsv", f"audit_{tag}.json"]
        elif kind == "listener":
            sc = generate_listener_scenario(seed=seed, **gen.get("listener", {}))
            write_embeddings(sc.space, os.path.join(out_dir, "embeddings.tsv"))
            cos = sc.space.unit_vectors(sc.items.members) @ sc.direction
            e_items = tuple(m for m, c in zip(sc.items.members, cos) if c >= 0)
            p_items = tuple(m for m, c in zip(sc.items.members, cos) if c < 0)
            _labels_file(os.path.join(out_dir, "labels.tsv"),
                         [("A", sc.A.members), ("B", sc.B.members), ("E", e_items), ("P", p_items)])
            write_shares(sc.shares, os.path.join(out_dir, "shares.tsv"))
            write_interactions(sc.interactions, os.path.join(out_dir, "interactions.tsv"))
            extra = {"scenarios": {"majority_listener": {"shares_file": "shares.tsv"},
                                   "history_centroid": {"interactions_file": "interactions.tsv"},
                                   "stereotyped_genre": {}}}
            extra.update(audit_extra)
            _write_json(_audit_template({"listener": "embeddings.tsv"}, {r: r for r in "ABEP"},
                                        seed, extra), os.path.join(out_dir, "audit.json"))
            written = ["embeddings.tsv", "labels.tsv", "shares.tsv", "interactions.tsv", "audit.json"]
        else:
            raise StageError("config", ValueError(f"unknown generator kind {kind!r}"))
    sys.stdout.write(dumps_canonical({"out_dir": out_dir, "files": written}))
    return 0


def cmd_project(args) -> int:
    from .audit import _run_projection

    config = _load(args)
    if args.out_dir:
        config.projection = {**(config.projection or {}), "out_dir": args.out_dir}
    if args.format:
        config.projection = {**(config.projection or {}), "format": args.format}
    if not config.projection:
        config.projection = {"out_dir": "projections"}
    spaces = load_variants(config)
    with stage("ingest"):
        groups = resolve_groups(config)
    out, shared = {}, {}
    with stage("projection"):
        for tag, space in spaces.items():
            out[tag] = _run_projection(config, tag, space, groups, {}, shared, None)
    sys.stdout.write(dumps_canonical(out))
    return 0


def cmd_validate_direction(args) -> int:
    config = _load(args)
    with stage("ingest"):
        direction = read_direction(args.direction)
        groups = resolve_groups(config)
    spaces = load_variants(config)
    alpha = float(config.alpha)
    alpha_c = bonferroni_alpha(alpha, 3) if config.correction == "bonferroni" else alpha
    out, results = {}, []
    with stage("validation"):
        for tag, space in spaces.items():
            v = validate_direction(direction, groups["A"], groups["B"], space,
                                   n_random=args.n_random or config.n_random, seed=config.seed,
                                   alpha_corrected=alpha_c, alternative=config.alternative)
            out[tag] = v.to_dict()
            results.append(v)
    if args.out:
        # the stored result is the one for the first variant
        direction.validation = results[0]
        write_direction(direction, args.out)
    sys.stdout.write(dumps_canonical({"direction": direction.label, "validation": out}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aabaudit",
                                description="Audit embedding spaces for attribute association bias.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, perms=True):
        sp.add_argument("config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--alpha", type=float, help="family-wise significance level")
        if perms:
            sp.add_argument("--permutations", type=int, help="permutations per test")
            sp.add_argument("--workers", type=int, help="threads for permutation blocks")

    a = sub.add_parser("audit", help="run the full audit and write a report")
    common(a)
    a.add_argument("--format", choices=("json", "markdown"))
    a.add_argument("--out", help="report path (default: config output.path or stdout)")
    a.add_argument("--save-directions", metavar="DIR", help="also write each direction as JSON")
    a.add_argument("--dump-null", action="store_true", help="include full null samples")
    a.set_defaults(func=cmd_audit)

    c = sub.add_parser("compare", help="compare two audit reports")
    c.add_argument("report_a")
    c.add_argument("report_b")
    c.add_argument("--format", choices=("json", "markdown"), default="json")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    g = sub.add_parser("generate", help="write synthetic embeddings, labels and audit configs")
    g.add_argument("config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out-dir")
    g.set_defaults(func=cmd_generate)

    pr = sub.add_parser("project", help="PCA projection plots of the configured groups")
    common(pr, perms=False)
    pr.add_argument("--out-dir")
    pr.add_argument("--format", choices=("svg", "csv", "both"))
    pr.set_defaults(func=cmd_project)

    v = sub.add_parser("validate-direction", help="run the three validation tests on a stored direction")
    common(v, perms=False)
    v.add_argument("--direction", required=True, help="direction JSON file")
    v.add_argument("--n-random", type=int)
    v.add_argument("--out", help="write the direction with its validation result")
    v.set_defaults(func=cmd_validate_direction)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
