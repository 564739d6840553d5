"""Readers and writers: embeddings, group labels, audit configs, reports.

Embedding formats
-----------------
TSV   optional header ``id<TAB>d0<TAB>...<TAB>d{k-1}``, then one row per entity.
JSONL one object per line: ``{"id": "...", "vec": [...]}``.

Numbers are parsed with Python/pandas float parsing, which ignores the
process locale (the decimal separator is always ``.``).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .core import EmbeddingSpace, EntityGroup, check_group_roles
from .errors import DuplicateIdError, ParseError, SerializationError, ValidationError

FLOAT_DIGITS = 12


# -- embeddings -----------------------------------------------------------------

def _infer_format(path, fmt):
    if fmt:
        return fmt.lower()
    suffix = Path(path).suffix.lower()
    return "jsonl" if suffix in (".jsonl", ".ndjson", ".json") else "tsv"


def _is_header(fields):
    return fields[0] == "id" and all(f.startswith("d") for f in fields[1:])


def _parse_float(token, lineno, path):
    try:
        x = float(token)
    except ValueError:
        raise ParseError(f"not a number: {token!r}", line=lineno, path=path) from None
    if not math.isfinite(x):
        raise ParseError(f"non-finite value {token!r}", line=lineno, path=path)
    return x


def _read_tsv_slow(path):
    """Line-by-line parser; slow but precise about where a file goes wrong."""
    ids, rows, seen, dim = [], [], {}, None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if lineno == 1 and _is_header(fields):
                continue
            eid = fields[0].strip()
            if not eid:
                raise ParseError("empty entity id", line=lineno, path=path)
            vec = [_parse_float(t, lineno, path) for t in fields[1:]]
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ParseError(f"ragged row: dimension {len(vec)}, expected {dim}",
                                 line=lineno, path=path)
            if eid in seen:
                raise DuplicateIdError(f"duplicate id {eid!r} (first at line {seen[eid]})",
                                       line=lineno, path=path)
            seen[eid] = lineno
            ids.append(eid)
            rows.append(vec)
    return ids, rows


def _read_tsv_fast(path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\r\n").split("\t")
    header = _is_header(first)
    df = pd.read_csv(path, sep="\t", header=None, skiprows=1 if header else 0,
                     dtype={0: str}, float_precision="round_trip", engine="c",
                     skip_blank_lines=True, keep_default_na=False, na_filter=False)
    ids = df.iloc[:, 0].str.strip()
    mat = df.iloc[:, 1:].to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(mat)) or ids.eq("").any() or ids.duplicated().any():
        raise ValueError("needs slow path diagnostics")
    return ids.tolist(), mat


def read_embeddings(path, fmt: str | None = None, name: str | None = None,
                    variant_tag: str = "") -> EmbeddingSpace:
    path = str(path)
    fmt = _infer_format(path, fmt)
    if not os.path.exists(path):
        raise FileNotFoundError(f"embedding file not found: {path}")
    if fmt == "tsv":
        try:
            ids, mat = _read_tsv_fast(path)
        except (ValueError, pd.errors.ParserError):
            ids, mat = _read_tsv_slow(path)
    elif fmt == "jsonl":
        ids, mat = _read_jsonl(path)
    else:
        raise ValidationError(f"unknown embedding format {fmt!r}")
    if len(ids) == 0:
        raise ParseError("no embedding rows", path=path)
    try:
        return EmbeddingSpace(ids, np.asarray(mat, dtype=np.float64),
                              name=name or Path(path).stem, variant_tag=variant_tag)
    except ValidationError as exc:
        raise ParseError(str(exc), path=path) from None


def _read_jsonl(path):
    ids, rows, seen, dim = [], [], {}, None
    with open(path, encoding="utf-8") as fh:
        record = 0
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            record += 1
            try:
                obj = json.loads(raw)
                eid = str(obj["id"])
                vec = [float(x) for x in obj["vec"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"record {record}: malformed ({exc})", line=lineno, path=path) from None
            if not all(math.isfinite(x) for x in vec):
                raise ParseError(f"record {record}: non-finite value", line=lineno, path=path)
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ParseError(f"record {record}: ragged dimension {len(vec)}, expected {dim}",
                                 line=lineno, path=path)
            if eid in seen:
                raise DuplicateIdError(f"record {record}: duplicate id {eid!r}", line=lineno, path=path)
            seen[eid] = lineno
            ids.append(eid)
            rows.append(vec)
    return ids, rows


def write_embeddings(space: EmbeddingSpace, path, fmt: str | None = None) -> None:
    """Write with shortest round-trip float repr, so re-reading is exact."""
    fmt = _infer_format(path, fmt)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if fmt == "tsv":
            fh.write("\t".join(["id"] + [f"d{j}" for j in range(space.dim)]) + "\n")
            for eid, row in zip(space.ids, space.matrix):
                fh.write(eid + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")
        elif fmt == "jsonl":
            for eid, row in zip(space.ids, space.matrix):
                fh.write(json.dumps({"id": eid, "vec": [float(x) for x in row]}) + "\n")
        else:
            raise ValidationError(f"unknown embedding format {fmt!r}")


# -- groups -----------------------------------------------------------------------

def read_labels(path) -> dict:
    """Two-column ``id<TAB>label`` file -> ``{label: [ids in file order]}``.

    An id may carry several labels (one line each); whether that is allowed
    depends on which labels are later paired as roles.
    """
    out, seen = {}, set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected 2 tab-separated columns", line=lineno, path=str(path))
            eid, label = parts[0].strip(), parts[1].strip()
            if lineno == 1 and (eid, label) == ("id", "label"):
                continue
            if not eid or not label:
                raise ParseError("empty id or label", line=lineno, path=str(path))
            if (eid, label) in seen:
                raise DuplicateIdError(f"{eid!r} labelled {label!r} twice", line=lineno, path=str(path))
            seen.add((eid, label))
            out.setdefault(label, []).append(eid)
    return out


def _group_from_block(block, where):
    try:
        return EntityGroup(str(block["name"]), tuple(block["members"]), block.get("role", "unassigned"))
    except KeyError as exc:
        raise ValidationError(f"{where}: group block missing {exc}") from None


def read_groups(path, roles: dict | None = None) -> list:
    """Groups from a JSON block file or a two-column label file.

    JSON: ``{"groups": [{"name", "role", "members"}, ...]}``. Label files
    produce one group per label; ``roles`` (e.g. ``{"A": "F", "B": "M"}``)
    selects labels and assigns their roles. Paired roles are checked for
    disjointness.
    """
    path = str(path)
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        blocks = data["groups"] if isinstance(data, dict) else data
        groups = [_group_from_block(b, path) for b in blocks]
        if roles:
            by_name = {g.name: g for g in groups}
            groups = [by_name[name].with_role(role) for role, name in roles.items()]
    else:
        labels = read_labels(path)
        if roles:
            groups = []
            for role, label in roles.items():
                if label not in labels:
                    raise ValidationError(f"group {label!r} for role {role} is empty in {path}")
                groups.append(EntityGroup(label, tuple(labels[label]), role))
        else:
            groups = [EntityGroup(lab, tuple(ids)) for lab, ids in labels.items()]
    check_group_roles(groups)
    return groups


def write_groups(groups, path) -> None:
    blocks = [{"name": g.name, "role": g.role, "members": list(g.members)} for g in groups]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"groups": blocks}, fh, indent=2)
        fh.write("\n")


# -- side tables ------------------------------------------------------------------

def read_interactions(path) -> dict:
    """``user<TAB>item<TAB>rank`` -> ``{user: [items by ascending rank]}``."""
    rows = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if lineno == 1 and parts[:2] == ["user_id", "item_id"]:
                continue
            if len(parts) != 3:
                raise ParseError("expected user, item, rank", line=lineno, path=str(path))
            rows.setdefault(parts[0], []).append((_parse_float(parts[2], lineno, str(path)), parts[1]))
    return {u: [i for _, i in sorted(v)] for u, v in rows.items()}


def write_interactions(interactions: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("user_id\titem_id\trank\n")
        for user in sorted(interactions):
            for rank, item in enumerate(interactions[user], start=1):
                fh.write(f"{user}\t{item}\t{rank}\n")


def read_shares(path) -> dict:
    """``item<TAB>share_positive`` -> ``{item: share}``."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if lineno == 1 and parts[0] == "item_id":
                continue
            if len(parts) != 2:
                raise ParseError("expected item, share", line=lineno, path=str(path))
            share = _parse_float(parts[1], lineno, str(path))
            if not 0.0 <= share <= 1.0:
                raise ParseError(f"share {share} outside [0, 1]", line=lineno, path=str(path))
            out[parts[0]] = share
    return out


def write_shares(shares, path) -> None:
    items = shares.items() if isinstance(shares, dict) else ((s.entity, s.share_positive) for s in shares)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("item_id\tshare_positive\n")
        for item, share in sorted(items):
            fh.write(f"{item}\t{float(share)!r}\n")


def read_direction(path):
    from .directions import BiasDirection

    with open(path, encoding="utf-8") as fh:
        return BiasDirection.from_dict(json.load(fh))


def write_direction(direction, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_canonical(direction.to_dict()))


# -- audit config -------------------------------------------------------------------

DIRECTION_METHODS = ("centroid_difference", "linear_probe", "paired_pca", "csvc_1", "csvc_2")
METRICS = ("geaa", "deaa", "effect_size", "rripa")
RRIPA_TESTS = ("permutation", "subsample")


@dataclass
class AuditConfig:
    attribute_name: str
    variants: dict
    groups: dict
    seed: int
    directions: list = field(default_factory=lambda: [
        {"method": "centroid_difference"}, {"method": "linear_probe"}, {"method": "paired_pca"}])
    metrics: list = field(default_factory=lambda: list(METRICS))
    permutations: int = 10_000
    alpha: float = 0.05
    correction: str = "bonferroni"
    n_random: int = 1000
    validation_holdout: float = 0.5
    rripa_test: str = "permutation"
    alternative: str = "two-sided"
    workers: int = 1
    probe: dict = field(default_factory=dict)
    paired_pca: dict = field(default_factory=dict)
    scenarios: dict | None = None
    projection: dict | None = None
    null_samples: bool = False
    output: dict = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        self.directions = [d if isinstance(d, dict) else {"method": d} for d in self.directions]
        self.validate()

    def validate(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ValidationError("config needs an integer 'seed'")
        if not isinstance(self.permutations, int) or self.permutations < 100:
            raise ValidationError("permutations must be an integer >= 100")
        if not 0.0 < float(self.alpha) < 0.5:
            raise ValidationError("alpha must be in (0, 0.5)")
        if self.correction not in ("bonferroni", "none"):
            raise ValidationError(f"unknown correction {self.correction!r}")
        if self.rripa_test not in RRIPA_TESTS:
            raise ValidationError(f"rripa_test must be one of {RRIPA_TESTS}")
        if self.alternative not in ("two-sided", "greater"):
            raise ValidationError("alternative must be 'two-sided' or 'greater'")
        if not self.variants:
            raise ValidationError("config lists no embedding variants")
        missing = [r for r in ("A", "B", "E", "P") if r not in self.groups]
        if missing:
            raise ValidationError(f"config lacks group definitions for roles {missing}")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise ValidationError(f"unknown metrics {bad}")
        labels = set()
        for d in self.directions:
            if d.get("method") not in DIRECTION_METHODS:
                raise ValidationError(f"unknown direction method {d.get('method')!r}")
            label = d.setdefault("label", d["method"])
            if label in labels:
                raise ValidationError(f"duplicate direction label {label!r}")
            labels.add(label)
        if not 0.0 <= self.validation_holdout < 1.0:
            raise ValidationError("validation_holdout must be in [0, 1)")
        if self.n_random < 100:
            raise ValidationError("n_random must be >= 100")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")

    def resolve(self, p) -> str:
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(self.base_dir, p))

    def echo(self) -> dict:
        """Config as embedded in reports. ``workers`` and ``base_dir`` are
        execution details that do not affect results and are left out."""
        out = {}
        for k in ("attribute_name", "variants", "groups", "seed", "directions", "metrics",
                  "permutations", "alpha", "correction", "n_random", "validation_holdout",
                  "rripa_test", "alternative", "probe", "paired_pca", "scenarios",
                  "projection", "null_samples", "output"):
            out[k] = getattr(self, k)
        return json.loads(json.dumps(out))

    @classmethod
    def from_dict(cls, data: dict, base_dir: str = ".") -> "AuditConfig":
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        extra = sorted(set(data) - known)
        if extra:
            raise ValidationError(f"unknown config keys {extra}")
        for key in ("attribute_name", "variants", "groups"):
            if key not in data:
                raise ValidationError(f"config missing {key!r}")
        if "seed" not in data:
            raise ValidationError("config needs a 'seed' (runs must be reproducible)")
        variants = {}
        for tag, spec in data["variants"].items():
            variants[tag] = {"path": spec} if isinstance(spec, str) else dict(spec)
        kwargs = dict(data)
        kwargs["variants"] = variants
        return cls(base_dir=base_dir, **kwargs)


def load_config(path, overrides: dict | None = None) -> AuditConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno, path=str(path)) from None
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    return AuditConfig.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))


def resolve_groups(config: AuditConfig) -> dict:
    """Role -> EntityGroup from the config's group specs.

    A spec is either ``{"name", "members"}`` or ``{"name", "labels_file",
    "label"}`` (members are the ids carrying that label).
    """
    cache = {}
    out = {}
    for role in ("A", "B", "E", "P"):
        spec = config.groups[role]
        if isinstance(spec, str):
            spec = {"label": spec}
        name = spec.get("name") or spec.get("label") or role
        if "members" in spec:
            out[role] = EntityGroup(name, tuple(spec["members"]), role)
            continue
        lf = spec.get("labels_file") or config.groups.get("labels_file")
        if not lf or "label" not in spec:
            raise ValidationError(f"group {role}: give 'members' or 'labels_file' + 'label'")
        path = config.resolve(lf)
        if path not in cache:
            cache[path] = read_labels(path)
        ids = cache[path].get(spec["label"])
        if not ids:
            raise ValidationError(f"group {role}: no ids labelled {spec['label']!r} in {lf}")
        out[role] = EntityGroup(name, tuple(ids), role)
    check_group_roles(list(out.values()))
    return out


# -- reports ------------------------------------------------------------------------

def _canonical(obj, where="$"):
    if isinstance(obj, dict):
        return {str(k): _canonical(v, f"{where}.{k}") for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v, f"{where}[{i}]") for i, v in enumerate(obj)]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise SerializationError(f"refusing to serialise non-finite value {x} at {where}")
        x = float(f"{x:.{FLOAT_DIGITS}g}")
        return 0.0 if x == 0.0 else x
    if isinstance(obj, np.ndarray):
        return _canonical(obj.tolist(), where)
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return _canonical(obj.to_dict(), where)
    raise SerializationError(f"cannot serialise {type(obj).__name__} at {where}")


def dumps_canonical(obj) -> str:
    """Sorted keys, floats rounded to 12 significant digits, NaN refused."""
    return json.dumps(_canonical(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _fmt(x):
    if x is None:
        return "-"
    if isinstance(x, bool):
        return "yes" if x else "no"
    if isinstance(x, float):
        return f"{x:.4g}"
    return str(x)


def render_markdown(report: dict) -> str:
    rep = _canonical(report)
    lines = [f"# Attribute association audit: {rep.get('attribute_name', '')}", ""]
    lines.append(f"seed {rep.get('seed')}, alpha {rep.get('alpha')}, "
                 f"verdict: {'bias flagged' if rep.get('verdict', {}).get('bias_flagged') else 'no significant bias'}")
    lines.append("")
    for tag, var in sorted(rep.get("variants", {}).items()):
        lines += [f"## Variant `{tag}`", ""]
        m = var.get("metrics", {})
        if m:
            lines += ["| metric | value |", "|---|---|"]
            for k in sorted(m):
                if not isinstance(m[k], dict):
                    lines.append(f"| {k} | {_fmt(m[k])} |")
            lines.append("")
        flags = var.get("flags", {})
        lines += ["| test | p-value | threshold | flag |", "|---|---|---|---|"]
        for name in sorted(flags):
            f = flags[name]
            lines.append(f"| {name} | {_fmt(f.get('p_value'))} | {_fmt(f.get('threshold'))} | "
                         f"{'FLAG' if f.get('flagged') else ''} |")
        lines.append("")
    for note in rep.get("notes", []):
        lines.append(f"- {note}")
    return "\n".join(lines).rstrip() + "\n"


def write_report(report, path, fmt: str = "json") -> None:
    """Serialise a report deterministically (JSON or markdown)."""
    data = report.to_dict() if hasattr(report, "to_dict") else report
    if fmt == "json":
        text = dumps_canonical(data)
    elif fmt in ("markdown", "md"):
        text = render_markdown(data)
    else:
        raise ValidationError(f"unknown report format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def read_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
