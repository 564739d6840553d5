"""PCA projections of embedding subsets and scatter-plot output (CSV, SVG)."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping
from xml.sax.saxutils import escape

import numpy as np

from .core import EmbeddingSpace, EntityGroup, exact_mean
from .errors import InsufficientDataError, ParseError, ValidationError
from .linalg import leading_eigenvectors

RANK_TOL = 1e-10
PALETTE = ("#d95f02", "#1b9e77", "#7570b3", "#e7298a", "#66a61e", "#e6ab02")


@dataclass
class ProjectionModel:
    mean_vector: np.ndarray
    components: np.ndarray  # (k, dim), orthonormal rows
    explained_variance: np.ndarray
    total_variance: float
    fit_entity_ids: tuple
    seed: int = 0

    @property
    def n_components(self):
        return self.components.shape[0]

    @property
    def explained_variance_ratio(self):
        return self.explained_variance / self.total_variance

    def to_dict(self):
        return {
            "n_components": self.n_components,
            "explained_variance": [float(x) for x in self.explained_variance],
            "explained_variance_ratio": [float(x) for x in self.explained_variance_ratio],
            "n_fit": len(self.fit_entity_ids),
            "seed": self.seed,
        }


def fit_projection(entities: EntityGroup, space: EmbeddingSpace, n_components: int = 2,
                   seed: int = 0) -> ProjectionModel:
    """Mean-centred PCA of the group's vectors (population covariance)."""
    ids = tuple(entities.members)
    if n_components < 2:
        raise ValidationError("n_components must be >= 2")
    if len(ids) <= n_components:
        raise InsufficientDataError(f"need more than {n_components} entities, got {len(ids)}")
    X = space.vectors(ids)
    mean = exact_mean(X)
    Xc = X - mean
    cov = (Xc.T @ Xc) / len(ids)
    total = float(np.trace(cov))
    eig = leading_eigenvectors(cov, n_components, seed=seed)
    rank = int(np.sum(eig.values > RANK_TOL * max(total, 1e-300)))
    if rank < n_components or eig.vectors.shape[0] < n_components:
        raise InsufficientDataError(
            f"data has rank {rank}; at most {rank} components are achievable")
    return ProjectionModel(mean, eig.vectors, eig.values, total, ids, seed)


def project(model: ProjectionModel, targets: EntityGroup | list, space: EmbeddingSpace) -> dict:
    ids = list(getattr(targets, "members", targets))
    if space.dim != model.mean_vector.shape[0]:
        raise ValidationError(f"projection fitted in dim {model.mean_vector.shape[0]}, "
                              f"space has dim {space.dim}")
    coords = (space.vectors(ids) - model.mean_vector) @ model.components.T
    return {eid: tuple(row.tolist()) for eid, row in zip(ids, coords)}


def emit_scatter(coords: Mapping[str, tuple], labels: Mapping[str, str], path, fmt: str = "svg",
                 width: int = 800, height: int = 600, title: str = "",
                 axis_labels=("PC1", "PC2")) -> None:
    """Write the first two coordinates of each entity, sorted by id."""
    ids = sorted(coords)
    pts = {i: (float(coords[i][0]), float(coords[i][1])) for i in ids}
    if not all(math.isfinite(x) and math.isfinite(y) for x, y in pts.values()):
        raise ValidationError("scatter coordinates must be finite")
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "x", "y", "label"])
            for i in ids:
                w.writerow([i, repr(pts[i][0]), repr(pts[i][1]), labels.get(i, "")])
        return
    if fmt != "svg":
        raise ValidationError(f"unknown scatter format {fmt!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_svg(pts, labels, width, height, title, axis_labels))


def render_svg(pts, labels, width=800, height=600, title="", axis_labels=("PC1", "PC2")) -> str:
    ids = sorted(pts)
    classes = sorted({labels.get(i, "") for i in ids})
    colour = {c: PALETTE[k % len(PALETTE)] for k, c in enumerate(classes)}
    margin = 60
    xs = [pts[i][0] for i in ids] or [0.0]
    ys = [pts[i][1] for i in ids] or [0.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    sx = (width - 2 * margin) / (x1 - x0 if x1 > x0 else 1.0)
    sy = (height - 2 * margin) / (y1 - y0 if y1 > y0 else 1.0)

    def px(x, y):
        return margin + (x - x0) * sx, height - margin - (y - y0) * sy

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        "<style>" + "".join(
            f".c{k}{{fill:{colour[c]};fill-opacity:0.7}}" for k, c in enumerate(classes)) + "</style>",
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" '
        'stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 15}" text-anchor="middle">'
        f'{escape(axis_labels[0])}</text>',
        f'<text x="15" y="{height / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 15 {height / 2:.1f})">{escape(axis_labels[1])}</text>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="30" text-anchor="middle">{escape(title)}</text>')
    for i in ids:
        cx, cy = px(*pts[i])
        k = classes.index(labels.get(i, ""))
        out.append(f'<circle class="c{k}" cx="{cx:.2f}" cy="{cy:.2f}" r="3">'
                   f"<title>{escape(i)}</title></circle>")
    # legend lists only classes that have points
    for row, c in enumerate(classes):
        y = margin + 18 * row
        k = classes.index(c)
        out.append(f'<circle class="c{k}" cx="{width - margin - 90}" cy="{y}" r="5"/>')
        out.append(f'<text x="{width - margin - 80}" y="{y + 4}">{escape(c or "unlabelled")}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def read_scatter_csv(path) -> tuple:
    """Inverse of the CSV branch of :func:`emit_scatter`: ``(coords, labels)``."""
    coords, labels = {}, {}
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["id", "x", "y", "label"]:
            raise ParseError(f"unexpected header {header}", line=1, path=str(path))
        for lineno, row in enumerate(r, start=2):
            if len(row) != 4:
                raise ParseError("expected 4 columns", line=lineno, path=str(path))
            coords[row[0]] = (float(row[1]), float(row[2]))
            labels[row[0]] = row[3]
    return coords, labels
