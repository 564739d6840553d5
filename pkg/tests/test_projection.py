import re

import numpy as np
import pytest

from aabaudit.core import EmbeddingSpace
from aabaudit.errors import InsufficientDataError
from aabaudit.projection import emit_scatter, fit_projection, project, read_scatter_csv

from conftest import group


def _space(X):
    ids = [f"x{i:05d}" for i in range(len(X))]
    return EmbeddingSpace(ids, X), group("all", ids)


def test_points_on_a_line(rng):
    d = np.array([1.0, 2.0, 2.0]) / 3.0
    t = rng.normal(size=50)
    sp, g = _space(np.outer(t, d) + np.array([5.0, 0.0, 1.0]))
    with pytest.raises(InsufficientDataError, match="rank 1"):
        fit_projection(g, sp)
    # a line plus a small second axis: the leading component is the line
    X = np.outer(t, d) + np.outer(1e-3 * rng.normal(size=50), [2 / 3, 1 / 3, -2 / 3]) + 4.0
    sp, g = _space(X)
    m = fit_projection(g, sp)
    assert abs(m.components[0] @ d) == pytest.approx(1.0, abs=1e-6)
    assert m.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-5)


def test_isotropic_cloud(rng):
    sp, g = _space(rng.normal(size=(10_000, 4)))
    m = fit_projection(g, sp, n_components=4)
    np.testing.assert_allclose(m.explained_variance_ratio, 0.25, atol=0.05)
    np.testing.assert_allclose(m.components @ m.components.T, np.eye(4), atol=1e-8)
    assert np.all(np.diff(m.explained_variance) <= 0)


def test_projection_basics(rng):
    X = rng.normal(size=(200, 5)) * np.array([4, 2, 1, 1, 1])
    sp, g = _space(X)
    m = fit_projection(g, sp, seed=3)
    extra = EmbeddingSpace(["mean", "pc1"], np.vstack([m.mean_vector, m.mean_vector + m.components[0]]))
    coords = project(m, ["mean", "pc1"], extra)
    np.testing.assert_allclose(coords["mean"], (0, 0), atol=1e-12)
    np.testing.assert_allclose(coords["pc1"], (1, 0), atol=1e-12)
    batch = project(m, g, sp)
    for eid in g.members[:20]:
        one = (sp.vector(eid) - m.mean_vector) @ m.components.T
        np.testing.assert_allclose(batch[eid], one, atol=1e-12)
    # translating every vector moves nothing
    sp2, g2 = _space(X + 100.0)
    m2 = fit_projection(g2, sp2, seed=3)
    moved = project(m2, g2, sp2)
    for eid in g.members:
        np.testing.assert_allclose(np.abs(moved[eid]), np.abs(batch[eid]),
                                   atol=1e-9)
    # deterministic given the seed
    np.testing.assert_array_equal(fit_projection(g, sp, seed=3).components, m.components)


def test_scatter_outputs(tmp_path):
    coords = {"a": (0.0, 1.0), "b": (1.0, 0.5), "c": (-1.0, 2.0), "d": (0.25, -1.0)}
    labels = {"a": "F", "b": "F", "c": "M", "d": "M"}
    emit_scatter(coords, labels, tmp_path / "s.svg")
    svg = (tmp_path / "s.svg").read_text()
    assert len(re.findall(r'<circle class="c\d+" cx="[\d.]+" cy="[\d.]+" r="3">', svg)) == 4
    assert set(re.findall(r'<circle class="(c\d+)" cx="[\d.]+" cy="[\d.]+" r="3">', svg)) == \
        {"c0", "c1"}
    assert 'width="800" height="600"' in svg

    emit_scatter(coords, labels, tmp_path / "s.csv", fmt="csv")
    back, back_labels = read_scatter_csv(tmp_path / "s.csv")
    assert back == coords and back_labels == labels


def test_scatter_legend_omits_empty_class(tmp_path):
    emit_scatter({"a": (0.0, 0.0), "b": (1.0, 1.0)}, {"a": "F", "b": "F"}, tmp_path / "s.svg")
    svg = (tmp_path / "s.svg").read_text()
    assert ">F</text>" in svg and ">M</text>" not in svg
