import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lego_fusion.errors import DimensionMismatch, NotNormalized, ZeroRow, ZeroVector
from lego_fusion.graph_build import (
    KINDS,
    FeatureSet,
    RelationshipGraph,
    build_graph,
    distance_similarity_residual,
    normalize_rows,
    relationship,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def feature_matrices(max_n=6, max_d=5):
    shapes = st.tuples(st.integers(1, max_n), st.integers(1, max_d))
    return shapes.flatmap(lambda s: arrays(np.float64, s, elements=finite))


def nonzero_rows(m):
    return np.all(np.linalg.norm(m, axis=1) > 1e-3)


def test_normalize_rows_examples():
    out = normalize_rows(FeatureSet("v", [[3.0, 4.0]]))
    assert out.features.tolist() == [[0.6, 0.8]]
    assert out.normalized
    assert normalize_rows(FeatureSet("v", [[1.0, 0.0, 0.0]])).features.tolist() == [[1.0, 0.0, 0.0]]
    with pytest.raises(ZeroRow) as exc:
        normalize_rows(FeatureSet("v", [[0.0, 0.0]]))
    assert exc.value.index == 0


def test_featureset_validation():
    with pytest.raises(ValueError):
        FeatureSet("v", [[np.nan, 1.0]])
    with pytest.raises(ValueError):
        FeatureSet("v", np.zeros((0, 3)))
    with pytest.raises(NotNormalized):
        FeatureSet("v", [[1.0, 1.0]], normalized=True)
    fs = FeatureSet("v", [[1.0, 2.0]])
    assert not fs.features.flags.writeable


def test_relationship_examples():
    assert relationship((1, 0), (1, 0), "cosine") == 1.0
    assert relationship((1, 0), (-1, 0), "clamped-cosine") == 0.0
    # exp(-gamma * ||(0,0) - (1,1)||^2) with gamma = 1
    assert relationship((0, 0), (1, 1), "gaussian", gamma=1.0) == pytest.approx(0.1353352832366127, abs=1e-15)
    assert relationship((0, 0), (1, 1), "gaussian", gamma=0.5) == pytest.approx(math.exp(-1.0), abs=1e-15)


def test_relationship_errors():
    with pytest.raises(DimensionMismatch):
        relationship((1, 0), (1, 0, 0))
    with pytest.raises(ZeroVector):
        relationship((0, 0), (1, 0), "cosine")
    assert relationship((0, 0), (0, 0), "gaussian") == 1.0
    with pytest.raises(ValueError):
        relationship((1, 0), (1, 0), "gaussian", gamma=0.0)
    with pytest.raises(ValueError):
        relationship((1, 0), (1, 0), "dot")


def test_build_graph_examples():
    g = build_graph(FeatureSet("v", [[1.0, 2.0], [1.0, 2.0]]))
    assert g.scores.tolist() == [[1.0, 1.0], [1.0, 1.0]]
    g = build_graph(FeatureSet("v", [[1.0, 0.0], [0.0, 1.0]]), "clamped-cosine")
    assert g.scores.tolist() == [[1.0, 0.0], [0.0, 1.0]]
    assert g.value_range == (0.0, 1.0)


def test_build_graph_zero_row_names_pair():
    with pytest.raises(ZeroVector, match=r"\(0, 2\)"):
        build_graph(FeatureSet("v", [[1.0, 0.0], [0.5, 0.5], [0.0, 0.0]]))


def test_build_graph_single_node():
    assert build_graph(FeatureSet("v", [[2.0, 1.0]])).scores.tolist() == [[1.0]]


def test_relationship_graph_must_be_square():
    with pytest.raises(ValueError):
        RelationshipGraph(np.zeros((2, 3)))


@pytest.mark.parametrize("kind", KINDS)
def test_build_graph_matches_scalar_loop(kind):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((3, 2))
    g = build_graph(FeatureSet("v", x), kind, gamma=0.7, normalize=False)
    for i in range(3):
        for j in range(3):
            want = 1.0 if i == j else relationship(x[i], x[j], kind, gamma=0.7)
            assert abs(g.scores[i, j] - want) < 1e-12


@settings(max_examples=60, deadline=None)
@given(feature_matrices(), st.sampled_from(KINDS), st.floats(0.05, 3.0))
def test_build_graph_properties(x, kind, gamma):
    if not nonzero_rows(x):
        return
    g = build_graph(FeatureSet("v", x), kind, gamma=gamma)
    s = g.scores
    assert np.array_equal(s, s.T)
    assert np.all(np.diag(s) == 1.0)
    lo, hi = g.value_range
    assert np.all(s >= lo - 1e-12) and np.all(s <= hi + 1e-12)
    # against the scalar oracle on normalized rows
    f = x / np.linalg.norm(x, axis=1, keepdims=True)
    for i in range(len(f)):
        for j in range(i + 1, len(f)):
            assert abs(s[i, j] - relationship(f[i], f[j], kind, gamma)) < 1e-12


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=finite), st.sampled_from(KINDS))
def test_relationship_symmetric_exactly(u, v, kind):
    if kind != "gaussian" and (np.linalg.norm(u) < 1e-3 or np.linalg.norm(v) < 1e-3):
        return
    assert relationship(u, v, kind) == relationship(v, u, kind)


def test_residual_examples():
    assert distance_similarity_residual((1, 0), (1, 0)) == 0.0
    assert distance_similarity_residual((1, 0), (0, 1)) == 0.0
    with pytest.raises(NotNormalized):
        distance_similarity_residual((1, 1), (1, 0))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 64), st.integers(0, 2**32 - 1))
def test_residual_property(d, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, d))
    x /= np.linalg.norm(x)
    y /= np.linalg.norm(y)
    assert abs(distance_similarity_residual(x, y)) < 1e-9
