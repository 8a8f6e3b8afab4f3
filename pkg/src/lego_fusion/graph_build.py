"""Relationship graphs from unit-level feature matrices.

A :class:`FeatureSet` holds the N x d features of one modality. Pairwise
relationship scores between its rows form the N x N adjacency matrix of a
:class:`RelationshipGraph`.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from lego_fusion import kernels
from lego_fusion.errors import (
    DataError,
    DimensionMismatch,
    NotNormalized,
    ZeroRow,
    ZeroVector,
)

KINDS = ("cosine", "clamped-cosine", "gaussian")
DEFAULT_KIND = "clamped-cosine"

VALUE_RANGES = {
    "cosine": (-1.0, 1.0),
    "clamped-cosine": (0.0, 1.0),
    "gaussian": (0.0, 1.0),
}

ZERO_NORM = 1e-12
UNIT_TOL = 1e-9


@dataclass(frozen=True)
class FeatureSet:
    modality_id: str
    features: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        f = np.array(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
            raise DataError(f"features must be a non-empty 2-D matrix, got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise DataError("features contain non-finite entries")
        if self.normalized:
            norms = np.linalg.norm(f, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_TOL):
                raise NotNormalized("normalized=True but some rows are not unit norm")
        f.setflags(write=False)
        object.__setattr__(self, "features", f)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class RelationshipGraph:
    scores: np.ndarray
    kind: str = DEFAULT_KIND
    value_range: tuple = field(default=None)

    def __post_init__(self):
        s = np.array(self.scores, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise DataError(f"relationship graph must be square, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise DataError("relationship graph has non-finite entries")
        if self.value_range is None:
            object.__setattr__(self, "value_range", VALUE_RANGES.get(self.kind, (-np.inf, np.inf)))
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    @property
    def n(self):
        return self.scores.shape[0]


def normalize_rows(features):
    """Scale every row of ``features`` to unit Euclidean norm."""
    f = features.features
    norms = np.sqrt(np.sum(f * f, axis=1))
    bad = np.flatnonzero(norms < ZERO_NORM)
    if bad.size:
        raise ZeroRow(int(bad[0]))
    return FeatureSet(features.modality_id, f / norms[:, None], normalized=True)


def _check_kind(kind, gamma):
    if kind not in KINDS:
        raise DataError(f"unknown relationship kind {kind!r}; expected one of {KINDS}")
    if kind == "gaussian" and not gamma > 0:
        raise DataError("gaussian kernel requires gamma > 0")


def relationship(f_i, f_j, kind=DEFAULT_KIND, gamma=1.0):
    """Scalar relationship score between two feature vectors.

    Evaluated with exactly rounded sums, so the result does not depend on the
    argument order.
    """
    _check_kind(kind, gamma)
    u = [float(v) for v in np.ravel(f_i)]
    v = [float(v) for v in np.ravel(f_j)]
    if len(u) != len(v):
        raise DimensionMismatch(f"vector dimensions differ: {len(u)} vs {len(v)}")
    if not all(map(math.isfinite, u + v)):
        raise DataError("relationship inputs must be finite")
    if kind == "gaussian":
        sq = math.fsum((a - b) * (a - b) for a, b in zip(u, v))
        return math.exp(-gamma * sq)
    nu = math.sqrt(math.fsum(a * a for a in u))
    nv = math.sqrt(math.fsum(b * b for b in v))
    if nu < ZERO_NORM or nv < ZERO_NORM:
        raise ZeroVector("cosine relationship of a zero vector is undefined")
    cos = min(1.0, max(-1.0, math.fsum(a * b for a, b in zip(u, v)) / (nu * nv)))
    if kind == "clamped-cosine":
        return max(0.0, cos)
    return cos


def build_graph(features, kind=DEFAULT_KIND, gamma=1.0, normalize=True):
    """Adjacency matrix of pairwise relationship scores between feature rows.

    Rows are L2-normalized first unless ``normalize`` is False. The upper
    triangle is computed and mirrored; the diagonal is set to the self-score 1.
    """
    _check_kind(kind, gamma)
    if normalize and not features.normalized:
        try:
            features = normalize_rows(features)
        except ZeroRow as exc:
            raise ZeroVector(_offending_pair(exc.index, features.n)) from exc
    f = features.features
    if kind != "gaussian":
        norms = np.sqrt(np.sum(f * f, axis=1))
        bad = np.flatnonzero(norms < ZERO_NORM)
        if bad.size and features.n > 1:
            raise ZeroVector(_offending_pair(int(bad[0]), features.n))
    scores = kernels.pairwise(f, kind, gamma) if features.n > 1 else np.ones((1, 1))
    return RelationshipGraph(scores, kind)


def _offending_pair(row, n):
    i, j = (0, 1) if row == 0 else (0, row)
    return f"zero feature row {row} at pair ({i}, {j}); cosine undefined (n={n})"


def distance_similarity_residual(x, y):
    """||x - y||^2 - (2 - 2 cos(x, y)) for unit vectors; zero up to rounding."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatch(f"vector dimensions differ: {x.shape} vs {y.shape}")
    for name, v in (("x", x), ("y", y)):
        if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
            raise NotNormalized(f"{name} is not unit norm")
    diff = x - y
    return float(diff @ diff - (2.0 - 2.0 * relationship(x, y, "cosine")))
