"""Graph power stacks and the learnable graph fusion operator.

A power stack holds ``[R^0, R^1, ..., R^P]`` for one relationship graph, with
``R^0 = I``. Two stacks are fused into one N x N graph by weighting every
element-wise product of a power from each stack::

    G = sum_p sum_q A[p, q] * (R_a^p * R_b^q)

``A`` is either a full (P+1) x (Q+1) matrix or the outer product of two
selector vectors ``a`` and ``b``. For the outer-product form the sum factors
into ``(sum_p a_p R_a^p) * (sum_q b_q R_b^q)``, which is how it is evaluated.
"""

from dataclasses import dataclass, field

import numpy as np

from lego_fusion import kernels
from lego_fusion.errors import DataError, DimensionMismatch, IndexOutOfRange
from lego_fusion.graph_build import RelationshipGraph

NORMALIZATIONS = ("raw", "row-stochastic")
FORMS = ("full_matrix", "outer_product")


@dataclass(frozen=True)
class GraphPowerStack:
    powers: np.ndarray  # (P+1, N, N)
    base: RelationshipGraph
    normalization: str = "raw"

    @property
    def max_power(self):
        return self.powers.shape[0] - 1

    @property
    def n(self):
        return self.powers.shape[1]

    def __len__(self):
        return self.powers.shape[0]

    def __getitem__(self, p):
        return self.powers[p]


@dataclass(frozen=True)
class FusionWeights:
    form: str
    a: np.ndarray = None
    b: np.ndarray = None
    A: np.ndarray = None

    def __post_init__(self):
        if self.form not in FORMS:
            raise DataError(f"unknown fusion form {self.form!r}")
        if self.form == "outer_product":
            if self.a is None or self.b is None:
                raise DataError("outer_product weights need both a and b")
            a = np.array(self.a, dtype=np.float64).reshape(-1)
            b = np.array(self.b, dtype=np.float64).reshape(-1)
            _check_finite(a, "a")
            _check_finite(b, "b")
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)
        else:
            if self.A is None:
                raise DataError("full_matrix weights need A")
            A = np.array(self.A, dtype=np.float64)
            if A.ndim != 2:
                raise DataError(f"A must be 2-D, got shape {A.shape}")
            _check_finite(A, "A")
            object.__setattr__(self, "A", A)

    @classmethod
    def full(cls, A):
        return cls("full_matrix", A=A)

    @classmethod
    def outer(cls, a, b):
        return cls("outer_product", a=a, b=b)

    @property
    def shape(self):
        if self.form == "outer_product":
            return (self.a.size, self.b.size)
        return self.A.shape

    def matrix(self):
        """The effective (P+1) x (Q+1) weight matrix."""
        if self.form == "outer_product":
            return np.outer(self.a, self.b)
        return self.A.copy()


@dataclass(frozen=True)
class FusedGraph:
    scores: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.scores.shape[0]


def _check_finite(x, name):
    if not np.all(np.isfinite(x)):
        raise DataError(f"{name} has non-finite entries")


def row_stochastic(matrix):
    """Divide every row by its sum; all-zero rows are left as they are."""
    m = np.asarray(matrix, dtype=np.float64)
    sums = m.sum(axis=1)
    safe = np.where(sums == 0.0, 1.0, sums)
    return m / safe[:, None]


def expand_powers(graph, max_power, normalization="raw"):
    """Stack ``[I, R, R^2, ..., R^max_power]`` by repeated left-multiplication."""
    if int(max_power) != max_power or max_power < 0:
        raise DataError(f"max_power must be a non-negative integer, got {max_power}")
    if normalization not in NORMALIZATIONS:
        raise DataError(f"unknown normalization {normalization!r}")
    base = graph.scores
    if normalization == "row-stochastic":
        base = row_stochastic(base)
    n = graph.n
    powers = np.empty((int(max_power) + 1, n, n))
    powers[0] = np.eye(n)
    for p in range(1, int(max_power) + 1):
        powers[p] = powers[p - 1] @ base
    powers.setflags(write=False)
    return GraphPowerStack(powers, graph, normalization)


def _check_dims(stack_a, stack_b, weights):
    if stack_a.n != stack_b.n:
        raise DimensionMismatch(f"node axis: stacks have N={stack_a.n} and N={stack_b.n}")
    rows, cols = weights.shape
    if rows != len(stack_a):
        raise DimensionMismatch(
            f"power axis of stack_a: weights have {rows} rows, stack has {len(stack_a)} powers"
        )
    if cols != len(stack_b):
        raise DimensionMismatch(
            f"power axis of stack_b: weights have {cols} columns, stack has {len(stack_b)} powers"
        )


def combine_stack(powers, selector):
    """sum_p selector[p] * powers[p], accumulated in increasing p."""
    out = np.zeros(powers.shape[1:])
    for p, w in enumerate(selector):
        out += w * powers[p]
    return out


def fuse(stack_a, stack_b, weights):
    """Fuse two power stacks with full-matrix or outer-product weights."""
    _check_dims(stack_a, stack_b, weights)
    if weights.form == "outer_product":
        scores = combine_stack(stack_a.powers, weights.a) * combine_stack(stack_b.powers, weights.b)
    else:
        scores = kernels.fuse(stack_a.powers, stack_b.powers, weights.A)
    provenance = {
        "stack_a": {"kind": stack_a.base.kind, "P": stack_a.max_power, "normalization": stack_a.normalization},
        "stack_b": {"kind": stack_b.base.kind, "P": stack_b.max_power, "normalization": stack_b.normalization},
        "form": weights.form,
        "weights": weights.matrix().tolist(),
    }
    return FusedGraph(scores, provenance)


def multilinear_oracle(graph_a, graph_b, A, i, j):
    """sum_{p,q} A[p,q] * s_a^p * s_b^q for the scalar scores at (i, j).

    Uses scalar exponentiation with 0**0 == 1. This is the element-wise reading
    of the fused entry; it equals the matrix-power fusion only in special cases.
    """
    A = np.asarray(A, dtype=np.float64)
    n = graph_a.n
    if graph_b.n != n:
        raise DimensionMismatch(f"node axis: graphs have N={n} and N={graph_b.n}")
    if not (0 <= i < n and 0 <= j < n):
        raise IndexOutOfRange(f"index ({i}, {j}) outside a {n}x{n} graph")
    _check_finite(A, "A")
    s_a = float(graph_a.scores[i, j])
    s_b = float(graph_b.scores[i, j])
    total = 0.0
    for p in range(A.shape[0]):
        for q in range(A.shape[1]):
            total += float(A[p, q]) * s_a**p * s_b**q
    return total


def outer_equivalence_check(stack_a, stack_b, a, b):
    """Max |fuse(outer(a, b)) - fuse(full(a (x) b))| over all entries."""
    outer = FusionWeights.outer(a, b)
    full = FusionWeights.full(np.outer(outer.a, outer.b))
    g_outer = fuse(stack_a, stack_b, outer).scores
    g_full = fuse(stack_a, stack_b, full).scores
    return float(np.max(np.abs(g_outer - g_full)))
