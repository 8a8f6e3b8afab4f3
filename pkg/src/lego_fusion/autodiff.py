"""Minimal reverse-mode differentiation over dense float64 matrices.

Expressions are built lazily from :class:`Node` objects, evaluated with
:func:`forward` and differentiated with :func:`backward`::

    x = param(np.eye(2), "x")
    loss = sum_all(sigmoid(x))
    forward(loss)
    grads = backward(loss)      # {"x": 2x2 array}

Every value is a 2-D array; scalars are 1x1. The only broadcasting is
scalar-times-matrix in :func:`scale`.

Piecewise operations (``relu``, ``threshold_mask``, ``topk``, the clamp inside
``bce``) freeze their selection during the forward pass and route gradients
through the selected entries only; ``relu'(0) = 0``. :func:`grad_check` uses
these frozen selections to flag parameters whose finite-difference stencil
crosses a kink.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from lego_fusion import kernels
from lego_fusion.errors import NonFinite, ShapeMismatch

BCE_EPS = 1e-7

_ids = itertools.count()


class Node:
    __slots__ = ("id", "op", "parents", "attrs", "value", "grad", "name", "selection")

    def __init__(self, op, parents=(), attrs=None, value=None, name=None):
        self.id = next(_ids)
        self.op = op
        self.parents = tuple(parents)
        self.attrs = attrs or {}
        self.value = value
        self.grad = None
        self.name = name
        self.selection = None

    @property
    def shape(self):
        return None if self.value is None else self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node {self.op}{label} #{self.id} shape={self.shape}>"


def _as_matrix(x):
    a = np.array(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ValueError(f"values must be at most 2-D, got shape {a.shape}")
    return a


# -- leaves -------------------------------------------------------------------


def const(value, name=None):
    """A leaf that never receives a gradient."""
    return Node("input", value=_as_matrix(value), attrs={"trainable": False}, name=name)


def param(value, name):
    """A trainable leaf; its adjoint is returned by :func:`backward` under ``name``."""
    return Node("input", value=_as_matrix(value), attrs={"trainable": True}, name=name)


# -- builders -----------------------------------------------------------------


def matmul(a, b):
    return Node("matmul", (a, b))


def mul(a, b):
    return Node("elementwise-mul", (a, b))


def add(a, b):
    return Node("add", (a, b))


def sub(a, b):
    return add(a, scale(b, -1.0))


def scale(x, s):
    """``s * x`` where ``s`` is a python number or a 1x1 node."""
    if isinstance(s, Node):
        return Node("scale", (x, s))
    return Node("scale", (x,), {"c": float(s)})


def transpose(x):
    return Node("transpose", (x,))


def relu(x):
    return Node("relu", (x,))


def sigmoid(x):
    return Node("sigmoid", (x,))


def sum_all(x):
    return Node("sum", (x,))


def sum_rows(x):
    """Sum over the first index: an R x C input gives a 1 x C output."""
    return Node("sum-rows", (x,))


def variance(x):
    """Population variance of all entries (divides by the count)."""
    return Node("variance", (x,))


def topk(x, k):
    """The k largest entries of a vector node, as a 1 x k row.

    Ties go to the lower flat index.
    """
    return Node("topk-select", (x,), {"k": int(k)})


def threshold_mask(x, alpha):
    """x * [x >= alpha], with the mask frozen at forward time."""
    return Node("threshold-mask", (x,), {"alpha": float(alpha)})


def bce(p, labels):
    """Mean binary cross-entropy of probabilities ``p`` against constant labels.

    Probabilities are clamped to [BCE_EPS, 1 - BCE_EPS] before the log.
    """
    return Node("bce", (p,), {"labels": _as_matrix(labels)})


def entry(x, i, j):
    """The scalar ``x[i, j]`` as a 1x1 node."""
    return Node("power-stack-entry", (x,), {"index": (int(i), int(j))})


def fuse(weights, powers_a, powers_b):
    """sum_{p,q} weights[p,q] * (powers_a[p] * powers_b[q]).

    ``weights`` is a node; the power stacks are constant (P+1, R, C) and
    (Q+1, R, C) arrays. Forward and the weight gradient use :mod:`kernels`.
    """
    pa = np.ascontiguousarray(powers_a, dtype=np.float64)
    pb = np.ascontiguousarray(powers_b, dtype=np.float64)
    return Node("fuse", (weights,), {"powers_a": pa, "powers_b": pb})


# -- evaluation ---------------------------------------------------------------


def topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for parent in reversed(node.parents):
            if parent.id not in seen:
                stack.append((parent, False))
    return order


def _require(cond, op, shapes):
    if not cond:
        raise ShapeMismatch(op, shapes)


def _eval(node):
    op = node.op
    vals = [p.value for p in node.parents]
    shapes = [v.shape for v in vals]
    if op == "matmul":
        a, b = vals
        _require(a.shape[1] == b.shape[0], op, shapes)
        return a @ b
    if op in ("elementwise-mul", "add"):
        a, b = vals
        _require(a.shape == b.shape, op, shapes)
        return a * b if op == "elementwise-mul" else a + b
    if op == "scale":
        if len(vals) == 2:
            _require(vals[1].shape == (1, 1), op, shapes)
            return vals[0] * vals[1][0, 0]
        return vals[0] * node.attrs["c"]
    if op == "transpose":
        return vals[0].T.copy()
    if op == "relu":
        x = vals[0]
        node.selection = x > 0.0
        return np.where(node.selection, x, 0.0)
    if op == "sigmoid":
        x = vals[0]
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    if op == "sum":
        return np.array([[vals[0].sum()]])
    if op == "sum-rows":
        return vals[0].sum(axis=0, keepdims=True)
    if op == "variance":
        x = vals[0]
        return np.array([[np.mean((x - x.mean()) ** 2)]])
    if op == "topk-select":
        x = vals[0]
        k = node.attrs["k"]
        _require(min(x.shape) == 1 and 1 <= k <= x.size, op, shapes + [("k", k)])
        flat = x.ravel()
        # stable sort on -x keeps the lower index first among ties
        idx = np.argsort(-flat, kind="stable")[:k]
        node.selection = idx
        return flat[idx].reshape(1, k)
    if op == "threshold-mask":
        x = vals[0]
        node.selection = x >= node.attrs["alpha"]
        return np.where(node.selection, x, 0.0)
    if op == "bce":
        p = vals[0]
        y = node.attrs["labels"]
        _require(p.shape == y.shape, op, shapes + [y.shape])
        clipped = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
        node.selection = (p >= BCE_EPS) & (p <= 1.0 - BCE_EPS)
        loss = -(y * np.log(clipped) + (1.0 - y) * np.log(1.0 - clipped))
        return np.array([[loss.mean()]])
    if op == "power-stack-entry":
        i, j = node.attrs["index"]
        x = vals[0]
        _require(0 <= i < x.shape[0] and 0 <= j < x.shape[1], op, shapes + [(i, j)])
        return np.array([[x[i, j]]])
    if op == "fuse":
        w = vals[0]
        pa, pb = node.attrs["powers_a"], node.attrs["powers_b"]
        _require(w.shape == (pa.shape[0], pb.shape[0]) and pa.shape[1:] == pb.shape[1:],
                 op, [w.shape, pa.shape, pb.shape])
        return kernels.fuse(pa, pb, w)
    raise ValueError(f"unknown op {op!r}")


def forward(root):
    """Evaluate every node reachable from ``root``; return the scalar loss value."""
    order = topological_order(root)
    for node in order:
        if node.op != "input":
            node.value = _eval(node)
        if not np.all(np.isfinite(node.value)):
            raise NonFinite(node.op if node.op != "input" else f"input {node.name!r}")
    return float(root.value.ravel()[0]) if root.value.size == 1 else root.value


def _local_grads(node, g):
    """Adjoint contributions to each parent given the node's adjoint ``g``."""
    op = node.op
    vals = [p.value for p in node.parents]
    if op == "matmul":
        a, b = vals
        return [g @ b.T, a.T @ g]
    if op == "elementwise-mul":
        a, b = vals
        return [g * b, g * a]
    if op == "add":
        return [g, g]
    if op == "scale":
        if len(vals) == 2:
            x, s = vals
            return [g * s[0, 0], np.array([[np.sum(g * x)]])]
        return [g * node.attrs["c"]]
    if op == "transpose":
        return [g.T]
    if op in ("relu", "threshold-mask"):
        return [np.where(node.selection, g, 0.0)]
    if op == "sigmoid":
        y = node.value
        return [g * y * (1.0 - y)]
    if op == "sum":
        return [np.full(vals[0].shape, g[0, 0])]
    if op == "sum-rows":
        return [np.repeat(g, vals[0].shape[0], axis=0)]
    if op == "variance":
        x = vals[0]
        return [g[0, 0] * 2.0 * (x - x.mean()) / x.size]
    if op == "topk-select":
        x = vals[0]
        dx = np.zeros(x.size)
        dx[node.selection] = g.ravel()
        return [dx.reshape(x.shape)]
    if op == "bce":
        p = np.clip(vals[0], BCE_EPS, 1.0 - BCE_EPS)
        y = node.attrs["labels"]
        dp = -(y / p - (1.0 - y) / (1.0 - p)) / p.size
        return [np.where(node.selection, g[0, 0] * dp, 0.0)]
    if op == "power-stack-entry":
        i, j = node.attrs["index"]
        dx = np.zeros(vals[0].shape)
        dx[i, j] = g[0, 0]
        return [dx]
    if op == "fuse":
        return [kernels.fuse_grad(node.attrs["powers_a"], node.attrs["powers_b"], g)]
    raise ValueError(f"unknown op {op!r}")


def backward(root):
    """Reverse sweep from a forwarded scalar ``root``.

    Resets all adjoints first, so repeated calls give identical results.
    Returns ``{name: adjoint}`` for every trainable leaf.
    """
    order = topological_order(root)
    if root.value is None:
        raise ValueError("backward() called before forward()")
    if root.value.size != 1:
        raise ShapeMismatch("backward", [root.value.shape])
    for node in order:
        node.grad = np.zeros_like(node.value)
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if not node.parents:
            continue
        for parent, contrib in zip(node.parents, _local_grads(node, node.grad)):
            parent.grad += contrib
        if not np.all(np.isfinite(node.grad)):
            raise NonFinite(f"backward of {node.op}")
    return {n.name: n.grad for n in order if n.op == "input" and n.attrs.get("trainable")}


# -- finite-difference checking ----------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: dict = field(default_factory=dict)  # param name -> float
    excluded: dict = field(default_factory=dict)  # param name -> list of indices
    tolerance: float = 1e-4

    @property
    def worst(self):
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self):
        return self.worst < self.tolerance

    def __str__(self):
        lines = []
        for name, err in self.max_rel_error.items():
            n_ex = len(self.excluded.get(name, []))
            status = "ok" if err < self.tolerance else "FAIL"
            lines.append(f"{name}: max rel err {err:.3e} ({n_ex} excluded) {status}")
        return "\n".join(lines)


def _selections(order):
    return [
        (n.id, n.selection.copy() if isinstance(n.selection, np.ndarray) else n.selection)
        for n in order
        if n.selection is not None
    ]


def _same_selection(s1, s2):
    return all(a[0] == b[0] and np.array_equal(a[1], b[1]) for a, b in zip(s1, s2))


def rel_error(analytic, numeric, floor=1e-6):
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients absolute."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(root, params, step=1e-5, tolerance=1e-4, floor=1e-6):
    """Compare analytic adjoints with central differences for every parameter entry.

    Entries whose +/- step perturbation changes any frozen selection (relu
    pattern, threshold mask, top-k indices, BCE clamp) are recorded as excluded
    rather than compared.
    """
    forward(root)
    order = topological_order(root)
    base_sel = _selections(order)
    analytic = backward(root)
    report = GradCheckReport(tolerance=tolerance)
    for node in params:
        worst, excluded = 0.0, []
        value = node.value
        for idx in np.ndindex(value.shape):
            original = value[idx]
            value[idx] = original + step
            f_plus = forward(root)
            sel_plus = _selections(order)
            value[idx] = original - step
            f_minus = forward(root)
            sel_minus = _selections(order)
            value[idx] = original
            if not (_same_selection(base_sel, sel_plus) and _same_selection(base_sel, sel_minus)):
                excluded.append(idx)
                continue
            numeric = (f_plus - f_minus) / (2.0 * step)
            worst = max(worst, rel_error(analytic[node.name][idx], numeric, floor))
        report.max_rel_error[node.name] = worst
        report.excluded[node.name] = excluded
    forward(root)
    return report
