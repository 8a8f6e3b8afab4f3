"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension (``_ckernels``, built from Cython) is selected at import
when present; otherwise the pure-numpy ``_pykernels`` are used. Both backends
accumulate :func:`fuse` in the same per-element order, so their results agree
bit-for-bit; :func:`fuse_grad` and :func:`pairwise` agree to ~1e-13.

>>> from lego_fusion import kernels
>>> kernels.BACKEND in ("compiled", "python")
True
"""

import numpy as np

from lego_fusion import _pykernels

try:
    from lego_fusion import _ckernels
except ImportError:  # extension not built
    _ckernels = None

KIND_CODES = {"cosine": 0, "clamped-cosine": 1, "gaussian": 2}

_impl = _ckernels if _ckernels is not None else _pykernels
BACKEND = "compiled" if _ckernels is not None else "python"


def available_backends():
    return ["compiled", "python"] if _ckernels is not None else ["python"]


def set_backend(name):
    """Switch backend at runtime ("compiled" or "python"). Returns the previous one."""
    global _impl, BACKEND
    if name == "compiled":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built")
        new = _ckernels
    elif name == "python":
        new = _pykernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    previous = BACKEND
    _impl, BACKEND = new, name
    return previous


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def fuse(powers_a, powers_b, weights):
    """sum_{p,q} weights[p,q] * (powers_a[p] * powers_b[q]).

    powers_a: (P+1, R, C), powers_b: (Q+1, R, C), weights: (P+1, Q+1).
    """
    return _impl.fuse(_f64(powers_a), _f64(powers_b), _f64(weights))


def fuse_grad(powers_a, powers_b, upstream):
    """Gradient of ``sum(upstream * fuse(...))`` with respect to the weights."""
    return _impl.fuse_grad(_f64(powers_a), _f64(powers_b), _f64(upstream))


def pairwise(x, kind="clamped-cosine", gamma=1.0):
    """Symmetric relationship matrix of the rows of ``x`` with unit diagonal."""
    return _impl.pairwise(_f64(x), KIND_CODES[kind], float(gamma))
