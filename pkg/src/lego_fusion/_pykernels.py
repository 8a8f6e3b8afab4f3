"""Pure-numpy kernels, used when the compiled extension is unavailable."""

import numpy as np


def fuse(powers_a, powers_b, weights):
    rows, cols = powers_a.shape[1:]
    out = np.zeros((rows, cols))
    for p in range(powers_a.shape[0]):
        for q in range(powers_b.shape[0]):
            out += weights[p, q] * (powers_a[p] * powers_b[q])
    return out


def fuse_grad(powers_a, powers_b, upstream):
    weighted = upstream[None] * powers_a
    return np.einsum("pij,qij->pq", weighted, powers_b)


def pairwise(x, kind, gamma):
    """kind: 0 cosine, 1 clamped cosine, 2 gaussian."""
    n = x.shape[0]
    if kind == 2:
        diff = x[:, None, :] - x[None, :, :]
        r = np.exp(-gamma * np.einsum("ijk,ijk->ij", diff, diff))
    else:
        norms = np.sqrt(np.sum(x * x, axis=1))
        r = np.clip((x @ x.T) / np.outer(norms, norms), -1.0, 1.0)
        if kind == 1:
            np.maximum(r, 0.0, out=r)
    upper = np.triu(r, 1)
    r = upper + upper.T
    r[np.diag_indices(n)] = 1.0
    return r
