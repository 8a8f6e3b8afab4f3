"""Brute-force reference implementations.

Plain Python loops over nested lists, sharing no code with the numpy/compiled
paths they are used to check.
"""

import random


def naive_matmul(x, y):
    n, m, k = len(x), len(y), len(y[0])
    out = [[0.0] * k for _ in range(n)]
    for i in range(n):
        for j in range(k):
            acc = 0.0
            for t in range(m):
                acc += x[i][t] * y[t][j]
            out[i][j] = acc
    return out


def naive_powers(r, max_power):
    n = len(r)
    current = [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]
    powers = [current]
    for _ in range(max_power):
        current = naive_matmul(current, r)
        powers.append(current)
    return powers


def naive_fuse(r_a, r_b, A):
    """Weighted sum of element-wise products of matrix powers, looped verbatim."""
    n = len(r_a)
    n_p, n_q = len(A), len(A[0])
    pa = naive_powers(r_a, n_p - 1)
    pb = naive_powers(r_b, n_q - 1)
    g = [[0.0] * n for _ in range(n)]
    for q in range(n_q):
        for p in range(n_p):
            for i in range(n):
                for j in range(n):
                    g[i][j] += A[p][q] * (pa[p][i][j] * pb[q][i][j])
    return g


def horner_bivariate(A, s_a, s_b):
    """sum_{p,q} A[p][q] s_a^p s_b^q by nested Horner evaluation."""
    outer = 0.0
    for p in reversed(range(len(A))):
        inner = 0.0
        for q in reversed(range(len(A[p]))):
            inner = inner * s_b + A[p][q]
        outer = outer * s_a + inner
    return outer


def pairwise_auc(scores, labels):
    """Probability a positive outscores a negative, ties counted 1/2. O(n^2)."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                wins += 1.0
            elif sp == sn:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def random_instance(rng, n, p, q):
    """Random [0,1] graphs and N(0,1) weights for the fusion oracle check."""
    r_a = [[rng.random() for _ in range(n)] for _ in range(n)]
    r_b = [[rng.random() for _ in range(n)] for _ in range(n)]
    A = [[rng.gauss(0.0, 1.0) for _ in range(q + 1)] for _ in range(p + 1)]
    return r_a, r_b, A


def fusion_oracle_check(trials, seed, n_range=(2, 6), max_p=4, max_q=4, n=None, p=None, q=None):
    """Max deviation between :func:`power_fusion.fuse` and :func:`naive_fuse`.

    Each trial draws N, P and Q uniformly from their ranges unless fixed.
    """
    import numpy as np

    from lego_fusion.graph_build import RelationshipGraph
    from lego_fusion.power_fusion import FusionWeights, expand_powers, fuse

    rng = random.Random(seed)
    worst = 0.0
    for _ in range(trials):
        nn = n if n is not None else rng.randint(*n_range)
        pp = p if p is not None else rng.randint(0, max_p)
        qq = q if q is not None else rng.randint(0, max_q)
        r_a, r_b, A = random_instance(rng, nn, pp, qq)
        stack_a = expand_powers(RelationshipGraph(np.array(r_a), kind="custom"), pp)
        stack_b = expand_powers(RelationshipGraph(np.array(r_b), kind="custom"), qq)
        got = fuse(stack_a, stack_b, FusionWeights.full(np.array(A))).scores
        want = naive_fuse(r_a, r_b, A)
        for i in range(nn):
            for j in range(nn):
                worst = max(worst, abs(got[i, j] - want[i][j]))
    return worst
