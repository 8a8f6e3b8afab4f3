"""Graph export for external plotting: a JSON edge list and Graphviz DOT.

JSON layout::

    {"n": 4, "kind": "clamped-cosine",
     "nodes": [{"id": 0, "label": "0"}, ...],
     "edges": [{"i": 0, "j": 1, "w": 0.83}, ...]}

Only off-diagonal edges with ``w > threshold`` are kept. Symmetric graphs
list each edge once (``i < j``); asymmetric ones (fused graphs built from
row-stochastic powers) list both directions.
"""

import json

import numpy as np

from lego_fusion.errors import DataError


def _scores(graph):
    g = getattr(graph, "scores", graph)
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise DataError(f"graph must be a square matrix, got shape {g.shape}")
    return g


def graph_edges(graph, threshold=0.0):
    g = _scores(graph)
    n = g.shape[0]
    symmetric = np.array_equal(g, g.T)
    edges = []
    for i in range(n):
        for j in range(i + 1 if symmetric else 0, n):
            if i != j and g[i, j] > threshold:
                edges.append({"i": i, "j": j, "w": float(g[i, j])})
    return edges, symmetric


def graph_to_dict(graph, threshold=0.0, kind=None, labels=None):
    g = _scores(graph)
    n = g.shape[0]
    if kind is None:
        kind = getattr(graph, "kind", "fused")
    if labels is None:
        labels = [str(i) for i in range(n)]
    elif len(labels) != n:
        raise DataError(f"{len(labels)} labels for {n} nodes")
    edges, _ = graph_edges(g, threshold)
    return {
        "n": n,
        "kind": kind,
        "nodes": [{"id": i, "label": str(labels[i])} for i in range(n)],
        "edges": edges,
    }


def graph_to_json(graph, threshold=0.0, kind=None, labels=None):
    return json.dumps(graph_to_dict(graph, threshold, kind, labels), indent=1) + "\n"


def graph_to_dot(graph, threshold=0.0, labels=None, name="G"):
    g = _scores(graph)
    edges, symmetric = graph_edges(g, threshold)
    arrow = "--" if symmetric else "->"
    lines = [f"{'graph' if symmetric else 'digraph'} {name} {{"]
    for i in range(g.shape[0]):
        label = labels[i] if labels is not None else str(i)
        lines.append(f'  n{i} [label="{label}"];')
    for e in edges:
        lines.append(f'  n{e["i"]} {arrow} n{e["j"]} [weight={e["w"]!r}, label="{e["w"]:.3g}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_graph(graph, path, fmt=None, threshold=0.0, kind=None, labels=None):
    """Write ``graph`` as JSON or DOT; the format defaults to the file suffix."""
    if fmt is None:
        fmt = "dot" if str(path).endswith(".dot") else "json"
    if fmt == "json":
        text = graph_to_json(graph, threshold, kind, labels)
    elif fmt == "dot":
        text = graph_to_dot(graph, threshold, labels)
    else:
        raise DataError(f"unknown export format {fmt!r}; use json or dot")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
