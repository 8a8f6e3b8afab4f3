"""Anomaly-detection head on a fused graph.

Each node (snippet) is scored from its row of the fused graph by a two-layer
classifier ``N -> N -> 1`` with a ReLU in between and a sigmoid output. Training
combines per-node binary cross-entropy with a degree variance regularizer that
compares the spread of thresholded weighted degrees in a normal bag's graph
against the top-k degrees of an abnormal bag's graph.

Functions here come in two flavours: plain numpy evaluators (``score_nodes``,
``degree_variance_loss``, ``total_loss``) and expression builders
(``*_expr``) that produce :mod:`lego_fusion.autodiff` graphs for training.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from lego_fusion import autodiff as ad
from lego_fusion.errors import DataError, KTooLarge, MissingPolarity, ShapeMismatch
from lego_fusion.power_fusion import FusionWeights

BCE_EPS = ad.BCE_EPS
CHECKPOINT_FORMAT = "lego-fusion-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ClassifierParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: float

    def __post_init__(self):
        self.W1 = np.array(self.W1, dtype=np.float64)
        self.b1 = np.array(self.b1, dtype=np.float64).reshape(-1)
        self.W2 = np.array(self.W2, dtype=np.float64).reshape(-1)
        self.b2 = float(self.b2)
        n = self.W1.shape[0]
        if self.W1.shape != (n, n) or self.b1.shape != (n,) or self.W2.shape != (n,):
            raise ShapeMismatch(
                "ClassifierParams", [self.W1.shape, self.b1.shape, self.W2.shape]
            )
        for name in ("W1", "b1", "W2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"classifier {name} has non-finite entries")
        if not math.isfinite(self.b2):
            raise DataError("classifier b2 is not finite")

    @property
    def n(self):
        return self.W1.shape[0]

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, n)), np.zeros(n), np.zeros(n), 0.0)

    @classmethod
    def init_uniform(cls, n, rng):
        """Weights and biases uniform in [-1/sqrt(n), 1/sqrt(n)]."""
        bound = 1.0 / math.sqrt(n)
        return cls(
            rng.uniform(-bound, bound, (n, n)),
            rng.uniform(-bound, bound, n),
            rng.uniform(-bound, bound, n),
            float(rng.uniform(-bound, bound)),
        )


@dataclass(frozen=True)
class RegularizerConfig:
    lam: float = 1.0
    alpha: float = 0.5
    k: int = 10
    n: int = None

    def __post_init__(self):
        if not self.lam >= 0:
            raise DataError(f"lambda must be non-negative, got {self.lam}")
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError(f"alpha must lie in [0, 1], got {self.alpha}")
        if int(self.k) != self.k or self.k < 1:
            raise DataError(f"k must be a positive integer, got {self.k}")
        if self.n is not None and self.k > self.n:
            raise KTooLarge(f"k={self.k} exceeds the number of nodes N={self.n}")


@dataclass
class BagScore:
    per_node_scores: np.ndarray
    bag_label: int


def _matrix(G):
    return np.asarray(getattr(G, "scores", G), dtype=np.float64)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def score_nodes(G, params):
    """Per-node anomaly scores: sigmoid(W2 . relu(W1 g_i + b1) + b2) per row g_i."""
    g = _matrix(G)
    if g.ndim != 2 or g.shape[1] != params.n:
        raise ShapeMismatch("score_nodes", [g.shape, params.W1.shape])
    hidden = np.maximum(g @ params.W1.T + params.b1, 0.0)
    return sigmoid(hidden @ params.W2 + params.b2)


def weighted_degrees(G, alpha):
    """Column sums of G over entries with G[i, j] >= alpha."""
    g = _matrix(G)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ShapeMismatch("weighted_degrees", [g.shape])
    return np.where(g >= alpha, g, 0.0).sum(axis=0)


def top_k(values, k):
    """The k largest values; ties resolved toward the lower index."""
    values = np.asarray(values, dtype=np.float64)
    if k > values.size:
        raise KTooLarge(f"k={k} exceeds the number of nodes N={values.size}")
    return values[np.argsort(-values, kind="stable")[:k]]


def degree_variance_loss(G_pos, G_neg, cfg):
    """lam * (Var(deg(G_neg)) - Var(top_k(deg(G_pos))))^2 with population variance."""
    d_neg = weighted_degrees(G_neg, cfg.alpha)
    d_pos = weighted_degrees(G_pos, cfg.alpha)
    if cfg.k > d_pos.size:
        raise KTooLarge(f"k={cfg.k} exceeds the number of nodes N={d_pos.size}")
    if d_neg.size != d_pos.size:
        raise ShapeMismatch("degree_variance_loss", [d_pos.shape, d_neg.shape])
    # both variances see their values in descending order, so equal multisets
    # give bit-equal variances whatever the node order
    v_neg = float(np.var(top_k(d_neg, d_neg.size)))
    v_pos = float(np.var(top_k(d_pos, cfg.k)))
    return cfg.lam * (v_neg - v_pos) ** 2


def bce_mean(scores, labels):
    p = np.clip(np.asarray(scores, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def bag_polarity(labels):
    """A bag is abnormal when any of its snippets is."""
    return int(np.any(np.asarray(labels) > 0))


def pick_pair(labels_per_bag, rng):
    """Uniformly sample one (abnormal, normal) bag index pair."""
    pos = [i for i, y in enumerate(labels_per_bag) if bag_polarity(y)]
    neg = [i for i, y in enumerate(labels_per_bag) if not bag_polarity(y)]
    if not pos or not neg:
        raise MissingPolarity(
            f"regularizer needs an abnormal and a normal bag; got {len(pos)} abnormal, {len(neg)} normal"
        )
    return pos[int(rng.integers(len(pos)))], neg[int(rng.integers(len(neg)))]


def total_loss(bags, params, cfg, pair=None, rng=None):
    """Mean per-node BCE over all bags plus the regularizer on one bag pair.

    ``bags`` is a list of ``(fused_graph, per_node_labels)``. The regularizer
    pair is ``pair`` if given, otherwise sampled with ``rng``.
    """
    scores = [score_nodes(G, params) for G, _ in bags]
    labels = [np.asarray(y, dtype=np.float64) for _, y in bags]
    loss = bce_mean(np.concatenate(scores), np.concatenate(labels))
    if cfg.lam > 0:
        if pair is None:
            pair = pick_pair(labels, rng if rng is not None else np.random.default_rng(0))
        elif not (bag_polarity(labels[pair[0]]) and not bag_polarity(labels[pair[1]])):
            raise MissingPolarity("pair must be (abnormal bag, normal bag)")
        loss += degree_variance_loss(bags[pair[0]][0], bags[pair[1]][0], cfg)
    return loss


# -- expression builders ------------------------------------------------------


def classifier_nodes(params):
    """Trainable leaves for the classifier, keyed by parameter name."""
    return {
        "W1": ad.param(params.W1, "W1"),
        "b1": ad.param(params.b1.reshape(1, -1), "b1"),
        "W2": ad.param(params.W2.reshape(-1, 1), "W2"),
        "b2": ad.param([[params.b2]], "b2"),
    }


def score_expr(G, nodes, rows):
    """Score node (rows x 1) for a fused-graph node with ``rows`` rows."""
    ones = ad.const(np.ones((rows, 1)))
    hidden = ad.relu(ad.add(ad.matmul(G, ad.transpose(nodes["W1"])), ad.matmul(ones, nodes["b1"])))
    return ad.sigmoid(ad.add(ad.matmul(hidden, nodes["W2"]), ad.matmul(ones, nodes["b2"])))


def regularizer_expr(G_pos, G_neg, cfg):
    deg_neg = ad.sum_rows(ad.threshold_mask(G_neg, cfg.alpha))
    deg_pos = ad.sum_rows(ad.threshold_mask(G_pos, cfg.alpha))
    diff = ad.sub(ad.variance(deg_neg), ad.variance(ad.topk(deg_pos, cfg.k)))
    return ad.scale(ad.mul(diff, diff), cfg.lam)


def fusion_node(weight_nodes, form):
    """The (P+1) x (Q+1) weight node: the full matrix A, or a (x) b as a matmul."""
    if form == "outer_product":
        return ad.matmul(ad.transpose(weight_nodes["a"]), weight_nodes["b"])
    return weight_nodes["A"]


def fusion_param_nodes(weights):
    if weights.form == "outer_product":
        return {"a": ad.param(weights.a.reshape(1, -1), "a"), "b": ad.param(weights.b.reshape(1, -1), "b")}
    return {"A": ad.param(weights.A, "A")}


# -- model and checkpoint -----------------------------------------------------


@dataclass
class LegoModel:
    """Everything needed to score bags: fusion weights, classifier and graph settings."""

    P: int
    Q: int
    weights: FusionWeights
    classifier: ClassifierParams
    relationship: str = "clamped-cosine"
    gamma: float = 1.0
    normalize_features: bool = True
    normalization: str = "raw"
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    modalities: list = field(default_factory=list)
    modality_sampling: str = "pairwise-random"
    fixed_pair: tuple = None
    bag_size: int = 32
    trainable_fusion: bool = True

    def to_dict(self):
        w = self.weights
        fusion = {"form": w.form}
        if w.form == "outer_product":
            fusion.update(a=w.a.tolist(), b=w.b.tolist())
        else:
            fusion["A"] = w.A.tolist()
        c = self.classifier
        r = self.regularizer
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "P": self.P,
            "Q": self.Q,
            "fusion": fusion,
            "trainable_fusion": self.trainable_fusion,
            "classifier": {"W1": c.W1.tolist(), "b1": c.b1.tolist(), "W2": c.W2.tolist(), "b2": c.b2},
            "relationship": self.relationship,
            "gamma": self.gamma,
            "normalize_features": self.normalize_features,
            "normalization": self.normalization,
            "regularizer": {"lambda": r.lam, "alpha": r.alpha, "k": r.k},
            "modalities": list(self.modalities),
            "modality_sampling": self.modality_sampling,
            "fixed_pair": list(self.fixed_pair) if self.fixed_pair else None,
            "bag_size": self.bag_size,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != CHECKPOINT_FORMAT:
            raise DataError("not a lego-fusion checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {d.get('version')}")
        try:
            f = d["fusion"]
            if f["form"] == "outer_product":
                weights = FusionWeights.outer(f["a"], f["b"])
            else:
                weights = FusionWeights.full(f["A"])
            c = d["classifier"]
            r = d["regularizer"]
            return cls(
                P=int(d["P"]),
                Q=int(d["Q"]),
                weights=weights,
                classifier=ClassifierParams(c["W1"], c["b1"], c["W2"], c["b2"]),
                relationship=d["relationship"],
                gamma=float(d["gamma"]),
                normalize_features=bool(d["normalize_features"]),
                normalization=d["normalization"],
                regularizer=RegularizerConfig(r["lambda"], r["alpha"], int(r["k"])),
                modalities=list(d["modalities"]),
                modality_sampling=d["modality_sampling"],
                fixed_pair=tuple(d["fixed_pair"]) if d.get("fixed_pair") else None,
                bag_size=int(d["bag_size"]),
                trainable_fusion=bool(d.get("trainable_fusion", True)),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed checkpoint: {exc}") from exc


def dumps_checkpoint(model):
    # json writes floats with repr(), the shortest string that round-trips exactly
    return json.dumps(model.to_dict(), indent=1, sort_keys=True) + "\n"


def save_checkpoint(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_checkpoint(model))


def load_checkpoint(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return LegoModel.from_dict(json.load(fh))
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"checkpoint {path} is not valid JSON: {exc}") from exc
