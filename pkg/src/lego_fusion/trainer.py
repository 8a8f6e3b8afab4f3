"""End-to-end training of the fusion weights and classifier head.

Each step samples one pair of modalities, fuses the power stacks of every bag
in the batch with the current weights, scores all snippets, and adds the
degree variance regularizer on one (abnormal, normal) bag pair from the batch.
All randomness derives from ``cfg.seed`` and the epoch/step counters, so two
runs with the same inputs produce byte-identical checkpoints and logs.
"""

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from lego_fusion import autodiff as ad
from lego_fusion import kernels
from lego_fusion.anomaly_model import (
    ClassifierParams,
    LegoModel,
    RegularizerConfig,
    bag_polarity,
    classifier_nodes,
    fusion_node,
    regularizer_expr,
    score_expr,
    score_nodes,
)
from lego_fusion.data_io import make_bags
from lego_fusion.errors import DataError, MissingPolarity, NonFinite, NonFiniteLoss, TooFewModalities
from lego_fusion.evalkit import auc
from lego_fusion.graph_build import FeatureSet, build_graph
from lego_fusion.power_fusion import FusionWeights, expand_powers

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_STREAM_EPOCH = 1
_STREAM_STEP = 2
_STREAM_INIT = 3


def _rng(seed, *counters):
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *counters])


# -- modality sampling --------------------------------------------------------


def sample_pair_indices(n_modalities, rng):
    """Uniform unordered pair of distinct indices, returned in increasing order."""
    if n_modalities < 2:
        raise TooFewModalities(f"need at least 2 modalities, got {n_modalities}")
    pairs = list(itertools.combinations(range(n_modalities), 2))
    return pairs[int(rng.integers(len(pairs)))]


def sample_graph_pair(modalities, rng, sampling="pairwise-random", fixed_pair=(0, 1)):
    """Two distinct relationship graphs from ``modalities`` (a list of graphs).

    ``fixed_pair`` holds two indices into ``modalities`` for fixed-pair sampling.
    """
    if len(modalities) < 2:
        raise TooFewModalities(f"need at least 2 modalities, got {len(modalities)}")
    if sampling == "fixed-pair":
        i, j = fixed_pair
    else:
        i, j = sample_pair_indices(len(modalities), rng)
    return modalities[i], modalities[j]


# -- graph cache --------------------------------------------------------------


class GraphCache:
    """Power stacks per (bag, modality), built once and reused across epochs."""

    def __init__(self, bags, cfg_like, max_power):
        self.bags = bags
        self.kind = cfg_like.relationship
        self.gamma = cfg_like.gamma
        self.normalize = cfg_like.normalize_features
        self.normalization = cfg_like.normalization
        self.max_power = max_power
        self._stacks = {}

    def stack(self, b, modality):
        key = (b, modality)
        if key not in self._stacks:
            fs = FeatureSet(modality, self.bags[b].features[modality])
            graph = build_graph(fs, self.kind, self.gamma, normalize=self.normalize)
            self._stacks[key] = expand_powers(graph, self.max_power, self.normalization).powers
        return self._stacks[key]

    def batch_powers(self, bag_ids, modality, n_powers):
        """(n_powers, B*N, N) stack of the bags' power stacks, rows concatenated."""
        return np.concatenate([self.stack(b, modality)[:n_powers] for b in bag_ids], axis=1)


# -- parameters ---------------------------------------------------------------


def init_fusion(cfg):
    """Start at I + R_a * R_b (A[0,0] = A[1,1] = 1), or a = b = (1, 1, 0, ...)."""
    P, Q = cfg.powers
    if cfg.fusion_form == "product":
        A = np.zeros((2, 2))
        A[1, 1] = 1.0
        return FusionWeights.full(A)
    if cfg.fusion_form == "outer_product":
        a = np.zeros(P + 1)
        b = np.zeros(Q + 1)
        a[: min(2, P + 1)] = 1.0
        b[: min(2, Q + 1)] = 1.0
        return FusionWeights.outer(a, b)
    A = np.zeros((P + 1, Q + 1))
    A[0, 0] = 1.0
    if P >= 1 and Q >= 1:
        A[1, 1] = 1.0
    return FusionWeights.full(A)


def new_model(cfg, modalities):
    rng = _rng(cfg.seed, _STREAM_INIT)
    P, Q = cfg.powers
    fixed = tuple(cfg.fixed_pair) if cfg.fixed_pair else None
    if fixed is not None:
        missing = [m for m in fixed if m not in modalities]
        if missing:
            raise DataError(f"fixed_pair names unknown modalities: {missing}")
    return LegoModel(
        P=P,
        Q=Q,
        weights=init_fusion(cfg),
        classifier=ClassifierParams.init_uniform(cfg.bag_size, rng),
        relationship=cfg.relationship,
        gamma=cfg.gamma,
        normalize_features=cfg.normalize_features,
        normalization=cfg.normalization,
        regularizer=RegularizerConfig(cfg.lam, cfg.alpha, cfg.k, cfg.bag_size),
        modalities=list(modalities),
        modality_sampling=cfg.modality_sampling,
        fixed_pair=fixed,
        bag_size=cfg.bag_size,
        trainable_fusion=cfg.fusion_form != "product",
    )


def model_params(model):
    """Flat dict of trainable arrays, shaped as the expression leaves."""
    c = model.classifier
    params = {
        "W1": c.W1.copy(),
        "b1": c.b1.reshape(1, -1).copy(),
        "W2": c.W2.reshape(-1, 1).copy(),
        "b2": np.array([[c.b2]]),
    }
    if model.trainable_fusion:
        w = model.weights
        if w.form == "outer_product":
            params["a"] = w.a.reshape(1, -1).copy()
            params["b"] = w.b.reshape(1, -1).copy()
        else:
            params["A"] = w.A.copy()
    return params


def apply_params(model, params):
    model.classifier = ClassifierParams(params["W1"], params["b1"].ravel(), params["W2"].ravel(), params["b2"][0, 0])
    if model.trainable_fusion:
        if model.weights.form == "outer_product":
            model.weights = FusionWeights.outer(params["a"].ravel(), params["b"].ravel())
        else:
            model.weights = FusionWeights.full(params["A"])


# -- optimisers ---------------------------------------------------------------


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for name in sorted(params):
            params[name] = params[name] - self.lr * grads[name]


class Adam:
    def __init__(self, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name in sorted(params):
            g = grads[name]
            m = self.beta1 * self.m.get(name, 0.0) + (1.0 - self.beta1) * g
            v = self.beta2 * self.v.get(name, 0.0) + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            params[name] = params[name] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg):
    return Adam(cfg.learning_rate) if cfg.optimizer == "adam" else SGD(cfg.learning_rate)


# -- loss expression ----------------------------------------------------------


def build_loss(params, weight_form, powers_a, powers_b, labels, reg_cfg=None, reg_pair=None, fixed_weights=None):
    """Loss expression for one step.

    ``powers_a``/``powers_b`` are lists of per-bag power stacks ((P+1, N, N)
    and (Q+1, N, N)); ``labels`` the per-bag label vectors; ``reg_pair`` an
    (abnormal, normal) index pair into those lists, or None to skip the
    regularizer. Returns ``(loss_node, leaves)`` where ``leaves`` maps
    parameter names to their nodes.
    """
    leaves = {
        "W1": ad.param(params["W1"], "W1"),
        "b1": ad.param(params["b1"], "b1"),
        "W2": ad.param(params["W2"], "W2"),
        "b2": ad.param(params["b2"], "b2"),
    }
    if fixed_weights is not None:
        weights = ad.const(fixed_weights)
    elif weight_form == "outer_product":
        leaves["a"] = ad.param(params["a"], "a")
        leaves["b"] = ad.param(params["b"], "b")
        weights = fusion_node(leaves, "outer_product")
    else:
        leaves["A"] = ad.param(params["A"], "A")
        weights = leaves["A"]
    batch_a = np.concatenate(powers_a, axis=1)
    batch_b = np.concatenate(powers_b, axis=1)
    rows = batch_a.shape[1]
    G = ad.fuse(weights, batch_a, batch_b)
    y = np.concatenate([np.asarray(l, dtype=np.float64) for l in labels]).reshape(-1, 1)
    loss = ad.bce(score_expr(G, leaves, rows), y)
    if reg_pair is not None and reg_cfg is not None and reg_cfg.lam > 0:
        pos, neg = reg_pair
        G_pos = ad.fuse(weights, powers_a[pos], powers_b[pos])
        G_neg = ad.fuse(weights, powers_a[neg], powers_b[neg])
        loss = ad.add(loss, regularizer_expr(G_pos, G_neg, reg_cfg))
    return loss, leaves


# -- batching -----------------------------------------------------------------


def stratified_batches(bag_ids, polarities, batch_size, rng):
    """Shuffle and split into batches, dealing abnormal and normal bags round-robin
    so every batch gets both polarities whenever there are enough of each."""
    order = rng.permutation(len(bag_ids))
    pos = [bag_ids[i] for i in order if polarities[i]]
    neg = [bag_ids[i] for i in order if not polarities[i]]
    n_batches = max(1, math.ceil(len(bag_ids) / batch_size))
    batches = [[] for _ in range(n_batches)]
    for i, b in enumerate(pos):
        batches[i % n_batches].append(b)
    for i, b in enumerate(neg):
        batches[(len(pos) + i) % n_batches].append(b)
    return [[batch[i] for i in rng.permutation(len(batch))] for batch in batches if batch]


# -- prediction ---------------------------------------------------------------


def _pairs_for(model):
    mods = model.modalities
    if model.modality_sampling == "fixed-pair" and model.fixed_pair:
        return [tuple(model.fixed_pair)]
    return [(mods[i], mods[j]) for i, j in itertools.combinations(range(len(mods)), 2)]


def predict_bags(model, bags, cache=None):
    """Per-bag node scores, averaged over all modality pairs the model samples from."""
    P, Q = model.P, model.Q
    if cache is None:
        cache = GraphCache(bags, model, max(P, Q))
    A = model.weights.matrix()
    pairs = _pairs_for(model)
    out = []
    for b in range(len(bags)):
        total = np.zeros(len(bags[b].labels))
        for ma, mb in pairs:
            G = kernels.fuse(cache.stack(b, ma)[: P + 1], cache.stack(b, mb)[: Q + 1], A)
            total += score_nodes(G, model.classifier)
        out.append(total / len(pairs))
    return out


# -- training loop ------------------------------------------------------------


@dataclass
class TrainResult:
    model: LegoModel
    log: list = field(default_factory=list)
    regularizer_calls: int = 0
    steps: int = 0

    def log_text(self):
        return "".join(json.dumps(row, sort_keys=True) + "\n" for row in self.log)


def train(dataset, cfg, validation=None, progress=None):
    """Train a :class:`LegoModel` on ``dataset``; optionally evaluate AUC on ``validation``.

    Returns a :class:`TrainResult` with the model and a per-epoch log of
    ``{"epoch", "loss", "val_auc"}``.
    """
    modalities = list(dataset.modalities)
    if len(modalities) < 2:
        raise TooFewModalities(f"need at least 2 modalities, got {len(modalities)}")
    bags = make_bags(dataset, cfg.bag_size)
    if not bags:
        raise DataError(f"no complete bags of {cfg.bag_size} snippets in the training data")
    polarities = [bag_polarity(b.labels) for b in bags]
    if cfg.lam > 0 and (all(polarities) or not any(polarities)):
        raise MissingPolarity("lambda > 0 requires at least one normal and one abnormal bag")

    model = new_model(cfg, modalities)
    P, Q = model.P, model.Q
    cache = GraphCache(bags, cfg, max(P, Q))
    val_bags = make_bags(validation, cfg.bag_size) if validation is not None else None
    val_cache = GraphCache(val_bags, cfg, max(P, Q)) if val_bags else None

    params = model_params(model)
    optimizer = make_optimizer(cfg)
    fixed_weights = model.weights.matrix() if not model.trainable_fusion else None
    reg_cfg = model.regularizer
    fixed_idx = None
    if cfg.modality_sampling == "fixed-pair":
        fixed_idx = tuple(modalities.index(m) for m in cfg.fixed_pair)

    result = TrainResult(model)
    step = 0
    for epoch in range(cfg.epochs):
        batches = stratified_batches(list(range(len(bags))), polarities, cfg.batch_bags, _rng(cfg.seed, _STREAM_EPOCH, epoch))
        losses = []
        for batch in batches:
            rng = _rng(cfg.seed, _STREAM_STEP, step)
            if fixed_idx is not None:
                i, j = fixed_idx
            else:
                i, j = sample_pair_indices(len(modalities), rng)
            ma, mb = modalities[i], modalities[j]
            pa = [cache.stack(b, ma)[: P + 1] for b in batch]
            pb = [cache.stack(b, mb)[: Q + 1] for b in batch]
            labels = [bags[b].labels for b in batch]
            reg_pair = None
            if cfg.lam > 0:
                pos = [t for t, b in enumerate(batch) if polarities[b]]
                neg = [t for t, b in enumerate(batch) if not polarities[b]]
                if not pos or not neg:
                    raise MissingPolarity(f"step {step}: batch lacks an abnormal or a normal bag")
                reg_pair = (pos[int(rng.integers(len(pos)))], neg[int(rng.integers(len(neg)))])
                result.regularizer_calls += 1
            loss_node, _ = build_loss(
                params, model.weights.form, pa, pb, labels, reg_cfg, reg_pair, fixed_weights
            )
            try:
                value = ad.forward(loss_node)
                grads = ad.backward(loss_node)
            except NonFinite as exc:
                raise NonFiniteLoss(step, str(exc)) from exc
            if not math.isfinite(value):
                raise NonFiniteLoss(step)
            optimizer.step(params, grads)
            if not all(np.all(np.isfinite(v)) for v in params.values()):
                raise NonFiniteLoss(step, "parameters became non-finite")
            losses.append(value)
            step += 1
        apply_params(model, params)
        row = {"epoch": epoch + 1, "loss": float(np.mean(losses))}
        if val_bags:
            row["val_auc"] = _bags_auc(model, val_bags, val_cache)
        result.log.append(row)
        if progress is not None:
            progress(row)
    result.steps = step
    apply_params(model, params)
    return result


def _bags_auc(model, bags, cache):
    scores = np.concatenate(predict_bags(model, bags, cache))
    labels = np.concatenate([b.labels for b in bags])
    if labels.min() == labels.max():
        return None
    return auc(scores, labels)


# -- gradient check on toy bags -------------------------------------------------


def toy_problem(seed, n=4, P=2, Q=2, d=3, form="full_matrix"):
    """Two random n-node bags (one abnormal, one normal) with random parameters."""
    rng = np.random.default_rng(seed)
    powers_a, powers_b, labels = [], [], []
    for polarity in (1, 0):
        fa = rng.standard_normal((n, d)) + 1.0
        fb = rng.standard_normal((n, d)) + 1.0
        powers_a.append(expand_powers(build_graph(FeatureSet("a", fa)), P).powers)
        powers_b.append(expand_powers(build_graph(FeatureSet("b", fb)), Q).powers)
        y = np.zeros(n)
        if polarity:
            y[rng.integers(n)] = 1.0
        labels.append(y)
    params = {
        "W1": rng.uniform(-1, 1, (n, n)),
        "b1": rng.uniform(-1, 1, (1, n)),
        "W2": rng.uniform(-1, 1, (n, 1)),
        "b2": rng.uniform(-1, 1, (1, 1)),
    }
    if form == "outer_product":
        params["a"] = rng.uniform(-1, 1, (1, P + 1))
        params["b"] = rng.uniform(-1, 1, (1, Q + 1))
    else:
        params["A"] = rng.uniform(-0.5, 0.5, (P + 1, Q + 1))
    return params, powers_a, powers_b, labels


def toy_gradient_check(seed, n=4, P=2, Q=2, lam=1.0, alpha=0.5, k=2, form="full_matrix", step=1e-5, tolerance=1e-4):
    """Finite-difference check of the training loss on a toy two-bag problem."""
    params, pa, pb, labels = toy_problem(seed, n, P, Q, form=form)
    reg = RegularizerConfig(lam, alpha, k, n)
    loss, leaves = build_loss(params, form, pa, pb, labels, reg, (0, 1))
    return ad.grad_check(loss, list(leaves.values()), step=step, tolerance=tolerance)
