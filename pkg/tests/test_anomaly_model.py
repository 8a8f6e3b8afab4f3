import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lego_fusion import trainer
from lego_fusion.anomaly_model import (
    ClassifierParams,
    LegoModel,
    RegularizerConfig,
    bce_mean,
    degree_variance_loss,
    dumps_checkpoint,
    load_checkpoint,
    save_checkpoint,
    score_nodes,
    top_k,
    total_loss,
    weighted_degrees,
)
from lego_fusion.config import TrainConfig
from lego_fusion.errors import KTooLarge, MissingPolarity, ShapeMismatch

# column sums (alpha = 0.5): G_NEG -> (1, 1, 3), G_POS -> (5, 1, 1)
G_NEG = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]])
G_POS = np.array([[1.0, 0.0, 0.0], [2.0, 1.0, 0.0], [2.0, 0.0, 1.0]])


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def scalar_scores(G, c):
    """Two-layer head evaluated entry by entry."""
    n = len(G)
    out = []
    for i in range(n):
        hidden = [max(0.0, sum(c.W1[h][j] * G[i][j] for j in range(n)) + c.b1[h]) for h in range(n)]
        out.append(sig(sum(c.W2[h] * hidden[h] for h in range(n)) + c.b2))
    return out


def test_score_nodes_examples():
    assert score_nodes(np.eye(4), ClassifierParams.zeros(4)).tolist() == [0.5] * 4
    e1 = np.zeros(3)
    e1[0] = 1.0
    s = score_nodes(np.eye(3), ClassifierParams(np.eye(3), np.zeros(3), e1, 0.0))
    assert s[0] == pytest.approx(0.7310585786300049, abs=1e-15)
    assert s[1] == s[2] == 0.5
    sat = ClassifierParams(np.zeros((3, 3)), np.zeros(3), np.zeros(3), 50.0)
    assert np.all(np.abs(score_nodes(np.random.default_rng(0).uniform(size=(3, 3)), sat) - 1.0) < 1e-9)


def test_score_nodes_matches_scalar_formula():
    rng = np.random.default_rng(1)
    c = ClassifierParams.init_uniform(5, rng)
    G = rng.uniform(0, 2, (5, 5))
    assert np.max(np.abs(score_nodes(G, c) - scalar_scores(G.tolist(), c))) < 1e-14


def test_score_nodes_shape_error():
    with pytest.raises(ShapeMismatch):
        score_nodes(np.eye(3), ClassifierParams.zeros(4))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(0.01, 3))
def test_scores_in_open_interval_and_monotone_in_b2(n, seed, b2, delta):
    rng = np.random.default_rng(seed)
    c = ClassifierParams.init_uniform(n, rng)
    c.b2 = b2
    G = rng.uniform(0, 1, (n, n))
    s = score_nodes(G, c)
    assert np.all((s > 0) & (s < 1))
    c.b2 = b2 + delta
    assert np.all(score_nodes(G, c) > s)


def test_weighted_degrees_examples():
    assert weighted_degrees(np.eye(3), 0.5).tolist() == [1.0, 1.0, 1.0]
    assert weighted_degrees(np.full((3, 3), 0.4), 0.5).tolist() == [0.0, 0.0, 0.0]
    hand = np.array([[1, 0.6, 0.2], [0.6, 1, 0.7], [0.2, 0.7, 1]])
    assert np.allclose(weighted_degrees(hand, 0.5), [1.6, 2.3, 1.7], atol=1e-15)


def test_weighted_degrees_sum_over_first_index():
    g = np.array([[1.0, 0.9], [0.0, 1.0]])
    assert weighted_degrees(g, 0.5).tolist() == [1.0, 1.9]


def test_degree_variance_loss_hand_case():
    assert weighted_degrees(G_NEG, 0.5).tolist() == [1.0, 1.0, 3.0]
    assert weighted_degrees(G_POS, 0.5).tolist() == [5.0, 1.0, 1.0]
    got = degree_variance_loss(G_POS, G_NEG, RegularizerConfig(lam=1.0, alpha=0.5, k=1))
    assert abs(got - 64.0 / 81.0) < 1e-12


def test_degree_variance_loss_trivial_zeros():
    rng = np.random.default_rng(2)
    G = rng.uniform(size=(4, 4))
    assert degree_variance_loss(G, G, RegularizerConfig(1.0, 0.5, 4)) == 0.0
    assert degree_variance_loss(G_POS, G_NEG, RegularizerConfig(0.0, 0.5, 2)) == 0.0


def test_k_too_large():
    with pytest.raises(KTooLarge):
        RegularizerConfig(1.0, 0.5, 5, n=4)
    with pytest.raises(KTooLarge):
        degree_variance_loss(G_POS, G_NEG, RegularizerConfig(1.0, 0.5, 4))
    with pytest.raises(KTooLarge):
        top_k([1, 2], 3)


def test_top_k_ties_lower_index_first():
    assert top_k([2.0, 5.0, 5.0, 1.0], 2).tolist() == [5.0, 5.0]
    assert top_k([3.0, 1.0, 3.0], 1).tolist() == [3.0]


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2**32 - 1), st.floats(0, 5), st.floats(0, 1))
def test_regularizer_nonnegative_and_permutation_invariant(n, seed, lam, alpha):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, n + 1))
    cfg = RegularizerConfig(lam, alpha, k)
    gp, gn = rng.uniform(0, 1.5, (2, n, n))
    v = degree_variance_loss(gp, gn, cfg)
    assert v >= 0.0
    perm_p, perm_n = rng.permutation(n), rng.permutation(n)
    w = degree_variance_loss(gp[np.ix_(perm_p, perm_p)], gn[np.ix_(perm_n, perm_n)], cfg)
    assert w == pytest.approx(v, rel=1e-9, abs=1e-12)


def test_bce_examples():
    assert bce_mean([0.5] * 4, [0, 1, 0, 1]) == pytest.approx(math.log(2.0), abs=1e-15)
    assert bce_mean([1.0, 0.0], [1, 0]) < 1e-6


def test_total_loss_examples():
    c = ClassifierParams.zeros(3)
    bags = [(np.eye(3), [0, 1, 0]), (np.eye(3), [0, 0, 0])]
    assert total_loss(bags, c, RegularizerConfig(0.0, 0.5, 1)) == pytest.approx(0.6931471805599453, abs=1e-15)
    with pytest.raises(MissingPolarity):
        total_loss([(np.eye(3), [0, 0, 0])], c, RegularizerConfig(1.0, 0.5, 1))


def test_total_loss_two_bag_scalar_recomputation():
    rng = np.random.default_rng(3)
    c = ClassifierParams.init_uniform(3, rng)
    labels = [[0, 1, 0], [0, 0, 0]]
    cfg = RegularizerConfig(lam=0.7, alpha=0.5, k=1)
    bags = [(G_POS, labels[0]), (G_NEG, labels[1])]
    got = total_loss(bags, c, cfg, pair=(0, 1))
    terms = []
    for G, y in zip((G_POS, G_NEG), labels):
        for s, t in zip(scalar_scores(G.tolist(), c), y):
            terms.append(-(t * math.log(s) + (1 - t) * math.log(1 - s)))
    want = sum(terms) / len(terms) + 0.7 * (8.0 / 9.0) ** 2
    assert abs(got - want) < 1e-10


@pytest.mark.parametrize("form", ["full_matrix", "outer_product"])
@pytest.mark.parametrize("seed", range(4))
def test_total_loss_gradient(form, seed):
    report = trainer.toy_gradient_check(seed, form=form)
    assert report.passed, str(report)
    expected = {"A"} if form == "full_matrix" else {"a", "b"}
    assert set(report.max_rel_error) == expected | {"W1", "b1", "W2", "b2"}


def test_expression_loss_matches_numpy_loss():
    params, pa, pb, labels = trainer.toy_problem(5)
    cfg = RegularizerConfig(1.0, 0.5, 2, 4)
    loss, _ = trainer.build_loss(params, "full_matrix", pa, pb, labels, cfg, (0, 1))
    from lego_fusion import autodiff as ad
    from lego_fusion import kernels

    c = ClassifierParams(params["W1"], params["b1"], params["W2"], params["b2"][0, 0])
    bags = [(kernels.fuse(a, b, params["A"]), y) for a, b, y in zip(pa, pb, labels)]
    assert ad.forward(loss) == pytest.approx(total_loss(bags, c, cfg, pair=(0, 1)), abs=1e-12)


def test_checkpoint_roundtrip_lossless(tmp_path):
    model = trainer.new_model(TrainConfig(seed=3, bag_size=8, k=4), ["rgb", "flow"])
    model.weights = type(model.weights).full(np.random.default_rng(0).standard_normal((3, 4)) / 3.0)
    path = tmp_path / "m.json"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert np.array_equal(back.weights.A, model.weights.A)
    assert np.array_equal(back.classifier.W1, model.classifier.W1)
    assert back.classifier.b2 == model.classifier.b2
    assert dumps_checkpoint(back) == path.read_text()
    assert back.regularizer == RegularizerConfig(1.0, 0.5, 4)


def test_checkpoint_outer_form_roundtrip():
    model = trainer.new_model(TrainConfig(fusion_form="outer_product", P=2, Q=7), ["a", "b"])
    back = LegoModel.from_dict(model.to_dict())
    assert back.weights.form == "outer_product"
    assert back.weights.a.tolist() == [1.0, 1.0, 0.0]


def test_bad_checkpoint(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(p)
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "missing.json")
