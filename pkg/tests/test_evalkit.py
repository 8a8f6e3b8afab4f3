import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lego_fusion import evalkit, oracles
from lego_fusion.errors import DegenerateLabels, ShapeMismatch


def test_auc_examples():
    assert evalkit.auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert evalkit.auc([0.3] * 6, [1, 0, 1, 0, 0, 0]) == 0.5
    assert evalkit.auc([0.1, 0.9], [1, 0]) == 0.0
    # one tie between a positive and a negative
    assert evalkit.auc([0.5, 0.5, 0.2], [1, 0, 0]) == 0.75


def test_auc_errors():
    with pytest.raises(DegenerateLabels):
        evalkit.auc([0.1, 0.2], [1, 1])
    with pytest.raises(ShapeMismatch):
        evalkit.auc([0.1, 0.2], [1])
    with pytest.raises(ValueError):
        evalkit.auc([np.nan, 0.2], [1, 0])
    with pytest.raises(ValueError):
        evalkit.auc([0.1, 0.2], [1, 2])


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        s = rng.standard_normal(200)
        y = rng.integers(0, 2, 200)
        assert abs(evalkit.auc(s, y) - oracles.pairwise_auc(s.tolist(), y.tolist())) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=60))
def test_auc_tie_heavy_property(pairs):
    s = [float(a) for a, _ in pairs]
    y = [b for _, b in pairs]
    if len(set(y)) < 2:
        return
    assert abs(evalkit.auc(s, y) - oracles.pairwise_auc(s, y)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(4, 100), st.integers(0, 2**32 - 1))
def test_auc_invariances(n, seed):
    rng = np.random.default_rng(seed)
    s = rng.standard_normal(n)
    y = np.r_[0, 1, rng.integers(0, 2, n - 2)]
    a = evalkit.auc(s, y)
    assert abs(evalkit.auc(np.exp(s), y) - a) < 1e-12
    assert abs(evalkit.auc(3.0 * s - 2.0, y) - a) < 1e-12
    assert abs(a + evalkit.auc(-s, y) - 1.0) < 1e-12


def test_confusion():
    c = evalkit.confusion([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0])
    assert (c["tp"], c["fn"], c["fp"], c["tn"]) == (1, 1, 1, 1)


def test_score_dump_roundtrip(tmp_path):
    s = np.random.default_rng(1).uniform(size=10)
    y = np.arange(10) % 2
    evalkit.write_scores(s, y, tmp_path / "s.txt")
    s2, y2 = evalkit.read_scores(tmp_path / "s.txt")
    assert np.array_equal(s, s2) and np.array_equal(y, y2)
    (tmp_path / "bad.txt").write_text("0.1\n")
    with pytest.raises(ValueError):
        evalkit.read_scores(tmp_path / "bad.txt")
