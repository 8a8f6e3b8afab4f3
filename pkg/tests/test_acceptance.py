"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run ``pytest tests/test_acceptance.py -v`` for the full suite (the summary
lines are repeated at the end of the session), or execute this file directly.
"""

import time

import numpy as np
import pytest

from lego_fusion import evalkit, oracles, trainer
from lego_fusion.anomaly_model import RegularizerConfig, degree_variance_loss, dumps_checkpoint
from lego_fusion.config import TrainConfig, load_presets
from lego_fusion.data_io import SyntheticSpec, generate_synthetic
from lego_fusion.graph_build import RelationshipGraph, distance_similarity_residual
from lego_fusion.power_fusion import expand_powers, outer_equivalence_check

RESULTS = []


def report(number, name, ok, detail, seconds):
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail} ({seconds:.2f}s)"
    RESULTS.append(line)
    print(line)
    return ok


def test_c01_fusion_matches_loop_oracle():
    t0 = time.perf_counter()
    worst = oracles.fusion_oracle_check(500, seed=2024)
    dt = time.perf_counter() - t0
    ok = worst < 1e-9 and dt < 10
    assert report(1, "fuse vs four-loop oracle", ok, f"max dev {worst:.3e} < 1e-9, 500 trials", dt)


def test_c02_outer_product_identity():
    rng = np.random.default_rng(2025)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(500):
        n, p, q = rng.integers(2, 7), rng.integers(0, 5), rng.integers(0, 5)
        sa = expand_powers(RelationshipGraph(rng.uniform(0, 1, (n, n)), kind="custom"), p)
        sb = expand_powers(RelationshipGraph(rng.uniform(0, 1, (n, n)), kind="custom"), q)
        a, b = rng.standard_normal(p + 1), rng.standard_normal(q + 1)
        worst = max(worst, outer_equivalence_check(sa, sb, a, b))
    dt = time.perf_counter() - t0
    ok = worst < 1e-12 and dt < 5
    assert report(2, "outer(a, b) equals full-matrix form", ok, f"max dev {worst:.3e} < 1e-12, 500 pairs", dt)


def test_c03_zeroth_power_and_identity_fixed_point():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    ok = True
    for n in range(1, 8):
        for norm in ("raw", "row-stochastic"):
            g = RelationshipGraph(rng.uniform(-1, 1, (n, n)), kind="custom")
            ok &= np.array_equal(expand_powers(g, 3, norm).powers[0], np.eye(n))
            eye = expand_powers(RelationshipGraph(np.eye(n), kind="custom"), 5, norm).powers
            ok &= all(np.array_equal(m, np.eye(n)) for m in eye)
    dt = time.perf_counter() - t0
    assert report(3, "R^0 = I and I^p = I", bool(ok), "exact equality, n = 1..7, both normalizations", dt)


def test_c04_distance_similarity_identity():
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    worst = 0.0
    for d in (2, 8, 64):
        for _ in range(1000):
            x, y = rng.standard_normal(d), rng.standard_normal(d)
            r = distance_similarity_residual(x / np.linalg.norm(x), y / np.linalg.norm(y))
            worst = max(worst, abs(r))
    dt = time.perf_counter() - t0
    assert report(4, "|x-y|^2 = 2 - 2cos on unit vectors", worst < 1e-9, f"max residual {worst:.3e} < 1e-9", dt)


def test_c05_gradient_fidelity():
    t0 = time.perf_counter()
    worst, excluded = 0.0, 0
    for seed in range(20):
        rep = trainer.toy_gradient_check(seed, n=4, P=2, Q=2, lam=1.0, alpha=0.5, k=2, step=1e-5, tolerance=1e-4)
        worst = max(worst, rep.worst)
        excluded += sum(len(v) for v in rep.excluded.values())
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 30
    detail = f"max rel err {worst:.3e} < 1e-4 over 20 toys, {excluded} kink/boundary entries excluded"
    assert report(5, "analytic vs central-difference gradients", ok, detail, dt)


def test_c06_regularizer_hand_case():
    g_neg = np.array([[1.0, 0, 1], [0, 1, 1], [0, 0, 1]])
    g_pos = np.array([[1.0, 0, 0], [2, 1, 0], [2, 0, 1]])
    t0 = time.perf_counter()
    got = degree_variance_loss(g_pos, g_neg, RegularizerConfig(lam=1.0, alpha=0.5, k=1))
    dt = time.perf_counter() - t0
    err = abs(got - 64 / 81)
    assert report(6, "degree-variance hand case", err < 1e-12, f"{got!r} vs 64/81, err {err:.1e}", dt)


def test_c07_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    for t in range(100):
        labels = rng.integers(0, 2, 200)
        labels[:2] = (0, 1)
        # every third set draws from a handful of values to force ties
        scores = rng.integers(0, 5, 200) / 4.0 if t % 3 == 0 else rng.random(200)
        worst = max(worst, abs(evalkit.auc(scores, labels) - oracles.pairwise_auc(scores.tolist(), labels.tolist())))
    dt = time.perf_counter() - t0
    assert report(7, "rank AUC vs O(n^2) oracle", worst < 1e-12, f"max dev {worst:.1e}, 100 sets incl. tie-heavy", dt)


C8_CONFIG = TrainConfig(P=2, Q=3, fusion_form="full_matrix", lam=1.0, alpha=0.5, k=10,
                        optimizer="adam", learning_rate=1e-3, epochs=30, seed=42)


def run_synthetic(cfg):
    ds = generate_synthetic(SyntheticSpec(seed=42))
    test = ds.split("test")
    res = trainer.train(ds.split("train"), cfg, validation=test)
    return res, evalkit.evaluate_model(res.model, test)["auc"]


@pytest.fixture(scope="module")
def lego_run():
    t0 = time.perf_counter()
    res, auc = run_synthetic(C8_CONFIG)
    return res, auc, time.perf_counter() - t0


def test_c08_synthetic_end_to_end(lego_run):
    res, lego_auc, dt_lego = lego_run
    t0 = time.perf_counter()
    _, base_auc = run_synthetic(C8_CONFIG.replace(fusion_form="product", lam=0.0))
    dt = dt_lego + time.perf_counter() - t0
    ok = lego_auc >= 0.90 and lego_auc - base_auc >= 0.02 and dt < 300
    detail = f"LEGO {lego_auc:.4f} (need >= 0.90), product {base_auc:.4f}, margin {lego_auc - base_auc:+.4f} (need >= 0.02)"
    assert report(8, "synthetic LEGO vs product baseline", ok, detail, dt)


def test_c09_determinism(lego_run):
    first = lego_run[0]
    t0 = time.perf_counter()
    second, _ = run_synthetic(C8_CONFIG)
    dt = time.perf_counter() - t0
    same_ck = dumps_checkpoint(first.model) == dumps_checkpoint(second.model)
    same_log = first.log_text() == second.log_text()
    detail = f"checkpoint {'identical' if same_ck else 'differs'}, log {'identical' if same_log else 'differs'}"
    assert report(9, "same seed, byte-identical run", same_ck and same_log, detail, dt)


EXPECTED_PRESETS = {
    "avenue": ("outer_product", 2, 7, 1.0, 0.5, 10),
    "shanghaitech": ("full_matrix", 2, 3, 1.0, 0.5, 10),
    "ped2": ("full_matrix", 4, 3, 1.0, 0.5, 10),
    "street": ("full_matrix", 4, 3, 1.0, 0.5, 10),
    "combined": ("full_matrix", 4, 4, 0.001, 0.5, 10),
}


def test_c10_preset_fidelity():
    t0 = time.perf_counter()
    bad = []
    for name, want in EXPECTED_PRESETS.items():
        c = load_presets(name)
        if (c.fusion_form, c.P, c.Q, c.lam, c.alpha, c.k) != want:
            bad.append(name)
    dt = time.perf_counter() - t0
    detail = "all 5 tags match" if not bad else f"mismatch: {', '.join(bad)}"
    assert report(10, "dataset presets", not bad, detail, dt)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
