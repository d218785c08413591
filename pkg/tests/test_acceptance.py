"""Acceptance criteria 1-9, each reported as one PASS/FAIL line.

Criteria 7 and 8 run full streaming experiments on the default synthetic
desk dataset (10 classes, 500 training tensors of 4x4x64 each).
"""
import json
import time

import numpy as np
import pytest
from scipy import stats

from oracles import batch_lda, brute_force_codes, central_differences
from remind import harness
from remind.augment import MixupConfig, mixup_pair, mixup_sets, sample_beta
from remind.baselines import SLDAState, slda_fit_one, slda_scores
from remind.buffer import ReplayBuffer
from remind.harness import ExperimentConfig, load_datasets, run_experiment
from remind.head import HeadModel
from remind.quantizer import (QuantizedSample, encode_batch, nearest_centroid, reconstruction_mse,
                              sample_bytes, train_kmeans, train_pq)
from remind.rng import check_random_state, split_rng

pytestmark = pytest.mark.slow

_RUNS: dict = {}


def desk(**overrides) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for k, v in overrides.items():
        cfg = cfg.with_value(k, str(v))
    return cfg


def omega(**overrides) -> float:
    key = tuple(sorted(overrides.items()))
    if key not in _RUNS:
        _RUNS[key] = run_experiment(desk(**overrides), write=False).omega_all
    return _RUNS[key]


def test_1_gradient_oracle(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for pooling in ("flatten", "mean"):
        for act in ("relu", "tanh", "identity"):
            for hidden in ((), (5,), (4, 3)):
                h = HeadModel(2, 3, 4, hidden, pooling, act, rng=rng)
                X = rng.normal(size=(6, 2, 2, 3))
                Y = rng.dirichlet(np.ones(4), size=6)
                _, analytic = h.loss_and_grads(X, Y)
                numeric = central_differences(lambda: h.loss_and_grads(X, Y)[0], h.params)
                for a, n in zip(analytic, numeric):
                    rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
                    worst = max(worst, float(rel.max()))
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 10
    acceptance(1, ok, f"max relative gradient error {worst:.2e} (< 1e-4), {dt:.1f}s (< 10s)")
    assert ok


def test_2_pq_oracle(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    X = rng.normal(size=(1000, 2, 2, 8)).astype(np.float32)
    cb = train_pq(X, s=4, c=8, iters=25, rng=2)
    codes = encode_batch(cb, X)
    mismatches = sum(int(np.any(codes[i] != brute_force_codes(X[i], cb.centroids)))
                     for i in range(1000))

    monotone = True
    for seed in range(10):
        pts = np.random.default_rng(seed).normal(size=(400, 3))
        _, hist = train_kmeans(pts, 12, 25, seed, return_history=True)
        monotone &= all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(hist, hist[1:]))

    cb1 = train_pq(X, s=1, c=16, rng=3)
    plain = train_kmeans(X.reshape(-1, 8), 16, 25, split_rng(check_random_state(3), 1)[0])
    same = (np.array_equal(cb1.centroids[0], plain) and np.array_equal(
        encode_batch(cb1, X).reshape(-1), nearest_centroid(X.reshape(-1, 8), plain)[0]))
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and monotone and same and dt < 30
    acceptance(2, ok, f"{mismatches} code mismatches over 1000 tensors, monotone={monotone}, "
                      f"s=1 equals k-means={same}, {dt:.1f}s (< 30s)")
    assert ok


def test_3_memory_arithmetic(acceptance):
    total = 959665 * sample_bytes(7, 32, 256)
    gb = total / 1e9
    ok = total == 1_504_754_720 and abs(gb - 1.51) / 1.51 < 0.01
    acceptance(3, ok, f"{total} bytes = {gb:.4f} GB vs 1.51 GB ({abs(gb - 1.51) / 1.51:.2%} off)")
    assert ok


def test_4_buffer_invariants(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    K, cap = 10, 60
    buf = ReplayBuffer(cap * 8, record_evictions=False)
    labels = rng.integers(0, K, 100_000)
    # bursts of a single class make class sizes drift apart
    burst = rng.random(100_000) < 0.3
    labels[burst] = (np.arange(100_000)[burst] // 500) % K
    over_budget = wrong_class = 0
    ranks: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        before = buf.per_class_count
        top = max(before.values()) if before else 0
        members = {c: sorted(q.seq_index for q in buf.class_members(c))
                   for c, n in before.items() if n == top}
        q = QuantizedSample(np.zeros((2, 2, 2), np.uint8), int(lab), 0, i)
        for e in buf.insert(q, rng):
            if before.get(e.label, 0) != top:
                wrong_class += 1
                continue
            cand = members[e.label] + ([i] if e.label == lab else [])
            ranks.setdefault(len(cand), []).append(cand.index(e.seq_index))
        over_budget += buf.bytes_used > buf.budget_bytes
    size = max(ranks, key=lambda s: len(ranks[s]))
    observed = np.bincount(ranks[size], minlength=size)
    p = stats.chisquare(observed).pvalue
    dt = time.perf_counter() - t0
    ok = over_budget == 0 and wrong_class == 0 and p > 0.01 and dt < 60
    acceptance(4, ok, f"budget breaches {over_budget}, non-maximal evictions {wrong_class}, "
                      f"chi2 p={p:.3f} over {observed.sum()} evictions from classes of {size}, "
                      f"{dt:.1f}s (< 60s)")
    assert ok


def test_5_mixup_exactness(acceptance):
    rng = np.random.default_rng(5)
    exact = True
    for _ in range(200):
        za, zb = rng.normal(size=(2, 4, 4, 8))
        ya, yb = np.eye(10)[rng.integers(0, 10, 2)]
        lam = float(rng.random())
        z, y = mixup_pair(za, ya, zb, yb, lam)
        exact &= np.array_equal(z, lam * za + (1 - lam) * zb)
        exact &= np.array_equal(y, lam * ya + (1 - lam) * yb)
    za, zb = rng.normal(size=(2, 50, 4, 4, 8)).astype(np.float32)
    ya, yb = np.eye(10)[rng.integers(0, 10, (2, 50))]
    z, y, lam = mixup_sets(za, ya, zb, yb, MixupConfig(0.1), rng)
    L = lam[:, None, None, None]
    exact &= np.array_equal(z, (L * za.astype(np.float64) + (1 - L) * zb).astype(np.float32))
    exact &= np.array_equal(y, lam[:, None] * ya + (1 - lam[:, None]) * yb)
    mean = float(sample_beta(0.1, np.random.default_rng(6), 100_000).mean())
    ok = exact and abs(mean - 0.5) <= 0.01
    acceptance(5, ok, f"convex combination exact={exact}, lambda mean {mean:.4f} (0.5 +/- 0.01)")
    assert ok


def test_6_slda_equivalence(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    y = rng.integers(0, 3, 600)
    X = np.array([[0, 0, 0], [2, 1, 0], [0, 2, 1]], float)[y] + rng.normal(size=(600, 3))
    st = SLDAState(3, 3, 1e-4)
    for x, label in zip(X, y):
        slda_fit_one(st, x, int(label))
    means, cov, W, b = batch_lda(X, y, 3, 1e-4)
    mean_err = float(np.max(np.abs(st.means - means)))
    cov_err = float(np.max(np.abs(st.cov - cov)) / np.max(np.abs(cov)))
    probe = rng.normal(scale=2, size=(2000, 3))
    same = np.array_equal(slda_scores(st, probe).argmax(1), (probe @ W + b).argmax(1))
    dt = time.perf_counter() - t0
    ok = mean_err < 1e-9 and cov_err < 1e-6 and same and dt < 10
    acceptance(6, ok, f"mean err {mean_err:.1e}, covariance rel err {cov_err:.1e}, "
                      f"predictions identical={same}, {dt:.1f}s (< 10s)")
    assert ok


def test_7_forgetting_order(acceptance):
    t0 = time.perf_counter()
    learners = ("remind", "slda", "exstream", "finetune")
    cls = {n: omega(**{"learner.name": n, "ordering.kind": "class_iid"}) for n in learners}
    iid = {n: omega(**{"learner.name": n, "ordering.kind": "iid"}) for n in learners}
    dt = time.perf_counter() - t0
    best_stream = max(cls["slda"], cls["exstream"])
    ok = (cls["remind"] > best_stream > cls["finetune"]
          and cls["remind"] - cls["finetune"] >= 0.3
          and min(iid.values()) >= 0.9 and dt < 15 * 60)
    fmt = lambda d: ", ".join(f"{k} {v:.3f}" for k, v in d.items())  # noqa: E731
    acceptance(7, ok, f"class_iid [{fmt(cls)}]; iid [{fmt(iid)}]; {dt:.0f}s (< 900s)")
    assert ok


def test_8_ablation_directions(acceptance):
    t0 = time.perf_counter()
    small = {"buffer.budget_bytes": 51200}
    aug_on = omega(**small)
    aug_off = omega(**small, **{"augment.mixup.enabled": "false",
                                "augment.crop.enabled": "false"})
    t_aug = time.perf_counter() - t0

    t1 = time.perf_counter()
    budgets = (25600, 128000, 640000)
    by_budget = [omega(**{"buffer.budget_bytes": b}) for b in budgets]
    t_budget = time.perf_counter() - t1

    t2 = time.perf_counter()
    train, _ = load_datasets(desk())
    X = train.tensors[:1000]
    mse_c = [reconstruction_mse(train_pq(X, 16, c, rng=0), X) for c in (2, 16, 256)]
    mse_s = [reconstruction_mse(train_pq(X, s, 64, rng=0), X) for s in (1, 4, 16, 64)]
    t_mse = time.perf_counter() - t2

    a = aug_off < aug_on
    b = all(x <= y for x, y in zip(by_budget, by_budget[1:]))
    c = (all(x >= y for x, y in zip(mse_c, mse_c[1:]))
         and all(x >= y for x, y in zip(mse_s, mse_s[1:])))
    fast = max(t_aug, t_budget, t_mse) < 20 * 60
    ok = a and b and c and fast
    acceptance(8, ok, f"(a) augmentation on {aug_on:.3f} > off {aug_off:.3f}: {a}; "
                      f"(b) budget {list(budgets)} -> {[round(v, 3) for v in by_budget]}: {b}; "
                      f"(c) MSE over c {[round(v, 4) for v in mse_c]}, over s "
                      f"{[round(v, 4) for v in mse_s]}: {c}; slowest sweep "
                      f"{max(t_aug, t_budget, t_mse):.0f}s (< 1200s)")
    assert ok


def test_9_determinism(acceptance, tmp_path):
    texts = []
    for run in ("a", "b"):
        harness._DATA_CACHE.clear()
        harness._OFFLINE_CACHE.clear()
        cfg = desk(**{"output.dir": tmp_path / run})
        run_experiment(cfg)
        texts.append((tmp_path / run / "summary.json").read_text())
    ok = texts[0] == texts[1]
    omega_val = json.loads(texts[0])["omega_all"]
    acceptance(9, ok, f"summary.json byte-identical across two runs={ok} (omega {omega_val:.4f})")
    assert ok
