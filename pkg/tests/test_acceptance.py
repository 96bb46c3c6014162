"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are collected in ``RESULTS`` and printed by the terminal-summary
hook in ``conftest.py`` so they appear even when output is captured.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from janus import autodiff as ad
from janus import cli, evalkit
from janus import hypgeom as hg
from janus import losses as L
from janus.graph import build_views, normalized_adjacency
from janus.model import DualEmbedding, EncoderConfig, forward, init_params

from conftest import random_tangent

RESULTS: list[str] = []


def record(number: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------- 1 geometry

def test_criterion_1_geometry():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    v = random_tangent(rng, 10_000, 3, 10.0)
    x = hg.exp_origin(v)
    round_trip = float(np.abs(hg.log_origin(x) - v).max())
    residual = float(hg.manifold_residual(x).max())
    tri = hg.exp_origin(random_tangent(rng, 3000, 3, 5.0)).reshape(1000, 3, 4)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    slack = float((hg.geodesic_dist(a, c) - hg.geodesic_dist(a, b) - hg.geodesic_dist(b, c)).max())
    secs = time.perf_counter() - t0
    parts = {
        "round trip < 1e-8": round_trip < 1e-8,
        "manifold residual < 1e-9": residual < 1e-9,
        "triangle slack <= 1e-9": slack <= 1e-9,
        "runtime < 10 s": secs < 10,
    }
    failed = [k for k, ok in parts.items() if not ok]
    record(1, not failed,
           f"round trip max err {round_trip:.2e}, manifold residual max {residual:.2e}, "
           f"triangle slack max {slack:.2e}, {secs:.2f}s"
           + (f"; failing: {', '.join(failed)}" if failed else ""))


# ---------------------------------------------------------------- 2 metrics

def test_criterion_2_metric_construction():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    ok = True
    d = np.sort(rng.exponential(5.0, 10_000))
    for k in (0.5, 1.0, 3.0):
        bd = hg.bounded(d, k)
        ok &= bool((bd >= 0).all() and (bd < k).all() and (np.diff(bd) >= 0).all())
    a1, a3 = rng.standard_normal((10_000, 4)) * 3, rng.standard_normal((10_000, 4)) * 3
    a2 = hg.exp_origin(random_tangent(rng, 10_000, 3, 8.0))
    a4 = hg.exp_origin(random_tangent(rng, 10_000, 3, 8.0))
    p = hg.product_distance(a1, a2, a3, a4)
    in_range = bool((p >= 0).all() and (p < 1).all())
    symmetric = bool(np.array_equal(p, hg.product_distance(a3, a4, a1, a2)))
    secs = time.perf_counter() - t0
    record(2, ok and in_range and symmetric and secs < 5,
           f"bounded range/monotone {ok}, product in [0,1) {in_range}, "
           f"exact symmetry {symmetric}, {secs:.2f}s")


# ---------------------------------------------------------------- 3 autodiff

def test_criterion_3_full_loss_gradcheck():
    g = evalkit.gradcheck_graph()
    views = build_views(g, 4, 3)
    cfg = EncoderConfig(layers=3, hidden=4)
    params = init_params(views.Xs.shape[1], views.Xg.shape[1], cfg, 5)
    names = sorted(params)
    shapes = [params[k].shape for k in names]
    sizes = [params[k].size for k in names]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    flat0 = np.concatenate([params[k].ravel() for k in names])
    op = normalized_adjacency(g)
    A = g.adjacency.toarray()
    w = L.LossWeights()

    def loss(flat):
        p = {k: ad.reshape(flat[int(offsets[i]):int(offsets[i + 1])], shapes[i])
             for i, k in enumerate(names)}
        fp = forward(views, op, cfg, p)
        parts = L.compute_parts(fp, A, views, w)
        return L.total_loss(parts, w).objective

    t0 = time.perf_counter()
    rep = ad.gradcheck(loss, flat0, h=1e-5, tol=1e-4)
    secs = time.perf_counter() - t0
    record(3, rep.passed and secs < 60,
           f"{flat0.size} parameters, max relative error {rep.max_rel_error:.2e} "
           f"(tol 1e-4, h 1e-5), {secs:.1f}s")


# ---------------------------------------------------------------- 4 losses

def _brute_cl(Hs, Hg, Hhs, Hhg, tau):
    n = len(Hs)
    D = [[hg.product_distance(Hg[i], Hhg[i], Hs[j], Hhs[j]) for j in range(n)] for i in range(n)]
    total = 0.0
    for i in range(n):
        num = math.exp(-D[i][i] / tau)
        l1 = -math.log(num / sum(math.exp(-D[i][j] / tau) for j in range(n) if j != i))
        l2 = -math.log(num / sum(math.exp(-D[j][i] / tau) for j in range(n) if j != i))
        total += (l1 + l2) / (2 * n)
    return total


def test_criterion_4_loss_oracles():
    rng = np.random.default_rng(404)
    t0 = time.perf_counter()
    worst_cl = worst_dec = 0.0
    for _ in range(50):
        n, k = int(rng.integers(2, 31)), int(rng.integers(2, 6))
        tau = float(rng.choice([0.3, 0.6, 1.0]))
        Hs, Hg = rng.standard_normal((n, k)), rng.standard_normal((n, k))
        Ths, Thg = rng.standard_normal((n, k)), rng.standard_normal((n, k))
        Hhs, Hhg = hg.exp_origin(Ths), hg.exp_origin(Thg)
        T = ad.Tensor
        cl, per = L.contrastive_loss(DualEmbedding(T(Hs), T(Hg), T(Hhs), T(Hhg), T(Ths), T(Thg)), tau)
        worst_cl = max(worst_cl, abs(cl.item() - _brute_cl(Hs, Hg, Hhs, Hhg, tau)))
        A = np.triu((rng.random((n, n)) < 0.3).astype(float), 1)
        A = A + A.T
        adj, per_adj = L.adjacency_loss(A, tuple(rng.random((n, n)) for _ in range(4)))
        worst_dec = max(worst_dec, abs(per.data.sum() - cl.item()),
                        abs(per_adj.data.sum() - adj.item()))
    secs = time.perf_counter() - t0
    record(4, worst_cl <= 1e-9 and worst_dec <= 1e-9 and secs < 30,
           f"50 instances: max |cl - brute force| {worst_cl:.2e}, "
           f"max decomposition gap {worst_dec:.2e}, {secs:.1f}s")


# ---------------------------------------------------------------- 5 ranking metrics

def test_criterion_5_metric_oracles():
    from test_evalkit import brute_ap, brute_auc, brute_cg, random_instance

    rng = np.random.default_rng(505)
    t0 = time.perf_counter()
    worst = 0.0
    cg_exact = True
    for _ in range(200):
        s, y = random_instance(rng)
        worst = max(worst, abs(evalkit.roc_auc(s, y) - brute_auc(s, y)),
                    abs(evalkit.average_precision(s, y) - brute_ap(s, y)))
        curve, area = evalkit.cumulative_gain(s, y)
        ref_curve, ref_area = brute_cg(s, y)
        cg_exact &= area == float(ref_area) and curve.tolist() == [
            [float(a), float(b)] for a, b in ref_curve]
    oracle_exact = True
    for g in (evalkit.small_synthetic(), evalkit.inject_anomalies(evalkit.SYNTH_500)):
        y = g.labels
        P, n = int(y.sum()), g.n
        _, area = evalkit.cumulative_gain(y.astype(float), y)
        oracle_exact &= area == 1 - P / (2 * n)
    secs = time.perf_counter() - t0
    record(5, worst <= 1e-12 and cg_exact and oracle_exact and secs < 30,
           f"200 instances: max AUC/AP gap {worst:.1e}, CG exact {cg_exact}, "
           f"oracle-ranking area exact {oracle_exact}, {secs:.1f}s")


# ---------------------------------------------------------------- 6, 7 synthetic runs

@pytest.fixture(scope="module")
def seed_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    bundle = root / "synth500"
    assert cli.main(["synth", "--preset", "synth-500", "--out", str(bundle)]) == 0
    table4 = ["--lr", "0.001", "--layers", "3", "--hidden", "32", "--tau", "0.6",
              "--lambda1", "0.01", "--lambda2", "1.0", "--epochs", "300"]
    runs, times = [], []
    for name in ("first", "second"):
        t0 = time.perf_counter()
        code = cli.main(["run-seeds", "--bundle", str(bundle), "--seeds", "1-5", *table4,
                         "--out", str(root / name)])
        times.append(time.perf_counter() - t0)
        assert code == 0
        runs.append(root / name)
    return bundle, runs, times


def test_criterion_6_synthetic_benchmark(seed_runs):
    bundle, runs, times = seed_runs
    report = cli.read_manifest(runs[0] / "metrics.txt")
    auc, auc_sd = float(report["roc_auc_mean"]), float(report["roc_auc_std"])
    ap, ap_sd = float(report["ap_mean"]), float(report["ap_std"])
    labels = (bundle / "labels.txt").read_text().split()
    base = labels.count("1") / len(labels)
    ok = auc >= 0.75 and ap >= 0.15 and ap >= 3 * base and times[0] < 600
    record(6, ok, f"synth-500, seeds 1-5: ROC-AUC {auc:.4f} ± {auc_sd:.4f} (floor 0.75), "
                  f"AP {ap:.4f} ± {ap_sd:.4f} (floor 0.15, base rate {base:.3f}), "
                  f"{times[0]:.0f}s")


def test_criterion_7_determinism(seed_runs):
    _, (a, b), times = seed_runs
    files = sorted(p.relative_to(a) for p in a.rglob("*.txt") if p.name != "manifest.txt")
    same = [(a / f).read_bytes() == (b / f).read_bytes() for f in files]
    n_scores = sum(1 for f in files if f.name == "scores.txt")
    total = sum(times)
    record(7, all(same) and n_scores == 5 and total < 1200,
           f"{sum(same)}/{len(files)} score and metric files bitwise identical across two "
           f"run-seeds executions, {total:.0f}s total")


# ---------------------------------------------------------------- 8 ablations

def test_criterion_8_ablation_hooks(tmp_path):
    bundle = tmp_path / "synth500"
    assert cli.main(["synth", "--preset", "synth-500", "--out", str(bundle)]) == 0
    outcomes = []
    for variant in ("cl", "ae"):
        code = cli.main(["train", "--bundle", str(bundle), "--variant", variant,
                         "--out", str(tmp_path / f"train-{variant}")])
        if code == 0:
            code = cli.main(["score", "--bundle", str(bundle), "--checkpoint",
                             str(tmp_path / f"train-{variant}"), "--out",
                             str(tmp_path / f"score-{variant}")])
        path = Path(tmp_path / f"score-{variant}" / "scores.txt")
        scores = cli.read_scores(path) if path.exists() else np.array([])
        outcomes.append((variant, code, scores.size, bool(np.isfinite(scores).all())))
    ok = all(code == 0 and size == 500 and finite for _, code, size, finite in outcomes)
    record(8, ok, ", ".join(f"{v}-only exit {c}, {s} finite scores" if f else
                            f"{v}-only exit {c}, non-finite scores"
                            for v, c, s, f in outcomes))
