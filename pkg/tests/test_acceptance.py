"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are printed
even when output capture is on. Criteria 5, 6 and 7 share one run of the
desk-scale sweep (120 pairs), which dominates the runtime.
"""
import csv
import json
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from geomatch import kernels
from geomatch.cli import main
from geomatch.config import ExperimentConfig
from geomatch.dense import baseline_matches, cells_to_pixels
from geomatch.epipolar import (
    CameraIntrinsics,
    CameraPose,
    FundamentalMatrix,
    RansacConfig,
    eight_point_arrays,
    fundamental_from_poses,
    make_matches,
    plane_homography,
    ransac_homography,
    recover_pose,
    sampson_distance,
    symmetric_epipolar_errors,
)
from geomatch.evaluation import (
    angle_between_deg,
    auc,
    build_tracks,
    estimate_pose_from_matches,
    homography_corner_error,
    image_corners,
    pose_error,
    rotation_angle_deg,
    track_stats,
)
from geomatch.io import Manifest
from geomatch.optimizer import OptimizerConfig, geometric_confidence, optimize
from geomatch.pipeline import run_method
from geomatch.synthetic import ViewpointParams, build_scene, gt_point_matches, render_view, simulate_anchors

from conftest import small_rotation

DESK = dict(image_size=(832, 624), coarse_cell_px=16, fine_cell_px=4)
SIG10 = 1.0 / (1.0 + math.exp(-10.0))


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return report


def eval_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


# ------------------------------------------------------------------ 1

def direct_sampson(f, a, b):
    # exact rational arithmetic on the float inputs, so the reference carries no rounding of its own
    f = [[Fraction(v) for v in row] for row in f]
    a, b = [Fraction(v) for v in a], [Fraction(v) for v in b]
    fa = [f[r][0] * a[0] + f[r][1] * a[1] + f[r][2] for r in range(3)]
    ftb = [f[0][c] * b[0] + f[1][c] * b[1] + f[2][c] for c in range(3)]
    num = (b[0] * fa[0] + b[1] * fa[1] + fa[2]) ** 2
    return num / (fa[0] ** 2 + fa[1] ** 2 + ftb[0] ** 2 + ftb[1] ** 2)


def test_criterion_01_sampson_exactness(verdict):
    rng = np.random.default_rng(2024)
    cases = [(rng.normal(size=(3, 3)), rng.uniform(-500, 500, 2), rng.uniform(-500, 500, 2)) for _ in range(1000)]
    t0 = time.perf_counter()
    got = [sampson_distance(FundamentalMatrix(f), a, b) for f, a, b in cases]
    elapsed = time.perf_counter() - t0
    worst = 0.0
    for g, (f, a, b) in zip(got, cases):
        want = direct_sampson(f.tolist(), a.tolist(), b.tolist())
        worst = max(worst, float(abs(Fraction(g) - want) / want))
    hand = sampson_distance(FundamentalMatrix(np.array([[0.0, 0, 0], [0, 0, -1], [0, 1, 0]])), (0, 0.5, 1), (0, 0, 1))
    ok = worst <= 1e-12 and hand == 0.125 and elapsed < 1.0
    verdict(1, ok, f"max rel err {worst:.2e} (<= 1e-12), hand value {hand!r} (== 0.125), {elapsed:.3f}s (< 1s)")


# ------------------------------------------------------------------ 2

def test_criterion_02_solver_exactness(verdict):
    rng = np.random.default_rng(7)
    k = CameraIntrinsics(600.0, 600.0, 416.0, 312.0)
    t0 = time.perf_counter()
    worst_epi = worst_r = worst_t = 0.0
    for _ in range(100):
        pose_a = CameraPose(np.eye(3), np.zeros(3))
        t = rng.normal(size=3)
        pose_b = CameraPose(small_rotation(rng, 30.0), t / np.linalg.norm(t))
        pts = np.column_stack([rng.uniform(-2, 2, 60), rng.uniform(-2, 2, 60), rng.uniform(4, 9, 60)])
        pts = pts[pose_b.transform(pts)[:, 2] > 0.5]
        pa, pb = k.project(pts), k.project(pose_b.transform(pts))
        f_est = eight_point_arrays(pa, pb)
        worst_epi = max(worst_epi, float(np.max(symmetric_epipolar_errors(f_est, pa, pb))))
        rel = recover_pose(fundamental_from_poses(pose_a, pose_b, k, k), k, k, make_matches(pa, pb))
        gt = pose_b.relative_to(pose_a)
        worst_r = max(worst_r, rotation_angle_deg(rel.rotation @ gt.rotation.T))
        worst_t = max(worst_t, angle_between_deg(rel.translation, gt.translation))
    elapsed = time.perf_counter() - t0
    ok = worst_epi < 1e-10 and worst_r < 1e-6 and worst_t < 1e-6 and elapsed < 5.0
    verdict(2, ok, f"8-point max sym err {worst_epi:.2e} (< 1e-10), pose rot {worst_r:.2e} deg / trans {worst_t:.2e} deg (< 1e-6), {elapsed:.2f}s (< 5s)")


# ------------------------------------------------------------------ 3

def test_criterion_03_geometric_confidence_boundary(verdict):
    # r = 3 ya - yb and la + lb = 1 + 9, so (ya, yb) = (4, 2) sits exactly at d = 10
    f = np.array([[0.0, 0, 0], [0, 0, -1], [0, 3, 0]])
    pa = np.array([[0.0, 4.0], [5.0, 1.0], [0.0, 25.0]])
    pb = np.array([[0.0, 2.0], [-2.0, 3.0], [0.0, 0.0]])
    d = kernels.sampson_dense(f, pa, pb)
    pd = kernels.geometric_confidence_dense(f, pa, pb, 10.0)
    at_tau = pd[0, 0]
    at_zero = pd[1, 1]

    s = build_scene(400, 0.3, 64, 0)
    va = render_view(s, ViewpointParams(10, 0, 0), 0.05, 1, **DESK)
    vb = render_view(s, ViewpointParams(10, 0, 20), 0.05, 2, **DESK)
    f_gt = fundamental_from_poses(va.pose, vb.pose, va.intrinsics, vb.intrinsics)
    dense = geometric_confidence(f_gt, (va.coarse, vb.coarse), OptimizerConfig())
    lo, hi = float(dense.min()), float(dense.max())
    ok = (
        d[0, 0] == 10.0
        and abs(at_tau - 0.5) <= 1e-12
        and abs(at_zero - SIG10) <= 1e-12
        and d[1, 1] == 0.0
        and lo >= 0.5
        and hi <= SIG10
    )
    verdict(
        3,
        ok,
        f"P_d(d=tau)={at_tau!r}, P_d(0)-sigmoid(10)={at_zero - SIG10:.1e}, "
        f"dense map ({dense.size} entries) range [{lo!r}, {hi!r}]",
    )


# ------------------------------------------------------------------ 4

def test_criterion_04_baseline_identity(verdict):
    cases = []
    for k in range(20):
        s = build_scene(400, 0.3, 64, 100 + k)
        va = render_view(s, ViewpointParams(10, 0, 0), 0.05, 2 * k, **DESK)
        vb = render_view(s, ViewpointParams(10, 0, 5 + 2 * k), 0.05, 2 * k + 1, **DESK)
        cases.append(((va.coarse, vb.coarse), simulate_anchors(s, va, vb, 64, 0.5, k)))
    cfg = OptimizerConfig(iterations=0)
    mismatches = 0
    sizes = []
    # rendering is setup; the clock covers the two matching paths being compared
    t0 = time.perf_counter()
    for grids, anchors in cases:
        m, _, _ = optimize(grids, anchors, cfg)
        base = baseline_matches(grids[0], grids[1], cfg.theta_final)
        mismatches += m.pairs() != base.pairs()
        sizes.append(len(base))
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 10.0
    verdict(4, ok, f"{20 - mismatches}/20 pairs identical (set equality), {min(sizes)}-{max(sizes)} matches, {elapsed:.2f}s (< 10s)")


# ------------------------------------------------------------------ 5, 6, 7

@pytest.fixture(scope="module")
def desk_sweep(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    assert main(["synth", "--out", str(root / "data")]) == 0
    t1 = time.perf_counter()
    assert main(["match", "--dataset", str(root / "data"), "--out", str(root / "out"), "--methods", "baseline,geo,geo+anchors"]) == 0
    t2 = time.perf_counter()
    assert main(["eval", "--dataset", str(root / "data"), "--matches", str(root / "out"), "--metric", "precision",
                 "--out", str(root / "precision.csv")]) == 0
    assert main(["report", str(root / "precision.csv"), "--out", str(root / "report")]) == 0
    t3 = time.perf_counter()
    rows = eval_rows(root / "precision.csv")
    table = {}
    for r in rows:
        table.setdefault((r["method"], r["variable"]), {})[float(r["offset"])] = float(r["precision"])
    return {
        "root": root,
        "table": table,
        "n_pairs": len(Manifest.load(root / "data").pairs),
        "seconds": (t1 - t0, t2 - t1, t3 - t2),
    }


def _dominance(table, method):
    lines, ok = [], True
    for var in ("distance", "alpha", "beta"):
        base, other = table[("baseline", var)], table[(method, var)]
        steps_ok = all(other[o] >= base[o] for o in base)
        mean_b, mean_o = np.mean(list(base.values())), np.mean(list(other.values()))
        worst = min(other[o] - base[o] for o in base)
        ok &= steps_ok and mean_o > mean_b
        lines.append(f"{var}: mean {mean_o:.3f} vs {mean_b:.3f}, min step margin {worst:+.3f}")
    return ok, "; ".join(lines)


def test_criterion_05_correction_property(desk_sweep, verdict):
    synth_s, match_s, eval_s = desk_sweep["seconds"]
    total = synth_s + match_s + eval_s
    ok, detail = _dominance(desk_sweep["table"], "geo+anchors")
    # the budget is per 40-pair sweep; three sweeps ran here
    per_sweep = total / 3
    ok &= per_sweep < 300
    verdict(5, ok, f"{detail}; {desk_sweep['n_pairs']} pairs in {total:.0f}s ({per_sweep:.0f}s per 40-pair sweep, < 300s)")


def test_criterion_06_degradation_shape(desk_sweep, verdict):
    beta = desk_sweep["table"][("baseline", "beta")]
    first, last = min(beta), max(beta)
    trend = desk_sweep["root"] / "report" / "trend.csv"
    rows = eval_rows(trend) if trend.exists() else []
    row = next((r for r in rows if r["variable"] == "beta" and r["method"] == "baseline"), None)
    ok = beta[last] < beta[first] and row is not None and row["drops"] == "1"
    verdict(6, ok, f"baseline beta precision {beta[first]:.3f} at {first:g} deg -> {beta[last]:.3f} at {last:g} deg; "
                   f"trend.csv row drops={row['drops'] if row else 'missing'} monotone={row['monotone'] if row else '-'}")


def test_criterion_07_no_anchor_operation(desk_sweep, verdict):
    root = desk_sweep["root"]
    failures = (root / "out" / "failures.csv").read_text().splitlines()[1:]
    traces = sorted((root / "out" / "traces").glob("*.geo.json"))
    sources = {json.loads(p.read_text())["init_source"] for p in traces}
    ok, detail = _dominance(desk_sweep["table"], "geo")
    ok &= not failures and len(traces) == desk_sweep["n_pairs"] and sources == {"top-half"}
    verdict(7, ok, f"{len(traces)}/{desk_sweep['n_pairs']} pairs optimized without anchors (init {sorted(sources)}), "
                   f"{len(failures)} failures; {detail}")


# ------------------------------------------------------------------ 8

def midpoint_auc(errors, t, step=1e-4):
    xs = (np.arange(int(round(t / step))) + 0.5) * step
    e = np.sort(np.asarray(errors, dtype=float))
    return float((np.searchsorted(e, xs, side="right") / len(e)).sum() * step / t)


def test_criterion_08_pose_pipeline(verdict):
    cfg = ExperimentConfig()
    s = build_scene(cfg.scene.n_points, cfg.scene.ambiguity_fraction, cfg.scene.descriptor_dim, 0,
                    fine_dim=cfg.scene.fine_dim, texture_scale=cfg.scene.texture_scale)
    va = render_view(s, ViewpointParams(10, 0, 0), 0.0, 1, **DESK)
    vb = render_view(s, ViewpointParams(10, 0, 20), 0.0, 2, **DESK)
    anchors = simulate_anchors(s, va, vb, cfg.anchors.count, 0.0, 3, cfg.anchors.min_confidence)
    (pa, pb, conf), _ = run_method("geo+anchors", (va.coarse, vb.coarse), (va.fine, vb.fine), anchors,
                                   gt_point_matches(va, vb), cfg)
    est = estimate_pose_from_matches(make_matches(pa, pb, conf), va.intrinsics, vb.intrinsics,
                                     RansacConfig(threshold=cfg.evaluation.ransac_threshold_px, seed=0))
    err = pose_error(est, vb.pose.relative_to(va.pose))

    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(10):
        errs = rng.exponential(6.0, size=500)
        for t, a in zip((5.0, 10.0, 20.0), auc(errs, (5.0, 10.0, 20.0))):
            worst = max(worst, abs(a - midpoint_auc(errs, t)))
    ok = err.combined < 0.5 and worst <= 1e-6
    verdict(8, ok, f"full-method pose error {err.combined:.3f} deg (rot {err.rotation_deg:.3f}, trans {err.translation_deg:.3f}; "
                   f"< 0.5) from {len(pa)} matches; AUC vs fine-grid oracle max diff {worst:.1e} (<= 1e-6)")


# ------------------------------------------------------------------ 9

def test_criterion_09_homography_path(tmp_path, verdict):
    s = build_scene(400, 0.0, 64, 0, planar=True)
    va = render_view(s, ViewpointParams(10, 0, 0), 0.0, 1, **DESK)
    vb = render_view(s, ViewpointParams(10, 10, 25), 0.0, 2, **DESK)
    h_gt = plane_homography(va.pose, vb.pose, va.intrinsics, vb.intrinsics, [0, 0, 1], -5.0)
    h, _ = ransac_homography(gt_point_matches(va, vb), 3.0, seed=0)
    corner = homography_corner_error(h, h_gt, image_corners(832, 624))
    auc3 = auc([corner], (3.0,))[0]

    # the same path through the command line, reported with the gt method
    cfg = tmp_path / "planar.json"
    cfg.write_text(json.dumps({
        "schema_version": 1,
        "scene": {"planar": True, "ambiguity_fraction": 0.0},
        "render": {"noise_sigma": 0.0},
        "sweep": {"variables": ["beta"], "start": 10, "end": 20, "step": 10, "pairs_per_step": 2},
        "methods": ["gt"],
    }))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    assert main(["match", "--dataset", str(tmp_path / "d"), "--config", str(cfg), "--out", str(tmp_path / "m")]) == 0
    assert main(["eval", "--dataset", str(tmp_path / "d"), "--matches", str(tmp_path / "m"), "--metric", "homography-auc",
                 "--config", str(cfg), "--out", str(tmp_path / "h.csv")]) == 0
    reported = {r["method"]: r for r in eval_rows(tmp_path / "h.csv")}["gt"]
    ok = corner < 1e-6 and float(reported["auc_3"]) == 1.0 and 1.0 - auc3 <= corner / 3.0
    verdict(9, ok, f"corner error {corner:.2e} px (< 1e-6), AUC@3px {auc3!r}, reported AUC@3px {reported['auc_3']} "
                   f"over {reported['pairs']} planar pairs")


# ------------------------------------------------------------------ 10

def test_criterion_10_track_length(verdict):
    cfg = ExperimentConfig()
    s = build_scene(cfg.scene.n_points, cfg.scene.ambiguity_fraction, cfg.scene.descriptor_dim, 5,
                    fine_dim=cfg.scene.fine_dim, texture_scale=cfg.scene.texture_scale)
    views = [render_view(s, ViewpointParams(10, 0, b), 0.05, 10 + k, **DESK) for k, b in enumerate((0, 5, 10, 15, 20))]
    q = float(cfg.render.coarse_cell_px)
    rng = np.random.default_rng(10)
    anchored, jittered = {}, {}
    for i in range(len(views) - 1):
        va, vb = views[i], views[i + 1]
        anchors = simulate_anchors(s, va, vb, cfg.anchors.count, cfg.anchors.pixel_noise, i)
        coarse, _, _ = optimize((va.coarse, vb.coarse), anchors, cfg.optimizer)
        pa, pb = cells_to_pixels(coarse.rows, va.coarse), cells_to_pixels(coarse.cols, vb.coarse)
        key = (f"v{i}", f"v{i + 1}")
        anchored[key] = make_matches(pa, pb, coarse.confidence)
        theta = rng.uniform(0, 2 * np.pi)
        shift = 1.5 * q * np.array([math.cos(theta), math.sin(theta)])
        jittered[key] = make_matches(pa, pb + shift, coarse.confidence)
    mean_a, _ = track_stats(build_tracks(anchored, q))
    mean_j, _ = track_stats(build_tracks(jittered, q))

    ref = build_tracks(anchored, q).partition()
    keys = list(anchored)
    same = 0
    for _ in range(100):
        rng.shuffle(keys)
        same += build_tracks({k: anchored[k] for k in keys}, q).partition() == ref
    ok = mean_a > mean_j and same == 100
    verdict(10, ok, f"mean track length cell-anchored {mean_a:.3f} vs jittered {mean_j:.3f} (1.5 x {q:g} px); "
                    f"{same}/100 shuffles give identical partitions")


# ------------------------------------------------------------------ 11

def test_criterion_11_protocol_fidelity(tmp_path, verdict):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps({
        "schema_version": 1,
        "scene": {"n_points": 60},
        "render": {"image_width": 64, "image_height": 48, "coarse_cell_px": 16, "fine_cell_px": 4},
        "anchors": {"count": 8},
    }))
    assert main(["synth", "--config", str(cfg), "--paper-scale", "--out", str(tmp_path / "d")]) == 0
    m = Manifest.load(tmp_path / "d")
    details, ok = [], True
    for seq in m.data["sequences"]:
        pairs = [p for p in m.data["pairs"] if p["variable"] == seq["variable"]]
        offsets = sorted({p["offset"] for p in pairs})
        base_ok = all(p["params_a"] == {"distance": 10.0, "alpha": 0.0, "beta": 0.0} for p in pairs)
        held = all(
            p["params_b"][k] == p["params_a"][k] + (p["offset"] if k == seq["variable"] else 0.0)
            for p in pairs for k in ("distance", "alpha", "beta")
        )
        good = len(pairs) == 900 and offsets == [float(o) for o in range(5, 41)] and base_ok and held
        ok &= good
        details.append(f"{seq['variable']}: {len(pairs)} pairs, offsets {offsets[0]:g}..{offsets[-1]:g} x{len(offsets)}")
    ok &= len(m.data["sequences"]) == 3 and len({p["pair_id"] for p in m.data["pairs"]}) == 2700
    verdict(11, ok, "; ".join(details) + ", base (10, 0, 0)")


# ------------------------------------------------------------------ 12

def _tree_bytes(root):
    out = {}
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


def test_criterion_12_determinism(tmp_path, verdict):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "schema_version": 1,
        "seed": 11,
        "sweep": {"variables": ["alpha", "beta"], "start": 10, "end": 30, "step": 20, "pairs_per_step": 2},
        "methods": ["baseline", "geo", "geo+anchors", "anchors-concat"],
    }))
    trees = []
    for run in ("a", "b"):
        r = tmp_path / run
        assert main(["synth", "--config", str(cfg), "--out", str(r / "data")]) == 0
        assert main(["match", "--dataset", str(r / "data"), "--config", str(cfg), "--out", str(r / "out")]) == 0
        csvs = []
        for metric in ("precision", "pose-auc", "tracks"):
            csvs.append(str(r / "eval" / f"{metric}.csv"))
            assert main(["eval", "--dataset", str(r / "data"), "--matches", str(r / "out"), "--metric", metric,
                         "--config", str(cfg), "--out", csvs[-1]]) == 0
        assert main(["report", *csvs, "--out", str(r / "report")]) == 0
        trees.append(_tree_bytes(r))
    a, b = trees
    differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    ok = not differing and any(k.startswith("out/matches/") for k in a) and "data/manifest.json" in a
    verdict(12, ok, f"{len(a)} files compared across two runs, {len(differing)} differ "
                    f"(manifest, {sum(k.startswith('out/matches/') for k in a)} match files, "
                    f"{sum(k.startswith(('eval/', 'report/')) for k in a)} report files)")
