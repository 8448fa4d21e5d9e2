"""Batch orchestration behind the CLI: synthesize, match, evaluate, report.

Work is split into independent tasks (one scene seed for synthesis, one pair
for matching) and run on a process pool sized by ``GEOMATCH_THREADS``.
Results are merged in a fixed order, so output bytes never depend on the
worker count.
"""
from __future__ import annotations

import logging
import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from geomatch.config import METHODS, ExperimentConfig, SweepSection
from geomatch.dense import dual_softmax, mnn_select, similarity
from geomatch.epipolar import (
    RansacConfig,
    fundamental_from_poses,
    match_arrays,
    plane_homography,
    ransac_homography,
)
from geomatch.errors import ConfigError, GeomatchError, MissingInputError
from geomatch.evaluation import (
    auc,
    build_tracks,
    estimate_pose_from_matches,
    homography_corner_error,
    image_corners,
    pose_error,
    precision_arrays,
)
from geomatch.io import (
    Manifest,
    created_timestamp,
    encode_grid,
    group_by_method,
    read_matches,
    rows_from_arrays,
    view_to_dict,
    write_json,
    write_matches,
)
from geomatch.optimizer import optimize
from geomatch.refine import RefinementConfig, refine
from geomatch.synthetic import (
    PairSweepSpec,
    ViewpointParams,
    build_scene,
    gt_point_matches,
    make_pair_sweep,
    render_view,
    simulate_anchors,
    view_id,
    view_seed,
)

log = logging.getLogger(__name__)

METRICS = ("precision", "pose-auc", "homography-auc", "tracks")


def worker_count(n_tasks: int) -> int:
    env = os.environ.get("GEOMATCH_THREADS")
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError(f"GEOMATCH_THREADS: expected an integer, got {env!r}") from None
        if cap < 1:
            raise ConfigError("GEOMATCH_THREADS: must be >= 1")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_tasks))


def run_tasks(fn: Callable, tasks: Sequence) -> list:
    """Map ``fn`` over ``tasks``; results come back in task order."""
    n = worker_count(len(tasks))
    if n <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * n))))


def paper_scale_sweep(sweep: SweepSection) -> SweepSection:
    return dc_replace(sweep, start=5.0, end=40.0, step=1.0, pairs_per_step=25)


def sweep_specs(cfg: ExperimentConfig) -> list[PairSweepSpec]:
    sw = cfg.sweep
    base = ViewpointParams(sw.base.distance, sw.base.alpha, sw.base.beta)
    return [PairSweepSpec(v, sw.start, sw.end, sw.step, sw.pairs_per_step, base) for v in sw.variables]


def scene_seeds(cfg: ExperimentConfig) -> list[int]:
    return [cfg.seed * 1000 + k for k in range(cfg.sweep.pairs_per_step)]


# ---------------------------------------------------------------- synth

@dataclass(frozen=True)
class _SceneTask:
    cfg: ExperimentConfig
    seed: int
    pairs: tuple
    out: str


def _synth_scene(task: _SceneTask) -> dict:
    cfg, sc, r = task.cfg, task.cfg.scene, task.cfg.render
    out = Path(task.out)
    scene = build_scene(
        sc.n_points, sc.ambiguity_fraction, sc.descriptor_dim, task.seed,
        half_extent=sc.half_extent, planar=sc.planar, fine_dim=sc.fine_dim, texture_scale=sc.texture_scale,
    )
    views, paths = {}, {}
    for rec in task.pairs:
        for v in (rec.view_a, rec.view_b):
            vid = view_id(task.seed, v)
            if vid in views:
                continue
            view = render_view(
                scene, v, r.noise_sigma, view_seed(cfg.seed, vid),
                image_size=(r.image_width, r.image_height), coarse_cell_px=r.coarse_cell_px, fine_cell_px=r.fine_cell_px,
            )
            vdir = out / "views" / vid
            vdir.mkdir(parents=True, exist_ok=True)
            (vdir / "coarse.grid").write_bytes(encode_grid(view.coarse))
            (vdir / "fine.grid").write_bytes(encode_grid(view.fine))
            write_json(vdir / "view.json", view_to_dict(vid, view, "coarse.grid", "fine.grid"))
            views[vid] = view
            paths[vid] = f"views/{vid}/view.json"

    entries = []
    for rec in task.pairs:
        va, vb = view_id(task.seed, rec.view_a), view_id(task.seed, rec.view_b)
        pdir = out / "pairs" / rec.pair_id
        pdir.mkdir(parents=True, exist_ok=True)
        a = cfg.anchors
        anchors = simulate_anchors(scene, views[va], views[vb], a.count, a.pixel_noise, view_seed(cfg.seed, rec.pair_id), a.min_confidence)
        gt = gt_point_matches(views[va], views[vb])
        write_matches(pdir / "anchors.csv", rows_from_arrays(rec.pair_id, "anchors", *match_arrays(anchors)))
        write_matches(pdir / "gt.csv", rows_from_arrays(rec.pair_id, "gt", *match_arrays(gt)))
        entries.append({
            "pair_id": rec.pair_id,
            "variable": rec.variable,
            "offset": rec.offset,
            "scene_seed": rec.scene_seed,
            "view_a": va,
            "view_b": vb,
            "params_a": rec.view_a.to_dict(),
            "params_b": rec.view_b.to_dict(),
            "anchors": f"pairs/{rec.pair_id}/anchors.csv",
            "gt": f"pairs/{rec.pair_id}/gt.csv",
        })
    return {"views": paths, "pairs": entries}


def synthesize(cfg: ExperimentConfig, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    specs = sweep_specs(cfg)
    seeds = scene_seeds(cfg)
    records = [rec for spec in specs for rec in make_pair_sweep(spec, seeds)]
    tasks = [_SceneTask(cfg, s, tuple(r for r in records if r.scene_seed == s), str(out)) for s in seeds]
    results = run_tasks(_synth_scene, tasks)

    views, by_id = {}, {}
    for res in results:
        views.update(res["views"])
        by_id.update({p["pair_id"]: p for p in res["pairs"]})
    pairs = [by_id[r.pair_id] for r in records]
    plane = None
    if cfg.scene.planar:
        plane = {"normal": [0.0, 0.0, 1.0], "offset": -cfg.scene.half_extent}
    manifest = {
        "schema_version": 1,
        "created": created_timestamp(),
        "seed": cfg.seed,
        "scene_seeds": seeds,
        "config": cfg.to_dict(),
        "sequences": [
            {
                "variable": s.variable,
                "start": s.start,
                "end": s.end,
                "step": s.step,
                "pairs_per_step": s.pairs_per_step,
                "base": s.base.to_dict(),
                "offsets": s.offsets(),
                "n_pairs": len(s.offsets()) * s.pairs_per_step,
            }
            for s in specs
        ],
        "planar_patch": plane,
        "views": dict(sorted(views.items())),
        "pairs": pairs,
    }
    write_json(out / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------- match

def run_method(method: str, grids, fines, anchors, gt, cfg: ExperimentConfig, p0=None):
    """Matches for one method as (pa, pb, confidence), plus the optimizer trace if any.

    ``p0`` is the shared dual-softmax map of the coarse grids; computed when omitted.
    """
    if method == "gt":
        return match_arrays(gt), None
    temp = cfg.matching.temperature
    opt = cfg.optimizer
    if p0 is None:
        p0 = dual_softmax(similarity(grids[0], grids[1]), temp)
    trace = None
    if method in ("baseline", "anchors-concat"):
        coarse = mnn_select(p0, opt.theta_final)
    elif method == "geo":
        coarse, _, trace = optimize(grids, [], opt, temp, p0)
    elif method == "geo+anchors":
        coarse, _, trace = optimize(grids, anchors, opt, temp, p0)
    else:
        raise ConfigError(f"methods: unknown method {method!r}")
    rcfg = RefinementConfig(cfg.refinement.window, fines[0].cell_size_px, cfg.refinement.temperature)
    ref = refine(coarse, grids, fines[0], fines[1], rcfg)
    pa, pb, conf = ref.a, ref.b, ref.confidence
    if method == "anchors-concat" and len(anchors):
        apa, apb, aconf = match_arrays(anchors)
        pa, pb, conf = np.concatenate([pa, apa]), np.concatenate([pb, apb]), np.concatenate([conf, aconf])
    return (pa, pb, conf), trace


@dataclass(frozen=True)
class _PairTask:
    dataset: str
    pair_id: str
    view_a: str
    view_b: str
    anchors: str
    gt: str
    cfg: ExperimentConfig


def _match_pair(task: _PairTask):
    try:
        m = Manifest.load(task.dataset)
        va, vb = m.view(task.view_a), m.view(task.view_b)
        ca, fa = va.load_grids()
        cb, fb = vb.load_grids()
        anchors = group_by_method(read_matches(m.path(task.anchors))).get("anchors", [])
        gt = group_by_method(read_matches(m.path(task.gt))).get("gt", [])
        rows, traces = [], {}
        p0 = dual_softmax(similarity(ca, cb), task.cfg.matching.temperature)
        for method in task.cfg.methods:
            (pa, pb, conf), trace = run_method(method, (ca, cb), (fa, fb), anchors, gt, task.cfg, p0)
            rows.extend(rows_from_arrays(task.pair_id, method, pa, pb, conf))
            if trace is not None:
                traces[method] = trace.to_dict()
        return task.pair_id, rows, traces, None
    except GeomatchError as exc:
        return task.pair_id, None, None, (exc.category, str(exc))
    except (ValueError, OSError) as exc:
        return task.pair_id, None, None, (type(exc).__name__, str(exc))


def match_dataset(dataset_dir, cfg: ExperimentConfig, out_dir) -> tuple[int, int]:
    """Returns (succeeded, failed) pair counts."""
    m = Manifest.load(dataset_dir)
    out = Path(out_dir)
    (out / "matches").mkdir(parents=True, exist_ok=True)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    tasks = [_PairTask(str(dataset_dir), p.pair_id, p.view_a, p.view_b, p.anchors, p.gt, cfg) for p in m.pairs]
    results = sorted(run_tasks(_match_pair, tasks), key=lambda r: r[0])
    failures = []
    for pair_id, rows, traces, err in results:
        if err is not None:
            log.warning("pair %s failed: %s", pair_id, err[1])
            failures.append((pair_id, *err))
            continue
        write_matches(out / "matches" / f"{pair_id}.csv", rows)
        for method, tr in traces.items():
            write_json(out / "traces" / f"{pair_id}.{method}.json", tr)
    lines = ["pair_id,category,message"]
    lines += [f"{pid},{cat},\"{msg.replace(chr(34), chr(39))}\"" for pid, cat, msg in failures]
    (out / "failures.csv").write_text("\n".join(lines) + "\n")
    return len(results) - len(failures), len(failures)


# ---------------------------------------------------------------- eval

def _failed_pairs(match_dir: Path) -> set[str]:
    p = match_dir / "failures.csv"
    if not p.exists():
        return set()
    lines = p.read_text().splitlines()[1:]
    return {ln.split(",", 1)[0] for ln in lines if ln}


def load_pair_matches(m: Manifest, match_dir) -> dict[str, dict]:
    """pair_id -> {method: [PointMatch]}; pairs recorded as failed are skipped."""
    match_dir = Path(match_dir)
    failed = _failed_pairs(match_dir)
    out = {}
    for p in m.pairs:
        if p.pair_id in failed:
            continue
        path = match_dir / "matches" / f"{p.pair_id}.csv"
        if not path.exists():
            raise MissingInputError(f"missing match file: {path}")
        out[p.pair_id] = group_by_method(read_matches(path))
    if not out:
        raise MissingInputError(f"no match files in {match_dir / 'matches'}")
    return out


def _methods_present(pair_matches: dict) -> list[str]:
    found = {k for d in pair_matches.values() for k in d}
    return [k for k in METHODS if k in found] + sorted(found - set(METHODS))


def _f6(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.6f}"


def _csv(comment: Iterable[str], header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [f"# {c}" for c in comment]
    lines.append(",".join(header))
    lines += [",".join(str(v) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def eval_precision(m: Manifest, pm: dict, cfg: ExperimentConfig) -> str:
    thr = cfg.evaluation.precision_threshold
    acc = {}
    order = []
    for p in m.pairs:
        if p.pair_id not in pm:
            continue
        if (p.variable, p.offset) not in order:
            order.append((p.variable, p.offset))
        va, vb = m.view(p.view_a), m.view(p.view_b)
        f = fundamental_from_poses(va.pose, vb.pose, va.intrinsics, vb.intrinsics)
        for method, matches in pm[p.pair_id].items():
            pa, pb, _ = match_arrays(matches) if matches else (np.zeros((0, 2)), np.zeros((0, 2)), None)
            prec = precision_arrays(pa, pb, f, va.intrinsics, vb.intrinsics, thr)
            acc.setdefault((method, p.variable, p.offset), []).append((prec, len(matches)))
    rows = []
    for method in _methods_present(pm):
        for var, off in order:
            vals = acc.get((method, var, off), [])
            if not vals:
                continue
            rows.append((method, var, f"{off:g}", len(vals), _f6(np.mean([v[0] for v in vals])), _f6(np.mean([v[1] for v in vals]))))
    comment = [
        "geomatch precision report",
        f"precision = fraction of matches with symmetric epipolar error < {thr:g} in normalized coordinates",
        "columns: method, swept variable, offset from base view, pairs averaged, mean precision, mean match count",
    ]
    return _csv(comment, ("method", "variable", "offset", "pairs", "precision", "mean_matches"), rows)


def _auc_rows(per_method: dict[str, list[float]], thresholds, methods) -> list:
    rows = []
    for method in methods:
        errs = per_method.get(method, [])
        if not errs:
            continue
        fails = sum(1 for e in errs if not math.isfinite(e))
        rows.append((method, len(errs), fails, *(_f6(a) for a in auc(errs, thresholds))))
    return rows


def eval_pose(m: Manifest, pm: dict, cfg: ExperimentConfig) -> str:
    ev = cfg.evaluation
    rc = RansacConfig(threshold=ev.ransac_threshold_px, max_iters=ev.ransac_max_iters, seed=cfg.seed)
    errs: dict[str, list[float]] = {}
    for p in m.pairs:
        if p.pair_id not in pm:
            continue
        va, vb = m.view(p.view_a), m.view(p.view_b)
        gt = vb.pose.relative_to(va.pose)
        for method, matches in pm[p.pair_id].items():
            try:
                est = estimate_pose_from_matches(matches, va.intrinsics, vb.intrinsics, rc)
                e = pose_error(est, gt).combined
            except (GeomatchError, ValueError):
                e = math.inf
            errs.setdefault(method, []).append(e)
    th = ev.pose_thresholds
    comment = [
        "geomatch relative pose AUC report",
        "error = max(rotation error, translation direction error) in degrees; failed estimates count as infinite error",
        "columns: method, pairs, failed estimates, then AUC at each threshold in degrees",
    ]
    header = ("method", "pairs", "failures", *(f"auc_{t:g}" for t in th))
    return _csv(comment, header, _auc_rows(errs, th, _methods_present(pm)))


def eval_homography(m: Manifest, pm: dict, cfg: ExperimentConfig) -> str:
    plane = m.planar_patch
    if plane is None:
        raise ConfigError("homography-auc: dataset has no planar patch (set scene.planar to true)")
    ev = cfg.evaluation
    rc = RansacConfig(threshold=ev.homography_ransac_threshold_px, max_iters=ev.ransac_max_iters, seed=cfg.seed)
    errs: dict[str, list[float]] = {}
    for p in m.pairs:
        if p.pair_id not in pm:
            continue
        va, vb = m.view(p.view_a), m.view(p.view_b)
        h_gt = plane_homography(va.pose, vb.pose, va.intrinsics, vb.intrinsics, plane["normal"], plane["offset"])
        corners = image_corners(va.width, va.height)
        for method, matches in pm[p.pair_id].items():
            try:
                h, _ = ransac_homography(matches, rc.threshold, rc.max_iters, rc.seed, rc.confidence)
                e = homography_corner_error(h, h_gt, corners)
            except (GeomatchError, ValueError):
                e = math.inf
            errs.setdefault(method, []).append(e)
    th = ev.homography_thresholds
    comment = [
        "geomatch homography AUC report",
        "error = mean corner transfer distance in pixels between estimated and true homography; failures count as infinite",
        "columns: method, pairs, failed estimates, then AUC at each threshold in pixels",
    ]
    header = ("method", "pairs", "failures", *(f"auc_{t:g}" for t in th))
    return _csv(comment, header, _auc_rows(errs, th, _methods_present(pm)))


def eval_tracks(m: Manifest, pm: dict, cfg: ExperimentConfig) -> str:
    groups: dict[tuple, list] = {}
    for p in m.pairs:
        if p.pair_id in pm:
            groups.setdefault((p.variable, p.scene_seed), []).append(p)
    per_method: dict[str, list[int]] = {}
    q_used = None
    for key in sorted(groups, key=lambda k: (str(k[0]), k[1])):
        pairs = groups[key]
        q = cfg.evaluation.quantize_px or m.view(pairs[0].view_a).coarse_cell_px
        q_used = q
        for method in _methods_present(pm):
            pairwise = {(p.view_a, p.view_b): pm[p.pair_id].get(method, []) for p in pairs}
            per_method.setdefault(method, []).extend(build_tracks(pairwise, q).lengths)
    rows = []
    for method in _methods_present(pm):
        lengths = per_method.get(method, [])
        mean = float(np.mean(lengths)) if lengths else 0.0
        hist = ";".join(f"{k}:{v}" for k, v in sorted(Counter(lengths).items()))
        rows.append((method, len(lengths), _f6(mean), hist))
    comment = [
        "geomatch track report",
        f"tracks = connected components of keypoints quantized to {q_used:g} px, built per (sweep variable, scene) sequence",
        "columns: method, track count, mean track length in views, histogram as length:count pairs",
    ]
    return _csv(comment, ("method", "tracks", "mean_track_length", "histogram"), rows)


def evaluate(dataset_dir, match_dir, metric: str, cfg: ExperimentConfig) -> str:
    if metric not in METRICS:
        raise ConfigError(f"metric: unknown {metric!r} (choose from {', '.join(METRICS)})")
    m = Manifest.load(dataset_dir)
    pm = load_pair_matches(m, match_dir)
    fn = {"precision": eval_precision, "pose-auc": eval_pose, "homography-auc": eval_homography, "tracks": eval_tracks}[metric]
    return fn(m, pm, cfg)
