"""Sampson-constrained iterative reweighting of a dense confidence map.

The loop starts from the dual-softmax confidence of two coarse feature grids
and a fundamental matrix fitted to anchor matches (or, without enough
anchors, to the most confident half of the appearance-only matches). Each
iteration multiplies the map by a geometric confidence derived from the
Sampson distance of every cell pair, min-max normalises it and re-selects
mutual nearest neighbours.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from geomatch import kernels
from geomatch.dense import (
    DEFAULT_TEMPERATURE,
    CoarseMatchSet,
    FeatureGrid,
    cells_to_pixels,
    dual_softmax,
    mnn_select,
    similarity,
)
from geomatch.epipolar import (
    FundamentalMatrix,
    PointMatch,
    eight_point_arrays,
    make_matches,
    match_arrays,
    sampson_distances,
)
from geomatch.errors import (
    DegenerateConfigurationError,
    InitializationError,
    InsufficientMatchesError,
    ShapeMismatchError,
)

log = logging.getLogger(__name__)

AnchorMatchSet = Sequence[PointMatch]


@dataclass(frozen=True)
class OptimizerConfig:
    tau: float = 10.0
    weight: float = 1.2
    iterations: int = 10
    theta_iter: float = 0.01
    theta_final: float = 0.2
    min_anchor_count: int = 10
    min_anchor_confidence: float = 0.5
    refit_each_iteration: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if not self.weight > 0:
            raise ValueError("weight must be > 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0 <= self.theta_iter <= self.theta_final <= 1:
            raise ValueError("require 0 <= theta_iter <= theta_final <= 1")


@dataclass
class IterationRecord:
    iteration: int
    fundamental: np.ndarray
    match_count: int
    mean_sampson: float
    map_min: float
    map_max: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fundamental"] = self.fundamental.tolist()
        d["mean_sampson"] = None if math.isnan(self.mean_sampson) else self.mean_sampson
        return d


@dataclass
class OptimizationTrace:
    init_source: str = ""
    records: list[IterationRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict:
        return {"init_source": self.init_source, "records": [r.to_dict() for r in self.records]}


def matches_to_pixel(m: CoarseMatchSet, grids: tuple[FeatureGrid, FeatureGrid]) -> list[PointMatch]:
    pa = cells_to_pixels(m.rows, grids[0])
    pb = cells_to_pixels(m.cols, grids[1])
    return make_matches(pa, pb, np.clip(m.confidence, 0.0, 1.0))


def _good_anchors(anchors: AnchorMatchSet, cfg: OptimizerConfig) -> list[PointMatch]:
    return [m for m in anchors if m.confidence > cfg.min_anchor_confidence]


def initialize_fundamental(
    anchors: AnchorMatchSet,
    p0: np.ndarray,
    grids: tuple[FeatureGrid, FeatureGrid],
    cfg: OptimizerConfig,
    trace: OptimizationTrace | None = None,
) -> FundamentalMatrix:
    """Fit the starting F from confident anchors, else from the top half of MNN(p0)."""
    if np.size(p0) == 0:
        raise ValueError("confidence map is empty")
    good = _good_anchors(anchors, cfg)
    if len(good) >= cfg.min_anchor_count:
        pa, pb, _ = match_arrays(good)
        try:
            f = eight_point_arrays(pa, pb)
        except DegenerateConfigurationError as exc:
            raise InitializationError(f"anchor fit failed: {exc}") from exc
        if trace is not None:
            trace.init_source = "anchors"
        return f

    sel = mnn_select(p0, cfg.theta_iter)
    order = np.argsort(-sel.confidence, kind="stable")
    top = sel.take(order[: (len(sel) + 1) // 2])
    if len(top) < 8:
        raise InitializationError(f"fallback initialisation has {len(top)} matches, need 8")
    try:
        f = eight_point_arrays(cells_to_pixels(top.rows, grids[0]), cells_to_pixels(top.cols, grids[1]))
    except (DegenerateConfigurationError, InsufficientMatchesError) as exc:
        raise InitializationError(f"fallback fit failed: {exc}") from exc
    if trace is not None:
        trace.init_source = "top-half"
    return f


def geometric_confidence(
    f: FundamentalMatrix, grids: tuple[FeatureGrid, FeatureGrid], cfg: OptimizerConfig
) -> np.ndarray:
    """Dense ``sigmoid(relu(tau - d))`` over all cell-centre pairs."""
    return kernels.geometric_confidence_dense(f.m, grids[0].centers(), grids[1].centers(), cfg.tau)


def update_confidence(p_prev: np.ndarray, p_d: np.ndarray, w: float) -> np.ndarray:
    if np.shape(p_prev) != np.shape(p_d):
        raise ShapeMismatchError(f"shapes differ: {np.shape(p_prev)} vs {np.shape(p_d)}")
    return kernels.scale_minmax(p_prev, p_d, w)


def _record(k: int, f: FundamentalMatrix, sel: CoarseMatchSet, p: np.ndarray, grids) -> IterationRecord:
    if len(sel):
        d = sampson_distances(f, cells_to_pixels(sel.rows, grids[0]), cells_to_pixels(sel.cols, grids[1]))
        mean_d = float(np.mean(d))
    else:
        mean_d = float("nan")
    return IterationRecord(k, f.m.copy(), len(sel), mean_d, float(p.min()), float(p.max()))


def _refit(f, sel, anchor_pa, anchor_pb, grids, cfg, k):
    """Re-estimate F from the selected matches already consistent with F (d < tau).

    Confident anchors, when they initialised F, stay in the fit.
    """
    pa = cells_to_pixels(sel.rows, grids[0])
    pb = cells_to_pixels(sel.cols, grids[1])
    keep = sampson_distances(f, pa, pb) < cfg.tau
    pa = np.concatenate([pa[keep], anchor_pa])
    pb = np.concatenate([pb[keep], anchor_pb])
    if len(pa) < 8:
        return f
    try:
        return eight_point_arrays(pa, pb)
    except DegenerateConfigurationError:
        log.debug("refit at iteration %d degenerate; keeping previous F", k)
        return f


def optimize(
    grids: tuple[FeatureGrid, FeatureGrid],
    anchors: AnchorMatchSet,
    cfg: OptimizerConfig,
    temperature: float = DEFAULT_TEMPERATURE,
    p0: np.ndarray | None = None,
) -> tuple[CoarseMatchSet, FundamentalMatrix, OptimizationTrace]:
    """Run the full geometry-aware loop; returns final matches, F and a trace.

    ``p0`` may carry a precomputed dual-softmax map of the two grids.
    """
    fa, fb = grids
    if fa.n_cells == 0 or fb.n_cells == 0:
        raise ValueError("feature grids must be non-empty")
    trace = OptimizationTrace()
    p = dual_softmax(similarity(fa, fb), temperature) if p0 is None else p0
    if p.shape != (fa.n_cells, fb.n_cells):
        raise ShapeMismatchError(f"initial map {p.shape} does not match grids ({fa.n_cells}, {fb.n_cells})")
    f = initialize_fundamental(anchors, p, grids, cfg, trace)
    trace.records.append(_record(0, f, mnn_select(p, cfg.theta_iter), p, grids))
    if trace.init_source == "anchors":
        anchor_pa, anchor_pb, _ = match_arrays(_good_anchors(anchors, cfg))
    else:
        anchor_pa = anchor_pb = np.zeros((0, 2))

    for k in range(1, cfg.iterations + 1):
        p_d = geometric_confidence(f, grids, cfg)
        p = update_confidence(p, p_d, cfg.weight)
        sel = mnn_select(p, cfg.theta_iter)
        if cfg.refit_each_iteration:
            f = _refit(f, sel, anchor_pa, anchor_pb, grids, cfg, k)
        trace.records.append(_record(k, f, sel, p, grids))

    return mnn_select(p, cfg.theta_final), f, trace
