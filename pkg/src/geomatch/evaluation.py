"""Matching precision, pose and homography AUC, and multi-view track statistics."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from geomatch.epipolar import (
    CameraIntrinsics,
    CameraPose,
    FundamentalMatrix,
    PointMatch,
    RansacConfig,
    apply_homography,
    match_arrays,
    ransac_fundamental,
    ransac_homography,
    recover_pose,
    symmetric_epipolar_errors,
)
from geomatch.errors import InsufficientMatchesError

PRECISION_THRESHOLD = 1e-4
POSE_THRESHOLDS = (5.0, 10.0, 20.0)
HOMOGRAPHY_THRESHOLDS = (3.0, 5.0, 10.0)


def matching_precision(
    matches: Sequence[PointMatch],
    gt_f: FundamentalMatrix,
    ka: CameraIntrinsics,
    kb: CameraIntrinsics,
    threshold: float = PRECISION_THRESHOLD,
) -> float:
    """Fraction of matches whose symmetric epipolar error, in normalized coordinates, is below ``threshold``."""
    if len(matches) == 0:
        return 0.0
    pa, pb, _ = match_arrays(matches)
    return precision_arrays(pa, pb, gt_f, ka, kb, threshold)


def precision_arrays(pa, pb, gt_f: FundamentalMatrix, ka, kb, threshold: float = PRECISION_THRESHOLD) -> float:
    if len(pa) == 0:
        return 0.0
    e_norm = kb.matrix.T @ gt_f.m @ ka.matrix
    err = symmetric_epipolar_errors(e_norm, ka.normalize(pa), kb.normalize(pb))
    return float(np.mean(err < threshold))


@dataclass(frozen=True)
class PoseErrorSample:
    rotation_deg: float
    translation_deg: float

    @property
    def combined(self) -> float:
        return max(self.rotation_deg, self.translation_deg)


def rotation_angle_deg(r: np.ndarray) -> float:
    """Rotation angle of ``r`` via atan2, accurate near zero."""
    v = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    c = 0.5 * (np.trace(r) - 1.0)
    return math.degrees(math.atan2(np.linalg.norm(v), c))


def angle_between_deg(u: np.ndarray, v: np.ndarray) -> float:
    return math.degrees(math.atan2(np.linalg.norm(np.cross(u, v)), float(u @ v)))


def pose_error(estimated: CameraPose, ground_truth: CameraPose) -> PoseErrorSample:
    te = estimated.translation
    tg = ground_truth.translation
    if np.linalg.norm(te) == 0 or np.linalg.norm(tg) == 0:
        raise ValueError("translation direction undefined for a zero vector")
    r_err = rotation_angle_deg(estimated.rotation @ ground_truth.rotation.T)
    return PoseErrorSample(r_err, angle_between_deg(te, tg))


def auc(errors: Sequence[float], thresholds: Sequence[float]) -> list[float]:
    """Normalized area under the recall-vs-error curve up to each threshold.

    The empirical CDF is a step function, so the integral is exact:
    ``(1/t) * integral_0^t recall(x) dx = mean(max(0, t - e) / t)``.
    """
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ValueError("auc of an empty error list is undefined")
    th = [float(t) for t in thresholds]
    if any(t <= 0 for t in th) or any(b <= a for a, b in zip(th, th[1:])):
        raise ValueError("thresholds must be positive and ascending")
    e = np.where(np.isnan(e), np.inf, e)
    return [float(np.mean(np.clip(t - e, 0.0, None)) / t) for t in th]


def estimate_pose_from_matches(
    matches: Sequence[PointMatch], ka: CameraIntrinsics, kb: CameraIntrinsics, cfg: RansacConfig = RansacConfig()
) -> CameraPose:
    """RANSAC fundamental matrix followed by cheirality-resolved pose recovery."""
    if len(matches) < 8:
        raise InsufficientMatchesError(f"need at least 8 matches, got {len(matches)}")
    f, mask = ransac_fundamental(matches, cfg.threshold, cfg.max_iters, cfg.seed, cfg.confidence)
    inliers = [m for m, keep in zip(matches, mask) if keep]
    return recover_pose(f, ka, kb, inliers)


def image_corners(width: float, height: float) -> np.ndarray:
    return np.array([[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]])


def homography_corner_error(h_est: np.ndarray, h_gt: np.ndarray, corners: np.ndarray) -> float:
    """Mean distance between the corners mapped by the two homographies."""
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.linalg.norm(apply_homography(h_est, corners) - apply_homography(h_gt, corners), axis=1)
    err = float(np.mean(d))
    return err if math.isfinite(err) else math.inf


def homography_auc(
    matches: Sequence[PointMatch],
    gt_h: np.ndarray,
    corners: np.ndarray,
    thresholds: Sequence[float] = HOMOGRAPHY_THRESHOLDS,
    cfg: RansacConfig = RansacConfig(threshold=3.0),
) -> list[float]:
    if len(matches) < 4:
        raise InsufficientMatchesError(f"need at least 4 matches, got {len(matches)}")
    h, _ = ransac_homography(matches, cfg.threshold, cfg.max_iters, cfg.seed, cfg.confidence)
    return auc([homography_corner_error(h, gt_h, corners)], thresholds)


# --------------------------------------------------------------------------
# tracks

Node = tuple  # (view id, qx, qy)


@dataclass
class TrackGraph:
    """Partition of quantized keypoints into tracks (connected components)."""

    tracks: list[frozenset] = field(default_factory=list)

    @property
    def lengths(self) -> list[int]:
        return [len({n[0] for n in t}) for t in self.tracks]

    def partition(self) -> frozenset:
        return frozenset(self.tracks)


def _quantize(view, pts: np.ndarray, q: float) -> list[Node]:
    cells = np.floor(np.asarray(pts) / q).astype(np.int64)
    return [(view, int(x), int(y)) for x, y in cells]


def build_tracks(pairwise: Mapping[tuple, Sequence[PointMatch]], quantize_px: float) -> TrackGraph:
    """Union matched keypoints across all pairs; each component is one track."""
    if not quantize_px > 0:
        raise ValueError("quantize_px must be > 0")
    edges = []
    for (vi, vj), matches in pairwise.items():
        if not len(matches):
            continue
        pa, pb, _ = match_arrays(matches)
        edges.extend(zip(_quantize(vi, pa, quantize_px), _quantize(vj, pb, quantize_px)))
    if not edges:
        return TrackGraph()
    nodes = sorted({n for e in edges for n in e}, key=repr)
    index = {n: k for k, n in enumerate(nodes)}
    src = np.array([index[a] for a, _ in edges])
    dst = np.array([index[b] for _, b in edges])
    graph = coo_matrix((np.ones(len(src)), (src, dst)), shape=(len(nodes), len(nodes)))
    _, labels = connected_components(graph, directed=False)
    groups: dict[int, list] = {}
    for n, lab in zip(nodes, labels):
        groups.setdefault(int(lab), []).append(n)
    tracks = [frozenset(g) for g in groups.values()]
    tracks = [t for t in tracks if len({n[0] for n in t}) >= 2]
    tracks.sort(key=lambda t: sorted(map(repr, t)))
    return TrackGraph(tracks)


def track_stats(g: TrackGraph) -> tuple[float, dict[int, int]]:
    lengths = g.lengths
    if not lengths:
        return 0.0, {}
    return float(np.mean(lengths)), dict(sorted(Counter(lengths).items()))
