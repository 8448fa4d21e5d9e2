"""Two-view geometry primitives.

Points are handled either as :class:`HomogeneousPoint2` values or, in the
vectorised helpers, as ``(N, 2)`` pixel arrays. All functions are pure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from geomatch.errors import (
    CheiralityTieError,
    DegenerateConfigurationError,
    DegenerateDenominatorError,
    InsufficientMatchesError,
    NoConsensusError,
    ZeroBaselineError,
)

DEGENERATE_EPS = 1e-30
SINGULAR_RATIO = 1e-10


@dataclass(frozen=True)
class HomogeneousPoint2:
    x: float
    y: float
    w: float = 1.0

    def normalized(self) -> "HomogeneousPoint2":
        if self.w == 0:
            raise ValueError("point at infinity cannot be normalized")
        return HomogeneousPoint2(self.x / self.w, self.y / self.w, 1.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w], dtype=np.float64)


def _as_h(p) -> np.ndarray:
    if isinstance(p, HomogeneousPoint2):
        return p.as_array()
    v = np.asarray(p, dtype=np.float64).ravel()
    if v.size == 2:
        return np.array([v[0], v[1], 1.0])
    if v.size != 3:
        raise ValueError(f"expected a 2- or 3-vector, got shape {np.shape(p)}")
    return v


def _canonical(m: np.ndarray) -> np.ndarray:
    """Frobenius norm 1, largest-magnitude entry positive."""
    m = np.asarray(m, dtype=np.float64)
    n = np.linalg.norm(m)
    if n == 0:
        raise DegenerateConfigurationError("zero matrix has no canonical scaling")
    m = m / n
    if m.flat[np.argmax(np.abs(m))] < 0:
        m = -m
    return m


@dataclass(frozen=True)
class FundamentalMatrix:
    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"fundamental matrix must be 3x3, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def canonical(cls, m) -> "FundamentalMatrix":
        return cls(_canonical(m))

    @property
    def T(self) -> "FundamentalMatrix":
        return FundamentalMatrix(self.m.T)

    def rank2(self) -> "FundamentalMatrix":
        u, s, vt = np.linalg.svd(self.m)
        s[2] = 0.0
        return FundamentalMatrix.canonical(u @ np.diag(s) @ vt)


@dataclass(frozen=True)
class EssentialMatrix:
    m: np.ndarray

    @classmethod
    def from_fundamental(cls, f: FundamentalMatrix, ka: "CameraIntrinsics", kb: "CameraIntrinsics") -> "EssentialMatrix":
        return cls(kb.matrix.T @ f.m @ ka.matrix).projected()

    def projected(self) -> "EssentialMatrix":
        """Nearest matrix with singular values (s, s, 0)."""
        u, s, vt = np.linalg.svd(self.m)
        sigma = 0.5 * (s[0] + s[1])
        return EssentialMatrix(u @ np.diag([sigma, sigma, 0.0]) @ vt)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        return np.array(
            [[1.0 / self.fx, 0.0, -self.cx / self.fx], [0.0, 1.0 / self.fy, -self.cy / self.fy], [0.0, 0.0, 1.0]]
        )

    def normalize(self, pts) -> np.ndarray:
        """Pixel ``(N, 2)`` array to normalized camera coordinates."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return np.column_stack([(pts[:, 0] - self.cx) / self.fx, (pts[:, 1] - self.cy) / self.fy])

    def project(self, cam_pts) -> np.ndarray:
        cam_pts = np.asarray(cam_pts, dtype=np.float64).reshape(-1, 3)
        z = cam_pts[:, 2]
        return np.column_stack([self.fx * cam_pts[:, 0] / z + self.cx, self.fy * cam_pts[:, 1] / z + self.cy])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


IDENTITY_INTRINSICS = CameraIntrinsics(1.0, 1.0, 0.0, 0.0)


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform: ``x_cam = rotation @ x_world + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def transform(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        return pts @ self.rotation.T + self.translation

    def relative_to(self, other: "CameraPose") -> "CameraPose":
        """Pose of ``self`` expressed in the camera frame of ``other``."""
        r = self.rotation @ other.rotation.T
        return CameraPose(r, self.translation - r @ other.translation)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}


@dataclass(frozen=True)
class PointMatch:
    a: HomogeneousPoint2
    b: HomogeneousPoint2
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


def make_matches(pa, pb, confidence=None) -> list[PointMatch]:
    pa = np.asarray(pa, dtype=np.float64).reshape(-1, 2)
    pb = np.asarray(pb, dtype=np.float64).reshape(-1, 2)
    if confidence is None:
        confidence = np.ones(len(pa))
    return [
        PointMatch(HomogeneousPoint2(float(a[0]), float(a[1])), HomogeneousPoint2(float(b[0]), float(b[1])), float(c))
        for a, b, c in zip(pa, pb, confidence)
    ]


def match_arrays(matches: Sequence[PointMatch]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split matches into normalized ``(N, 2)`` point arrays and confidences."""
    if len(matches) == 0:
        return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0)
    a = np.array([m.a.normalized().as_array()[:2] for m in matches])
    b = np.array([m.b.normalized().as_array()[:2] for m in matches])
    c = np.array([m.confidence for m in matches], dtype=np.float64)
    return a, b, c


def skew(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(3)
    return np.array([[0.0, -t[2], t[1]], [t[2], 0.0, -t[0]], [-t[1], t[0], 0.0]])


# --------------------------------------------------------------------------
# errors


def _line_terms(f: FundamentalMatrix, a, b):
    ah = _as_h(a)
    bh = _as_h(b)
    # exact rational evaluation: the only rounding is the final conversion, and
    # f(a, b) and f^T(b, a) produce the same rational value
    m = [[Fraction(v) for v in row] for row in f.m.tolist()]
    a3, b3 = [Fraction(v) for v in ah.tolist()], [Fraction(v) for v in bh.tolist()]
    fa = [sum(m[k][j] * a3[j] for j in range(3)) for k in range(2)]
    ftb = [sum(m[i][k] * b3[i] for i in range(3)) for k in range(2)]
    r = sum(b3[i] * m[i][j] * a3[j] for i in range(3) for j in range(3))
    return r, fa[0] * fa[0] + fa[1] * fa[1], ftb[0] * ftb[0] + ftb[1] * ftb[1]


def sampson_distance(f: FundamentalMatrix, a, b) -> float:
    """First-order geometric error of the correspondence ``a <-> b`` under ``f``.

    ``(b^T F a)^2 / ((Fa)_1^2 + (Fa)_2^2 + (F^T b)_1^2 + (F^T b)_2^2)``
    """
    r, la, lb = _line_terms(f, a, b)
    den = la + lb
    if den < DEGENERATE_EPS:
        raise DegenerateDenominatorError("all epipolar line coefficients vanish")
    return float(r * r / den)


def symmetric_epipolar_error(f: FundamentalMatrix, a, b) -> float:
    """Sum of squared distances of each point to its partner's epipolar line."""
    r, la, lb = _line_terms(f, a, b)
    if la < DEGENERATE_EPS or lb < DEGENERATE_EPS:
        raise DegenerateDenominatorError("epipolar line has vanishing direction")
    return float(r * r * (1 / la + 1 / lb))


def _paired_terms(F, pa, pb):
    F = np.asarray(getattr(F, "m", F), dtype=np.float64)
    pa = np.asarray(pa, dtype=np.float64).reshape(-1, 2)
    pb = np.asarray(pb, dtype=np.float64).reshape(-1, 2)
    ah = np.column_stack([pa, np.ones(len(pa))])
    bh = np.column_stack([pb, np.ones(len(pb))])
    fa = ah @ F.T
    ftb = bh @ F
    r = np.einsum("ij,ij->i", bh, fa)
    return r, fa[:, 0] ** 2 + fa[:, 1] ** 2, ftb[:, 0] ** 2 + ftb[:, 1] ** 2


def sampson_distances(F, pa, pb) -> np.ndarray:
    """Row-paired Sampson distances; degenerate rows are +inf."""
    r, la, lb = _paired_terms(F, pa, pb)
    den = la + lb
    out = np.full(len(r), np.inf)
    ok = den >= DEGENERATE_EPS
    out[ok] = r[ok] ** 2 / den[ok]
    return out


def symmetric_epipolar_errors(F, pa, pb) -> np.ndarray:
    """Row-paired symmetric epipolar errors; degenerate rows are +inf."""
    r, la, lb = _paired_terms(F, pa, pb)
    out = np.full(len(r), np.inf)
    ok = (la >= DEGENERATE_EPS) & (lb >= DEGENERATE_EPS)
    out[ok] = r[ok] ** 2 * (1.0 / la[ok] + 1.0 / lb[ok])
    return out


# --------------------------------------------------------------------------
# solvers


def hartley_normalization(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin and mean distance to sqrt(2)."""
    centroid = pts.mean(axis=0)
    mean_dist = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    if mean_dist < 1e-300:
        raise DegenerateConfigurationError("all points coincide")
    s = math.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _apply(T: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return pts @ T[:2, :2].T + T[:2, 2]


def _null_vector(A: np.ndarray) -> np.ndarray:
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    s = np.concatenate([s, np.zeros(A.shape[1] - len(s))])
    if s[0] == 0 or s[-2] / s[0] < SINGULAR_RATIO:
        raise DegenerateConfigurationError("design matrix has a multi-dimensional null space")
    return vt[-1]


def eight_point_arrays(pa, pb) -> FundamentalMatrix:
    """Normalized 8-point estimate from paired ``(N, 2)`` pixel arrays."""
    pa = np.asarray(pa, dtype=np.float64).reshape(-1, 2)
    pb = np.asarray(pb, dtype=np.float64).reshape(-1, 2)
    if len(pa) < 8:
        raise InsufficientMatchesError(f"need at least 8 matches, got {len(pa)}")
    ta = hartley_normalization(pa)
    tb = hartley_normalization(pb)
    a = _apply(ta, pa)
    b = _apply(tb, pb)
    ones = np.ones(len(a))
    A = np.column_stack(
        [b[:, 0] * a[:, 0], b[:, 0] * a[:, 1], b[:, 0], b[:, 1] * a[:, 0], b[:, 1] * a[:, 1], b[:, 1], a[:, 0], a[:, 1], ones]
    )
    fn = _null_vector(A).reshape(3, 3)
    u, s, vt = np.linalg.svd(fn)
    fn = u @ np.diag([s[0], s[1], 0.0]) @ vt
    return FundamentalMatrix.canonical(tb.T @ fn @ ta)


def normalized_eight_point(matches: Sequence[PointMatch]) -> FundamentalMatrix:
    if len(matches) < 8:
        raise InsufficientMatchesError(f"need at least 8 matches, got {len(matches)}")
    pa, pb, _ = match_arrays(matches)
    return eight_point_arrays(pa, pb)


def essential_from_relative(rel: CameraPose) -> np.ndarray:
    return skew(rel.translation) @ rel.rotation


def fundamental_from_poses(
    pose_a: CameraPose, pose_b: CameraPose, ka: CameraIntrinsics, kb: CameraIntrinsics
) -> FundamentalMatrix:
    rel = pose_b.relative_to(pose_a)
    if np.linalg.norm(rel.translation) < 1e-12:
        raise ZeroBaselineError("fundamental matrix is undefined for a pure rotation")
    return FundamentalMatrix.canonical(kb.inverse.T @ essential_from_relative(rel) @ ka.inverse)


@dataclass(frozen=True)
class RansacConfig:
    threshold: float = 1.0
    max_iters: int = 2000
    seed: int = 0
    confidence: float = 0.999

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _adaptive_iters(n_inliers: int, n: int, sample: int, confidence: float, cap: int) -> int:
    w = n_inliers / n
    if w >= 1.0:
        return 0
    denom = math.log1p(-(w**sample)) if w > 0 else 0.0
    if denom == 0.0:
        return cap
    return min(cap, int(math.ceil(math.log(1.0 - confidence) / denom)))


def _ransac(pa, pb, sample, fit, residual, threshold, max_iters, seed, confidence):
    n = len(pa)
    rng = _rng(seed)
    best_mask = None
    best_count = -1
    needed = max_iters
    it = 0
    while it < min(needed, max_iters):
        it += 1
        idx = rng.choice(n, size=sample, replace=False)
        try:
            model = fit(pa[idx], pb[idx])
        except (DegenerateConfigurationError, np.linalg.LinAlgError):
            continue
        mask = residual(model, pa, pb) < threshold
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
            needed = _adaptive_iters(count, n, sample, confidence, max_iters)
    return best_mask, best_count


def ransac_fundamental(
    matches: Sequence[PointMatch], threshold: float, max_iters: int = 2000, seed: int = 0, confidence: float = 0.999
) -> tuple[FundamentalMatrix, np.ndarray]:
    """Robust F with Sampson-distance inlier test; returns ``(F, inlier_mask)``."""
    if len(matches) < 8:
        raise InsufficientMatchesError(f"need at least 8 matches, got {len(matches)}")
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    pa, pb, _ = match_arrays(matches)
    mask, count = _ransac(pa, pb, 8, eight_point_arrays, sampson_distances, threshold, max_iters, seed, confidence)
    if mask is None or count < 8:
        raise NoConsensusError(f"best consensus has {max(count, 0)} inliers")
    f = eight_point_arrays(pa[mask], pb[mask])
    refit_mask = sampson_distances(f, pa, pb) < threshold
    if refit_mask.sum() >= count:
        mask = refit_mask
    return f, mask


def triangulate(p1: np.ndarray, p2: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Linear triangulation of normalized points with 3x4 projection matrices."""
    out = np.empty((len(x1), 3))
    for k, (a, b) in enumerate(zip(x1, x2)):
        A = np.stack([a[0] * p1[2] - p1[0], a[1] * p1[2] - p1[1], b[0] * p2[2] - p2[0], b[1] * p2[2] - p2[1]])
        _, _, vt = np.linalg.svd(A)
        X = vt[-1]
        out[k] = X[:3] / X[3] if X[3] != 0 else np.full(3, np.nan)
    return out


def decompose_essential(e: EssentialMatrix) -> list[tuple[np.ndarray, np.ndarray]]:
    u, _, vt = np.linalg.svd(e.m)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r1 = u @ W @ vt
    r2 = u @ W.T @ vt
    t = u[:, 2]
    return [(r1, t), (r1, -t), (r2, t), (r2, -t)]


def recover_pose(
    f: FundamentalMatrix, ka: CameraIntrinsics, kb: CameraIntrinsics, matches: Sequence[PointMatch]
) -> CameraPose:
    """Relative pose of B w.r.t. A (unit translation) chosen by cheirality."""
    e = EssentialMatrix.from_fundamental(f, ka, kb)
    pa, pb, _ = match_arrays(matches)
    xa = ka.normalize(pa)
    xb = kb.normalize(pb)
    p1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    counts = []
    candidates = decompose_essential(e)
    for r, t in candidates:
        p2 = np.hstack([r, t[:, None]])
        X = triangulate(p1, p2, xa, xb)
        za = X[:, 2]
        zb = (X @ r.T + t)[:, 2]
        counts.append(int(np.sum((za > 0) & (zb > 0))))
    order = np.argsort(counts, kind="stable")[::-1]
    if counts[order[0]] == counts[order[1]]:
        raise CheiralityTieError(f"cheirality counts tie: {counts}")
    r, t = candidates[order[0]]
    # re-orthonormalise against round-off from the SVD
    u, _, vt = np.linalg.svd(r)
    r = u @ vt
    return CameraPose(r, t / np.linalg.norm(t))


# --------------------------------------------------------------------------
# homographies


def _dlt_arrays(pa, pb) -> np.ndarray:
    pa = np.asarray(pa, dtype=np.float64).reshape(-1, 2)
    pb = np.asarray(pb, dtype=np.float64).reshape(-1, 2)
    if len(pa) < 4:
        raise InsufficientMatchesError(f"need at least 4 matches, got {len(pa)}")
    ta = hartley_normalization(pa)
    tb = hartley_normalization(pb)
    a = _apply(ta, pa)
    b = _apply(tb, pb)
    rows = []
    for (x, y), (u, v) in zip(a, b):
        rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u])
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v])
    hn = _null_vector(np.asarray(rows)).reshape(3, 3)
    h = np.linalg.inv(tb) @ hn @ ta
    return _canonical(h)


def homography_dlt(matches: Sequence[PointMatch]) -> np.ndarray:
    """Normalized DLT homography mapping A points to B points (Frobenius-normalized)."""
    if len(matches) < 4:
        raise InsufficientMatchesError(f"need at least 4 matches, got {len(matches)}")
    pa, pb, _ = match_arrays(matches)
    return _dlt_arrays(pa, pb)


def apply_homography(h: np.ndarray, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    q = pts @ h[:, :2].T + h[:, 2]
    return q[:, :2] / q[:, 2:3]


def transfer_errors(h: np.ndarray, pa, pb) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.linalg.norm(apply_homography(h, pa) - np.asarray(pb).reshape(-1, 2), axis=1)
    return np.where(np.isfinite(d), d, np.inf)


def ransac_homography(
    matches: Sequence[PointMatch], threshold: float, max_iters: int = 2000, seed: int = 0, confidence: float = 0.999
) -> tuple[np.ndarray, np.ndarray]:
    """Robust homography with a forward transfer-error inlier test."""
    if len(matches) < 4:
        raise InsufficientMatchesError(f"need at least 4 matches, got {len(matches)}")
    pa, pb, _ = match_arrays(matches)
    mask, count = _ransac(pa, pb, 4, _dlt_arrays, transfer_errors, threshold, max_iters, seed, confidence)
    if mask is None or count < 4:
        raise NoConsensusError(f"best consensus has {max(count, 0)} inliers")
    h = _dlt_arrays(pa[mask], pb[mask])
    refit_mask = transfer_errors(h, pa, pb) < threshold
    if refit_mask.sum() >= count:
        mask = refit_mask
    return h, mask


def plane_homography(
    pose_a: CameraPose, pose_b: CameraPose, ka: CameraIntrinsics, kb: CameraIntrinsics, normal, offset: float
) -> np.ndarray:
    """Homography induced by the world plane ``normal . X = offset`` (A pixels -> B pixels)."""
    n = np.asarray(normal, dtype=np.float64).reshape(3)
    rel = pose_b.relative_to(pose_a)
    # plane in camera-A coordinates: n_a . X_a = d_a
    n_a = pose_a.rotation @ n
    d_a = offset + n_a @ pose_a.translation
    h = kb.matrix @ (rel.rotation + np.outer(rel.translation, n_a) / d_a) @ ka.inverse
    return _canonical(h)


def rotation_about(axis: Iterable[float], degrees: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    k = np.asarray(list(axis), dtype=np.float64)
    k = k / np.linalg.norm(k)
    th = math.radians(degrees)
    K = skew(k)
    return np.eye(3) + math.sin(th) * K + (1 - math.cos(th)) * (K @ K)
