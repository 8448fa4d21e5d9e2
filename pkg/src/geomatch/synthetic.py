"""Deterministic synthetic two-view data.

The scene is the inside corner of a box (three axis-aligned faces at
``-half_extent``) with points scattered on the faces. Each point carries a
descriptor group; points sharing a group look identical to the coarse matcher,
which is how appearance ambiguity (repeated texture) is injected. Cameras sit
on a sphere around the origin, parameterised by distance and two angles.

Coarse grids hold one point descriptor per occupied cell. Fine grids sample a
smooth random texture painted on the faces, so that correlation refinement has
a real sub-cell signal to lock onto.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from geomatch.dense import CoarseMatchSet, FeatureGrid
from geomatch.epipolar import CameraIntrinsics, CameraPose, PointMatch, make_matches

DEFAULT_IMAGE_SIZE = (832, 624)
SWEEP_VARIABLES = ("distance", "alpha", "beta")


@dataclass(frozen=True)
class Plane:
    """Bounded face ``normal . X = offset``; the other two coordinates lie in ``[-extent, extent]``."""

    axis: int
    offset: float
    extent: float

    @property
    def normal(self) -> np.ndarray:
        n = np.zeros(3)
        n[self.axis] = 1.0
        return n


@dataclass(frozen=True, eq=False)
class TextureField:
    """Smooth vector-valued random texture built from random Fourier features."""

    freqs: np.ndarray
    phases: np.ndarray
    mix: np.ndarray

    @classmethod
    def random(cls, rng: np.random.Generator, dim: int, n_features: int = 128, length_scale: float = 0.1):
        return cls(
            rng.normal(scale=1.0 / length_scale, size=(n_features, 3)),
            rng.uniform(0, 2 * np.pi, size=n_features),
            rng.normal(size=(dim, n_features)),
        )

    @property
    def dim(self) -> int:
        return self.mix.shape[0]

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return np.cos(pts @ self.freqs.T + self.phases) @ self.mix.T


@dataclass(frozen=True, eq=False)
class Scene:
    points: np.ndarray
    group_ids: np.ndarray
    descriptor_table: np.ndarray
    surfaces: tuple[Plane, ...]
    texture: TextureField
    seed: int
    planar_patch: Plane | None = None

    @property
    def n_points(self) -> int:
        return len(self.points)

    def descriptors(self) -> np.ndarray:
        return self.descriptor_table[self.group_ids]


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _face_points(rng, plane: Plane, n: int) -> np.ndarray:
    uv = rng.uniform(-plane.extent, plane.extent, size=(n, 2))
    pts = np.empty((n, 3))
    others = [k for k in range(3) if k != plane.axis]
    pts[:, plane.axis] = plane.offset
    pts[:, others[0]] = uv[:, 0]
    pts[:, others[1]] = uv[:, 1]
    return pts


def build_scene(
    n_points: int,
    ambiguity_fraction: float,
    descriptor_dim: int,
    seed: int,
    *,
    half_extent: float = 5.0,
    planar: bool = False,
    fine_dim: int = 16,
    texture_scale: float = 0.3,
) -> Scene:
    """Random points on the box corner (or just its back face when ``planar``).

    ``ceil(ambiguity_fraction * n_points)`` points are paired into shared
    descriptor groups of two (three for an odd remainder).
    """
    if not 0.0 <= ambiguity_fraction < 1.0:
        raise ValueError(f"ambiguity_fraction must lie in [0, 1), got {ambiguity_fraction}")
    if n_points < 8:
        raise ValueError("n_points must be >= 8")
    rng = np.random.default_rng(seed)
    w = half_extent
    back = Plane(2, -w, w)
    surfaces = (back,) if planar else (back, Plane(1, -w, w), Plane(0, -w, w))
    counts = np.full(len(surfaces), n_points // len(surfaces))
    counts[: n_points % len(surfaces)] += 1
    points = np.concatenate([_face_points(rng, s, int(c)) for s, c in zip(surfaces, counts)])

    n_shared = min(n_points, math.ceil(ambiguity_fraction * n_points)) if ambiguity_fraction > 0 else 0
    if n_shared == 1:
        n_shared = 2
    shared = rng.permutation(n_points)[:n_shared]
    group_ids = np.full(n_points, -1, dtype=np.int64)
    n_groups = 0
    n_pairs = n_shared // 2
    for g in range(n_pairs):
        members = shared[2 * g : 2 * g + 2]
        if g == n_pairs - 1 and n_shared % 2:
            members = shared[2 * g :]
        group_ids[members] = n_groups
        n_groups += 1
    unique = np.flatnonzero(group_ids < 0)
    group_ids[unique] = n_groups + np.arange(len(unique))
    n_groups += len(unique)

    table = _unit_rows(rng.normal(size=(n_groups, descriptor_dim)))
    texture = TextureField.random(rng, fine_dim, length_scale=texture_scale)
    return Scene(points, group_ids, table, surfaces, texture, seed, back if planar else None)


@dataclass(frozen=True)
class ViewpointParams:
    distance: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError("distance must be > 0")
        if abs(self.alpha) > 90:
            raise ValueError("|alpha| must be below 90 degrees")

    def with_offset(self, variable: str, offset: float) -> "ViewpointParams":
        if variable not in SWEEP_VARIABLES:
            raise ValueError(f"unknown sweep variable {variable!r}")
        values = {"distance": self.distance, "alpha": self.alpha, "beta": self.beta}
        values[variable] += offset
        return ViewpointParams(**values)

    def to_dict(self) -> dict:
        return {"distance": self.distance, "alpha": self.alpha, "beta": self.beta}


def camera_center(v: ViewpointParams) -> np.ndarray:
    a = math.radians(v.alpha)
    b = math.radians(v.beta)
    return v.distance * np.array([math.sin(b) * math.cos(a), math.sin(a), math.cos(b) * math.cos(a)])


def place_camera(v: ViewpointParams) -> CameraPose:
    """Camera on the viewing sphere looking at the origin with world +y up."""
    if abs(v.alpha) >= 90:
        raise ValueError("camera axis parallel to the up vector (|alpha| = 90)")
    c = camera_center(v)
    z = -c / np.linalg.norm(c)
    up = np.array([0.0, 1.0, 0.0])
    up = up - (up @ z) * z
    up /= np.linalg.norm(up)
    y = -up
    x = np.cross(y, z)
    r = np.stack([x, y, z])
    return CameraPose(r, -r @ c)


def default_intrinsics(width: int, height: int) -> CameraIntrinsics:
    f = 0.8 * max(width, height)
    return CameraIntrinsics(f, f, width / 2.0, height / 2.0)


def project_points(points, pose: CameraPose, k: CameraIntrinsics, width: float, height: float):
    """Pixel projections, depths and frustum visibility of world points."""
    cam = pose.transform(points)
    depth = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = k.project(cam)
    visible = (depth > 0) & (proj[:, 0] >= 0) & (proj[:, 0] < width) & (proj[:, 1] >= 0) & (proj[:, 1] < height)
    return proj, depth, visible


@dataclass(frozen=True, eq=False)
class RenderedView:
    viewpoint: ViewpointParams
    pose: CameraPose
    intrinsics: CameraIntrinsics
    width: int
    height: int
    projections: np.ndarray
    depths: np.ndarray
    visible: np.ndarray
    coarse: FeatureGrid
    fine: FeatureGrid
    cell_owner: np.ndarray = field(repr=False)
    point_cell: np.ndarray = field(repr=False)


def _ownership(proj, visible, width: int, height: int, cell: float):
    """Each coarse cell is owned by the visible point projecting nearest its centre."""
    gw, gh = int(width // cell), int(height // cell)
    owner = np.full(gw * gh, -1, dtype=np.int64)
    point_cell = np.full(len(proj), -1, dtype=np.int64)
    idx = np.flatnonzero(visible)
    if idx.size == 0:
        return owner, point_cell
    col = np.floor(proj[idx, 0] / cell).astype(np.int64)
    row = np.floor(proj[idx, 1] / cell).astype(np.int64)
    inside = (col < gw) & (row < gh)
    idx, col, row = idx[inside], col[inside], row[inside]
    cells = row * gw + col
    d2 = (proj[idx, 0] - (col + 0.5) * cell) ** 2 + (proj[idx, 1] - (row + 0.5) * cell) ** 2
    # lexsort: primary key cell, then distance, then point index
    order = np.lexsort((idx, d2, cells))
    cells_sorted = cells[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = cells_sorted[1:] != cells_sorted[:-1]
    winners = idx[order][first]
    owner[cells_sorted[first]] = winners
    point_cell[winners] = cells_sorted[first]
    return owner, point_cell


def _ray_hits(scene: Scene, pose: CameraPose, k: CameraIntrinsics, pix: np.ndarray):
    """First surface hit for each pixel ray; rows without a hit are NaN."""
    rays = np.column_stack([k.normalize(pix), np.ones(len(pix))]) @ pose.rotation
    c = pose.center
    best_s = np.full(len(pix), np.inf)
    for plane in scene.surfaces:
        n = plane.axis
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (plane.offset - c[n]) / rays[:, n]
        hit = c + s[:, None] * rays
        others = [a for a in range(3) if a != n]
        ok = (s > 0) & np.all(np.abs(hit[:, others]) <= plane.extent, axis=1)
        best_s = np.where(ok & (s < best_s), s, best_s)
    found = np.isfinite(best_s)
    out = np.full((len(pix), 3), np.nan)
    out[found] = c + best_s[found, None] * rays[found]
    return out, found


def render_view(
    scene: Scene,
    v: ViewpointParams,
    noise_sigma: float = 0.0,
    seed: int = 0,
    *,
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
    coarse_cell_px: int = 8,
    fine_cell_px: int = 2,
) -> RenderedView:
    width, height = image_size
    if width % coarse_cell_px or height % coarse_cell_px or coarse_cell_px % fine_cell_px:
        raise ValueError("image size must be a multiple of the coarse cell, and the coarse cell of the fine cell")
    pose = place_camera(v)
    k = default_intrinsics(width, height)
    proj, depth, visible = project_points(scene.points, pose, k, width, height)
    owner, point_cell = _ownership(proj, visible, width, height, coarse_cell_px)

    rng = np.random.default_rng(seed)
    gw, gh = width // coarse_cell_px, height // coarse_cell_px
    d = scene.descriptor_table.shape[1]
    noise = rng.normal(size=(gw * gh, d))
    background = rng.normal(size=(gw * gh, d))
    occupied = owner >= 0
    coarse = background
    coarse[occupied] = scene.descriptor_table[scene.group_ids[owner[occupied]]] + noise_sigma * noise[occupied]
    coarse_grid = FeatureGrid.from_raw(coarse.reshape(gh, gw, d), coarse_cell_px, dtype=np.float32)

    fw, fh = width // fine_cell_px, height // fine_cell_px
    fd = scene.texture.dim
    rows, cols = np.divmod(np.arange(fw * fh), fw)
    centers = np.column_stack([(cols + 0.5) * fine_cell_px, (rows + 0.5) * fine_cell_px])
    hits, found = _ray_hits(scene, pose, k, centers)
    fine_noise = rng.normal(size=(fw * fh, fd))
    fine = rng.normal(size=(fw * fh, fd))
    tex = scene.texture(hits[found])
    tex /= np.linalg.norm(tex, axis=1, keepdims=True)
    fine[found] = tex + noise_sigma * fine_noise[found]
    fine_grid = FeatureGrid.from_raw(fine.reshape(fh, fw, fd), fine_cell_px, dtype=np.float32)

    return RenderedView(v, pose, k, width, height, proj, depth, visible, coarse_grid, fine_grid, owner, point_cell)


def gt_matches(view_a: RenderedView, view_b: RenderedView) -> CoarseMatchSet:
    """Cell pairs owned by the same scene point in both views."""
    both = np.flatnonzero((view_a.point_cell >= 0) & (view_b.point_cell >= 0))
    return CoarseMatchSet(view_a.point_cell[both], view_b.point_cell[both], np.ones(len(both)))


def gt_point_matches(view_a: RenderedView, view_b: RenderedView) -> list[PointMatch]:
    """Exact projections of every point visible in both views."""
    both = np.flatnonzero(view_a.visible & view_b.visible)
    return make_matches(view_a.projections[both], view_b.projections[both])


def simulate_anchors(
    scene: Scene,
    view_a: RenderedView,
    view_b: RenderedView,
    count: int = 64,
    pixel_noise: float = 0.5,
    seed: int = 0,
    min_confidence: float = 0.6,
) -> list[PointMatch]:
    """Sparse detector-style matches: distinctive co-visible points with pixel noise."""
    rng = np.random.default_rng(seed)
    group_sizes = np.bincount(scene.group_ids, minlength=len(scene.descriptor_table))
    distinctive = group_sizes[scene.group_ids] == 1
    cand = np.flatnonzero(view_a.visible & view_b.visible & distinctive)
    chosen = np.sort(rng.permutation(cand)[:count])
    pa = view_a.projections[chosen] + rng.normal(scale=pixel_noise, size=(len(chosen), 2))
    pb = view_b.projections[chosen] + rng.normal(scale=pixel_noise, size=(len(chosen), 2))
    conf = rng.uniform(min_confidence, 1.0, size=len(chosen))
    return make_matches(pa, pb, conf)


@dataclass(frozen=True)
class PairSweepSpec:
    variable: str
    start: float = 5
    end: float = 40
    step: float = 1
    pairs_per_step: int = 25
    base: ViewpointParams = ViewpointParams(10.0, 0.0, 0.0)

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ValueError(f"variable must be one of {SWEEP_VARIABLES}, got {self.variable!r}")
        if not self.start <= self.end:
            raise ValueError("start must not exceed end")
        if not self.step > 0:
            raise ValueError("step must be > 0")
        if self.pairs_per_step < 1:
            raise ValueError("pairs_per_step must be >= 1")

    def offsets(self) -> list[float]:
        n = int(math.floor((self.end - self.start) / self.step + 1e-9)) + 1
        return [float(self.start + k * self.step) for k in range(n)]


@dataclass(frozen=True)
class PairRecord:
    pair_id: str
    variable: str
    offset: float
    scene_seed: int
    view_a: ViewpointParams
    view_b: ViewpointParams


def view_id(scene_seed: int, v: ViewpointParams) -> str:
    return f"s{scene_seed:04d}_d{v.distance:g}_a{v.alpha:g}_b{v.beta:g}"


def view_seed(master_seed: int, vid: str) -> int:
    return zlib.crc32(f"{master_seed}:{vid}".encode())


def make_pair_sweep(spec: PairSweepSpec, scene_seeds) -> list[PairRecord]:
    """One pair per (offset, scene seed); the first ``pairs_per_step`` seeds are used."""
    seeds = list(scene_seeds)[: spec.pairs_per_step]
    if len(seeds) < spec.pairs_per_step:
        raise ValueError(f"need {spec.pairs_per_step} scene seeds, got {len(seeds)}")
    out = []
    for off in spec.offsets():
        vb = spec.base.with_offset(spec.variable, off)
        for s in seeds:
            out.append(PairRecord(f"{spec.variable}_{off:07.3f}_s{s:04d}", spec.variable, off, s, spec.base, vb))
    return out
