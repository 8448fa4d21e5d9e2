import math

import numpy as np
import pytest

from geomatch import _kernels_py
from geomatch.dense import FeatureGrid
from geomatch.epipolar import CameraIntrinsics, CameraPose, fundamental_from_poses

try:
    from geomatch import _kernels as _kernels_c
except ImportError:  # pragma: no cover - extension not built
    _kernels_c = None

KERNEL_BACKENDS = [pytest.param(_kernels_py, id="python")]
if _kernels_c is not None:
    KERNEL_BACKENDS.append(pytest.param(_kernels_c, id="cython"))


@pytest.fixture(params=KERNEL_BACKENDS)
def backend(request):
    return request.param


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def small_rotation(rng, max_deg=20.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    th = math.radians(rng.uniform(-max_deg, max_deg))
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(th) * k + (1 - math.cos(th)) * k @ k


def two_view_problem(rng, n=50, k=None):
    """Camera A at the origin, B with a random moderate pose; points in front of both."""
    k = k or CameraIntrinsics(500.0, 500.0, 320.0, 240.0)
    pose_a = CameraPose(np.eye(3), np.zeros(3))
    r = small_rotation(rng)
    t = rng.normal(size=3)
    t /= np.linalg.norm(t)
    pose_b = CameraPose(r, t)
    pts = np.column_stack([rng.uniform(-2, 2, n), rng.uniform(-2, 2, n), rng.uniform(4, 8, n)])
    cam_b = pts @ r.T + t
    keep = cam_b[:, 2] > 0.5
    pts = pts[keep]
    pa = k.project(pts)
    pb = k.project(pts @ r.T + t)
    return pose_a, pose_b, k, pa, pb, pts


def stereo_grids(rng, rows=8, cols=12, dim=32, cell=8.0, disparity=None, decoys=()):
    """Hand-built coarse grids for a rectified pair: A cell (r, c) shows the same
    point as B cell (r, c - disparity[r]). Depth varies per row so the scene is
    not planar. ``decoys`` lists (row, col, decoy_row) triples: the B cell at
    (decoy_row, col - disparity[decoy_row]) receives A's exact descriptor while
    the true B cell gets a slightly perturbed copy.
    """
    disparity = disparity or [1 + (r % 3) for r in range(rows)]
    a = rng.normal(size=(rows, cols, dim))
    a /= np.linalg.norm(a, axis=2, keepdims=True)
    b = rng.normal(size=(rows, cols, dim))
    b /= np.linalg.norm(b, axis=2, keepdims=True)
    truth = []
    for r in range(rows):
        for c in range(cols):
            cb = c - disparity[r]
            if cb >= 0:
                b[r, cb] = a[r, c]
                truth.append((r * cols + c, r * cols + cb))
    for r, c, dr in decoys:
        true_cb = c - disparity[r]
        wrong_cb = c - disparity[dr]
        pert = a[r, c] + 0.35 * rng.normal(size=dim) / math.sqrt(dim)
        b[r, true_cb] = pert / np.linalg.norm(pert)
        b[dr, wrong_cb] = a[r, c]
    ga = FeatureGrid.from_raw(a, cell)
    gb = FeatureGrid.from_raw(b, cell)
    # rectified geometry: identical intrinsics, B translated along x
    k = CameraIntrinsics(100.0, 100.0, cols * cell / 2, rows * cell / 2)
    pose_a = CameraPose(np.eye(3), np.zeros(3))
    pose_b = CameraPose(np.eye(3), np.array([-1.0, 0.0, 0.0]))
    f = fundamental_from_poses(pose_a, pose_b, k, k)
    return ga, gb, f, truth, disparity


def align_sign_scale(m, ref):
    m = np.asarray(m, dtype=np.float64) / np.linalg.norm(m)
    ref = np.asarray(ref, dtype=np.float64) / np.linalg.norm(ref)
    return m if np.sum(m * ref) >= 0 else -m, ref
