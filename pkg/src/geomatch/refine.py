"""Correlation-window refinement of coarse matches on fine feature grids.

The A-side point stays at the coarse cell centre. Around the B-side centre a
``window x window`` lattice of fine-cell offsets is sampled (bilinearly, so the
lattice is symmetric about the centre whatever the cell ratio), correlated
with the A descriptor, softmaxed and reduced to its expected position.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from geomatch.dense import CoarseMatchSet, FeatureGrid, cells_to_pixels
from geomatch.errors import CoverageMismatchError


@dataclass(frozen=True)
class RefinementConfig:
    window: int = 5
    fine_cell_size_px: float = 2.0
    temperature: float = 0.1

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not self.fine_cell_size_px > 0:
            raise ValueError("fine_cell_size_px must be > 0")


@dataclass(frozen=True)
class RefinedMatchSet:
    a: np.ndarray
    b: np.ndarray
    confidence: np.ndarray

    def __len__(self) -> int:
        return len(self.confidence)


def window_offsets(window: int) -> np.ndarray:
    """``(window**2, 2)`` integer (dx, dy) offsets in row-major order."""
    r = np.arange(window) - window // 2
    dy, dx = np.meshgrid(r, r, indexing="ij")
    return np.column_stack([dx.ravel(), dy.ravel()]).astype(np.float64)


def expected_offset(query: np.ndarray, window_desc: np.ndarray, offsets: np.ndarray, temperature: float, valid=None):
    """Softmax-weighted mean of ``offsets`` with logits ``<query, window_desc> / temperature``."""
    logits = window_desc @ query / temperature
    if valid is not None:
        logits = np.where(valid, logits, -np.inf)
    logits = logits - logits.max()
    w = np.exp(logits)
    w /= w.sum()
    return w @ offsets


def sample_bilinear(grid: FeatureGrid, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit descriptors interpolated at pixel positions, plus an in-bounds mask."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    wpx, hpx = grid.extent_px
    valid = (pts[:, 0] >= 0) & (pts[:, 0] < wpx) & (pts[:, 1] >= 0) & (pts[:, 1] < hpx)
    gx = np.clip(pts[:, 0] / grid.cell_size_px - 0.5, 0, grid.width - 1)
    gy = np.clip(pts[:, 1] / grid.cell_size_px - 0.5, 0, grid.height - 1)
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    x1 = np.minimum(x0 + 1, grid.width - 1)
    y1 = np.minimum(y0 + 1, grid.height - 1)
    fx = (gx - x0)[:, None]
    fy = (gy - y0)[:, None]
    d = grid.data
    out = (
        d[y0, x0] * (1 - fx) * (1 - fy)
        + d[y0, x1] * fx * (1 - fy)
        + d[y1, x0] * (1 - fx) * fy
        + d[y1, x1] * fx * fy
    ).astype(np.float64)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    out = np.divide(out, norms, out=np.zeros_like(out), where=norms > 0)
    return out, valid


def _check_coverage(coarse: FeatureGrid, fine: FeatureGrid, cfg: RefinementConfig):
    if fine.cell_size_px != cfg.fine_cell_size_px:
        raise CoverageMismatchError(f"fine grid cell {fine.cell_size_px}px != configured {cfg.fine_cell_size_px}px")
    if not np.allclose(coarse.extent_px, fine.extent_px):
        raise CoverageMismatchError(f"fine grid extent {fine.extent_px} != coarse extent {coarse.extent_px}")


def refine(
    coarse: CoarseMatchSet,
    coarse_grids: tuple[FeatureGrid, FeatureGrid],
    fine_a: FeatureGrid,
    fine_b: FeatureGrid,
    cfg: RefinementConfig = RefinementConfig(),
) -> RefinedMatchSet:
    _check_coverage(coarse_grids[0], fine_a, cfg)
    _check_coverage(coarse_grids[1], fine_b, cfg)
    pa = cells_to_pixels(coarse.rows, coarse_grids[0])
    pb = cells_to_pixels(coarse.cols, coarse_grids[1])
    if len(coarse) == 0:
        return RefinedMatchSet(pa, pb, coarse.confidence.copy())

    offsets = window_offsets(cfg.window)
    step = cfg.fine_cell_size_px
    queries, _ = sample_bilinear(fine_a, pa)
    n, k = len(pb), len(offsets)
    positions = (pb[:, None, :] + offsets[None, :, :] * step).reshape(-1, 2)
    desc, valid = sample_bilinear(fine_b, positions)
    desc = desc.reshape(n, k, -1)
    valid = valid.reshape(n, k)

    logits = np.einsum("nkd,nd->nk", desc, queries) / cfg.temperature
    logits = np.where(valid, logits, -np.inf)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    refined_b = pb + (w @ offsets) * step
    return RefinedMatchSet(pa, refined_b, coarse.confidence.copy())
