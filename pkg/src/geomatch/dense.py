"""Dense similarity, dual-softmax confidence and mutual-nearest-neighbour selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from geomatch import kernels
from geomatch.epipolar import HomogeneousPoint2
from geomatch.errors import DimensionMismatchError

DEFAULT_TEMPERATURE = 0.1


@dataclass(frozen=True, eq=False)
class FeatureGrid:
    """Row-major ``height x width`` field of unit descriptors.

    Cell ``i`` sits at row ``i // width``, column ``i % width``; its centre is
    ``((col + 0.5) * cell_size_px, (row + 0.5) * cell_size_px)``.
    """

    data: np.ndarray
    cell_size_px: float

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"grid data must be (height, width, dim), got shape {data.shape}")
        if not self.cell_size_px > 0:
            raise ValueError("cell_size_px must be positive")
        norms = np.linalg.norm(data.astype(np.float64), axis=2)
        if data.size and np.abs(norms - 1.0).max() > 1e-6:
            raise ValueError("grid descriptors must have unit L2 norm")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_raw(cls, data, cell_size_px: float, dtype=np.float64) -> "FeatureGrid":
        """Normalise each descriptor to unit length and build a grid."""
        data = np.asarray(data, dtype=np.float64)
        norms = np.linalg.norm(data, axis=-1, keepdims=True)
        return cls((data / norms).astype(dtype), cell_size_px)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    @property
    def n_cells(self) -> int:
        return self.height * self.width

    @property
    def descriptors(self) -> np.ndarray:
        """``(n_cells, dim)`` view in cell-index order."""
        return self.data.reshape(-1, self.dim)

    @property
    def extent_px(self) -> tuple[float, float]:
        return self.width * self.cell_size_px, self.height * self.cell_size_px

    def centers(self) -> np.ndarray:
        """``(n_cells, 2)`` pixel coordinates of every cell centre."""
        rows, cols = np.divmod(np.arange(self.n_cells), self.width)
        return np.column_stack([(cols + 0.5) * self.cell_size_px, (rows + 0.5) * self.cell_size_px])

    def __eq__(self, other):
        if not isinstance(other, FeatureGrid):
            return NotImplemented
        return self.cell_size_px == other.cell_size_px and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class CoarseMatchSet:
    """Cell-index matches ``(row_i in A, col_j in B, confidence)``."""

    rows: np.ndarray
    cols: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        for name in ("rows", "cols"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64).reshape(-1))
        object.__setattr__(self, "confidence", np.asarray(self.confidence, dtype=np.float64).reshape(-1))
        if not len(self.rows) == len(self.cols) == len(self.confidence):
            raise ValueError("rows, cols and confidence must have equal length")

    @classmethod
    def empty(cls) -> "CoarseMatchSet":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        for i, j, c in zip(self.rows.tolist(), self.cols.tolist(), self.confidence.tolist()):
            yield i, j, c

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.rows.tolist(), self.cols.tolist()))

    def take(self, idx) -> "CoarseMatchSet":
        return CoarseMatchSet(self.rows[idx], self.cols[idx], self.confidence[idx])


def similarity(fa: FeatureGrid, fb: FeatureGrid) -> np.ndarray:
    """Dense dot-product similarity ``S[i, j] = <fa_i, fb_j>``."""
    if fa.dim != fb.dim:
        raise DimensionMismatchError(f"descriptor dims differ: {fa.dim} vs {fb.dim}")
    a = fa.descriptors.astype(np.float64, copy=False)
    b = fb.descriptors.astype(np.float64, copy=False)
    return a @ b.T


def dual_softmax(s: np.ndarray, temperature: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """Product of the row-wise and column-wise softmax of ``s / temperature``."""
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    z = np.asarray(s, dtype=np.float64) / temperature
    # two full-size buffers only; the maps can be tens of millions of entries
    row = z - z.max(axis=1, keepdims=True)
    np.exp(row, out=row)
    row /= row.sum(axis=1, keepdims=True)
    z -= z.max(axis=0, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=0, keepdims=True)
    row *= z
    return row


def mnn_select(p: np.ndarray, threshold: float) -> CoarseMatchSet:
    """Mutual nearest neighbours of ``p`` whose confidence is at least ``threshold``.

    Ties resolve to the lowest index on both sides, which keeps the selection
    one-to-one.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    p = np.asarray(p)
    if p.size == 0:
        return CoarseMatchSet.empty()
    j_best, i_best = kernels.row_col_argmax(p)
    rows = np.arange(p.shape[0])
    keep = i_best[j_best] == rows
    conf = p[rows, j_best]
    keep &= conf >= threshold
    return CoarseMatchSet(rows[keep], j_best[keep], conf[keep])


def minmax_normalize(p: np.ndarray) -> np.ndarray:
    """Rescale to [0, 1]; a constant map is returned unchanged."""
    p = np.asarray(p, dtype=np.float64)
    lo, hi = p.min(), p.max()
    if hi > lo:
        return (p - lo) / (hi - lo)
    return p.copy()


def cell_to_pixel(i: int, grid: FeatureGrid) -> HomogeneousPoint2:
    if not 0 <= i < grid.n_cells:
        raise IndexError(f"cell {i} outside grid of {grid.n_cells} cells")
    row, col = divmod(int(i), grid.width)
    return HomogeneousPoint2((col + 0.5) * grid.cell_size_px, (row + 0.5) * grid.cell_size_px, 1.0)


def cells_to_pixels(idx, grid: FeatureGrid) -> np.ndarray:
    """Vectorised :func:`cell_to_pixel` returning an ``(N, 2)`` array."""
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= grid.n_cells):
        raise IndexError(f"cell index outside grid of {grid.n_cells} cells")
    rows, cols = np.divmod(idx, grid.width)
    return np.column_stack([(cols + 0.5) * grid.cell_size_px, (rows + 0.5) * grid.cell_size_px])


def pixel_to_cell(x: float, y: float, grid: FeatureGrid) -> int:
    col = int(np.floor(x / grid.cell_size_px))
    row = int(np.floor(y / grid.cell_size_px))
    if not (0 <= col < grid.width and 0 <= row < grid.height):
        raise IndexError(f"pixel ({x}, {y}) outside grid")
    return row * grid.width + col


def baseline_matches(fa: FeatureGrid, fb: FeatureGrid, threshold: float, temperature: float = DEFAULT_TEMPERATURE):
    """Appearance-only matcher: dual-softmax followed by MNN selection."""
    return mnn_select(dual_softmax(similarity(fa, fb), temperature), threshold)
