"""Numpy implementations of the dense kernels.

Same contract and arithmetic order as the compiled ``_kernels`` module; used
when the extension is not built or ``GEOMATCH_PURE_PYTHON`` is set.
"""
import numpy as np

DEGENERATE_EPS = 1e-30


def _epipolar_lines(F, pa, pb):
    F = np.asarray(F, dtype=np.float64)
    pa = np.asarray(pa, dtype=np.float64)
    pb = np.asarray(pb, dtype=np.float64)
    # rows of fa are F @ (x, y, 1); rows of ftb are F^T @ (x', y', 1)
    fa = pa[:, 0:1] * F[:, 0] + pa[:, 1:2] * F[:, 1] + F[:, 2]
    ftb = pb[:, 0:1] * F[0, :] + pb[:, 1:2] * F[1, :] + F[2, :]
    return fa, ftb


def sampson_dense(F, pa, pb):
    """Sampson distance for every (a_i, b_j) pair; degenerate entries are +inf."""
    fa, ftb = _epipolar_lines(F, pb=pb, pa=pa)
    pb = np.asarray(pb, dtype=np.float64)
    num = pb[:, 0][None, :] * fa[:, 0:1] + pb[:, 1][None, :] * fa[:, 1:2] + fa[:, 2:3]
    den = (fa[:, 0] * fa[:, 0] + fa[:, 1] * fa[:, 1])[:, None] + (ftb[:, 0] * ftb[:, 0] + ftb[:, 1] * ftb[:, 1])[None, :]
    degenerate = den < DEGENERATE_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num * num / den
    out[degenerate] = np.inf
    return out


def geometric_confidence_dense(F, pa, pb, tau):
    """sigmoid(relu(tau - d)) over the dense Sampson map."""
    d = sampson_dense(F, pa, pb)
    x = np.maximum(tau - d, 0.0)
    return 1.0 / (1.0 + np.exp(-x))


def scale_minmax(p, pd, w):
    """Elementwise ``p * pd * w`` followed by min-max normalisation."""
    q = np.asarray(p, dtype=np.float64) * np.asarray(pd, dtype=np.float64) * w
    lo = q.min()
    hi = q.max()
    if hi > lo:
        q = (q - lo) / (hi - lo)
    return q


def row_col_argmax(p):
    """Row-wise and column-wise argmax; first index wins ties."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.size == 0:
        raise ValueError("p must be a non-empty 2-D array")
    return np.argmax(p, axis=1), np.argmax(p, axis=0)
