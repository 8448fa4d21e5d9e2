# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled dense kernels. Mirrors ``_kernels_py`` exactly in contract."""
import numpy as np
from libc.math cimport exp, INFINITY

cdef double DEGENERATE_EPS = 1e-30


cdef void _lines(const double[:, ::1] f, const double[:, ::1] pa, const double[:, ::1] pb,
                 double[:, ::1] fa, double[::1] da, double[::1] db) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double x, y, t0, t1
    for i in range(pa.shape[0]):
        x = pa[i, 0]
        y = pa[i, 1]
        for k in range(3):
            fa[i, k] = x * f[k, 0] + y * f[k, 1] + f[k, 2]
        da[i] = fa[i, 0] * fa[i, 0] + fa[i, 1] * fa[i, 1]
    for i in range(pb.shape[0]):
        x = pb[i, 0]
        y = pb[i, 1]
        t0 = x * f[0, 0] + y * f[1, 0] + f[2, 0]
        t1 = x * f[0, 1] + y * f[1, 1] + f[2, 1]
        db[i] = t0 * t0 + t1 * t1


cdef inline double _sampson(const double[:, ::1] fa, const double[::1] da, const double[::1] db,
                            Py_ssize_t i, Py_ssize_t j, double bx, double by) noexcept nogil:
    cdef double num = bx * fa[i, 0] + by * fa[i, 1] + fa[i, 2]
    cdef double den = da[i] + db[j]
    if den < DEGENERATE_EPS:
        return INFINITY
    return num * num / den


def _prepare(F, pa, pb):
    f = np.ascontiguousarray(F, dtype=np.float64)
    a = np.ascontiguousarray(pa, dtype=np.float64)
    b = np.ascontiguousarray(pb, dtype=np.float64)
    if f.shape != (3, 3) or a.ndim != 2 or a.shape[1] != 2 or b.ndim != 2 or b.shape[1] != 2:
        raise ValueError("expected F (3, 3), pa (N, 2), pb (M, 2)")
    return f, a, b


def sampson_dense(F, pa, pb):
    """Sampson distance for every (a_i, b_j) pair; degenerate entries are +inf."""
    f_arr, a_arr, b_arr = _prepare(F, pa, pb)
    cdef const double[:, ::1] f = f_arr
    cdef const double[:, ::1] a = a_arr
    cdef const double[:, ::1] b = b_arr
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], i, j
    fa_arr = np.empty((na, 3))
    da_arr = np.empty(na)
    db_arr = np.empty(nb)
    out_arr = np.empty((na, nb))
    cdef double[:, ::1] fa = fa_arr
    cdef double[::1] da = da_arr
    cdef double[::1] db = db_arr
    cdef double[:, ::1] out = out_arr
    with nogil:
        _lines(f, a, b, fa, da, db)
        for i in range(na):
            for j in range(nb):
                out[i, j] = _sampson(fa, da, db, i, j, b[j, 0], b[j, 1])
    return out_arr


def geometric_confidence_dense(F, pa, pb, double tau):
    """sigmoid(relu(tau - d)) over the dense Sampson map, fused in one pass."""
    f_arr, a_arr, b_arr = _prepare(F, pa, pb)
    cdef const double[:, ::1] f = f_arr
    cdef const double[:, ::1] a = a_arr
    cdef const double[:, ::1] b = b_arr
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], i, j
    cdef double x
    fa_arr = np.empty((na, 3))
    da_arr = np.empty(na)
    db_arr = np.empty(nb)
    out_arr = np.empty((na, nb))
    cdef double[:, ::1] fa = fa_arr
    cdef double[::1] da = da_arr
    cdef double[::1] db = db_arr
    cdef double[:, ::1] out = out_arr
    with nogil:
        _lines(f, a, b, fa, da, db)
        for i in range(na):
            for j in range(nb):
                x = tau - _sampson(fa, da, db, i, j, b[j, 0], b[j, 1])
                if x > 0.0:
                    out[i, j] = 1.0 / (1.0 + exp(-x))
                else:
                    out[i, j] = 0.5
    return out_arr


def scale_minmax(p, pd, double w):
    """Elementwise ``p * pd * w`` followed by min-max normalisation."""
    p_arr = np.ascontiguousarray(p, dtype=np.float64)
    pd_arr = np.ascontiguousarray(pd, dtype=np.float64)
    if p_arr.shape != pd_arr.shape or p_arr.ndim != 2:
        raise ValueError("p and pd must be 2-D arrays of equal shape")
    out_arr = np.empty_like(p_arr)
    cdef const double[:, ::1] pv = p_arr
    cdef const double[:, ::1] dv = pd_arr
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n = pv.shape[0], m = pv.shape[1], i, j
    cdef double v, lo = INFINITY, hi = -INFINITY, span
    with nogil:
        for i in range(n):
            for j in range(m):
                v = pv[i, j] * dv[i, j] * w
                out[i, j] = v
                if v < lo:
                    lo = v
                if v > hi:
                    hi = v
        if hi > lo:
            span = hi - lo
            for i in range(n):
                for j in range(m):
                    out[i, j] = (out[i, j] - lo) / span
    return out_arr


def row_col_argmax(p):
    """Row-wise and column-wise argmax in one row-major pass; first index wins ties."""
    p_arr = np.ascontiguousarray(p, dtype=np.float64)
    if p_arr.ndim != 2 or p_arr.shape[0] == 0 or p_arr.shape[1] == 0:
        raise ValueError("p must be a non-empty 2-D array")
    cdef const double[:, ::1] pv = p_arr
    cdef Py_ssize_t n = pv.shape[0], m = pv.shape[1], i, j
    rows_arr = np.zeros(n, dtype=np.intp)
    cols_arr = np.zeros(m, dtype=np.intp)
    best_arr = np.empty(m)
    cdef Py_ssize_t[::1] ra = rows_arr
    cdef Py_ssize_t[::1] ca = cols_arr
    cdef double[::1] cb = best_arr
    cdef double v, rb
    with nogil:
        for j in range(m):
            cb[j] = pv[0, j]
        for i in range(n):
            rb = pv[i, 0]
            for j in range(m):
                v = pv[i, j]
                if v > rb:
                    rb = v
                    ra[i] = j
                if v > cb[j]:
                    cb[j] = v
                    ca[j] = i
    return rows_arr, cols_arr
