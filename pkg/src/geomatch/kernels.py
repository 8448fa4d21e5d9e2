"""Dense kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``GEOMATCH_PURE_PYTHON=1`` to force the numpy path.
"""
import os

from geomatch import _kernels_py

if os.environ.get("GEOMATCH_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from geomatch import _kernels as _impl
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"
    else:
        BACKEND = "cython"

sampson_dense = _impl.sampson_dense
geometric_confidence_dense = _impl.geometric_confidence_dense
scale_minmax = _impl.scale_minmax
row_col_argmax = _impl.row_col_argmax

__all__ = ["BACKEND", "sampson_dense", "geometric_confidence_dense", "scale_minmax", "row_col_argmax"]
