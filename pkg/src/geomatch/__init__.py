"""Geometry-aware dense feature matching on synthetic scenes.

The core pieces are the epipolar toolbox (:mod:`geomatch.epipolar`), the
appearance matcher (:mod:`geomatch.dense`), the Sampson-reweighting loop
(:mod:`geomatch.optimizer`) and fine-grid refinement (:mod:`geomatch.refine`).
"""
from geomatch.dense import CoarseMatchSet, FeatureGrid, baseline_matches, dual_softmax, mnn_select
from geomatch.epipolar import (
    CameraIntrinsics,
    CameraPose,
    FundamentalMatrix,
    PointMatch,
    normalized_eight_point,
    sampson_distance,
)
from geomatch.kernels import BACKEND
from geomatch.optimizer import OptimizerConfig, optimize
from geomatch.refine import RefinementConfig, refine

__all__ = [
    "BACKEND",
    "CameraIntrinsics",
    "CameraPose",
    "CoarseMatchSet",
    "FeatureGrid",
    "FundamentalMatrix",
    "OptimizerConfig",
    "PointMatch",
    "RefinementConfig",
    "baseline_matches",
    "dual_softmax",
    "mnn_select",
    "normalized_eight_point",
    "optimize",
    "refine",
    "sampson_distance",
]

__version__ = "0.1.0"
