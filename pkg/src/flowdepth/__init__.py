"""Geometry, losses and variational estimation of depth, optical flow and scene flow."""
from .geometry import (
    EPS_Z,
    BehindCameraError,
    Intrinsics,
    PoseTransform,
    backproject,
    compute_normals,
    flow_from_motion,
    pixel_grid,
    project,
    transform,
)
from .losses import EmptyMaskError, LossReport, LossWeights
from .triangulation import TriangulationResult, triangulate_depth_map, triangulate_pixel

__version__ = "0.1.0"
