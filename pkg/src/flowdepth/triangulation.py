"""Closed-form two-view depth from optical flow and a known relative pose."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Intrinsics, PoseTransform, pixel_grid

TAU_PARALLAX = 1e-6


@dataclass
class TriangulationResult:
    depth: np.ndarray
    parallax: np.ndarray
    valid: np.ndarray


def _homogeneous(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def least_squares_depth(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimiser ``-a.b / a.a`` of ``|a d + b|^2`` over the last axis (0 where ``a = 0``)."""
    aa = np.sum(a * a, axis=-1)
    ab = np.sum(a * b, axis=-1)
    return np.where(aa > 0, -ab / np.where(aa > 0, aa, 1.0), 0.0)


def _solve(x, o, T: PoseTransform, K: Intrinsics, tau: float):
    # residual of the cross-product constraint is linear in depth: a*d + b
    x = np.asarray(x, dtype=np.float64)
    o = np.asarray(o, dtype=np.float64)
    x2 = _homogeneous(x + o)
    M = K.matrix @ T.rotation @ K.inverse_matrix
    a = np.cross(x2, _homogeneous(x) @ M.T)
    b = np.cross(x2, np.broadcast_to(K.matrix @ T.translation, x2.shape))
    parallax = np.linalg.norm(a, axis=-1)
    depth = least_squares_depth(a, b)
    valid = (parallax >= tau) & (depth > 0) & np.isfinite(depth)
    return depth, parallax, valid


def triangulate_pixel(x, o, T: PoseTransform, K: Intrinsics, tau: float = TAU_PARALLAX):
    """Least-squares depth for one correspondence ``x -> x + o``.

    Returns:
        ``(depth, parallax, valid)``. ``parallax`` is the norm of the depth
        coefficient of the residual; pixels below ``tau`` or with a
        non-positive solution are invalid (the depth is still returned).
    """
    d, p, v = _solve(x, o, T, K, tau)
    return float(d), float(p), bool(v)


def triangulate_depth_map(
    flow: np.ndarray, T: PoseTransform, K: Intrinsics, tau: float = TAU_PARALLAX
) -> TriangulationResult:
    """Dense triangulation of an (H, W, 2) flow field.

    Moving objects violate the static-world assumption and come out with
    systematically wrong (but possibly valid-flagged) depths.
    """
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be (H, W, 2), got {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow must be finite")
    H, W, _ = flow.shape
    depth, parallax, valid = _solve(pixel_grid(H, W), flow, T, K, tau)
    depth = np.where(valid, depth, 0.0)
    return TriangulationResult(depth=depth, parallax=parallax, valid=valid)
