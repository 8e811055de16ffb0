"""Pinhole camera model, rigid transforms and dense projection helpers.

Conventions used throughout the package:

* pixel centres sit at integer coordinates, origin top-left, x to the right,
  y downwards;
* dense fields are numpy arrays shaped ``(H, W)`` for scalars and
  ``(H, W, C)`` for vectors, always paired with an explicit boolean validity
  mask instead of sentinel values;
* depth is the camera-frame z coordinate in metres.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

EPS_Z = 1e-6


class BehindCameraError(ValueError):
    """A point at or behind ``z = EPS_Z`` cannot be projected."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"intrinsics must be finite, got {vals}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def identity(cls) -> Intrinsics:
        return cls(1.0, 1.0, 0.0, 0.0)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


@dataclass(frozen=True)
class PoseTransform:
    """Rigid transform ``X -> R @ X + t`` (camera t to camera t+1)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> PoseTransform:
        return cls()

    @classmethod
    def from_rotvec(cls, rotvec, translation) -> PoseTransform:
        R = Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix()
        # re-orthonormalise so the 1e-9 invariant holds for any input
        u, _, vt = np.linalg.svd(R)
        return cls(u @ vt, translation)

    def rotvec(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_rotvec()

    def inverse(self) -> PoseTransform:
        Rt = self.rotation.T
        return PoseTransform(Rt, -Rt @ self.translation)

    def compose(self, other: PoseTransform) -> PoseTransform:
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return PoseTransform(
            self.rotation @ other.rotation, self.rotation @ other.translation + self.translation
        )

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> PoseTransform:
        if "rotvec" in d:
            return cls.from_rotvec(d["rotvec"], d.get("translation", [0, 0, 0]))
        return cls(np.array(d["rotation"]), np.array(d["translation"]))


def pixel_grid(height: int, width: int) -> np.ndarray:
    """(H, W, 2) array of pixel-centre coordinates ``(x, y)``."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([xs, ys], axis=-1)


def rays(height: int, width: int, K: Intrinsics) -> np.ndarray:
    """Unnormalised viewing rays ``K^-1 [x, y, 1]`` with unit z, shape (H, W, 3)."""
    g = pixel_grid(height, width)
    return np.stack(
        [(g[..., 0] - K.cx) / K.fx, (g[..., 1] - K.cy) / K.fy, np.ones((height, width))], axis=-1
    )


def backproject(x, d, K: Intrinsics) -> np.ndarray:
    """Lift pixel(s) ``x`` (..., 2) with depth ``d`` (...) to camera-frame points (..., 3).

    Raises:
        ValueError: if any depth is not strictly positive.
    """
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if np.any(~(d > 0)):
        raise ValueError("backproject requires positive depth")
    X = (x[..., 0] - K.cx) / K.fx
    Y = (x[..., 1] - K.cy) / K.fy
    return np.stack([X * d, Y * d, np.broadcast_to(d, X.shape)], axis=-1)


def project(X, K: Intrinsics) -> np.ndarray:
    """Perspective projection of camera-frame point(s) (..., 3) to pixels (..., 2).

    Raises:
        BehindCameraError: if any point has ``z <= EPS_Z``.
    """
    X = np.asarray(X, dtype=np.float64)
    if np.any(~(X[..., 2] > EPS_Z)):
        raise BehindCameraError(f"point(s) with z <= {EPS_Z} cannot be projected")
    return np.stack(
        [K.fx * X[..., 0] / X[..., 2] + K.cx, K.fy * X[..., 1] / X[..., 2] + K.cy], axis=-1
    )


def project_dense(X: np.ndarray, K: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Non-raising projection: returns ``(coords, valid)``; invalid coords are NaN."""
    z = X[..., 2]
    valid = z > EPS_Z
    zs = np.where(valid, z, 1.0)
    u = K.fx * X[..., 0] / zs + K.cx
    v = K.fy * X[..., 1] / zs + K.cy
    coords = np.stack([u, v], axis=-1)
    coords[~valid] = np.nan
    return coords, valid


def transform(T: PoseTransform, X) -> np.ndarray:
    """Apply ``R @ X + t`` over the last axis of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    return X @ T.rotation.T + T.translation


def _check_shapes(depth: np.ndarray, *fields: np.ndarray):
    for f in fields:
        if f is not None and f.shape[:2] != depth.shape[:2]:
            raise ValueError(f"shape mismatch: {depth.shape[:2]} vs {f.shape[:2]}")


def motion_points(depth, sceneflow, T: PoseTransform, K: Intrinsics):
    """Points ``T(d K^-1 x + s)`` in the second camera, shape (H, W, 3)."""
    H, W = depth.shape
    X = rays(H, W, K) * depth[..., None] + sceneflow
    return transform(T, X)


def flow_from_motion(
    depth: np.ndarray,
    sceneflow: np.ndarray,
    T: PoseTransform,
    K: Intrinsics,
    valid: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Optical flow induced by depth, scene flow and ego-motion.

    Each pixel is lifted with its depth, displaced by its scene flow, moved into
    the second camera, projected with a perspective divide and compared with its
    original position.

    Args:
        depth: (H, W) depth in metres.
        sceneflow: (H, W, 3) per-pixel 3D motion in the first camera frame.
        T: relative camera pose.
        K: intrinsics.
        valid: optional (H, W) depth validity.

    Returns:
        ``(flow, valid)``: (H, W, 2) flow, zero where invalid, and the mask of
        pixels with valid depth whose moved point lies in front of the camera.
    """
    depth = np.asarray(depth, dtype=np.float64)
    sceneflow = np.asarray(sceneflow, dtype=np.float64)
    _check_shapes(depth, sceneflow, valid)
    if valid is None:
        valid = np.isfinite(depth) & (depth > 0)
    safe_depth = np.where(valid, depth, 1.0)
    r = rays(*depth.shape, K)
    X = r * safe_depth[..., None]
    # displacement of the moved point from the pixel's own ray,
    # T(X + s) - X = (R - I)(X + s) + s + t, so a static camera and scene
    # give exactly zero flow
    delta = (X + sceneflow) @ (T.rotation - np.eye(3)).T + sceneflow + T.translation
    z = safe_depth + delta[..., 2]
    ok = valid & (z > EPS_Z)
    zs = np.where(ok, z, 1.0)
    flow = np.stack(
        [
            K.fx * (delta[..., 0] - r[..., 0] * delta[..., 2]) / zs,
            K.fy * (delta[..., 1] - r[..., 1] * delta[..., 2]) / zs,
        ],
        axis=-1,
    )
    flow[~ok] = 0.0
    return flow, ok


def compute_normals(
    depth: np.ndarray, K: Intrinsics, valid: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Unit surface normals from a depth map.

    ``n = (X[u+1, v] - X[u, v]) x (X[u, v+1] - X[u, v])`` normalised and
    oriented towards +z. The last row and column copy their interior
    neighbours. Pixels with invalid depth support or a degenerate cross
    product are flagged invalid (and hold a zero vector).
    """
    depth = np.asarray(depth, dtype=np.float64)
    H, W = depth.shape
    if H < 2 or W < 2:
        raise ValueError("normals need at least a 2x2 depth map")
    if valid is None:
        valid = np.isfinite(depth) & (depth > 0)
    X = rays(H, W, K) * np.where(valid, depth, 1.0)[..., None]
    c = _normal_cross(X)
    norm = np.linalg.norm(c, axis=-1)
    support = valid[:-1, :-1] & valid[:-1, 1:] & valid[1:, :-1]
    ok = support & (norm > 1e-300)
    sign = np.where(c[..., 2] < 0, -1.0, 1.0)
    n = np.zeros_like(c)
    n[ok] = (c[ok] * sign[ok][:, None]) / norm[ok][:, None]
    return _replicate_border(n), _replicate_border(ok)


def _normal_cross(X: np.ndarray) -> np.ndarray:
    dx = X[:-1, 1:] - X[:-1, :-1]
    dy = X[1:, :-1] - X[:-1, :-1]
    return np.cross(dx, dy)


def _replicate_border(a: np.ndarray) -> np.ndarray:
    """(H-1, W-1, ...) -> (H, W, ...) by copying the last row and column."""
    a = np.concatenate([a, a[-1:]], axis=0)
    return np.concatenate([a, a[:, -1:]], axis=1)
