"""Bilinear sampling, view synthesis and forward-backward occlusion masks."""
from __future__ import annotations

import numpy as np

from .geometry import Intrinsics, PoseTransform, flow_from_motion, pixel_grid

ALPHA1 = 0.01
ALPHA2 = 0.5


def _as_channels(field: np.ndarray) -> tuple[np.ndarray, bool]:
    field = np.asarray(field, dtype=np.float64)
    if field.ndim == 2:
        return field[..., None], True
    return field, False


def _corners(coords: np.ndarray, H: int, W: int):
    x = coords[..., 0]
    y = coords[..., 1]
    inb = np.isfinite(x) & np.isfinite(y) & (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)
    xs = np.where(inb, x, 0.0)
    ys = np.where(inb, y, 0.0)
    # floor gives the right-sided cell at integer coordinates; the last
    # row/column falls back to the cell on its left
    x0 = np.clip(np.floor(xs), 0, max(W - 2, 0)).astype(np.intp)
    y0 = np.clip(np.floor(ys), 0, max(H - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = xs - x0
    fy = ys - y0
    return inb, x0, y0, x1, y1, fx, fy


def bilinear_sample(field: np.ndarray, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``field`` (H, W) or (H, W, C) at real coordinates ``coords`` (..., 2).

    Out-of-bounds or non-finite coordinates return 0 and a ``False`` mask entry.
    """
    f, squeeze = _as_channels(field)
    H, W, _ = f.shape
    inb, x0, y0, x1, y1, fx, fy = _corners(np.asarray(coords, dtype=np.float64), H, W)
    wx = fx[..., None]
    wy = fy[..., None]
    top = (1.0 - wx) * f[y0, x0] + wx * f[y0, x1]
    bot = (1.0 - wx) * f[y1, x0] + wx * f[y1, x1]
    out = (1.0 - wy) * top + wy * bot
    out[~inb] = 0.0
    return (out[..., 0] if squeeze else out), inb


def bilinear_sample_grad(
    field: np.ndarray, coords: np.ndarray, upstream: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of :func:`bilinear_sample` with respect to coordinates and values.

    Args:
        field: (H, W) or (H, W, C) source.
        coords: (..., 2) sample positions.
        upstream: cotangent of the sampled output, same shape as the output.
            Defaults to ones.

    Returns:
        ``(grad_coords, grad_field)`` where ``grad_coords`` is (..., 2) and
        ``grad_field`` has the shape of ``field``. At integer coordinates the
        right-sided derivative is used.
    """
    f, squeeze = _as_channels(field)
    H, W, C = f.shape
    coords = np.asarray(coords, dtype=np.float64)
    inb, x0, y0, x1, y1, fx, fy = _corners(coords, H, W)
    if upstream is None:
        upstream = np.ones(coords.shape[:-1] + ((C,) if not squeeze else ()))
    g = np.asarray(upstream, dtype=np.float64)
    if squeeze:
        g = g[..., None]
    g = np.where(inb[..., None], g, 0.0)
    wx = fx[..., None]
    wy = fy[..., None]
    v00, v01, v10, v11 = f[y0, x0], f[y0, x1], f[y1, x0], f[y1, x1]
    dx = (1.0 - wy) * (v01 - v00) + wy * (v11 - v10)
    dy = (1.0 - wx) * (v10 - v00) + wx * (v11 - v01)
    grad_coords = np.stack([np.sum(g * dx, axis=-1), np.sum(g * dy, axis=-1)], axis=-1)

    grad_field = np.zeros_like(f)
    flat = grad_field.reshape(H * W, C)
    for yy, xx, w in (
        (y0, x0, (1 - wy) * (1 - wx)),
        (y0, x1, (1 - wy) * wx),
        (y1, x0, wy * (1 - wx)),
        (y1, x1, wy * wx),
    ):
        idx = (yy * W + xx).reshape(-1)
        np.add.at(flat, idx, (g * w).reshape(-1, C))
    return grad_coords, (grad_field[..., 0] if squeeze else grad_field)


def warp_by_flow(image_next: np.ndarray, flow: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Synthesize frame t by sampling ``image_next`` at ``x + flow``."""
    flow = np.asarray(flow, dtype=np.float64)
    if np.asarray(image_next).shape[:2] != flow.shape[:2]:
        raise ValueError(f"shape mismatch: {np.shape(image_next)[:2]} vs {flow.shape[:2]}")
    return bilinear_sample(image_next, pixel_grid(*flow.shape[:2]) + flow)


def warp_by_motion(
    image_next: np.ndarray,
    depth: np.ndarray,
    sceneflow: np.ndarray,
    T: PoseTransform,
    K: Intrinsics,
    valid: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Synthesize frame t from depth, scene flow and pose.

    Identical to ``warp_by_flow(image_next, flow_from_motion(...))`` with
    pixels behind the second camera masked out.
    """
    if np.asarray(image_next).shape[:2] != np.shape(depth):
        raise ValueError("shape mismatch between image and depth")
    flow, ok = flow_from_motion(depth, sceneflow, T, K, valid)
    out, inb = warp_by_flow(image_next, flow)
    mask = inb & ok
    out[~mask] = 0.0
    return out, mask


def occlusion_mask(
    flow_fwd: np.ndarray,
    flow_bwd: np.ndarray,
    alpha1: float = ALPHA1,
    alpha2: float = ALPHA2,
) -> np.ndarray:
    """Forward-backward consistency mask (``True`` = visible in the next frame).

    A pixel is kept when the forward flow lands inside the image and
    ``|f + b<x+f>|^2 < alpha1 (|f|^2 + |b<x+f>|^2) + alpha2``.
    """
    flow_fwd = np.asarray(flow_fwd, dtype=np.float64)
    flow_bwd = np.asarray(flow_bwd, dtype=np.float64)
    if flow_fwd.shape != flow_bwd.shape:
        raise ValueError(f"shape mismatch: {flow_fwd.shape} vs {flow_bwd.shape}")
    warped, inb = bilinear_sample(flow_bwd, pixel_grid(*flow_fwd.shape[:2]) + flow_fwd)
    lhs = np.sum((flow_fwd + warped) ** 2, axis=-1)
    rhs = alpha1 * (np.sum(flow_fwd**2, axis=-1) + np.sum(warped**2, axis=-1)) + alpha2
    return inb & (lhs < rhs)
