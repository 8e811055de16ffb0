"""Supervised, self-supervised and consistency loss terms.

Every masked loss is a mean over the pixels selected by its mask, computed
with :func:`math.fsum` so the result does not depend on pixel order. Each
loss used by the variational optimizer has a matching ``*_grad`` function.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .geometry import (
    EPS_Z,
    Intrinsics,
    PoseTransform,
    compute_normals,
    flow_from_motion,
    motion_points,
    pixel_grid,
    rays,
)
from .sampling import bilinear_sample, warp_by_flow

ALPHA_SSIM = 0.85
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
HUBER_BETA = 1.0
# residuals this small count as exact zeros when taking L1 subgradients
SIGN_DEADZONE = 1e-10

SELF_TERMS = ("photo_opt", "photo_mot", "smooth")
CONST_TERMS = ("opt_mot", "rev_opt", "rev_mot", "reproj_depth")
SUP_TERMS = ("depth", "opt", "scn", "nrm")
ALL_TERMS = SELF_TERMS + CONST_TERMS + SUP_TERMS


class EmptyMaskError(ValueError):
    """Raised when a masked loss has no pixel to average over."""


def masked_mean(values: np.ndarray, mask: np.ndarray) -> float:
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise EmptyMaskError("mask selects no pixels")
    return math.fsum(np.asarray(values)[mask].ravel().tolist()) / n


def _count(mask) -> int:
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise EmptyMaskError("mask selects no pixels")
    return n


def _sign(r: np.ndarray) -> np.ndarray:
    return np.where(np.abs(r) <= SIGN_DEADZONE, 0.0, np.sign(r))


def _channels(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img[..., None] if img.ndim == 2 else img


def _check_same(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


# ---------------------------------------------------------------- SSIM


def _box3(a: np.ndarray) -> np.ndarray:
    H, W = a.shape[:2]
    p = np.pad(a, ((1, 1), (1, 1), (0, 0)), mode="reflect")
    out = np.zeros_like(a)
    for i in range(3):
        for j in range(3):
            out += p[i : i + H, j : j + W]
    return out / 9.0


def _box3_adjoint(g: np.ndarray) -> np.ndarray:
    H, W = g.shape[:2]
    gp = np.zeros((H + 2, W + 2) + g.shape[2:])
    for i in range(3):
        for j in range(3):
            gp[i : i + H, j : j + W] += g / 9.0
    # fold the reflected borders back onto their sources
    gp[:, 2] += gp[:, 0]
    gp[:, W - 1] += gp[:, W + 1]
    gp = gp[:, 1 : W + 1]
    gp[2] += gp[0]
    gp[H - 1] += gp[H + 1]
    return gp[1 : H + 1]


def _ssim_parts(x, y):
    mx, my = _box3(x), _box3(y)
    sxx = _box3(x * x) - mx * mx
    syy = _box3(y * y) - my * my
    sxy = _box3(x * y) - mx * my
    A1 = 2 * mx * my + SSIM_C1
    A2 = 2 * sxy + SSIM_C2
    B1 = mx * mx + my * my + SSIM_C1
    B2 = sxx + syy + SSIM_C2
    return mx, my, A1, A2, B1, B2


def ssim_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-pixel, per-channel SSIM from 3x3 mean-pooled statistics (reflect padding)."""
    x, y = _channels(x), _channels(y)
    _check_same(x, y)
    if x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("SSIM needs images of at least 2x2")
    _, _, A1, A2, B1, B2 = _ssim_parts(x, y)
    return (A1 * A2) / (B1 * B2)


def _ssim_grad_y(x, y, upstream):
    """d(sum upstream * SSIM)/dy for (H, W, C) arrays."""
    mx, my, A1, A2, B1, B2 = _ssim_parts(x, y)
    Dn = B1 * B2
    S = A1 * A2 / Dn
    d_my = (2 * mx * A2 - 2 * mx * A1) / Dn - S * (2 * my * B2 - 2 * my * B1) / Dn
    d_eyy = -S * B1 / Dn
    d_exy = 2 * A1 / Dn
    return (
        _box3_adjoint(upstream * d_my)
        + 2 * y * _box3_adjoint(upstream * d_eyy)
        + x * _box3_adjoint(upstream * d_exy)
    )


# ---------------------------------------------------------------- photometric


def photometric_map(I_t, I_synth, alpha: float = ALPHA_SSIM) -> np.ndarray:
    """Per-pixel ``alpha (1 - SSIM)/2 + (1 - alpha) |I_t - I_synth|``, channel-averaged."""
    x, y = _channels(I_t), _channels(I_synth)
    _check_same(x, y)
    per = alpha * (1.0 - ssim_map(x, y)) / 2.0 + (1.0 - alpha) * np.abs(x - y)
    return per.mean(axis=-1)


def fill_unsampled(I_t, I_synth, sampled) -> np.ndarray:
    """Replace pixels that could not be sampled by the target image.

    Their zeros would otherwise leak into the SSIM windows of valid neighbours.
    """
    s = np.asarray(sampled, dtype=bool)
    if np.ndim(I_synth) == 3:
        s = s[..., None]
    return np.where(s, I_synth, I_t)


def photometric_loss(I_t, I_synth, mask, alpha: float = ALPHA_SSIM) -> float:
    """Masked mean of :func:`photometric_map`.

    Raises:
        EmptyMaskError: if ``mask`` selects nothing.
    """
    _count(mask)
    return masked_mean(photometric_map(I_t, I_synth, alpha), mask)


def photometric_loss_grad(I_t, I_synth, mask, alpha: float = ALPHA_SSIM) -> np.ndarray:
    """Gradient of :func:`photometric_loss` with respect to ``I_synth``."""
    x, y = _channels(I_t), _channels(I_synth)
    n = _count(mask)
    C = x.shape[-1]
    w = (np.asarray(mask, dtype=np.float64) / (n * C))[..., None] * np.ones(C)
    g = _ssim_grad_y(x, y, -alpha / 2.0 * w) + (1.0 - alpha) * w * _sign(y - x)
    return g.reshape(np.shape(I_synth))


# ---------------------------------------------------------------- smoothness


def _edge_weights(image):
    img = _channels(image)
    wx = np.exp(-np.mean(np.abs(img[:, 1:] - img[:, :-1]), axis=-1))
    wy = np.exp(-np.mean(np.abs(img[1:] - img[:-1]), axis=-1))
    return wx, wy


def smoothness_loss(depth, image) -> float:
    """Edge-aware smoothness of the mean-normalised depth.

    ``mean|dx d*| exp(-|dx I|) + mean|dy d*| exp(-|dy I|)`` with
    ``d* = d / mean(d)`` and forward differences; each axis is averaged over
    its own difference array.
    """
    depth = np.asarray(depth, dtype=np.float64)
    m = math.fsum(depth.ravel().tolist()) / depth.size
    if not m > 0:
        raise ValueError("mean depth must be positive")
    dn = depth / m
    wx, wy = _edge_weights(image)
    tx = np.abs(dn[:, 1:] - dn[:, :-1]) * wx
    ty = np.abs(dn[1:] - dn[:-1]) * wy
    return math.fsum(tx.ravel().tolist()) / tx.size + math.fsum(ty.ravel().tolist()) / ty.size


def smoothness_loss_grad(depth, image) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    N = depth.size
    m = depth.sum() / N
    dn = depth / m
    wx, wy = _edge_weights(image)
    gx = _sign(dn[:, 1:] - dn[:, :-1]) * wx / wx.size
    gy = _sign(dn[1:] - dn[:-1]) * wy / wy.size
    gdn = np.zeros_like(depth)
    gdn[:, 1:] += gx
    gdn[:, :-1] -= gx
    gdn[1:] += gy
    gdn[:-1] -= gy
    return gdn / m - np.sum(gdn * depth) / (m * m * N)


# ---------------------------------------------------------------- supervised


def huber_depth_loss(pred, gt, mask, beta: float = HUBER_BETA) -> float:
    """Smooth-L1 depth error, quadratic below ``beta`` metres."""
    _check_same(pred, gt)
    e = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64))
    vals = np.where(e < beta, 0.5 * e * e / beta, e - 0.5 * beta)
    return masked_mean(vals, mask)


def huber_depth_loss_grad(pred, gt, mask, beta: float = HUBER_BETA) -> np.ndarray:
    n = _count(mask)
    e = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    g = np.where(np.abs(e) < beta, e / beta, _sign(e))
    return np.where(mask, g, 0.0) / n


def l1_field_loss(pred, gt, mask) -> float:
    """Mean over masked pixels of the L1 norm of the per-pixel difference vector."""
    _check_same(pred, gt)
    diff = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64))
    return masked_mean(diff.sum(axis=-1), mask)


def l1_field_loss_grad(pred, gt, mask) -> np.ndarray:
    n = _count(mask)
    g = _sign(np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64))
    return np.where(np.asarray(mask)[..., None], g, 0.0) / n


def _cosine(a, b):
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    return np.sum(a * b, axis=-1) / (na * nb), na, nb


def normal_loss(n_pred, n_gt, mask) -> float:
    """Mean of ``(1 - cos)/2`` between normal vectors over masked pixels.

    Raises:
        ValueError: if a masked normal has zero length.
    """
    _check_same(n_pred, n_gt)
    n_pred = np.asarray(n_pred, dtype=np.float64)
    n_gt = np.asarray(n_gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    _count(mask)
    if np.any(np.linalg.norm(n_pred[mask], axis=-1) == 0) or np.any(
        np.linalg.norm(n_gt[mask], axis=-1) == 0
    ):
        raise ValueError("zero-length normal inside the mask")
    cos, _, _ = _cosine(n_pred[mask], n_gt[mask])
    return math.fsum(((1.0 - cos) / 2.0).tolist()) / int(mask.sum())


def normal_loss_depth_grad(depth, K: Intrinsics, n_gt, mask) -> np.ndarray:
    """Gradient of ``normal_loss(compute_normals(depth, K)[0], n_gt, mask)`` w.r.t. depth."""
    depth = np.asarray(depth, dtype=np.float64)
    H, W = depth.shape
    n = _count(mask)
    r = rays(H, W, K)
    X = r * depth[..., None]
    dx = X[:-1, 1:] - X[:-1, :-1]
    dy = X[1:, :-1] - X[:-1, :-1]
    c = np.cross(dx, dy)
    cn = np.linalg.norm(c, axis=-1, keepdims=True)
    chat = c / cn
    sigma = np.where(c[..., 2] < 0, -1.0, 1.0)[..., None]

    # route the replicated border pixels back to their interior source
    m_full = np.asarray(mask, dtype=np.float64)
    g_gt = np.asarray(n_gt, dtype=np.float64)
    gt_unit = g_gt / np.where(
        np.linalg.norm(g_gt, axis=-1, keepdims=True) > 0,
        np.linalg.norm(g_gt, axis=-1, keepdims=True),
        1.0,
    )
    up = -0.5 / n * m_full[..., None] * gt_unit  # d loss / d (sigma * chat) per full pixel
    up_int = up[:-1, :-1].copy()
    up_int[-1, :] += up[-1, :-1]
    up_int[:, -1] += up[:-1, -1]
    up_int[-1, -1] += up[-1, -1]
    # d(chat . m)/dc = (m - (chat . m) chat) / |c|
    proj = np.sum(chat * up_int, axis=-1, keepdims=True)
    gc = sigma * (up_int - proj * chat) / cn

    ga = np.cross(dy, gc)
    gb = np.cross(gc, dx)
    gX = np.zeros_like(X)
    gX[:-1, 1:] += ga
    gX[:-1, :-1] -= ga + gb
    gX[1:, :-1] += gb
    return np.sum(gX * r, axis=-1)


# ---------------------------------------------------------------- consistency


def consistency_opt_mot(flow_pred, depth, sceneflow, T: PoseTransform, K: Intrinsics, mask,
                        depth_valid=None) -> float:
    """Mean L1 gap between a predicted flow and the flow induced by depth + scene flow."""
    _check_same(np.shape(flow_pred)[:2], np.shape(depth))
    mflow, ok = flow_from_motion(depth, sceneflow, T, K, depth_valid)
    return l1_field_loss(flow_pred, mflow, np.asarray(mask, dtype=bool) & ok)


def consistency_rev_flow(flow_t, flow_next, warp_coords, mask) -> float:
    """Mean L1 norm of ``flow_t + flow_next<warp_coords>`` over masked, in-bounds pixels."""
    _check_same(flow_t, flow_next)
    warped, inb = bilinear_sample(flow_next, warp_coords)
    m = np.asarray(mask, dtype=bool) & inb
    return masked_mean(np.abs(np.asarray(flow_t) + warped).sum(axis=-1), m)


def reproj_depth_terms(depth_t, depth_next, sceneflow, T: PoseTransform, K: Intrinsics,
                       valid_t=None, valid_next=None):
    """Residual ``depth_next<p'> - z(T(d K^-1 x + s))`` and the pixels where it is defined.

    Depths are compared in the second camera: the first-frame point is moved
    by its scene flow and the pose, and its z is compared with the second
    depth map sampled where the point projects. This is the direction for
    which the term vanishes on exact static and dynamic ground truth.

    Returns:
        ``(residual, valid, coords, P)``.
    """
    depth_t = np.asarray(depth_t, dtype=np.float64)
    if valid_t is None:
        valid_t = np.isfinite(depth_t) & (depth_t > 0)
    if valid_next is None:
        valid_next = np.isfinite(depth_next) & (np.asarray(depth_next) > 0)
    safe = np.where(valid_t, depth_t, 1.0)
    P = motion_points(safe, sceneflow, T, K)
    # the displacement form keeps a static camera and scene exactly on the pixel grid
    flow, in_front = flow_from_motion(safe, sceneflow, T, K)
    coords = pixel_grid(*depth_t.shape) + flow
    coords[~in_front] = np.nan
    sampled, inb = bilinear_sample(np.where(valid_next, depth_next, 0.0), coords)
    vn, _ = bilinear_sample(np.asarray(valid_next, dtype=np.float64), coords)
    ok = valid_t & in_front & inb & (vn >= 1.0 - 1e-9)
    resid = np.where(ok, sampled - P[..., 2], 0.0)
    return resid, ok, coords, P


def consistency_reproj_depth(depth_t, depth_next, sceneflow, T: PoseTransform, K: Intrinsics,
                             mask, valid_t=None, valid_next=None) -> float:
    _check_same(depth_t, depth_next)
    resid, ok, _, _ = reproj_depth_terms(depth_t, depth_next, sceneflow, T, K, valid_t, valid_next)
    return masked_mean(np.abs(resid), np.asarray(mask, dtype=bool) & ok)


# ---------------------------------------------------------------- composition


@dataclass
class LossWeights:
    lambda_depth: float = 5.0
    lambda_opt: float = 0.1
    lambda_scn: float = 2.0
    lambda_nrm: float = 0.05
    lambda_smth: float = 0.0001
    lambda_mot_opt: float = 0.2
    lambda_rev_opt: float = 0.1
    lambda_rev_mot: float = 0.1
    lambda_reproj_depth: float = 0.005
    lambda_S: float = 1.0
    # listed alongside the others in the source hyperparameters but never
    # attached to a loss term; kept for bookkeeping only
    lambda_reproj_unassigned: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{f.name} must be a finite non-negative number, got {v}")

    def weight(self, term: str) -> float:
        return {
            "photo_opt": 1.0,
            "photo_mot": 1.0,
            "smooth": self.lambda_smth,
            "opt_mot": self.lambda_mot_opt,
            "rev_opt": self.lambda_rev_opt,
            "rev_mot": self.lambda_rev_mot,
            "reproj_depth": self.lambda_reproj_depth,
            "depth": self.lambda_depth,
            "opt": self.lambda_opt,
            "scn": self.lambda_scn,
            "nrm": self.lambda_nrm,
        }[term]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossReport:
    terms: dict[str, float]
    counts: dict[str, int] = field(default_factory=dict)
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        unknown = set(self.terms) - set(ALL_TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms: {sorted(unknown)}")

    @property
    def total(self) -> float:
        return math.fsum(self.weights.weight(k) * v for k, v in self.terms.items())

    def has_supervised(self) -> bool:
        return any(k in SUP_TERMS for k in self.terms)

    def to_record(self) -> dict[str, float]:
        rec = {f"loss.{k}": v for k, v in self.terms.items()}
        rec.update({f"count.{k}": int(v) for k, v in self.counts.items()})
        rec["total"] = self.total
        return rec


def total_loss(real: LossReport | None, synth: LossReport | None, w: LossWeights) -> float:
    """Mixed-batch objective ``L_R + lambda_S * L_S``.

    The real-data report may hold only self-supervised and consistency terms;
    supervised terms contribute through the synthetic report.
    """
    parts = []
    if real is not None:
        if real.has_supervised():
            raise ValueError("real-data report must not contain supervised terms")
        parts.extend(w.weight(k) * v for k, v in real.terms.items())
    if synth is not None:
        parts.extend(w.lambda_S * w.weight(k) * v for k, v in synth.terms.items())
    return math.fsum(parts)


def pair_report(
    image_t,
    image_next,
    T: PoseTransform,
    K: Intrinsics,
    depth,
    sceneflow,
    *,
    flow=None,
    flow_bwd=None,
    motion_flow_bwd=None,
    depth_next=None,
    mask=None,
    gt=None,
    terms=None,
    weights: LossWeights | None = None,
    alpha_ssim: float = ALPHA_SSIM,
    huber_beta: float = HUBER_BETA,
) -> LossReport:
    """Evaluate every applicable loss term for one frame pair.

    Args:
        image_t, image_next: the two frames.
        depth, sceneflow: estimates for frame t (depth assumed valid everywhere).
        flow: optical-flow estimate t -> t+1 (enables ``photo_opt``, ``opt_mot``).
        flow_bwd: optical-flow estimate t+1 -> t (with ``flow`` enables ``rev_opt``).
        motion_flow_bwd: motion-induced flow t+1 -> t (enables ``rev_mot``).
        depth_next: depth estimate for frame t+1 (enables ``reproj_depth``).
        mask: visibility mask applied to self-supervised and consistency terms.
        gt: optional dict with any of ``depth``, ``depth_valid``, ``flow``,
            ``sceneflow``, ``normals``, ``normals_valid`` for supervised terms.
        terms: restrict evaluation to these term names.
    """
    depth = np.asarray(depth, dtype=np.float64)
    H, W = depth.shape
    if mask is None:
        mask = np.ones((H, W), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    gt = gt or {}
    want = set(ALL_TERMS if terms is None else terms)
    out: dict[str, float] = {}
    counts: dict[str, int] = {}

    def put(name, value, m):
        out[name] = value
        counts[name] = int(np.count_nonzero(m))

    mflow, ok_z = flow_from_motion(depth, sceneflow, T, K)
    coords_mot = pixel_grid(H, W) + mflow
    coords_mot[~ok_z] = np.nan

    if "photo_opt" in want and flow is not None:
        synth, inb = warp_by_flow(image_next, flow)
        synth = fill_unsampled(image_t, synth, inb)
        put("photo_opt", photometric_loss(image_t, synth, mask & inb, alpha_ssim), mask & inb)
    if "photo_mot" in want:
        synth, inb = bilinear_sample(image_next, coords_mot)
        synth = fill_unsampled(image_t, synth, inb)
        m = mask & inb
        put("photo_mot", photometric_loss(image_t, synth, m, alpha_ssim), m)
    if "smooth" in want:
        put("smooth", smoothness_loss(depth, image_t), np.ones((H, W), dtype=bool))
    if "opt_mot" in want and flow is not None:
        m = mask & ok_z
        put("opt_mot", l1_field_loss(flow, mflow, m), m)
    if "rev_opt" in want and flow is not None and flow_bwd is not None:
        _, inb = bilinear_sample(flow_bwd, pixel_grid(H, W) + flow)
        put("rev_opt", consistency_rev_flow(flow, flow_bwd, pixel_grid(H, W) + flow, mask),
            mask & inb)
    if "rev_mot" in want and motion_flow_bwd is not None:
        _, inb = bilinear_sample(motion_flow_bwd, coords_mot)
        m = mask & ok_z & inb
        put("rev_mot", consistency_rev_flow(mflow, motion_flow_bwd, coords_mot, mask & ok_z), m)
    if "reproj_depth" in want and depth_next is not None:
        resid, ok, _, _ = reproj_depth_terms(depth, depth_next, sceneflow, T, K)
        put("reproj_depth", masked_mean(np.abs(resid), mask & ok), mask & ok)

    if "depth" in want and "depth" in gt:
        m = gt.get("depth_valid", np.asarray(gt["depth"]) > 0)
        put("depth", huber_depth_loss(depth, gt["depth"], m, huber_beta), m)
    if "opt" in want and "flow" in gt and flow is not None:
        m = gt.get("flow_valid", np.ones((H, W), dtype=bool))
        put("opt", l1_field_loss(flow, gt["flow"], m), m)
    if "scn" in want and "sceneflow" in gt:
        m = gt.get("sceneflow_valid", gt.get("depth_valid", np.ones((H, W), dtype=bool)))
        put("scn", l1_field_loss(sceneflow, gt["sceneflow"], m), m)
    if "nrm" in want and "normals" in gt:
        n_pred, n_ok = compute_normals(depth, K)
        m = gt.get("normals_valid", np.ones((H, W), dtype=bool)) & n_ok
        put("nrm", normal_loss(n_pred, gt["normals"], m), m)

    return LossReport(out, counts, weights or LossWeights())


__all__ = [
    "ALPHA_SSIM",
    "EPS_Z",
    "EmptyMaskError",
    "LossReport",
    "LossWeights",
    "consistency_opt_mot",
    "consistency_reproj_depth",
    "consistency_rev_flow",
    "huber_depth_loss",
    "l1_field_loss",
    "normal_loss",
    "pair_report",
    "photometric_loss",
    "smoothness_loss",
    "ssim_map",
    "total_loss",
]
