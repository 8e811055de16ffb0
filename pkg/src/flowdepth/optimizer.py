"""Direct per-pixel estimation of depth and scene flow by Adam descent.

The learned refinement stage is replaced by first-order optimisation of the
same loss stack over explicit per-pixel parameters: log-depth (so depth stays
positive) and a 3D scene-flow vector. Objective values come from
:func:`flowdepth.losses.pair_report`; gradients are derived by hand through
the projection, the bilinear sampler and each loss term. Masks are treated as
constants.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Intrinsics, PoseTransform, compute_normals, pixel_grid, project_dense, rays
from .losses import (
    ALL_TERMS,
    ALPHA_SSIM,
    HUBER_BETA,
    LossReport,
    LossWeights,
    _count,
    _sign,
    fill_unsampled,
    huber_depth_loss_grad,
    l1_field_loss_grad,
    normal_loss_depth_grad,
    pair_report,
    photometric_loss_grad,
    reproj_depth_terms,
    smoothness_loss_grad,
)
from .sampling import bilinear_sample, bilinear_sample_grad
from .triangulation import TriangulationResult

# terms whose value does not depend on the optimised depth / scene flow
CONSTANT_TERMS = ("photo_opt", "rev_opt", "opt")


class DivergenceError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class OptimizerConfig:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iter: int = 2000
    tol: float = 1e-7
    window: int = 10
    grad_tol: float = 1e-9
    mask_refresh: int = 25
    optimize_depth: bool = True
    optimize_sceneflow: bool = True
    freeze_invalid: bool = True
    terms: tuple[str, ...] = ("photo_mot", "smooth")
    weights: LossWeights = field(default_factory=LossWeights)
    alpha_ssim: float = ALPHA_SSIM
    huber_beta: float = HUBER_BETA

    def __post_init__(self):
        self.terms = tuple(self.terms)
        if not self.lr > 0:
            raise ValueError("step size must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("decay rates must lie in [0, 1)")
        if self.max_iter < 0 or self.window < 1 or self.mask_refresh < 1:
            raise ValueError("iteration settings must be positive")
        bad = set(self.terms) - set(ALL_TERMS)
        if bad:
            raise ValueError(f"unknown terms: {sorted(bad)}")


@dataclass
class ObjectiveInputs:
    image_t: np.ndarray
    image_next: np.ndarray
    pose: PoseTransform
    K: Intrinsics
    mask: np.ndarray | None = None
    flow: np.ndarray | None = None
    flow_bwd: np.ndarray | None = None
    motion_flow_bwd: np.ndarray | None = None
    depth_next: np.ndarray | None = None
    gt: dict | None = None

    def __post_init__(self):
        H, W = np.shape(self.image_t)[:2]
        if np.shape(self.image_next)[:2] != (H, W):
            raise ValueError("image shapes differ")
        for name in ("mask", "flow", "flow_bwd", "motion_flow_bwd", "depth_next"):
            v = getattr(self, name)
            if v is not None and np.shape(v)[:2] != (H, W):
                raise ValueError(f"{name} has shape {np.shape(v)}, expected {(H, W)}")

    @property
    def shape(self):
        return np.shape(self.image_t)[:2]


@dataclass
class VariationalState:
    log_depth: np.ndarray
    sceneflow: np.ndarray
    iteration: int = 0
    history: list[float] = field(default_factory=list)

    @property
    def depth(self) -> np.ndarray:
        return np.exp(self.log_depth)

    def copy(self) -> VariationalState:
        return VariationalState(
            self.log_depth.copy(), self.sceneflow.copy(), self.iteration, list(self.history)
        )

    @classmethod
    def from_depth(cls, depth, sceneflow=None) -> VariationalState:
        depth = np.asarray(depth, dtype=np.float64)
        if sceneflow is None:
            sceneflow = np.zeros(depth.shape + (3,))
        return cls(np.log(depth), np.array(sceneflow, dtype=np.float64))


def init_from_triangulation(tri: TriangulationResult, fill=10.0) -> VariationalState:
    """Log-depth from valid triangulated pixels, ``fill`` elsewhere; zero scene flow."""
    fill = np.broadcast_to(np.asarray(fill, dtype=np.float64), tri.depth.shape)
    if np.any(fill[~tri.valid] <= 0):
        raise ValueError("fill depth must be positive")
    depth = np.where(tri.valid, tri.depth, fill)
    return VariationalState.from_depth(depth)


def _base_mask(inputs: ObjectiveInputs, mask):
    H, W = inputs.shape
    m = np.ones((H, W), dtype=bool) if inputs.mask is None else np.asarray(inputs.mask, bool)
    if mask is not None:
        m = m & np.asarray(mask, dtype=bool)
    return m


def _check_inputs(inputs: ObjectiveInputs, cfg: OptimizerConfig):
    need = {
        "photo_opt": ("flow",),
        "opt_mot": ("flow",),
        "rev_opt": ("flow", "flow_bwd"),
        "rev_mot": ("motion_flow_bwd",),
        "reproj_depth": ("depth_next",),
    }
    gt_need = {"depth": "depth", "opt": "flow", "scn": "sceneflow", "nrm": "normals"}
    for term in cfg.terms:
        for attr in need.get(term, ()):
            if getattr(inputs, attr) is None:
                raise ValueError(f"term {term!r} needs inputs.{attr}")
        if term in gt_need and (inputs.gt is None or gt_need[term] not in inputs.gt):
            raise ValueError(f"term {term!r} needs ground truth {gt_need[term]!r}")
        if term == "opt" and inputs.flow is None:
            raise ValueError("term 'opt' needs inputs.flow")


def objective(state: VariationalState, inputs: ObjectiveInputs, cfg: OptimizerConfig,
              mask=None) -> LossReport:
    """Loss report of the active terms at ``state``."""
    _check_inputs(inputs, cfg)
    return pair_report(
        inputs.image_t,
        inputs.image_next,
        inputs.pose,
        inputs.K,
        state.depth,
        state.sceneflow,
        flow=inputs.flow,
        flow_bwd=inputs.flow_bwd,
        motion_flow_bwd=inputs.motion_flow_bwd,
        depth_next=inputs.depth_next,
        mask=_base_mask(inputs, mask),
        gt=inputs.gt,
        terms=cfg.terms,
        weights=cfg.weights,
        alpha_ssim=cfg.alpha_ssim,
        huber_beta=cfg.huber_beta,
    )


def gradient(state: VariationalState, inputs: ObjectiveInputs, cfg: OptimizerConfig,
             mask=None) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``objective(...).total`` w.r.t. ``(log_depth, sceneflow)``."""
    _check_inputs(inputs, cfg)
    w = cfg.weights
    terms = set(cfg.terms)
    K, T = inputs.K, inputs.pose
    H, W = inputs.shape
    M = _base_mask(inputs, mask)
    d = state.depth
    s = state.sceneflow
    r = rays(H, W, K)
    P = (r * d[..., None] + s) @ T.rotation.T + T.translation
    coords, okz = project_dense(P, K)
    grid = pixel_grid(H, W)
    mflow = np.where(okz[..., None], coords - grid, 0.0)

    g_coords = np.zeros((H, W, 2))
    g_P = np.zeros((H, W, 3))
    g_d = np.zeros((H, W))
    g_s = np.zeros((H, W, 3))

    if "photo_mot" in terms:
        synth, inb = bilinear_sample(inputs.image_next, coords)
        synth = fill_unsampled(inputs.image_t, synth, inb)
        gI = photometric_loss_grad(inputs.image_t, synth, M & inb, cfg.alpha_ssim)
        gc, _ = bilinear_sample_grad(inputs.image_next, coords, gI)
        g_coords += w.weight("photo_mot") * gc
    if "smooth" in terms:
        g_d += w.weight("smooth") * smoothness_loss_grad(d, inputs.image_t)
    if "opt_mot" in terms:
        g_coords -= w.weight("opt_mot") * l1_field_loss_grad(inputs.flow, mflow, M & okz)
    if "rev_mot" in terms:
        N = inputs.motion_flow_bwd
        sampled, inb = bilinear_sample(N, coords)
        m = M & okz & inb
        n = _count(m)
        g = np.where(m[..., None], _sign(mflow + sampled), 0.0) / n
        gc, _ = bilinear_sample_grad(N, coords, g)
        g_coords += w.weight("rev_mot") * (g + gc)
    if "reproj_depth" in terms:
        resid, ok, _, _ = reproj_depth_terms(d, inputs.depth_next, s, T, K)
        m = M & ok
        n = _count(m)
        g = np.where(m, _sign(resid), 0.0) / n
        dn = np.asarray(inputs.depth_next, dtype=np.float64)
        field_next = np.where(np.isfinite(dn) & (dn > 0), dn, 0.0)
        gc, _ = bilinear_sample_grad(field_next, coords, g)
        g_coords += w.weight("reproj_depth") * gc
        g_P[..., 2] -= w.weight("reproj_depth") * g

    gt = inputs.gt or {}
    if "depth" in terms:
        m = gt.get("depth_valid", np.asarray(gt["depth"]) > 0)
        g_d += w.weight("depth") * huber_depth_loss_grad(d, gt["depth"], m, cfg.huber_beta)
    if "scn" in terms:
        m = gt.get("sceneflow_valid", gt.get("depth_valid", np.ones((H, W), dtype=bool)))
        g_s += w.weight("scn") * l1_field_loss_grad(s, gt["sceneflow"], m)
    if "nrm" in terms:
        _, n_ok = compute_normals(d, K)
        m = gt.get("normals_valid", np.ones((H, W), dtype=bool)) & n_ok
        g_d += w.weight("nrm") * normal_loss_depth_grad(d, K, gt["normals"], m)

    # pixel coordinates -> camera-2 points (perspective division)
    z = np.where(okz, P[..., 2], 1.0)
    gu = np.where(okz, g_coords[..., 0], 0.0)
    gv = np.where(okz, g_coords[..., 1], 0.0)
    g_P[..., 0] += gu * K.fx / z
    g_P[..., 1] += gv * K.fy / z
    g_P[..., 2] -= (gu * K.fx * P[..., 0] + gv * K.fy * P[..., 1]) / (z * z)
    g_X = g_P @ T.rotation
    g_s += g_X
    g_d += np.sum(g_X * r, axis=-1)
    return g_d * d, g_s


def validity_mask(state: VariationalState, inputs: ObjectiveInputs) -> np.ndarray:
    """Base mask restricted to pixels whose motion warp lands in front of and inside the next view."""
    H, W = inputs.shape
    K, T = inputs.K, inputs.pose
    P = (rays(H, W, K) * state.depth[..., None] + state.sceneflow) @ T.rotation.T + T.translation
    coords, okz = project_dense(P, K)
    _, inb = bilinear_sample(np.zeros((H, W)), coords)
    return _base_mask(inputs, None) & okz & inb


def run(state: VariationalState, inputs: ObjectiveInputs, cfg: OptimizerConfig):
    """Adam descent from ``state``.

    Stops when the gradient norm falls below ``cfg.grad_tol``, when the best
    total of the last ``cfg.window`` iterations improves on the best before
    them by less than ``cfg.tol`` (relative), or after ``cfg.max_iter``
    updates.

    Returns:
        ``(final_state, trace)`` where ``trace`` is a list of dict rows with
        ``iteration``, each unweighted term, ``total`` and ``grad_norm``.

    Raises:
        DivergenceError: on a non-finite objective or gradient.
    """
    state = state.copy()
    m_l = np.zeros_like(state.log_depth)
    v_l = np.zeros_like(state.log_depth)
    m_s = np.zeros_like(state.sceneflow)
    v_s = np.zeros_like(state.sceneflow)
    b1, b2 = cfg.beta1, cfg.beta2
    trace: list[dict] = []
    mask = None
    step = 0
    while True:
        if step % cfg.mask_refresh == 0:
            mask = validity_mask(state, inputs)
        report = objective(state, inputs, cfg, mask)
        g_l, g_s = gradient(state, inputs, cfg, mask)
        if not cfg.optimize_depth:
            g_l = np.zeros_like(g_l)
        if not cfg.optimize_sceneflow:
            g_s = np.zeros_like(g_s)
        total = report.total
        gnorm = math.sqrt(float(np.sum(g_l * g_l) + np.sum(g_s * g_s)))
        row = {"iteration": state.iteration, **report.terms, "total": total, "grad_norm": gnorm}
        trace.append(row)
        state.history.append(total)
        if not (math.isfinite(total) and math.isfinite(gnorm)):
            raise DivergenceError(f"non-finite objective at iteration {state.iteration}", trace)
        if gnorm < cfg.grad_tol or step >= cfg.max_iter:
            break
        h = [r["total"] for r in trace]
        if len(h) > cfg.window:
            # Adam does not decrease monotonically; compare running bests
            before = min(h[: -cfg.window])
            recent = min(h[-cfg.window :])
            if (before - recent) / max(abs(before), 1e-300) < cfg.tol:
                break

        step += 1
        state.iteration += 1
        m_l = b1 * m_l + (1 - b1) * g_l
        v_l = b2 * v_l + (1 - b2) * g_l * g_l
        m_s = b1 * m_s + (1 - b1) * g_s
        v_s = b2 * v_s + (1 - b2) * g_s * g_s
        c1 = 1 - b1**step
        c2 = 1 - b2**step
        # pixels without a valid warp carry no data term; hold them until the next refresh
        live = mask if cfg.freeze_invalid else np.ones_like(mask)
        if cfg.optimize_depth:
            upd = cfg.lr * (m_l / c1) / (np.sqrt(v_l / c2) + cfg.eps)
            state.log_depth = state.log_depth - np.where(live, upd, 0.0)
        if cfg.optimize_sceneflow:
            upd = cfg.lr * (m_s / c1) / (np.sqrt(v_s / c2) + cfg.eps)
            state.sceneflow = state.sceneflow - np.where(live[..., None], upd, 0.0)
    return state, trace


def trace_to_csv(trace: list[dict]) -> str:
    """CSV text with one row per iteration; floats in shortest round-trip form."""
    if not trace:
        return ""
    keys = ["iteration"] + [k for k in ALL_TERMS if k in trace[0]] + ["total", "grad_norm"]
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(keys)
    for row in trace:
        wr.writerow([row["iteration"]] + [repr(float(row[k])) for k in keys[1:]])
    return buf.getvalue()
