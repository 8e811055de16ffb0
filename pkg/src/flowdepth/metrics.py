"""Depth, optical-flow and scene-flow evaluation metrics."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .losses import EmptyMaskError

# conventional fractional crop (top, bottom, left, right) for 375x1242 frames
GARG_CROP = (0.40810811, 0.99189189, 0.03594771, 0.96405229)
DEPTH_CAP = 80.0
OUTLIER_PX = 3.0
OUTLIER_REL = 0.05


def _mean(values: np.ndarray) -> float:
    return math.fsum(np.asarray(values, dtype=np.float64).ravel().tolist()) / values.size


def crop_mask(shape: tuple[int, int], crop: tuple[float, float, float, float]) -> np.ndarray:
    """Boolean mask of the fractional rectangle ``(top, bottom, left, right)``."""
    H, W = shape
    top, bottom, left, right = crop
    m = np.zeros((H, W), dtype=bool)
    m[int(top * H) : int(bottom * H), int(left * W) : int(right * W)] = True
    return m


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float

    def to_record(self, prefix: str = "depth.") -> dict[str, float]:
        return {prefix + k: v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class FlowMetrics:
    epe: float
    f1_all: float

    def to_record(self, prefix: str = "flow.") -> dict[str, float]:
        return {prefix + k: v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class SceneFlowMetrics:
    d1_all: float
    d2_all: float
    f1_all: float
    sf1_all: float

    def to_record(self, prefix: str = "sceneflow.") -> dict[str, float]:
        return {prefix + k: v for k, v in asdict(self).items()}


def depth_metrics(
    pred: np.ndarray,
    gt: np.ndarray,
    cap: float = DEPTH_CAP,
    median_scale: bool = False,
    crop: tuple[float, float, float, float] | None = None,
    valid: np.ndarray | None = None,
) -> DepthMetrics:
    """Standard monocular depth errors on pixels with ``0 < gt <= cap``.

    ``valid`` optionally restricts the evaluation further (e.g. the pixels
    where ``pred`` is defined). With ``median_scale`` the prediction is
    rescaled by ``median(gt) / median(pred)`` over the evaluated pixels.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    m = (gt > 0) & (gt <= cap) & np.isfinite(gt) & np.isfinite(pred) & (pred > 0)
    if valid is not None:
        m &= np.asarray(valid, dtype=bool)
    if crop is not None:
        m &= crop_mask(gt.shape, crop)
    if not m.any():
        raise EmptyMaskError("no pixel with valid prediction and ground truth")
    p, g = pred[m], gt[m]
    if median_scale:
        p = p * (np.median(g) / np.median(p))
    e = p - g

    def within(t):
        # max(p/g, g/p) < t, written without division so p = t*g is exact
        return (p < t * g) & (g < t * p)

    return DepthMetrics(
        abs_rel=_mean(np.abs(e) / g),
        sq_rel=_mean(e**2 / g),
        rmse=math.sqrt(_mean(e**2)),
        rmse_log=math.sqrt(_mean((np.log(p) - np.log(g)) ** 2)),
        delta1=_mean(within(1.25)),
        delta2=_mean(within(1.25**2)),
        delta3=_mean(within(1.25**3)),
    )


def _outlier(err: np.ndarray, ref: np.ndarray) -> np.ndarray:
    return (err > OUTLIER_PX) & (err > OUTLIER_REL * ref)


def flow_metrics(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray | None = None) -> FlowMetrics:
    """Endpoint error and the benchmark outlier rate (> 3 px and > 5 %)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    m = np.ones(gt.shape[:2], bool) if valid is None else np.asarray(valid, dtype=bool)
    if not m.any():
        raise EmptyMaskError("flow evaluation mask is empty")
    err = np.linalg.norm(pred - gt, axis=-1)[m]
    mag = np.linalg.norm(gt, axis=-1)[m]
    return FlowMetrics(epe=_mean(err), f1_all=_mean(_outlier(err, mag)))


def sceneflow_metrics(
    depth_pred: np.ndarray,
    depth_gt: np.ndarray,
    depth_next_pred: np.ndarray,
    depth_next_gt: np.ndarray,
    flow_pred: np.ndarray,
    flow_gt: np.ndarray,
    valid: np.ndarray,
    disparity_scale: float,
) -> SceneFlowMetrics:
    """D1/D2/F1/SF1 outlier rates.

    Depths are converted to disparity as ``disparity_scale / depth``. The
    second-frame depths are given on the frame-t grid (already warped).
    """
    if not disparity_scale > 0:
        raise ValueError("disparity_scale must be positive")
    m = np.asarray(valid, dtype=bool).copy()
    for d in (depth_pred, depth_gt, depth_next_pred, depth_next_gt):
        if np.shape(d) != m.shape:
            raise ValueError("depth maps must match the mask shape")
        m &= np.asarray(d) > 0
    if not m.any():
        raise EmptyMaskError("scene-flow evaluation mask is empty")

    def disp(d):
        return disparity_scale / np.asarray(d, dtype=np.float64)[m]

    d1 = _outlier(np.abs(disp(depth_pred) - disp(depth_gt)), disp(depth_gt))
    d2 = _outlier(np.abs(disp(depth_next_pred) - disp(depth_next_gt)), disp(depth_next_gt))
    ferr = np.linalg.norm(np.asarray(flow_pred, float) - np.asarray(flow_gt, float), axis=-1)[m]
    f1 = _outlier(ferr, np.linalg.norm(np.asarray(flow_gt, float), axis=-1)[m])
    return SceneFlowMetrics(
        d1_all=_mean(d1), d2_all=_mean(d2), f1_all=_mean(f1), sf1_all=_mean(d1 | d2 | f1)
    )


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def records_to_csv(rows: list[dict[str, float]]) -> str:
    """CSV text with the union of keys as sorted columns; floats in shortest round-trip form."""
    keys = sorted({k for r in rows for k in r})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(r[k]) if k in r else "" for k in keys})
    return buf.getvalue()
