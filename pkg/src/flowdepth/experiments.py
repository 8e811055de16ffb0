"""End-to-end experiment pipeline shared by the CLI, the scripts and the tests.

A run renders (or loads) a two-frame scene, corrupts the ground-truth flows
with seeded noise to play the role of estimated optical flow, triangulates an
initial depth map, optimises depth and scene flow, and scores the result.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from scipy.ndimage import binary_erosion

from . import io as fio
from . import oracle
from .config import RunConfig, from_dict
from .geometry import flow_from_motion, motion_points
from .metrics import depth_metrics, flow_metrics, sceneflow_metrics
from .optimizer import ObjectiveInputs, VariationalState, init_from_triangulation, run
from .sampling import occlusion_mask
from .triangulation import triangulate_depth_map


@dataclass
class Scenario:
    spec: oracle.SceneSpec
    frame_t: oracle.RenderedFrame
    frame_next: oracle.RenderedFrame
    flow_fwd: np.ndarray
    flow_bwd: np.ndarray
    mask: np.ndarray
    init: VariationalState
    inputs: ObjectiveInputs


@dataclass
class Result:
    state: VariationalState
    trace: list[dict]
    record: dict
    scenario: Scenario
    seconds: float


def scene_from_config(cfg: RunConfig) -> oracle.SceneSpec:
    sc = cfg.scene
    if sc.spec is not None:
        return oracle.SceneSpec.from_dict(sc.spec)
    if sc.preset not in oracle.PRESETS:
        raise ValueError(f"unknown scene preset {sc.preset!r}; choose from {sorted(oracle.PRESETS)}")
    return oracle.PRESETS[sc.preset](sc.height, sc.width, seed=sc.seed)


# ---------------------------------------------------------------- datasets on disk

_FRAME_FIELDS = {
    "image": "image", "depth": "depth", "valid": "valid", "surface": "surface_id",
    "normals": "normals",
}


def save_dataset(directory, spec, frame_t, frame_next, fmt: str = "drft") -> list[Path]:
    """Write both frames and the scene description to ``directory``.

    ``fmt="png"`` stores depth as 16-bit PNG, flows as KITTI PNG and masks as
    8-bit PNG; everything without a PNG convention is written as DRFT.
    """
    if fmt not in ("drft", "png"):
        raise ValueError("format must be 'drft' or 'png'")
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = [d / "scene.yaml"]
    (d / "scene.yaml").write_text(yaml.safe_dump(spec.to_dict(), sort_keys=True))
    arrays = {}
    for tag, fr in (("t", frame_t), ("next", frame_next)):
        for name, attr in _FRAME_FIELDS.items():
            arrays[f"{name}_{tag}"] = getattr(fr, attr)
        arrays[f"visible_{tag}"] = fr.visible
        arrays[f"flow_{tag}"] = fr.flow
        arrays[f"sceneflow_{tag}"] = fr.sceneflow
    arrays["surface_t"] = arrays["surface_t"].astype(np.float32)
    arrays["surface_next"] = arrays["surface_next"].astype(np.float32)
    for name, arr in sorted(arrays.items()):
        if fmt == "png" and name.startswith("depth_"):
            p = d / f"{name}.png"
            fio.write_depth_png16(p, arr, arrays["valid_" + name.split("_")[1]])
        elif fmt == "png" and name.startswith("flow_"):
            p = d / f"{name}.png"
            fio.write_kitti_flow_png(p, arr, arrays["visible_" + name.split("_")[1]])
        elif fmt == "png" and (name.startswith("valid_") or name.startswith("visible_")):
            p = d / f"{name}.png"
            fio.write_mask_png(p, arr)
        else:
            p = d / f"{name}.drft"
            fio.write_tensor(p, arr)
        written.append(p)
    return written


def read_field(directory, name: str) -> np.ndarray:
    """Read ``name`` from a dataset directory in whichever encoding is present."""
    d = Path(directory)
    if (d / f"{name}.drft").exists():
        a = fio.read_tensor(d / f"{name}.drft")
        return a if a.dtype == bool else a.astype(np.float64)
    p = d / f"{name}.png"
    if not p.exists():
        raise FileNotFoundError(f"{d}: no {name}.drft or {name}.png")
    if name.startswith("depth"):
        return fio.read_depth_png16(p)[0]
    if name.startswith("flow"):
        return fio.read_kitti_flow_png(p)[0]
    return fio.read_mask_png(p)


def load_dataset(directory):
    d = Path(directory)
    if not (d / "scene.yaml").exists():
        raise FileNotFoundError(f"{d}: missing scene.yaml")
    spec = oracle.SceneSpec.from_dict(yaml.safe_load((d / "scene.yaml").read_text()))
    frames = []
    for tag, fwd in (("t", True), ("next", False)):
        kw = {attr: read_field(d, f"{name}_{tag}") for name, attr in _FRAME_FIELDS.items()}
        kw["valid"] = kw["valid"].astype(bool)
        kw["surface_id"] = kw["surface_id"].astype(np.int64)
        suffix = "fwd" if fwd else "bwd"
        kw[f"flow_{suffix}"] = read_field(d, f"flow_{tag}")
        kw[f"sceneflow_{suffix}"] = read_field(d, f"sceneflow_{tag}")
        kw[f"occlusion_{suffix}"] = read_field(d, f"visible_{tag}").astype(bool)
        frames.append(oracle.RenderedFrame(**kw))
    return spec, frames[0], frames[1]


# ---------------------------------------------------------------- pipeline


def prepare(cfg: RunConfig) -> Scenario:
    if cfg.inputs.dir:
        spec, a, b = load_dataset(cfg.inputs.dir)
    else:
        spec = scene_from_config(cfg)
        a, b = oracle.render(spec)
    K, T = spec.intrinsics, spec.ego_motion
    sigma = cfg.inputs.flow_noise
    noisy = oracle.perturb({"f": a.flow_fwd, "b": b.flow_bwd}, {"f": sigma, "b": sigma}, cfg.seed)
    f, bw = noisy["f"], noisy["b"]

    if cfg.masks.source == "fb":
        mask = occlusion_mask(f, bw, cfg.masks.alpha1, cfg.masks.alpha2)
    elif cfg.masks.source == "gt":
        mask = a.visible.copy()
    else:
        mask = np.ones(a.depth.shape, dtype=bool)
    mask &= a.valid

    tri = triangulate_depth_map(f, T, K, cfg.masks.tau_parallax)
    init = init_from_triangulation(tri, fill=cfg.inputs.init_fill)

    gt = None
    if cfg.inputs.depth_labels or any(t in cfg.terms for t in ("depth", "opt", "scn", "nrm")):
        gt = {
            "depth": a.depth, "depth_valid": a.valid,
            "flow": a.flow_fwd, "flow_valid": a.visible,
            "sceneflow": a.sceneflow_fwd, "sceneflow_valid": a.valid,
            "normals": a.normals, "normals_valid": a.valid,
        }
    ref = f if cfg.inputs.reference_flow == "noisy" else a.flow_fwd
    inputs = ObjectiveInputs(
        image_t=a.image,
        image_next=b.image,
        pose=T,
        K=K,
        mask=mask,
        flow=ref,
        flow_bwd=bw if cfg.inputs.reference_flow == "noisy" else b.flow_bwd,
        motion_flow_bwd=b.flow_bwd if cfg.inputs.motion_flow_bwd or "rev_mot" in cfg.terms else None,
        depth_next=b.depth if cfg.inputs.depth_next or "reproj_depth" in cfg.terms else None,
        gt=gt,
    )
    return Scenario(spec, a, b, f, bw, mask, init, inputs)


def eval_region(cfg: RunConfig, sc: Scenario) -> np.ndarray:
    a = sc.frame_t
    region = a.valid.copy()
    ex = cfg.experiment
    if ex.eval_surface is not None:
        surf = a.surface_id == ex.eval_surface
        if ex.eval_erode > 0:
            surf = binary_erosion(surf, iterations=ex.eval_erode)
        region &= surf & sc.mask
    elif ex.eval_erode > 0:
        region &= binary_erosion(a.valid, iterations=ex.eval_erode)
    return region


def evaluate(cfg: RunConfig, sc: Scenario, state: VariationalState) -> dict:
    """Metrics record of ``state`` against the scenario's ground truth."""
    a, b = sc.frame_t, sc.frame_next
    K, T = sc.spec.intrinsics, sc.spec.ego_motion
    region = eval_region(cfg, sc)
    m = cfg.metrics
    depth = state.depth
    rec = depth_metrics(depth, a.depth, m.cap, m.median_scale, m.crop_box(), valid=region).to_record()
    init = depth_metrics(sc.init.depth, a.depth, m.cap, m.median_scale, m.crop_box(), valid=region)
    rec["init.depth.abs_rel"] = init.abs_rel
    rec["init.depth.rmse"] = init.rmse

    flow, ok = flow_from_motion(depth, state.sceneflow, T, K)
    fmask = region & ok & a.visible
    if fmask.any():
        rec.update(flow_metrics(flow, a.flow_fwd, fmask).to_record("flow."))
        sfe = np.linalg.norm(state.sceneflow - a.sceneflow_fwd, axis=-1)[fmask]
        rec["sceneflow.epe"] = float(np.mean(sfe))
        # second-frame depth of each point, read on the frame-t grid
        P = motion_points(depth, state.sceneflow, T, K)
        Pg = motion_points(a.depth, a.sceneflow_fwd, T, K)
        scale = m.disparity_scale or m.baseline * K.fx
        rec.update(sceneflow_metrics(
            depth, a.depth, P[..., 2], Pg[..., 2], flow, a.flow_fwd, fmask & (P[..., 2] > 0), scale
        ).to_record("sceneflow."))
    rec["eval.pixels"] = int(region.sum())
    rec["mask.fraction"] = float(sc.mask.mean())
    return rec


def run_experiment(cfg: RunConfig, sc: Scenario | None = None) -> Result:
    sc = sc or prepare(cfg)
    t0 = time.perf_counter()
    state, trace = run(sc.init, sc.inputs, cfg.optimizer_config())
    seconds = time.perf_counter() - t0
    rec = evaluate(cfg, sc, state)
    rec["iterations"] = len(trace) - 1
    rec["final.total"] = trace[-1]["total"]
    return Result(state, trace, rec, sc, seconds)


# ---------------------------------------------------------------- protocols


def recovery_config(**overrides) -> RunConfig:
    """Static-scene recovery: photometric + smoothness descent from noisy-flow triangulation."""
    base = {
        "seed": 7,
        "scene": {"preset": "static", "height": 64, "width": 96},
        "inputs": {"flow_noise": 0.25},
        "terms": ["photo_opt", "photo_mot", "smooth"],
        "weights": {"lambda_smth": 0.05},
        "optimizer": {"optimize_sceneflow": False},
        "experiment": {"name": "recovery"},
    }
    return from_dict(merge_dicts(base, overrides))


def sceneflow_ablation_config(sceneflow: bool = True, **overrides) -> RunConfig:
    """Moving-panel scene, real-batch terms (no labels), scene flow on or off."""
    base = {
        "seed": 7,
        "scene": {"preset": "moving", "height": 64, "width": 96},
        "inputs": {"flow_noise": 0.25},
        "terms": ["photo_mot", "smooth", "opt_mot", "rev_mot", "reproj_depth"],
        "weights": {"lambda_smth": 0.05},
        "optimizer": {"optimize_sceneflow": sceneflow},
        "experiment": {"name": "sf_on" if sceneflow else "sf_off", "eval_surface": 1},
    }
    return from_dict(merge_dicts(base, overrides))


def sceneflow_supervised_config(sceneflow: bool = True, **overrides) -> RunConfig:
    """As the ablation but with depth labels (synthetic-batch regime) and a
    stronger next-frame depth term, scored on the panel interior."""
    base = {
        "seed": 7,
        "scene": {"preset": "moving", "height": 64, "width": 96},
        "inputs": {"flow_noise": 0.25},
        "terms": ["photo_mot", "smooth", "opt_mot", "rev_mot", "reproj_depth", "depth"],
        "weights": {"lambda_smth": 0.05, "lambda_reproj_depth": 1.0},
        "optimizer": {"optimize_sceneflow": sceneflow},
        "experiment": {"name": "sup_sf_on" if sceneflow else "sup_sf_off", "eval_surface": 1, "eval_erode": 2},
    }
    return from_dict(merge_dicts(base, overrides))


def opt_mot_ablation_config(enabled: bool = True, **overrides) -> RunConfig:
    """Moving-panel scene with ground-truth reference flow, the flow/motion
    consistency term on or off, fixed iteration budget for both arms."""
    terms = ["photo_mot", "smooth", "rev_mot", "reproj_depth"] + (["opt_mot"] if enabled else [])
    base = {
        "seed": 7,
        "scene": {"preset": "moving", "height": 64, "width": 96},
        "inputs": {"flow_noise": 0.25, "reference_flow": "gt"},
        "terms": terms,
        "weights": {"lambda_smth": 0.05},
        "optimizer": {"tol": -1.0, "max_iter": 2000},
        "experiment": {"name": "opt_mot_on" if enabled else "opt_mot_off"},
    }
    return from_dict(merge_dicts(base, overrides))


def merge_dicts(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge_dicts(out[k], v)
        else:
            out[k] = v
    return out


PROTOCOLS = {
    "recovery": recovery_config,
    "sf_ablation": sceneflow_ablation_config,
    "sf_supervised": sceneflow_supervised_config,
    "opt_mot_ablation": opt_mot_ablation_config,
}
