"""Command-line driver.

Exit status: 0 on success, 1 on invalid arguments or configuration, 2 on
file or format errors.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from . import config as cfgmod
from . import experiments as E
from . import io as fio
from . import oracle, selftest
from .geometry import Intrinsics, PoseTransform
from .losses import pair_report
from .metrics import depth_metrics, flow_metrics
from .optimizer import trace_to_csv
from .sampling import occlusion_mask
from .triangulation import triangulate_depth_map

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--format", choices=("drft", "png"), default="drft",
                   help="encoding for written fields")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="flowdepth", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("gen", help="render a two-frame scene to a dataset directory")
    _common(p)
    p.add_argument("--preset", choices=sorted(oracle.PRESETS), help="overrides scene.preset")

    p = sub.add_parser("triangulate", help="depth from optical flow and pose")
    _common(p)
    p.add_argument("--data", help="dataset directory from `gen` (flow, pose, intrinsics)")
    p.add_argument("--flow", help="flow file (.drft or KITTI .png); needs --scene")
    p.add_argument("--scene", help="scene.yaml supplying pose and intrinsics")
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian flow noise (px) added first")

    p = sub.add_parser("masks", help="forward-backward occlusion masks")
    _common(p)
    p.add_argument("--data", help="dataset directory from `gen`")
    p.add_argument("--fwd", help="forward flow file")
    p.add_argument("--bwd", help="backward flow file")

    p = sub.add_parser("losses", help="loss report of depth / scene flow estimates")
    _common(p)
    p.add_argument("--data", required=True, help="dataset directory from `gen`")
    p.add_argument("--depth", help="depth estimate (defaults to ground truth)")
    p.add_argument("--sceneflow", help="scene-flow estimate (defaults to ground truth)")

    p = sub.add_parser("optimize", help="variational depth / scene-flow estimation")
    _common(p)
    p.add_argument("--protocol", choices=sorted(E.PROTOCOLS), help="start from a built-in experiment")
    p.add_argument("--data", help="dataset directory from `gen` instead of rendering")

    p = sub.add_parser("eval", help="metrics of a prediction against ground truth")
    _common(p)
    p.add_argument("--pred", required=True, help="predicted depth file")
    p.add_argument("--gt", help="ground-truth depth file")
    p.add_argument("--data", help="dataset directory supplying ground truth")
    p.add_argument("--pred-flow", help="predicted flow file (needs --data)")

    p = sub.add_parser("selftest", help="run the built-in invariant checks")
    _common(p)
    return ap


# ---------------------------------------------------------------- helpers


def _config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
    if getattr(args, "protocol", None):
        base = E.PROTOCOLS[args.protocol]()
        cfg = base if not args.config else cfgmod.from_dict(E.merge_dicts(base.to_dict(), _raw(args.config)))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out = args.out
    return cfg


def _raw(path) -> dict:
    return yaml.safe_load(Path(path).read_text()) or {}


def _outdir(cfg) -> Path:
    d = Path(cfg.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _read_any(path, kind: str) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".drft":
        a = fio.read_tensor(path)
        return a if a.dtype == bool else a.astype(np.float64)
    if path.suffix == ".png":
        if kind == "depth":
            return fio.read_depth_png16(path)[0]
        if kind == "flow":
            return fio.read_kitti_flow_png(path)[0]
        return fio.read_mask_png(path)
    raise fio.FormatError(f"{path}: unknown extension (expected .drft or .png)")


def _write_field(out: Path, name: str, arr, kind: str, fmt: str, valid=None) -> Path:
    if fmt == "png" and kind in ("depth", "flow", "mask"):
        p = out / f"{name}.png"
        if kind == "depth":
            fio.write_depth_png16(p, arr, valid)
        elif kind == "flow":
            fio.write_kitti_flow_png(p, arr, valid)
        else:
            fio.write_mask_png(p, arr)
    else:
        p = out / f"{name}.drft"
        fio.write_tensor(p, arr)
    return p


def _scene_camera(path) -> tuple[Intrinsics, PoseTransform]:
    spec = oracle.SceneSpec.from_dict(_raw(path))
    return spec.intrinsics, spec.ego_motion


def _emit(out: Path, name: str, record: dict):
    fio.write_record(out / name, record)
    sys.stdout.write(fio.format_record(record))


# ---------------------------------------------------------------- commands


def cmd_gen(args):
    cfg = _config(args)
    if args.preset:
        cfg.scene.preset = args.preset
        cfg.scene.spec = None
    spec = E.scene_from_config(cfg)
    a, b = oracle.render(spec)
    out = _outdir(cfg)
    E.save_dataset(out, spec, a, b, args.format)
    print(f"wrote {out}")


def cmd_triangulate(args):
    cfg = _config(args)
    if args.data:
        K, T = _scene_camera(Path(args.data) / "scene.yaml")
        flow = E.read_field(args.data, "flow_t")
    elif args.flow and args.scene:
        K, T = _scene_camera(args.scene)
        flow = _read_any(args.flow, "flow")
    else:
        raise UsageError("triangulate needs --data or both --flow and --scene")
    if args.noise:
        flow = oracle.perturb({"flow": flow}, {"flow": args.noise}, cfg.seed)["flow"]
    tri = triangulate_depth_map(flow, T, K, cfg.masks.tau_parallax)
    out = _outdir(cfg)
    _write_field(out, "depth", tri.depth, "depth", args.format, tri.valid)
    _write_field(out, "valid", tri.valid, "mask", args.format)
    fio.write_tensor(out / "parallax.drft", tri.parallax)
    _emit(out, "triangulation.txt", {"valid_fraction": float(tri.valid.mean())})


def cmd_masks(args):
    cfg = _config(args)
    if args.data:
        fwd, bwd = E.read_field(args.data, "flow_t"), E.read_field(args.data, "flow_next")
    elif args.fwd and args.bwd:
        fwd, bwd = _read_any(args.fwd, "flow"), _read_any(args.bwd, "flow")
    else:
        raise UsageError("masks needs --data or both --fwd and --bwd")
    m_f = occlusion_mask(fwd, bwd, cfg.masks.alpha1, cfg.masks.alpha2)
    m_b = occlusion_mask(bwd, fwd, cfg.masks.alpha1, cfg.masks.alpha2)
    out = _outdir(cfg)
    _write_field(out, "visible_fwd", m_f, "mask", args.format)
    _write_field(out, "visible_bwd", m_b, "mask", args.format)
    _emit(out, "masks.txt", {"visible_fwd": float(m_f.mean()), "visible_bwd": float(m_b.mean())})


def cmd_losses(args):
    cfg = _config(args)
    spec, a, b = E.load_dataset(args.data)
    depth = _read_any(args.depth, "depth") if args.depth else a.depth
    sf = _read_any(args.sceneflow, "sceneflow") if args.sceneflow else a.sceneflow_fwd
    gt = {
        "depth": a.depth, "depth_valid": a.valid, "flow": a.flow_fwd, "flow_valid": a.visible,
        "sceneflow": a.sceneflow_fwd, "sceneflow_valid": a.valid,
        "normals": a.normals, "normals_valid": a.valid,
    }
    rep = pair_report(
        a.image, b.image, spec.ego_motion, spec.intrinsics, np.where(a.valid, depth, 1.0), sf,
        flow=a.flow_fwd, flow_bwd=b.flow_bwd, motion_flow_bwd=b.flow_bwd, depth_next=b.depth,
        mask=a.visible & a.valid, gt=gt, terms=cfg.terms if args.config else None,
        weights=cfg.weights, alpha_ssim=cfg.optimizer.alpha_ssim, huber_beta=cfg.optimizer.huber_beta,
    )
    _emit(_outdir(cfg), "losses.txt", rep.to_record())


def cmd_optimize(args):
    cfg = _config(args)
    if args.data:
        cfg.inputs.dir = args.data
    res = E.run_experiment(cfg)
    out = _outdir(cfg)
    a = res.scenario.frame_t
    _write_field(out, "depth", res.state.depth, "depth", args.format, a.valid)
    fio.write_tensor(out / "sceneflow.drft", res.state.sceneflow)
    (out / "trace.csv").write_text(trace_to_csv(res.trace))
    (out / "config.yaml").write_text(cfgmod.dump(cfg))
    _emit(out, "metrics.txt", res.record)


def cmd_eval(args):
    cfg = _config(args)
    pred = _read_any(args.pred, "depth")
    if args.gt:
        gt = _read_any(args.gt, "depth")
        valid = gt > 0
    elif args.data:
        gt = E.read_field(args.data, "depth_t")
        valid = E.read_field(args.data, "valid_t").astype(bool)
    else:
        raise UsageError("eval needs --gt or --data")
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    m = cfg.metrics
    rec = depth_metrics(pred, gt, m.cap, m.median_scale, m.crop_box(), valid=valid).to_record()
    if args.pred_flow:
        if not args.data:
            raise UsageError("--pred-flow needs --data")
        fl = _read_any(args.pred_flow, "flow")
        vis = E.read_field(args.data, "visible_t").astype(bool)
        rec.update(flow_metrics(fl, E.read_field(args.data, "flow_t"), vis).to_record())
    _emit(_outdir(cfg), "metrics.txt", rec)


def cmd_selftest(args):
    _config(args)
    return EXIT_OK if selftest.run_all(sys.stdout) else EXIT_INVALID


COMMANDS = {
    "gen": cmd_gen,
    "triangulate": cmd_triangulate,
    "masks": cmd_masks,
    "losses": cmd_losses,
    "optimize": cmd_optimize,
    "eval": cmd_eval,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        rc = COMMANDS[args.command](args)
        return EXIT_OK if rc is None else rc
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, yaml.YAMLError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
