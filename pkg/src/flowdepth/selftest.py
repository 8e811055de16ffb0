"""Quick invariant suite run by ``flowdepth selftest``.

Each check returns ``(ok, detail)``. The suite is a smoke-level subset of the
pytest suite that runs in a few seconds without test dependencies.
"""
from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_erosion

from . import io as fio
from . import oracle
from .geometry import Intrinsics, PoseTransform, backproject, compute_normals, flow_from_motion
from .geometry import pixel_grid, project, transform
from .losses import pair_report
from .metrics import depth_metrics
from .optimizer import ObjectiveInputs, OptimizerConfig, VariationalState, gradient, objective, run
from .sampling import bilinear_sample, occlusion_mask, warp_by_flow, warp_by_motion
from .triangulation import triangulate_depth_map


def _random_K(rng):
    return Intrinsics(rng.uniform(50, 500), rng.uniform(50, 500), rng.uniform(-50, 50), rng.uniform(-50, 50))


def check_roundtrip():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        K = _random_K(rng)
        x = rng.uniform(-100, 100, 2)
        worst = max(worst, np.abs(project(backproject(x, rng.uniform(0.1, 100), K), K) - x).max())
    return worst < 1e-9, f"max pixel error {worst:.2e}"


def check_rigidity():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(200):
        T = PoseTransform.from_rotvec(rng.normal(size=3), rng.normal(size=3))
        X, Y = rng.normal(size=3) * 10, rng.normal(size=3) * 10
        d0 = np.linalg.norm(X - Y)
        d1 = np.linalg.norm(transform(T, X) - transform(T, Y))
        back = transform(T.inverse(), transform(T, X))
        worst = max(worst, abs(d0 - d1), np.abs(back - X).max())
    return worst < 1e-9, f"max deviation {worst:.2e}"


def check_static_zero_flow():
    rng = np.random.default_rng(2)
    depth = rng.uniform(1, 50, (16, 24))
    flow, _ = flow_from_motion(depth, np.zeros((16, 24, 3)), PoseTransform.identity(), _random_K(rng))
    return bool(np.all(flow == 0)), "identity pose, zero scene flow"


def check_normals_unit():
    rng = np.random.default_rng(3)
    depth = rng.uniform(1, 20, (20, 30))
    n, ok = compute_normals(depth, Intrinsics(40, 40, 15, 10))
    err = np.abs(np.linalg.norm(n[ok], axis=-1) - 1).max()
    return err < 1e-6, f"max |n|-1 = {err:.2e}"


def check_triangulation():
    spec = oracle.static_scene(64, 96)
    a, _ = oracle.render(spec)
    tri = triangulate_depth_map(a.flow_fwd, spec.ego_motion, spec.intrinsics)
    rel = np.abs(tri.depth - a.depth)[tri.valid] / a.depth[tri.valid]
    frac = tri.valid.mean()
    return frac >= 0.99 and rel.mean() < 1e-6, f"valid {frac:.3f}, AbsRel {rel.mean():.2e}"


def check_dynamic_failure():
    spec = oracle.moving_plane_scene(64, 96)
    a, _ = oracle.render(spec)
    tri = triangulate_depth_map(a.flow_fwd, spec.ego_motion, spec.intrinsics)
    rel = np.where(tri.valid, np.abs(tri.depth - a.depth) / a.depth, 1.0)
    mov = a.surface_id == 1
    ratio = rel[mov].mean() / rel[~mov].mean()
    return ratio > 10, f"moving/static AbsRel ratio {ratio:.3g}"


def check_sampler():
    rng = np.random.default_rng(4)
    img = rng.random((12, 17, 3))
    same, _ = bilinear_sample(img, pixel_grid(12, 17))
    K = Intrinsics(20, 20, 8, 6)
    T = PoseTransform.from_rotvec([0.01, -0.02, 0.0], [0.1, 0.0, 0.05])
    d = rng.uniform(2, 5, (12, 17))
    s = rng.normal(scale=0.05, size=(12, 17, 3))
    w1, m1 = warp_by_motion(img, d, s, T, K)
    f, ok = flow_from_motion(d, s, T, K)
    w2, m2 = warp_by_flow(img, f)
    m2 &= ok
    w2[~m2] = 0
    err = np.abs(w1 - w2).max()
    return bool(np.array_equal(same, img)) and err < 1e-12 and np.array_equal(m1, m2), f"compose err {err:.1e}"


def check_occlusion():
    spec = oracle.occluder_scene(128, 192)
    a, b = oracle.render(spec)
    H, W = a.depth.shape
    g = pixel_grid(H, W) + a.flow_fwd
    inb = (g[..., 0] >= 0) & (g[..., 0] <= W - 1) & (g[..., 1] >= 0) & (g[..., 1] <= H - 1)
    pred = ~occlusion_mask(a.flow_fwd, b.flow_bwd) & inb
    true = ~a.visible & inb
    iou = (pred & true).sum() / (pred | true).sum()
    return iou >= 0.9, f"IoU {iou:.3f}"


def zero_on_gt_report():
    """Loss report on the integer-flow scene at ground truth, with exact-sampling masks."""
    spec = oracle.integer_flow_scene()
    a, b = oracle.render(spec)
    H, W = a.depth.shape
    safe = a.visible & oracle.sampling_safe(a, pixel_grid(H, W) + a.flow_fwd, b)
    # SSIM looks at a 3x3 neighbourhood
    mask = binary_erosion(safe, structure=np.ones((3, 3), bool), border_value=0)
    sid = a.surface_id
    same = np.ones((H, W), dtype=bool)
    same[:, :-1] &= sid[:, 1:] == sid[:, :-1]
    same[:-1] &= sid[1:] == sid[:-1]
    gt = {
        "depth": a.depth, "depth_valid": a.valid,
        "flow": a.flow_fwd, "flow_valid": a.visible,
        "sceneflow": a.sceneflow_fwd, "sceneflow_valid": a.valid,
        "normals": a.normals, "normals_valid": a.valid & same,
    }
    return pair_report(
        a.image, b.image, spec.ego_motion, spec.intrinsics, a.depth, a.sceneflow_fwd,
        flow=a.flow_fwd, flow_bwd=b.flow_bwd, motion_flow_bwd=b.flow_bwd,
        depth_next=b.depth, mask=mask, gt=gt,
    )


def check_zero_on_gt():
    rep = zero_on_gt_report()
    worst = max((v, k) for k, v in rep.terms.items() if k != "smooth")
    return worst[0] < 1e-6, f"largest term {worst[1]} = {worst[0]:.1e}"


def small_problem(seed=0, size=8, width=None):
    """Random state on a small moving scene with every term active."""
    spec = oracle.moving_plane_scene(size, width or size + size // 2)
    a, b = oracle.render(spec)
    rng = np.random.default_rng(seed)
    state = VariationalState.from_depth(
        a.depth * rng.uniform(0.9, 1.1, a.depth.shape),
        a.sceneflow_fwd + rng.normal(scale=0.05, size=a.sceneflow_fwd.shape),
    )
    gt = {
        "depth": a.depth, "depth_valid": a.valid, "flow": a.flow_fwd,
        "sceneflow": a.sceneflow_fwd, "normals": a.normals, "normals_valid": a.valid,
    }
    inputs = ObjectiveInputs(
        a.image, b.image, spec.ego_motion, spec.intrinsics, mask=a.valid,
        flow=a.flow_fwd + rng.normal(scale=0.3, size=a.flow_fwd.shape),
        motion_flow_bwd=b.flow_bwd, depth_next=b.depth, gt=gt,
    )
    cfg = OptimizerConfig(terms=("photo_mot", "smooth", "opt_mot", "rev_mot", "reproj_depth",
                                 "depth", "scn", "nrm"))
    return state, inputs, cfg


def finite_difference_check(state, inputs, cfg, n=100, h=1e-5, seed=0):
    """Compare analytic and central-difference partials on ``n`` random parameters.

    Returns a list of ``(kind, index, analytic, numeric, rel_err)``.
    """
    rng = np.random.default_rng(seed)
    g_l, g_s = gradient(state, inputs, cfg)
    out = []
    n_l = state.log_depth.size
    for flat in rng.choice(n_l + state.sceneflow.size, size=n, replace=False):
        s_p, s_m = state.copy(), state.copy()
        if flat < n_l:
            idx = np.unravel_index(flat, state.log_depth.shape)
            s_p.log_depth[idx] += h
            s_m.log_depth[idx] -= h
            ana, kind = g_l[idx], "log_depth"
        else:
            idx = np.unravel_index(flat - n_l, state.sceneflow.shape)
            s_p.sceneflow[idx] += h
            s_m.sceneflow[idx] -= h
            ana, kind = g_s[idx], "sceneflow"
        num = (objective(s_p, inputs, cfg).total - objective(s_m, inputs, cfg).total) / (2 * h)
        rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
        out.append((kind, idx, float(ana), float(num), rel))
    return out


def check_gradient():
    rows = finite_difference_check(*small_problem(), n=40)
    good = sum(r[4] < 1e-4 for r in rows)
    return good >= 0.99 * len(rows), f"{good}/{len(rows)} partials within 1e-4"


def check_metrics_boundary():
    gt = np.linspace(1, 50, 20).reshape(4, 5)
    m = depth_metrics(1.25 * gt, gt)
    return m.delta1 == 0.0 and m.delta2 == 1.0, f"delta1={m.delta1}, delta2={m.delta2}"


def check_formats():
    rng = np.random.default_rng(5)
    with tempfile.TemporaryDirectory() as d:
        a = rng.normal(size=(5, 6, 2)).astype(np.float32)
        fio.write_tensor(Path(d) / "a.drft", a)
        b = fio.read_tensor(Path(d) / "a.drft")
        flow = rng.uniform(-512, 511.98, (10, 12, 2))
        fio.write_kitti_flow_png(Path(d) / "f.png", flow)
        back, _ = fio.read_kitti_flow_png(Path(d) / "f.png")
    q = np.abs(back - flow).max()
    return a.tobytes() == b.tobytes() and q <= 1 / 128, f"flow quantisation {q:.4f} px"


def check_determinism():
    state, inputs, cfg = small_problem()
    cfg.max_iter = 15
    _, t1 = run(state, inputs, cfg)
    _, t2 = run(state, inputs, cfg)
    return t1 == t2, f"{len(t1)} trace rows"


CHECKS = {
    "project_backproject_roundtrip": check_roundtrip,
    "transform_rigidity": check_rigidity,
    "static_zero_flow": check_static_zero_flow,
    "normals_unit_length": check_normals_unit,
    "triangulation_static_oracle": check_triangulation,
    "triangulation_dynamic_failure": check_dynamic_failure,
    "sampler_identity_and_composition": check_sampler,
    "occlusion_iou": check_occlusion,
    "losses_zero_on_gt": check_zero_on_gt,
    "gradient_finite_differences": check_gradient,
    "metrics_delta_boundary": check_metrics_boundary,
    "format_roundtrips": check_formats,
    "optimizer_determinism": check_determinism,
}


def run_all(stream=None) -> bool:
    ok_all = True
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn()
        except Exception as e:  # a crash is a failure, not an abort
            ok, detail = False, f"{type(e).__name__}: {e}"
        ok_all &= bool(ok)
        if stream is not None:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}", file=stream)
    return ok_all
