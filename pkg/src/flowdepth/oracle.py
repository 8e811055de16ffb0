"""Procedural planar scenes with analytically exact ground truth.

A scene is a list of finite textured planes seen by a camera that moves by
``ego_motion`` between t and t+1, while each plane may move rigidly in the
first camera's frame. Rays are intersected analytically, textures are
continuous functions of plane coordinates, so every quantity (depth, flow,
scene flow, occlusion, normals) can be evaluated exactly at any real
coordinate.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import (
    Intrinsics,
    PoseTransform,
    flow_from_motion,
    pixel_grid,
    project_dense,
    transform,
)

EPS_OCC = 1e-4


def _reject_unknown(d: dict, allowed: set, what: str):
    extra = set(d) - allowed
    if extra:
        raise ValueError(f"unknown {what} keys: {sorted(extra)}")


@dataclass
class Texture:
    checker_period: float = 3.0
    checker_sharpness: float = 3.0
    noise_amplitude: float = 0.4
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.checker_period <= 0 or self.noise_scale <= 0:
            raise ValueError("texture periods must be positive")
        if not 0 <= self.noise_amplitude <= 1:
            raise ValueError("noise_amplitude must lie in [0, 1]")


@dataclass
class Plane:
    """Finite plane ``origin + a*axis_u + b*axis_v`` with ``|a| <= extent[0]``, ``|b| <= extent[1]``.

    ``motion`` moves the plane rigidly (in the first camera frame) from t to t+1.
    """

    origin: np.ndarray
    axis_u: np.ndarray
    axis_v: np.ndarray
    extent: tuple[float, float] = (np.inf, np.inf)
    motion: PoseTransform = field(default_factory=PoseTransform.identity)
    texture: Texture = field(default_factory=Texture)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        u = np.asarray(self.axis_u, dtype=np.float64).reshape(3)
        v = np.asarray(self.axis_v, dtype=np.float64).reshape(3)
        # already orthonormal axes are kept bit-for-bit so a saved scene re-renders identically
        if max(abs(u @ u - 1), abs(v @ v - 1), abs(u @ v)) > 1e-12:
            u = u / np.linalg.norm(u)
            v = v - (v @ u) * u
            if np.linalg.norm(v) < 1e-12:
                raise ValueError("plane axes must not be parallel")
            v = v / np.linalg.norm(v)
        self.axis_u, self.axis_v = u, v
        self.extent = (float(self.extent[0]), float(self.extent[1]))
        if not (self.extent[0] > 0 and self.extent[1] > 0):
            raise ValueError("plane extent must be positive")

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.axis_u, self.axis_v)

    def to_dict(self) -> dict:
        return {
            "origin": self.origin.tolist(),
            "axis_u": self.axis_u.tolist(),
            "axis_v": self.axis_v.tolist(),
            # unbounded extents are written as null
            "extent": [e if np.isfinite(e) else None for e in self.extent],
            "motion": self.motion.to_dict(),
            "texture": asdict(self.texture),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Plane:
        _reject_unknown(d, {"origin", "axis_u", "axis_v", "extent", "motion", "texture"}, "plane")
        extent = d.get("extent") or (None, None)
        return cls(
            origin=d["origin"],
            axis_u=d.get("axis_u", [1, 0, 0]),
            axis_v=d.get("axis_v", [0, 1, 0]),
            extent=tuple(np.inf if e is None else e for e in extent),
            motion=PoseTransform.from_dict(d["motion"]) if d.get("motion") else PoseTransform.identity(),
            texture=Texture(**(d.get("texture") or {})),
        )


@dataclass
class SceneSpec:
    intrinsics: Intrinsics
    height: int
    width: int
    ego_motion: PoseTransform = field(default_factory=PoseTransform.identity)
    surfaces: list[Plane] = field(default_factory=list)

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ValueError("image must be at least 2x2")
        if not self.surfaces:
            raise ValueError("scene needs at least one surface")

    def to_dict(self) -> dict:
        return {
            "intrinsics": self.intrinsics.to_dict(),
            "height": self.height,
            "width": self.width,
            "ego_motion": self.ego_motion.to_dict(),
            "surfaces": [p.to_dict() for p in self.surfaces],
        }

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        _reject_unknown(d, {"intrinsics", "height", "width", "ego_motion", "surfaces"}, "scene")
        return cls(
            intrinsics=Intrinsics(**d["intrinsics"]),
            height=int(d["height"]),
            width=int(d["width"]),
            ego_motion=PoseTransform.from_dict(d["ego_motion"]) if d.get("ego_motion") else PoseTransform.identity(),
            surfaces=[Plane.from_dict(p) for p in d["surfaces"]],
        )


@dataclass
class RenderedFrame:
    """Ground truth for one frame. Forward quantities (to the other frame) are
    set on the first frame, backward ones on the second."""

    image: np.ndarray
    depth: np.ndarray
    valid: np.ndarray
    surface_id: np.ndarray
    normals: np.ndarray
    flow_fwd: np.ndarray | None = None
    flow_bwd: np.ndarray | None = None
    sceneflow_fwd: np.ndarray | None = None
    sceneflow_bwd: np.ndarray | None = None
    occlusion_fwd: np.ndarray | None = None
    occlusion_bwd: np.ndarray | None = None

    @property
    def flow(self):
        return self.flow_fwd if self.flow_fwd is not None else self.flow_bwd

    @property
    def sceneflow(self):
        return self.sceneflow_fwd if self.sceneflow_fwd is not None else self.sceneflow_bwd

    @property
    def visible(self):
        """Pixels co-visible in the other frame."""
        return self.occlusion_fwd if self.occlusion_fwd is not None else self.occlusion_bwd


# ---------------------------------------------------------------- texture


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


def _value_noise(a, b, scale, seed):
    table = np.random.default_rng(seed).uniform(-1.0, 1.0, size=(256, 256))
    x, y = a / scale, b / scale
    x0, y0 = np.floor(x), np.floor(y)
    fx, fy = _fade(x - x0), _fade(y - y0)
    i0 = np.mod(x0, 256).astype(np.intp)
    j0 = np.mod(y0, 256).astype(np.intp)
    i1, j1 = (i0 + 1) % 256, (j0 + 1) % 256
    top = table[j0, i0] * (1 - fx) + table[j0, i1] * fx
    bot = table[j1, i0] * (1 - fx) + table[j1, i1] * fx
    return top * (1 - fy) + bot * fy


def texture_value(a, b, tex: Texture) -> np.ndarray:
    """Intensity in [0, 1] at plane coordinates (a, b), continuous everywhere."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w = np.pi / tex.checker_period
    checker = 0.5 + 0.5 * np.tanh(tex.checker_sharpness * np.sin(w * a) * np.sin(w * b))
    noise = 0.5 * _value_noise(a, b, tex.noise_scale, tex.seed)
    noise += 0.25 * _value_noise(a, b, tex.noise_scale / 2.0, tex.seed + 1)
    noise = 0.5 + noise / 1.5  # [-0.75, 0.75] -> [0, 1]
    return 0.1 + 0.8 * ((1 - tex.noise_amplitude) * checker + tex.noise_amplitude * noise)


# ---------------------------------------------------------------- ray casting


def _planes_at(spec: SceneSpec, time: int):
    """Plane (origin, u, v) in the camera frame of ``time`` (0 = t, 1 = t+1)."""
    out = []
    for p in spec.surfaces:
        o, u, v = p.origin, p.axis_u, p.axis_v
        if time == 1:
            M = p.motion
            T = spec.ego_motion
            o = transform(T, transform(M, o))
            R = T.rotation @ M.rotation
            u, v = R @ u, R @ v
        out.append((o, u, v))
    return out


def raycast(spec: SceneSpec, coords: np.ndarray, time: int = 0):
    """Nearest surface hit for pixel coordinates ``coords`` (..., 2) at ``time``.

    Returns:
        ``(depth, surface_id, a, b)``; ``surface_id`` is -1 where nothing is hit.
    """
    K = spec.intrinsics
    coords = np.asarray(coords, dtype=np.float64)
    r = np.stack(
        [(coords[..., 0] - K.cx) / K.fx, (coords[..., 1] - K.cy) / K.fy, np.ones(coords.shape[:-1])],
        axis=-1,
    )
    depth = np.full(coords.shape[:-1], np.inf)
    sid = np.full(coords.shape[:-1], -1, dtype=np.int64)
    a_out = np.zeros(coords.shape[:-1])
    b_out = np.zeros(coords.shape[:-1])
    finite = np.all(np.isfinite(coords), axis=-1)
    for k, ((o, u, v), plane) in enumerate(zip(_planes_at(spec, time), spec.surfaces)):
        n = np.cross(u, v)
        denom = r @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (o @ n) / denom
        X = r * lam[..., None]
        a = (X - o) @ u
        b = (X - o) @ v
        hit = (
            finite
            & (np.abs(denom) > 1e-12)
            & (lam > 1e-6)
            & (np.abs(a) <= plane.extent[0])
            & (np.abs(b) <= plane.extent[1])
            & (lam < depth)
        )
        depth = np.where(hit, lam, depth)
        sid = np.where(hit, k, sid)
        a_out = np.where(hit, a, a_out)
        b_out = np.where(hit, b, b_out)
    depth = np.where(sid >= 0, depth, 0.0)
    return depth, sid, a_out, b_out


def _shade(spec: SceneSpec, sid, a, b) -> np.ndarray:
    img = np.zeros(sid.shape)
    for k, plane in enumerate(spec.surfaces):
        m = sid == k
        if np.any(m):
            img[m] = texture_value(a[m], b[m], plane.texture)
    return img


def _plane_normals(spec: SceneSpec, sid, time: int) -> np.ndarray:
    n = np.zeros(sid.shape + (3,))
    for k, (o, u, v) in enumerate(_planes_at(spec, time)):
        nk = np.cross(u, v)
        if nk[2] < 0:
            nk = -nk
        n[sid == k] = nk
    return n


def _render_single(spec: SceneSpec, time: int):
    H, W = spec.height, spec.width
    grid = pixel_grid(H, W)
    depth, sid, a, b = raycast(spec, grid, time)
    valid = sid >= 0
    image = _shade(spec, sid, a, b)[..., None]
    normals = _plane_normals(spec, sid, time)
    return grid, depth, sid, valid, image, normals


def _motion_to_other(spec: SceneSpec, depth, sid, time: int):
    """Scene flow of each hit point towards the other time, in this camera's frame."""
    K = spec.intrinsics
    H, W = depth.shape
    g = pixel_grid(H, W)
    X = np.stack([(g[..., 0] - K.cx) / K.fx, (g[..., 1] - K.cy) / K.fy, np.ones((H, W))], -1)
    X = X * depth[..., None]
    sf = np.zeros_like(X)
    T = spec.ego_motion
    for k, plane in enumerate(spec.surfaces):
        m = sid == k
        if not np.any(m):
            continue
        if time == 0:
            sf[m] = transform(plane.motion, X[m]) - X[m]
        else:
            world = transform(T.inverse(), X[m])
            back = transform(plane.motion.inverse(), world)
            sf[m] = transform(T, back) - X[m]
    return sf


def _visibility(spec: SceneSpec, depth, sid, sf, pose: PoseTransform, other_time: int):
    H, W = depth.shape
    K = spec.intrinsics
    g = pixel_grid(H, W)
    X = np.stack([(g[..., 0] - K.cx) / K.fx, (g[..., 1] - K.cy) / K.fy, np.ones((H, W))], -1)
    P = transform(pose, X * np.where(sid >= 0, depth, 1.0)[..., None] + sf)
    coords, in_front = project_dense(P, K)
    x, y = coords[..., 0], coords[..., 1]
    inb = in_front & (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)
    other_depth, other_sid, _, _ = raycast(spec, np.where(inb[..., None], coords, 0.0), other_time)
    same = (other_sid == sid) & (np.abs(other_depth - P[..., 2]) < EPS_OCC)
    return (sid >= 0) & inb & same


def render(spec: SceneSpec) -> tuple[RenderedFrame, RenderedFrame]:
    """Render frames t and t+1 with all ground-truth fields.

    Raises:
        AssertionError: if the rendered flow disagrees with the depth / scene
            flow / pose it was derived from (should never happen).
    """
    K = spec.intrinsics
    T = spec.ego_motion
    frames = []
    for time, pose in ((0, T), (1, T.inverse())):
        _, depth, sid, valid, image, normals = _render_single(spec, time)
        sf = _motion_to_other(spec, depth, sid, time)
        sf[~valid] = 0.0
        flow, ok = flow_from_motion(depth, sf, pose, K, valid)
        vis = _visibility(spec, depth, sid, sf, pose, 1 - time) & ok
        frames.append((image, depth, valid, sid, normals, flow, sf, vis, ok))

    (i0, d0, v0, s0, n0, f0, sf0, vis0, ok0), (i1, d1, v1, s1, n1, f1, sf1, vis1, ok1) = frames
    H, W = d0.shape
    for time, flow, ok in ((0, f0, ok0), (1, f1, ok1)):
        direct, _ = analytic_flow(spec, pixel_grid(H, W), time)
        err = np.abs(direct - flow)[ok]
        assert err.size == 0 or err.max() < 1e-9 * max(1.0, np.abs(flow).max()), err.max()
    frame_t = RenderedFrame(
        image=i0, depth=d0, valid=v0, surface_id=s0, normals=n0,
        flow_fwd=f0, sceneflow_fwd=sf0, occlusion_fwd=vis0,
    )
    frame_n = RenderedFrame(
        image=i1, depth=d1, valid=v1, surface_id=s1, normals=n1,
        flow_bwd=f1, sceneflow_bwd=sf1, occlusion_bwd=vis1,
    )
    return frame_t, frame_n


def analytic_flow(spec: SceneSpec, coords: np.ndarray, time: int = 0):
    """Exact flow of the surface seen at arbitrary real ``coords`` at ``time``."""
    K = spec.intrinsics
    depth, sid, _, _ = raycast(spec, coords, time)
    r = np.stack(
        [(coords[..., 0] - K.cx) / K.fx, (coords[..., 1] - K.cy) / K.fy, np.ones(coords.shape[:-1])],
        -1,
    )
    X = r * np.where(sid >= 0, depth, 1.0)[..., None]
    pose = spec.ego_motion if time == 0 else spec.ego_motion.inverse()
    out = np.zeros(coords.shape[:-1] + (2,))
    for k, plane in enumerate(spec.surfaces):
        m = sid == k
        if not np.any(m):
            continue
        if time == 0:
            moved = transform(plane.motion, X[m])
        else:
            moved = transform(
                spec.ego_motion,
                transform(plane.motion.inverse(), transform(spec.ego_motion.inverse(), X[m])),
            )
        P = transform(pose, moved)
        c, _ = project_dense(P, K)
        out[m] = c - coords[m]
    return out, sid >= 0


def sampling_safe(frame: RenderedFrame, coords: np.ndarray, other: RenderedFrame) -> np.ndarray:
    """Pixels whose bilinear footprint at ``coords`` in ``other`` lies on their own surface.

    Bilinear interpolation of piecewise-smooth ground truth is only exact away
    from surface boundaries; consistency checks on exact data use this mask.
    """
    H, W = frame.depth.shape
    x, y = coords[..., 0], coords[..., 1]
    ok = np.isfinite(x) & np.isfinite(y) & (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)
    xs, ys = np.where(ok, x, 0), np.where(ok, y, 0)
    x0 = np.clip(np.floor(xs), 0, W - 2).astype(np.intp)
    y0 = np.clip(np.floor(ys), 0, H - 2).astype(np.intp)
    sid = frame.surface_id
    for dy in (0, 1):
        for dx in (0, 1):
            ok &= other.surface_id[y0 + dy, x0 + dx] == sid
    return ok


# ---------------------------------------------------------------- perturbation


def perturb(fields: dict[str, np.ndarray], noise: dict[str, float], seed: int) -> dict:
    """Add seeded Gaussian noise with per-field sigma; fields not in ``noise`` pass through.

    Raises:
        ValueError: on a negative sigma or a noise entry naming a missing field.
    """
    for name, sigma in noise.items():
        if sigma < 0:
            raise ValueError(f"negative sigma for {name}: {sigma}")
        if name not in fields:
            raise ValueError(f"no field named {name!r}")
    rng = np.random.default_rng(seed)
    out = {}
    for name in sorted(fields):
        arr = np.asarray(fields[name], dtype=np.float64)
        sigma = noise.get(name, 0.0)
        if sigma > 0:
            out[name] = arr + rng.normal(0.0, sigma, size=arr.shape)
        else:
            out[name] = arr.copy()
    return out


# ---------------------------------------------------------------- scene presets


def _fronto(depth, x=0.0, y=0.0, extent=(np.inf, np.inf), motion=None, seed=0, period=1.0):
    return Plane(
        origin=[x, y, depth],
        axis_u=[1, 0, 0],
        axis_v=[0, 1, 0],
        extent=extent,
        motion=motion or PoseTransform.identity(),
        texture=Texture(checker_period=period, seed=seed),
    )


def default_intrinsics(height: int, width: int) -> Intrinsics:
    f = 0.9 * width
    return Intrinsics(f, f, (width - 1) / 2.0 + 0.25, (height - 1) / 2.0 - 0.25)


def static_scene(height=64, width=96, seed=0) -> SceneSpec:
    """Textured slanted background plus a nearer tilted panel, general camera motion."""
    K = default_intrinsics(height, width)
    background = Plane(
        origin=[0.0, 0.0, 12.0],
        axis_u=[1.0, 0.0, 0.25],
        axis_v=[0.0, 1.0, -0.15],
        texture=Texture(checker_period=4.8, seed=seed),
    )
    panel = Plane(
        origin=[-1.0, 0.3, 6.0],
        axis_u=[1.0, 0.0, -0.3],
        axis_v=[0.0, 1.0, 0.1],
        extent=(1.6, 1.2),
        texture=Texture(checker_period=2.4, noise_scale=0.6, seed=seed + 7),
    )
    ego = PoseTransform.from_rotvec([0.004, -0.01, 0.002], [-0.45, 0.06, 0.3])
    return SceneSpec(K, height, width, ego, [background, panel])


def moving_plane_scene(height=64, width=96, seed=0) -> SceneSpec:
    """Static slanted background and one panel translating independently."""
    spec = static_scene(height, width, seed)
    panel = spec.surfaces[1]
    panel.motion = PoseTransform.from_rotvec([0, 0, 0], [0.6, -0.15, -0.4])
    return spec


def occluder_scene(height=64, width=96, seed=0) -> SceneSpec:
    """Near fronto-parallel occluder in front of a far background under lateral motion."""
    K = default_intrinsics(height, width)
    bg = _fronto(20.0, seed=seed, period=2.0)
    fg = _fronto(4.0, x=-0.3, extent=(1.0, 0.8), seed=seed + 3, period=0.5)
    ego = PoseTransform.from_rotvec([0, 0, 0], [-0.5, 0.0, 0.0])
    return SceneSpec(K, height, width, ego, [bg, fg])


def integer_flow_scene(height=32, width=48, seed=0) -> SceneSpec:
    """Fronto-parallel planes whose exact flows are whole pixels.

    Bilinear resampling of the rendered images at the true flow is then
    exact, so every loss (photometric included) vanishes on ground truth.
    """
    K = Intrinsics(50.0, 50.0, (width - 1) / 2.0, (height - 1) / 2.0)
    bg = _fronto(10.0, seed=seed, period=0.9)
    fg = _fronto(
        5.0, x=-0.2, extent=(0.9, 0.5), seed=seed + 5, period=0.4,
        motion=PoseTransform.from_rotvec([0, 0, 0], [0.2, 0.1, 0.0]),
    )
    ego = PoseTransform.from_rotvec([0, 0, 0], [0.4, -0.2, 0.0])
    return SceneSpec(K, height, width, ego, [bg, fg])


PRESETS = {
    "static": static_scene,
    "moving": moving_plane_scene,
    "occluder": occluder_scene,
    "integer": integer_flow_scene,
}
