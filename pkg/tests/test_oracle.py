import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from flowdepth import oracle
from flowdepth.geometry import Intrinsics, PoseTransform, flow_from_motion, pixel_grid
from flowdepth.triangulation import triangulate_depth_map


def _single_plane(translation, H=24, W=32):
    K = Intrinsics(40.0, 40.0, (W - 1) / 2, (H - 1) / 2)
    plane = oracle.Plane([0, 0, 5.0], [1, 0, 0], [0, 1, 0])
    return oracle.SceneSpec(K, H, W, PoseTransform(np.eye(3), translation), [plane])


def test_single_static_plane():
    spec = _single_plane([0.0, 0.0, 0.0])
    a, b = oracle.render(spec)
    for fr in (a, b):
        assert np.all(fr.depth == 5.0)
        assert np.all(fr.flow == 0.0)
        assert np.all(fr.sceneflow == 0.0)
        assert fr.visible.all()
    np.testing.assert_allclose(a.normals, np.broadcast_to([0, 0, 1.0], a.normals.shape))


def test_lateral_translation_parallax():
    spec = _single_plane([-1.0, 0.0, 0.0])
    a, b = oracle.render(spec)
    fx = spec.intrinsics.fx
    np.testing.assert_allclose(np.abs(a.flow_fwd[..., 0]), fx * 1.0 / 5.0, rtol=1e-12)
    np.testing.assert_allclose(a.flow_fwd[..., 1], 0.0, atol=1e-12)
    np.testing.assert_allclose(b.flow_bwd, -a.flow_fwd, atol=1e-12)


def test_occluded_band_width():
    K = Intrinsics(60.0, 60.0, 47.5, 31.5)
    bg = oracle.Plane([0, 0, 20.0], [1, 0, 0], [0, 1, 0])
    fg = oracle.Plane([0, 0, 4.0], [1, 0, 0], [0, 1, 0], extent=(1.0, 0.8),
                      motion=PoseTransform(np.eye(3), [0.3, 0.0, 0.0]))
    a, _ = oracle.render(oracle.SceneSpec(K, 64, 96, PoseTransform.identity(), [bg, fg]))
    occluded = ~a.visible & (a.surface_id == 0)
    rows = occluded.sum(axis=1)
    band = K.fx * 0.3 / 4.0
    crossing = rows[rows > 0]
    assert crossing.size > 10
    assert np.all(np.abs(crossing - band) <= 1.0)
    # only background pixels in the panel's rows get covered
    assert np.all(rows[(a.surface_id == 1).sum(axis=1) == 0] == 0)


@pytest.mark.parametrize("preset", sorted(oracle.PRESETS))
def test_flow_consistent_with_depth_and_sceneflow(preset):
    spec = oracle.PRESETS[preset](48, 64)
    a, b = oracle.render(spec)
    f, ok = flow_from_motion(a.depth, a.sceneflow_fwd, spec.ego_motion, spec.intrinsics, a.valid)
    assert np.abs(f - a.flow_fwd)[ok].max() < 1e-9
    f, ok = flow_from_motion(b.depth, b.sceneflow_bwd, spec.ego_motion.inverse(), spec.intrinsics, b.valid)
    assert np.abs(f - b.flow_bwd)[ok].max() < 1e-9


@pytest.mark.parametrize("preset", sorted(oracle.PRESETS))
def test_forward_backward_exactness(preset):
    spec = oracle.PRESETS[preset](48, 64)
    a, _ = oracle.render(spec)
    H, W = a.depth.shape
    target = pixel_grid(H, W) + a.flow_fwd
    back, ok = oracle.analytic_flow(spec, target[a.visible], time=1)
    assert ok.all()
    assert np.abs(a.flow_fwd[a.visible] + back).max() < 1e-6


def test_static_render_triangulates_back(static64):
    spec, a, _ = static64
    tri = triangulate_depth_map(a.flow_fwd, spec.ego_motion, spec.intrinsics)
    assert tri.valid.mean() >= 0.99
    assert np.max(np.abs(tri.depth - a.depth)[tri.valid] / a.depth[tri.valid]) < 1e-6


def test_render_is_deterministic_and_seeded():
    a1, _ = oracle.render(oracle.static_scene(32, 48, seed=3))
    a2, _ = oracle.render(oracle.static_scene(32, 48, seed=3))
    a3, _ = oracle.render(oracle.static_scene(32, 48, seed=4))
    assert a1.image.tobytes() == a2.image.tobytes()
    assert not np.array_equal(a1.image, a3.image)
    np.testing.assert_array_equal(a1.depth, a3.depth)


def test_texture_has_dense_gradient(static64):
    _, a, _ = static64
    gx = np.abs(np.diff(a.image, axis=1))
    assert (gx > 1e-6).mean() > 0.95


def test_moving_scene_sceneflow(moving64):
    spec, a, _ = moving64
    panel = a.surface_id == 1
    np.testing.assert_allclose(a.sceneflow_fwd[panel], np.broadcast_to([0.6, -0.15, -0.4], (panel.sum(), 3)),
                               atol=1e-12)
    assert np.all(a.sceneflow_fwd[a.surface_id == 0] == 0)


@pytest.mark.parametrize("preset", sorted(oracle.PRESETS))
def test_scene_spec_roundtrip(preset):
    spec = oracle.PRESETS[preset](16, 24, seed=2)
    text = yaml.safe_dump(spec.to_dict())
    back = oracle.SceneSpec.from_dict(yaml.safe_load(text))
    a1, _ = oracle.render(spec)
    a2, _ = oracle.render(back)
    assert a1.image.tobytes() == a2.image.tobytes()
    assert a1.depth.tobytes() == a2.depth.tobytes()


def test_scene_spec_rejects_unknown_keys():
    d = oracle.static_scene(8, 8).to_dict()
    d["surfaces"][0]["colour"] = "red"
    with pytest.raises(ValueError):
        oracle.SceneSpec.from_dict(d)


def test_perturb_zero_sigma_is_identity():
    f = {"depth": np.full((4, 4), 5.0)}
    out = oracle.perturb(f, {"depth": 0.0}, seed=1)
    np.testing.assert_array_equal(out["depth"], f["depth"])
    assert out["depth"] is not f["depth"]


def test_perturb_is_deterministic():
    f = {"depth": np.full((8, 8), 5.0), "flow": np.zeros((8, 8, 2))}
    n = {"depth": 0.1, "flow": 0.5}
    a, b = oracle.perturb(f, n, seed=9), oracle.perturb(f, n, seed=9)
    for k in f:
        assert a[k].tobytes() == b[k].tobytes()


def test_perturb_statistics():
    out = oracle.perturb({"depth": np.full((100, 100), 5.0)}, {"depth": 0.1}, seed=0)
    std = np.std(out["depth"] - 5.0)
    assert abs(std - 0.1) < 0.005


@given(st.integers(0, 2**32 - 1))
def test_perturb_passes_through_unlisted_fields(seed):
    f = {"a": np.ones(3), "b": np.zeros(3)}
    out = oracle.perturb(f, {"a": 1.0}, seed)
    np.testing.assert_array_equal(out["b"], f["b"])


def test_perturb_errors():
    with pytest.raises(ValueError):
        oracle.perturb({"a": np.ones(2)}, {"a": -1.0}, 0)
    with pytest.raises(ValueError):
        oracle.perturb({"a": np.ones(2)}, {"b": 1.0}, 0)


def test_texture_validation():
    with pytest.raises(ValueError):
        oracle.Texture(checker_period=0)
    with pytest.raises(ValueError):
        oracle.Texture(noise_amplitude=1.5)
