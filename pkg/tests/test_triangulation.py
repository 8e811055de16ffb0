import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowdepth import oracle
from flowdepth.geometry import Intrinsics, PoseTransform, flow_from_motion
from flowdepth.triangulation import least_squares_depth, triangulate_depth_map, triangulate_pixel

finite = dict(allow_nan=False, allow_infinity=False)


def test_pixel_example():
    T = PoseTransform(np.eye(3), [-1.0, 0.0, 0.0])
    d, parallax, valid = triangulate_pixel([0.0, 0.0], [-0.5, 0.0], T, Intrinsics.identity())
    assert d == 2.0
    assert parallax == pytest.approx(0.5)
    assert valid


def test_pure_rotation_is_invalid():
    K = Intrinsics(100.0, 100.0, 20.0, 15.0)
    T = PoseTransform.from_rotvec([0.0, 0.02, 0.0], [0.0, 0.0, 0.0])
    flow, _ = flow_from_motion(np.full((8, 8), 5.0), np.zeros((8, 8, 3)), T, K)
    tri = triangulate_depth_map(flow, T, K)
    assert not tri.valid.any()
    assert np.all(tri.depth == 0)


def test_zero_flow_identity_pose_all_invalid():
    tri = triangulate_depth_map(np.zeros((5, 6, 2)), PoseTransform.identity(), Intrinsics.identity())
    assert not tri.valid.any()
    assert np.all(tri.parallax == 0)


def test_negative_solution_flagged_invalid():
    T = PoseTransform(np.eye(3), [-1.0, 0.0, 0.0])
    d, _, valid = triangulate_pixel([0.0, 0.0], [0.5, 0.0], T, Intrinsics.identity())
    assert d < 0 and not valid


def test_static_oracle_10k_pixels():
    spec = oracle.static_scene(100, 100)
    a, _ = oracle.render(spec)
    tri = triangulate_depth_map(a.flow_fwd, spec.ego_motion, spec.intrinsics)
    assert tri.valid.sum() >= 0.99 * 10_000
    rel = np.abs(tri.depth - a.depth)[tri.valid] / a.depth[tri.valid]
    assert rel.max() < 1e-6


def test_static_oracle_abs_rel(static64):
    spec, a, _ = static64
    tri = triangulate_depth_map(a.flow_fwd, spec.ego_motion, spec.intrinsics)
    rel = np.abs(tri.depth - a.depth)[tri.valid] / a.depth[tri.valid]
    assert rel.mean() < 1e-6


def test_moving_plane_breaks_triangulation(moving64):
    spec, a, _ = moving64
    tri = triangulate_depth_map(a.flow_fwd, spec.ego_motion, spec.intrinsics)
    rel = np.where(tri.valid, np.abs(tri.depth - a.depth) / a.depth, 1.0)
    moving = a.surface_id == 1
    static = a.valid & ~moving
    assert rel[moving].mean() > 10 * rel[static].mean()


@given(st.floats(0.05, 20, **finite), st.integers(0, 2**32 - 1))
def test_scale_equivariance(k, seed):
    rng = np.random.default_rng(seed)
    K = Intrinsics(80.0, 80.0, 9.5, 7.5)
    T = PoseTransform.from_rotvec(rng.normal(scale=0.02, size=3), rng.normal(scale=0.5, size=3))
    flow, _ = flow_from_motion(rng.uniform(2, 30, (16, 20)), np.zeros((16, 20, 3)), T, K)
    base = triangulate_depth_map(flow, T, K)
    scaled = triangulate_depth_map(flow, PoseTransform(T.rotation, k * T.translation), K)
    np.testing.assert_array_equal(base.valid, scaled.valid)
    np.testing.assert_allclose(scaled.depth[base.valid], k * base.depth[base.valid], rtol=1e-12)


vec3 = st.lists(st.floats(-1e3, 1e3, **finite), min_size=3, max_size=3).map(np.array)


@given(vec3, vec3)
def test_sign_robustness(a, b):
    assert least_squares_depth(a, b) == least_squares_depth(-a, -b)


def test_least_squares_depth_zero_coefficient():
    assert least_squares_depth(np.zeros(3), np.ones(3)) == 0.0


@pytest.mark.parametrize("bad", [np.zeros((4, 4)), np.zeros((4, 4, 3))])
def test_depth_map_rejects_bad_shape(bad):
    with pytest.raises(ValueError):
        triangulate_depth_map(bad, PoseTransform.identity(), Intrinsics.identity())


def test_depth_map_rejects_non_finite():
    f = np.zeros((3, 3, 2))
    f[1, 1, 0] = np.nan
    with pytest.raises(ValueError):
        triangulate_depth_map(f, PoseTransform.identity(), Intrinsics.identity())


def test_tau_controls_validity(static64):
    spec, a, _ = static64
    tri = triangulate_depth_map(a.flow_fwd, spec.ego_motion, spec.intrinsics, tau=1e9)
    assert not tri.valid.any()
