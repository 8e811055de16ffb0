import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowdepth import oracle
from flowdepth.geometry import (
    BehindCameraError,
    Intrinsics,
    PoseTransform,
    backproject,
    compute_normals,
    flow_from_motion,
    pixel_grid,
    project,
    transform,
)

finite = dict(allow_nan=False, allow_infinity=False)
focal = st.floats(10, 1000, **finite)
centre = st.floats(-100, 100, **finite)
intrinsics = st.builds(Intrinsics, focal, focal, centre, centre)
vec3 = st.lists(st.floats(-10, 10, **finite), min_size=3, max_size=3).map(np.array)
rotvec = st.lists(st.floats(-3, 3, **finite), min_size=3, max_size=3)
poses = st.builds(PoseTransform.from_rotvec, rotvec, vec3)


def test_backproject_principal_point():
    K = Intrinsics(300.0, 250.0, 47.5, 31.5)
    np.testing.assert_array_equal(backproject([K.cx, K.cy], 5.0, K), [0.0, 0.0, 5.0])


def test_backproject_identity_intrinsics():
    np.testing.assert_array_equal(backproject([2.0, 1.0], 3.0, Intrinsics.identity()), [6, 3, 3])


def test_backproject_rejects_non_positive_depth():
    with pytest.raises(ValueError):
        backproject([0.0, 0.0], 0.0, Intrinsics.identity())


def test_project_examples():
    K = Intrinsics(300.0, 250.0, 47.5, 31.5)
    np.testing.assert_array_equal(project([0, 0, 5], K), [K.cx, K.cy])
    np.testing.assert_array_equal(project([6, 3, 3], Intrinsics.identity()), [2, 1])


@pytest.mark.parametrize("z", [1e-12, 0.0, -1.0])
def test_project_behind_camera(z):
    with pytest.raises(BehindCameraError):
        project([1.0, 1.0, z], Intrinsics.identity())


@given(intrinsics, st.floats(-500, 500, **finite), st.floats(-500, 500, **finite),
       st.floats(0.01, 100, **finite))
def test_project_backproject_roundtrip(K, u, v, d):
    x = np.array([u, v])
    np.testing.assert_allclose(project(backproject(x, d, K), K), x, rtol=0, atol=1e-9)


def test_roundtrip_1000_random_samples():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        K = Intrinsics(*rng.uniform(50, 500, 2), *rng.uniform(-50, 50, 2))
        x = rng.uniform(-100, 100, 2)
        assert np.abs(project(backproject(x, rng.uniform(0.1, 100), K), K) - x).max() < 1e-9


def test_transform_examples():
    np.testing.assert_array_equal(transform(PoseTransform.identity(), [1, 2, 3]), [1, 2, 3])
    T = PoseTransform(np.eye(3), [-1, 0, 0])
    np.testing.assert_array_equal(transform(T, [0, 0, 2]), [-1, 0, 2])


@given(poses, vec3, vec3)
def test_transform_rigidity_and_inverse(T, X, Y):
    d0 = np.linalg.norm(X - Y)
    d1 = np.linalg.norm(transform(T, X) - transform(T, Y))
    assert abs(d0 - d1) < 1e-9
    np.testing.assert_allclose(transform(T.inverse(), transform(T, X)), X, atol=1e-9)


@given(poses, poses, vec3)
def test_compose_applies_right_operand_first(A, B, X):
    np.testing.assert_allclose(transform(A.compose(B), X), transform(A, transform(B, X)), atol=1e-9)


def test_pose_rejects_non_rotation():
    with pytest.raises(ValueError):
        PoseTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        PoseTransform(np.eye(3) * 1.01, np.zeros(3))


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(0.0, 1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        Intrinsics(1.0, np.nan, 0.0, 0.0)


@given(intrinsics, st.integers(0, 2**32 - 1))
def test_static_camera_static_scene_gives_exactly_zero_flow(K, seed):
    depth = np.random.default_rng(seed).uniform(0.5, 80, (6, 7))
    flow, ok = flow_from_motion(depth, np.zeros((6, 7, 3)), PoseTransform.identity(), K)
    assert ok.all()
    assert np.all(flow == 0.0)


def test_flow_from_motion_single_point():
    flow, ok = flow_from_motion(
        np.ones((1, 1)), np.array([[[1.0, 0.0, 0.0]]]), PoseTransform.identity(), Intrinsics.identity()
    )
    assert ok.all()
    np.testing.assert_allclose(flow[0, 0], [1.0, 0.0], atol=1e-15)


def test_flow_from_motion_behind_camera_masked():
    depth = np.full((2, 2), 1.0)
    T = PoseTransform(np.eye(3), [0, 0, -2.0])
    flow, ok = flow_from_motion(depth, np.zeros((2, 2, 3)), T, Intrinsics(10, 10, 0.5, 0.5))
    assert not ok.any()
    assert np.all(flow == 0)


def test_flow_from_motion_shape_mismatch():
    with pytest.raises(ValueError):
        flow_from_motion(np.ones((3, 4)), np.zeros((3, 5, 3)), PoseTransform.identity(),
                         Intrinsics.identity())


@pytest.mark.parametrize("scene", ["static64", "moving64", "occluder64"])
def test_flow_from_motion_matches_rendered_flow(scene, request):
    spec, a, _ = request.getfixturevalue(scene)
    flow, ok = flow_from_motion(a.depth, a.sceneflow_fwd, spec.ego_motion, spec.intrinsics, a.valid)
    assert np.abs(flow - a.flow_fwd)[ok].max() < 1e-6


def test_normals_of_constant_depth():
    n, ok = compute_normals(np.full((5, 6), 3.0), Intrinsics.identity())
    assert ok.all()
    np.testing.assert_allclose(n, np.broadcast_to([0.0, 0.0, 1.0], n.shape), atol=1e-15)


def test_normals_match_slanted_plane(static64):
    spec, a, _ = static64
    n, ok = compute_normals(a.depth, spec.intrinsics)
    bg = spec.surfaces[0].normal
    bg = bg * np.sign(bg[2])
    # interior background pixels whose 2x2 stencil stays on the background
    sid = a.surface_id
    same = (sid == 0)
    same[:-1, :-1] &= (sid[1:, :-1] == 0) & (sid[:-1, 1:] == 0)
    same[-1, :] = same[:, -1] = False
    sel = ok & same
    assert sel.sum() > 1000
    assert np.abs(n[sel] - bg).max() < 1e-4


def test_normals_unit_next_to_depth_spike():
    depth = np.full((7, 7), 4.0)
    depth[3, 3] = 40.0
    n, ok = compute_normals(depth, Intrinsics(5.0, 5.0, 3.0, 3.0))
    np.testing.assert_allclose(np.linalg.norm(n[ok], axis=-1), 1.0, atol=1e-12)
    assert ok[2:5, 2:5].all()


@given(st.integers(0, 2**32 - 1))
def test_normals_unit_length_random_depth(seed):
    depth = np.random.default_rng(seed).uniform(0.5, 50, (8, 9))
    n, ok = compute_normals(depth, Intrinsics(20.0, 20.0, 4.0, 3.5))
    np.testing.assert_allclose(np.linalg.norm(n[ok], axis=-1), 1.0, atol=1e-9)
    assert np.all(n[ok][:, 2] >= 0)


def test_normals_invalid_depth_flagged():
    depth = np.full((4, 4), 2.0)
    depth[1, 1] = 0.0
    n, ok = compute_normals(depth, Intrinsics.identity())
    # the stencil at (y, x) reads (y, x), (y, x+1) and (y+1, x)
    assert not ok[1, 1] and not ok[1, 0] and not ok[0, 1]
    assert ok[0, 0] and ok[2, 2]
    assert np.all(n[~ok] == 0)


def test_pixel_grid_convention():
    g = pixel_grid(2, 3)
    np.testing.assert_array_equal(g[0, 0], [0, 0])
    np.testing.assert_array_equal(g[1, 2], [2, 1])
