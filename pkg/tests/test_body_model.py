import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from avatar_forge.body_model import (OffsetField, Pose, RiggedBodyModel, forward_kinematics,
                                     laplacian_apply, mesh_laplacian, pose_mesh, vertex_normals)
from avatar_forge.errors import InputError
from avatar_forge.primitives import icosphere, planar_grid, rigid_model


def chain_model(n_joints=3, n_verts=12, seed=0):
    """Random chain skeleton with random (<= 4 influence) skin weights."""
    rng = np.random.default_rng(seed)
    parents = np.arange(-1, n_joints - 1)
    offsets = rng.normal(0, 0.3, (n_joints, 3))
    offsets[0] = 0
    verts = rng.normal(0, 1, (n_verts, 3))
    w = np.zeros((n_verts, n_joints))
    for i in range(n_verts):
        cols = rng.choice(n_joints, size=min(4, n_joints), replace=False)
        w[i, cols] = rng.random(len(cols))
    w /= w.sum(axis=1, keepdims=True)
    faces = np.array([(i, i + 1, i + 2) for i in range(n_verts - 2)])
    dirs = rng.normal(0, 0.1, (n_verts, 3, 2))
    return RiggedBodyModel(verts, faces, np.full((len(faces), 3, 2), 0.5), parents, offsets, w,
                           dirs)


def random_pose(model, rng, scale=1.0):
    return Pose(rng.normal(0, scale, 3), rng.normal(0, scale, (model.n_joints, 3)))


def test_identity_pose_keeps_joints_at_rest():
    m = chain_model()
    fk = forward_kinematics(m, Pose.identity(m.n_joints))
    np.testing.assert_allclose(fk[:, :3, 3], m.rest_joint_positions(), atol=1e-12)


def test_two_joint_chain_rotated_root():
    m = RiggedBodyModel(np.zeros((1, 3)), np.zeros((0, 3)), np.zeros((0, 3, 2)), [-1, 0],
                        [(0, 0, 0), (1, 0, 0)], [[1.0, 0.0]])
    pose = Pose(np.zeros(3), [(0, 0, np.pi / 2), (0, 0, 0)])
    np.testing.assert_allclose(forward_kinematics(m, pose)[1, :3, 3], (0, 1, 0), atol=1e-12)


def test_root_translation_shifts_every_joint():
    m = chain_model()
    pose = Pose((0, 0, 5), np.zeros((m.n_joints, 3)))
    fk = forward_kinematics(m, pose)
    np.testing.assert_allclose(fk[:, :3, 3], m.rest_joint_positions() + (0, 0, 5), atol=1e-12)


def test_pose_length_mismatch_is_input_error():
    m = chain_model()
    with pytest.raises(InputError):
        forward_kinematics(m, Pose.identity(m.n_joints + 1))
    with pytest.raises(InputError):
        pose_mesh(m, Pose.identity(m.n_joints), offsets=np.zeros((3, 3)))


def test_identity_pose_mesh_is_rest():
    m = chain_model()
    np.testing.assert_allclose(pose_mesh(m, Pose.identity(m.n_joints)), m.rest_vertices,
                               atol=1e-12)


def test_single_bone_rotation():
    m = rigid_model(np.array([[1.0, 0, 0]]), np.zeros((0, 3)))
    out = pose_mesh(m, Pose(np.zeros(3), [(0, 0, np.pi / 2)]))
    np.testing.assert_allclose(out, [[0, 1, 0]], atol=1e-12)


def test_half_half_blend():
    m = RiggedBodyModel([[1.0, 0, 0]], np.zeros((0, 3)), np.zeros((0, 3, 2)), [-1, 0],
                        np.zeros((2, 3)), [[0.5, 0.5]])
    out = pose_mesh(m, Pose(np.zeros(3), [(0, 0, 0), (0, 0, np.pi / 2)]))
    np.testing.assert_allclose(out, [[0.5, 0.5, 0]], atol=1e-12)


def test_lbs_matches_per_vertex_loop():
    # oracle: rebuild every joint's world transform by hand, then blend per vertex
    m = chain_model(4, 10, seed=3)
    rng = np.random.default_rng(5)
    pose = random_pose(m, rng)
    shape = rng.normal(size=2)
    d = rng.normal(0, 0.05, (10, 3))
    world_r, world_t = {}, {}
    for j, p in enumerate(m.parents):
        r = Rotation.from_rotvec(pose.joint_rotations[j]).as_matrix()
        if p < 0:
            world_r[j], world_t[j] = r, m.joint_offsets[j] + pose.root_translation
        else:
            world_r[j] = world_r[p] @ r
            world_t[j] = world_t[p] + world_r[p] @ m.joint_offsets[j]
    rest = m.rest_joint_positions()
    src = m.rest_vertices + m.shape_dirs @ shape + d
    expected = np.zeros_like(src)
    for i in range(len(src)):
        for j in range(m.n_joints):
            expected[i] += m.skin_weights[i, j] * (world_r[j] @ (src[i] - rest[j]) + world_t[j])
    np.testing.assert_allclose(pose_mesh(m, pose, shape, OffsetField(d)), expected, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_rigid_equivariance(seed):
    m = chain_model(3, 8, seed=1)
    rng = np.random.default_rng(seed)
    pose = random_pose(m, rng)
    base = pose_mesh(m, pose)
    r = Rotation.from_rotvec(rng.normal(size=3))
    t = rng.normal(size=3)
    rot = pose.joint_rotations.copy()
    rot[0] = (r * Rotation.from_rotvec(rot[0])).as_rotvec()
    # root joint sits at its rest offset; rotate about the world origin instead
    root = m.joint_offsets[0]
    moved = Pose(r.apply(pose.root_translation + root) - root + t, rot)
    np.testing.assert_allclose(pose_mesh(m, moved), r.apply(base) + t, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_pose_mesh_is_linear_in_offsets(seed):
    m = chain_model(3, 8, seed=2)
    rng = np.random.default_rng(seed)
    pose = random_pose(m, rng)
    d1, d2 = rng.normal(size=(2, 8, 3))
    zero = pose_mesh(m, pose)
    lhs = pose_mesh(m, pose, offsets=d1 + d2) - zero
    rhs = (pose_mesh(m, pose, offsets=d1) - zero) + (pose_mesh(m, pose, offsets=d2) - zero)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_planar_triangle_normals():
    n, deg = vertex_normals(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]), [[0, 1, 2]])
    np.testing.assert_allclose(n, np.tile([0, 0, 1.0], (3, 1)))
    assert not deg.any()


def test_icosphere_normals_are_radial():
    v, f = icosphere(3)
    n, _ = vertex_normals(v, f)
    cos = np.sum(n * v / np.linalg.norm(v, axis=1, keepdims=True), axis=1)
    assert np.degrees(np.arccos(np.clip(cos, -1, 1))).max() < 5.0


def test_degenerate_triangle_is_flagged():
    v = np.array([[1.0, 2, 3]] * 3)
    n, deg = vertex_normals(v, [[0, 1, 2], [0, 1, 2]])
    assert deg.all()
    np.testing.assert_array_equal(n, np.tile([0, 0, 1.0], (3, 1)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_normals_are_unit_or_flagged(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(10, 3))
    f = rng.integers(0, 10, (14, 3))
    n, deg = vertex_normals(v, f)
    np.testing.assert_allclose(np.linalg.norm(n[~deg], axis=1), 1.0, atol=1e-6)


def test_grid_interior_laplacian_is_zero():
    v, f = planar_grid(5)
    delta, iso = laplacian_apply(v, f)
    assert not iso.any()
    # interior vertex (2, 2) has a symmetric 6-neighbourhood
    np.testing.assert_allclose(delta[2 * 5 + 2], 0.0, atol=1e-12)


def test_laplacian_reference_cases():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [-1, 0, 0]])
    delta, _ = laplacian_apply(v, [[0, 1, 0], [0, 2, 0]])
    np.testing.assert_allclose(delta[0], 0.0, atol=1e-12)
    v = np.array([[0.0, 0, 0], [2, 0, 0], [5, 5, 5]])
    delta, iso = laplacian_apply(v, [[0, 1, 1]])
    np.testing.assert_allclose(delta[0], (2, 0, 0))
    assert iso[2] and not iso[0]
    np.testing.assert_array_equal(delta[2], 0.0)


def test_laplacian_matches_dense_adjacency_oracle():
    rng = np.random.default_rng(7)
    v, f = icosphere(1)
    v = v + rng.normal(0, 0.1, v.shape)
    adj = np.zeros((len(v), len(v)), bool)
    for a, b, c in f:
        for i, j in ((a, b), (b, c), (c, a)):
            adj[i, j] = adj[j, i] = True
    expected = np.array([v[adj[i]].mean(axis=0) - v[i] for i in range(len(v))])
    np.testing.assert_allclose(laplacian_apply(v, f)[0], expected, atol=1e-12)
    lap, _ = mesh_laplacian(f, len(v))
    np.testing.assert_allclose(lap @ v, expected, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_coincident_vertices_have_zero_laplacian(seed):
    rng = np.random.default_rng(seed)
    v = np.tile(rng.normal(size=3), (8, 1))
    f = rng.integers(0, 8, (10, 3))
    np.testing.assert_allclose(laplacian_apply(v, f)[0], 0.0, atol=1e-12)


@pytest.mark.parametrize("change", [
    dict(skin_weights=[[0.5, 0.6]]),
    dict(skin_weights=[[-0.5, 1.5]]),
    dict(parents=[-1, -1]),
    dict(parents=[1, 0]),
    dict(triangles=[[0, 0, 3]], uv_coords=np.zeros((1, 3, 2))),
    dict(triangles=[[0, 0, 0]], uv_coords=np.full((1, 3, 2), 1.5)),
])
def test_model_invariants_are_enforced(change):
    args = dict(rest_vertices=[[0.0, 0, 0]], triangles=np.zeros((0, 3)),
                uv_coords=np.zeros((0, 3, 2)), parents=[-1, 0],
                joint_offsets=np.zeros((2, 3)), skin_weights=[[1.0, 0.0]])
    args.update(change)
    with pytest.raises(InputError):
        RiggedBodyModel(**args)


def test_more_than_four_influences_rejected():
    with pytest.raises(InputError):
        RiggedBodyModel([[0.0, 0, 0]], np.zeros((0, 3)), np.zeros((0, 3, 2)),
                        [-1, 0, 1, 2, 3], np.zeros((5, 3)), [[0.2] * 5])


def test_pose_and_offsets_reject_non_finite():
    with pytest.raises(InputError):
        Pose((0, 0, np.nan), np.zeros((1, 3)))
    with pytest.raises(InputError):
        OffsetField(np.array([[np.inf, 0, 0]]))
