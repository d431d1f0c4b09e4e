"""Articulated body mesh: skeleton, linear blend skinning, normals, Laplacian.

Conventions: meters, right-handed world frame with +y up. Joint rotations are
axis-angle vectors in the parent frame. Offsets (clothing displacements) are
added in the rest pose, before shape blending is skinned.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial.transform import Rotation

from .errors import InputError


@dataclass(frozen=True)
class RiggedBodyModel:
    rest_vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (F, 3) int
    uv_coords: np.ndarray  # (F, 3, 2) per-corner
    parents: np.ndarray  # (J,) int, -1 for the root
    joint_offsets: np.ndarray  # (J, 3) rest offset from the parent joint
    skin_weights: np.ndarray  # (V, J) row-stochastic, <= 4 nonzeros per row
    shape_dirs: np.ndarray = None  # (V, 3, B)
    joint_names: tuple = field(default=())

    def __post_init__(self):
        v = np.asarray(self.rest_vertices, dtype=np.float64)
        f = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        uv = np.asarray(self.uv_coords, dtype=np.float64).reshape(-1, 3, 2)
        parents = np.asarray(self.parents, dtype=np.int64)
        offsets = np.asarray(self.joint_offsets, dtype=np.float64)
        w = np.asarray(self.skin_weights, dtype=np.float64)
        n_v, n_j = len(v), len(parents)
        dirs = self.shape_dirs
        dirs = np.zeros((n_v, 3, 0)) if dirs is None else np.asarray(dirs, dtype=np.float64)
        for name, value in [("rest_vertices", v), ("triangles", f), ("uv_coords", uv),
                            ("parents", parents), ("joint_offsets", offsets),
                            ("skin_weights", w), ("shape_dirs", dirs)]:
            object.__setattr__(self, name, value)
        if v.ndim != 2 or v.shape[1] != 3:
            raise InputError("rest_vertices must be (V, 3)")
        if len(uv) != len(f):
            raise InputError("uv_coords must hold one uv triple per triangle")
        if f.size and (f.min() < 0 or f.max() >= n_v):
            raise InputError("triangle index out of range")
        if uv.size and (uv.min() < 0.0 or uv.max() > 1.0):
            raise InputError("uv_coords must lie in [0, 1]^2")
        if offsets.shape != (n_j, 3):
            raise InputError("joint_offsets must be (J, 3)")
        if w.shape != (n_v, n_j):
            raise InputError(f"skin_weights must be ({n_v}, {n_j}), got {w.shape}")
        if (w < 0).any() or not np.allclose(w.sum(axis=1), 1.0, atol=1e-6, rtol=0):
            raise InputError("skin_weights rows must be non-negative and sum to 1")
        if (np.count_nonzero(w, axis=1) > 4).any():
            raise InputError("skin_weights allow at most 4 influences per vertex")
        if dirs.shape[:2] != (n_v, 3):
            raise InputError("shape_dirs must be (V, 3, B)")
        object.__setattr__(self, "_order", _topological_order(parents))

    @property
    def n_vertices(self):
        return len(self.rest_vertices)

    @property
    def n_joints(self):
        return len(self.parents)

    @property
    def n_shape(self):
        return self.shape_dirs.shape[2]

    def rest_joint_positions(self):
        pos = np.zeros((self.n_joints, 3))
        for j in self._order:
            p = self.parents[j]
            pos[j] = self.joint_offsets[j] + (pos[p] if p >= 0 else 0.0)
        return pos


@dataclass(frozen=True)
class Pose:
    root_translation: np.ndarray  # (3,)
    joint_rotations: np.ndarray  # (J, 3) axis-angle, radians

    def __post_init__(self):
        t = np.asarray(self.root_translation, dtype=np.float64).reshape(3)
        r = np.asarray(self.joint_rotations, dtype=np.float64)
        if r.ndim != 2 or r.shape[1] != 3:
            raise InputError("joint_rotations must be (J, 3)")
        if not (np.isfinite(t).all() and np.isfinite(r).all()):
            raise InputError("pose entries must be finite")
        object.__setattr__(self, "root_translation", t)
        object.__setattr__(self, "joint_rotations", r)

    @classmethod
    def identity(cls, n_joints):
        return cls(np.zeros(3), np.zeros((n_joints, 3)))


@dataclass(frozen=True)
class OffsetField:
    offsets: np.ndarray  # (V, 3), rest-pose frame

    def __post_init__(self):
        d = np.asarray(self.offsets, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] != 3 or not np.isfinite(d).all():
            raise InputError("offsets must be a finite (V, 3) array")
        object.__setattr__(self, "offsets", d)

    @classmethod
    def zeros(cls, n_vertices):
        return cls(np.zeros((n_vertices, 3)))


def _topological_order(parents):
    roots = np.flatnonzero(parents < 0)
    if len(roots) != 1:
        raise InputError(f"skeleton needs exactly one root joint, found {len(roots)}")
    if (parents >= len(parents)).any():
        raise InputError("parent index out of range")
    children = [[] for _ in parents]
    for j, p in enumerate(parents):
        if p >= 0:
            children[p].append(j)
    order, stack = [], [int(roots[0])]
    while stack:
        j = stack.pop()
        order.append(j)
        stack.extend(reversed(children[j]))
    if len(order) != len(parents):
        raise InputError("skeleton contains a cycle or disconnected joints")
    return tuple(order)


def _check_pose(model, pose):
    if pose.joint_rotations.shape[0] != model.n_joints:
        raise InputError(
            f"pose has {pose.joint_rotations.shape[0]} joints, model has {model.n_joints}")


def forward_kinematics(model, pose):
    """World transforms of every joint as a (J, 4, 4) array.

    Rotations are composed as quaternions, then expanded to matrices.
    """
    _check_pose(model, pose)
    local = Rotation.from_rotvec(pose.joint_rotations)
    glob_rot = [None] * model.n_joints
    out = np.tile(np.eye(4), (model.n_joints, 1, 1))
    for j in model._order:
        p = model.parents[j]
        if p < 0:
            glob_rot[j] = local[j]
            out[j, :3, 3] = model.joint_offsets[j] + pose.root_translation
        else:
            glob_rot[j] = glob_rot[p] * local[j]
            out[j, :3, 3] = out[p, :3, 3] + glob_rot[p].apply(model.joint_offsets[j])
        out[j, :3, :3] = glob_rot[j].as_matrix()
    return out


def skinning_transforms(model, pose):
    """Per-joint transforms mapping rest-pose points to posed points, (J, 4, 4)."""
    world = forward_kinematics(model, pose)
    rest = model.rest_joint_positions()
    out = world.copy()
    out[:, :3, 3] -= np.einsum("jab,jb->ja", world[:, :3, :3], rest)
    return out


def blended_transforms(model, pose):
    """Skin-weight blend of the joint transforms, one (3, 4) matrix per vertex.

    The left 3x3 block is also the Jacobian of a posed vertex with respect to
    its rest-pose offset.
    """
    a = skinning_transforms(model, pose)[:, :3, :]
    return np.einsum("vj,jab->vab", model.skin_weights, a)


def shaped_rest_vertices(model, shape=None, offsets=None):
    v = model.rest_vertices.copy()
    if shape is not None and len(shape):
        shape = np.asarray(shape, dtype=np.float64)
        if shape.shape != (model.n_shape,):
            raise InputError(f"shape must have {model.n_shape} entries")
        v += model.shape_dirs @ shape
    if offsets is not None:
        d = offsets.offsets if isinstance(offsets, OffsetField) else np.asarray(offsets, float)
        if d.shape != v.shape:
            raise InputError(f"offsets must be {v.shape}, got {d.shape}")
        v += d
    return v


def pose_mesh(model, pose, shape=None, offsets=None):
    """Linear blend skinning of the shaped, offset rest mesh. Returns (V, 3)."""
    v = shaped_rest_vertices(model, shape, offsets)
    t = blended_transforms(model, pose)
    return np.einsum("vab,vb->va", t[:, :, :3], v) + t[:, :, 3]


def vertex_normals(vertices, triangles, eps=1e-12):
    """Area-weighted vertex normals.

    Returns ``(normals, degenerate)``; degenerate vertices get (0, 0, 1).
    """
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    acc = np.zeros_like(v)
    if len(f):
        fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        for k in range(3):
            np.add.at(acc, f[:, k], fn)
    norm = np.linalg.norm(acc, axis=1)
    degenerate = norm <= eps
    out = np.zeros_like(v)
    out[~degenerate] = acc[~degenerate] / norm[~degenerate, None]
    out[degenerate] = (0.0, 0.0, 1.0)
    return out, degenerate


def mesh_laplacian(triangles, n_vertices):
    """Uniform graph Laplacian ``L = D^-1 A - I`` as a sparse matrix.

    Also returns the boolean mask of isolated vertices (their rows are zero).
    """
    f = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    i = np.concatenate([f[:, 0], f[:, 1], f[:, 2], f[:, 1], f[:, 2], f[:, 0]])
    j = np.concatenate([f[:, 1], f[:, 2], f[:, 0], f[:, 0], f[:, 1], f[:, 2]])
    keep = i != j
    adj = sp.coo_matrix((np.ones(keep.sum()), (i[keep], j[keep])),
                        shape=(n_vertices, n_vertices)).tocsr()
    adj.data[:] = 1.0  # duplicates from shared edges collapse to 1
    deg = np.asarray(adj.sum(axis=1)).ravel()
    isolated = deg == 0
    inv = np.where(isolated, 0.0, 1.0 / np.maximum(deg, 1))
    diag = np.where(isolated, 0.0, 1.0)
    lap = sp.diags(inv) @ adj - sp.diags(diag)
    return lap.tocsr(), isolated


def laplacian_apply(vertices, triangles):
    """Mean of the 1-ring minus the vertex, per vertex.

    Returns ``(delta, isolated)``; isolated vertices yield zero vectors.
    """
    v = np.asarray(vertices, dtype=np.float64)
    lap, isolated = mesh_laplacian(triangles, len(v))
    return lap @ v, isolated
