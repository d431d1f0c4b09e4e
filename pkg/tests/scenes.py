"""Small meshes and cameras shared by the tests."""
import numpy as np

from avatar_forge.body_model import Pose
from avatar_forge.primitives import icosphere, rigid_model
from avatar_forge.rasterizer import Camera


def torus(n_major=20, n_minor=25, major=1.0, minor=0.4):
    """Closed torus in the x-y plane with outward winding; n_major * n_minor vertices."""
    a, b = np.meshgrid(np.arange(n_major) * 2 * np.pi / n_major,
                       np.arange(n_minor) * 2 * np.pi / n_minor, indexing="ij")
    r = major + minor * np.cos(b)
    v = np.stack([r * np.cos(a), r * np.sin(a), minor * np.sin(b)], axis=-1).reshape(-1, 3)
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            p = i * n_minor + j
            q = ((i + 1) % n_major) * n_minor + j
            p1 = i * n_minor + (j + 1) % n_minor
            q1 = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            faces += [(p, q, q1), (p, q1, p1)]
    return v, np.array(faces, dtype=np.int64)


def front_camera(size=64, distance=4.0, focal=None):
    focal = focal if focal is not None else size * 1.2
    return Camera.look_at([0, 0, -distance], [0, 0, 0], [0, 1, 0], focal, focal,
                          size / 2, size / 2, size, size)


def orbit_cameras(n, size=64, distance=4.0):
    """Cameras on a horizontal circle around the origin."""
    out = []
    for k in range(n):
        a = 2 * np.pi * k / n + 0.3
        eye = [distance * np.sin(a), 0.5, -distance * np.cos(a)]
        out.append(Camera.look_at(eye, [0, 0, 0], [0, 1, 0], size * 1.2, size * 1.2,
                                  size / 2, size / 2, size, size))
    return out


def sphere_model(subdivisions=3):
    v, f = icosphere(subdivisions)
    return rigid_model(v, f)


def identity_poses(n):
    return [Pose.identity(1) for _ in range(n)]
