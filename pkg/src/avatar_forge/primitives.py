"""Small procedural meshes used by tests, demos and the sphere fitting run."""
import numpy as np

from .body_model import RiggedBodyModel


def icosphere(subdivisions=2, radius=1.0):
    """Geodesic sphere; returns ``(vertices, triangles)`` with outward winding."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts) * radius, np.array(faces, dtype=np.int64)


def planar_grid(n=5, spacing=1.0):
    """Regular triangulated n x n grid in the z = 0 plane."""
    ys, xs = np.mgrid[0:n, 0:n]
    verts = np.stack([xs.ravel() * spacing, ys.ravel() * spacing, np.zeros(n * n)], axis=1)
    faces = []
    for r in range(n - 1):
        for c in range(n - 1):
            i = r * n + c
            faces += [(i, i + 1, i + n + 1), (i, i + n + 1, i + n)]
    return verts, np.array(faces, dtype=np.int64)


def spherical_uvs(vertices, triangles):
    """Per-corner longitude/latitude uvs (seams are not split)."""
    v = vertices[triangles]
    d = v / np.linalg.norm(v, axis=-1, keepdims=True)
    u = 0.5 + np.arctan2(d[..., 0], d[..., 2]) / (2 * np.pi)
    w = np.arccos(np.clip(-d[..., 1], -1, 1)) / np.pi
    return np.clip(np.stack([u, 1.0 - w], axis=-1), 0.0, 1.0)


def rigid_model(vertices, triangles, uv_coords=None):
    """Single-joint model whose root sits at the origin."""
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    if uv_coords is None:
        uv_coords = np.zeros((len(triangles), 3, 2))
    return RiggedBodyModel(vertices, triangles, uv_coords, np.array([-1]), np.zeros((1, 3)),
                           np.ones((len(vertices), 1)))
