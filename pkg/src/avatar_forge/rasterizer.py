"""Pinhole camera, z-buffered G-buffer rasterizer and soft silhouettes.

Image coordinates: u to the right, v downward, pixel (row r, col c) has its
center at (c + 0.5, r + 0.5). Camera space looks down +z with y pointing
down, so surfaces facing the camera have normals with negative z.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._soft_kernels import contour_nearest, soft_backward, soft_forward
from .errors import InputError

NEAR = 1e-4
# sigmoid(-30) ~ 1e-13: faces contribute nothing to pixels further out
SOFT_CUTOFF = 30.0
_FLOOR = -SOFT_CUTOFF - 10.0  # pairs below this logit are skipped entirely
_CHUNK = 1 << 21


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = None  # world-to-camera (3, 3)
    translation: np.ndarray = None  # world-to-camera (3,)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InputError("focal lengths must be positive")
        if not (int(self.width) > 0 and int(self.height) > 0):
            raise InputError("resolution must be positive")
        r = np.eye(3) if self.rotation is None else np.asarray(self.rotation, dtype=np.float64)
        t = np.zeros(3) if self.translation is None else np.asarray(self.translation, np.float64)
        if r.shape != (3, 3) or not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise InputError("rotation must be an orthonormal 3x3 matrix")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t.reshape(3))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def center(self):
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def scaled(self, factor):
        """Same view at a resolution scaled by ``factor``."""
        return Camera(self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor,
                      max(1, round(self.width * factor)), max(1, round(self.height * factor)),
                      self.rotation, self.translation)

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, cx, cy, width, height):
        eye, target, up = (np.asarray(a, dtype=np.float64) for a in (eye, target, up))
        z = target - eye
        z /= np.linalg.norm(z)
        x = np.cross(-up, z)  # camera y points down
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        rot = np.stack([x, y, z])
        return cls(fx, fy, cx, cy, width, height, rot, -rot @ eye)


def project(camera, points):
    """Pinhole projection.

    Returns ``(pixels, depth, clipped)``; ``clipped`` marks points closer than
    the near plane (their pixel coordinates are NaN).
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pc = camera.to_camera(pts.reshape(-1, 3))
    z = pc[:, 2]
    clipped = z <= NEAR
    zs = np.where(clipped, np.nan, z)
    uv = np.stack([camera.fx * pc[:, 0] / zs + camera.cx,
                   camera.fy * pc[:, 1] / zs + camera.cy], axis=1)
    if single:
        return uv[0], z[0], bool(clipped[0])
    return uv, z, clipped


def sample_bilinear(image, uv):
    """Bilinear lookup with clamp-to-edge addressing.

    ``uv`` in [0, 1]^2 with v = 0 at the top row; texel centers sit at
    ((i + 0.5) / W, (j + 0.5) / H).
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    x = uv[..., 0] * w - 0.5
    y = uv[..., 1] * h - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0)[..., None] if img.ndim == 3 else x - x0
    fy = (y - y0)[..., None] if img.ndim == 3 else y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    xa, xb = np.clip(x0, 0, w - 1), np.clip(x0 + 1, 0, w - 1)
    ya, yb = np.clip(y0, 0, h - 1), np.clip(y0 + 1, 0, h - 1)
    top = img[ya, xa] * (1 - fx) + img[ya, xb] * fx
    bottom = img[yb, xa] * (1 - fx) + img[yb, xb] * fx
    return top * (1 - fy) + bottom * fy


def texel_index(uv, shape):
    """Texel (row, col) containing each uv coordinate."""
    h, w = shape
    col = np.clip(np.floor(uv[..., 0] * w).astype(np.int64), 0, w - 1)
    row = np.clip(np.floor(uv[..., 1] * h).astype(np.int64), 0, h - 1)
    return row, col


def sample_nearest(image, uv):
    """Point lookup of the texel containing ``uv`` (the texel back-projection uses)."""
    img = np.asarray(image, dtype=np.float64)
    row, col = texel_index(uv, img.shape[:2])
    return img[row, col]


def sample_atlas(image, uv, filter="nearest"):
    if filter == "nearest":
        return sample_nearest(image, uv)
    if filter == "bilinear":
        return sample_bilinear(image, uv)
    raise InputError(f"unknown texture filter {filter!r}")


@dataclass
class GBuffer:
    normal_image: np.ndarray  # (H, W, 3) camera space
    world_normal_image: np.ndarray  # (H, W, 3)
    uv_image: np.ndarray  # (H, W, 2)
    albedo_image: np.ndarray  # (H, W, 3)
    depth_image: np.ndarray  # (H, W)
    mask: np.ndarray  # (H, W) bool
    face_image: np.ndarray  # (H, W) int, -1 where empty

    @classmethod
    def empty(cls, height, width):
        return cls(np.zeros((height, width, 3)), np.zeros((height, width, 3)),
                   np.zeros((height, width, 2)), np.zeros((height, width, 3)),
                   np.zeros((height, width)), np.zeros((height, width), dtype=bool),
                   np.full((height, width), -1, dtype=np.int64))


def _pixel_pairs(x0, x1, y0, y1):
    """Enumerate (face, px, py) over inclusive per-face pixel boxes."""
    w = np.maximum(x1 - x0 + 1, 0)
    h = np.maximum(y1 - y0 + 1, 0)
    n = w * h
    total = int(n.sum())
    face = np.repeat(np.arange(len(n)), n)
    k = np.arange(total) - np.repeat(np.cumsum(n) - n, n)
    wf = w[face]
    return face, x0[face] + k % wf, y0[face] + k // wf


def _chunks(counts, limit=_CHUNK):
    """Split face indices into runs whose pair counts stay under ``limit``."""
    bounds = [0]
    acc = 0
    for i, c in enumerate(counts):
        if acc and acc + c > limit:
            bounds.append(i)
            acc = 0
        acc += c
    bounds.append(len(counts))
    return [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _screen(camera, vertices):
    pc = camera.to_camera(vertices)
    z = pc[:, 2]
    zs = np.where(z > NEAR, z, 1.0)
    s = np.stack([camera.fx * pc[:, 0] / zs + camera.cx,
                  camera.fy * pc[:, 1] / zs + camera.cy], axis=1)
    return pc, s


def rasterize_gbuffer(vertices, triangles, uv_coords, camera, atlas=None, normals=None,
                      filter="bilinear"):
    """Z-buffered attribute images of a posed mesh.

    Triangles with a vertex behind the near plane are dropped; back faces are
    kept. Ties in depth go to the lower face index. ``atlas`` is an (H, W, 3)
    color map (or anything with a ``color`` attribute), looked up with
    ``filter`` ("bilinear" or "nearest"). Nearest lookup reads the same texel
    that back-projection writes, so a render/extract round trip is exact
    with it; bilinear blends neighbors across hard pattern edges.
    """
    from .body_model import vertex_normals

    h, w = camera.shape
    gb = GBuffer.empty(h, w)
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if len(f) == 0 or len(v) == 0:
        return gb
    pc, s = _screen(camera, v)
    front = (pc[f, 2] > NEAR).all(axis=1)
    tri = s[f]  # (F, 3, 2)
    area = _edge(tri[:, 0], tri[:, 1], tri[:, 2])
    faces = np.flatnonzero(front & (np.abs(area) > 1e-12))
    lo = tri[faces].min(axis=1)
    hi = tri[faces].max(axis=1)
    x0 = np.clip(np.ceil(lo[:, 0] - 0.5), 0, w).astype(np.int64)
    x1 = np.clip(np.floor(hi[:, 0] - 0.5), -1, w - 1).astype(np.int64)
    y0 = np.clip(np.ceil(lo[:, 1] - 0.5), 0, h).astype(np.int64)
    y1 = np.clip(np.floor(hi[:, 1] - 0.5), -1, h - 1).astype(np.int64)
    counts = np.maximum(x1 - x0 + 1, 0) * np.maximum(y1 - y0 + 1, 0)

    zbuf = np.full(h * w, np.inf)
    fbuf = np.full(h * w, -1, dtype=np.int64)
    bbuf = np.zeros((h * w, 3))
    inv_z = 1.0 / np.where(pc[:, 2] > NEAR, pc[:, 2], 1.0)
    for a, b in _chunks(counts):
        loc, px, py = _pixel_pairs(x0[a:b], x1[a:b], y0[a:b], y1[a:b])
        fid = faces[a:b][loc]
        t = tri[fid]
        p = np.stack([px + 0.5, py + 0.5], axis=1)
        sa = np.sign(area[fid])
        l0 = _edge(t[:, 1], t[:, 2], p) * sa
        l1 = _edge(t[:, 2], t[:, 0], p) * sa
        l2 = _edge(t[:, 0], t[:, 1], p) * sa
        inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        if not inside.any():
            continue
        fid, px, py = fid[inside], px[inside], py[inside]
        bary = np.stack([l0[inside], l1[inside], l2[inside]], axis=1) / np.abs(area[fid])[:, None]
        depth = 1.0 / np.einsum("nk,nk->n", bary, inv_z[f[fid]])
        pix = py * w + px
        order = np.lexsort((fid, depth, pix))
        pix_s = pix[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = pix_s[1:] != pix_s[:-1]
        win = order[first]
        pw = pix[win]
        better = depth[win] < zbuf[pw]
        pw, win = pw[better], win[better]
        zbuf[pw] = depth[win]
        fbuf[pw] = fid[win]
        bbuf[pw] = bary[win]

    hit = np.flatnonzero(fbuf >= 0)
    if len(hit) == 0:
        return gb
    fid = fbuf[hit]
    bary = bbuf[hit]
    depth = zbuf[hit]
    corners = f[fid]
    if normals is None:
        normals, _ = vertex_normals(v, f)
    n = np.einsum("nk,nka->na", bary, normals[corners])
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    pw = bary * inv_z[corners] * depth[:, None]  # perspective-correct weights
    uv = np.clip(np.einsum("nk,nka->na", pw, np.asarray(uv_coords, np.float64)[fid]), 0.0, 1.0)

    rows, cols = np.divmod(hit, w)
    gb.mask[rows, cols] = True
    gb.face_image[rows, cols] = fid
    gb.depth_image[rows, cols] = depth
    gb.world_normal_image[rows, cols] = n
    cam_n = n @ camera.rotation.T
    gb.normal_image[rows, cols] = cam_n / np.linalg.norm(cam_n, axis=1, keepdims=True)
    gb.uv_image[rows, cols] = uv
    if atlas is not None:
        color = getattr(atlas, "color", atlas)
        gb.albedo_image[rows, cols] = sample_atlas(color, uv, filter)
    return gb


def _edge(a, b, p):
    """Twice the signed area of (a, b, p)."""
    return (b[..., 0] - a[..., 0]) * (p[..., 1] - a[..., 1]) - \
        (b[..., 1] - a[..., 1]) * (p[..., 0] - a[..., 0])


class SoftSilhouette:
    """Probabilistic-union soft silhouette of a mesh and its backward pass.

    ``image[p] = 1 - prod_f (1 - sigmoid(sign * d^2 / tau))`` with ``d`` the
    pixel distance from ``p`` to the projected boundary of face ``f`` and
    ``tau`` in squared pixels. Faces straddling the near plane are ignored.

    With ``band`` (a boolean image) the union is evaluated only on band
    pixels; every other pixel takes its value from ``outside`` and carries no
    gradient. ``cull_back`` drops faces turned away from the camera. See
    :func:`band_silhouette`.
    """

    def __init__(self, vertices, triangles, camera, tau, band=None, outside=None,
                 cull_back=False):
        if not tau > 0:
            raise InputError("tau must be positive")
        self.camera = camera
        self.tau = float(tau)
        h, w = camera.shape
        v = np.asarray(vertices, dtype=np.float64)
        f = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        self._n_vertices = len(v)
        self._faces = None
        if band is None:
            band = np.ones((h, w), dtype=bool)
            fixed = np.zeros((h, w))
        else:
            band = np.asarray(band, dtype=bool)
            if band.shape != (h, w):
                raise InputError("band must match the camera resolution")
            fixed = np.zeros((h, w)) if outside is None else np.asarray(outside, np.float64)
        self._band = np.ascontiguousarray(band.ravel())
        self.image = np.where(band, 0.0, fixed)
        if len(f) == 0 or len(v) == 0:
            return
        pc, s = _screen(camera, v)
        self._pc = pc
        front = (pc[f, 2] > NEAR).all(axis=1)
        tri = np.ascontiguousarray(s[f])
        area = _edge(tri[:, 0], tri[:, 1], tri[:, 2])
        if cull_back:
            front &= _front_facing(pc, f)
        faces = np.flatnonzero(front & (np.abs(area) > 1e-12))
        margin = np.sqrt(SOFT_CUTOFF * self.tau)
        lo = tri[faces].min(axis=1) - margin
        hi = tri[faces].max(axis=1) + margin
        x0 = np.clip(np.ceil(lo[:, 0] - 0.5), 0, w).astype(np.int64)
        x1 = np.clip(np.floor(hi[:, 0] - 0.5), -1, w - 1).astype(np.int64)
        y0 = np.clip(np.ceil(lo[:, 1] - 0.5), 0, h).astype(np.int64)
        y1 = np.clip(np.floor(hi[:, 1] - 0.5), -1, h - 1).astype(np.int64)
        # drop faces whose window is empty or holds no band pixel (summed-area test)
        sat = np.zeros((h + 1, w + 1))
        sat[1:, 1:] = band.cumsum(axis=0).cumsum(axis=1)
        xa, xb = np.clip(x0, 0, w), np.clip(x1 + 1, 0, w)
        ya, yb = np.clip(y0, 0, h), np.clip(y1 + 1, 0, h)
        hits = sat[yb, xb] - sat[ya, xb] - sat[yb, xa] + sat[ya, xa]
        sel = (hits > 0) & (x1 >= x0) & (y1 >= y0)
        self._faces = (tri, area, f, faces[sel], x0[sel], x1[sel], y0[sel], y1[sel])

        log_keep = np.zeros(h * w)
        soft_forward(tri, area, faces[sel], x0[sel], x1[sel], y0[sel], y1[sel], self._band,
                     w, self.tau, _FLOOR, log_keep)
        self._one_minus = np.exp(log_keep)
        self.image = np.where(band, -np.expm1(log_keep).reshape(h, w), self.image)

    def backward(self, grad_image):
        """Gradient of a scalar loss w.r.t. world vertex positions, (V, 3).

        ``grad_image`` is dLoss/dimage with the image's shape.
        """
        n = self._n_vertices
        if self._faces is None:
            return np.zeros((n, 3))
        tri, area, f, faces, x0, x1, y0, y1 = self._faces
        coef = np.asarray(grad_image, dtype=np.float64).ravel() * self._one_minus
        g2 = np.zeros((n, 2))
        soft_backward(tri, area, f, faces, x0, x1, y0, y1, self._band, self.camera.width,
                      self.tau, _FLOOR, coef, g2)
        return _screen_to_world_grad(self.camera, self._pc, g2)


def _screen_to_world_grad(cam, pc, g2):
    """Chain dLoss/d(screen xy) of every vertex through the projection."""
    z = np.where(pc[:, 2] > NEAR, pc[:, 2], 1.0)
    gc = np.zeros((len(pc), 3))
    gc[:, 0] = g2[:, 0] * cam.fx / z
    gc[:, 1] = g2[:, 1] * cam.fy / z
    gc[:, 2] = -(g2[:, 0] * cam.fx * pc[:, 0] + g2[:, 1] * cam.fy * pc[:, 1]) / z ** 2
    return gc @ cam.rotation


def soft_silhouette(vertices, triangles, camera, tau):
    """Soft silhouette image plus gradient evaluator (see ``SoftSilhouette``)."""
    return SoftSilhouette(vertices, triangles, camera, tau)


def boundary_band(mask, width):
    """Pixels within ``width`` pixels of the boundary between ``mask`` and its complement."""
    from scipy import ndimage

    m = np.asarray(mask, dtype=bool)
    if m.all() or not m.any():
        return np.ones_like(m)  # no boundary to follow: evaluate everywhere
    d_out = ndimage.distance_transform_edt(~m)
    d_in = ndimage.distance_transform_edt(m)
    return np.where(m, d_in, d_out) <= width


def band_silhouette(vertices, triangles, camera, tau):
    """Soft silhouette evaluated near the hard silhouette boundary only.

    Away from the boundary the soft union equals the hard mask up to seams
    along interior triangle edges; those pixels take the exact hard value.
    The band is wide enough that the sigmoid tails of every boundary edge
    stay inside it. Back faces are culled: on a closed mesh each contour
    edge is shared by a front and a back face, and counting both doubles
    the outer tail, which biases the soft boundary outward.
    """
    hard = hard_mask(vertices, triangles, camera)
    width = np.sqrt(SOFT_CUTOFF * tau) + 1.5
    return SoftSilhouette(vertices, triangles, camera, tau, boundary_band(hard, width),
                          hard.astype(np.float64), cull_back=True)


def _front_facing(pc, f):
    p0 = pc[f[:, 0]]
    normal = np.cross(pc[f[:, 1]] - p0, pc[f[:, 2]] - p0)
    return np.einsum("na,na->n", normal, p0) < 0


def contour_edges(triangles, front):
    """Flags ``(F, 3)`` for edges of front faces that separate them from the back.

    Edge ``e`` of a face joins corners ``e`` and ``e + 1``. It is a contour
    edge when the face is front-facing and no front-facing face shares the
    edge; open boundary edges therefore count.
    """
    f = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    a = f.ravel()
    b = f[:, [1, 2, 0]].ravel()
    key = np.minimum(a, b) * (f.max() + 1) + np.maximum(a, b)
    fr = np.repeat(front, 3)
    _, inv = np.unique(key, return_inverse=True)
    n_front = np.bincount(inv, weights=fr.astype(np.float64))
    return (fr & (n_front[inv] == 1)).reshape(-1, 3)


class ContourSilhouette:
    """Soft silhouette from the signed distance to the hard contour.

    Inside a band around the hard mask boundary every pixel takes
    ``sigmoid(+d^2 / tau)`` if covered and ``sigmoid(-d^2 / tau)`` if not.
    ``d`` is the distance to the nearest visible contour edge for covered
    pixels and to the nearest front face otherwise, so the sigmoid is centred
    on the hard boundary itself. The probabilistic union instead stacks the
    tails of every face that meets a contour vertex, which pushes the soft
    edge outward and makes a shrunken mesh the loss minimiser. Pixels outside
    the band take the hard value and carry no gradient.

    A contour edge is visible when its midpoint projects within 1.5 pixels of
    the hard boundary; this keeps, say, the outline of an arm in front of the
    torso out of the distance.
    """

    def __init__(self, vertices, triangles, camera, tau):
        if not tau > 0:
            raise InputError("tau must be positive")
        self.camera = camera
        self.tau = float(tau)
        h, w = camera.shape
        v = np.asarray(vertices, dtype=np.float64)
        f = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        self._n_vertices = len(v)
        hard = hard_mask(v, f, camera)
        self.hard = hard
        self.image = hard.astype(np.float64)
        self._best = None
        if len(f) == 0 or len(v) == 0 or not hard.any():
            return
        width = np.sqrt(SOFT_CUTOFF * self.tau) + 1.5
        band = boundary_band(hard, width)
        pc, s = _screen(camera, v)
        self._pc = pc
        tri = np.ascontiguousarray(s[f])
        area = _edge(tri[:, 0], tri[:, 1], tri[:, 2])
        front = (pc[f, 2] > NEAR).all(axis=1) & _front_facing(pc, f) & (np.abs(area) > 1e-12)
        contour = contour_edges(f, front)
        # keep contour edges whose midpoint lies on the visible outline
        mid = 0.5 * (tri + tri[:, [1, 2, 0]])
        col = np.clip(np.floor(mid[..., 0]), 0, w - 1).astype(np.int64)
        row = np.clip(np.floor(mid[..., 1]), 0, h - 1).astype(np.int64)
        outline = boundary_band(hard, 1.5)
        contour &= outline[row, col]
        faces = np.flatnonzero(front)
        margin = np.sqrt(SOFT_CUTOFF * self.tau)
        lo = tri[faces].min(axis=1) - margin
        hi = tri[faces].max(axis=1) + margin
        x0 = np.clip(np.ceil(lo[:, 0] - 0.5), 0, w).astype(np.int64)
        x1 = np.clip(np.floor(hi[:, 0] - 0.5), -1, w - 1).astype(np.int64)
        y0 = np.clip(np.ceil(lo[:, 1] - 0.5), 0, h).astype(np.int64)
        y1 = np.clip(np.floor(hi[:, 1] - 0.5), -1, h - 1).astype(np.int64)
        n = h * w
        best_d2 = np.full(n, np.inf)
        best_va = np.zeros(n, np.int64)
        best_vb = np.zeros(n, np.int64)
        best_s = np.zeros(n)
        best_d = np.zeros((n, 2))
        inside = np.ascontiguousarray(hard.ravel())
        contour_nearest(tri, f, faces, np.ascontiguousarray(contour), x0, x1, y0, y1,
                        np.ascontiguousarray(band.ravel()), inside, w, best_d2, best_va,
                        best_vb, best_s, best_d)
        pix = np.flatnonzero(np.isfinite(best_d2))
        sign = np.where(inside[pix], 1.0, -1.0)
        x = sign * best_d2[pix] / self.tau
        sig = expit(x)
        self.image.ravel()[pix] = sig
        self._best = (pix, sign, sig, best_va[pix], best_vb[pix], best_s[pix], best_d[pix])

    def backward(self, grad_image):
        """Gradient of a scalar loss w.r.t. world vertex positions, (V, 3)."""
        n = self._n_vertices
        if self._best is None:
            return np.zeros((n, 3))
        pix, sign, sig, va, vb, s, d = self._best
        c = np.asarray(grad_image, dtype=np.float64).ravel()[pix] * sig * (1 - sig) * sign / self.tau
        g2 = np.zeros((n, 2))
        # d(d^2)/dA = -2 (1 - s) (dx, dy), d(d^2)/dB = -2 s (dx, dy)
        np.add.at(g2, va, -2.0 * (c * (1.0 - s))[:, None] * d)
        np.add.at(g2, vb, -2.0 * (c * s)[:, None] * d)
        return _screen_to_world_grad(self.camera, self._pc, g2)


def contour_silhouette(vertices, triangles, camera, tau):
    """Soft silhouette centred on the hard contour (see ``ContourSilhouette``)."""
    return ContourSilhouette(vertices, triangles, camera, tau)


def hard_mask(vertices, triangles, camera):
    """Binary coverage mask from the z-buffer rasterizer."""
    f = np.asarray(triangles).reshape(-1, 3)
    return rasterize_gbuffer(vertices, f, np.zeros((len(f), 3, 2)), camera).mask
