"""Procedural capsule characters and SH-lit datasets with full ground truth.

Protocol a: the training split is a turntable (the subject spins in A-pose
in front of a fixed camera under one fixed light); the test split uses
random poses and a fresh random light per frame. Protocol b: training uses
random poses under one light; the test split repeats those poses under fresh
lights.

Ground truth frames are produced from the stored (quantized) albedo and
camera-space normal images, so decoding ``albedo.png``, ``normal.png`` and
``mask.png`` and re-shading with ``light.json`` reproduces ``image.png``
bit for bit (see :func:`render_from_maps`).
"""
from dataclasses import dataclass, field
import logging
import math
from pathlib import Path

import numpy as np

from . import io
from .body_model import OffsetField, Pose, RiggedBodyModel, pose_mesh
from .errors import DatasetError, InputError
from .parallel import parallel_map
from .rasterizer import Camera, rasterize_gbuffer
from .sh_lighting import C4, ShCoefficients, compose, sh_irradiance_basis, shade
from .texture import TextureAtlas

log = logging.getLogger(__name__)

PATTERNS = ("stripes", "checker", "patches", "noise")
ALBEDO_RANGE = (0.15, 0.75)

# name, parent, rest position (relative to the proportions below)
_HUMANOID = (
    "pelvis", "spine", "chest", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle", "r_hip", "r_knee", "r_ankle",
)
_HUMANOID_PARENTS = (-1, 0, 1, 2, 2, 4, 5, 2, 7, 8, 0, 10, 11, 0, 13, 14)
A_POSE_SHOULDER = 0.8  # radians, arms lowered from the T-pose

# per-joint uniform limits (radians, axis-angle components) for random poses
DEFAULT_POSE_LIMITS = {
    "pelvis": ((-0.15, -math.pi, -0.15), (0.15, math.pi, 0.15)),
    "spine": ((-0.25, -0.3, -0.2), (0.25, 0.3, 0.2)),
    "chest": ((-0.2, -0.3, -0.2), (0.2, 0.3, 0.2)),
    "head": ((-0.35, -0.6, -0.3), (0.35, 0.6, 0.3)),
    "l_shoulder": ((-0.5, -0.5, -1.3), (0.5, 0.5, 0.3)),
    "l_elbow": ((0.0, 0.0, 0.0), (0.0, 1.8, 0.0)),
    "l_wrist": ((-0.4, -0.4, -0.4), (0.4, 0.4, 0.4)),
    "r_shoulder": ((-0.5, -0.5, -0.3), (0.5, 0.5, 1.3)),
    "r_elbow": ((0.0, -1.8, 0.0), (0.0, 0.0, 0.0)),
    "r_wrist": ((-0.4, -0.4, -0.4), (0.4, 0.4, 0.4)),
    "l_hip": ((-0.4, -0.3, -0.3), (1.0, 0.3, 0.1)),
    "l_knee": ((-1.5, 0.0, 0.0), (0.0, 0.0, 0.0)),
    "l_ankle": ((-0.3, -0.2, -0.2), (0.3, 0.2, 0.2)),
    "r_hip": ((-0.4, -0.3, -0.1), (1.0, 0.3, 0.3)),
    "r_knee": ((-1.5, 0.0, 0.0), (0.0, 0.0, 0.0)),
    "r_ankle": ((-0.3, -0.2, -0.2), (0.3, 0.2, 0.2)),
}
CHAIN_LIMIT = 0.3


@dataclass
class ProceduralCharacterSpec:
    seed: int = 0
    joint_count: int = 16  # 16 builds a humanoid, anything else a capsule chain
    height_range: tuple = (0.92, 1.08)
    girth_range: tuple = (0.85, 1.15)
    limb_range: tuple = (0.9, 1.1)
    pattern: str = "patches"
    palette_seed: int = None  # defaults to ``seed``
    atlas_resolution: int = 256
    ring_segments: int = 20
    cap_rings: int = 5
    body_rings: int = 4
    clothing_amplitude: float = 0.0  # meters of ground-truth offset on torso and thighs

    def __post_init__(self):
        if int(self.joint_count) < 2:
            raise InputError("joint_count must be at least 2")
        for name in ("height_range", "girth_range", "limb_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise InputError(f"{name} must be positive with lo <= hi")
        if self.pattern not in PATTERNS:
            raise InputError(f"pattern must be one of {PATTERNS}")
        if self.atlas_resolution < 16:
            raise InputError("atlas_resolution must be at least 16")
        if self.ring_segments < 3 or self.cap_rings < 1 or self.body_rings < 0:
            raise InputError("capsule tessellation too coarse")
        if self.clothing_amplitude < 0:
            raise InputError("clothing_amplitude must be non-negative")


@dataclass
class Character:
    model: RiggedBodyModel
    atlas: TextureAtlas
    clothing: OffsetField  # ground-truth offsets, zero unless requested
    spec: ProceduralCharacterSpec = None

    @property
    def is_humanoid(self):
        return self.model.n_joints == 16 and tuple(self.model.joint_names) == _HUMANOID


# -- geometry ------------------------------------------------------------------

def capsule(a, b, radius, n_seg=20, n_cap=5, n_body=4):
    """Closed capsule around segment a-b.

    Returns ``(vertices, triangles, uv, axis_t)`` where ``uv`` is per corner in
    the unit square (u around, v from the ``a`` pole to the ``b`` pole) and
    ``axis_t`` is each vertex's parameter on the segment (0 at a, 1 at b).
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    axis = b - a
    length = np.linalg.norm(axis)
    d = axis / length
    ref = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(d, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)

    rings = []  # (center, ring radius, arc length from the a pole, axis parameter)
    for i in range(1, n_cap + 1):
        phi = -0.5 * np.pi + 0.5 * np.pi * i / n_cap
        rings.append((a + d * radius * np.sin(phi), radius * np.cos(phi),
                      radius * (phi + 0.5 * np.pi), 0.0))
    for i in range(1, n_body + 1):
        s = i / (n_body + 1)
        rings.append((a + axis * s, radius, 0.5 * np.pi * radius + length * s, s))
    for i in range(n_cap):
        phi = 0.5 * np.pi * i / n_cap
        rings.append((b + d * radius * np.sin(phi), radius * np.cos(phi),
                      0.5 * np.pi * radius + length + radius * phi, 1.0))
    total = np.pi * radius + length

    theta = 2.0 * np.pi * np.arange(n_seg) / n_seg
    circle = np.cos(theta)[:, None] * e1 + np.sin(theta)[:, None] * e2
    verts = [c + r * circle for c, r, _, _ in rings]
    verts = np.concatenate([np.stack([a - d * radius])] + verts + [np.stack([b + d * radius])])
    axis_t = np.concatenate([[0.0], np.repeat([t for *_, t in rings], n_seg), [1.0]])
    arcs = [s for _, _, s, _ in rings]

    n_r = len(rings)
    ring = lambda k, j: 1 + k * n_seg + (j % n_seg)  # noqa: E731
    faces, uvs = [], []
    for j in range(n_seg):
        u0, u1, um = j / n_seg, (j + 1) / n_seg, (j + 0.5) / n_seg
        faces.append((0, ring(0, j + 1), ring(0, j)))
        uvs.append(((um, 0.0), (u1, arcs[0] / total), (u0, arcs[0] / total)))
        for k in range(n_r - 1):
            v0, v1 = arcs[k] / total, arcs[k + 1] / total
            faces.append((ring(k, j), ring(k, j + 1), ring(k + 1, j + 1)))
            uvs.append(((u0, v0), (u1, v0), (u1, v1)))
            faces.append((ring(k, j), ring(k + 1, j + 1), ring(k + 1, j)))
            uvs.append(((u0, v0), (u1, v1), (u0, v1)))
        top = len(verts) - 1
        vl = arcs[-1] / total
        faces.append((ring(n_r - 1, j), ring(n_r - 1, j + 1), top))
        uvs.append(((u0, vl), (u1, vl), (um, 1.0)))
    faces = np.array(faces, dtype=np.int64)
    uvs = np.array(uvs, dtype=np.float64)
    # orient outward: the first side face must point away from the axis
    p = verts[faces[n_seg // 2 + 1]]
    nrm = np.cross(p[1] - p[0], p[2] - p[0])
    if np.dot(nrm, p.mean(axis=0) - (a + b) / 2.0) < 0:
        faces = faces[:, ::-1]
        uvs = uvs[:, ::-1]
    return verts, faces, uvs, axis_t


def _segment_distance(points, a, b):
    ab = b - a
    t = np.clip(((points - a) @ ab) / max(ab @ ab, 1e-300), 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


def _humanoid_parts(h, g, l):
    """Rest joint positions and one capsule per joint (start, end, radius)."""
    pos = np.zeros((16, 3))
    pos[0] = (0.0, 0.95 * h, 0.0)
    pos[1] = (0.0, 1.13 * h, 0.0)
    pos[2] = (0.0, 1.31 * h, 0.0)
    pos[3] = (0.0, 1.50 * h, 0.0)
    for side, s in ((4, 1.0), (7, -1.0)):
        pos[side] = (s * 0.19 * g, 1.44 * h, 0.0)
        pos[side + 1] = pos[side] + (s * 0.27 * l, 0.0, 0.0)
        pos[side + 2] = pos[side + 1] + (s * 0.25 * l, 0.0, 0.0)
    for side, s in ((10, 1.0), (13, -1.0)):
        pos[side] = (s * 0.10 * g, 0.90 * h, 0.0)
        pos[side + 1] = pos[side] - (0.0, 0.40 * l * h, 0.0)
        pos[side + 2] = pos[side + 1] - (0.0, 0.38 * l * h, 0.0)
    parts = [
        (pos[0], pos[1], 0.14 * g), (pos[1], pos[2], 0.13 * g),
        (pos[2], pos[3] - (0.0, 0.04 * h, 0.0), 0.15 * g),
        (pos[3] + (0.0, 0.02 * h, 0.0), pos[3] + (0.0, 0.20 * h, 0.0), 0.10),
    ]
    for side in (4, 7):
        s = np.sign(pos[side][0])
        parts += [(pos[side], pos[side + 1], 0.05 * g), (pos[side + 1], pos[side + 2], 0.04 * g),
                  (pos[side + 2], pos[side + 2] + (s * 0.10 * l, 0.0, 0.0), 0.035 * g)]
    for side in (10, 13):
        parts += [(pos[side], pos[side + 1], 0.07 * g), (pos[side + 1], pos[side + 2], 0.05 * g),
                  (pos[side + 2], pos[side + 2] + (0.0, -0.03, -0.15 * l), 0.04 * g)]
    return pos, parts


def _chain_parts(n, h, g):
    seg = 1.4 * h / n
    pos = np.array([[0.0, 0.25 + k * seg, 0.0] for k in range(n)])
    parts = [(pos[k], pos[k] + (0.0, seg, 0.0), 0.12 * g) for k in range(n)]
    return pos, parts


def _clothing(vertices, owner, seg_points, amplitude, clothed):
    d = np.zeros_like(vertices)
    if amplitude == 0.0:
        return d
    sel = np.isin(owner, clothed)
    radial = vertices[sel] - seg_points[sel]
    radial /= np.maximum(np.linalg.norm(radial, axis=1, keepdims=True), 1e-12)
    y = vertices[sel, 1]
    ang = np.arctan2(radial[:, 0], radial[:, 2])
    d[sel] = amplitude * (0.75 + 0.25 * np.sin(6.0 * y + 2.0 * ang))[:, None] * radial
    return d


def _pattern(spec, rng):
    res = spec.atlas_resolution
    lo, hi = ALBEDO_RANGE
    palette = rng.uniform(lo, hi, size=(6, 3))
    yy, xx = np.mgrid[0:res, 0:res]
    period = max(4, res // 16)
    if spec.pattern == "stripes":
        idx = (yy // period) % len(palette)
        return palette[idx]
    if spec.pattern == "checker":
        idx = ((yy // period + xx // period) % 2) + 2 * ((yy // (4 * period)) % 2)
        return palette[idx]
    if spec.pattern == "patches":
        seeds = rng.uniform(0, res, size=(48, 2))
        colors = palette[rng.integers(0, len(palette), size=len(seeds))]
        pts = np.stack([yy.ravel() + 0.5, xx.ravel() + 0.5], axis=1)
        from scipy.spatial import cKDTree

        _, nearest = cKDTree(seeds).query(pts)
        return colors[nearest].reshape(res, res, 3)
    import cv2

    grid = rng.uniform(lo, hi, size=(12, 12, 3)).astype(np.float32)
    out = cv2.resize(grid, (res, res), interpolation=cv2.INTER_CUBIC).astype(np.float64)
    return np.clip(out, lo, hi)


def gen_character(spec=None):
    """Capsule-limbed character with a patterned albedo atlas.

    Every joint owns one capsule laid out in its own atlas cell. Skin weights
    fall off as ``exp(-(dist / 0.06)^2)`` with the distance between a vertex's
    skeleton point and each joint's bone, keeping the four largest.
    """
    spec = spec or ProceduralCharacterSpec()
    rng = np.random.default_rng([int(spec.seed), 0])
    h = rng.uniform(*spec.height_range)
    g = rng.uniform(*spec.girth_range)
    l = rng.uniform(*spec.limb_range)
    humanoid = int(spec.joint_count) == 16
    if humanoid:
        pos, parts = _humanoid_parts(h, g, l)
        parents = np.array(_HUMANOID_PARENTS)
        names = _HUMANOID
        clothed = [0, 1, 2, 10, 13]
    else:
        n = int(spec.joint_count)
        pos, parts = _chain_parts(n, h, g)
        parents = np.arange(n) - 1
        names = tuple(f"j{k}" for k in range(n))
        clothed = list(range(n))
    n_j = len(parents)
    offsets = pos - np.where(parents[:, None] >= 0, pos[np.maximum(parents, 0)], 0.0)

    grid = math.ceil(math.sqrt(n_j))
    res = spec.atlas_resolution
    pad = max(2, res // 64) / res
    cell = 1.0 / grid
    verts, faces, uvs, owner, seg_pts = [], [], [], [], []
    base = 0
    for j, (a, b, r) in enumerate(parts):
        v, f, uv, t = capsule(a, b, r, spec.ring_segments, spec.cap_rings, spec.body_rings)
        cy, cx = divmod(j, grid)
        uv = np.stack([cx * cell + pad + uv[..., 0] * (cell - 2 * pad),
                       cy * cell + pad + uv[..., 1] * (cell - 2 * pad)], axis=-1)
        verts.append(v)
        faces.append(f + base)
        uvs.append(uv)
        owner.append(np.full(len(v), j))
        seg_pts.append(np.asarray(a) + t[:, None] * (np.asarray(b) - np.asarray(a)))
        base += len(v)
    v = np.concatenate(verts)
    owner = np.concatenate(owner)
    seg_pts = np.concatenate(seg_pts)

    dist = np.stack([_segment_distance(seg_pts, np.asarray(a), np.asarray(b))
                     for a, b, _ in parts], axis=1)
    w = np.exp(-(dist / 0.06) ** 2)
    w[np.arange(len(v)), owner] = np.maximum(w[np.arange(len(v)), owner], 1.0)
    top = np.argsort(-w, axis=1, kind="stable")[:, :4]
    keep = np.zeros_like(w, dtype=bool)
    np.put_along_axis(keep, top, True, axis=1)
    w = np.where(keep, w, 0.0)
    w[w < 1e-6] = 0.0
    w /= w.sum(axis=1, keepdims=True)

    # two shape directions: girth (radial) and stature (vertical stretch about the pelvis)
    radial = v - seg_pts
    dirs = np.stack([0.05 * radial / np.maximum(np.linalg.norm(radial, axis=1, keepdims=True),
                                                1e-12),
                     np.stack([np.zeros(len(v)), 0.05 * (v[:, 1] - pos[0, 1]),
                               np.zeros(len(v))], axis=1)], axis=2)

    model = RiggedBodyModel(v, np.concatenate(faces), np.concatenate(uvs), parents, offsets,
                            w, dirs, names)
    palette_rng = np.random.default_rng([int(spec.seed if spec.palette_seed is None
                                             else spec.palette_seed), 1])
    atlas = TextureAtlas(_pattern(spec, palette_rng), np.ones((res, res), dtype=bool))
    clothing = OffsetField(_clothing(v, owner, seg_pts, float(spec.clothing_amplitude),
                                     clothed))
    return Character(model, atlas, clothing, spec)


# -- poses, cameras, lights ------------------------------------------------------

def a_pose(model, azimuth=0.0):
    """Arms lowered from the rest T-pose; the root spins by ``azimuth`` about +y."""
    rot = np.zeros((model.n_joints, 3))
    names = list(model.joint_names)
    if "l_shoulder" in names:
        rot[names.index("l_shoulder"), 2] = -A_POSE_SHOULDER
        rot[names.index("r_shoulder"), 2] = A_POSE_SHOULDER
    root = int(np.flatnonzero(model.parents < 0)[0])
    rot[root, 1] = azimuth
    return Pose(np.zeros(3), rot)


def random_pose(model, rng, limits=None):
    """Per-joint uniform axis-angle components within ``limits`` (by joint name)."""
    limits = DEFAULT_POSE_LIMITS if limits is None else limits
    rot = np.zeros((model.n_joints, 3))
    for j, name in enumerate(model.joint_names):
        lo, hi = limits.get(name, ((-CHAIN_LIMIT,) * 3, (CHAIN_LIMIT,) * 3))
        rot[j] = rng.uniform(lo, hi)
    return Pose(np.zeros(3), rot)


def default_camera(width=256, height=256):
    f = 380.0 * min(width, height) / 256.0
    return Camera.look_at([0.0, 0.95, -3.3], [0.0, 0.95, 0.0], [0.0, 1.0, 0.0],
                          f, f, width / 2.0, height / 2.0, width, height)


@dataclass
class LightSampler:
    """Random SH lights: band 0 uniform, bands 1 and 2 Gaussian, then rejection.

    A light is kept when shading over the given normals is positive
    everywhere (so clamping never triggers), its masked mean lies in
    ``mean_range`` and ``max_albedo * shading`` stays within 1.
    """
    band0_range: tuple = (0.7, 1.3)
    sigma: float = 0.25
    mean_range: tuple = (0.2, 1.5)
    min_shading: float = 0.02
    max_albedo: float = ALBEDO_RANGE[1]
    max_tries: int = 100000

    def draw(self, rng):
        e = np.empty((9, 3))
        e[0] = rng.uniform(*self.band0_range, size=3) / C4
        e[1:] = rng.normal(0.0, self.sigma, size=(8, 3))
        return e

    def accept(self, coeffs, basis):
        s = basis @ coeffs
        mean = s.mean(axis=0)
        return bool((s.min() >= self.min_shading)
                    and (s.max() * self.max_albedo <= 1.0)
                    and (mean >= self.mean_range[0]).all() and (mean <= self.mean_range[1]).all())

    def sample(self, rng, normals, exposure=False):
        """``normals`` is an (N, 3) array of visible world normals.

        With ``exposure`` every channel is rescaled to unit mean shading
        before the checks.
        """
        basis = sh_irradiance_basis(normals)
        for _ in range(self.max_tries):
            e = self.draw(rng)
            if exposure:
                e = e / (basis @ e).mean(axis=0)
            if self.accept(e, basis):
                return ShCoefficients(e)
        raise RuntimeError("light rejection sampling exhausted its budget")


# -- rendering -----------------------------------------------------------------

def camera_to_world_normals(normal_image, mask, camera):
    """Rotate camera-space normals back to world space (zero outside mask)."""
    n = np.asarray(normal_image, dtype=np.float64) @ camera.rotation
    n[~np.asarray(mask, bool)] = 0.0
    return n


def render_from_maps(albedo, normal_cam, mask, camera, light):
    """Shaded image from albedo and camera-space normal maps; light is world-frame."""
    n = camera_to_world_normals(normal_cam, mask, camera)
    n[mask] /= np.linalg.norm(n[mask], axis=1, keepdims=True)
    return compose(albedo, shade(n, mask, light), mask, clip=True)


def _gt_maps(character, pose, camera):
    verts = pose_mesh(character.model, pose, offsets=character.clothing)
    gb = rasterize_gbuffer(verts, character.model.triangles, character.model.uv_coords,
                           camera, character.atlas)
    albedo = io.quantize(gb.albedo_image)
    normal = io.decode_normals(io.quantize(io.encode_normals(gb.normal_image, gb.mask)), gb.mask)
    return albedo, normal, gb.mask.copy()


def _visible_world_normals(maps, camera):
    albedo, normal, mask = maps
    n = camera_to_world_normals(normal, mask, camera)[mask]
    return n / np.linalg.norm(n, axis=1, keepdims=True)


# -- datasets ------------------------------------------------------------------

@dataclass
class FrameRecord:
    index: int
    split: str  # "train" or "test"
    path: str  # frame directory relative to the dataset root
    azimuth_deg: float = None  # turntable frames only
    source_pose: int = None  # protocol b test frames: index of the matching train frame

    def file(self, root, name):
        return Path(root) / self.path / name


@dataclass
class DatasetManifest:
    protocol: str
    seed: int
    resolution: tuple
    frames: list = field(default_factory=list)
    character: dict = field(default_factory=dict)
    root: Path = None

    def split(self, name):
        return [f for f in self.frames if f.split == name]

    def to_json(self):
        return {
            "protocol": self.protocol, "seed": self.seed,
            "resolution": list(self.resolution), "character": self.character,
            "frames": [{k: v for k, v in vars(f).items() if v is not None} for f in self.frames],
        }

    @classmethod
    def from_json(cls, data, root=None):
        try:
            frames = [FrameRecord(**f) for f in data["frames"]]
            return cls(data["protocol"], int(data["seed"]), tuple(data["resolution"]), frames,
                       dict(data.get("character", {})), Path(root) if root else None)
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed manifest: {exc}") from exc


def load_manifest(root):
    root = Path(root)
    path = root / "manifest.json" if root.is_dir() else root
    return DatasetManifest.from_json(io.load_json(path), path.parent)


@dataclass
class Frame:
    record: FrameRecord
    image: np.ndarray
    albedo: np.ndarray
    normal: np.ndarray  # camera space
    mask: np.ndarray
    pose: Pose
    camera: Camera
    light: ShCoefficients


def load_frame(manifest, record, need=("image", "albedo", "normal")):
    """Decode one frame; ``need`` picks which images to read besides the mask.

    Missing or corrupt files raise :class:`DatasetError` naming the frame.
    """
    root = manifest.root
    try:
        mask = io.read_mask(record.file(root, "mask.png"))
        image = io.read_png(record.file(root, "image.png")) if "image" in need else None
        albedo = io.read_png(record.file(root, "albedo.png")) if "albedo" in need else None
        normal = (io.read_normal_png(record.file(root, "normal.png"), mask)
                  if "normal" in need else None)
        pose = io.load_poses(record.file(root, "pose.json"))[0]
        cam = io.load_camera(record.file(root, "camera.json"))
        light = io.load_light(record.file(root, "light.json"))
    except (InputError, OSError) as exc:
        raise DatasetError(f"frame {record.index} ({record.path}): {exc}") from exc
    if mask.shape != cam.shape:
        raise DatasetError(f"frame {record.index}: mask {mask.shape} does not match camera")
    return Frame(record, image, albedo, normal, mask, pose, cam, light)


def load_character(manifest):
    root = manifest.root
    return io.load_model(root / "character.obj", root / "character.json")


def _write_frame(root, record, maps, pose, camera, light):
    albedo, normal, mask = maps
    d = Path(root) / record.path
    d.mkdir(parents=True, exist_ok=True)
    image = render_from_maps(albedo, normal, mask, camera, light)
    io.write_png(d / "image.png", image)
    io.write_png(d / "albedo.png", albedo)
    io.write_normal_png(d / "normal.png", normal, mask)
    io.write_mask(d / "mask.png", mask)
    io.dump_json(d / "pose.json", io.pose_to_json(pose))
    io.dump_json(d / "camera.json", io.camera_to_json(camera))
    io.save_light(d / "light.json", light)


def _write_character(root, character):
    root = Path(root)
    io.save_model(character.model, root / "character.obj", root / "character.json")
    io.write_png(root / "atlas.png", character.atlas.color)
    io.save_offsets(root / "clothing.json", character.clothing)
    return {"mesh": "character.obj", "rig": "character.json", "atlas": "atlas.png",
            "clothing": "clothing.json"}


def _frame_rng(seed, split, index):
    return np.random.default_rng([int(seed), {"train": 11, "test": 13}[split], int(index)])


def _check_counts(**counts):
    for name, n in counts.items():
        if int(n) < 1:
            raise InputError(f"{name} must be at least 1")


def _new_root(out_dir):
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    return root


def gen_protocol_a(character, out_dir, n_train=12, n_test=10, seed=0, resolution=(256, 256),
                   pose_limits=None, sampler=None):
    """Turntable training frames plus random-pose, random-light test frames."""
    _check_counts(n_train=n_train, n_test=n_test)
    sampler = sampler or LightSampler()
    root = _new_root(out_dir)
    w, h = resolution
    cam = default_camera(w, h)
    model = character.model

    train = []
    for k in range(n_train):
        az = 360.0 * k / n_train
        rec = FrameRecord(k, "train", f"frames/{k:04d}", azimuth_deg=az)
        train.append((rec, a_pose(model, math.radians(az))))
    train_maps = parallel_map(lambda rp: _gt_maps(character, rp[1], cam), train)
    normals = np.concatenate([_visible_world_normals(m, cam) for m in train_maps])
    train_light = sampler.sample(np.random.default_rng([int(seed), 17]), normals, exposure=True)

    test = []
    for k in range(n_test):
        rng = _frame_rng(seed, "test", k)
        rec = FrameRecord(n_train + k, "test", f"frames/{n_train + k:04d}")
        test.append((rec, random_pose(model, rng, pose_limits), rng))
    test_maps = parallel_map(lambda t: _gt_maps(character, t[1], cam), test)
    test_lights = [sampler.sample(t[2], _visible_world_normals(m, cam))
                   for t, m in zip(test, test_maps)]

    jobs = [(rec, m, pose, train_light) for (rec, pose), m in zip(train, train_maps)]
    jobs += [(t[0], m, t[1], e) for t, m, e in zip(test, test_maps, test_lights)]
    return _write_dataset(root, "a", seed, resolution, jobs, character, cam)


def gen_protocol_b(character, out_dir, n_frames=10, seed=0, resolution=(256, 256),
                   pose_limits=None, sampler=None, n_test=None):
    """Random-pose training frames under one light; the test split relights them."""
    n_test = n_frames if n_test is None else n_test
    _check_counts(n_frames=n_frames, n_test=n_test)
    if n_test != n_frames:
        raise InputError("protocol b pairs every test frame with a training pose")
    sampler = sampler or LightSampler()
    root = _new_root(out_dir)
    w, h = resolution
    cam = default_camera(w, h)
    model = character.model

    poses = [random_pose(model, _frame_rng(seed, "train", k), pose_limits)
             for k in range(n_frames)]
    maps = parallel_map(lambda p: _gt_maps(character, p, cam), poses)
    normals = np.concatenate([_visible_world_normals(m, cam) for m in maps])
    train_light = sampler.sample(np.random.default_rng([int(seed), 17]), normals, exposure=True)

    jobs = []
    for k, (pose, m) in enumerate(zip(poses, maps)):
        jobs.append((FrameRecord(k, "train", f"frames/{k:04d}"), m, pose, train_light))
    for k, (pose, m) in enumerate(zip(poses, maps)):
        rng = _frame_rng(seed, "test", k)
        light = sampler.sample(rng, _visible_world_normals(m, cam))
        rec = FrameRecord(n_frames + k, "test", f"frames/{n_frames + k:04d}", source_pose=k)
        jobs.append((rec, m, pose, light))
    return _write_dataset(root, "b", seed, resolution, jobs, character, cam)


def _write_dataset(root, protocol, seed, resolution, jobs, character, camera):
    files = _write_character(root, character)
    parallel_map(lambda j: _write_frame(root, j[0], j[1], j[2], camera, j[3]), jobs)
    manifest = DatasetManifest(protocol, int(seed), tuple(resolution), [j[0] for j in jobs],
                               files, root)
    io.dump_json(root / "manifest.json", manifest.to_json())
    log.info("wrote protocol-%s dataset with %d frames to %s", protocol, len(jobs), root)
    return manifest
