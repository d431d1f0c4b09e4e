"""File formats: OBJ + JSON rig, pose/camera/light/offset JSON, PNG and PFM images.

Field names are documented in docs/schema.md.
"""
import json
from pathlib import Path

import cv2
import numpy as np

from .body_model import OffsetField, Pose, RiggedBodyModel
from .errors import InputError
from .rasterizer import Camera
from .sh_lighting import ShCoefficients


def dump_json(path, data):
    """Deterministic JSON (sorted keys, shortest float repr, trailing newline)."""
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc


# -- images ------------------------------------------------------------------

def write_png(path, image, bits=16):
    """Write a float image in [0, 1] as an 8- or 16-bit PNG (gray or RGB)."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    scale, dtype = (65535.0, np.uint16) if bits == 16 else (255.0, np.uint8)
    q = np.round(img * scale).astype(dtype)
    if q.ndim == 3:
        q = q[..., ::-1]
    if not cv2.imwrite(str(path), np.ascontiguousarray(q)):
        raise OSError(f"could not write {path}")


def read_png(path):
    """Read an 8- or 16-bit PNG as float64 in [0, 1] (RGB order)."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise InputError(f"{path}: unreadable image")
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    img = raw.astype(np.float64) / scale
    if img.ndim == 3:
        img = img[..., 2::-1] if img.shape[2] >= 3 else img
    return img


def quantize(image, bits=16):
    """Round-trip values through the PNG encoding without touching disk."""
    scale = 65535.0 if bits == 16 else 255.0
    return np.round(np.clip(image, 0.0, 1.0) * scale) / scale


def encode_normals(normal_image, mask):
    out = (np.asarray(normal_image, dtype=np.float64) + 1.0) / 2.0
    out[~np.asarray(mask, bool)] = 0.0
    return out


def decode_normals(encoded, mask):
    n = np.asarray(encoded, dtype=np.float64) * 2.0 - 1.0
    n[~np.asarray(mask, bool)] = 0.0
    return n


def write_normal_png(path, normal_image, mask):
    write_png(path, encode_normals(normal_image, mask), bits=16)


def read_normal_png(path, mask):
    return decode_normals(read_png(path), mask)


def write_mask(path, mask):
    write_png(path, np.asarray(mask, dtype=np.float64), bits=8)


def read_mask(path):
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise InputError(f"{path}: unreadable mask")
    if raw.ndim == 3:
        raw = raw[..., 0]
    if not np.isin(raw, (0, raw.max() if raw.max() else 0)).all():
        raise InputError(f"{path}: mask is not binary")
    return raw > 0


def write_pfm(path, image):
    """Single-channel little-endian PFM, rows stored bottom-up."""
    img = np.asarray(image, dtype="<f4")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode())
        fh.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path):
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise InputError(f"{path}: not a PFM file")
        w, h = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        ch = 3 if kind == b"PF" else 1
        data = np.frombuffer(fh.read(), dtype=dtype, count=w * h * ch)
    shape = (h, w, 3) if ch == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float64)


# -- geometry ----------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def save_obj(path, vertices, triangles, uv_coords):
    """OBJ with one ``vt`` per distinct corner uv; ``vt`` stores (u, 1 - v)."""
    uv = np.asarray(uv_coords, dtype=np.float64).reshape(-1, 2)
    uniq, inverse = np.unique(uv, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1, 3)
    lines = ["# avatar_forge mesh"]
    lines += [f"v {_fmt(a)} {_fmt(b)} {_fmt(c)}" for a, b, c in vertices]
    lines += [f"vt {_fmt(u)} {_fmt(1.0 - v)}" for u, v in uniq]
    for (a, b, c), (ta, tb, tc) in zip(np.asarray(triangles) + 1, inverse + 1):
        lines.append(f"f {a}/{ta} {b}/{tb} {c}/{tc}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path):
    verts, tex, faces, ftex = [], [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vt":
            tex.append([float(parts[1]), 1.0 - float(parts[2])])
        elif parts[0] == "f":
            if len(parts) != 4:
                raise InputError(f"{path}: only triangles are supported")
            idx = [p.split("/") for p in parts[1:]]
            faces.append([int(i[0]) - 1 for i in idx])
            ftex.append([int(i[1]) - 1 if len(i) > 1 and i[1] else -1 for i in idx])
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    ft = np.array(ftex, dtype=np.int64).reshape(-1, 3)
    t = np.array(tex, dtype=np.float64).reshape(-1, 2)
    uv = np.zeros((len(f), 3, 2)) if (ft < 0).any() or not len(t) else t[ft]
    return v, f, np.clip(uv, 0.0, 1.0)


def save_model(model, obj_path, rig_path):
    save_obj(obj_path, model.rest_vertices, model.triangles, model.uv_coords)
    rows, cols = np.nonzero(model.skin_weights)
    rig = {
        "num_vertices": model.n_vertices,
        "joints": [{"name": (model.joint_names[j] if j < len(model.joint_names) else f"j{j}"),
                    "parent": int(model.parents[j]),
                    "offset": [float(x) for x in model.joint_offsets[j]]}
                   for j in range(model.n_joints)],
        "skin_weights": [[int(r), int(c), float(model.skin_weights[r, c])]
                         for r, c in zip(rows, cols)],
        "shape_dirs": model.shape_dirs.transpose(2, 0, 1).tolist(),
    }
    dump_json(rig_path, rig)


def load_model(obj_path, rig_path):
    v, f, uv = load_obj(obj_path)
    rig = load_json(rig_path)
    try:
        joints = rig["joints"]
        n_v = int(rig["num_vertices"])
        parents = np.array([j["parent"] for j in joints], dtype=np.int64)
        offsets = np.array([j["offset"] for j in joints], dtype=np.float64).reshape(-1, 3)
        names = tuple(j.get("name", f"j{i}") for i, j in enumerate(joints))
        w = np.zeros((n_v, len(joints)))
        for r, c, val in rig["skin_weights"]:
            w[int(r), int(c)] = float(val)
        dirs = np.asarray(rig.get("shape_dirs", []), dtype=np.float64)
        dirs = np.zeros((n_v, 3, 0)) if dirs.size == 0 else dirs.transpose(1, 2, 0)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{rig_path}: malformed rig ({exc})") from exc
    if n_v != len(v):
        raise InputError(f"{rig_path}: rig has {n_v} vertices, mesh has {len(v)}")
    return RiggedBodyModel(v, f, uv, parents, offsets, w, dirs, names)


# -- small JSON records --------------------------------------------------------

def pose_to_json(pose):
    return {"translation": pose.root_translation.tolist(),
            "rotations": pose.joint_rotations.tolist()}


def pose_from_json(data):
    try:
        return Pose(data["translation"], data["rotations"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed pose: {exc}") from exc


def load_poses(path):
    """A pose file holds one pose object or a JSON array of them."""
    data = load_json(path)
    items = data if isinstance(data, list) else [data]
    return [pose_from_json(d) for d in items]


def camera_to_json(cam):
    return {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height,
            "rotation": cam.rotation.tolist(), "translation": cam.translation.tolist()}


def camera_from_json(data):
    try:
        return Camera(float(data["fx"]), float(data["fy"]), float(data["cx"]), float(data["cy"]),
                      int(data["width"]), int(data["height"]),
                      np.asarray(data["rotation"], dtype=np.float64),
                      np.asarray(data["translation"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed camera: {exc}") from exc


def load_camera(path):
    return camera_from_json(load_json(path))


def load_light(path):
    return ShCoefficients.from_json(load_json(path))


def save_light(path, light):
    dump_json(path, light.to_json())


def save_offsets(path, offsets, extra=None):
    d = offsets.offsets if isinstance(offsets, OffsetField) else np.asarray(offsets)
    data = {"offsets": d.tolist()}
    data.update(extra or {})
    dump_json(path, data)


def load_offsets(path):
    data = load_json(path)
    try:
        return OffsetField(np.asarray(data["offsets"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed offsets ({exc})") from exc
