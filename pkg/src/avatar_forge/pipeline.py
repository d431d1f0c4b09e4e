"""Dataset-level steps shared by the CLI and the experiment scripts."""
from dataclasses import asdict, dataclass
import logging
import os
from pathlib import Path

import numpy as np

from . import io
from .body_model import OffsetField, pose_mesh
from .errors import InputError
from .fitting import FitConfig, fit_offsets
from .parallel import parallel_map
from .rasterizer import rasterize_gbuffer
from .sh_lighting import compose, shade
from .synthetic import load_character, load_frame
from .texture import TextureAtlas, delight

log = logging.getLogger(__name__)


@dataclass
class Avatar:
    model: object  # RiggedBodyModel
    offsets: OffsetField

    def posed(self, pose):
        return pose_mesh(self.model, pose, offsets=self.offsets)


def save_avatar(path, manifest, offsets, report=None):
    """``avatar.json`` points at the dataset's body files and holds the offsets."""
    path = Path(path)
    base = path.parent.resolve()
    root = manifest.root.resolve()
    data = {"mesh": os.path.relpath(root / manifest.character["mesh"], base),
            "rig": os.path.relpath(root / manifest.character["rig"], base),
            "offsets": offsets.offsets.tolist()}
    io.dump_json(path, data)
    if report is not None:
        io.dump_json(path.with_suffix(".report.json"), report)


def load_avatar(path):
    path = Path(path)
    data = io.load_json(path)
    try:
        model = io.load_model(path.parent / data["mesh"], path.parent / data["rig"])
        offsets = OffsetField(np.asarray(data["offsets"], dtype=np.float64))
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: malformed avatar ({exc})") from exc
    if offsets.offsets.shape != (model.n_vertices, 3):
        raise InputError(f"{path}: offsets do not match the mesh")
    return Avatar(model, offsets)


def fit_dataset(manifest, config=None, split="train"):
    """Fit one offset field to every frame mask of ``split``."""
    model = load_character(manifest)
    frames = [load_frame(manifest, r, need=()) for r in manifest.split(split)]
    if not frames:
        raise InputError(f"dataset has no {split!r} frames")
    result = fit_offsets(model, [f.pose for f in frames], [f.camera for f in frames],
                         [f.mask for f in frames], config or FitConfig())
    report = result.report()
    report["config"] = asdict(config or FitConfig())
    report["frames"] = [f.record.index for f in frames]
    return result, report


def avatar_gbuffer(avatar, pose, camera, atlas=None):
    v = avatar.posed(pose)
    return rasterize_gbuffer(v, avatar.model.triangles, avatar.model.uv_coords, camera, atlas)


def extract_texture(manifest, avatar, atlas_resolution=256, orthogonality_fraction=0.8,
                    max_iterations=50, tol=1e-4, hole_fill=8, split="train", scale=1.0,
                    anderson=5):
    """Back-project the training frames through the fitted avatar and delight.

    ``scale`` multiplies every input image (used to check gauge invariance).
    """
    frames = [load_frame(manifest, r, need=("image",)) for r in manifest.split(split)]
    gbuffers = parallel_map(lambda f: avatar_gbuffer(avatar, f.pose, f.camera), frames)
    return delight([f.image * scale for f in frames], gbuffers, [f.mask for f in frames],
                   [f.camera for f in frames], atlas_shape=(atlas_resolution,) * 2,
                   orthogonality_fraction=orthogonality_fraction,
                   max_iterations=max_iterations, tol=tol, hole_fill=hole_fill,
                   anderson=anderson)


def save_texture(out_dir, result):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_png(out / "albedo.png", result.albedo.color)
    io.write_mask(out / "albedo_valid.png", result.albedo.valid)
    io.write_mask(out / "observed.png", result.albedo.observed)
    io.write_png(out / "shaded.png", result.shaded.color)
    io.write_mask(out / "shaded_valid.png", result.shaded.valid)
    io.save_light(out / "light.json", result.light)
    io.dump_json(out / "delight_trace.json", {"converged": result.converged,
                                              "trace": result.trace})


def load_texture(path):
    """Albedo atlas from an extract-texture directory or a bare PNG."""
    path = Path(path)
    if path.is_dir():
        color = io.read_png(path / "albedo.png")[..., :3]
        valid_file = path / "albedo_valid.png"
        valid = io.read_mask(valid_file) if valid_file.is_file() else np.ones(color.shape[:2], bool)
        return TextureAtlas(color, valid)
    color = io.read_png(path)[..., :3]
    return TextureAtlas(color, np.ones(color.shape[:2], dtype=bool))


def render_avatar(avatar, atlas, pose, camera, light):
    """Relit image plus the G-buffer it came from. Lights live in the world frame."""
    gb = avatar_gbuffer(avatar, pose, camera, atlas)
    image = compose(gb.albedo_image, shade(gb.world_normal_image, gb.mask, light), gb.mask,
                    clip=True)
    return image, gb


def write_render(out_dir, image, gb):
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    io.write_png(d / "image.png", image)
    io.write_png(d / "albedo.png", gb.albedo_image)
    io.write_normal_png(d / "normal.png", gb.normal_image, gb.mask)
    io.write_mask(d / "mask.png", gb.mask)


def predict_dataset(manifest, avatar, atlas, out_dir, split="test"):
    """Render every ``split`` frame with its ground-truth pose, camera and light."""
    records = manifest.split(split)

    def one(record):
        f = load_frame(manifest, record, need=())
        image, gb = render_avatar(avatar, atlas, f.pose, f.camera, f.light)
        write_render(Path(out_dir) / record.path, image, gb)

    parallel_map(one, records)
    return len(records)
