"""Per-frame metrics of predictions against a generated dataset.

A prediction directory mirrors the dataset: ``frames/NNNN/{image,albedo,
normal,mask}.png`` for every test frame. Image and albedo metrics are
computed within the ground-truth mask; the normal error over pixels inside
both masks.
"""
from dataclasses import dataclass, field
import logging
from pathlib import Path

import numpy as np

from . import io
from .errors import DatasetError, InputError
from .metrics import mask_iou, normal_error_deg, psnr, ssim
from .parallel import parallel_map
from .synthetic import load_frame

log = logging.getLogger(__name__)

METRICS = ("image_psnr", "image_ssim", "albedo_psnr", "albedo_ssim", "normal_deg", "mask_iou")
PRED_FILES = ("image.png", "albedo.png", "normal.png", "mask.png")


@dataclass
class EvaluationReport:
    protocol: str
    frames: list = field(default_factory=list)  # dicts: index + one value per metric
    missing: list = field(default_factory=list)  # frame indices without a full prediction

    @property
    def mean(self):
        if not self.frames:
            return {k: float("nan") for k in METRICS}
        return {k: float(np.mean([f[k] for f in self.frames])) for k in METRICS}

    @property
    def ok(self):
        return not self.missing

    def to_json(self):
        return {"protocol": self.protocol, "frames": self.frames, "mean": self.mean,
                "missing": self.missing,
                "notes": "LPIPS, DISTS and FLIP are not computed (they need pretrained networks)."}

    def table(self):
        head = ["frame"] + list(METRICS)
        rows = [[str(f["index"])] + [f"{f[k]:.4f}" for k in METRICS] for f in self.frames]
        rows.append(["mean"] + [f"{v:.4f}" for v in self.mean.values()])
        widths = [max(len(r[i]) for r in rows + [head]) for i in range(len(head))]
        fmt = lambda r: "  ".join(c.rjust(w) for c, w in zip(r, widths))  # noqa: E731
        lines = [fmt(head)] + [fmt(r) for r in rows]
        if self.missing:
            lines.append("missing predictions: " + ", ".join(str(i) for i in self.missing))
        return "\n".join(lines) + "\n"


def frame_metrics(gt, pred_image, pred_albedo, pred_normal, pred_mask):
    m = gt.mask
    both = m & pred_mask
    with np.errstate(all="ignore"):
        normal = (normal_error_deg(gt.normal, pred_normal, both) if both.any()
                  else 180.0)  # nothing overlaps: count as maximally wrong
    return {
        "index": gt.record.index,
        "image_psnr": psnr(gt.image, pred_image, m),
        "image_ssim": ssim(gt.image, pred_image, m),
        "albedo_psnr": psnr(gt.albedo, pred_albedo, m),
        "albedo_ssim": ssim(gt.albedo, pred_albedo, m),
        "normal_deg": normal,
        "mask_iou": mask_iou(m, pred_mask),
    }


def _load_prediction(pred_root, record):
    d = Path(pred_root) / record.path
    if not all((d / name).is_file() for name in PRED_FILES):
        return None
    try:
        mask = io.read_mask(d / "mask.png")
        return (io.read_png(d / "image.png")[..., :3], io.read_png(d / "albedo.png")[..., :3],
                io.read_normal_png(d / "normal.png", mask), mask)
    except InputError as exc:
        raise DatasetError(f"prediction for frame {record.index}: {exc}") from exc


def evaluate_run(manifest, pred_dir, split="test", write=True):
    """Score every frame of ``split``; writes report.json and report.txt into ``pred_dir``."""
    records = manifest.split(split)
    if not records:
        raise InputError(f"dataset has no {split!r} frames")

    def one(record):
        pred = _load_prediction(pred_dir, record)
        if pred is None:
            return record.index, None
        gt = load_frame(manifest, record)
        if pred[0].shape != gt.image.shape:
            raise DatasetError(f"prediction for frame {record.index} has shape "
                               f"{pred[0].shape}, expected {gt.image.shape}")
        return record.index, frame_metrics(gt, *pred)

    results = parallel_map(one, records)
    report = EvaluationReport(manifest.protocol,
                              [r for _, r in results if r is not None],
                              [i for i, r in results if r is None])
    if report.missing:
        log.warning("missing predictions for frames %s", report.missing)
    if write:
        out = Path(pred_dir)
        out.mkdir(parents=True, exist_ok=True)
        io.dump_json(out / "report.json", report.to_json())
        (out / "report.txt").write_text(report.table())
    return report
