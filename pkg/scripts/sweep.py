"""Sweep one [fit] setting over an existing dataset and print mean test metrics per value.

    python scripts/sweep.py --data runs/a3/data --key lambda_smooth --values 0.005 0.01 0.02 0.05
"""
import argparse
import tempfile
import time
import warnings
from dataclasses import fields, replace

from avatar_forge.config import load_config
from avatar_forge.evaluation import evaluate_run
from avatar_forge.fitting import FitConfig
from avatar_forge.pipeline import Avatar, extract_texture, fit_dataset, predict_dataset
from avatar_forge.synthetic import load_character, load_manifest

FIT_KEYS = [f.name for f in fields(FitConfig)]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data", required=True)
    p.add_argument("--key", choices=FIT_KEYS, required=True)
    p.add_argument("--values", nargs="+", required=True)
    p.add_argument("--config", help="INI file with the base settings")
    args = p.parse_args()

    manifest = load_manifest(args.data)
    cfg = load_config(args.config)
    kind = type(getattr(cfg.fit, args.key))
    print("value  psnr  ssim  normal_deg  iou  train_iou  seconds")
    for raw in args.values:
        fit_cfg = replace(cfg.fit, **{args.key: kind(raw)})
        start = time.perf_counter()
        result, report = fit_dataset(manifest, fit_cfg)
        avatar = Avatar(load_character(manifest), result.offsets)
        t = cfg.texture
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            atlas = extract_texture(manifest, avatar, t.atlas_resolution, t.orthogonality_fraction,
                                    t.max_iterations, t.tol, t.hole_fill,
                                    anderson=t.anderson).albedo
        with tempfile.TemporaryDirectory() as pred:
            predict_dataset(manifest, avatar, atlas, pred)
            mean = evaluate_run(manifest, pred, write=False).mean
        train_iou = sum(report["iou_after"]) / len(report["iou_after"])
        print(f"{raw}  {mean['image_psnr']:.2f}  {mean['image_ssim']:.4f}  "
              f"{mean['normal_deg']:.2f}  {mean['mask_iou']:.4f}  {train_iou:.4f}  "
              f"{time.perf_counter() - start:.0f}", flush=True)


if __name__ == "__main__":
    main()
