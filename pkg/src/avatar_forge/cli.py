"""``avatar-forge`` command line.

Exit codes: 0 success, 1 runtime or numerical failure (including corrupt
dataset files), 2 usage or schema error.
"""
import argparse
import logging
from pathlib import Path
import shutil
import sys

import numpy as np

from . import io
from .config import load_config, override
from .errors import DatasetError, FitDivergedError, IllConditionedError, InputError
from .evaluation import evaluate_run
from .pipeline import (extract_texture, fit_dataset, load_avatar, load_texture,
                       predict_dataset, render_avatar, save_avatar, save_texture, write_render)
from .synthetic import ProceduralCharacterSpec, gen_character, gen_protocol_a, gen_protocol_b
from .synthetic import load_manifest

log = logging.getLogger("avatar_forge")


def _resolution(text):
    try:
        w, h = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("resolution must be positive")
    return w, h


def cmd_gen_data(args, cfg):
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        if not args.force:
            raise InputError(f"{out} exists and is not empty (use --force)")
        shutil.rmtree(out)
    data = override(cfg.data, train=args.train, test=args.test)
    w, h = args.res or (data.width, data.height)
    spec = ProceduralCharacterSpec(seed=args.seed, joint_count=data.joint_count,
                                   pattern=data.pattern, atlas_resolution=data.atlas_resolution,
                                   clothing_amplitude=data.clothing_amplitude)
    character = gen_character(spec)
    if args.protocol == "a":
        manifest = gen_protocol_a(character, out, data.train, data.test, args.seed, (w, h))
    else:
        if data.train != data.test:
            raise InputError("protocol b needs --train equal to --test")
        manifest = gen_protocol_b(character, out, data.train, args.seed, (w, h))
    print(manifest.root / "manifest.json")
    return 0


def cmd_fit(args, cfg):
    manifest = load_manifest(args.data)
    fit_cfg = override(cfg.fit, iterations=args.iterations, resolution_scale=args.resolution_scale)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        result, report = fit_dataset(manifest, fit_cfg)
    except FitDivergedError as exc:
        trace_path = out.with_suffix(".trace.json")
        io.dump_json(trace_path, {"error": str(exc), "trace": exc.trace})
        print(f"fit diverged: {exc}; trace written to {trace_path}", file=sys.stderr)
        return 1
    save_avatar(out, manifest, result.offsets, report)
    print(out)
    return 0


def cmd_extract_texture(args, cfg):
    manifest = load_manifest(args.data)
    avatar = load_avatar(args.avatar)
    t = cfg.texture
    result = extract_texture(manifest, avatar, t.atlas_resolution, t.orthogonality_fraction,
                             t.max_iterations, t.tol, t.hole_fill,
                             anderson=t.anderson)
    save_texture(args.out, result)
    print(args.out)
    return 0


def cmd_render(args, cfg):
    avatar = load_avatar(args.avatar)
    atlas = load_texture(args.atlas)
    poses = io.load_poses(args.pose)
    camera = io.load_camera(args.camera)
    light = io.load_light(args.light)
    image, gb = render_avatar(avatar, atlas, poses[0], camera, light)
    for path in (args.out, args.albedo, args.normal, args.mask, args.depth):
        if path:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
    io.write_png(args.out, image)
    if args.albedo:
        io.write_png(args.albedo, gb.albedo_image)
    if args.normal:
        io.write_normal_png(args.normal, gb.normal_image, gb.mask)
    if args.mask:
        io.write_mask(args.mask, gb.mask)
    if args.depth:
        io.write_pfm(args.depth, np.where(gb.mask, gb.depth_image, 0.0))
    return 0


def cmd_predict(args, cfg):
    manifest = load_manifest(args.data)
    n = predict_dataset(manifest, load_avatar(args.avatar), load_texture(args.atlas), args.out)
    print(f"rendered {n} frames to {args.out}")
    return 0


def cmd_evaluate(args, cfg):
    report = evaluate_run(load_manifest(args.data), args.pred)
    sys.stdout.write(report.table())
    return 0 if report.ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="avatar-forge", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="INI file with [fit], [texture] and [data] sections")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic protocol dataset")
    g.add_argument("--protocol", choices=("a", "b"), required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--train", type=int)
    g.add_argument("--test", type=int)
    g.add_argument("--res", type=_resolution, help="WxH")
    g.add_argument("--force", action="store_true", help="replace a non-empty output dir")
    g.set_defaults(func=cmd_gen_data)

    f = sub.add_parser("fit", help="fit clothing offsets to the training masks")
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--iterations", type=int)
    f.add_argument("--resolution-scale", type=float)
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("extract-texture", help="back-project, aggregate and delight")
    t.add_argument("--data", required=True)
    t.add_argument("--avatar", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_extract_texture)

    r = sub.add_parser("render", help="render the avatar in a pose, view and light")
    for name in ("avatar", "atlas", "pose", "camera", "light", "out"):
        r.add_argument(f"--{name}", required=True)
    for name in ("albedo", "normal", "mask"):
        r.add_argument(f"--{name}")
    r.add_argument("--depth", help="32-bit PFM, 0 on the background")
    r.set_defaults(func=cmd_render)

    d = sub.add_parser("predict", help="render predictions for every test frame")
    for name in ("data", "avatar", "atlas", "out"):
        d.add_argument(f"--{name}", required=True)
    d.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="score predictions against ground truth")
    e.add_argument("--data", required=True)
    e.add_argument("--pred", required=True)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, load_config(args.config))
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, IllConditionedError, FitDivergedError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
