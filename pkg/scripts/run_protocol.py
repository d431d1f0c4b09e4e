"""Generate a protocol dataset and run fit, texture extraction, prediction and evaluation.

    python scripts/run_protocol.py --protocol a --seed 3 --work runs/a3 [--config fit.ini]

Every stage goes through the ``avatar-forge`` command line, so the run
directory ends up with the same files a user would get by hand.
"""
import argparse
import json
import sys
import time
from pathlib import Path

from avatar_forge.cli import main as cli


def stage(name, argv, timings):
    start = time.perf_counter()
    code = cli(argv)
    timings[name] = round(time.perf_counter() - start, 1)
    print(f"[{name}] exit {code}, {timings[name]} s", flush=True)
    if code:
        sys.exit(code)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--protocol", choices=("a", "b"), default="a")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--work", required=True)
    p.add_argument("--config", help="INI file passed to every stage")
    p.add_argument("--res", help="WxH, default from the config")
    args = p.parse_args()

    work = Path(args.work)
    data, avatar, tex, pred = (work / n for n in ("data", "avatar/avatar.json", "tex", "pred"))
    common = ["--config", args.config] if args.config else []
    gen = ["gen-data", "--protocol", args.protocol, "--seed", str(args.seed), "--out", str(data)]
    if args.res:
        gen += ["--res", args.res]
    if args.protocol == "b":
        gen += ["--train", "10", "--test", "10"]
    timings = {}
    stage("gen-data", common + gen + ["--force"], timings)
    stage("fit", common + ["fit", "--data", str(data), "--out", str(avatar)], timings)
    stage("extract-texture", common + ["extract-texture", "--data", str(data),
                                       "--avatar", str(avatar), "--out", str(tex)], timings)
    stage("predict", ["predict", "--data", str(data), "--avatar", str(avatar),
                      "--atlas", str(tex), "--out", str(pred)], timings)
    stage("evaluate", ["evaluate", "--data", str(data), "--pred", str(pred)], timings)
    report = json.loads((pred / "report.json").read_text())
    summary = {"protocol": args.protocol, "seed": args.seed, "mean": report["mean"],
               "seconds": timings}
    (work / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
