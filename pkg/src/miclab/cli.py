"""Command line interface.

Flags only pick the command and file paths; everything sweepable lives
in the YAML files those paths point to.
"""

from __future__ import annotations

import argparse
import sys

from . import harness
from .errors import MiclabError

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="miclab",
        description="masked-consistency domain-adaptation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a benchmark dataset")
    p.add_argument("spec", help="YAML scene spec file")
    p.add_argument("out_dir", help="dataset directory to create")
    p.add_argument("--force", action="store_true",
                   help="overwrite a non-empty directory")

    p = sub.add_parser("train", help="run or resume one training run")
    p.add_argument("config", help="YAML experiment config")
    p.add_argument("--out", default=None,
                   help="run directory (default: config output_dir)")

    p = sub.add_parser("sweep", help="grid of runs from a sweep file")
    p.add_argument("sweep", help="YAML sweep file")
    p.add_argument("--out", default=None, help="sweep output directory")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel run processes (default 1)")

    p = sub.add_parser("probe", help="occlusion probe of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("dataset", help="dataset root directory")
    p.add_argument("--patch", type=int, default=None,
                   help="probe window (default: half the image height)")
    p.add_argument("--split", default="target/val")
    p.add_argument("--out", default=None, help="write a CSV here")

    p = sub.add_parser("report", help="compare finished runs")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--out", required=True, help="report output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            top = harness.cmd_generate(args.spec, args.out_dir, force=args.force)
            print(f"wrote dataset {top['content_hash'][:12]} "
                  f"({sum(top['counts'].values())} samples)")
        elif args.command == "train":
            info = harness.cmd_train(args.config, args.out)
            print(f"run finished: {info['steps']} steps "
                  f"in {info['wall_seconds']}s")
        elif args.command == "sweep":
            rows = harness.cmd_sweep(args.sweep, args.out, workers=args.workers)
            medians = [r for r in rows if r["seed"] == "median"]
            print(f"sweep finished: {len(rows) - len(medians)} runs, "
                  f"{len(medians)} cells")
        elif args.command == "probe":
            rep = harness.cmd_probe(args.checkpoint, args.dataset,
                                    probe_patch=args.patch, split=args.split,
                                    out_path=args.out)
            print(f"probe mIoU {rep['probe_miou']:.4f} "
                  f"(patch {rep['patch']})")
        elif args.command == "report":
            table = harness.cmd_report(args.runs, args.out)
            for row in table:
                med = "n/a" if row["median"] is None else f"{row['median']:.4f}"
                print(f"{row['label']}: median {med} over {row['runs']} runs")
    except MiclabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except IOError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
