"""Command line front end.

    fpddump --images DIR --out DIR [--seed N] [--channels C]
            [--canvas N] [--levels N]

Exit codes: 0 all images dumped, 1 some images failed, 2 bad invocation.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .dump import DumpJob, dump_features
from .pyramid import PyramidSpec

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def _list_images(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpddump",
        description="Dump per-image FPD1 feature pyramids from a directory of images.",
    )
    parser.add_argument("--images", required=True, help="directory of png/jpg images")
    parser.add_argument("--out", required=True, help="output directory for .fpd files")
    parser.add_argument("--seed", type=int, default=0, help="network weight seed")
    parser.add_argument("--channels", type=int, default=256, help="conv5 channel count")
    parser.add_argument("--canvas", type=int, default=1713, help="pyramid canvas side")
    parser.add_argument("--levels", type=int, default=7, help="pyramid level count")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    images_dir = Path(args.images)
    if not images_dir.is_dir():
        print(f"fpddump: not a directory: {images_dir}", file=sys.stderr)
        return 2
    images = _list_images(images_dir)
    if not images:
        print(f"fpddump: no images in {images_dir}", file=sys.stderr)
        return 2
    try:
        spec = PyramidSpec(num_levels=args.levels, canvas_side=args.canvas)
        job = DumpJob(
            images=images,
            out_dir=args.out,
            spec=spec,
            seed=args.seed,
            channels=args.channels,
        )
        report = dump_features(job)
    except ValueError as exc:
        print(f"fpddump: {exc}", file=sys.stderr)
        return 2
    for name, message in sorted(report.failures.items()):
        print(f"fpddump: failed for {name}: {message}", file=sys.stderr)
    print(
        f"dumped {len(report.written)} image(s) to {report.out_dir} "
        f"(digest {report.config_digest[:12]}...)"
    )
    return 1 if report.failures else 0


if __name__ == "__main__":
    sys.exit(main())
