"""Command line for the extractor.

    extract-grids --images img0.png img1.png --templates-dir templates/ \
        --out features/ --resolution 224 --backend classical
"""

from __future__ import annotations

import argparse
import sys

from .errors import ExtractorError, ModelLoadError
from .extraction import ExtractionJob, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="extract-grids", description=__doc__)
    parser.add_argument("--images", nargs="*", default=[], help="query image paths")
    parser.add_argument("--templates-dir", help="instance/view template tree")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--prompt", default="objects")
    parser.add_argument("--box-threshold", type=float, default=0.15)
    parser.add_argument("--resolution", type=int, default=448, choices=[224, 448])
    parser.add_argument("--backend", default="classical", choices=["classical", "torch"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not args.images and not args.templates_dir:
        print("error: nothing to do (no --images and no --templates-dir)", file=sys.stderr)
        return 1
    try:
        job = ExtractionJob(
            image_paths=tuple(args.images),
            template_dir=args.templates_dir,
            out_dir=args.out,
            prompt=args.prompt,
            box_threshold=args.box_threshold,
            resolution=args.resolution,
            backend=args.backend,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        result = extract(job)
    except ModelLoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ExtractorError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if "templates" in result:
        print(f"templates: {result['templates']}")
    for path in result["queries"]:
        print(f"queries: {path}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
