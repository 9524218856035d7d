"""Command line entry point: ``scenefit-export SPEC OUT``."""

from __future__ import annotations

import argparse
import sys

from .encoder import ENCODERS, get_encoder
from .export import export
from .specfile import SpecFileError, load_crop_specs


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scenefit-export",
        description="Crop objects out of images, encode each crop as a "
                    "512-dim feature vector, and write arrangement-scene "
                    "JSONL.",
    )
    parser.add_argument("spec", help="crop-specification JSON file")
    parser.add_argument("out", help="output JSONL path")
    parser.add_argument("--encoder", default="descriptor512",
                        choices=sorted(ENCODERS),
                        help="feature backend (default: %(default)s)")
    args = parser.parse_args(argv)

    try:
        scene_specs = load_crop_specs(args.spec)
    except SpecFileError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    report = export(scene_specs, args.out, encoder=get_encoder(args.encoder))
    for err in report.errors:
        print(f"error: scene={err.scene_id} image={err.image} "
              f"object={err.object_id}: {err.message}", file=sys.stderr)
    print(f"wrote {len(report.written)} scene(s) to {args.out}")
    if not report.ok:
        withheld = len(scene_specs) - len(report.written)
        print(f"{len(report.errors)} object error(s); "
              f"{withheld} scene(s) withheld", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
