#!/usr/bin/env python3
"""Build a manifest by pairing image and mask files on their stems.

Masks are matched to images by longest-prefix stem match, which covers
the common <case>.png / <case>_segmentation.png naming patterns.
"""

import argparse
import sys
from pathlib import Path

IMAGE_SUFFIXES = {".png", ".ppm", ".pgm"}


def stem_key(path: Path) -> str:
    return path.stem.lower()


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--images", required=True)
    parser.add_argument("--masks", required=True)
    parser.add_argument("--split", required=True, choices=("train", "val", "test"))
    parser.add_argument("--out", required=True)
    parser.add_argument("--append", action="store_true")
    args = parser.parse_args()

    images = sorted(p for p in Path(args.images).iterdir()
                    if p.suffix.lower() in IMAGE_SUFFIXES)
    masks = sorted(p for p in Path(args.masks).iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES)
    if not images:
        sys.exit(f"no decodable images under {args.images}")

    mask_by_stem = {stem_key(m): m for m in masks}
    lines = []
    missing = []
    for img in images:
        key = stem_key(img)
        mask = mask_by_stem.get(key)
        if mask is None:
            candidates = [m for s, m in mask_by_stem.items() if s.startswith(key)]
            mask = candidates[0] if len(candidates) == 1 else None
        if mask is None:
            missing.append(img.name)
            continue
        lines.append(f"{key}\t{img}\t{mask}\t{args.split}")
    if missing:
        sys.exit(f"no mask found for: {', '.join(missing[:5])}"
                 + (" ..." if len(missing) > 5 else ""))

    mode = "a" if args.append else "w"
    with open(args.out, mode, encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"{'appended' if args.append else 'wrote'} {len(lines)} "
          f"{args.split} records to {args.out}")


if __name__ == "__main__":
    main()
