"""Synthetic disk dataset: bright disks on a dark noisy background.

A desk-scale stand-in for real segmentation data. Each sample is one RGB
image with a single filled disk of random center, radius and brightness;
the mask marks the disk pixels. Files are written as NetPBM (P6 images,
P5 masks) next to a manifest, so the full ingestion path is exercised.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import write_pgm, write_ppm
from .util import derive_rng


def render_disk(size: int, rng: np.random.Generator):
    """One (image uint8 (3,H,W), mask uint8 (H,W)) pair."""
    margin = size // 6
    cy = rng.uniform(margin, size - margin)
    cx = rng.uniform(margin, size - margin)
    radius = rng.uniform(size * 0.12, size * 0.28)
    yy, xx = np.mgrid[0:size, 0:size]
    inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
    brightness = rng.uniform(0.75, 0.95)
    image = rng.uniform(0.0, 0.08, size=(3, size, size))
    jitter = rng.uniform(-0.05, 0.05, size=3)
    for ch in range(3):
        image[ch][inside] = brightness + jitter[ch]
    image = np.clip(image + rng.normal(0.0, 0.02, size=image.shape), 0.0, 1.0)
    return (np.round(image * 255).astype(np.uint8),
            np.where(inside, 255, 0).astype(np.uint8))


def make_disk_dataset(root, n_train: int = 32, n_test: int = 8,
                      size: int = 64, seed: int = 0) -> Path:
    """Write images, masks and a manifest under ``root``; returns the
    manifest path."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rng = derive_rng(seed, "synthetic")
    lines = ["# synthetic disk dataset"]
    for i in range(n_train + n_test):
        split = "train" if i < n_train else "test"
        rid = f"disk{i:03d}"
        image, mask = render_disk(size, rng)
        write_ppm(root / "images" / f"{rid}.ppm", image)
        write_pgm(root / "masks" / f"{rid}.pgm", mask)
        lines.append(f"{rid}\timages/{rid}.ppm\tmasks/{rid}.pgm\t{split}")
    manifest = root / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest
