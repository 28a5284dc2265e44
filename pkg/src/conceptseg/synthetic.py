"""Synthetic fixtures: textured-region images and two-scale point clouds.

Both generators have known ground truth by construction, which makes
them usable as end-to-end oracles for the pipeline and the clustering
stage.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import hsv_to_rgb, save_image, save_labelmap, write_manifest

# hue band centers for the four texture types, degrees
REGION_HUES = (0.0, 90.0, 180.0, 270.0)


def textured_image(size: int, rng: np.random.Generator,
                   hue_jitter: float = 8.0) -> tuple[np.ndarray, np.ndarray]:
    """One image of four textured regions plus its ground-truth map.

    The frame splits into four quadrant-like regions at jittered split
    lines; each region gets one of the four hue bands (random
    permutation) with per-pixel hue/saturation/value noise.
    """
    split_r = int(round(rng.uniform(0.35, 0.65) * size))
    split_c = int(round(rng.uniform(0.35, 0.65) * size))
    gt = np.zeros((size, size), dtype=np.uint16)
    gt[:split_r, split_c:] = 1
    gt[split_r:, :split_c] = 2
    gt[split_r:, split_c:] = 3
    types = rng.permutation(4)

    hue = np.empty((size, size))
    for region in range(4):
        mask = gt == region
        base = REGION_HUES[types[region]]
        hue[mask] = (base + rng.uniform(-hue_jitter, hue_jitter,
                                        size=int(mask.sum()))) % 360.0
    sat = np.clip(rng.normal(0.75, 0.04, size=(size, size)), 0.0, 1.0)
    val = np.clip(rng.normal(0.75, 0.04, size=(size, size)), 0.0, 1.0)
    img = hsv_to_rgb(hue, sat, val)
    # ground truth is the texture type, not the quadrant position
    return img, types[gt].astype(np.uint16)


def generate_dataset(out_dir: str | Path, n_images: int = 20,
                     size: int = 128, seed: int = 0) -> tuple[Path, Path]:
    """Write a textured-region dataset; returns (manifest, gt manifest)."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "gt").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    image_paths = []
    gt_paths = []
    for i in range(n_images):
        img, gt = textured_image(size, rng)
        img_path = out_dir / "images" / f"{i:04d}.png"
        gt_path = out_dir / "gt" / f"{i:04d}.png"
        save_image(img_path, img)
        save_labelmap(gt_path, gt)
        image_paths.append(img_path)
        gt_paths.append(gt_path)
    manifest = out_dir / "manifest.txt"
    gt_manifest = out_dir / "gt_manifest.txt"
    write_manifest(manifest, image_paths)
    write_manifest(gt_manifest, gt_paths)
    return manifest, gt_manifest


def two_scale_clusters(n_per_class: int = 1000, seed: int = 0,
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Two concepts with very different radii, known labels.

    Concept 0 is a tight Gaussian blob at the origin; concept 1 is a
    diffuse ring of radius 5. Plain k-means with two centers cuts the
    ring in half instead of separating blob from ring.
    """
    rng = np.random.default_rng(seed)
    blob = rng.normal(0.0, 0.05, size=(n_per_class, 2))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n_per_class)
    radius = 5.0 + rng.normal(0.0, 0.15, size=n_per_class)
    ring = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    points = np.concatenate([blob, ring])
    labels = np.concatenate([np.zeros(n_per_class, dtype=np.int64),
                             np.ones(n_per_class, dtype=np.int64)])
    return points, labels
