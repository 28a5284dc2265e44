"""Label-map visualization with a fixed color palette."""

from __future__ import annotations

import numpy as np

from .core import IGNORE_LABEL, hsv_to_rgb
from .evaluate import Matching

# 27 maximally distinct base colors (RGB)
_BASE_PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
    (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
    (255, 255, 255), (0, 0, 0), (100, 140, 55), (255, 105, 97),
    (75, 0, 130), (0, 200, 140), (150, 75, 100),
], dtype=np.uint8)

_GOLDEN_ANGLE = 137.50776405003785


def palette(n: int) -> np.ndarray:
    """First n palette colors; beyond 27, hues rotate by the golden angle."""
    if n <= len(_BASE_PALETTE):
        return _BASE_PALETTE[:n].copy()
    extra_n = n - len(_BASE_PALETTE)
    hues = (np.arange(extra_n) * _GOLDEN_ANGLE) % 360.0
    extra = hsv_to_rgb(hues, np.full(extra_n, 0.8), np.full(extra_n, 0.95))
    return np.concatenate([_BASE_PALETTE, extra.reshape(extra_n, 3)])


def render(labels: np.ndarray, n_labels: int | None = None,
           matching: Matching | None = None) -> np.ndarray:
    """Color a label map; ignore pixels render black.

    With a matching, each predicted group takes the color of its matched
    ground-truth class so that prediction and ground truth renderings
    align; unmatched groups render mid-gray.
    """
    labels = np.asarray(labels)
    if n_labels is None:
        valid = labels[labels != IGNORE_LABEL]
        n_labels = int(valid.max()) + 1 if valid.size else 1
    if matching is not None:
        n_colors = max(int(matching.mapping.max()) + 1, 1)
        colors = palette(n_colors)
        lut = np.zeros((n_labels, 3), dtype=np.uint8)
        for p in range(n_labels):
            g = int(matching.mapping[p]) if p < len(matching.mapping) else -1
            lut[p] = colors[g] if g >= 0 else (128, 128, 128)
    else:
        lut = palette(n_labels)
    out = np.zeros(labels.shape + (3,), dtype=np.uint8)
    valid = labels != IGNORE_LABEL
    out[valid] = lut[labels[valid].astype(np.int64)]
    return out
