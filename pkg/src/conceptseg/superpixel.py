"""Graph-based superpixel segmentation (Felzenszwalb-Huttenlocher style).

The pixel grid is 8-connected; edge weights are Euclidean RGB distances
after per-channel Gaussian smoothing. Edge processing order is fully
determined by a stable sort on (weight, source index, target index), so
the output is identical across platforms for the same input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FelzParams:
    scale: float = 1000.0
    sigma: float = 0.3
    min_size: int = 250

    def __post_init__(self) -> None:
        if self.scale <= 0:
            raise ValueError("scale must be > 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.min_size < 1:
            raise ValueError("min_size must be >= 1")


def dynamic_min_size(height: int, width: int) -> int:
    """Minimum segment size scaled to image area, floored at 250 pixels."""
    if height < 1 or width < 1:
        raise ValueError("image dimensions must be >= 1")
    value = max((height / 768.0) * (width / 1024.0) * 5000.0, 250.0)
    return int(round(value))


def gaussian_smooth(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding, radius ceil(3*sigma)."""
    out = np.asarray(img, dtype=np.float64)
    if sigma <= 0:
        return out.copy()
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x * x) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()

    def conv_axis(a: np.ndarray, axis: int) -> np.ndarray:
        pad = [(0, 0)] * a.ndim
        pad[axis] = (radius, radius)
        # reflect padding needs >= 2 samples along the axis
        mode = "reflect" if a.shape[axis] > radius else "edge"
        padded = np.pad(a, pad, mode=mode)
        res = np.zeros_like(a)
        sl = [slice(None)] * a.ndim
        for i, k in enumerate(kernel):
            sl[axis] = slice(i, i + a.shape[axis])
            res += k * padded[tuple(sl)]
        return res

    out = conv_axis(out, 0)
    out = conv_axis(out, 1)
    return out


class _UnionFind:
    """Union-find over pixels with component size tracking."""

    __slots__ = ("parent", "size")

    def __init__(self, n: int) -> None:
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, i: int) -> int:
        parent = self.parent
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    def union(self, a: int, b: int) -> int:
        """Merge the components of roots a and b; returns the new root."""
        if self.size[a] < self.size[b]:
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        return a


def _grid_edges(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """All 8-connected grid edges as (source, target) flat-index arrays."""
    idx = np.arange(height * width).reshape(height, width)
    pairs = []
    # east, south, south-east, south-west neighbors cover every edge once
    pairs.append((idx[:, :-1], idx[:, 1:]))
    pairs.append((idx[:-1, :], idx[1:, :]))
    pairs.append((idx[:-1, :-1], idx[1:, 1:]))
    pairs.append((idx[:-1, 1:], idx[1:, :-1]))
    src = np.concatenate([a.ravel() for a, _ in pairs])
    dst = np.concatenate([b.ravel() for _, b in pairs])
    return src, dst


def felzenszwalb_segment(img: np.ndarray, params: FelzParams) -> np.ndarray:
    """Segment an image into superpixels; returns an H x W uint16 label map.

    Labels form a full partition with contiguous ids 0..n-1 assigned in
    row-major order of each segment's first pixel. After the min-size
    post-merge, every segment has at least ``params.min_size`` pixels
    unless the image itself is smaller than that.
    """
    img = np.asarray(img)
    height, width = img.shape[:2]
    n = height * width
    smooth = gaussian_smooth(img, params.sigma).reshape(n, 3)

    src, dst = _grid_edges(height, width)
    diff = smooth[src] - smooth[dst]
    weights = np.sqrt((diff * diff).sum(axis=1))
    order = np.lexsort((dst, src, weights))
    src = src[order].tolist()
    dst = dst[order].tolist()
    weights = weights[order].tolist()

    uf = _UnionFind(n)
    find = uf.find
    size = uf.size
    # threshold per component root: max internal MST weight + scale/|C|
    threshold = [params.scale] * n

    for w, a, b in zip(weights, src, dst):
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        if w <= threshold[ra] and w <= threshold[rb]:
            root = uf.union(ra, rb)
            threshold[root] = w + params.scale / size[root]

    # min-size post-merge: ascending-weight pass, so each small component
    # joins across its minimum-weight boundary edge
    min_size = params.min_size
    for w, a, b in zip(weights, src, dst):
        ra, rb = find(a), find(b)
        if ra != rb and (size[ra] < min_size or size[rb] < min_size):
            uf.union(ra, rb)

    roots = [find(i) for i in range(n)]
    labels = np.empty(n, dtype=np.uint16)
    remap: dict[int, int] = {}
    for i, r in enumerate(roots):
        if r not in remap:
            remap[r] = len(remap)
        labels[i] = remap[r]
    if len(remap) > 65535:
        raise ValueError("more than 65535 segments; increase min_size")
    return labels.reshape(height, width)
