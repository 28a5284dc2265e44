"""Per-primitive statistics, adjacency, merging, and crop extraction.

A "primitive" is one superpixel segment. Small or irregular primitives
are merged into their dominant neighbors when hues agree; surviving
primitives are cropped to their bounding boxes (background filled with
the dataset mean color) for embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import rgb_to_hsv


@dataclass
class PrimitiveStats:
    primitive_id: int
    area: int
    perimeter: int
    p_ratio: float
    mean_hue: float
    bbox: tuple[int, int, int, int]   # row_min, col_min, row_max, col_max
    merged: bool = False


@dataclass
class MergeParams:
    hue_threshold: float = 40.0       # degrees of circular hue distance
    area_factor: float = 0.001        # fraction of full image area
    p_ratio_threshold: float = 9.0


def circular_hue_distance(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


# ---------------------------------------------------------------------------
# Adjacency via 2x2 windows
# ---------------------------------------------------------------------------

def build_adjacency(labels: np.ndarray) -> dict[int, list[tuple[int, int]]]:
    """Top-3 neighbor lists keyed by primitive id.

    Two primitives are neighbors iff some 2x2 pixel window contains at
    least one pixel of each; the contact count is the number of such
    windows. For 1 x N or N x 1 maps the windows clip to 1 x 2 / 2 x 1.
    Lists are sorted by contact count descending, ties by ascending
    neighbor id, and truncated to three entries.
    """
    labels = np.asarray(labels)
    h, w = labels.shape
    if h >= 2 and w >= 2:
        corners = np.stack([
            labels[:-1, :-1].ravel(), labels[:-1, 1:].ravel(),
            labels[1:, :-1].ravel(), labels[1:, 1:].ravel(),
        ], axis=1)
    elif h == 1 and w >= 2:
        corners = np.stack([labels[0, :-1], labels[0, 1:]], axis=1)
    elif w == 1 and h >= 2:
        corners = np.stack([labels[:-1, 0], labels[1:, 0]], axis=1)
    else:
        corners = np.zeros((0, 1), dtype=labels.dtype)

    u = np.sort(corners.astype(np.int64), axis=1)
    k = u.shape[1]
    first = np.ones_like(u, dtype=bool)
    first[:, 1:] = u[:, 1:] != u[:, :-1]
    pair_lo = []
    pair_hi = []
    for i in range(k):
        for j in range(i + 1, k):
            # one count per distinct unordered label pair per window
            valid = first[:, i] & first[:, j] & (u[:, i] != u[:, j])
            pair_lo.append(u[valid, i])
            pair_hi.append(u[valid, j])
    if pair_lo:
        lo = np.concatenate(pair_lo)
        hi = np.concatenate(pair_hi)
    else:
        lo = hi = np.zeros(0, dtype=np.int64)

    n = int(labels.max()) + 1 if labels.size else 0
    adjacency: dict[int, list[tuple[int, int]]] = {p: [] for p in range(n)}
    if lo.size:
        keys = lo * n + hi
        uniq, counts = np.unique(keys, return_counts=True)
        neighbors: dict[int, dict[int, int]] = {p: {} for p in range(n)}
        for key, cnt in zip(uniq.tolist(), counts.tolist()):
            a, b = divmod(key, n)
            neighbors[a][b] = cnt
            neighbors[b][a] = cnt
        for p in range(n):
            ranked = sorted(neighbors[p].items(), key=lambda it: (-it[1], it[0]))
            adjacency[p] = ranked[:3]
    return adjacency


# ---------------------------------------------------------------------------
# Shape statistics
# ---------------------------------------------------------------------------

def shape_stats(labels: np.ndarray,
                hue: np.ndarray) -> list[PrimitiveStats]:
    """Area, perimeter, shape ratio, circular mean hue and bbox per primitive.

    Perimeter counts unit pixel edges whose two sides carry different
    labels or where one side is outside the image; internal boundaries
    therefore contribute one edge to each of the two primitives.
    """
    labels = np.asarray(labels)
    if labels.shape != np.asarray(hue).shape:
        raise ValueError("label map and hue channel dimensions differ")
    h, w = labels.shape
    n = int(labels.max()) + 1
    flat = labels.ravel().astype(np.int64)

    area = np.bincount(flat, minlength=n)
    if int(area.sum()) != h * w:
        raise ValueError("inconsistent stats: areas do not sum to H*W")

    perim = np.zeros(n, dtype=np.int64)
    if h > 1:
        m = labels[:-1, :] != labels[1:, :]
        perim += np.bincount(labels[:-1, :][m].astype(np.int64).ravel(), minlength=n)
        perim += np.bincount(labels[1:, :][m].astype(np.int64).ravel(), minlength=n)
    if w > 1:
        m = labels[:, :-1] != labels[:, 1:]
        perim += np.bincount(labels[:, :-1][m].astype(np.int64).ravel(), minlength=n)
        perim += np.bincount(labels[:, 1:][m].astype(np.int64).ravel(), minlength=n)
    for border in (labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]):
        perim += np.bincount(border.astype(np.int64), minlength=n)

    rad = np.deg2rad(np.asarray(hue, dtype=np.float64).ravel())
    sum_cos = np.bincount(flat, weights=np.cos(rad), minlength=n)
    sum_sin = np.bincount(flat, weights=np.sin(rad), minlength=n)
    mean_hue = np.rad2deg(np.arctan2(sum_sin, sum_cos)) % 360.0
    # a tiny negative angle can round to exactly 360.0 after the modulo
    mean_hue[mean_hue >= 360.0] = 0.0

    rows, cols = np.divmod(np.arange(h * w), w)
    row_min = np.full(n, h, dtype=np.int64)
    row_max = np.full(n, -1, dtype=np.int64)
    col_min = np.full(n, w, dtype=np.int64)
    col_max = np.full(n, -1, dtype=np.int64)
    np.minimum.at(row_min, flat, rows)
    np.maximum.at(row_max, flat, rows)
    np.minimum.at(col_min, flat, cols)
    np.maximum.at(col_max, flat, cols)

    stats = []
    for p in range(n):
        a = int(area[p])
        stats.append(PrimitiveStats(
            primitive_id=p,
            area=a,
            perimeter=int(perim[p]),
            p_ratio=float(perim[p]) / np.sqrt(a),
            mean_hue=float(mean_hue[p]),
            bbox=(int(row_min[p]), int(col_min[p]),
                  int(row_max[p]), int(col_max[p])),
        ))
    return stats


# ---------------------------------------------------------------------------
# Primitive merging
# ---------------------------------------------------------------------------

def merge_primitives(
    labels: np.ndarray,
    stats: list[PrimitiveStats],
    adjacency: dict[int, list[tuple[int, int]]],
    image_area: int,
    params: MergeParams | None = None,
) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Single-pass merge of small or irregular primitives into neighbors.

    Primitives are visited in ascending id order. Primitive j merges into
    the first of its top-3 neighbors for which all conditions hold:
    circular hue distance < threshold, j not already merged, and
    (area_j < area_factor * image_area * p_j^2 or p_j > ratio threshold).
    Stats are computed once up front and never refreshed mid-pass; if the
    chosen neighbor has itself been merged away, j follows it to its
    current home so the result stays a partition.

    Returns the relabeled (contiguous) map and the merge log of
    (source, target) original ids.
    """
    if params is None:
        params = MergeParams()
    labels = np.asarray(labels)
    n = len(stats)
    if int(sum(s.area for s in stats)) != labels.size:
        raise ValueError("inconsistent stats: areas do not sum to H*W")

    target = list(range(n))   # current home of each original id

    def find(p: int) -> int:
        while target[p] != p:
            target[p] = target[target[p]]
            p = target[p]
        return p

    log: list[tuple[int, int]] = []
    for j in range(n):
        s = stats[j]
        if s.merged:
            continue
        small_or_irregular = (
            s.area < params.area_factor * image_area * s.p_ratio ** 2
            or s.p_ratio > params.p_ratio_threshold)
        if not small_or_irregular:
            continue
        for k, _count in adjacency.get(j, []):
            if circular_hue_distance(s.mean_hue, stats[k].mean_hue) \
                    < params.hue_threshold:
                s.merged = True
                target[j] = find(k)
                log.append((j, k))
                break

    roots = np.array([find(p) for p in range(n)], dtype=np.int64)
    surviving = np.unique(roots)
    remap = np.zeros(n, dtype=np.int64)
    remap[surviving] = np.arange(len(surviving))
    new_labels = remap[roots[labels.astype(np.int64)]]
    return new_labels.astype(np.uint16), log


# ---------------------------------------------------------------------------
# Crop extraction
# ---------------------------------------------------------------------------

def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel sample alignment (identity when
    sizes match)."""
    src = np.asarray(img, dtype=np.float64)
    h, w = src.shape[:2]
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def nearest_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize with the same sample alignment as bilinear."""
    arr = np.asarray(arr)
    h, w = arr.shape[:2]
    ys = np.clip(np.round((np.arange(out_h) + 0.5) * (h / out_h) - 0.5)
                 .astype(int), 0, h - 1)
    xs = np.clip(np.round((np.arange(out_w) + 0.5) * (w / out_w) - 0.5)
                 .astype(int), 0, w - 1)
    return arr[ys][:, xs]


def extract_crop(img: np.ndarray, labels: np.ndarray, primitive_id: int,
                 mean_color: np.ndarray, target: int = 64) -> np.ndarray:
    """Bounding-box crop of one primitive, background filled with the
    dataset mean color, resized to target x target (bilinear)."""
    mask = np.asarray(labels) == primitive_id
    if not mask.any():
        raise ValueError(f"unknown primitive id {primitive_id}")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    r0, r1 = int(rows[0]), int(rows[-1])
    c0, c1 = int(cols[0]), int(cols[-1])
    crop = np.asarray(img)[r0:r1 + 1, c0:c1 + 1].astype(np.float64)
    sub = mask[r0:r1 + 1, c0:c1 + 1]
    fill = np.clip(np.round(np.asarray(mean_color, dtype=np.float64)),
                   0, 255)
    crop[~sub] = fill
    out = bilinear_resize(crop, target, target)
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def crop_hue_channel(img: np.ndarray) -> np.ndarray:
    """Hue channel of an RGB image, in degrees."""
    hue, _, _ = rgb_to_hsv(img)
    return hue
