"""Embedding boundary: built-in crop descriptor and the SGDE file format.

The SGDE binary format is the interchange point with external encoders
(little-endian): magic ``SGDE``, u32 version=1, u32 N, u32 D, then N
records of [u32 image_id, u32 primitive_id, D x f32]. Records are sorted
by (image_id, primitive_id); the reader verifies this.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import rgb_to_hsv

MAGIC = b"SGDE"
VERSION = 1
BUILTIN_DIM = 140


@dataclass
class EmbeddingMatrix:
    keys: np.ndarray      # N x 2 uint32, (image_id, primitive_id)
    vectors: np.ndarray   # N x D float32

    def __post_init__(self) -> None:
        self.keys = np.asarray(self.keys, dtype=np.uint32).reshape(-1, 2)
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or len(self.vectors) != len(self.keys):
            raise ValueError("keys and vectors must both have N rows")
        if not np.isfinite(self.vectors).all():
            raise ValueError("embedding matrix contains NaN/Inf")
        if len(np.unique(self.keys, axis=0)) != len(self.keys):
            raise ValueError("duplicate (image_id, primitive_id) keys")

    @property
    def n(self) -> int:
        return len(self.keys)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def sorted(self) -> "EmbeddingMatrix":
        order = np.lexsort((self.keys[:, 1], self.keys[:, 0]))
        return EmbeddingMatrix(self.keys[order], self.vectors[order])


def embed_builtin(crop: np.ndarray) -> np.ndarray:
    """Deterministic 140-d descriptor of a square crop.

    Concatenates a joint HSV histogram (8 hue x 4 saturation x 4 value
    bins, hard binning, normalized by pixel count) with a 2x2 spatial
    grid of mean RGB in [0, 1]; the result is L2-normalized.
    """
    crop = np.asarray(crop)
    if crop.ndim != 3 or crop.shape[0] != crop.shape[1]:
        raise ValueError("crop must be a square H x H x 3 image")
    hue, sat, val = rgb_to_hsv(crop)
    hb = np.minimum((hue / 45.0).astype(int), 7)
    sb = np.minimum((sat * 4.0).astype(int), 3)
    vb = np.minimum((val * 4.0).astype(int), 3)
    idx = (hb * 16 + sb * 4 + vb).ravel()
    hist = np.bincount(idx, minlength=128).astype(np.float64)
    hist /= crop.shape[0] * crop.shape[1]

    h = crop.shape[0]
    half = h // 2
    rgb = crop.astype(np.float64) / 255.0
    cells = [rgb[:half, :half], rgb[:half, half:],
             rgb[half:, :half], rgb[half:, half:]]
    grid = np.concatenate([c.reshape(-1, 3).mean(axis=0) for c in cells])

    vec = np.concatenate([hist, grid])
    norm = np.linalg.norm(vec)
    return (vec / norm if norm > 0 else vec).astype(np.float32)


def write_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    """Write an SGDE file; rows are sorted by key before writing."""
    m = matrix.sorted()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, m.n, m.dim))
        for (img_id, prim_id), row in zip(m.keys, m.vectors):
            fh.write(struct.pack("<II", int(img_id), int(prim_id)))
            fh.write(row.astype("<f4").tobytes())


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read an SGDE file, verifying magic, version, length and key order."""
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise ValueError(f"truncated SGDE header: {path}")
    if data[:4] != MAGIC:
        raise ValueError(f"bad magic in {path}")
    version, n, dim = struct.unpack("<III", data[4:16])
    if version != VERSION:
        raise ValueError(f"unsupported SGDE version {version} in {path}")
    record = 8 + 4 * dim
    if len(data) != 16 + n * record:
        raise ValueError(
            f"payload length mismatch in {path}: expected "
            f"{16 + n * record} bytes, got {len(data)}")
    raw = np.frombuffer(data, dtype=np.uint8, offset=16).reshape(n, record)
    keys = raw[:, :8].copy().view("<u4").reshape(n, 2)
    vectors = raw[:, 8:].copy().view("<f4").reshape(n, dim)
    if n > 1:
        k = keys.astype(np.int64)
        flat = k[:, 0] * (1 << 32) + k[:, 1]
        if not np.all(flat[1:] > flat[:-1]):
            raise ValueError(f"keys not strictly sorted in {path}")
    return EmbeddingMatrix(keys, vectors)


# ---------------------------------------------------------------------------
# Crop manifest: "image_id primitive_id path" per line
# ---------------------------------------------------------------------------

def read_crop_manifest(path: str | Path) -> list[tuple[int, int, Path]]:
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        img_id, prim_id, crop_path = line.split(maxsplit=2)
        entries.append((int(img_id), int(prim_id), Path(crop_path)))
    return entries


def write_crop_manifest(path: str | Path,
                        entries: list[tuple[int, int, Path | str]]) -> None:
    lines = [f"{i} {p} {cp}\n" for i, p, cp in entries]
    Path(path).write_text("".join(lines), encoding="utf-8")
