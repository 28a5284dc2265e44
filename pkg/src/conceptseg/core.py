"""Image I/O, color conversion, manifests, and pipeline configuration.

Images are H x W x 3 uint8 arrays (RGB). Label maps are H x W uint16
arrays; the value 65535 is reserved as "ignore". Both are stored as PNG:
8-bit RGB for images, 16-bit grayscale for label maps.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage

IGNORE_LABEL = 65535


# ---------------------------------------------------------------------------
# Image and label-map I/O
# ---------------------------------------------------------------------------

def load_image(path: str | Path) -> np.ndarray:
    """Load an 8-bit RGB PNG or binary PPM as an H x W x 3 uint8 array."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image file not found: {path}")
    with _PILImage.open(path) as im:
        if im.format not in ("PNG", "PPM"):
            raise ValueError(f"unsupported image format {im.format!r}: {path}")
        if im.mode in ("I", "I;16", "I;16B", "I;16L"):
            raise ValueError(f"unsupported bit depth (expected 8-bit): {path}")
        if im.mode != "RGB":
            raise ValueError(
                f"unsupported color type {im.mode!r} (expected RGB): {path}")
        arr = np.asarray(im, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"decoded image is not H x W x 3: {path}")
    return arr


def save_image(path: str | Path, img: np.ndarray) -> None:
    """Write an H x W x 3 uint8 array as an 8-bit RGB PNG."""
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected H x W x 3 uint8 image")
    _PILImage.fromarray(img, mode="RGB").save(Path(path), format="PNG")


def load_labelmap(path: str | Path) -> np.ndarray:
    """Load a 16-bit grayscale PNG label map as an H x W uint16 array."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"label map not found: {path}")
    with _PILImage.open(path) as im:
        if im.mode not in ("I", "I;16", "I;16B", "I;16L"):
            raise ValueError(f"label map must be 16-bit grayscale PNG: {path}")
        arr = np.asarray(im)
    if arr.min() < 0 or arr.max() > 65535:
        raise ValueError(f"label values out of uint16 range: {path}")
    return arr.astype(np.uint16)


def save_labelmap(path: str | Path, labels: np.ndarray) -> None:
    """Write an H x W integer label map as a 16-bit grayscale PNG."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("expected H x W label map")
    if labels.min() < 0 or labels.max() > 65535:
        raise ValueError("label values out of uint16 range")
    im = _PILImage.fromarray(labels.astype(np.uint16))
    im.save(Path(path), format="PNG")


def check_labelmap(labels: np.ndarray, n_labels: int,
                   full_partition: bool = False) -> None:
    """Validate a label map against a declared label count."""
    non_ignore = labels[labels != IGNORE_LABEL]
    if non_ignore.size and int(non_ignore.max()) >= n_labels:
        raise ValueError(
            f"label {int(non_ignore.max())} >= declared count {n_labels}")
    if full_partition:
        if np.any(labels == IGNORE_LABEL):
            raise ValueError("partition label map contains ignore pixels")
        present = np.unique(labels)
        if not np.array_equal(present, np.arange(len(present))):
            raise ValueError("partition labels are not contiguous from 0")


# ---------------------------------------------------------------------------
# Color conversion (hexcone HSV, hue in degrees)
# ---------------------------------------------------------------------------

def rgb_to_hsv(img: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Convert uint8 RGB to (hue, saturation, value).

    Hue is in degrees in [0, 360); saturation and value in [0, 1].
    Achromatic pixels (max == min) get hue 0 and saturation 0.
    """
    rgb = np.asarray(img, dtype=np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    chromatic = delta > 0

    hue = np.zeros_like(mx)
    with np.errstate(invalid="ignore", divide="ignore"):
        hr = np.where(chromatic, (g - b) / delta, 0.0) % 6.0
        hg = np.where(chromatic, (b - r) / delta, 0.0) + 2.0
        hb = np.where(chromatic, (r - g) / delta, 0.0) + 4.0
    hue = np.where(mx == r, hr, np.where(mx == g, hg, hb))
    hue = np.where(chromatic, (hue * 60.0) % 360.0, 0.0)

    sat = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return hue, sat, mx


def hsv_to_rgb(hue: np.ndarray, sat: np.ndarray,
               val: np.ndarray) -> np.ndarray:
    """Inverse hexcone conversion back to uint8 RGB."""
    h = (np.asarray(hue, dtype=np.float64) % 360.0) / 60.0
    s = np.clip(np.asarray(sat, dtype=np.float64), 0.0, 1.0)
    v = np.clip(np.asarray(val, dtype=np.float64), 0.0, 1.0)
    c = v * s
    x = c * (1.0 - np.abs(h % 2.0 - 1.0))
    m = v - c
    sector = np.floor(h).astype(int) % 6
    z = np.zeros_like(c)
    r = np.choose(sector, [c, x, z, z, x, c])
    g = np.choose(sector, [x, c, c, x, z, z])
    b = np.choose(sector, [z, z, x, c, c, x])
    rgb = np.stack([r + m, g + m, b + m], axis=-1)
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def read_manifest(path: str | Path) -> list[Path]:
    """Read a manifest: one path per line, '#' comments ignored.

    image_id is the zero-based position in the returned list.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    paths: list[Path] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        paths.append(Path(line))
    if len(set(paths)) != len(paths):
        raise ValueError(f"manifest contains duplicate paths: {path}")
    return paths


def write_manifest(path: str | Path, paths: list[Path | str]) -> None:
    Path(path).write_text(
        "".join(f"{p}\n" for p in paths), encoding="utf-8")


def dataset_mean_color(paths: list[Path]) -> np.ndarray:
    """Per-channel mean RGB over all pixels of all manifest images.

    Pixels are weighted equally regardless of image size; the reduction is
    a double-precision sum and therefore order-independent.
    """
    if not paths:
        raise ValueError("manifest is empty")
    total = np.zeros(3, dtype=np.float64)
    count = 0
    for p in paths:
        img = load_image(p)
        total += img.reshape(-1, 3).sum(axis=0, dtype=np.float64)
        count += img.shape[0] * img.shape[1]
    return total / count


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class Config:
    """All stage hyperparameters. Defaults follow the reference settings."""

    # superpixel stage
    scale: float = 1000.0
    sigma: float = 0.3
    min_size: int = 0            # 0 means dynamic per image size

    # primitive merging
    hue_threshold: float = 40.0
    area_factor: float = 0.001
    p_ratio_threshold: float = 9.0

    # crops / embedding
    crop_size: int = 64

    # clustering
    K: int = 200
    C: int = 27
    batch_size: int = 1000
    max_iter: int = 10000
    patience: int = 100
    spectral_sigma: float = 1e-5
    normalize_embeddings: bool = False

    # refiner training
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 30
    augment_crop: bool = True
    augment_flip: bool = True
    augment_saturation: bool = True

    seed: int = 0

    def __post_init__(self) -> None:
        if self.K > 1000:
            raise ValueError("K must be <= 1000 (dense eigendecomposition)")
        if self.C < 1 or self.K < self.C:
            raise ValueError("need K >= C >= 1")

    @classmethod
    def from_file(cls, path: str | Path,
                  overrides: dict[str, str] | None = None) -> "Config":
        """Parse a key=value config file; unknown keys are an error."""
        values: dict[str, str] = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"malformed config line: {line!r}")
            key, _, raw = line.partition("=")
            values[key.strip()] = raw.strip()
        if overrides:
            values.update(overrides)
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict[str, str]) -> "Config":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise ValueError(f"unknown config key: {key!r}")
            ftype = fields[key].type
            if ftype == "bool":
                kwargs[key] = str(raw).lower() in ("1", "true", "yes", "on")
            elif ftype == "int":
                kwargs[key] = int(raw)
            elif ftype == "float":
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        return cls(**kwargs)

    def to_file(self, path: str | Path) -> None:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name}={getattr(self, f.name)}")
        Path(path).write_text("".join(f"{ln}\n" for ln in lines),
                              encoding="utf-8")
