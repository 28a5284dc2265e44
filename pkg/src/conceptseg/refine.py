"""Pseudo-label assembly and per-pixel classifier refinement.

Pseudo segmentation labels broadcast each primitive's concept label to
its pixels. A small two-layer per-pixel classifier over hand-built
multi-scale context features is then trained on these labels so that
surrounding context can correct locally mis-clustered patches. The
classifier stands in for a full segmentation network; the pixel-wise
softmax cross-entropy loss, SGD-with-momentum optimizer, and
augmentation set are kept as-is.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import hsv_to_rgb, rgb_to_hsv
from .primitives import bilinear_resize, nearest_resize

FEATURE_DIM = 14
HIDDEN = 64
BOX_RADII = (2, 8, 32)

# The training objective is a per-image sum of pixel losses. The gradient
# step scales the pixel-mean gradient by this fixed reference batch: the
# raw sum is unstable at lr 1e-3 with momentum 0.9, while the bare mean
# moves too little in a 30-epoch desk-scale run.
GRAD_PIXEL_BATCH = 256

MODEL_MAGIC = b"SGDR"
MODEL_VERSION = 1


def assemble_pseudolabels(labels: np.ndarray,
                          concepts: dict[int, int]) -> np.ndarray:
    """Broadcast primitive -> concept labels to pixels."""
    labels = np.asarray(labels)
    n = int(labels.max()) + 1
    lut = np.full(n, -1, dtype=np.int64)
    for pid, concept in concepts.items():
        if 0 <= pid < n:
            lut[pid] = concept
    if (lut < 0).any() and np.isin(np.flatnonzero(lut < 0), labels).any():
        missing = [p for p in np.flatnonzero(lut < 0) if (labels == p).any()]
        raise ValueError(f"primitives missing a concept label: {missing}")
    return lut[labels.astype(np.int64)].astype(np.uint16)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

def augment(
    img: np.ndarray,
    lbl: np.ndarray,
    rng: np.random.Generator,
    crop: bool = True,
    flip: bool = True,
    saturation: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Random crop + horizontal flip + saturation jitter.

    The crop has relative scale U(0.5, 1.0) at a uniform position and is
    resized back to the input size (image bilinearly, labels by nearest
    neighbor); the flip fires with probability 0.5 and applies to both;
    the saturation scale U(0.6, 1.4) touches the image only. Geometric
    transforms are pixel-identical between image and label.
    """
    img = np.asarray(img)
    lbl = np.asarray(lbl)
    if img.shape[:2] != lbl.shape:
        raise ValueError("image and label dimensions differ")
    h, w = lbl.shape

    if crop:
        scale = rng.uniform(0.5, 1.0)
        ch = max(1, int(round(scale * h)))
        cw = max(1, int(round(scale * w)))
        r0 = int(rng.integers(0, h - ch + 1))
        c0 = int(rng.integers(0, w - cw + 1))
        if (ch, cw) != (h, w):
            img = np.clip(np.round(bilinear_resize(
                img[r0:r0 + ch, c0:c0 + cw], h, w)), 0, 255).astype(np.uint8)
            lbl = nearest_resize(lbl[r0:r0 + ch, c0:c0 + cw], h, w)
        else:
            img = img.copy()
            lbl = lbl.copy()
    else:
        img = img.copy()
        lbl = lbl.copy()

    if flip and rng.random() < 0.5:
        img = img[:, ::-1].copy()
        lbl = lbl[:, ::-1].copy()

    if saturation:
        factor = rng.uniform(0.6, 1.4)
        hue, sat, val = rgb_to_hsv(img)
        img = hsv_to_rgb(hue, np.clip(sat * factor, 0.0, 1.0), val)

    return img, lbl


# ---------------------------------------------------------------------------
# Per-pixel features
# ---------------------------------------------------------------------------

def box_mean(channel: np.ndarray, radius: int) -> np.ndarray:
    """Mean over the (2r+1)^2 window clipped to the image bounds.

    Windows larger than the image degenerate to the global mean, which
    is the intended behavior for the coarsest context radius.
    """
    a = np.asarray(channel, dtype=np.float64)
    h, w = a.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.float64)
    integral[1:, 1:] = a.cumsum(axis=0).cumsum(axis=1)
    r0 = np.clip(np.arange(h) - radius, 0, h)
    r1 = np.clip(np.arange(h) + radius + 1, 0, h)
    c0 = np.clip(np.arange(w) - radius, 0, w)
    c1 = np.clip(np.arange(w) + radius + 1, 0, w)
    total = (integral[r1][:, c1] - integral[r0][:, c1]
             - integral[r1][:, c0] + integral[r0][:, c0])
    count = (r1 - r0)[:, None] * (c1 - c0)[None, :]
    return total / count


def features(img: np.ndarray) -> np.ndarray:
    """H x W x 14 float features: RGB, box means at three radii, coords."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    rgb = img.astype(np.float64) / 255.0
    channels = [rgb[..., c] for c in range(3)]
    for radius in BOX_RADII:
        channels.extend(box_mean(rgb[..., c], radius) for c in range(3))
    hh, ww = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    channels.extend([hh, ww])
    return np.stack(channels, axis=-1).astype(np.float32)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

@dataclass
class RefinerModel:
    w1: np.ndarray     # HIDDEN x FEATURE_DIM
    b1: np.ndarray     # HIDDEN
    w2: np.ndarray     # C x HIDDEN
    b2: np.ndarray     # C

    def __post_init__(self) -> None:
        for name in ("w1", "b1", "w2", "b2"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite weights in {name}")
            setattr(self, name, arr)

    @property
    def n_concepts(self) -> int:
        return len(self.b2)

    def logits(self, feats: np.ndarray) -> np.ndarray:
        hidden = np.tanh(feats @ self.w1.T + self.b1)
        return hidden @ self.w2.T + self.b2

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(struct.pack("<IIII", MODEL_VERSION, self.n_concepts,
                                 FEATURE_DIM, HIDDEN))
            for block in (self.w1, self.b1, self.w2, self.b2):
                fh.write(block.astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "RefinerModel":
        data = Path(path).read_bytes()
        if data[:4] != MODEL_MAGIC:
            raise ValueError(f"bad magic in {path}")
        version, c, f, hidden = struct.unpack("<IIII", data[4:20])
        if version != MODEL_VERSION:
            raise ValueError(f"unsupported model version {version}")
        if f != FEATURE_DIM or hidden != HIDDEN:
            raise ValueError("model feature spec mismatch")
        sizes = [hidden * f, hidden, c * hidden, c]
        expected = 20 + 4 * sum(sizes)
        if len(data) != expected:
            raise ValueError(f"truncated model file {path}")
        payload = np.frombuffer(data, dtype="<f4", offset=20).astype(np.float64)
        off = 0
        blocks = []
        for size in sizes:
            blocks.append(payload[off:off + size])
            off += size
        return cls(
            w1=blocks[0].reshape(hidden, f), b1=blocks[1],
            w2=blocks[2].reshape(c, hidden), b2=blocks[3])


@dataclass
class TrainParams:
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 30
    augment_crop: bool = True
    augment_flip: bool = True
    augment_saturation: bool = True
    pixels_per_step: int = 4096
    seed: int = 0


def init_model(n_concepts: int, rng: np.random.Generator) -> RefinerModel:
    """Uniform-random initialization; output layer near zero, so the
    initial per-pixel loss sits at ln(C)."""
    limit1 = 1.0 / np.sqrt(FEATURE_DIM)
    limit2 = 0.01 / np.sqrt(HIDDEN)
    return RefinerModel(
        w1=rng.uniform(-limit1, limit1, size=(HIDDEN, FEATURE_DIM)),
        b1=np.zeros(HIDDEN),
        w2=rng.uniform(-limit2, limit2, size=(n_concepts, HIDDEN)),
        b2=np.zeros(n_concepts),
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def loss_and_grads(model: RefinerModel, feats: np.ndarray,
                   targets: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean softmax cross-entropy over the given pixels and its gradients."""
    x = np.asarray(feats, dtype=np.float64)
    y = np.asarray(targets, dtype=np.int64)
    n = len(y)
    z1 = x @ model.w1.T + model.b1
    a1 = np.tanh(z1)
    logits = a1 @ model.w2.T + model.b2
    probs = softmax(logits)
    loss = float(-np.log(np.maximum(probs[np.arange(n), y], 1e-300)).mean())

    dlogits = probs
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    grads = {
        "w2": dlogits.T @ a1,
        "b2": dlogits.sum(axis=0),
    }
    da1 = dlogits @ model.w2
    dz1 = da1 * (1.0 - a1 * a1)
    grads["w1"] = dz1.T @ x
    grads["b1"] = dz1.sum(axis=0)
    return loss, grads


def train_refiner(
    images: list[np.ndarray],
    pseudolabels: list[np.ndarray],
    n_concepts: int,
    params: TrainParams,
) -> tuple[RefinerModel, list[float]]:
    """SGD-with-momentum training of the refiner on pseudo-labels.

    Each epoch visits every image once in seeded shuffled order, applies
    the augmentations, and takes one gradient step on a seeded subsample
    of ``pixels_per_step`` pixels. Returns the model and the mean-loss
    trace, one entry per epoch.
    """
    if n_concepts < 2:
        raise ValueError("need at least 2 concepts to train")
    if len(images) != len(pseudolabels) or not images:
        raise ValueError("need matching image and pseudo-label lists")
    rng = np.random.default_rng(params.seed)
    model = init_model(n_concepts, rng)
    velocity = {name: np.zeros_like(getattr(model, name))
                for name in ("w1", "b1", "w2", "b2")}
    trace: list[float] = []

    for _epoch in range(params.epochs):
        order = rng.permutation(len(images))
        losses = []
        for idx in order:
            img, lbl = augment(
                images[idx], pseudolabels[idx], rng,
                crop=params.augment_crop, flip=params.augment_flip,
                saturation=params.augment_saturation)
            feats = features(img).reshape(-1, FEATURE_DIM)
            targets = lbl.reshape(-1)
            n = len(targets)
            if n > params.pixels_per_step:
                sample = rng.choice(n, size=params.pixels_per_step,
                                    replace=False)
                feats = feats[sample]
                targets = targets[sample]
            loss, grads = loss_and_grads(model, feats, targets)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {_epoch}, image {idx}")
            losses.append(loss)
            for name, grad in grads.items():
                param = getattr(model, name)
                grad = GRAD_PIXEL_BATCH * grad + params.weight_decay * param
                velocity[name] = params.momentum * velocity[name] - \
                    params.lr * grad
                setattr(model, name, param + velocity[name])
        trace.append(float(np.mean(losses)))
    return model, trace


def predict(model: RefinerModel,
            img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel argmax concept map and the H x W x C probability tensor.

    Ties break to the lowest concept id.
    """
    feats = features(img)
    h, w = feats.shape[:2]
    logits = model.logits(feats.reshape(-1, FEATURE_DIM).astype(np.float64))
    probs = softmax(logits)
    labels = np.argmax(probs, axis=1).reshape(h, w).astype(np.uint16)
    return labels, probs.reshape(h, w, model.n_concepts)
