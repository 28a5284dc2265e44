"""Batched ResNet-50 backbone inference over a crop manifest.

The crop manifest ("image_id primitive_id path" per line) and the SGDE
binary output are the only two interfaces shared with the main pipeline
package; features are tapped after the backbone's global average pool
and before any projection head, giving D=2048 for the ResNet-50 family.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torchvision
from PIL import Image

from conceptseg.embedding import (EmbeddingMatrix, read_crop_manifest,
                                  write_embeddings)

ENCODERS = ("moco", "swav", "deepclusterv2", "supervised")
FEATURE_DIM = 2048
INPUT_SIZE = 224

# ImageNet normalization, shared by all four encoder families
_MEAN = torch.tensor([0.485, 0.456, 0.406]).view(3, 1, 1)
_STD = torch.tensor([0.229, 0.224, 0.225]).view(3, 1, 1)

# checkpoint key prefixes used by the published training code of each
# family; tried in order, longest first
_PREFIXES = {
    "moco": ("module.encoder_q.", "encoder_q.", "module.", ""),
    "swav": ("module.", ""),
    "deepclusterv2": ("module.", ""),
    "supervised": ("module.", ""),
}

# key name fragments belonging to projection heads / classifier heads,
# which sit after the feature tap point and are dropped
_HEAD_FRAGMENTS = ("fc.", "projection_head", "prototypes")


@dataclass
class ExportJob:
    manifest: Path
    encoder: str
    weights: str            # checkpoint path, or "auto"
    out: Path
    batch: int = 32
    device: str = "cpu"

    def __post_init__(self) -> None:
        if self.encoder not in ENCODERS:
            raise ValueError(
                f"unknown encoder {self.encoder!r}; choose from {ENCODERS}")
        if self.batch < 1:
            raise ValueError("batch size must be >= 1")


class _Backbone(torch.nn.Module):
    """ResNet-50 up to (and including) global average pooling."""

    def __init__(self) -> None:
        super().__init__()
        net = torchvision.models.resnet50(weights=None)
        net.fc = torch.nn.Identity()
        self.net = net

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def _extract_backbone_state(raw: dict, encoder: str) -> dict:
    """Map a family checkpoint onto torchvision ResNet-50 key names."""
    # published checkpoints wrap the weights in a top-level dict
    for wrapper in ("state_dict", "model"):
        if wrapper in raw and isinstance(raw[wrapper], dict):
            raw = raw[wrapper]
            break
    state = {}
    for prefix in _PREFIXES[encoder]:
        for key, value in raw.items():
            if not key.startswith(prefix):
                continue
            stripped = key[len(prefix):]
            if any(frag in stripped for frag in _HEAD_FRAGMENTS):
                continue
            state[stripped] = value
        if state:
            break
    return state


def load_encoder(encoder: str, weights: str,
                 device: str = "cpu") -> torch.nn.Module:
    """Build the ResNet-50 backbone and load family weights into it.

    ``weights`` is a checkpoint path; ``auto`` resolves to the torchvision
    ImageNet weights for the supervised encoder only (the self-supervised
    checkpoints have no canonical torchvision distribution).
    """
    model = _Backbone()
    if weights == "auto":
        if encoder != "supervised":
            raise ValueError(
                f"--weights auto is only available for the 'supervised' "
                f"encoder; download a {encoder} checkpoint and pass its path")
        net = torchvision.models.resnet50(
            weights=torchvision.models.ResNet50_Weights.IMAGENET1K_V1)
        net.fc = torch.nn.Identity()
        model.net = net
    else:
        path = Path(weights)
        if not path.exists():
            raise FileNotFoundError(f"encoder weights not found: {path}")
        raw = torch.load(path, map_location="cpu", weights_only=True)
        state = _extract_backbone_state(raw, encoder)
        missing, unexpected = model.net.load_state_dict(state, strict=False)
        missing = [k for k in missing if not k.startswith("fc.")]
        if missing:
            raise ValueError(
                f"checkpoint {path} is missing backbone weights "
                f"(first few: {missing[:3]}); wrong encoder family?")
        if unexpected:
            raise ValueError(
                f"checkpoint {path} has unexpected backbone keys "
                f"(first few: {unexpected[:3]})")
    model.to(device)
    model.eval()
    return model


def _load_crop(path: Path) -> torch.Tensor:
    if not path.exists():
        raise FileNotFoundError(f"crop not found: {path}")
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (INPUT_SIZE, INPUT_SIZE):
            im = im.resize((INPUT_SIZE, INPUT_SIZE), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    tensor = torch.from_numpy(arr).permute(2, 0, 1)
    return (tensor - _MEAN) / _STD


def export(job: ExportJob) -> None:
    """Run batched inference over the manifest and write the SGDE file."""
    entries = read_crop_manifest(job.manifest)
    if not entries:
        raise ValueError(f"crop manifest is empty: {job.manifest}")
    keys = [(img, pid) for img, pid, _ in entries]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate (image_id, primitive_id) rows in "
                         f"{job.manifest}")
    # validate every crop path before loading the (heavy) encoder
    for _, _, path in entries:
        if not path.exists():
            raise FileNotFoundError(f"crop not found: {path}")

    model = load_encoder(job.encoder, job.weights, job.device)
    rows = np.empty((len(entries), FEATURE_DIM), dtype=np.float32)
    with torch.inference_mode():
        for start in range(0, len(entries), job.batch):
            chunk = entries[start:start + job.batch]
            batch = torch.stack([_load_crop(p) for _, _, p in chunk])
            feats = model(batch.to(job.device))
            rows[start:start + len(chunk)] = feats.cpu().numpy()
    matrix = EmbeddingMatrix(np.array(keys, dtype=np.uint32), rows)
    write_embeddings(matrix, job.out)
