"""Small convolutional building blocks and the checkpoint container.

All networks here are deliberately tiny (tens to hundreds of thousands of
parameters): the claims under test concern the interaction machinery, not
backbone capacity.  GroupNorm keeps every forward pass independent of
batch composition, which the batch-invariance tests rely on.

Checkpoints are single-file zip containers: ``manifest.json`` describing
the architecture, seed, and dataset hash, plus one raw little-endian
float32 blob per named parameter.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import FormatError


def _gn(channels: int) -> nn.GroupNorm:
    groups = 4 if channels % 4 == 0 else 1
    return nn.GroupNorm(groups, channels)


class ConvBlock(nn.Module):
    """3x3 conv + GroupNorm + ReLU, optional stride."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.norm = _gn(out_ch)

    def forward(self, x):
        return F.relu(self.norm(self.conv(x)))


class UNet(nn.Module):
    """4-level encoder-decoder with skip connections; logit output."""

    def __init__(self, in_ch: int = 4, base: int = 16, out_ch: int = 1):
        super().__init__()
        c1, c2, c3, c4 = base, base * 2, base * 4, base * 6
        self.enc1 = nn.Sequential(ConvBlock(in_ch, c1), ConvBlock(c1, c1))
        self.enc2 = nn.Sequential(ConvBlock(c1, c2, stride=2), ConvBlock(c2, c2))
        self.enc3 = nn.Sequential(ConvBlock(c2, c3, stride=2), ConvBlock(c3, c3))
        self.enc4 = nn.Sequential(ConvBlock(c3, c4, stride=2), ConvBlock(c4, c4))
        self.dec3 = ConvBlock(c4 + c3, c3)
        self.dec2 = ConvBlock(c3 + c2, c2)
        self.dec1 = ConvBlock(c2 + c1, c1)
        self.head = nn.Conv2d(c1, out_ch, 1)

    def forward(self, x):
        f1 = self.enc1(x)
        f2 = self.enc2(f1)
        f3 = self.enc3(f2)
        f4 = self.enc4(f3)
        u3 = self.dec3(torch.cat([_up_to(f4, f3), f3], dim=1))
        u2 = self.dec2(torch.cat([_up_to(u3, f2), f2], dim=1))
        u1 = self.dec1(torch.cat([_up_to(u2, f1), f1], dim=1))
        return self.head(u1)


def _up_to(x: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, size=ref.shape[-2:], mode="bilinear", align_corners=False)


class ConvGRUCell(nn.Module):
    """Gated recurrent update over spatial feature maps."""

    def __init__(self, input_ch: int, hidden_ch: int):
        super().__init__()
        self.gates = nn.Conv2d(input_ch + hidden_ch, hidden_ch * 2, 3, padding=1)
        self.cand = nn.Conv2d(input_ch + hidden_ch, hidden_ch, 3, padding=1)

    def forward(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        zr = self.gates(torch.cat([x, h], dim=0 if x.dim() == 3 else 1))
        z, r = torch.chunk(torch.sigmoid(zr), 2, dim=0 if x.dim() == 3 else 1)
        cand = torch.tanh(self.cand(torch.cat([x, r * h], dim=0 if x.dim() == 3 else 1)))
        return (1 - z) * h + z * cand


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def soft_dice_loss(logits: torch.Tensor, target: torch.Tensor, eps: float = 1.0) -> torch.Tensor:
    prob = torch.sigmoid(logits)
    num = 2.0 * (prob * target).sum(dim=(-2, -1)) + eps
    den = prob.sum(dim=(-2, -1)) + target.sum(dim=(-2, -1)) + eps
    return (1.0 - num / den).mean()


def segmentation_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """BCE plus soft-Dice; the standard pairing for thin/unbalanced masks."""
    bce = F.binary_cross_entropy_with_logits(logits, target)
    return bce + 0.5 * soft_dice_loss(logits, target)


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------

def dataset_fingerprint(arrays: list[np.ndarray] | None) -> str:
    """Stable hash of the training inputs, recorded in the manifest."""
    if not arrays:
        return "unspecified"
    digest = hashlib.sha256()
    for a in arrays:
        digest.update(np.ascontiguousarray(a).tobytes())
    return digest.hexdigest()[:16]


def save_checkpoint(
    path: str | Path,
    kind: str,
    architecture: dict,
    module: nn.Module,
    seed: int,
    dataset_hash: str = "unspecified",
    extra: dict | None = None,
) -> None:
    state = {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}
    manifest = {
        "format": "voliseg-checkpoint",
        "version": 1,
        "kind": kind,
        "architecture": architecture,
        "seed": seed,
        "dataset_hash": dataset_hash,
        "params": {
            name: {"shape": list(arr.shape), "dtype": "float32"}
            for name, arr in state.items()
        },
    }
    if extra:
        manifest["extra"] = extra
    p = Path(path)
    if p.parent and not p.parent.exists():
        p.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(p, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=1))
        for name, arr in state.items():
            blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            zf.writestr(f"params/{name}.bin", blob)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"no checkpoint at {p}")
    try:
        with zipfile.ZipFile(p, "r") as zf:
            manifest = json.loads(zf.read("manifest.json"))
            params: dict[str, np.ndarray] = {}
            for name, meta in manifest["params"].items():
                raw = zf.read(f"params/{name}.bin")
                arr = np.frombuffer(raw, dtype="<f4").reshape(meta["shape"])
                params[name] = arr
    except (KeyError, zipfile.BadZipFile, json.JSONDecodeError) as e:
        raise FormatError(f"malformed checkpoint {p}: {e}") from e
    return manifest, params


def load_into_module(module: nn.Module, params: dict[str, np.ndarray]) -> None:
    state = {k: torch.from_numpy(v.copy()) for k, v in params.items()}
    module.load_state_dict(state)
