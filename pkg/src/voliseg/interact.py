"""Click-driven 2D segmentation: encoding, inference, and simulation.

Clicks are encoded as binary disk maps (one channel per polarity) and
fed to a small encoder-decoder together with the image and the previous
mask.  Training simulates a user who always clicks the center of the
largest error region, so the model learns to fix its own mistakes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy import ndimage

from .corrupt import CorruptionSpec, corrupt_mask
from .errors import ParameterError, ValidationError
from .nets import UNet, segmentation_loss
from .volume import BinaryMask

DEFAULT_CLICK_RADIUS = 5


@dataclass(frozen=True)
class Click:
    """One user click: row/col in pixels, positive marks foreground."""

    row: int
    col: int
    positive: bool

    def __post_init__(self) -> None:
        if self.row < 0 or self.col < 0:
            raise ParameterError(f"click at ({self.row}, {self.col}) is negative")


def _disk_offsets(radius: int) -> np.ndarray:
    d = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    keep = dy**2 + dx**2 <= radius**2
    return np.stack([dy[keep], dx[keep]], axis=1)


def encode_clicks(
    clicks: list[Click], shape: tuple[int, int], radius: int = DEFAULT_CLICK_RADIUS
) -> np.ndarray:
    """Render clicks as a (2, H, W) float32 stack of binary disks.

    Channel 0 holds positive clicks, channel 1 negative.  Disks are
    clipped at the image border; overlapping disks simply union.
    """
    if radius < 0:
        raise ParameterError(f"radius {radius} is negative")
    h, w = shape
    out = np.zeros((2, h, w), dtype=np.float32)
    offsets = _disk_offsets(radius)
    for click in clicks:
        if click.row >= h or click.col >= w:
            raise ValidationError(f"click ({click.row}, {click.col}) outside {shape}")
        pts = offsets + (click.row, click.col)
        ok = (pts[:, 0] >= 0) & (pts[:, 0] < h) & (pts[:, 1] >= 0) & (pts[:, 1] < w)
        pts = pts[ok]
        out[0 if click.positive else 1, pts[:, 0], pts[:, 1]] = 1.0
    return out


def apply_click_constraints(
    prob: np.ndarray, clicks: list[Click], radius: int = DEFAULT_CLICK_RADIUS
) -> np.ndarray:
    """Force the clicked disks to their polarity, positives winning overlaps."""
    maps = encode_clicks(clicks, prob.shape, radius)
    out = prob.copy()
    out[maps[1] > 0] = 0.0
    out[maps[0] > 0] = 1.0
    return out


class Interactor(torch.nn.Module):
    """2D refinement model: image + previous mask + click maps -> mask logits."""

    def __init__(self, base: int = 16, click_radius: int = DEFAULT_CLICK_RADIUS):
        super().__init__()
        self.click_radius = click_radius
        self.unet = UNet(in_ch=4, base=base, out_ch=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.unet(x)


def segment_slice(
    model: Interactor,
    image: np.ndarray,
    clicks: list[Click],
    prev_mask: np.ndarray | None = None,
    slice_index: int = 1,
) -> BinaryMask:
    """Run the refinement model on one slice and binarize at 0.5.

    Clicked disks are forced to their polarity afterwards, so a click is
    honored even where the model disagrees.
    """
    if image.ndim != 2:
        raise ValidationError(f"image must be 2D, got shape {image.shape}")
    h, w = image.shape
    prev = np.zeros((h, w), dtype=np.float32) if prev_mask is None else prev_mask.astype(np.float32)
    if prev.shape != image.shape:
        raise ValidationError(f"prev_mask shape {prev.shape} != image shape {image.shape}")
    maps = encode_clicks(clicks, (h, w), model.click_radius)
    x = np.concatenate([image[None].astype(np.float32), prev[None], maps], axis=0)
    model.eval()
    with torch.no_grad():
        logits = model(torch.from_numpy(x)[None])
    prob = torch.sigmoid(logits)[0, 0].numpy()
    prob = apply_click_constraints(prob, clicks, model.click_radius)
    return BinaryMask((prob >= 0.5).astype(np.uint8), slice_index)


def simulate_next_click(pred: np.ndarray, gt: np.ndarray) -> Click | None:
    """Click the most interior point of the largest error region.

    Returns None when prediction and ground truth already agree.  The
    click is positive on false-negative regions, negative on false
    positives.  Deterministic: components tie-break by (area desc, then
    topmost-leftmost pixel), interior points by row-major argmax of the
    distance transform.
    """
    if pred.shape != gt.shape:
        raise ValidationError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    error = pred.astype(bool) ^ gt.astype(bool)
    if not error.any():
        return None
    labels, n = ndimage.label(error, structure=np.ones((3, 3), dtype=bool))
    best = None
    for lab in range(1, n + 1):
        component = labels == lab
        area = int(component.sum())
        seed = np.argwhere(component)[0]
        key = (-area, int(seed[0]), int(seed[1]))
        if best is None or key < best[0]:
            best = (key, component)
    component = best[1]
    # Padding makes the transform treat the image border as background,
    # keeping the chosen point interior to the component itself.
    dist = ndimage.distance_transform_edt(np.pad(component, 1))[1:-1, 1:-1]
    flat = int(np.argmax(dist))
    row, col = divmod(flat, component.shape[1])
    positive = bool(gt[row, col])
    return Click(row, col, positive)


def train_interactor(
    images: np.ndarray,
    gts: np.ndarray,
    seed: int = 0,
    epochs: int = 4,
    base: int = 16,
    max_clicks: int = 3,
    lr: float = 1e-3,
    prev_mask_mode: str = "corrupted",
) -> Interactor:
    """Train the 2D refinement model with simulated interaction rounds.

    Each sample starts from a corrupted, clean, or absent previous mask
    (prev_mask_mode) and a simulated click on its largest error; further
    clicks are sampled against the model's own binarized output so the
    model sees its own failure modes.
    """
    if prev_mask_mode not in ("corrupted", "clean", "none"):
        raise ParameterError(f"unknown prev_mask_mode {prev_mask_mode!r}")
    if images.shape != gts.shape:
        raise ValidationError(f"images shape {images.shape} != gts shape {gts.shape}")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    spec = CorruptionSpec()
    model = Interactor(base=base)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    n = len(images)
    model.train()
    for _ in range(epochs):
        for i in rng.permutation(n):
            image = images[i].astype(np.float32)
            gt = gts[i].astype(np.uint8)
            if prev_mask_mode == "clean" or gt.sum() == 0:
                prev = gt.astype(np.float32)
            elif prev_mask_mode == "none":
                prev = np.zeros_like(image)
            else:
                prev = corrupt_mask(BinaryMask(gt, 1), rng, spec).pixels.astype(np.float32)
            clicks: list[Click] = []
            first = simulate_next_click(prev >= 0.5, gt)
            if first is not None:
                clicks.append(first)
            n_clicks = int(rng.integers(1, max_clicks + 1))
            gt_t = torch.from_numpy(gt.astype(np.float32))[None, None]
            for round_idx in range(n_clicks):
                maps = encode_clicks(clicks, image.shape, model.click_radius)
                x = np.concatenate([image[None], prev[None], maps], axis=0)
                logits = model(torch.from_numpy(x)[None])
                loss = segmentation_loss(logits, gt_t)
                opt.zero_grad()
                loss.backward()
                opt.step()
                if round_idx + 1 == n_clicks:
                    break
                with torch.no_grad():
                    pred = (torch.sigmoid(logits)[0, 0].numpy() >= 0.5)
                nxt = simulate_next_click(pred, gt)
                if nxt is None:
                    break
                clicks.append(nxt)
    model.eval()
    return model
