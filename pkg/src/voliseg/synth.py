"""Synthetic volumes with known ground truth for training and evaluation.

Each volume is a drifting, pulsing ellipsoid (optionally two lobes) over
a noisy textured background, in source intensities matching the default
display window.  Everything is a pure function of the seed.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ParameterError
from .volume import (
    BinaryMask,
    MaskSequence,
    Volume,
    export_masks,
    import_masks,
    load_volume,
    save_volume,
)

KINDS = ("ellipsoid", "two_lobes")


def _lobe_mask(
    shape: tuple[int, int, int], rng: np.random.Generator
) -> np.ndarray:
    """One ellipsoidal lobe with per-slice center drift and radius pulse."""
    n, h, w = shape
    z = np.arange(n, dtype=np.float64)
    phase = rng.uniform(0, 2 * np.pi, size=4)
    cz = rng.uniform(0.35, 0.65) * n
    rz = rng.uniform(0.35, 0.6) * n
    drift_y = rng.uniform(-0.15, 0.15) * h
    drift_x = rng.uniform(-0.15, 0.15) * w
    cy = h * 0.5 + drift_y * (z - cz) / max(n, 1) + h * 0.06 * np.sin(
        2 * np.pi * z / n + phase[0]
    )
    cx = w * 0.5 + drift_x * (z - cz) / max(n, 1) + w * 0.06 * np.sin(
        2 * np.pi * z / n + phase[1]
    )
    base_ry = rng.uniform(0.16, 0.28) * h
    base_rx = rng.uniform(0.16, 0.28) * w
    ry = base_ry * (1.0 + 0.25 * np.sin(2 * np.pi * z / n + phase[2]))
    rx = base_rx * (1.0 + 0.25 * np.sin(2 * np.pi * z / n + phase[3]))
    # Cross-sections shrink toward the ellipsoid's z extremes.
    axial = 1.0 - ((z - cz) / rz) ** 2
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    mask = np.zeros((n, h, w), dtype=bool)
    for i in range(n):
        if axial[i] <= 0:
            continue
        scale = np.sqrt(axial[i])
        dy = (yy - cy[i]) / max(ry[i] * scale, 1e-6)
        dx = (xx - cx[i]) / max(rx[i] * scale, 1e-6)
        mask[i] = dy**2 + dx**2 <= 1.0
    return mask


def synth_volume(
    rng: np.random.Generator,
    n_slices: int = 48,
    height: int = 64,
    width: int = 64,
    kind: str = "ellipsoid",
    vol_id: str = "",
) -> tuple[Volume, MaskSequence]:
    """Generate one volume and its ground-truth mask sequence."""
    if kind not in KINDS:
        raise ParameterError(f"kind must be one of {KINDS}, got {kind!r}")
    shape = (n_slices, height, width)
    mask = _lobe_mask(shape, rng)
    if kind == "two_lobes":
        mask |= _lobe_mask(shape, rng)

    background = ndimage.gaussian_filter(
        rng.normal(0.0, 1.0, size=shape), sigma=(1.0, 3.0, 3.0)
    )
    background = 60.0 * background / max(np.abs(background).max(), 1e-6)
    object_level = rng.uniform(180.0, 280.0)
    noise = rng.normal(0.0, 15.0, size=shape)
    voxels = background + noise + object_level * mask
    voxels = np.clip(voxels, -1024, 3071).astype(np.int16)

    gt = MaskSequence(
        tuple(BinaryMask(mask[i].astype(np.uint8), i + 1) for i in range(n_slices))
    )
    return Volume(voxels, source_dtype="int16", id=vol_id), gt


def synth_suite(
    seed: int,
    n_volumes: int,
    n_slices_range: tuple[int, int] = (32, 64),
    height: int = 64,
    width: int = 64,
) -> list[tuple[Volume, MaskSequence]]:
    """Generate a reproducible suite alternating over the available kinds."""
    rng = np.random.default_rng(seed)
    lo, hi = n_slices_range
    if not 1 <= lo <= hi:
        raise ParameterError(f"empty slice-count range ({lo}, {hi})")
    out = []
    for i in range(n_volumes):
        n = int(rng.integers(lo, hi + 1))
        kind = KINDS[i % len(KINDS)]
        out.append(
            synth_volume(rng, n, height, width, kind, vol_id=f"synth-{seed}-{i:03d}")
        )
    return out


def best_prompt_slice(gt: MaskSequence) -> int:
    """1-based index of the largest ground-truth cross-section."""
    areas = [gt[i].area for i in range(1, len(gt) + 1)]
    return int(np.argmax(areas)) + 1


def save_suite(items: list[tuple[Volume, MaskSequence]], root: str | Path) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    names = []
    for i, (vol, gt) in enumerate(items):
        name = f"vol{i:03d}"
        vol_dir = root / name
        save_volume(vol, vol_dir)
        export_masks(gt, vol_dir / "masks.json")
        names.append(name)
    (root / "suite.json").write_text(json.dumps({"volumes": names}))


def load_suite(root: str | Path) -> list[tuple[Volume, MaskSequence]]:
    root = Path(root)
    names = json.loads((root / "suite.json").read_text())["volumes"]
    out = []
    for name in names:
        vol = load_volume(root / name)
        gt = import_masks(root / name / "masks.json")
        out.append((vol, gt))
    return out
