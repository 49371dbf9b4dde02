"""Defective-mask generation by randomized transformations of ground truth.

Used to train both the 2D refinement model (corrupted previous-mask
inputs) and the mask quality scorer (labeled better/worse pairs).  Every
operation is a pure function of (mask, rng, spec); replaying a seed
reproduces the exact corruption.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage import draw

from .errors import ParameterError, ValidationError
from .volume import BinaryMask, MaskSequence, Volume, dice_score, rle_encode, save_volume

# Pinned kind order; index i carries probability spec.probs[i].
class TransformKind(enum.Enum):
    ADD_SHAPES = "add_shapes"
    MORPHOLOGY = "morphology"
    BOUNDARY_PERTURB = "boundary_perturb"
    SMOOTH = "smooth"
    REMOVE_SHAPES = "remove_shapes"
    MERGE_SHAPES = "merge_shapes"


KIND_ORDER = tuple(TransformKind)

SHAPE_KINDS = ("rectangle", "triangle", "polygon")

# 3x3 cross structuring element used by every morphology pass.
_CROSS = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class CorruptionSpec:
    """Probabilities and parameter ranges of the corruption pipeline."""

    probs: tuple[float, ...] = (0.1, 0.1, 0.3, 0.2, 0.1, 0.2)
    dilation_iters: tuple[int, int] = (10, 30)
    erosion_iters: int = 10
    boundary_displacement: tuple[int, int] = (10, 30)

    def __post_init__(self) -> None:
        if len(self.probs) != len(KIND_ORDER):
            raise ParameterError(f"need {len(KIND_ORDER)} probabilities")
        if any(p < 0 for p in self.probs):
            raise ParameterError("probabilities must be non-negative")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ParameterError(f"probabilities sum to {sum(self.probs)}, not 1")
        lo, hi = self.dilation_iters
        if not 1 <= lo <= hi:
            raise ParameterError("dilation_iters range is empty")
        if self.erosion_iters < 1:
            raise ParameterError("erosion_iters must be >= 1")
        lo, hi = self.boundary_displacement
        if not 1 <= lo <= hi:
            raise ParameterError("boundary_displacement range is empty")


def sample_transformation(rng: np.random.Generator, spec: CorruptionSpec) -> TransformKind:
    """Draw one transformation kind with the spec's probabilities."""
    idx = rng.choice(len(KIND_ORDER), p=np.asarray(spec.probs, dtype=np.float64))
    return KIND_ORDER[int(idx)]


def corrupt_mask(
    gt: BinaryMask, rng: np.random.Generator, spec: CorruptionSpec | None = None
) -> BinaryMask:
    """Apply one randomly sampled transformation to a ground-truth mask.

    Empty masks are returned unchanged: there is no geometry to corrupt.
    Output is always binary with the input's shape.
    """
    spec = spec or CorruptionSpec()
    pixels = gt.pixels
    if pixels.sum() == 0:
        return gt
    kind = sample_transformation(rng, spec)
    out = _apply(kind, pixels.astype(bool), rng, spec)
    return BinaryMask(out.astype(np.uint8), gt.slice_index)


def corrupt_mask_chain(
    gt: BinaryMask,
    rng: np.random.Generator,
    spec: CorruptionSpec | None = None,
    n: int = 1,
) -> BinaryMask:
    """Compose n sampled transformations; heavier corruption for n > 1."""
    m = gt
    for _ in range(max(1, n)):
        m = corrupt_mask(m, rng, spec)
    return m


def _apply(
    kind: TransformKind, mask: np.ndarray, rng: np.random.Generator, spec: CorruptionSpec
) -> np.ndarray:
    if kind is TransformKind.ADD_SHAPES:
        return _add_shapes(mask, rng, near_boundary=False)
    if kind is TransformKind.MORPHOLOGY:
        return _morphology(mask, rng, spec)
    if kind is TransformKind.BOUNDARY_PERTURB:
        return _boundary_perturb(mask, rng, spec)
    if kind is TransformKind.SMOOTH:
        return _smooth(mask, rng)
    if kind is TransformKind.REMOVE_SHAPES:
        return _remove_shapes(mask, rng)
    return _add_shapes(mask, rng, near_boundary=True)  # MERGE_SHAPES


def _mask_scale(mask: np.ndarray) -> float:
    """Characteristic object radius derived from the mask area."""
    return max(2.0, np.sqrt(mask.sum() / np.pi))


def _random_shape(
    shape_hw: tuple[int, int],
    center: tuple[float, float],
    scale: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Rasterize one random rectangle/triangle/polygon around a center."""
    h, w = shape_hw
    kind = SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))]
    out = np.zeros(shape_hw, dtype=bool)
    cy, cx = center
    if kind == "rectangle":
        hh = scale * rng.uniform(0.3, 1.0)
        ww = scale * rng.uniform(0.3, 1.0)
        r0, r1 = int(round(cy - hh)), int(round(cy + hh))
        c0, c1 = int(round(cx - ww)), int(round(cx + ww))
        out[max(r0, 0) : max(r1, 0), max(c0, 0) : max(c1, 0)] = True
        return out
    if kind == "triangle":
        n_vertices = 3
    else:
        n_vertices = int(rng.integers(5, 9))
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=n_vertices))
    radii = scale * rng.uniform(0.4, 1.2, size=n_vertices)
    rows = cy + radii * np.sin(angles)
    cols = cx + radii * np.cos(angles)
    rr, cc = draw.polygon(rows, cols, shape=shape_hw)
    out[rr, cc] = True
    return out


def _add_shapes(mask: np.ndarray, rng: np.random.Generator, near_boundary: bool) -> np.ndarray:
    """Union random shapes within/near the mask (or at its boundary for merges)."""
    out = mask.copy()
    scale_base = _mask_scale(mask)
    n_shapes = int(rng.integers(1, 4))
    boundary = _boundary_pixels(mask)
    fg = np.argwhere(mask)
    for _ in range(n_shapes):
        if near_boundary and len(boundary):
            cy, cx = boundary[int(rng.integers(len(boundary)))]
            jitter = scale_base * 0.3
            cy += rng.uniform(-jitter, jitter)
            cx += rng.uniform(-jitter, jitter)
        else:
            base = fg[int(rng.integers(len(fg)))]
            spread = scale_base * rng.uniform(0.0, 1.5)
            angle = rng.uniform(0, 2 * np.pi)
            cy = base[0] + spread * np.sin(angle)
            cx = base[1] + spread * np.cos(angle)
        scale = scale_base * rng.uniform(0.2, 0.7)
        out |= _random_shape(mask.shape, (cy, cx), scale, rng)
    return out


def _morphology(mask: np.ndarray, rng: np.random.Generator, spec: CorruptionSpec) -> np.ndarray:
    if rng.random() < 0.5:
        lo, hi = spec.dilation_iters
        iters = int(rng.integers(lo, hi + 1))
        assert lo <= iters <= hi
        return ndimage.binary_dilation(mask, structure=_CROSS, iterations=iters)
    iters = spec.erosion_iters
    return ndimage.binary_erosion(mask, structure=_CROSS, iterations=iters)


def _boundary_pixels(mask: np.ndarray) -> np.ndarray:
    eroded = ndimage.binary_erosion(mask, structure=_CROSS)
    return np.argwhere(mask & ~eroded)


def _boundary_perturb(
    mask: np.ndarray, rng: np.random.Generator, spec: CorruptionSpec
) -> np.ndarray:
    """Jitter resampled contour vertices, then refill (even-odd semantics)."""
    from skimage import measure

    lo, hi = spec.boundary_displacement
    displacement = int(rng.integers(lo, hi + 1))
    assert lo <= displacement <= hi
    padded = np.pad(mask, 1).astype(float)
    contours = measure.find_contours(padded, 0.5)
    if not contours:
        return mask
    out = np.zeros_like(mask)
    for contour in contours:
        n_pts = len(contour)
        n_vertices = int(np.clip(n_pts // 6, 8, 64))
        idx = np.linspace(0, n_pts - 1, n_vertices, endpoint=False).astype(int)
        verts = contour[idx] - 1.0  # undo pad offset
        verts = verts + rng.uniform(-displacement, displacement, size=verts.shape)
        rr, cc = draw.polygon(verts[:, 0], verts[:, 1], shape=mask.shape)
        region = np.zeros_like(mask)
        region[rr, cc] = True
        out ^= region  # even-odd combination across nested contours
    return out


def _smooth(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    sigma = rng.uniform(1.0, 3.0)
    blurred = ndimage.gaussian_filter(mask.astype(np.float32), sigma=sigma)
    return blurred >= 0.5


def _remove_shapes(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Delete one connected component, or carve a shape out of the mask."""
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n > 1:
        victim = int(rng.integers(1, n + 1))
        return mask & (labels != victim)
    fg = np.argwhere(mask)
    cy, cx = fg[int(rng.integers(len(fg)))]
    carve = _random_shape(mask.shape, (float(cy), float(cx)), _mask_scale(mask) * rng.uniform(0.2, 0.6), rng)
    return mask & ~carve


# ---------------------------------------------------------------------------
# Defect dataset
# ---------------------------------------------------------------------------

def build_defect_dataset(
    volumes: list[Volume],
    gts: list[MaskSequence],
    baseline_model=None,
    rng: np.random.Generator | None = None,
    spec: CorruptionSpec | None = None,
    pairs_per_slice: int = 2,
) -> list[tuple[np.ndarray, BinaryMask, BinaryMask, int]]:
    """Emit labeled (slice, mask_a, mask_b, label) comparison pairs.

    Candidates per slice are drawn from the ground truth, corruptions of
    it at mixed severities, and (when provided) baseline-model
    predictions.  ``baseline_model`` may be one callable or a list of
    them; each contributes a candidate per slice, so two baselines yield
    prediction-vs-prediction comparisons.  label = 1 iff
    Dice(mask_a, gt) > Dice(mask_b, gt); ties get 0.
    """
    if len(volumes) != len(gts):
        raise ValidationError(f"{len(volumes)} volumes vs {len(gts)} mask sequences")
    rng = rng or np.random.default_rng(0)
    spec = spec or CorruptionSpec()
    if baseline_model is None:
        baselines = []
    elif callable(baseline_model):
        baselines = [baseline_model]
    else:
        baselines = list(baseline_model)
    pairs = []
    for vol, seq in zip(volumes, gts):
        if vol.n_slices != len(seq):
            raise ValidationError(
                f"volume {vol.id!r} has {vol.n_slices} slices, gt has {len(seq)}"
            )
        baseline_seqs = [model(vol) for model in baselines]
        for i in range(1, vol.n_slices + 1):
            gt = seq[i]
            if gt.area == 0:
                continue
            candidates = [gt.pixels]
            for severity in (1, 1, 2, 3):
                candidates.append(
                    corrupt_mask_chain(gt, rng, spec, n=severity).pixels
                )
            for baseline_seq in baseline_seqs:
                candidates.append(baseline_seq[i].pixels)
            for _ in range(pairs_per_slice):
                ia, ib = rng.choice(len(candidates), size=2, replace=False)
                a, b = candidates[int(ia)], candidates[int(ib)]
                label = int(dice_score(a, gt.pixels) > dice_score(b, gt.pixels))
                pairs.append(
                    (vol.slice_at(i), BinaryMask(a, i), BinaryMask(b, i), label)
                )
    return pairs


def save_defect_dataset(
    pairs: list[tuple[np.ndarray, BinaryMask, BinaryMask, int]],
    out_dir: str | Path,
) -> None:
    """Persist pairs as a stacked slice package plus pairs.json with RLE masks."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    slices = np.stack([p[0].astype(np.float32) for p in pairs])
    save_volume(Volume(slices, id="defect-slices"), out / "slices")
    doc = {
        "dims": list(slices.shape),
        "pairs": [
            {
                "slice": idx,
                "a": rle_encode(a.pixels),
                "b": rle_encode(b.pixels),
                "label": label,
            }
            for idx, (_, a, b, label) in enumerate(pairs)
        ],
    }
    (out / "pairs.json").write_text(json.dumps(doc))


def load_defect_dataset(
    in_dir: str | Path,
) -> list[tuple[np.ndarray, BinaryMask, BinaryMask, int]]:
    from .volume import load_volume, rle_decode

    root = Path(in_dir)
    vol = load_volume(root / "slices")
    doc = json.loads((root / "pairs.json").read_text())
    h, w = vol.slice_shape
    pairs = []
    for entry in doc["pairs"]:
        idx = int(entry["slice"])
        pairs.append(
            (
                vol.voxels[idx],
                BinaryMask(rle_decode(entry["a"], (h, w)), idx + 1),
                BinaryMask(rle_decode(entry["b"], (h, w)), idx + 1),
                int(entry["label"]),
            )
        )
    return pairs
