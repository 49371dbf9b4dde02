"""Volumes, per-slice binary masks, and their portable on-disk formats.

A "volume package" is a directory holding ``header.json`` and a raw
little-endian voxel payload; mask sequences serialize to a JSON document
of per-slice run-length encodings.  Both round-trip bit-exactly, which is
what the regression tests lean on.

Slice indices are 1-based throughout the public API; arrays are 0-based.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError, TruncationError, ValidationError

_DTYPES = {"float32": np.dtype("<f4"), "int16": np.dtype("<i2")}


@dataclass(frozen=True)
class Volume:
    """A stack of N slices of H x W intensities plus spacing metadata.

    ``spacing`` is (sz, sy, sx) in millimeters and is carried as metadata
    only; nothing downstream resamples by it.
    """

    voxels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    source_dtype: str = "float32"
    id: str = ""

    def __post_init__(self) -> None:
        v = self.voxels
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValidationError(f"voxels must be a non-empty 3D array, got shape {v.shape}")
        if self.source_dtype not in _DTYPES:
            raise ParameterError(f"source_dtype must be one of {sorted(_DTYPES)}")
        if len(self.spacing) != 3:
            raise ParameterError("spacing must be (sz, sy, sx)")
        v.setflags(write=False)

    @property
    def n_slices(self) -> int:
        return self.voxels.shape[0]

    @property
    def slice_shape(self) -> tuple[int, int]:
        return self.voxels.shape[1], self.voxels.shape[2]

    def slice_at(self, index: int) -> np.ndarray:
        """Slice by 1-based index."""
        if not 1 <= index <= self.n_slices:
            raise ValidationError(f"slice index {index} outside [1, {self.n_slices}]")
        return self.voxels[index - 1]


@dataclass(frozen=True)
class BinaryMask:
    """One slice's segmentation mask; pixels are strictly 0/1 uint8."""

    pixels: np.ndarray
    slice_index: int

    def __post_init__(self) -> None:
        p = self.pixels
        if p.ndim != 2:
            raise ValidationError(f"mask must be 2D, got shape {p.shape}")
        if p.dtype != np.uint8:
            p = np.ascontiguousarray(p, dtype=np.uint8)
            object.__setattr__(self, "pixels", p)
        if p.size and int(p.max(initial=0)) > 1:
            raise ValidationError("mask pixels must be 0 or 1")
        if self.slice_index < 1:
            raise ValidationError("slice_index is 1-based and must be >= 1")
        p.setflags(write=False)

    @property
    def area(self) -> int:
        return int(self.pixels.sum())

    def same_pixels(self, other: "BinaryMask") -> bool:
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )


@dataclass(frozen=True)
class MaskSequence:
    """Exactly one BinaryMask per slice, in slice order 1..N."""

    masks: tuple[BinaryMask, ...]

    def __post_init__(self) -> None:
        masks = tuple(self.masks)
        object.__setattr__(self, "masks", masks)
        if not masks:
            raise ValidationError("mask sequence must be non-empty")
        shape = masks[0].pixels.shape
        for i, m in enumerate(masks, start=1):
            if m.slice_index != i:
                raise ValidationError(f"entry {i} has slice_index {m.slice_index}")
            if m.pixels.shape != shape:
                raise ValidationError("all masks must share one slice shape")

    def __len__(self) -> int:
        return len(self.masks)

    def __getitem__(self, index_1based: int) -> BinaryMask:
        if not 1 <= index_1based <= len(self.masks):
            raise ValidationError(f"slice index {index_1based} outside [1, {len(self.masks)}]")
        return self.masks[index_1based - 1]

    def replace(self, index_1based: int, mask: BinaryMask) -> "MaskSequence":
        new = list(self.masks)
        new[index_1based - 1] = BinaryMask(mask.pixels, index_1based)
        return MaskSequence(tuple(new))

    @staticmethod
    def empty(n: int, shape: tuple[int, int]) -> "MaskSequence":
        return MaskSequence(
            tuple(BinaryMask(np.zeros(shape, dtype=np.uint8), i) for i in range(1, n + 1))
        )

    @staticmethod
    def from_array(arr: np.ndarray) -> "MaskSequence":
        """Build from an (N, H, W) 0/1 array."""
        if arr.ndim != 3:
            raise ValidationError("expected an (N, H, W) array")
        return MaskSequence(
            tuple(BinaryMask(arr[i], i + 1) for i in range(arr.shape[0]))
        )

    def to_array(self) -> np.ndarray:
        return np.stack([m.pixels for m in self.masks])


# ---------------------------------------------------------------------------
# Volume package I/O
# ---------------------------------------------------------------------------

def load_volume(package_path: str | Path) -> Volume:
    """Read a volume package (header.json + voxels.raw) from a directory."""
    root = Path(package_path)
    header_path = root / "header.json"
    voxel_path = root / "voxels.raw"
    if not header_path.is_file():
        raise FormatError(f"missing header.json in {root}")
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"malformed header.json: {e}") from e

    try:
        version = header["version"]
        dims = header["dims"]
        spacing = header["spacing"]
        dtype_name = header["dtype"]
        byte_order = header["byte_order"]
    except (KeyError, TypeError) as e:
        raise FormatError(f"header.json missing required field: {e}") from e
    if version != 1:
        raise FormatError(f"unsupported package version {version!r}")
    if byte_order != "little":
        raise FormatError(f"unsupported byte order {byte_order!r}")
    if dtype_name not in _DTYPES:
        raise FormatError(f"unsupported dtype {dtype_name!r}")
    if len(dims) != 3 or any(int(d) < 1 for d in dims):
        raise FormatError(f"dims must be three positive ints, got {dims}")

    n, h, w = (int(d) for d in dims)
    dt = _DTYPES[dtype_name]
    raw = voxel_path.read_bytes() if voxel_path.is_file() else None
    if raw is None:
        raise FormatError(f"missing voxels.raw in {root}")
    expected = n * h * w * dt.itemsize
    if len(raw) != expected:
        raise TruncationError(
            f"voxels.raw holds {len(raw)} bytes, header implies {expected}"
        )
    voxels = np.frombuffer(raw, dtype=dt).reshape(n, h, w)
    return Volume(
        voxels=voxels,
        spacing=tuple(float(s) for s in spacing),
        source_dtype=dtype_name,
        id=str(header.get("id", root.name)),
    )


def save_volume(volume: Volume, package_path: str | Path) -> None:
    """Write a volume package; inverse of load_volume, bit-exact."""
    root = Path(package_path)
    root.mkdir(parents=True, exist_ok=True)
    dt = _DTYPES[volume.source_dtype]
    header = {
        "version": 1,
        "dims": list(volume.voxels.shape),
        "spacing": list(volume.spacing),
        "dtype": volume.source_dtype,
        "byte_order": "little",
        "id": volume.id,
    }
    (root / "header.json").write_text(json.dumps(header, indent=1))
    (root / "voxels.raw").write_bytes(
        np.ascontiguousarray(volume.voxels, dtype=dt).tobytes()
    )


def normalize_intensity(volume: Volume, window_lo: float, window_hi: float) -> Volume:
    """Window the intensities to [0, 1]: clamp((x - lo) / (hi - lo), 0, 1)."""
    if window_lo >= window_hi:
        raise ParameterError(f"window_lo must be < window_hi, got ({window_lo}, {window_hi})")
    x = volume.voxels.astype(np.float32)
    scaled = (x - np.float32(window_lo)) / np.float32(window_hi - window_lo)
    out = np.clip(scaled, 0.0, 1.0)
    return Volume(out, spacing=volume.spacing, source_dtype="float32", id=volume.id)


def dice_score(a: np.ndarray, b: np.ndarray) -> float:
    """Dice overlap of two binary arrays; two empty masks count as 1.0."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


# ---------------------------------------------------------------------------
# Run-length mask serialization
# ---------------------------------------------------------------------------

def rle_encode(pixels: np.ndarray) -> list[int]:
    """Row-major alternating run lengths, starting with the count of 0s."""
    flat = np.ascontiguousarray(pixels, dtype=np.uint8).ravel()
    if flat.size == 0:
        return [0]
    edges = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], edges, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0] == 1:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def rle_decode(runs: list[int], shape: tuple[int, int]) -> np.ndarray:
    total = int(shape[0] * shape[1])
    if sum(runs) != total:
        raise FormatError(f"run lengths sum to {sum(runs)}, expected {total}")
    flat = np.zeros(total, dtype=np.uint8)
    pos = 0
    for i, run in enumerate(runs):
        if run < 0:
            raise FormatError("run lengths must be non-negative")
        if i % 2 == 1:
            flat[pos : pos + run] = 1
        pos += run
    return flat.reshape(shape)


def export_masks(sequence: MaskSequence, out_path: str | Path) -> None:
    """Write a mask sequence as masks.json-style RLE."""
    n = len(sequence)
    h, w = sequence[1].pixels.shape
    doc = {
        "dims": [n, h, w],
        "rle": [rle_encode(m.pixels) for m in sequence.masks],
    }
    out = Path(out_path)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc))


def import_masks(path: str | Path) -> MaskSequence:
    """Inverse of export_masks."""
    try:
        doc = json.loads(Path(path).read_text())
        dims = doc["dims"]
        rle = doc["rle"]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise FormatError(f"malformed mask file {path}: {e}") from e
    n, h, w = (int(d) for d in dims)
    if len(rle) != n:
        raise FormatError(f"expected {n} slice encodings, got {len(rle)}")
    masks = tuple(
        BinaryMask(rle_decode(runs, (h, w)), i + 1) for i, runs in enumerate(rle)
    )
    return MaskSequence(masks)
