"""Bidirectional propagation of one prompt mask through a volume.

The prompt slice seeds a fresh memory per direction (marked as an
interaction entry); slices are then decoded outward in order, with every
`insert_every`-th prediction written back into memory.  The prompt
slice's mask is never recomputed, so it survives propagation bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import torch
from torch import nn

from .config import EngineConfig
from .errors import ValidationError
from .memory import (
    FeatureKey,
    FeatureValue,
    MemoryStore,
    SensoryState,
    encode_value,
)
from .nets import ConvBlock, ConvGRUCell, segmentation_loss
from .volume import BinaryMask, MaskSequence, Volume


@dataclass(frozen=True)
class PropagationPlan:
    """Slice visit order for both directions around a prompt index."""

    prompt_index: int
    n_slices: int

    def __post_init__(self) -> None:
        if self.n_slices < 1:
            raise ValidationError(f"n_slices must be >= 1, got {self.n_slices}")
        if not 1 <= self.prompt_index <= self.n_slices:
            raise ValidationError(
                f"prompt index {self.prompt_index} outside 1..{self.n_slices}"
            )

    @property
    def forward_range(self) -> range:
        return range(self.prompt_index + 1, self.n_slices + 1)

    @property
    def backward_range(self) -> range:
        return range(self.prompt_index - 1, 0, -1)


class Skips(NamedTuple):
    """Query-encoder features kept for the decoder, batched tensors."""

    f16: torch.Tensor
    f8: torch.Tensor
    f4: torch.Tensor


class QueryEncoder(nn.Module):
    """Image -> stride-16 key with shrinkage/selection heads plus skips."""

    def __init__(self, base: int = 8, key_dim: int = 16):
        super().__init__()
        self.key_dim = key_dim
        self.down1 = ConvBlock(1, base, stride=2)
        self.down2 = ConvBlock(base, base * 2, stride=2)
        self.down3 = ConvBlock(base * 2, base * 4, stride=2)
        self.down4 = ConvBlock(base * 4, base * 4, stride=2)
        self.key_head = nn.Conv2d(base * 4, key_dim, 1)
        self.shrink_head = nn.Conv2d(base * 4, 1, 1)
        self.select_head = nn.Conv2d(base * 4, key_dim, 1)

    def forward(self, x: torch.Tensor):
        f2 = self.down1(x)
        f4 = self.down2(f2)
        f8 = self.down3(f4)
        f16 = self.down4(f8)
        key = self.key_head(f16)
        # Both heads must be non-negative for the similarity sign contract.
        shrinkage = torch.nn.functional.softplus(self.shrink_head(f16))
        selection = torch.sigmoid(self.select_head(f16))
        return key, shrinkage, selection, f16, f8, f4


class ValueEncoder(nn.Module):
    """(Image, mask) -> stride-16 value map."""

    def __init__(self, base: int = 8, value_dim: int = 32):
        super().__init__()
        self.value_dim = value_dim
        self.down1 = ConvBlock(2, base, stride=2)
        self.down2 = ConvBlock(base, base * 2, stride=2)
        self.down3 = ConvBlock(base * 2, base * 4, stride=2)
        self.down4 = ConvBlock(base * 4, base * 4, stride=2)
        self.head = nn.Conv2d(base * 4, value_dim, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.down4(self.down3(self.down2(self.down1(x)))))


class MaskDecoder(nn.Module):
    """Readout + sensory + skips -> full-resolution logits, updated hidden."""

    def __init__(self, value_dim: int = 32, base: int = 8, hidden_dim: int = 32):
        super().__init__()
        self.hidden_dim = hidden_dim
        f16_ch, f8_ch, f4_ch = base * 4, base * 4, base * 2
        self.fuse = ConvBlock(value_dim + f16_ch + hidden_dim, base * 4)
        self.gru = ConvGRUCell(base * 4, hidden_dim)
        self.up8 = ConvBlock(base * 4 + f8_ch, base * 4)
        self.up4 = ConvBlock(base * 4 + f4_ch, base * 2)
        self.head = nn.Conv2d(base * 2, 1, 3, padding=1)

    def forward(
        self, read: torch.Tensor, hidden: torch.Tensor, skips: Skips
    ) -> tuple[torch.Tensor, torch.Tensor]:
        if read.shape[-2:] != skips.f16.shape[-2:]:
            raise ValidationError(
                f"readout spatial dims {tuple(read.shape[-2:])} do not match "
                f"skip features {tuple(skips.f16.shape[-2:])}"
            )
        x = self.fuse(torch.cat([read, skips.f16, hidden], dim=1))
        new_hidden = self.gru(x, hidden)
        x = _up_to(x, skips.f8)
        x = self.up8(torch.cat([x, skips.f8], dim=1))
        x = _up_to(x, skips.f4)
        x = self.up4(torch.cat([x, skips.f4], dim=1))
        x = nn.functional.interpolate(
            x, scale_factor=4, mode="bilinear", align_corners=False
        )
        return self.head(x), new_hidden


def _up_to(x: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    return nn.functional.interpolate(
        x, size=ref.shape[-2:], mode="bilinear", align_corners=False
    )


class ToyPropagationModel(nn.Module):
    """Bundles the query/value encoders, decoder, and sensory update rules."""

    def __init__(
        self,
        base: int = 8,
        key_dim: int = 16,
        value_dim: int = 32,
        hidden_dim: int = 32,
    ):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.query_encoder = QueryEncoder(base=base, key_dim=key_dim)
        self.value_encoder = ValueEncoder(base=base, value_dim=value_dim)
        self.decoder = MaskDecoder(value_dim=value_dim, base=base, hidden_dim=hidden_dim)
        # Deep update: refresh the sensory state from the value feature
        # whenever a frame is written into working memory.
        self.deep_gru = ConvGRUCell(value_dim, hidden_dim)

    def encode_query(self, image) -> tuple[FeatureKey, Skips]:
        t = _image_tensor(image)
        key, shrinkage, selection, f16, f8, f4 = self.query_encoder(t[None, None])
        fk = FeatureKey(key[0], shrinkage[0, 0], selection[0])
        return fk, Skips(f16, f8, f4)

    def encode_value(self, image, mask) -> FeatureValue:
        return encode_value(self.value_encoder, _image_tensor(image), _mask_tensor(mask))

    def init_sensory(self, h: int, w: int) -> SensoryState:
        return SensoryState(torch.zeros(self.hidden_dim, h, w))

    def decode(
        self,
        read,
        sensory: SensoryState,
        skips: Skips,
        threshold: float = 0.5,
        slice_index: int = 1,
    ) -> tuple[np.ndarray, BinaryMask]:
        """Decode one slice; updates the sensory hidden state in place."""
        read_t = read if isinstance(read, torch.Tensor) else torch.as_tensor(read)
        hidden = sensory.hidden
        hidden_t = hidden if isinstance(hidden, torch.Tensor) else torch.as_tensor(hidden)
        logits, new_hidden = self.decoder(
            read_t.to(torch.float32)[None], hidden_t.to(torch.float32)[None], skips
        )
        sensory.hidden = new_hidden[0]
        prob = torch.sigmoid(logits)[0, 0]
        mask = (prob >= threshold).to(torch.uint8)
        return prob.detach().numpy(), BinaryMask(mask.detach().numpy(), slice_index)

    def deep_update(self, value: FeatureValue, sensory: SensoryState) -> None:
        v = value.data
        v_t = v if isinstance(v, torch.Tensor) else torch.as_tensor(v)
        hidden = sensory.hidden
        hidden_t = hidden if isinstance(hidden, torch.Tensor) else torch.as_tensor(hidden)
        sensory.hidden = self.deep_gru(v_t.to(torch.float32), hidden_t.to(torch.float32))


def _np_tensor(x) -> torch.Tensor:
    arr = np.asarray(x)
    if not arr.flags.writeable:
        arr = arr.copy()
    return torch.from_numpy(np.ascontiguousarray(arr))


def _image_tensor(image) -> torch.Tensor:
    t = image if isinstance(image, torch.Tensor) else _np_tensor(image)
    if t.dim() != 2:
        raise ValidationError(f"slice must be 2D, got shape {tuple(t.shape)}")
    return t.to(torch.float32)


def _mask_tensor(mask) -> torch.Tensor:
    if isinstance(mask, BinaryMask):
        mask = mask.pixels
    t = mask if isinstance(mask, torch.Tensor) else _np_tensor(mask)
    return t.to(torch.float32)


# hook(direction, slice_index, store) fires after each decoded slice.
InstrumentationHook = Callable[[str, int, MemoryStore], None]


def propagate(
    vol: Volume,
    prompt_index: int,
    prompt_mask: BinaryMask,
    model,
    config: EngineConfig | None = None,
    hook: InstrumentationHook | None = None,
) -> MaskSequence:
    """Propagate the prompt mask to every slice, both directions.

    Returns exactly one mask per slice; the prompt slot holds the prompt
    mask object unchanged.  Each direction runs on its own fresh memory
    seeded with the prompt's (key, value) as an interaction entry, and
    its own zeroed sensory state.
    """
    config = config or EngineConfig()
    plan = PropagationPlan(prompt_index, vol.n_slices)
    if prompt_mask.pixels.shape != vol.slice_shape:
        raise ValidationError(
            f"prompt mask shape {prompt_mask.pixels.shape} != slice shape {vol.slice_shape}"
        )
    out: list[BinaryMask | None] = [None] * vol.n_slices
    out[prompt_index - 1] = prompt_mask

    with torch.no_grad():
        for direction, indices in (
            ("forward", plan.forward_range),
            ("backward", plan.backward_range),
        ):
            if len(indices) == 0:
                continue
            store = MemoryStore(config.t_min, config.t_max, config.prototype_budget)
            prompt_slice = vol.slice_at(prompt_index)
            prompt_key, _ = model.encode_query(prompt_slice)
            prompt_value = model.encode_value(prompt_slice, prompt_mask.pixels)
            store.add(prompt_key, prompt_value, is_interaction=True, frame_index=prompt_index)
            h, w = prompt_key.spatial
            sensory = model.init_sensory(h, w)
            for step, i in enumerate(indices, start=1):
                key, skips = model.encode_query(vol.slice_at(i))
                read = store.read(key)
                _, mask = model.decode(
                    read, sensory, skips,
                    threshold=config.binarize_threshold, slice_index=i,
                )
                out[i - 1] = mask
                if step % config.insert_every == 0:
                    value = model.encode_value(vol.slice_at(i), mask.pixels)
                    store.add(key, value, is_interaction=False, frame_index=i)
                    model.deep_update(value, sensory)
                if hook is not None:
                    hook(direction, i, store)
    return MaskSequence(tuple(out))


def train_propagation_model(
    volumes: list[Volume],
    gts: list[MaskSequence],
    seed: int = 0,
    epochs: int = 2,
    clips_per_volume: int = 8,
    lr: float = 1e-3,
    config: EngineConfig | None = None,
    **model_kwargs,
) -> ToyPropagationModel:
    """Train on 3-frame clips: seed memory with frame 0, predict 1 and 2.

    Frame 1's soft prediction conditions the value written back into
    memory before frame 2 is decoded, so the model learns to propagate
    from its own imperfect masks.
    """
    if len(volumes) != len(gts):
        raise ValidationError(f"{len(volumes)} volumes vs {len(gts)} mask sequences")
    config = config or EngineConfig()
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = ToyPropagationModel(**model_kwargs)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    model.train()
    for _ in range(epochs):
        for vi in rng.permutation(len(volumes)):
            vol, seq = volumes[vi], gts[vi]
            if vol.n_slices < 3:
                continue
            for _ in range(clips_per_volume):
                gaps = rng.integers(1, 4, size=2)
                if vol.n_slices <= int(gaps.sum()):
                    gaps = np.array([1, 1])
                start = int(rng.integers(1, vol.n_slices - int(gaps.sum()) + 1))
                frames = [start, start + int(gaps[0]), start + int(gaps[0] + gaps[1])]
                if rng.random() < 0.5:
                    frames = frames[::-1]  # backward clips too
                store = MemoryStore(config.t_min, config.t_max, config.prototype_budget)
                key0, _ = model.encode_query(vol.slice_at(frames[0]))
                val0 = model.encode_value(vol.slice_at(frames[0]), seq[frames[0]].pixels)
                store.add(key0, val0, is_interaction=True, frame_index=frames[0])
                h, w = key0.spatial
                sensory = model.init_sensory(h, w)
                loss = torch.zeros(())
                prev_prob: torch.Tensor | None = None
                for fi in frames[1:]:
                    if prev_prob is not None:
                        value = model.encode_value(vol.slice_at(frames[1]), prev_prob)
                        store.add(value=value, key=key_prev, is_interaction=False,
                                  frame_index=frames[1])
                        model.deep_update(value, sensory)
                    key, skips = model.encode_query(vol.slice_at(fi))
                    read = store.read(key)
                    read_t = read if isinstance(read, torch.Tensor) else torch.as_tensor(read)
                    hidden = sensory.hidden
                    logits, new_hidden = model.decoder(
                        read_t[None], hidden[None] if hidden.dim() == 3 else hidden, skips
                    )
                    sensory.hidden = new_hidden[0]
                    gt_t = torch.from_numpy(seq[fi].pixels.astype(np.float32))[None, None]
                    loss = loss + segmentation_loss(logits, gt_t)
                    prev_prob = torch.sigmoid(logits)[0, 0]
                    key_prev = key
                opt.zero_grad()
                loss.backward()
                opt.step()
    model.eval()
    return model
