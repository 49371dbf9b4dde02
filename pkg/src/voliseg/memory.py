"""Three-tier feature memory: sensory state, working store, long-term prototypes.

The math core is three small functions — ``similarity`` (anisotropic
negative squared distance, weighted per memory channel by a selection map
and per query position by a shrinkage scalar), ``affinity`` (stabilized
softmax over the memory axis), and ``readout`` (value aggregation by
affinity weights).  They accept numpy arrays or torch tensors; torch is
the single implementation so the training path can differentiate through
the same code the tests verify against brute-force loop oracles.

The working store is bounded by [t_min, t_max).  When it fills, the
interaction entries and the t_min - 1 most recent others are retained in
high resolution; every remaining entry becomes consolidation fodder:
its highest-usage positions are distilled into long-term prototypes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import CapacityError, StateError, ValidationError

Array = np.ndarray | torch.Tensor


def _as_tensor(x: Array) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    arr = np.asarray(x)
    if not arr.flags.writeable:
        arr = arr.copy()
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float32)
    return torch.from_numpy(arr)


def _wants_numpy(*xs: Array) -> bool:
    return not any(isinstance(x, torch.Tensor) for x in xs)


def _finish(out: torch.Tensor, to_numpy: bool) -> Array:
    return out.detach().numpy() if to_numpy else out


def similarity(
    mem_keys: Array,
    selection: Array | None,
    query_keys: Array,
    shrinkage: Array | None,
) -> Array:
    """Anisotropic negative squared distance between memory and query keys.

    S[i, j] = -s[j] * sum_c e[c, i] * (K[c, i] - Q[c, j])^2

    mem_keys: (C, M), selection: (C, M) or None (treated as ones),
    query_keys: (C, Q), shrinkage: (Q,) or None (treated as ones).
    Returns (M, Q); everywhere <= 0 when e, s >= 0.
    """
    to_numpy = _wants_numpy(mem_keys, query_keys)
    k = _as_tensor(mem_keys)
    q = _as_tensor(query_keys)
    if k.ndim != 2 or q.ndim != 2:
        raise ValidationError("keys must be 2D (channels, elements)")
    if k.shape[0] != q.shape[0]:
        raise ValidationError(
            f"channel mismatch: memory has {k.shape[0]}, query has {q.shape[0]}"
        )
    dtype = torch.promote_types(k.dtype, q.dtype)
    k, q = k.to(dtype), q.to(dtype)
    if selection is None:
        e = torch.ones_like(k)
    else:
        e = _as_tensor(selection).to(dtype)
        if e.shape != k.shape:
            raise ValidationError(f"selection shape {tuple(e.shape)} != keys {tuple(k.shape)}")
    # Direct differencing; the expanded quadratic loses too much precision
    # in float32 for keys with large shared offsets.
    diff2 = (k.unsqueeze(2) - q.unsqueeze(1)) ** 2      # (C, M, Q)
    s_mq = (e.unsqueeze(2) * diff2).sum(dim=0)          # (M, Q)
    if shrinkage is not None:
        s = _as_tensor(shrinkage).to(dtype).reshape(-1)
        if s.shape[0] != q.shape[1]:
            raise ValidationError(
                f"shrinkage has {s.shape[0]} entries for {q.shape[1]} query positions"
            )
        s_mq = s_mq * s.unsqueeze(0)
    return _finish(-s_mq, to_numpy)


def affinity(similarities: Array) -> Array:
    """Column-wise softmax over the memory axis, with max subtraction.

    Every query column of the result sums to 1.
    """
    to_numpy = _wants_numpy(similarities)
    s = _as_tensor(similarities)
    if s.ndim != 2:
        raise ValidationError("similarity matrix must be 2D (memory, query)")
    return _finish(torch.softmax(s, dim=0), to_numpy)


def readout(values: Array, weights: Array) -> Array:
    """Aggregate memory values by affinity: out[c, q] = sum_m V[c, m] W[m, q]."""
    to_numpy = _wants_numpy(values, weights)
    v = _as_tensor(values)
    w = _as_tensor(weights)
    if v.ndim != 2 or w.ndim != 2:
        raise ValidationError("values and weights must be 2D")
    if v.shape[1] != w.shape[0]:
        raise ValidationError(
            f"values cover {v.shape[1]} memory elements, weights {w.shape[0]}"
        )
    dtype = torch.promote_types(v.dtype, w.dtype)
    return _finish(v.to(dtype) @ w.to(dtype), to_numpy)


# ---------------------------------------------------------------------------
# Feature containers
# ---------------------------------------------------------------------------

@dataclass
class FeatureKey:
    """Encoded key map plus its shrinkage (query role) and selection (memory role)."""

    data: Array          # (C_k, H', W')
    shrinkage: Array     # (H', W'), >= 0
    selection: Array     # (C_k, H', W'), >= 0

    def __post_init__(self) -> None:
        d, s, e = self.data, self.shrinkage, self.selection
        if _nd(d) != 3:
            raise ValidationError("key data must be (channels, H', W')")
        if _shape(s) != _shape(d)[1:]:
            raise ValidationError("shrinkage must be (H', W') matching the key")
        if _shape(e) != _shape(d):
            raise ValidationError("selection must match key shape")
        if _min(s) < 0 or _min(e) < 0:
            raise ValidationError("shrinkage and selection must be non-negative")

    @property
    def spatial(self) -> tuple[int, int]:
        return _shape(self.data)[1], _shape(self.data)[2]

    def flat(self) -> Array:
        return self.data.reshape(_shape(self.data)[0], -1)

    def flat_shrinkage(self) -> Array:
        return self.shrinkage.reshape(-1)

    def flat_selection(self) -> Array:
        return self.selection.reshape(_shape(self.selection)[0], -1)


@dataclass
class FeatureValue:
    """Encoded value map paired with a key of the same spatial dims."""

    data: Array          # (C_v, H', W')

    def __post_init__(self) -> None:
        if _nd(self.data) != 3:
            raise ValidationError("value data must be (channels, H', W')")

    @property
    def spatial(self) -> tuple[int, int]:
        return _shape(self.data)[1], _shape(self.data)[2]

    def flat(self) -> Array:
        return self.data.reshape(_shape(self.data)[0], -1)


def _nd(x: Array) -> int:
    return x.ndim if isinstance(x, np.ndarray) else x.dim()


def _shape(x: Array) -> tuple[int, ...]:
    return tuple(x.shape)


def _min(x: Array) -> float:
    if isinstance(x, torch.Tensor):
        return float(x.detach().min()) if x.numel() else 0.0
    return float(np.min(x)) if x.size else 0.0


def _cat(xs: list[Array], axis: int) -> Array:
    if isinstance(xs[0], torch.Tensor):
        return torch.cat([_as_tensor(x) for x in xs], dim=axis)
    return np.concatenate([np.asarray(x) for x in xs], axis=axis)


def _to_numpy(x: Array) -> np.ndarray:
    return x.detach().numpy() if isinstance(x, torch.Tensor) else np.asarray(x)


def encode_query(encoder, image: Array) -> FeatureKey:
    """Run the query encoder on one 2D slice and wrap its heads as a key.

    The encoder is any callable taking a (1, 1, H, W) tensor and returning
    at least (key, shrinkage, selection) batched maps; extra outputs (skip
    features) are ignored here.
    """
    t = _as_tensor(image)
    if t.dim() != 2:
        raise ValidationError(f"slice must be 2D, got shape {_shape(t)}")
    out = encoder(t[None, None])
    key, shrinkage, selection = out[0], out[1], out[2]
    return FeatureKey(key[0], shrinkage[0, 0], selection[0])


def encode_value(encoder, image: Array, mask: Array) -> FeatureValue:
    """Run the value encoder on one slice conditioned on its mask."""
    t = _as_tensor(image)
    m = _as_tensor(mask)
    if t.dim() != 2:
        raise ValidationError(f"slice must be 2D, got shape {_shape(t)}")
    if _shape(m) != _shape(t):
        raise ValidationError(f"mask shape {_shape(m)} != slice shape {_shape(t)}")
    out = encoder(torch.stack([t, m.to(t.dtype)])[None])
    return FeatureValue(out[0])


# ---------------------------------------------------------------------------
# Memory tiers
# ---------------------------------------------------------------------------

@dataclass
class MemoryEntry:
    key: FeatureKey
    value: FeatureValue
    is_interaction: bool
    frame_index: int
    usage: np.ndarray = field(default=None)  # per-position read usage

    def __post_init__(self) -> None:
        if self.key.spatial != self.value.spatial:
            raise ValidationError("key/value spatial dims differ")
        n = self.key.spatial[0] * self.key.spatial[1]
        if self.usage is None:
            self.usage = np.zeros(n, dtype=np.float64)


@dataclass(frozen=True)
class WorkingMemory:
    """Bounded high-resolution store of recent frames."""

    entries: tuple[MemoryEntry, ...] = ()
    t_min: int = 5
    t_max: int = 10

    def __post_init__(self) -> None:
        if not 1 <= self.t_min < self.t_max:
            raise ValidationError("need 1 <= t_min < t_max")
        if len(self.entries) > self.t_max:
            raise CapacityError(f"{len(self.entries)} entries exceed t_max={self.t_max}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def is_full(self) -> bool:
        return len(self.entries) >= self.t_max


@dataclass(frozen=True)
class LongTermMemory:
    """Append-only prototype store; usage counters are mutable bookkeeping."""

    proto_keys: Array | None = None    # (C_k, P)
    proto_values: Array | None = None  # (C_v, P)
    usage: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float64))

    def __len__(self) -> int:
        return 0 if self.proto_keys is None else _shape(self.proto_keys)[1]

    def append(self, keys: Array, values: Array) -> "LongTermMemory":
        if _shape(keys)[1] != _shape(values)[1]:
            raise ValidationError("prototype key/value counts differ")
        n_new = _shape(keys)[1]
        if self.proto_keys is None:
            new_keys, new_values = keys, values
        else:
            new_keys = _cat([self.proto_keys, keys], axis=1)
            new_values = _cat([self.proto_values, values], axis=1)
        return LongTermMemory(
            proto_keys=new_keys,
            proto_values=new_values,
            usage=np.concatenate([self.usage, np.zeros(n_new, dtype=np.float64)]),
        )


def add_to_working(
    wm: WorkingMemory,
    key: FeatureKey,
    value: FeatureValue,
    is_interaction: bool,
    frame_index: int = 0,
) -> WorkingMemory:
    """Append an entry; the caller must consolidate once the store is full."""
    if wm.is_full:
        raise CapacityError(
            f"working memory already holds t_max={wm.t_max} entries; consolidate first"
        )
    entry = MemoryEntry(key, value, is_interaction, frame_index)
    return WorkingMemory(wm.entries + (entry,), wm.t_min, wm.t_max)


def consolidate(
    wm: WorkingMemory,
    ltm: LongTermMemory,
    prototype_budget: int = 128,
) -> tuple[WorkingMemory, LongTermMemory]:
    """Distill candidate entries into long-term prototypes.

    Retains every interaction entry plus the (t_min - 1) most recent
    non-interaction entries; all other entries become candidates.  The
    candidate positions with the highest accumulated read usage are kept
    as prototype keys; prototype values are their affinity-weighted
    aggregation over the whole candidate set.
    """
    if len(wm.entries) != wm.t_max:
        raise StateError(
            f"consolidate requires a full store ({wm.t_max}), have {len(wm.entries)}"
        )
    non_interaction = [e for e in wm.entries if not e.is_interaction]
    recent = non_interaction[-(wm.t_min - 1):] if wm.t_min > 1 else []
    keep_recent = {id(e) for e in recent}
    retained, candidates = [], []
    for e in wm.entries:
        if e.is_interaction or id(e) in keep_recent:
            retained.append(e)
        else:
            candidates.append(e)
    new_wm = WorkingMemory(tuple(retained), wm.t_min, wm.t_max)
    if not candidates:
        # Degenerate: every entry is protected. Nothing to distill; the
        # next add will fail with CapacityError, which is the honest signal.
        return new_wm, ltm

    cand_keys = _cat([e.key.flat() for e in candidates], axis=1)
    cand_sel = _cat([e.key.flat_selection() for e in candidates], axis=1)
    cand_vals = _cat([e.value.flat() for e in candidates], axis=1)
    cand_shrink = _cat([e.key.flat_shrinkage() for e in candidates], axis=0)
    usage = np.concatenate([e.usage for e in candidates])

    budget = min(prototype_budget, usage.shape[0])
    order = np.argsort(-usage, kind="stable")[:budget]
    order_idx = (
        torch.as_tensor(order) if isinstance(cand_keys, torch.Tensor) else order
    )
    proto_keys = cand_keys[:, order_idx]
    proto_shrink = cand_shrink[order_idx]

    s = similarity(cand_keys, cand_sel, proto_keys, proto_shrink)
    w = affinity(s)
    proto_values = readout(cand_vals, w)
    return new_wm, ltm.append(proto_keys, proto_values)


@dataclass
class SensoryState:
    """Per-direction recurrent hidden state at the feature stride."""

    hidden: Array  # (C_h, H', W')

    @staticmethod
    def zeros(channels: int, h: int, w: int, torch_like: bool = True) -> "SensoryState":
        if torch_like:
            return SensoryState(torch.zeros(channels, h, w))
        return SensoryState(np.zeros((channels, h, w), dtype=np.float32))


class MemoryStore:
    """One propagation direction's combined working + long-term memory."""

    def __init__(self, t_min: int, t_max: int, prototype_budget: int = 128):
        self.working = WorkingMemory((), t_min, t_max)
        self.long_term = LongTermMemory()
        self.prototype_budget = prototype_budget

    def __len__(self) -> int:
        return len(self.working)

    def add(
        self,
        key: FeatureKey,
        value: FeatureValue,
        is_interaction: bool,
        frame_index: int = 0,
    ) -> None:
        if self.working.is_full:
            self.working, self.long_term = consolidate(
                self.working, self.long_term, self.prototype_budget
            )
        self.working = add_to_working(
            self.working, key, value, is_interaction, frame_index
        )

    def read(self, query: FeatureKey) -> Array:
        """Similarity -> affinity -> readout over all stored elements.

        Accumulates per-position usage on every stored element; returns the
        readout value as (C_v, H', W').
        """
        if len(self.working) == 0 and len(self.long_term) == 0:
            raise StateError("cannot read from an empty memory")
        keys = [e.key.flat() for e in self.working.entries]
        sels = [e.key.flat_selection() for e in self.working.entries]
        vals = [e.value.flat() for e in self.working.entries]
        if len(self.long_term):
            keys.append(self.long_term.proto_keys)
            lt_sel = self.long_term.proto_keys
            sels.append(
                torch.ones_like(_as_tensor(lt_sel))
                if isinstance(lt_sel, torch.Tensor)
                else np.ones_like(np.asarray(lt_sel))
            )
            vals.append(self.long_term.proto_values)
        mem_keys = _cat(keys, axis=1)
        mem_sel = _cat(sels, axis=1)
        mem_vals = _cat(vals, axis=1)

        s = similarity(mem_keys, mem_sel, query.flat(), query.flat_shrinkage())
        w = affinity(s)
        out = readout(mem_vals, w)

        per_element = _to_numpy(w).sum(axis=1).astype(np.float64)
        pos = 0
        for e in self.working.entries:
            n = e.usage.shape[0]
            e.usage += per_element[pos : pos + n]
            pos += n
        if len(self.long_term):
            np.add(self.long_term.usage, per_element[pos:], out=self.long_term.usage)

        h, w_ = query.spatial
        c_v = _shape(mem_vals)[0]
        return out.reshape(c_v, h, w_)
