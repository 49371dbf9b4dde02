"""Pinned defaults for every tunable in the pipeline.

Everything that affects reproducibility lives here: memory capacities,
fusion threshold, click-encoding radius, memory insertion cadence,
prototype budget, and the corruption probability table.  Values can be
overridden from a TOML or JSON file; unknown keys are rejected so typos
fail loudly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParameterError

# Default probability per corruption kind, in this pinned order:
# add_shapes, morphology, boundary_perturb, smooth, remove_shapes, merge_shapes
DEFAULT_CORRUPTION_PROBS = (0.1, 0.1, 0.3, 0.2, 0.1, 0.2)

# Default CT window in HU for abdominal soft tissue.
DEFAULT_WINDOW = (-100.0, 400.0)


@dataclass(frozen=True)
class EngineConfig:
    """Session/propagation/fusion parameters, frozen per session."""

    t_min: int = 5
    t_max: int = 10
    tau: float = 0.5
    click_radius: int = 5
    binarize_threshold: float = 0.5
    insert_every: int = 5          # working-memory insertion cadence (propagated frames)
    prototype_budget: int = 128    # max prototypes distilled per consolidation
    stride: int = 16               # feature-map stride of the memory encoders
    clicks_per_round: int = 1
    quality_batch_size: int = 8
    window_lo: float = DEFAULT_WINDOW[0]
    window_hi: float = DEFAULT_WINDOW[1]
    corruption_probs: tuple[float, ...] = DEFAULT_CORRUPTION_PROBS
    mrf_enabled: bool = True

    def __post_init__(self) -> None:
        if not (1 <= self.t_min < self.t_max):
            raise ParameterError(f"need 1 <= t_min < t_max, got {self.t_min}, {self.t_max}")
        if not (0.0 < self.tau < 1.0):
            raise ParameterError(f"tau must lie in (0, 1), got {self.tau}")
        if self.click_radius < 1:
            raise ParameterError("click_radius must be >= 1")
        if self.insert_every < 1:
            raise ParameterError("insert_every must be >= 1")
        if self.prototype_budget < 1:
            raise ParameterError("prototype_budget must be >= 1")
        if len(self.corruption_probs) != 6:
            raise ParameterError("corruption_probs must have 6 entries")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["corruption_probs"] = list(self.corruption_probs)
        return d


def _load_table(path: Path) -> dict:
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # py >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


def load_config(path: str | Path) -> EngineConfig:
    """Read an EngineConfig from a TOML or JSON key-value file."""
    table = _load_table(Path(path))
    known = {f.name for f in dataclasses.fields(EngineConfig)}
    unknown = set(table) - known
    if unknown:
        raise ParameterError(f"unknown config keys: {sorted(unknown)}")
    if "corruption_probs" in table:
        table["corruption_probs"] = tuple(table["corruption_probs"])
    return EngineConfig(**table)
