"""Multi-round result fusion: per-slice quality scoring and selection.

Given the mask sequences of two consecutive rounds, a quality network
scores each slice with P_i = probability the previous round's mask is
better; the fused sequence keeps the previous mask where P_i exceeds a
threshold and the current one otherwise.  Selection only, never
blending: every fused slice is bit-identical to one of its two inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ParameterError, ValidationError
from .nets import ConvBlock, _gn
from .volume import BinaryMask, MaskSequence, Volume, dice_score

PREV, CURR = "prev", "curr"


@dataclass(frozen=True)
class QualityScores:
    """Per-slice probabilities that the previous round's mask is better."""

    p: np.ndarray
    round_prev: int = 0
    round_curr: int = 1
    tau: float = 0.5
    params: str | None = None  # identifier of the scoring parameters used

    def __post_init__(self) -> None:
        p = np.asarray(self.p, dtype=np.float64)
        if p.ndim != 1:
            raise ValidationError(f"scores must be a vector, got shape {p.shape}")
        if p.size and (p.min() < 0.0 or p.max() > 1.0):
            raise ValidationError("scores must lie in [0, 1]")
        if not 0.0 < self.tau < 1.0:
            raise ParameterError(f"tau must be in (0, 1), got {self.tau}")
        object.__setattr__(self, "p", p)

    def __len__(self) -> int:
        return self.p.size


@dataclass(frozen=True)
class FusionResult:
    """Fused sequence plus the per-slice provenance decisions."""

    fused: MaskSequence
    decisions: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.fused) != len(self.decisions):
            raise ValidationError("one decision per slice required")
        if any(d not in (PREV, CURR) for d in self.decisions):
            raise ValidationError(f"decisions must be '{PREV}' or '{CURR}'")


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm1 = _gn(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = _gn(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = torch.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return torch.relu(x + h)


class QualityNet(nn.Module):
    """Classifier over (slice, mask_prev, mask_curr) -> logit of prev better.

    Group normalization throughout keeps the output independent of how
    the slices are batched.
    """

    def __init__(self, base: int = 16):
        super().__init__()
        self.features = nn.Sequential(
            ConvBlock(3, base, stride=2),
            ConvBlock(base, base * 2, stride=2),
            ResidualBlock(base * 2),
            ConvBlock(base * 2, base * 4, stride=2),
            ResidualBlock(base * 4),
        )
        self.head = nn.Linear(base * 4, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        f = self.features(x)
        pooled = f.mean(dim=(2, 3))
        return self.head(pooled)[:, 0]


def _stack_inputs(
    slices: np.ndarray, m_prev: MaskSequence, m_curr: MaskSequence
) -> torch.Tensor:
    x = np.stack(
        [
            np.stack(
                [
                    slices[i].astype(np.float32),
                    m_prev[i + 1].pixels.astype(np.float32),
                    m_curr[i + 1].pixels.astype(np.float32),
                ]
            )
            for i in range(len(slices))
        ]
    )
    return torch.from_numpy(x)


def assess_quality(
    net: QualityNet,
    volume: Volume | np.ndarray,
    m_prev: MaskSequence,
    m_curr: MaskSequence,
    batch_size: int = 8,
    round_prev: int = 0,
    round_curr: int = 1,
    tau: float = 0.5,
) -> QualityScores:
    """Score every slice in batches; the result does not depend on batch size."""
    slices = volume.voxels if isinstance(volume, Volume) else np.asarray(volume)
    n = len(slices)
    if len(m_prev) != n or len(m_curr) != n:
        raise ValidationError(
            f"length mismatch: {n} slices, {len(m_prev)} prev masks, {len(m_curr)} curr masks"
        )
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    net.eval()
    x = _stack_inputs(slices, m_prev, m_curr)
    probs = []
    with torch.no_grad():
        for start in range(0, n, batch_size):
            logits = net(x[start : start + batch_size])
            probs.append(torch.sigmoid(logits))
    p = torch.cat(probs).numpy().astype(np.float64)
    return QualityScores(p, round_prev, round_curr, tau, params="quality-net")


class OracleQualityScorer:
    """Ground-truth-backed scorer: P_i = 1 iff the previous mask's Dice wins."""

    def __init__(self, gt: MaskSequence):
        self.gt = gt

    def assess(self, m_prev: MaskSequence, m_curr: MaskSequence) -> QualityScores:
        if len(m_prev) != len(self.gt) or len(m_curr) != len(self.gt):
            raise ValidationError("mask sequence lengths differ from ground truth")
        p = np.array(
            [
                1.0
                if dice_score(m_prev[i].pixels, self.gt[i].pixels)
                > dice_score(m_curr[i].pixels, self.gt[i].pixels)
                else 0.0
                for i in range(1, len(self.gt) + 1)
            ]
        )
        return QualityScores(p, params="oracle")


def fuse(
    m_prev: MaskSequence,
    m_curr: MaskSequence,
    scores: QualityScores,
    tau: float | None = None,
    prompt_index: int | None = None,
) -> FusionResult:
    """Keep the previous mask where P_i > tau, else the current one.

    The slice the user just corrected (prompt_index, when given) is
    always taken from the current round: a fresh correction must not be
    overridden by a stale mask.
    """
    n = len(m_prev)
    if len(m_curr) != n or len(scores) != n:
        raise ValidationError(
            f"length mismatch: {n} prev masks, {len(m_curr)} curr, {len(scores)} scores"
        )
    if prompt_index is not None and not 1 <= prompt_index <= n:
        raise ValidationError(f"prompt index {prompt_index} outside 1..{n}")
    tau = scores.tau if tau is None else tau
    if not 0.0 < tau < 1.0:
        raise ParameterError(f"tau must be in (0, 1), got {tau}")
    masks: list[BinaryMask] = []
    decisions: list[str] = []
    for i in range(1, n + 1):
        take_prev = scores.p[i - 1] > tau and i != prompt_index
        decisions.append(PREV if take_prev else CURR)
        masks.append(m_prev[i] if take_prev else m_curr[i])
    return FusionResult(MaskSequence(tuple(masks)), tuple(decisions))


def objective_value(scores: QualityScores, decisions: tuple[str, ...]) -> float:
    """Value of a selection under the fusion objective (sum over slices)."""
    if len(decisions) != len(scores):
        raise ValidationError("one decision per score required")
    p = scores.p
    return float(
        sum(p[i] if d == PREV else 1.0 - p[i] for i, d in enumerate(decisions))
    )


def solve_fusion_objective(
    m_prev: MaskSequence, m_curr: MaskSequence, scores: QualityScores
) -> FusionResult:
    """Maximize the fusion objective exactly.

    The objective is a sum of independent per-slice terms, so the
    argmax is the per-slice rule with threshold 0.5; ties go to the
    current round.
    """
    return fuse(m_prev, m_curr, scores, tau=0.5, prompt_index=None)


def train_quality_net(
    pairs: list[tuple[np.ndarray, BinaryMask, BinaryMask, int]],
    seed: int = 0,
    epochs: int = 4,
    base: int = 16,
    batch_size: int = 8,
    lr: float = 1e-3,
) -> QualityNet:
    """Train the quality classifier on labeled better/worse mask pairs.

    label = 1 means the first mask (the one presented as the previous
    round) is strictly better.  Those pairs are also fed swapped with
    label 0, so the network cannot learn a channel-order shortcut; the
    swap leaves negatives over-represented (a label-0 pair may be a tie
    and cannot be swapped), so the loss reweights positives to balance.
    """
    if not pairs:
        raise ParameterError("cannot train on an empty pair set")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    samples = []
    for image, a, b, label in pairs:
        samples.append((image, a.pixels, b.pixels, float(label)))
        if label == 1:
            samples.append((image, b.pixels, a.pixels, 0.0))
    n_pos = sum(1 for s in samples if s[3] == 1.0)
    n_neg = len(samples) - n_pos
    pos_weight = torch.tensor(n_neg / n_pos) if 0 < n_pos < len(samples) else None
    net = QualityNet(base=base)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    loss_fn = nn.BCEWithLogitsLoss(pos_weight=pos_weight)
    net.train()
    for _ in range(epochs):
        order = rng.permutation(len(samples))
        for start in range(0, len(order), batch_size):
            batch = [samples[int(j)] for j in order[start : start + batch_size]]
            x = torch.from_numpy(
                np.stack(
                    [
                        np.stack(
                            [im.astype(np.float32), pa.astype(np.float32), pb.astype(np.float32)]
                        )
                        for im, pa, pb, _ in batch
                    ]
                )
            )
            y = torch.tensor([lab for *_, lab in batch], dtype=torch.float32)
            loss = loss_fn(net(x), y)
            opt.zero_grad()
            loss.backward()
            opt.step()
    net.eval()
    return net
