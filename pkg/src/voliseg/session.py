"""Interaction sessions: click -> prompt mask -> propagation -> fusion.

A session owns one volume and an append-only list of rounds.  Round 1
stores raw propagation output; every later round stores the fusion of
its propagation with the previous round's stored sequence.  Sessions
serialize to JSON event logs (clicks plus RLE snapshots) and can be
replayed against the same checkpoints for bit-exact reproduction.
"""

from __future__ import annotations

import dataclasses
import json
import uuid
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import EngineConfig
from .errors import NotFoundError, ParameterError, ValidationError
from .fusion import CURR, QualityScores, assess_quality, fuse
from .interact import Click, segment_slice, simulate_next_click
from .propagate import propagate
from .volume import (
    BinaryMask,
    MaskSequence,
    Volume,
    dice_score,
    normalize_intensity,
    rle_decode,
    rle_encode,
)


def dice(a: BinaryMask, b: BinaryMask) -> float:
    """Dice coefficient of two masks; both-empty counts as 1.0."""
    return dice_score(a.pixels, b.pixels)


@dataclass(frozen=True)
class UserClick:
    """A click as submitted to a session: slice plus position and polarity."""

    slice_index: int
    row: int
    col: int
    positive: bool

    def to_click(self) -> Click:
        return Click(self.row, self.col, self.positive)


@dataclass(frozen=True)
class Round:
    """One completed interaction round and everything it produced."""

    index: int
    prompt_index: int
    clicks: tuple[UserClick, ...]
    prompt_mask: BinaryMask
    raw_sequence: MaskSequence
    fused_sequence: MaskSequence
    decisions: tuple[str, ...]
    per_slice_dice: tuple[float, ...] | None = None
    mean_dice: float | None = None


class Session:
    """One volume's interaction history plus its normalized working copy."""

    def __init__(
        self,
        volume: Volume,
        config: EngineConfig,
        gt: MaskSequence | None = None,
        session_id: str | None = None,
        volume_ref: str = "",
    ):
        if gt is not None and len(gt) != volume.n_slices:
            raise ValidationError(
                f"gt has {len(gt)} masks for {volume.n_slices} slices"
            )
        self.id = session_id or uuid.uuid4().hex[:12]
        self.volume = volume
        self.norm = normalize_intensity(volume, config.window_lo, config.window_hi)
        self.gt = gt
        self.config = config
        self.rounds: list[Round] = []
        self.volume_ref = volume_ref

    @property
    def n_slices(self) -> int:
        return self.volume.n_slices

    def current_sequence(self) -> MaskSequence | None:
        return self.rounds[-1].fused_sequence if self.rounds else None


class ModelBackend:
    """Trained-model implementations of the per-round segmentation steps."""

    def __init__(self, interactor, propagation_model, quality_net, config: EngineConfig):
        self.interactor = interactor
        self.propagation_model = propagation_model
        self.quality_net = quality_net
        self.config = config

    def segment_prompt(
        self,
        image: np.ndarray,
        clicks: list[Click],
        prior: np.ndarray | None,
        slice_index: int,
    ) -> BinaryMask:
        return segment_slice(self.interactor, image, clicks, prior, slice_index)

    def propagate(
        self, norm_vol: Volume, prompt_index: int, prompt_mask: BinaryMask
    ) -> MaskSequence:
        return propagate(
            norm_vol, prompt_index, prompt_mask, self.propagation_model, self.config
        )

    def assess(
        self, norm_vol: Volume, m_prev: MaskSequence, m_curr: MaskSequence,
        round_prev: int, round_curr: int,
    ) -> QualityScores:
        return assess_quality(
            self.quality_net,
            norm_vol,
            m_prev,
            m_curr,
            batch_size=self.config.quality_batch_size,
            round_prev=round_prev,
            round_curr=round_curr,
            tau=self.config.tau,
        )


class Engine:
    """Session registry plus the round loop over an injectable backend.

    ``scorer_factory`` (session -> object with assess(m_prev, m_curr))
    overrides the backend's learned quality scoring; used for
    ground-truth oracle scoring in evaluation studies.
    """

    def __init__(self, backend, config: EngineConfig | None = None, scorer_factory=None):
        self.backend = backend
        self.config = config or getattr(backend, "config", None) or EngineConfig()
        self.scorer_factory = scorer_factory
        self.sessions: dict[str, Session] = {}

    def create_session(
        self,
        volume: Volume,
        gt: MaskSequence | None = None,
        session_id: str | None = None,
        volume_ref: str = "",
    ) -> Session:
        session = Session(volume, self.config, gt, session_id, volume_ref)
        self.sessions[session.id] = session
        return session

    def get_session(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise NotFoundError(f"no session {session_id!r}") from None

    def run_round(self, session: Session | str, clicks: list[UserClick]) -> Round:
        """Execute one full interaction round and append it to the session."""
        if isinstance(session, str):
            session = self.get_session(session)
        if not clicks:
            raise ValidationError("a round needs at least one click")
        k = clicks[0].slice_index
        if any(c.slice_index != k for c in clicks):
            raise ValidationError("all clicks in a round must target one slice")
        if not 1 <= k <= session.n_slices:
            raise ValidationError(f"slice {k} outside 1..{session.n_slices}")

        prev_seq = session.current_sequence()
        prior = prev_seq[k].pixels if prev_seq is not None else None
        prompt_mask = self.backend.segment_prompt(
            session.norm.slice_at(k), [c.to_click() for c in clicks], prior, k
        )
        raw_seq = self.backend.propagate(session.norm, k, prompt_mask)

        if prev_seq is not None and self.config.mrf_enabled:
            prev_round = len(session.rounds)
            if self.scorer_factory is not None:
                scores = self.scorer_factory(session).assess(prev_seq, raw_seq)
            else:
                scores = self.backend.assess(
                    session.norm, prev_seq, raw_seq, prev_round, prev_round + 1
                )
            result = fuse(prev_seq, raw_seq, scores, tau=self.config.tau, prompt_index=k)
            fused_seq, decisions = result.fused, result.decisions
        else:
            fused_seq, decisions = raw_seq, (CURR,) * session.n_slices

        per_slice = mean = None
        if session.gt is not None:
            per_slice = tuple(
                dice(fused_seq[i], session.gt[i]) for i in range(1, session.n_slices + 1)
            )
            mean = float(np.mean(per_slice))
        round_ = Round(
            index=len(session.rounds) + 1,
            prompt_index=k,
            clicks=tuple(clicks),
            prompt_mask=prompt_mask,
            raw_sequence=raw_seq,
            fused_sequence=fused_seq,
            decisions=decisions,
            per_slice_dice=per_slice,
            mean_dice=mean,
        )
        session.rounds.append(round_)
        return round_


# ---------------------------------------------------------------------------
# Simulated user
# ---------------------------------------------------------------------------

def worst_slice(current: MaskSequence | None, gt: MaskSequence) -> tuple[int, float]:
    """Slice with the lowest Dice against gt; ties resolve to the lowest index."""
    scores = []
    for i in range(1, len(gt) + 1):
        pred = (
            current[i].pixels
            if current is not None
            else np.zeros_like(gt[i].pixels)
        )
        scores.append(dice_score(pred, gt[i].pixels))
    k = int(np.argmin(scores))
    return k + 1, scores[k]


def simulate_round(engine: Engine, session: Session) -> Round | None:
    """Click like a user would: worst slice, most interior error point.

    Returns None once the stored sequence matches gt everywhere (nothing
    left to click).  With clicks_per_round > 1, later clicks within the
    round respond to the refreshed prompt-slice mask.
    """
    if session.gt is None:
        raise ParameterError("simulated interaction requires ground truth")
    current = session.current_sequence()
    k, score = worst_slice(current, session.gt)
    if score >= 1.0:
        return None
    gt_k = session.gt[k].pixels
    mask_k = (
        current[k].pixels if current is not None else np.zeros_like(gt_k)
    )
    prior = current[k].pixels if current is not None else None
    clicks: list[UserClick] = []
    for c in range(engine.config.clicks_per_round):
        click = simulate_next_click(mask_k, gt_k)
        if click is None:
            break
        clicks.append(UserClick(k, click.row, click.col, click.positive))
        if c + 1 < engine.config.clicks_per_round:
            preview = engine.backend.segment_prompt(
                session.norm.slice_at(k), [u.to_click() for u in clicks], prior, k
            )
            mask_k = preview.pixels
    if not clicks:
        return None
    return engine.run_round(session, clicks)


def evaluate(
    backend_factory,
    data: list[tuple[Volume, MaskSequence]],
    rounds_budget: int = 6,
    seed: int = 0,
    mrf: str = "both",
    config: EngineConfig | None = None,
    scorer_factory=None,
) -> dict:
    """Simulated-user evaluation over a suite, with/without fusion.

    ``backend_factory(config)`` builds the backend for each mode so both
    arms run identical checkpoints.  Returns per-round mean Dice per
    mode plus per-volume traces.  A converged volume repeats its final
    Dice for the remaining rounds.
    """
    if mrf not in ("on", "off", "both"):
        raise ParameterError(f"mrf must be 'on', 'off', or 'both', got {mrf!r}")
    for _, gt in data:
        if gt is None:
            raise ParameterError("every evaluation volume needs ground truth")
    config = config or EngineConfig()
    report: dict = {
        "rounds_budget": rounds_budget,
        "seed": seed,
        "n_volumes": len(data),
        "modes": {},
    }
    if rounds_budget == 0:
        return report
    modes = {"both": ("mrf_on", "mrf_off"), "on": ("mrf_on",), "off": ("mrf_off",)}[mrf]
    for mode in modes:
        mode_config = dataclasses.replace(config, mrf_enabled=(mode == "mrf_on"))
        backend = backend_factory(mode_config)
        engine = Engine(backend, mode_config, scorer_factory=scorer_factory)
        per_volume = []
        for vol, gt in data:
            session = engine.create_session(vol, gt)
            trace: list[float] = []
            converged_at = None
            for r in range(rounds_budget):
                round_ = simulate_round(engine, session)
                if round_ is None:
                    converged_at = r
                    break
                trace.append(round_.mean_dice)
            while len(trace) < rounds_budget:
                trace.append(trace[-1] if trace else 1.0)
            per_volume.append(
                {"id": vol.id, "per_round_dice": trace, "converged_at": converged_at}
            )
        per_round = [
            float(np.mean([v["per_round_dice"][r] for v in per_volume]))
            for r in range(rounds_budget)
        ]
        report["modes"][mode] = {
            "per_round_mean_dice": per_round,
            "per_volume": per_volume,
        }
    return report


# ---------------------------------------------------------------------------
# Event-log persistence and replay
# ---------------------------------------------------------------------------

def _sequence_rle(seq: MaskSequence) -> list[list[int]]:
    return [rle_encode(m.pixels) for m in seq.masks]


def session_to_log(session: Session) -> dict:
    """Serializable event log: clicks drive replay, snapshots verify it."""
    return {
        "session_id": session.id,
        "volume_id": session.volume.id,
        "volume_ref": session.volume_ref,
        "dims": list(session.volume.voxels.shape),
        "config": session.config.to_dict(),
        "rounds": [
            {
                "index": r.index,
                "prompt_index": r.prompt_index,
                "clicks": [dataclasses.asdict(c) for c in r.clicks],
                "decisions": list(r.decisions),
                "prompt_rle": rle_encode(r.prompt_mask.pixels),
                "raw_rle": _sequence_rle(r.raw_sequence),
                "fused_rle": _sequence_rle(r.fused_sequence),
                "mean_dice": r.mean_dice,
            }
            for r in session.rounds
        ],
    }


def save_session(session: Session, path: str | Path) -> None:
    Path(path).write_text(json.dumps(session_to_log(session)))


def load_session_log(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def replay_session(
    engine: Engine,
    log: dict,
    volume: Volume,
    gt: MaskSequence | None = None,
) -> Session:
    """Re-run a session's click log; same checkpoints give identical masks."""
    session = engine.create_session(
        volume, gt, session_id=log["session_id"] + "-replay"
    )
    for entry in log["rounds"]:
        clicks = [UserClick(**c) for c in entry["clicks"]]
        engine.run_round(session, clicks)
    return session


def sequences_equal(a: MaskSequence, b: MaskSequence) -> bool:
    return len(a) == len(b) and all(
        np.array_equal(a[i].pixels, b[i].pixels) for i in range(1, len(a) + 1)
    )


def verify_replay(engine: Engine, log: dict, volume: Volume) -> bool:
    """True iff replaying the log reproduces every stored mask bit-exactly."""
    replayed = replay_session(engine, log, volume)
    h, w = volume.slice_shape
    for entry, round_ in zip(log["rounds"], replayed.rounds):
        for rle, mask in zip(entry["fused_rle"], round_.fused_sequence.masks):
            if not np.array_equal(rle_decode(rle, (h, w)), mask.pixels):
                return False
        for rle, mask in zip(entry["raw_rle"], round_.raw_sequence.masks):
            if not np.array_equal(rle_decode(rle, (h, w)), mask.pixels):
                return False
    return True
