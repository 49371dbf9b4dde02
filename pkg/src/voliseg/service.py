"""HTTP/JSON service exposing sessions, rounds, masks, metrics, and slices.

Thin layer over ``session.Engine``: all state lives in the engine's
session registry.  Rounds within one session are serialized by a
per-session lock; different sessions proceed concurrently.
"""

from __future__ import annotations

import io
import threading
from collections import defaultdict

import numpy as np
from fastapi import FastAPI, Response
from pydantic import BaseModel

from .errors import (
    FormatError,
    NotFoundError,
    ParameterError,
    ValidationError,
    VolisegError,
)
from .session import Engine, Session, UserClick, session_to_log
from .volume import MaskSequence, import_masks, load_volume, rle_encode

OVERLAY_ALPHA = 0.4
MASK_COLOR = (80, 220, 80)
DECISION_COLORS = {"prev": (235, 140, 30), "curr": (60, 170, 235)}


class ClickIn(BaseModel):
    slice: int
    row: int
    col: int
    polarity: str  # "positive" | "negative"


class RoundIn(BaseModel):
    clicks: list[ClickIn]


class SessionIn(BaseModel):
    volume_path: str
    masks_path: str | None = None  # ground truth enables the metrics endpoint
    session_id: str | None = None


def _to_user_clicks(clicks: list[ClickIn]) -> list[UserClick]:
    out = []
    for c in clicks:
        if c.polarity not in ("positive", "negative"):
            raise ValidationError(f"polarity must be positive/negative, got {c.polarity!r}")
        out.append(UserClick(c.slice, c.row, c.col, c.polarity == "positive"))
    return out


def _round_summary(session: Session, round_) -> dict:
    return {
        "session_id": session.id,
        "round": round_.index,
        "prompt_index": round_.prompt_index,
        "n_slices": session.n_slices,
        "decisions": list(round_.decisions),
        "mean_dice": round_.mean_dice,
        "per_slice_dice": list(round_.per_slice_dice) if round_.per_slice_dice else None,
    }


def _slice_png(session: Session, index: int, overlay: str, round_index: int | None) -> bytes:
    from PIL import Image

    gray = session.norm.slice_at(index)
    rgb = np.repeat((gray * 255.0).astype(np.uint8)[:, :, None], 3, axis=2)
    if overlay != "none" and session.rounds:
        round_ = session.rounds[(round_index or len(session.rounds)) - 1]
        if overlay == "raw":
            mask, color = round_.raw_sequence[index].pixels, MASK_COLOR
        elif overlay == "fused":
            mask, color = round_.fused_sequence[index].pixels, MASK_COLOR
        elif overlay == "diff":
            decision = round_.decisions[index - 1]
            mask, color = round_.fused_sequence[index].pixels, DECISION_COLORS[decision]
        else:
            raise ValidationError(f"unknown overlay {overlay!r}")
        blend = (1 - OVERLAY_ALPHA) * rgb + OVERLAY_ALPHA * np.array(color)
        rgb = np.where(mask[:, :, None] > 0, blend.astype(np.uint8), rgb)
    buf = io.BytesIO()
    Image.fromarray(rgb).save(buf, format="PNG")
    return buf.getvalue()


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="voliseg")
    locks: dict[str, threading.Lock] = defaultdict(threading.Lock)

    @app.exception_handler(VolisegError)
    async def _voliseg_error(request, exc: VolisegError):
        from fastapi.responses import JSONResponse

        status = 404 if isinstance(exc, NotFoundError) else (
            400 if isinstance(exc, FormatError) else 422
        )
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    @app.post("/sessions")
    def create_session(body: SessionIn) -> dict:
        volume = load_volume(body.volume_path)
        gt: MaskSequence | None = None
        if body.masks_path:
            gt = import_masks(body.masks_path)
        session = engine.create_session(
            volume, gt, session_id=body.session_id, volume_ref=body.volume_path
        )
        return {
            "id": session.id,
            "n_slices": session.n_slices,
            "dims": list(volume.voxels.shape),
            "has_gt": gt is not None,
        }

    @app.post("/sessions/{session_id}/rounds")
    def post_round(session_id: str, body: RoundIn) -> dict:
        session = engine.get_session(session_id)
        with locks[session_id]:
            round_ = engine.run_round(session, _to_user_clicks(body.clicks))
        return _round_summary(session, round_)

    @app.get("/sessions/{session_id}/masks")
    def get_masks(session_id: str, round: int | None = None, kind: str = "fused") -> dict:
        session = engine.get_session(session_id)
        if not session.rounds:
            raise NotFoundError("session has no rounds yet")
        if round is not None and not 1 <= round <= len(session.rounds):
            raise NotFoundError(f"no round {round}")
        round_ = session.rounds[(round or len(session.rounds)) - 1]
        if kind == "fused":
            seq = round_.fused_sequence
        elif kind == "raw":
            seq = round_.raw_sequence
        else:
            raise ValidationError(f"kind must be raw or fused, got {kind!r}")
        h, w = session.volume.slice_shape
        return {
            "round": round_.index,
            "dims": [session.n_slices, h, w],
            "rle": [rle_encode(m.pixels) for m in seq.masks],
            "decisions": list(round_.decisions),
        }

    @app.get("/sessions/{session_id}/metrics")
    def get_metrics(session_id: str) -> dict:
        session = engine.get_session(session_id)
        if session.gt is None:
            raise ParameterError("session has no ground truth; metrics unavailable")
        return {
            "session_id": session.id,
            "rounds": [
                {
                    "index": r.index,
                    "prompt_index": r.prompt_index,
                    "mean_dice": r.mean_dice,
                    "per_slice_dice": list(r.per_slice_dice),
                    "decisions": list(r.decisions),
                }
                for r in session.rounds
            ],
        }

    @app.get("/sessions/{session_id}/log")
    def get_log(session_id: str) -> dict:
        return session_to_log(engine.get_session(session_id))

    @app.get("/sessions/{session_id}/slices/{index}")
    def get_slice(
        session_id: str, index: int, overlay: str = "none", round: int | None = None
    ) -> Response:
        session = engine.get_session(session_id)
        if not 1 <= index <= session.n_slices:
            raise ValidationError(f"slice {index} outside 1..{session.n_slices}")
        png = _slice_png(session, index, overlay, round)
        return Response(content=png, media_type="image/png")

    return app
