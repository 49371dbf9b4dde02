"""HTTP layer: endpoint contracts, error mapping, PNG rendering."""

import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from voliseg.config import EngineConfig
from voliseg.fusion import QualityScores
from voliseg.service import DECISION_COLORS, MASK_COLOR, OVERLAY_ALPHA, create_app
from voliseg.session import Engine
from voliseg.synth import synth_volume
from voliseg.volume import (
    BinaryMask,
    MaskSequence,
    export_masks,
    rle_decode,
    save_volume,
)


class ShiftBackend:
    """Deterministic stub: prompt = gt slice, propagation = gt shifted right.

    Shifting makes raw and fused visibly different once quality scores
    start preferring the previous round.
    """

    def __init__(self, gt: MaskSequence, prefer_prev: bool = False):
        self.gt = gt
        self.prefer_prev = prefer_prev

    def segment_prompt(self, image, clicks, prior, slice_index):
        return BinaryMask(self.gt[slice_index].pixels, slice_index)

    def propagate(self, vol, prompt_index, prompt_mask):
        masks = []
        for i in range(1, len(self.gt) + 1):
            if i == prompt_index:
                masks.append(prompt_mask)
            else:
                masks.append(BinaryMask(np.roll(self.gt[i].pixels, 2, axis=1), i))
        return MaskSequence(tuple(masks))

    def assess(self, vol, m_prev, m_curr, round_prev, round_curr):
        p = np.ones(len(m_prev)) if self.prefer_prev else np.zeros(len(m_prev))
        return QualityScores(p, round_prev=round_prev, round_curr=round_curr)


@pytest.fixture()
def served(tmp_path):
    rng = np.random.default_rng(7)
    vol, gt = synth_volume(rng, n_slices=6, height=24, width=24, kind="ellipsoid", vol_id="svc")
    save_volume(vol, tmp_path / "vol")
    export_masks(gt, tmp_path / "gt.json")
    engine = Engine(ShiftBackend(gt), EngineConfig())
    client = TestClient(create_app(engine))
    return client, tmp_path, vol, gt


def make_session(client, tmp_path, with_gt=True):
    body = {"volume_path": str(tmp_path / "vol")}
    if with_gt:
        body["masks_path"] = str(tmp_path / "gt.json")
    resp = client.post("/sessions", json=body)
    assert resp.status_code == 200
    return resp.json()


def click_body(slice_index, row=12, col=12, polarity="positive"):
    return {"clicks": [{"slice": slice_index, "row": row, "col": col, "polarity": polarity}]}


class TestSessionLifecycle:
    def test_create_reports_dims(self, served):
        client, tmp_path, vol, _ = served
        info = make_session(client, tmp_path)
        assert info["n_slices"] == 6
        assert info["dims"] == list(vol.voxels.shape)
        assert info["has_gt"] is True

    def test_create_without_gt(self, served):
        client, tmp_path, _, _ = served
        info = make_session(client, tmp_path, with_gt=False)
        assert info["has_gt"] is False

    def test_missing_volume_is_400(self, served):
        client, tmp_path, _, _ = served
        resp = client.post("/sessions", json={"volume_path": str(tmp_path / "nothere")})
        assert resp.status_code == 400

    def test_unknown_session_is_404(self, served):
        client, _, _, _ = served
        assert client.get("/sessions/ghost/metrics").status_code == 404
        assert client.post("/sessions/ghost/rounds", json=click_body(1)).status_code == 404


class TestRounds:
    def test_round_summary_fields(self, served):
        client, tmp_path, _, _ = served
        info = make_session(client, tmp_path)
        resp = client.post(f"/sessions/{info['id']}/rounds", json=click_body(3))
        assert resp.status_code == 200
        payload = resp.json()
        assert payload["round"] == 1
        assert payload["prompt_index"] == 3
        assert payload["decisions"] == ["curr"] * 6
        assert payload["mean_dice"] is not None

    def test_bad_polarity_is_422(self, served):
        client, tmp_path, _, _ = served
        info = make_session(client, tmp_path)
        resp = client.post(
            f"/sessions/{info['id']}/rounds", json=click_body(3, polarity="maybe")
        )
        assert resp.status_code == 422

    def test_clicks_across_slices_is_422(self, served):
        client, tmp_path, _, _ = served
        info = make_session(client, tmp_path)
        body = {
            "clicks": [
                {"slice": 1, "row": 2, "col": 2, "polarity": "positive"},
                {"slice": 2, "row": 2, "col": 2, "polarity": "positive"},
            ]
        }
        resp = client.post(f"/sessions/{info['id']}/rounds", json=body)
        assert resp.status_code == 422


class TestMasks:
    def test_rle_roundtrip_matches_engine_state(self, served):
        client, tmp_path, _, gt = served
        info = make_session(client, tmp_path)
        client.post(f"/sessions/{info['id']}/rounds", json=click_body(3))
        resp = client.get(f"/sessions/{info['id']}/masks")
        assert resp.status_code == 200
        payload = resp.json()
        n, h, w = payload["dims"]
        assert (n, h, w) == (6, 24, 24)
        decoded = [rle_decode(runs, (h, w)) for runs in payload["rle"]]
        assert np.array_equal(decoded[2], gt[3].pixels)  # prompt slice exact
        for i in (1, 2, 4, 5, 6):
            assert np.array_equal(decoded[i - 1], np.roll(gt[i].pixels, 2, axis=1))

    def test_raw_vs_fused_kinds(self, served):
        client, tmp_path, _, _ = served
        info = make_session(client, tmp_path)
        client.post(f"/sessions/{info['id']}/rounds", json=click_body(3))
        raw = client.get(f"/sessions/{info['id']}/masks", params={"kind": "raw"}).json()
        fused = client.get(f"/sessions/{info['id']}/masks", params={"kind": "fused"}).json()
        assert raw["rle"] == fused["rle"]  # round one fuses to the raw result
        assert client.get(
            f"/sessions/{info['id']}/masks", params={"kind": "blurry"}
        ).status_code == 422

    def test_round_selection_and_bounds(self, served):
        client, tmp_path, _, _ = served
        info = make_session(client, tmp_path)
        sid = info["id"]
        assert client.get(f"/sessions/{sid}/masks").status_code == 404  # no rounds yet
        client.post(f"/sessions/{sid}/rounds", json=click_body(3))
        client.post(f"/sessions/{sid}/rounds", json=click_body(2))
        one = client.get(f"/sessions/{sid}/masks", params={"round": 1}).json()
        two = client.get(f"/sessions/{sid}/masks", params={"round": 2}).json()
        assert one["round"] == 1 and two["round"] == 2
        assert client.get(f"/sessions/{sid}/masks", params={"round": 9}).status_code == 404


class TestMetricsAndLog:
    def test_metrics_require_gt(self, served):
        client, tmp_path, _, _ = served
        info = make_session(client, tmp_path, with_gt=False)
        assert client.get(f"/sessions/{info['id']}/metrics").status_code == 422

    def test_metrics_trace(self, served):
        client, tmp_path, _, _ = served
        info = make_session(client, tmp_path)
        sid = info["id"]
        client.post(f"/sessions/{sid}/rounds", json=click_body(3))
        client.post(f"/sessions/{sid}/rounds", json=click_body(5))
        payload = client.get(f"/sessions/{sid}/metrics").json()
        assert [r["index"] for r in payload["rounds"]] == [1, 2]
        assert all(len(r["per_slice_dice"]) == 6 for r in payload["rounds"])

    def test_log_contains_replayable_clicks(self, served):
        client, tmp_path, _, _ = served
        info = make_session(client, tmp_path)
        sid = info["id"]
        client.post(f"/sessions/{sid}/rounds", json=click_body(3, row=9, col=11))
        log = client.get(f"/sessions/{sid}/log").json()
        assert log["session_id"] == sid
        assert log["rounds"][0]["clicks"] == [
            {"slice_index": 3, "row": 9, "col": 11, "positive": True}
        ]
        assert log["volume_ref"].endswith("vol")


class TestSlicePNG:
    def read_png(self, resp):
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        return np.asarray(Image.open(io.BytesIO(resp.content)))

    def test_plain_slice_is_grayscale_rgb(self, served):
        client, tmp_path, _, _ = served
        info = make_session(client, tmp_path)
        img = self.read_png(client.get(f"/sessions/{info['id']}/slices/1"))
        assert img.shape == (24, 24, 3)
        assert np.array_equal(img[:, :, 0], img[:, :, 1])
        assert np.array_equal(img[:, :, 0], img[:, :, 2])

    def test_fused_overlay_blends_inside_mask_only(self, served):
        client, tmp_path, _, gt = served
        info = make_session(client, tmp_path)
        sid = info["id"]
        client.post(f"/sessions/{sid}/rounds", json=click_body(3))
        base = self.read_png(client.get(f"/sessions/{sid}/slices/3"))
        over = self.read_png(
            client.get(f"/sessions/{sid}/slices/3", params={"overlay": "fused"})
        )
        inside = gt[3].pixels > 0
        assert np.array_equal(over[~inside], base[~inside])
        expected = ((1 - OVERLAY_ALPHA) * base + OVERLAY_ALPHA * np.array(MASK_COLOR)).astype(
            np.uint8
        )
        assert np.array_equal(over[inside], expected[inside])

    def test_diff_overlay_uses_decision_colors(self, served):
        client, tmp_path, _, gt = served
        info = make_session(client, tmp_path)
        sid = info["id"]
        client.post(f"/sessions/{sid}/rounds", json=click_body(3))
        base = self.read_png(client.get(f"/sessions/{sid}/slices/1"))
        diff = self.read_png(
            client.get(f"/sessions/{sid}/slices/1", params={"overlay": "diff"})
        )
        mask = np.roll(gt[1].pixels, 2, axis=1) > 0  # round-one fused = raw
        color = np.array(DECISION_COLORS["curr"])
        expected = ((1 - OVERLAY_ALPHA) * base + OVERLAY_ALPHA * color).astype(np.uint8)
        assert np.array_equal(diff[mask], expected[mask])

    def test_out_of_range_slice_is_422(self, served):
        client, tmp_path, _, _ = served
        info = make_session(client, tmp_path)
        assert client.get(f"/sessions/{info['id']}/slices/0").status_code == 422
        assert client.get(f"/sessions/{info['id']}/slices/7").status_code == 422

    def test_unknown_overlay_is_422(self, served):
        client, tmp_path, _, _ = served
        info = make_session(client, tmp_path)
        sid = info["id"]
        client.post(f"/sessions/{sid}/rounds", json=click_body(3))
        resp = client.get(f"/sessions/{sid}/slices/1", params={"overlay": "sparkle"})
        assert resp.status_code == 422
