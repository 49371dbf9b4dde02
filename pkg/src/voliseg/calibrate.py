"""Train the toy model set on synthetic data and record baseline metrics.

One calibration run produces a checkpoint bundle (interactor,
propagation model, quality net) plus baseline.json with the evaluation
numbers later runs are regression-tested against.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from .config import EngineConfig
from .corrupt import build_defect_dataset
from .errors import FormatError
from .fusion import QualityNet, train_quality_net
from .interact import Interactor, train_interactor
from .nets import (
    dataset_fingerprint,
    load_checkpoint,
    load_into_module,
    save_checkpoint,
)
from .propagate import ToyPropagationModel, propagate, train_propagation_model
from .session import ModelBackend, evaluate
from .synth import best_prompt_slice, synth_suite
from .volume import MaskSequence, Volume, normalize_intensity

INTERACTOR_CKPT = "interactor.ckpt"
PROPAGATION_CKPT = "propagation.ckpt"
QUALITY_CKPT = "quality.ckpt"
BASELINE_FILE = "baseline.json"


def normalized_suite(
    items: list[tuple[Volume, MaskSequence]], config: EngineConfig
) -> list[tuple[Volume, MaskSequence]]:
    return [
        (normalize_intensity(vol, config.window_lo, config.window_hi), gt)
        for vol, gt in items
    ]


def suite_slices(
    items: list[tuple[Volume, MaskSequence]],
    rng: np.random.Generator,
    per_volume: int = 8,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample nonempty-gt slices (normalized) for 2D training."""
    images, masks = [], []
    for vol, gt in items:
        candidates = [i for i in range(1, vol.n_slices + 1) if gt[i].area > 0]
        take = min(per_volume, len(candidates))
        for i in rng.choice(candidates, size=take, replace=False):
            images.append(vol.slice_at(int(i)).astype(np.float32))
            masks.append(gt[int(i)].pixels.astype(np.float32))
    return np.stack(images), np.stack(masks)


def train_bundle(
    items: list[tuple[Volume, MaskSequence]],
    out_dir: str | Path,
    seed: int = 0,
    config: EngineConfig | None = None,
    interactor_epochs: int = 3,
    propagation_epochs: int = 4,
    quality_epochs: int = 6,
    slices_per_volume: int = 8,
    clips_per_volume: int = 12,
) -> dict:
    """Train all three models on a suite and write the checkpoint bundle."""
    config = config or EngineConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    norm = normalized_suite(items, config)
    rng = np.random.default_rng(seed)
    fingerprint = dataset_fingerprint([vol.voxels for vol, _ in items])
    timings = {}

    t0 = time.time()
    images, masks = suite_slices(norm, rng, per_volume=slices_per_volume)
    interactor = train_interactor(images, masks, seed=seed, epochs=interactor_epochs)
    save_checkpoint(
        out / INTERACTOR_CKPT,
        kind="interactor",
        architecture={"base": 16, "click_radius": config.click_radius},
        module=interactor,
        seed=seed,
        dataset_hash=fingerprint,
    )
    timings["interactor_s"] = round(time.time() - t0, 1)

    t0 = time.time()
    volumes = [vol for vol, _ in norm]
    gts = [gt for _, gt in norm]
    prop = train_propagation_model(
        volumes, gts, seed=seed, epochs=propagation_epochs,
        clips_per_volume=clips_per_volume, config=config,
    )
    save_checkpoint(
        out / PROPAGATION_CKPT,
        kind="propagation",
        architecture={"base": 8, "key_dim": 16, "value_dim": 32, "hidden_dim": 32},
        module=prop,
        seed=seed,
        dataset_hash=fingerprint,
    )
    timings["propagation_s"] = round(time.time() - t0, 1)

    t0 = time.time()
    # Feed the propagation model's own outputs into the comparison pairs so
    # the quality net trains on the distribution it must rank at run time
    # (near-perfect masks differing subtly), not just gross corruptions.
    # Two prompt policies give prediction-vs-prediction pairs, the exact
    # shape of a previous-round vs current-round comparison.
    prop.eval()
    gt_by_id = {vol.id: gt for vol, gt in norm}

    def _weak_prompt_slice(gt: MaskSequence) -> int:
        nonempty = [i for i in range(1, len(gt) + 1) if gt[i].area > 0]
        return nonempty[len(nonempty) // 4] if nonempty else 1

    def _propagated_from(pick):
        def run(vol: Volume) -> MaskSequence:
            gt = gt_by_id[vol.id]
            k = pick(gt)
            return propagate(vol, k, gt[k], prop, config)

        return run

    pairs = build_defect_dataset(
        volumes,
        gts,
        baseline_model=[
            _propagated_from(best_prompt_slice),
            _propagated_from(_weak_prompt_slice),
        ],
        rng=np.random.default_rng(seed + 1),
        pairs_per_slice=3,
    )
    quality = train_quality_net(pairs, seed=seed, epochs=quality_epochs)
    save_checkpoint(
        out / QUALITY_CKPT,
        kind="quality",
        architecture={"base": 16},
        module=quality,
        seed=seed,
        dataset_hash=fingerprint,
    )
    timings["quality_s"] = round(time.time() - t0, 1)
    return timings


def load_backend(ckpt_dir: str | Path, config: EngineConfig | None = None) -> ModelBackend:
    """Rebuild a ModelBackend from a checkpoint bundle directory."""
    config = config or EngineConfig()
    root = Path(ckpt_dir)

    manifest, params = load_checkpoint(root / INTERACTOR_CKPT)
    _expect_kind(manifest, "interactor")
    interactor = Interactor(
        base=manifest["architecture"]["base"],
        click_radius=manifest["architecture"]["click_radius"],
    )
    load_into_module(interactor, params)

    manifest, params = load_checkpoint(root / PROPAGATION_CKPT)
    _expect_kind(manifest, "propagation")
    prop = ToyPropagationModel(**manifest["architecture"])
    load_into_module(prop, params)

    manifest, params = load_checkpoint(root / QUALITY_CKPT)
    _expect_kind(manifest, "quality")
    quality = QualityNet(base=manifest["architecture"]["base"])
    load_into_module(quality, params)

    interactor.eval()
    prop.eval()
    quality.eval()
    return ModelBackend(interactor, prop, quality, config)


def _expect_kind(manifest: dict, kind: str) -> None:
    if manifest.get("kind") != kind:
        raise FormatError(f"checkpoint holds {manifest.get('kind')!r}, expected {kind!r}")


def run_calibration(
    out_dir: str | Path,
    seed: int = 0,
    n_volumes: int = 32,
    rounds: int = 6,
    config: EngineConfig | None = None,
    **train_kwargs,
) -> dict:
    """Full calibration: synth suite -> train bundle -> evaluate -> baseline.json."""
    config = config or EngineConfig()
    out = Path(out_dir)
    items = synth_suite(seed, n_volumes)
    timings = train_bundle(items, out, seed=seed, config=config, **train_kwargs)

    t0 = time.time()
    report = evaluate(
        lambda cfg: load_backend(out, cfg),
        items,
        rounds_budget=rounds,
        seed=seed,
        mrf="both",
        config=config,
    )
    timings["evaluate_s"] = round(time.time() - t0, 1)
    baseline = {
        "seed": seed,
        "n_volumes": n_volumes,
        "rounds": rounds,
        "per_round_mean_dice_mrf_on": report["modes"]["mrf_on"]["per_round_mean_dice"],
        "per_round_mean_dice_mrf_off": report["modes"]["mrf_off"]["per_round_mean_dice"],
        "final_mean_dice_mrf_on": report["modes"]["mrf_on"]["per_round_mean_dice"][-1],
        "final_mean_dice_mrf_off": report["modes"]["mrf_off"]["per_round_mean_dice"][-1],
        "tolerance": 0.01,
        "timings": timings,
    }
    (out / BASELINE_FILE).write_text(json.dumps(baseline, indent=1))
    return baseline


def load_baseline(ckpt_dir: str | Path) -> dict:
    return json.loads((Path(ckpt_dir) / BASELINE_FILE).read_text())
