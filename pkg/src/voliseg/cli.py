"""Command-line entry points: data generation, training, evaluation, serving."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .config import EngineConfig, load_config


def _config_from(path: str | None) -> EngineConfig:
    return load_config(path) if path else EngineConfig()


@click.group()
def main() -> None:
    """Interactive 3D segmentation: clicks in, full-volume masks out."""


@main.command("synth-data")
@click.option("--out", required=True, type=click.Path())
@click.option("--n-volumes", default=32, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--slices-min", default=32, show_default=True)
@click.option("--slices-max", default=64, show_default=True)
@click.option("--size", default=64, show_default=True, help="Slice height/width.")
def synth_data(out: str, n_volumes: int, seed: int, slices_min: int, slices_max: int, size: int):
    """Generate the synthetic volume suite with ground truth."""
    from .synth import save_suite, synth_suite

    items = synth_suite(seed, n_volumes, (slices_min, slices_max), size, size)
    save_suite(items, out)
    click.echo(f"wrote {n_volumes} volumes to {out}")


@main.command("train-2d")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--epochs", default=3, show_default=True)
@click.option("--slices-per-volume", default=8, show_default=True)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
def train_2d(data: str, out: str, seed: int, epochs: int, slices_per_volume: int, config_path):
    """Train the click-driven 2D refinement model."""
    import numpy as np

    from .calibrate import normalized_suite, suite_slices
    from .interact import train_interactor
    from .nets import dataset_fingerprint, save_checkpoint
    from .synth import load_suite

    config = _config_from(config_path)
    items = load_suite(data)
    images, masks = suite_slices(
        normalized_suite(items, config), np.random.default_rng(seed), slices_per_volume
    )
    model = train_interactor(images, masks, seed=seed, epochs=epochs)
    save_checkpoint(
        out, kind="interactor",
        architecture={"base": 16, "click_radius": config.click_radius},
        module=model, seed=seed,
        dataset_hash=dataset_fingerprint([vol.voxels for vol, _ in items]),
    )
    click.echo(f"wrote {out}")


@main.command("build-defects")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--pairs-per-slice", default=2, show_default=True)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
def build_defects(data: str, out: str, seed: int, pairs_per_slice: int, config_path):
    """Corrupt ground-truth masks into a labeled quality-comparison dataset."""
    import numpy as np

    from .calibrate import normalized_suite
    from .corrupt import build_defect_dataset, save_defect_dataset
    from .synth import load_suite

    config = _config_from(config_path)
    items = normalized_suite(load_suite(data), config)
    pairs = build_defect_dataset(
        [v for v, _ in items], [g for _, g in items],
        rng=np.random.default_rng(seed), pairs_per_slice=pairs_per_slice,
    )
    save_defect_dataset(pairs, out)
    click.echo(f"wrote {len(pairs)} pairs to {out}")


@main.command("train-quality")
@click.option("--defects", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--epochs", default=3, show_default=True)
def train_quality(defects: str, out: str, seed: int, epochs: int):
    """Train the per-slice mask quality classifier."""
    from .corrupt import load_defect_dataset
    from .fusion import train_quality_net
    from .nets import save_checkpoint

    pairs = load_defect_dataset(defects)
    net = train_quality_net(pairs, seed=seed, epochs=epochs)
    save_checkpoint(
        out, kind="quality", architecture={"base": 16}, module=net,
        seed=seed, dataset_hash=f"defects:{len(pairs)}",
    )
    click.echo(f"wrote {out}")


@main.command("train-3d")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--epochs", default=2, show_default=True)
@click.option("--clips-per-volume", default=8, show_default=True)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
def train_3d(data: str, out: str, seed: int, epochs: int, clips_per_volume: int, config_path):
    """Train the memory-based propagation model."""
    from .calibrate import normalized_suite
    from .nets import dataset_fingerprint, save_checkpoint
    from .propagate import train_propagation_model
    from .synth import load_suite

    config = _config_from(config_path)
    items = normalized_suite(load_suite(data), config)
    model = train_propagation_model(
        [v for v, _ in items], [g for _, g in items],
        seed=seed, epochs=epochs, clips_per_volume=clips_per_volume, config=config,
    )
    save_checkpoint(
        out, kind="propagation",
        architecture={"base": 8, "key_dim": 16, "value_dim": 32, "hidden_dim": 32},
        module=model, seed=seed,
        dataset_hash=dataset_fingerprint([v.voxels for v, _ in items]),
    )
    click.echo(f"wrote {out}")


@main.command("evaluate")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--checkpoints", required=True, type=click.Path(exists=True))
@click.option("--rounds", default=6, show_default=True)
@click.option("--mrf", default="both", type=click.Choice(["on", "off", "both"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--report", "report_path", default=None, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
def evaluate_cmd(data, checkpoints, rounds, mrf, seed, report_path, config_path):
    """Run the simulated-user evaluation and print per-round mean Dice."""
    from .calibrate import load_backend
    from .session import evaluate
    from .synth import load_suite

    config = _config_from(config_path)
    items = load_suite(data)
    report = evaluate(
        lambda cfg: load_backend(checkpoints, cfg), items,
        rounds_budget=rounds, seed=seed, mrf=mrf, config=config,
    )
    for mode, payload in report["modes"].items():
        trace = ", ".join(f"{d:.4f}" for d in payload["per_round_mean_dice"])
        click.echo(f"{mode}: [{trace}]")
    if report_path:
        Path(report_path).write_text(json.dumps(report, indent=1))
        click.echo(f"wrote {report_path}")


@main.command("calibrate")
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--n-volumes", default=32, show_default=True)
@click.option("--rounds", default=6, show_default=True)
def calibrate_cmd(out: str, seed: int, n_volumes: int, rounds: int):
    """Train the full toy bundle and record the regression baseline."""
    from .calibrate import run_calibration

    baseline = run_calibration(out, seed=seed, n_volumes=n_volumes, rounds=rounds)
    click.echo(json.dumps(baseline, indent=1))


@main.command("serve")
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--checkpoints", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
def serve(port: int, host: str, checkpoints: str, config_path):
    """Serve the session API over HTTP."""
    import uvicorn

    from .calibrate import load_backend
    from .service import create_app
    from .session import Engine

    config = _config_from(config_path)
    backend = load_backend(checkpoints, config)
    app = create_app(Engine(backend, config))
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
