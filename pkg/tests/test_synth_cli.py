"""Synthetic data generator and command-line entry points."""

import json

import numpy as np
from click.testing import CliRunner

from voliseg.cli import main
from voliseg.synth import (
    best_prompt_slice,
    load_suite,
    save_suite,
    synth_suite,
    synth_volume,
)


class TestSynthVolume:
    def test_shapes_and_dtypes(self):
        rng = np.random.default_rng(0)
        vol, gt = synth_volume(rng, n_slices=12, height=40, width=48, kind="ellipsoid", vol_id="a")
        assert vol.voxels.shape == (12, 40, 48)
        assert vol.voxels.dtype == np.int16
        assert len(gt) == 12
        assert gt[1].pixels.shape == (40, 48)

    def test_interior_slices_have_foreground(self):
        rng = np.random.default_rng(1)
        _, gt = synth_volume(rng, n_slices=16, height=48, width=48, kind="two_lobes", vol_id="b")
        mid = len(gt) // 2
        assert gt[mid].pixels.sum() > 0

    def test_deterministic_given_rng_state(self):
        a = synth_volume(np.random.default_rng(5), 8, 32, 32, "ellipsoid", "x")
        b = synth_volume(np.random.default_rng(5), 8, 32, 32, "ellipsoid", "x")
        assert np.array_equal(a[0].voxels, b[0].voxels)
        assert all(
            np.array_equal(a[1][i].pixels, b[1][i].pixels) for i in range(1, 9)
        )

    def test_foreground_brighter_than_background(self):
        rng = np.random.default_rng(2)
        vol, gt = synth_volume(rng, 10, 40, 40, "ellipsoid", "c")
        mid = 5
        fg = gt[mid].pixels > 0
        if fg.any():
            sl = vol.voxels[mid - 1]
            assert sl[fg].mean() > sl[~fg].mean()

    def test_best_prompt_slice_maximizes_area(self):
        rng = np.random.default_rng(3)
        _, gt = synth_volume(rng, 14, 40, 40, "ellipsoid", "d")
        k = best_prompt_slice(gt)
        areas = [int(gt[i].pixels.sum()) for i in range(1, 15)]
        assert areas[k - 1] == max(areas)


class TestSuite:
    def test_ids_unique_and_seed_scoped(self):
        items = synth_suite(seed=0, n_volumes=4, n_slices_range=(8, 10), height=32, width=32)
        assert len(items) == 4
        ids = [vol.id for vol, _ in items]
        assert len(set(ids)) == 4
        assert all(i.startswith("synth-0-") for i in ids)
        again = synth_suite(seed=0, n_volumes=4, n_slices_range=(8, 10), height=32, width=32)
        assert np.array_equal(items[2][0].voxels, again[2][0].voxels)

    def test_save_load_roundtrip(self, tmp_path):
        items = synth_suite(seed=1, n_volumes=2, n_slices_range=(6, 8), height=24, width=24)
        save_suite(items, tmp_path / "suite")
        back = load_suite(tmp_path / "suite")
        assert len(back) == 2
        for (vol, gt), (vol2, gt2) in zip(items, back):
            assert vol.id == vol2.id
            assert np.array_equal(vol.voxels, vol2.voxels)
            assert all(
                np.array_equal(gt[i].pixels, gt2[i].pixels)
                for i in range(1, len(gt) + 1)
            )


class TestCli:
    def test_help_lists_commands(self):
        result = CliRunner().invoke(main, ["--help"])
        assert result.exit_code == 0
        for cmd in ("synth-data", "train-2d", "train-3d", "evaluate", "calibrate", "serve"):
            assert cmd in result.output

    def test_synth_data_writes_suite(self, tmp_path):
        out = tmp_path / "data"
        result = CliRunner().invoke(
            main,
            [
                "synth-data", "--out", str(out), "--n-volumes", "2", "--seed", "3",
                "--slices-min", "6", "--slices-max", "8", "--size", "24",
            ],
        )
        assert result.exit_code == 0, result.output
        manifest = json.loads((out / "suite.json").read_text())
        assert len(manifest["volumes"]) == 2
        items = load_suite(out)
        assert items[0][0].voxels.shape[1:] == (24, 24)
