"""Mask corruption: parameter contracts, output validity, defect datasets."""

import numpy as np
import pytest

from voliseg.corrupt import (
    KIND_ORDER,
    CorruptionSpec,
    TransformKind,
    build_defect_dataset,
    corrupt_mask,
    corrupt_mask_chain,
    load_defect_dataset,
    sample_transformation,
    save_defect_dataset,
)
from voliseg.errors import ParameterError, ValidationError
from voliseg.volume import BinaryMask, MaskSequence, Volume, dice_score


def disk_mask(h=64, w=64, cy=32, cx=32, r=12, slice_index=1):
    yy, xx = np.mgrid[0:h, 0:w]
    return BinaryMask(((yy - cy) ** 2 + (xx - cx) ** 2 <= r**2).astype(np.uint8), slice_index)


class TestCorruptionSpec:
    def test_default_probabilities(self):
        spec = CorruptionSpec()
        assert spec.probs == (0.1, 0.1, 0.3, 0.2, 0.1, 0.2)
        assert len(KIND_ORDER) == 6

    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(ParameterError):
            CorruptionSpec(probs=(0.5, 0.1, 0.1, 0.1, 0.1, 0.2))

    def test_wrong_count_rejected(self):
        with pytest.raises(ParameterError):
            CorruptionSpec(probs=(0.5, 0.5))

    def test_empty_ranges_rejected(self):
        with pytest.raises(ParameterError):
            CorruptionSpec(dilation_iters=(30, 10))
        with pytest.raises(ParameterError):
            CorruptionSpec(boundary_displacement=(0, 5))
        with pytest.raises(ParameterError):
            CorruptionSpec(erosion_iters=0)


class TestSampling:
    def test_kind_order_is_pinned(self):
        assert [k.value for k in KIND_ORDER] == [
            "add_shapes",
            "morphology",
            "boundary_perturb",
            "smooth",
            "remove_shapes",
            "merge_shapes",
        ]

    def test_sampling_respects_zeroed_probabilities(self):
        rng = np.random.default_rng(42)
        spec = CorruptionSpec(probs=(0.0, 0.0, 1.0, 0.0, 0.0, 0.0))
        for _ in range(50):
            assert sample_transformation(rng, spec) is TransformKind.BOUNDARY_PERTURB

    def test_empirical_frequencies_track_probs(self):
        rng = np.random.default_rng(42)
        spec = CorruptionSpec()
        counts = {k: 0 for k in KIND_ORDER}
        n = 3000
        for _ in range(n):
            counts[sample_transformation(rng, spec)] += 1
        for k, p in zip(KIND_ORDER, spec.probs):
            assert counts[k] / n == pytest.approx(p, abs=0.03)


class TestCorruptMask:
    def test_empty_mask_returned_unchanged(self):
        rng = np.random.default_rng(42)
        empty = BinaryMask(np.zeros((32, 32), dtype=np.uint8), 3)
        out = corrupt_mask(empty, rng)
        assert out is empty

    def test_output_is_binary_same_shape(self):
        rng = np.random.default_rng(42)
        gt = disk_mask()
        for _ in range(60):
            out = corrupt_mask(gt, rng)
            assert out.pixels.shape == gt.pixels.shape
            assert out.pixels.dtype == np.uint8
            assert set(np.unique(out.pixels)) <= {0, 1}
            assert out.slice_index == gt.slice_index

    def test_seeded_replay_is_identical(self):
        gt = disk_mask()
        a = corrupt_mask(gt, np.random.default_rng(17))
        b = corrupt_mask(gt, np.random.default_rng(17))
        assert a.same_pixels(b)

    def test_usually_differs_from_input(self):
        rng = np.random.default_rng(42)
        gt = disk_mask()
        changed = sum(
            not corrupt_mask(gt, rng).same_pixels(gt) for _ in range(50)
        )
        assert changed >= 45

    def test_chain_severity_lowers_dice(self):
        rng = np.random.default_rng(42)
        gt = disk_mask()
        one = np.mean(
            [dice_score(corrupt_mask_chain(gt, rng, n=1).pixels, gt.pixels) for _ in range(30)]
        )
        three = np.mean(
            [dice_score(corrupt_mask_chain(gt, rng, n=3).pixels, gt.pixels) for _ in range(30)]
        )
        assert three < one


class TestTransformations:
    def run_kind(self, kind, gt, seed=0, **spec_kw):
        probs = [0.0] * 6
        probs[list(KIND_ORDER).index(kind)] = 1.0
        spec = CorruptionSpec(probs=tuple(probs), **spec_kw)
        return corrupt_mask(gt, np.random.default_rng(seed), spec)

    def test_add_shapes_only_grows(self):
        gt = disk_mask()
        grew = 0
        for seed in range(10):
            out = self.run_kind(TransformKind.ADD_SHAPES, gt, seed)
            assert (out.pixels >= gt.pixels).all()
            grew += out.area > gt.area
        # A shape can land fully inside the mask, but rarely all of them.
        assert grew >= 7

    def test_merge_shapes_only_grows(self):
        gt = disk_mask()
        for seed in range(10):
            out = self.run_kind(TransformKind.MERGE_SHAPES, gt, seed)
            assert (out.pixels >= gt.pixels).all()

    def test_remove_shapes_only_shrinks(self):
        gt = disk_mask()
        for seed in range(10):
            out = self.run_kind(TransformKind.REMOVE_SHAPES, gt, seed)
            assert (out.pixels <= gt.pixels).all()
            assert out.area < gt.area

    def test_remove_shapes_drops_a_whole_component(self):
        two = disk_mask(cy=20, cx=20, r=8).pixels | disk_mask(cy=48, cx=48, r=8).pixels
        gt = BinaryMask(two, 1)
        out = self.run_kind(TransformKind.REMOVE_SHAPES, gt, 1)
        kept_first = (out.pixels & disk_mask(cy=20, cx=20, r=8).pixels).sum() > 0
        kept_second = (out.pixels & disk_mask(cy=48, cx=48, r=8).pixels).sum() > 0
        assert kept_first != kept_second

    def test_morphology_changes_area_substantially(self):
        # Dilation uses 10..30 iterations, erosion exactly 10; either way a
        # 12 px radius disk changes by a wide margin.
        gt = disk_mask(h=96, w=96, cy=48, cx=48)
        for seed in range(10):
            out = self.run_kind(TransformKind.MORPHOLOGY, gt, seed)
            grew, shrank = out.area > gt.area, out.area < gt.area
            assert grew or shrank
            if grew:
                assert (out.pixels >= gt.pixels).all()
            else:
                # 10 erosions of the 3x3 cross remove exactly 10 boundary rings.
                assert out.area < gt.area * 0.25

    def test_boundary_perturb_moves_the_contour(self):
        gt = disk_mask()
        for seed in range(10):
            out = self.run_kind(TransformKind.BOUNDARY_PERTURB, gt, seed)
            assert not out.same_pixels(gt)
            assert 0.0 < dice_score(out.pixels, gt.pixels) < 1.0

    def test_smooth_keeps_mask_close(self):
        gt = disk_mask()
        out = self.run_kind(TransformKind.SMOOTH, gt, 0)
        assert dice_score(out.pixels, gt.pixels) > 0.9


class TestDefectDataset:
    def make_inputs(self, n=2):
        rng = np.random.default_rng(42)
        volumes, gts = [], []
        for v in range(n):
            arr = rng.normal(size=(4, 32, 32)).astype(np.float32)
            masks = [disk_mask(32, 32, 16, 16, 6 + i, i + 1) for i in range(4)]
            volumes.append(Volume(arr, id=f"v{v}"))
            gts.append(MaskSequence(tuple(masks)))
        return volumes, gts

    def test_labels_match_dice_ordering(self):
        volumes, gts = self.make_inputs(n=1)
        pairs = build_defect_dataset(volumes, gts, rng=np.random.default_rng(0))
        assert pairs
        for _, a, b, label in pairs:
            gt = gts[0][a.slice_index]
            da, db = dice_score(a.pixels, gt.pixels), dice_score(b.pixels, gt.pixels)
            # Ties (including gt vs gt draws) get label 0.
            assert label == int(da > db)

    def test_length_mismatch_rejected(self):
        volumes, gts = self.make_inputs()
        with pytest.raises(ValidationError):
            build_defect_dataset(volumes, gts[:1])

    def test_save_load_roundtrip(self, tmp_path):
        volumes, gts = self.make_inputs(n=1)
        pairs = build_defect_dataset(volumes, gts, rng=np.random.default_rng(0))
        save_defect_dataset(pairs, tmp_path / "defects")
        back = load_defect_dataset(tmp_path / "defects")
        assert len(back) == len(pairs)
        for (im0, a0, b0, l0), (im1, a1, b1, l1) in zip(pairs, back):
            np.testing.assert_allclose(im0, im1, atol=1e-6)
            assert a0.same_pixels(a1)
            assert b0.same_pixels(b1)
            assert l0 == l1
