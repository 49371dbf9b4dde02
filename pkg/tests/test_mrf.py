"""Fusion rule, objective optimality, quality scoring, trainability."""

import itertools

import numpy as np
import pytest
import torch

from voliseg.corrupt import corrupt_mask_chain
from voliseg.errors import ParameterError, ValidationError
from voliseg.fusion import (
    CURR,
    PREV,
    FusionResult,
    OracleQualityScorer,
    QualityNet,
    QualityScores,
    assess_quality,
    fuse,
    objective_value,
    solve_fusion_objective,
    train_quality_net,
)
from voliseg.volume import BinaryMask, MaskSequence, dice_score


def random_sequences(rng, n, h=6, w=6):
    prev = MaskSequence.from_array((rng.random((n, h, w)) < 0.5).astype(np.uint8))
    curr = MaskSequence.from_array((rng.random((n, h, w)) < 0.5).astype(np.uint8))
    return prev, curr


class TestQualityScores:
    def test_probabilities_bounded(self):
        with pytest.raises(ValidationError):
            QualityScores(np.array([0.5, 1.2]))
        with pytest.raises(ValidationError):
            QualityScores(np.array([-0.1]))

    def test_tau_open_interval(self):
        with pytest.raises(ParameterError):
            QualityScores(np.array([0.5]), tau=1.0)
        with pytest.raises(ParameterError):
            QualityScores(np.array([0.5]), tau=0.0)


class TestFuse:
    def test_saturated_high_takes_prev_everywhere_but_prompt(self):
        rng = np.random.default_rng(42)
        prev, curr = random_sequences(rng, 5)
        result = fuse(prev, curr, QualityScores(np.ones(5)), tau=0.5, prompt_index=3)
        for i in range(1, 6):
            if i == 3:
                assert result.decisions[i - 1] == CURR
                assert result.fused[i].same_pixels(curr[i])
            else:
                assert result.decisions[i - 1] == PREV
                assert result.fused[i].same_pixels(prev[i])

    def test_saturated_low_takes_curr_everywhere(self):
        rng = np.random.default_rng(1)
        prev, curr = random_sequences(rng, 4)
        result = fuse(prev, curr, QualityScores(np.zeros(4)), tau=0.5, prompt_index=2)
        assert all(d == CURR for d in result.decisions)

    def test_tie_goes_to_curr(self):
        rng = np.random.default_rng(2)
        prev, curr = random_sequences(rng, 3)
        result = fuse(prev, curr, QualityScores(np.full(3, 0.5)), tau=0.5, prompt_index=None)
        assert all(d == CURR for d in result.decisions)

    def test_selection_property_no_blending(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = int(rng.integers(1, 8))
            prev, curr = random_sequences(rng, n)
            scores = QualityScores(rng.random(n))
            result = fuse(prev, curr, scores, prompt_index=int(rng.integers(1, n + 1)))
            for i in range(1, n + 1):
                named = prev[i] if result.decisions[i - 1] == PREV else curr[i]
                assert result.fused[i].same_pixels(named)

    def test_length_mismatch_rejected(self):
        rng = np.random.default_rng(4)
        prev, curr = random_sequences(rng, 4)
        with pytest.raises(ValidationError):
            fuse(prev, curr, QualityScores(np.zeros(3)))

    def test_identical_inputs_fuse_to_same_masks(self):
        rng = np.random.default_rng(5)
        prev, _ = random_sequences(rng, 4)
        scores = QualityScores(rng.random(4))
        result = fuse(prev, prev, scores, prompt_index=1)
        for i in range(1, 5):
            assert result.fused[i].same_pixels(prev[i])


class TestObjective:
    def brute_force(self, p):
        best_value, best_sel = -1.0, None
        for sel in itertools.product((PREV, CURR), repeat=len(p)):
            value = sum(p[i] if d == PREV else 1.0 - p[i] for i, d in enumerate(sel))
            if value > best_value:
                best_value, best_sel = value, sel
        return best_value, best_sel

    def test_greedy_matches_enumeration(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            n = int(rng.integers(1, 9))
            prev, curr = random_sequences(rng, n)
            scores = QualityScores(rng.random(n))
            result = solve_fusion_objective(prev, curr, scores)
            got = objective_value(scores, result.decisions)
            best, _ = self.brute_force(scores.p)
            assert got == pytest.approx(best, abs=1e-12)

    def test_single_slice_hand_example(self):
        prev, curr = random_sequences(np.random.default_rng(0), 1)
        result = solve_fusion_objective(prev, curr, QualityScores(np.array([0.9])))
        assert result.decisions == (PREV,)
        assert objective_value(QualityScores(np.array([0.9])), result.decisions) == pytest.approx(0.9)

    def test_exact_half_ties_to_curr(self):
        prev, curr = random_sequences(np.random.default_rng(0), 3)
        scores = QualityScores(np.array([0.5, 0.5, 0.5]))
        result = solve_fusion_objective(prev, curr, scores)
        assert result.decisions == (CURR, CURR, CURR)
        # Both choices optimal at 0.5: value must still be maximal.
        assert objective_value(scores, result.decisions) == pytest.approx(1.5)


class TestOracleFusion:
    def test_fused_dice_is_per_slice_max(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            n = int(rng.integers(2, 8))
            gt = MaskSequence.from_array((rng.random((n, 8, 8)) < 0.5).astype(np.uint8))
            prev, curr = random_sequences(rng, n, 8, 8)
            scorer = OracleQualityScorer(gt)
            result = fuse(prev, curr, scorer.assess(prev, curr), tau=0.5, prompt_index=None)
            for i in range(1, n + 1):
                got = dice_score(result.fused[i].pixels, gt[i].pixels)
                best = max(
                    dice_score(prev[i].pixels, gt[i].pixels),
                    dice_score(curr[i].pixels, gt[i].pixels),
                )
                assert got == pytest.approx(best)

    def test_mean_dice_never_decreases(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            n = 6
            gt = MaskSequence.from_array((rng.random((n, 8, 8)) < 0.5).astype(np.uint8))
            prev, curr = random_sequences(rng, n, 8, 8)
            scorer = OracleQualityScorer(gt)
            fused = fuse(prev, curr, scorer.assess(prev, curr), prompt_index=None).fused

            def mean_dice(seq):
                return np.mean([dice_score(seq[i].pixels, gt[i].pixels) for i in range(1, n + 1)])

            assert mean_dice(fused) >= mean_dice(prev) - 1e-12
            assert mean_dice(fused) >= mean_dice(curr) - 1e-12


def disk(h, w, cy, cx, r):
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) ** 2 + (xx - cx) ** 2 <= r**2).astype(np.uint8)


class TestAssessQuality:
    def test_batch_invariance(self):
        torch.manual_seed(0)
        net = QualityNet(base=8)
        rng = np.random.default_rng(42)
        slices = rng.normal(size=(9, 32, 32)).astype(np.float32)
        prev, curr = random_sequences(rng, 9, 32, 32)
        p1 = assess_quality(net, slices, prev, curr, batch_size=1).p
        p8 = assess_quality(net, slices, prev, curr, batch_size=8).p
        p9 = assess_quality(net, slices, prev, curr, batch_size=9).p
        np.testing.assert_allclose(p1, p8, atol=1e-6)
        np.testing.assert_allclose(p1, p9, atol=1e-6)

    def test_scores_in_unit_interval(self):
        torch.manual_seed(1)
        net = QualityNet(base=8)
        rng = np.random.default_rng(1)
        slices = rng.normal(size=(4, 32, 32)).astype(np.float32)
        prev, curr = random_sequences(rng, 4, 32, 32)
        scores = assess_quality(net, slices, prev, curr)
        assert (scores.p >= 0).all() and (scores.p <= 1).all()

    def test_length_mismatch_rejected(self):
        net = QualityNet(base=8)
        rng = np.random.default_rng(2)
        slices = rng.normal(size=(4, 32, 32)).astype(np.float32)
        prev, curr = random_sequences(rng, 3, 32, 32)
        with pytest.raises(ValidationError):
            assess_quality(net, slices, prev, curr)

    def test_bad_batch_size_rejected(self):
        net = QualityNet(base=8)
        rng = np.random.default_rng(3)
        slices = rng.normal(size=(2, 32, 32)).astype(np.float32)
        prev, curr = random_sequences(rng, 2, 32, 32)
        with pytest.raises(ParameterError):
            assess_quality(net, slices, prev, curr, batch_size=0)


class TestTrainQualityNet:
    def test_empty_dataset_rejected(self):
        with pytest.raises(ParameterError):
            train_quality_net([])

    def test_single_pair_loss_decreases(self):
        torch.manual_seed(0)
        image = np.zeros((32, 32), dtype=np.float32)
        a = BinaryMask(disk(32, 32, 16, 16, 8), 1)
        b = BinaryMask(np.zeros((32, 32), dtype=np.uint8), 1)
        pair = [(image, a, b, 1)]
        net = QualityNet(base=8)
        x = torch.from_numpy(
            np.stack([np.stack([image, a.pixels.astype(np.float32), b.pixels.astype(np.float32)])])
        )
        y = torch.ones(1)
        loss_fn = torch.nn.BCEWithLogitsLoss()
        with torch.no_grad():
            before = float(loss_fn(net(x), y))
        trained = train_quality_net(pair, seed=0, epochs=10, base=8)
        with torch.no_grad():
            after = float(loss_fn(trained(x), y))
        assert after < before

    def test_separable_pairs_high_sign_accuracy(self):
        # Bright disk delineates gt; heavy corruption is visibly off.
        rng = np.random.default_rng(42)
        pairs = []
        for _ in range(60):
            cy, cx, r = rng.integers(10, 22, size=3)
            gt = BinaryMask(disk(32, 32, cy, cx, max(int(r) // 2, 5)), 1)
            image = gt.pixels * 0.8 + rng.normal(0, 0.05, (32, 32)).astype(np.float32)
            bad = corrupt_mask_chain(gt, rng, n=3)
            if dice_score(bad.pixels, gt.pixels) > 0.75:
                continue
            pairs.append((image.astype(np.float32), gt, bad, 1))
        train, held = pairs[: len(pairs) // 2], pairs[len(pairs) // 2 :]
        net = train_quality_net(train, seed=0, epochs=6, base=8)
        correct = 0
        for image, a, b, _ in held:
            prev = MaskSequence((BinaryMask(a.pixels, 1),))
            curr = MaskSequence((BinaryMask(b.pixels, 1),))
            p = assess_quality(net, image[None], prev, curr).p[0]
            correct += p > 0.5
        assert correct / len(held) > 0.95


class TestFusionResult:
    def test_decision_vocabulary_enforced(self):
        rng = np.random.default_rng(0)
        prev, _ = random_sequences(rng, 2)
        with pytest.raises(ValidationError):
            FusionResult(prev, ("prev", "bogus"))

    def test_one_decision_per_slice(self):
        rng = np.random.default_rng(0)
        prev, _ = random_sequences(rng, 2)
        with pytest.raises(ValidationError):
            FusionResult(prev, ("prev",))
