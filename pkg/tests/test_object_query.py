"""
Tests for object query generation, instance prediction and set matching
"""

import numpy as np
import pytest

from src.core.errors import ArgumentError, CapacityError, ConfigError
from src.core.image_io import Image
from src.core.object_query import (DecoderLayer, InstancePrediction, ObjectQueryGenerator, PixelDecoder,
                                   QuerySet, attention_mask_from_logits, decoder_layer, dice_score,
                                   hungarian_match, instance_losses, mask_logits, matching_cost,
                                   pixel_decode, predict_instance_masks, set_prediction_losses)
from src.core.weights import WeightStore
from tests.oracles import brute_force_assignment, matmul_loops

CHANNELS = (4, 4, 8, 8)


def _pyramid(rng, size=32):
    return [rng.standard_normal((size >> (i + 1), size >> (i + 1), c)) for i, c in enumerate(CHANNELS)]


def _generator(C=8, N=4, L=3, seed=0):
    return ObjectQueryGenerator(WeightStore(seed), CHANNELS, C, N, L)


class TestPixelDecoder:

    def test_scales_and_embedding(self, rng):
        decoder = PixelDecoder(WeightStore(0), CHANNELS, 8)
        out = pixel_decode(decoder, _pyramid(rng))
        assert [s.shape for s in out.multiscale] == [(4, 4, 8), (8, 8, 8), (16, 16, 8)]
        assert out.per_pixel_embed.shape == (16, 16, 8)

    def test_rejects_bad_pyramid(self, rng):
        decoder = PixelDecoder(WeightStore(0), CHANNELS, 8)
        pyramid = _pyramid(rng)
        pyramid[2] = rng.standard_normal((5, 5, 8))
        with pytest.raises(ArgumentError):
            decoder(pyramid)

    def test_needs_four_levels(self):
        with pytest.raises(ConfigError):
            PixelDecoder(WeightStore(0), (4, 8), 8)


class TestQueries:

    def test_generate_keeps_every_layer_state(self, rng):
        generator = _generator(L=3)
        qset, pp = generator.generate_queries(_pyramid(rng))
        assert qset.queries.shape == (4, 8)
        assert len(qset.layer_outputs) == 4
        assert np.array_equal(qset.layer_outputs[0], generator.query_embed)
        assert np.array_equal(qset.layer_outputs[-1], qset.queries)

    def test_deterministic(self, rng):
        pyramid = _pyramid(rng)
        a, _ = _generator(seed=2).generate_queries(pyramid)
        b, _ = _generator(seed=2).generate_queries(pyramid)
        assert np.array_equal(a.queries, b.queries)

    def test_fully_masked_row_attends_everywhere(self, rng):
        layer = DecoderLayer(WeightStore(0), 8, 16, "layer")
        q = rng.standard_normal((3, 8))
        feat = rng.standard_normal((4, 4, 8))
        mask = np.zeros((3, 16))
        mask[1] = -np.inf
        masked = layer(q, feat, mask)
        open_ = layer(q, feat, None)
        assert np.array_equal(masked[1], open_[1])

    def test_decoder_layer_rejects_mask_shape(self, rng):
        layer = DecoderLayer(WeightStore(0), 8, 16, "layer")
        with pytest.raises(ArgumentError):
            decoder_layer(layer, QuerySet(rng.standard_normal((3, 8))), rng.standard_normal((4, 4, 8)),
                          np.zeros((3, 15)))

    def test_mask_logits_match_loops(self, rng):
        queries = rng.standard_normal((3, 5))
        embed = rng.standard_normal((4, 6, 5))
        expected = matmul_loops(embed.reshape(-1, 5), queries.T).T.reshape(3, 4, 6)
        assert np.array_equal(mask_logits(queries, embed), expected)

    def test_attention_mask_from_logits(self):
        logits = np.full((2, 4, 4), -5.0)
        logits[0, :2, :2] = 5.0
        mask = attention_mask_from_logits(logits, (2, 2))
        assert mask.shape == (2, 4)
        assert mask[0, 0] == 0.0 and np.isneginf(mask[0, 3])
        assert np.all(np.isneginf(mask[1]))

    def test_instance_masks(self, rng):
        generator = _generator()
        qset, pp = generator.generate_queries(_pyramid(rng))
        pred = generator.predict_instance_masks(qset, pp)
        assert pred.masks.shape == (4, 16, 16)
        assert pred.objectness.shape == (4,)
        plain = predict_instance_masks(qset, pp)
        assert np.array_equal(plain.masks, pred.masks) and plain.objectness is None


class TestMatching:

    def test_dice_score(self):
        target = np.array([1.0, 1.0, 0.0])
        assert dice_score(target, target) == 1.0
        assert dice_score(np.zeros(3), np.zeros(3)) == 1.0

    def test_hungarian_equals_brute_force(self, rng):
        for _ in range(1000):
            n = int(rng.integers(1, 7))
            g = int(rng.integers(1, n + 1))
            pred = InstancePrediction(rng.standard_normal((n, 4, 4)) * 3.0)
            gt = [Image((rng.random((4, 4)) > 0.5).astype(float)) for _ in range(g)]
            assignment = hungarian_match(pred, gt)
            best_total, best_cols = brute_force_assignment(matching_cost(pred, gt))
            assert tuple(j for _, j in assignment.pairs) == best_cols
            assert abs(assignment.total_cost - best_total) <= 1e-12

    def test_ties_go_to_lowest_query_index(self, rng):
        logits = np.tile(rng.standard_normal((1, 4, 4)), (5, 1, 1))
        gt = [Image((rng.random((4, 4)) > 0.5).astype(float)) for _ in range(3)]
        assignment = hungarian_match(InstancePrediction(logits), gt)
        assert assignment.pairs == [(0, 0), (1, 1), (2, 2)]

    def test_cost_shape_and_gt_resampling(self, rng):
        pred = InstancePrediction(rng.standard_normal((3, 4, 4)))
        cost = matching_cost(pred, [Image.full(8, 8, 1.0)])
        assert cost.shape == (1, 3)

    def test_objectness_lowers_cost(self, rng):
        pred = InstancePrediction(rng.standard_normal((3, 4, 4)), objectness=np.array([5.0, 0.0, -5.0]))
        gt = [Image.full(4, 4, 1.0)]
        plain, weighted = matching_cost(pred, gt), matching_cost(pred, gt, objectness_weight=1.0)
        assert np.all(weighted < plain)

    def test_capacity(self, rng):
        pred = InstancePrediction(rng.standard_normal((2, 4, 4)))
        with pytest.raises(CapacityError):
            hungarian_match(pred, [Image.full(4, 4, 1.0)] * 3)

    def test_no_ground_truth(self, rng):
        assignment = hungarian_match(InstancePrediction(rng.standard_normal((2, 4, 4))), [])
        assert assignment.pairs == [] and assignment.total_cost == 0.0


class TestLosses:

    def test_confident_correct_prediction_has_small_loss(self):
        target = np.zeros((4, 4))
        target[:2] = 1.0
        logits = np.where(target > 0, 20.0, -20.0)[None]
        pred = InstancePrediction(logits)
        gt = [Image(target)]
        losses = instance_losses(pred, gt, hungarian_match(pred, gt))
        assert losses["dice_loss"] < 1e-6 and losses["bce_loss"] < 1e-6

    def test_set_prediction_losses_have_aux_per_layer(self, rng):
        generator = _generator(L=2)
        qset, pp = generator.generate_queries(_pyramid(rng))
        gt = [Image((rng.random((16, 16)) > 0.5).astype(float))]
        losses = set_prediction_losses(generator, qset, pp, gt)
        assert len(losses["aux"]) == 2
        assert losses["dice_loss"] >= 0.0 and losses["bce_loss"] >= 0.0
