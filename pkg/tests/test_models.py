"""Tests for the UNet suite, its cost vector, MC-dropout entropy and the routing policy."""

import numpy as np
import pytest
from conftest import IMAGE_SIZE, PATCHES, tiny_specs

from paser.errors import ShapeError
from paser.models import (
    ModelSuite,
    PolicyNet,
    UNet,
    UNetSpec,
    build_state,
    build_suite,
    cost_vector,
    mc_entropy,
    policy_forward,
    predict,
    predictive_entropy,
)
from paser.tensorkit import Mode, RngStream, count_flops, count_params


class TestCostVector:
    def test_reference_counts(self):
        costs = cost_vector([16571, 1080595, 17275459])
        assert costs == pytest.approx([0.000902, 0.05882, 0.94027], abs=2e-5)
        assert costs.sum() == pytest.approx(1.0)

    def test_two_models(self):
        assert cost_vector([1, 3]).tolist() == [0.25, 0.75]

    @pytest.mark.parametrize("counts", [[], [0, 5], [3, -1]])
    def test_rejects_non_positive(self, counts):
        with pytest.raises(ValueError):
            cost_vector(counts)


class TestUNet:
    def test_output_shape(self):
        model = UNet(UNetSpec(depth=2, base_channels=2), RngStream(0))
        labels, logits = predict(model, np.zeros((3, 1, 16, 16), dtype=np.float32))
        assert logits.shape == (3, 3, 16, 16)
        assert labels.shape == (3, 16, 16)

    def test_rejects_indivisible_input(self):
        model = UNet(UNetSpec(depth=2, base_channels=2), RngStream(0))
        with pytest.raises(ShapeError):
            predict(model, np.zeros((1, 1, 10, 10)))
        with pytest.raises(ShapeError):
            predict(model, np.zeros((1, 2, 16, 16)))

    def test_param_count(self):
        model = UNet(UNetSpec(depth=1, base_channels=2), RngStream(0))
        # enc 20 + 38, bottleneck 76 + 148, dec 110 + 38, head 9
        assert count_params(model) == 439

    def test_flops_match_layer_table(self):
        model = UNet(UNetSpec(depth=1, base_channels=2), RngStream(0))
        assert count_flops(model, (1, 1, 8, 8)) == 33952

    def test_mc_dropout_adds_dropout_flops(self):
        model = UNet(UNetSpec(depth=1, base_channels=2, dropout_rate=0.1), RngStream(0))
        eval_flops = count_flops(model, (1, 1, 8, 8), Mode.EVAL)
        assert count_flops(model, (1, 1, 8, 8), Mode.MC_DROPOUT) - eval_flops == 64 + 128

    def test_tie_resolves_to_first_class(self):
        model = UNet(UNetSpec(depth=1, base_channels=2), RngStream(0), dtype=np.float64)
        model.params["head.weight"].data[...] = 0
        model.params["head.bias"].data[...] = 0
        labels, _ = predict(model, np.random.default_rng(0).random((1, 8, 8))[None])
        assert np.all(labels == 0)

    def test_bias_picks_class(self):
        model = UNet(UNetSpec(depth=1, base_channels=2), RngStream(0), dtype=np.float64)
        model.params["head.weight"].data[...] = 0
        model.params["head.bias"].data[...] = [0.0, 0.0, 5.0]
        labels, _ = predict(model, np.zeros((1, 8, 8)))
        assert labels.shape == (8, 8)
        assert np.all(labels == 2)

    def test_initialisation_is_seeded(self):
        a = UNet(UNetSpec(depth=1), RngStream(3)).state_dict()
        b = UNet(UNetSpec(depth=1), RngStream(3)).state_dict()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])


class TestSuite:
    def test_build(self, suite):
        assert suite.m == 2
        assert suite.num_models == 3
        assert suite.num_classes == 3
        assert suite.param_counts == sorted(suite.param_counts)
        assert suite.costs.sum() == pytest.approx(1.0)

    def test_equal_sizes_rejected(self):
        specs = [UNetSpec(depth=1, base_channels=2)] * 2
        with pytest.raises(ValueError, match="strictly increase"):
            build_suite(specs, RngStream(0))

    def test_needs_two_models(self):
        with pytest.raises(ValueError):
            build_suite(tiny_specs()[:1], RngStream(0))

    def test_mismatched_classes(self):
        models = [
            UNet(UNetSpec(depth=1, base_channels=2), RngStream(0)),
            UNet(UNetSpec(depth=1, base_channels=4, num_classes=2), RngStream(1)),
        ]
        with pytest.raises(ValueError):
            ModelSuite.from_models(models)

    def test_flops_are_cached(self, suite):
        shape = (1, 1, 8, 8)
        assert suite.flops(1, shape) == count_flops(suite.models[1], shape)
        assert suite.flops(1, shape) == suite.flops(1, shape)

    def test_replace_requires_same_architecture(self, suite):
        with pytest.raises(ValueError):
            suite.replace(1, UNet(suite.models[2].spec, RngStream(0)))
        clone = UNet(suite.models[1].spec, RngStream(99), dtype=np.float64)
        suite.replace(1, clone)
        assert suite.models[1] is clone


class TestEntropy:
    def test_uniform_is_log_k(self):
        probs = np.full((1, 3, 2, 2), 1 / 3)
        np.testing.assert_allclose(predictive_entropy(probs), np.log(3))

    def test_one_hot_is_zero(self):
        probs = np.zeros((1, 3, 2, 2))
        probs[:, 1] = 1.0
        np.testing.assert_array_equal(predictive_entropy(probs), 0.0)

    def test_mc_entropy_bounds(self, suite, images):
        prediction = mc_entropy(suite.small, images, 4, RngStream(0))
        entropy = prediction.entropy.values
        assert entropy.shape == (len(images), IMAGE_SIZE, IMAGE_SIZE)
        assert np.all(entropy >= 0) and np.all(entropy <= np.log(3) + 1e-12)
        np.testing.assert_allclose(prediction.mean_probs.sum(axis=1), 1.0)
        assert prediction.entropy.samples == 4

    def test_mc_entropy_is_seeded(self, suite, images):
        a = mc_entropy(suite.small, images, 3, RngStream(5))
        b = mc_entropy(suite.small, images, 3, RngStream(5))
        np.testing.assert_array_equal(a.entropy.values, b.entropy.values)

    def test_single_image(self, suite, images):
        prediction = mc_entropy(suite.small, images[0], 2, RngStream(0))
        assert prediction.labels.shape == (IMAGE_SIZE, IMAGE_SIZE)

    def test_needs_two_samples(self, suite, images):
        with pytest.raises(ValueError):
            mc_entropy(suite.small, images, 1, RngStream(0))

    def test_needs_dropout(self, suite, images):
        with pytest.raises(ValueError, match="dropout"):
            mc_entropy(suite.models[1], images, 3, RngStream(0))


class TestPolicy:
    def test_zero_head_is_uniform(self, policy, suite):
        state = np.random.default_rng(0).random((2, suite.num_classes + 1, IMAGE_SIZE, IMAGE_SIZE))
        probs = policy_forward(policy, state)
        assert probs.shape == (2, PATCHES, suite.num_models)
        np.testing.assert_allclose(probs, 1 / 3)

    def test_rows_sum_to_one(self, suite):
        policy = PolicyNet(
            3,
            3,
            (IMAGE_SIZE, IMAGE_SIZE),
            PATCHES,
            RngStream(1),
            width=4,
            zero_head=False,
            dtype=np.float64,
        )
        state = np.random.default_rng(0).random((2, 4, IMAGE_SIZE, IMAGE_SIZE))
        probs = policy_forward(policy, state)
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0)
        assert np.all(probs >= 0)

    def test_single_state(self, policy):
        probs = policy_forward(policy, np.zeros((4, IMAGE_SIZE, IMAGE_SIZE)))
        assert probs.shape == (PATCHES, 3)

    def test_rejects_wrong_state(self, policy):
        with pytest.raises(ShapeError):
            policy_forward(policy, np.zeros((1, 3, IMAGE_SIZE, IMAGE_SIZE)))

    @pytest.mark.parametrize("size,patches", [((16, 16), 5), ((12, 12), 4), ((16, 8), 4)])
    def test_rejects_bad_grid(self, size, patches):
        with pytest.raises((ValueError, ShapeError)):
            PolicyNet(3, 3, size, patches, RngStream(0))

    def test_single_patch(self):
        policy = PolicyNet(3, 2, (8, 8), 1, RngStream(0), width=4)
        assert policy_forward(policy, np.zeros((1, 4, 8, 8))).shape == (1, 1, 2)

    def test_build_state(self):
        probs = np.full((2, 3, 4, 4), 1 / 3)
        entropy = np.ones((2, 4, 4))
        state = build_state(probs, entropy)
        assert state.shape == (2, 4, 4, 4)
        np.testing.assert_array_equal(state[:, 3], 1.0)
        with pytest.raises(ShapeError):
            build_state(probs, np.ones((2, 5, 5)))
