"""Tests for the encoder-decoder segmentation network."""

import numpy as np
import pytest
import torch

from sleepkd.config import ModelConfig
from sleepkd.models.segmodel import (
    build_model,
    count_parameters,
    forward,
    predict_at_frequency,
    receptive_field_epochs,
    receptive_field_radius,
    same_architecture,
    segment_length,
    tap_shapes,
)
from sleepkd.records.signals import SignalRecord
from sleepkd.utils.errors import ConfigError, ShapeError


@pytest.fixture
def model(tiny_model_config):
    torch.manual_seed(0)
    return build_model(tiny_model_config).eval()


class TestBuildModel:
    def test_default_architecture_is_valid(self):
        config = ModelConfig()

        assert config.check() == []
        assert config.total_pool == 3000
        # bottleneck length per epoch
        assert tap_shapes(config, 1)[config.depth] == (512, 2)

    def test_pool_product_must_divide_epoch(self):
        config = ModelConfig(depth=1, filters_per_stage=[4], pool_sizes=[7], samples_per_epoch=6000)

        with pytest.raises(ConfigError, match="pool"):
            build_model(config)

    def test_stage_lists_follow_depth(self):
        config = ModelConfig(depth=3, filters_per_stage=[4, 8], pool_sizes=[2, 2, 2])

        with pytest.raises(ConfigError):
            build_model(config)

    def test_even_kernel(self, tiny_model_config):
        with pytest.raises(ConfigError, match="odd"):
            build_model(tiny_model_config.model_copy(update={"kernel_size": 4}))

    def test_parameters(self, model):
        assert count_parameters(model) > 0
        assert count_parameters(model, trainable_only=True) == count_parameters(model)


class TestForward:
    """Window-level forward pass."""

    def test_logits_shape(self, model, tiny_model_config):
        logits, _ = forward(model, np.random.default_rng(0).normal(size=35 * 600))

        assert logits.shape == (35, tiny_model_config.n_classes)

    def test_batched_shape(self, model):
        logits, taps = model(torch.zeros(2, 3 * 600))

        assert logits.shape == (2, 3, 4)
        assert taps.maps[0].shape[0] == 2

    def test_tap_count_and_shapes(self, model, tiny_model_config):
        _, taps = forward(model, np.zeros(5 * 600))

        assert len(taps) == 2 * tiny_model_config.depth + 1
        assert taps.layer_ids == ["encoder.0", "encoder.1", "bottleneck", "decoder.1", "decoder.0"]
        assert [tuple(m.shape) for m in taps.maps] == tap_shapes(tiny_model_config, 5)
        assert taps.bottleneck.shape == (16, 5 * 600 // 60)

    def test_zero_input_gives_equal_interior_logits(self, model):
        logits, _ = forward(model, np.zeros(9 * 600))

        assert torch.isfinite(logits).all()
        interior = logits[1:-1]
        assert torch.allclose(interior, interior[0].expand_as(interior))

    def test_length_must_be_whole_epochs(self, model):
        with pytest.raises(ShapeError):
            forward(model, np.zeros(600 + 1))

    def test_two_dimensional_window(self, model):
        with pytest.raises(ShapeError):
            forward(model, np.zeros((2, 600)))


class TestReceptiveField:
    """Perturbations stay within the computed radius."""

    def test_radius_bounds_the_perturbation(self, smooth_model_config):
        torch.manual_seed(1)
        model = build_model(smooth_model_config).double().eval()
        radius = receptive_field_radius(smooth_model_config)
        x = torch.randn(1, 12 * 60, dtype=torch.float64)
        bumped = x.clone()
        position = 6 * 60 + 17
        bumped[0, position] += 5.0

        with torch.no_grad():
            base, _ = model.dense_scores(x)
            moved, _ = model.dense_scores(bumped)

        changed = (base - moved).abs().amax(dim=1)[0] > 1e-12
        reached = torch.nonzero(changed).flatten()
        assert len(reached) > 0
        assert reached.min() >= position - radius
        assert reached.max() <= position + radius

    def test_epochs(self, smooth_model_config):
        radius = receptive_field_radius(smooth_model_config)

        assert receptive_field_epochs(smooth_model_config) == -(-radius // 60)

    def test_far_epochs_unchanged(self, smooth_model_config):
        torch.manual_seed(2)
        model = build_model(smooth_model_config).double().eval()
        reach = receptive_field_epochs(smooth_model_config)
        x = torch.randn(1, 12 * 60, dtype=torch.float64)
        bumped = x.clone()
        bumped[0, 6 * 60 : 7 * 60] += 3.0

        with torch.no_grad():
            base, _ = model(x)
            moved, _ = model(bumped)

        for epoch in range(12):
            if abs(epoch - 6) > reach:
                assert torch.allclose(base[0, epoch], moved[0, epoch], rtol=0, atol=1e-12)
        assert not torch.allclose(base[0, 6], moved[0, 6])


class TestPredictAtFrequency:
    """Variable segmentation frequency at inference."""

    @pytest.fixture
    def record(self):
        rng = np.random.default_rng(3)
        return SignalRecord.from_samples("S01", "ECG-Lead1", 20, rng.normal(size=300 * 20))

    def test_training_frequency(self, model, record):
        assert len(predict_at_frequency(model, record, "1/30")) == 10

    def test_twenty_second_labels(self, model, record):
        labels = predict_at_frequency(model, record, "1/20")

        assert len(labels) == 15
        assert labels.min() >= 0 and labels.max() < 4

    def test_partial_last_segment(self, model):
        record = SignalRecord.from_samples("S01", "ECG-Lead1", 20, np.zeros(310 * 20))

        assert len(predict_at_frequency(model, record, 1 / 20)) == 16

    def test_constant_signal(self, model):
        record = SignalRecord.from_samples("S01", "ECG-Lead1", 20, np.full(300 * 20, 0.7))

        labels = predict_at_frequency(model, record, "1/20")

        assert len(set(labels[1:-1].tolist())) == 1

    def test_matches_window_forward_at_training_frequency(self, smooth_model_config):
        torch.manual_seed(4)
        model = build_model(smooth_model_config).double().eval()
        samples = np.random.default_rng(5).normal(size=8 * 60)
        record = SignalRecord.from_samples("S01", "ECG-Lead1", 2, samples)

        labels = predict_at_frequency(model, record, "1/30")
        logits, _ = forward(model, samples)

        np.testing.assert_array_equal(labels, logits.argmax(dim=-1).numpy())

    def test_non_integral_segment(self, model, record):
        with pytest.raises(ConfigError):
            predict_at_frequency(model, record, 3)

    def test_segment_length(self):
        assert segment_length(200, "1/20") == 4000
        assert segment_length(200, 1 / 30) == 6000
        with pytest.raises(ConfigError):
            segment_length(200, 0)


class TestSameArchitecture:
    def test_equal_and_different(self, tiny_model_config):
        assert same_architecture(tiny_model_config, tiny_model_config.model_copy())
        assert not same_architecture(
            tiny_model_config, tiny_model_config.model_copy(update={"dilation": 2})
        )


class TestGradients:
    def test_parameter_gradients_match_finite_differences(self, smooth_model_config):
        torch.manual_seed(6)
        model = build_model(smooth_model_config).double()
        names = [name for name, _ in model.named_parameters()]
        params = tuple(p.detach().clone().requires_grad_(True) for p in model.parameters())
        x = torch.randn(1, smooth_model_config.samples_per_epoch, dtype=torch.float64)

        def logits_of(*tensors):
            logits, _ = torch.func.functional_call(model, dict(zip(names, tensors)), (x,))
            return logits

        assert torch.autograd.gradcheck(logits_of, params, eps=1e-6, atol=1e-8, rtol=1e-4)


class TestEpochEquivariance:
    """A long window agrees with its halves away from their edges."""

    @pytest.mark.parametrize("config_name", ["smooth_model_config", "tiny_model_config"])
    def test_double_window_matches_halves(self, request, config_name):
        config = request.getfixturevalue(config_name)
        torch.manual_seed(7)
        model = build_model(config).double().eval()
        T = 6
        x = torch.randn(1, 2 * T * config.samples_per_epoch, dtype=torch.float64)
        half = T * config.samples_per_epoch

        with torch.no_grad():
            full, _ = model(x)
            first, _ = model(x[:, :half])
            second, _ = model(x[:, half:])

        reach = receptive_field_epochs(config)
        interior = list(range(reach, T - reach))
        assert interior
        for e in interior:
            torch.testing.assert_close(full[0, e], first[0, e], rtol=0, atol=1e-5)
            torch.testing.assert_close(full[0, T + e], second[0, e], rtol=0, atol=1e-5)
