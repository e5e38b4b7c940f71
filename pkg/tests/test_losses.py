"""Tests for the training objectives against hand-computed values."""

import math

import numpy as np
import pytest
import torch
from torch.autograd import gradcheck

from sleepkd.config import ATConfig, DistillWeights
from sleepkd.losses import (
    at_loss,
    attention_map,
    combined_loss,
    combined_terms,
    compose,
    kd_loss,
    tempered_log_softmax,
    wce,
)
from sleepkd.models.segmodel import FeatureTaps
from sleepkd.records.dataset import ClassWeights
from sleepkd.utils.errors import LossError, ShapeError


def t(values):
    return torch.tensor(values, dtype=torch.float64)


@pytest.fixture
def rng():
    return torch.Generator().manual_seed(0)


class TestWce:
    """Class-weighted cross entropy."""

    def test_confident_correct(self):
        labels = torch.tensor([0, 2, 1])
        logits = 1e3 * torch.nn.functional.one_hot(labels, 3).double()

        assert wce(logits, labels, [1.0, 5.0, 0.2]) < 1e-6

    def test_uniform_logits(self):
        loss = wce(t([[0.0, 0.0]]), torch.tensor([0]), ClassWeights.uniform(2))

        assert loss.item() == pytest.approx(math.log(2), abs=1e-12)

    def test_weighted_mean(self):
        logits = t([[0.3, -1.2], [2.0, 0.5]])
        labels = torch.tensor([0, 1])
        nll = -torch.log_softmax(logits, dim=-1)
        a, b = nll[0, 0].item(), nll[1, 1].item()

        loss = wce(logits, labels, [1.0, 3.0])

        assert loss.item() == pytest.approx((1 * a + 3 * b) / 4, abs=1e-12)

    def test_equal_weights_give_mean_cross_entropy(self, rng):
        logits = torch.randn(6, 4, generator=rng, dtype=torch.float64)
        labels = torch.tensor([0, 1, 2, 3, 1, 0])

        expected = torch.nn.functional.cross_entropy(logits, labels)

        assert wce(logits, labels, [2.0] * 4).item() == pytest.approx(expected.item(), abs=1e-12)

    def test_masked_positions_are_ignored(self):
        logits = t([[[0.0, 0.0], [50.0, -50.0]]])
        labels = torch.tensor([[0, 1]])
        mask = torch.tensor([[True, False]])

        assert wce(logits, labels, [1.0, 1.0], mask).item() == pytest.approx(math.log(2))

    def test_everything_masked(self):
        with pytest.raises(LossError):
            wce(t([[0.0, 0.0]]), torch.tensor([0]), [1.0, 1.0], torch.tensor([False]))

    def test_weight_count(self):
        with pytest.raises(ShapeError):
            wce(t([[0.0, 0.0]]), torch.tensor([0]), [1.0, 1.0, 1.0])

    def test_gradient(self, rng):
        logits = torch.randn(3, 4, generator=rng, dtype=torch.float64, requires_grad=True)
        labels = torch.tensor([0, 3, 1])

        assert gradcheck(lambda x: wce(x, labels, [1.0, 2.0, 0.5, 1.5]), (logits,), rtol=1e-4)


class TestAttentionMap:
    def test_hand_value(self):
        np.testing.assert_allclose(attention_map(t([[1.0, -1.0], [2.0, 0.0]]), 2).numpy(), [5, 1])

    def test_single_channel_p1(self):
        a = t([[-3.0, 0.5, 2.0]])

        assert torch.equal(attention_map(a, 1), a.abs()[0])

    def test_zero(self):
        assert not attention_map(torch.zeros(3, 4), 2).any()

    def test_batched(self):
        a = torch.ones(2, 3, 5)

        assert attention_map(a).shape == (2, 5)


class TestAtLoss:
    """Attention transfer between tap lists."""

    def test_identical_taps(self, rng):
        taps = [torch.randn(3, 7, generator=rng) for _ in range(3)]

        assert at_loss(taps, [x.clone() for x in taps]).item() == pytest.approx(0.0, abs=1e-9)

    def test_positive_scale_invariance(self, rng):
        teacher = [torch.randn(2, 7, generator=rng, dtype=torch.float64) for _ in range(2)]
        student = [torch.randn(2, 7, generator=rng, dtype=torch.float64) for _ in range(2)]

        base = at_loss(student, teacher)
        scaled = at_loss([4.5 * s for s in student], teacher)

        assert at_loss([3.0 * x for x in teacher], teacher).item() == pytest.approx(0, abs=1e-9)
        assert scaled.item() == pytest.approx(base.item(), abs=1e-9)

    def test_orthogonal_maps(self):
        student = [t([[1.0, 0.0]])]
        teacher = [t([[0.0, 1.0]])]

        assert at_loss(student, teacher).item() == pytest.approx(math.sqrt(2), abs=1e-12)

    def test_zero_map_contributes_one(self):
        assert at_loss([torch.zeros(2, 3)], [torch.ones(2, 3)]).item() == pytest.approx(1.0)

    def test_layers_are_summed(self):
        student = [t([[1.0, 0.0]]), t([[1.0, 0.0]])]
        teacher = [t([[0.0, 1.0]]), t([[1.0, 0.0]])]

        assert at_loss(student, teacher).item() == pytest.approx(math.sqrt(2))
        assert at_loss(student, teacher, ATConfig(layers=[1])).item() == pytest.approx(0.0)

    def test_batched_taps_average_over_the_batch(self):
        student = [t([[[1.0, 0.0]], [[1.0, 0.0]]])]
        teacher = [t([[[0.0, 1.0]], [[1.0, 0.0]]])]

        assert at_loss(student, teacher).item() == pytest.approx(math.sqrt(2) / 2)

    def test_feature_taps(self):
        taps = FeatureTaps(layer_ids=["encoder.0"], maps=[torch.ones(2, 4)])

        assert at_loss(taps, taps).item() == pytest.approx(0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            at_loss([torch.ones(2, 4)], [torch.ones(2, 5)])

    def test_tap_count_mismatch(self):
        with pytest.raises(ShapeError):
            at_loss([torch.ones(2, 4)], [torch.ones(2, 4)] * 2)

    def test_layer_out_of_range(self):
        with pytest.raises(ShapeError):
            at_loss([torch.ones(2, 4)], [torch.ones(2, 4)], ATConfig(layers=[3]))

    def test_gradient(self, rng):
        student = torch.randn(2, 7, generator=rng, dtype=torch.float64, requires_grad=True)
        teacher = torch.randn(2, 7, generator=rng, dtype=torch.float64)

        assert gradcheck(lambda s: at_loss([s], [teacher]), (student,), rtol=1e-4)


class TestTemperedLogSoftmax:
    def test_unit_temperature_is_log_softmax(self, rng):
        logits = torch.randn(5, 4, generator=rng)

        assert torch.equal(tempered_log_softmax(logits, 1.0), torch.log_softmax(logits, dim=-1))

    @pytest.mark.parametrize("temperature", [0.5, 1.0, 7.0])
    def test_equal_logits(self, temperature):
        out = tempered_log_softmax(t([2.5, 2.5, 2.5]), temperature)

        np.testing.assert_allclose(out.numpy(), [math.log(1 / 3)] * 3, atol=1e-12)

    def test_hand_value(self):
        out = tempered_log_softmax(t([2.0, 0.0]), 2.0)

        np.testing.assert_allclose(out.numpy(), [-0.3133, -1.3133], atol=1e-4)

    def test_temperature_must_be_positive(self):
        with pytest.raises(ValueError):
            tempered_log_softmax(t([1.0]), 0.0)


class TestKdLoss:
    """KL(teacher || student) between tempered distributions."""

    def test_identical_logits(self, rng):
        logits = torch.randn(4, 3, generator=rng, dtype=torch.float64)

        for temperature in (1.0, 4.0):
            loss = kd_loss(logits, logits.clone(), temperature)
            assert loss.item() == pytest.approx(0, abs=1e-12)

    def test_hand_value(self):
        teacher = torch.log(t([[0.75, 0.25]]))
        student = t([[0.0, 0.0]])
        expected = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)

        loss = kd_loss(student, teacher, 1.0)

        assert loss.item() == pytest.approx(expected, abs=1e-12)
        assert loss.item() == pytest.approx(0.13081, abs=1e-5)

    def test_shift_invariance(self, rng):
        student = torch.randn(3, 4, generator=rng, dtype=torch.float64)
        teacher = torch.randn(3, 4, generator=rng, dtype=torch.float64)

        base = kd_loss(student, teacher, 2.0).item()

        assert kd_loss(student + 3.7, teacher, 2.0).item() == pytest.approx(base, abs=1e-12)
        assert kd_loss(student, teacher - 1.1, 2.0).item() == pytest.approx(base, abs=1e-12)

    def test_vanishes_with_temperature(self):
        student = t([[2.0, -1.0, 0.5]])
        teacher = t([[-0.5, 1.5, 0.0]])

        values = [kd_loss(student, teacher, temp).item() for temp in (1, 10, 100, 1000)]

        assert all(a > b for a, b in zip(values, values[1:]))
        assert values[-1] < 1e-5

    def test_mask(self):
        student = t([[0.0, 0.0], [9.0, -9.0]])
        teacher = t([[0.0, 0.0], [-9.0, 9.0]])

        assert kd_loss(student, teacher, 1.0, torch.tensor([True, False])).item() == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            kd_loss(torch.zeros(2, 3), torch.zeros(2, 4))

    def test_gradient(self, rng):
        student = torch.randn(3, 4, generator=rng, dtype=torch.float64, requires_grad=True)
        teacher = torch.randn(3, 4, generator=rng, dtype=torch.float64)

        assert gradcheck(lambda s: kd_loss(s, teacher, 2.0), (student,), rtol=1e-4)


class TestCombinedLoss:
    """(1 - alpha) * wce + alpha * T^2 * kd."""

    @pytest.fixture
    def inputs(self, rng):
        student = torch.randn(5, 4, generator=rng, dtype=torch.float64)
        teacher = torch.randn(5, 4, generator=rng, dtype=torch.float64)
        labels = torch.tensor([0, 1, 2, 3, 2])
        return student, teacher, labels, [1.0, 0.5, 2.0, 1.5]

    def test_alpha_zero_is_wce(self, inputs):
        student, teacher, labels, weights = inputs

        total = combined_loss(
            student, teacher, labels, weights, DistillWeights(alpha=0.0, temperature=3.0)
        )

        assert torch.equal(total, wce(student, labels, weights))

    def test_alpha_one_identical_logits(self, inputs):
        student, _, labels, weights = inputs

        total = combined_loss(
            student, student.clone(), labels, weights, DistillWeights(alpha=1.0, temperature=1.0)
        )

        assert total.item() == pytest.approx(0.0, abs=1e-12)

    def test_affine_combination(self):
        total = compose(t(0.8), t(0.2), DistillWeights(alpha=0.5, temperature=1.0))

        assert total.item() == pytest.approx(0.5, abs=1e-12)

    def test_temperature_scales_kd(self):
        total = compose(t(0.0), t(0.2), DistillWeights(alpha=1.0, temperature=3.0))

        assert total.item() == pytest.approx(1.8)

    def test_affine_in_alpha(self, inputs):
        student, teacher, labels, weights = inputs
        values = [
            combined_loss(
                student, teacher, labels, weights, DistillWeights(alpha=a, temperature=2.0)
            ).item()
            for a in (0.0, 0.3, 0.9)
        ]

        slope = (values[1] - values[0]) / 0.3
        assert values[2] == pytest.approx(values[0] + 0.9 * slope, abs=1e-9)

    def test_components(self, inputs):
        student, teacher, labels, weights = inputs
        dw = DistillWeights(alpha=0.25, temperature=2.0)

        total, wce_term, kd_term = combined_terms(student, teacher, labels, weights, dw)

        assert torch.equal(wce_term, wce(student, labels, weights))
        assert torch.equal(kd_term, kd_loss(student, teacher, 2.0))
        assert total.item() == pytest.approx(0.75 * wce_term.item() + 0.25 * 4 * kd_term.item())

    def test_losses_are_non_negative(self, rng):
        for _ in range(20):
            student = torch.randn(4, 3, generator=rng)
            teacher = torch.randn(4, 3, generator=rng)
            labels = torch.randint(0, 3, (4,), generator=rng)
            assert wce(student, labels, [1.0, 1.0, 1.0]) >= 0
            assert kd_loss(student, teacher, 1.5) >= 0
            assert at_loss([student], [teacher]) >= 0
