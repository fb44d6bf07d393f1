from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from riskselect.core import DEFAULT_SPEC, GridSpec, Heatmap, SpecMismatchError
from riskselect.loss import LossParams, LossVariant, batch_loss, loss_and_grad, loss_array, loss_grad, loss_value

unit = st.floats(0.01, 0.99)
ALL = [LossParams(variant=v) for v in LossVariant]


class TestRescaleFocalValues:
    def test_equal_is_zero(self):
        assert loss_value(0.7, 0.7) == 0.0
        assert loss_grad(0.7, 0.7) == 0.0

    def test_under_branch_with_clamped_target(self):
        r = 0.5 / 0.9999
        assert loss_value(0.5, 1.0) == pytest.approx((1 - r) ** 2 * -math.log(r), rel=1e-12)
        assert loss_value(0.5, 1.0) == pytest.approx(0.17324, abs=1e-4)

    def test_over_branch(self):
        assert loss_value(0.9, 0.5) == pytest.approx(0.64 * -math.log(0.2), rel=1e-12)
        assert loss_value(0.9, 0.5) == pytest.approx(1.03004, abs=1e-5)

    def test_alphas_scale_branches(self):
        p = LossParams(alpha_under=3.0, alpha_over=0.5)
        assert loss_value(0.2, 0.6, p) == pytest.approx(3 * loss_value(0.2, 0.6))
        assert loss_value(0.8, 0.6, p) == pytest.approx(0.5 * loss_value(0.8, 0.6))

    def test_targets_at_extremes_stay_finite(self):
        for x in (0.0, 0.3, 1.0):
            for gt in (0.0, 1.0):
                assert math.isfinite(loss_value(x, gt)) and math.isfinite(loss_grad(x, gt))

    def test_outside_unit_interval(self):
        with pytest.raises(ValueError):
            loss_value(1.2, 0.5)
        with pytest.raises(ValueError):
            loss_value(0.5, -0.1)

    @given(unit, unit)
    def test_non_negative_zero_iff_equal(self, x, gt):
        v = loss_value(x, gt)
        assert v >= 0
        assert (v == 0) == (x == gt)

    @given(unit, unit)
    def test_under_estimation_gradient_negative(self, x, gt):
        assume(gt - x > 1e-6)
        assert loss_grad(x, gt) < 0

    @pytest.mark.parametrize("delta", [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08])
    def test_under_costs_more_for_low_targets(self, delta):
        gt = 0.1
        assert loss_value(gt - delta, gt) > loss_value(gt + delta, gt)


class TestGradients:
    @pytest.mark.parametrize("params", ALL, ids=lambda p: p.variant.value)
    @given(x=unit, gt=unit)
    def test_matches_central_difference(self, params, x, gt):
        h = 1e-6
        assume(abs(x - gt) > 1e-3)
        if params.variant is LossVariant.FOCAL:
            assume(abs(gt - 0.5) > 1e-9)
        num = (loss_value(x + h, gt, params) - loss_value(x - h, gt, params)) / (2 * h)
        ana = loss_grad(x, gt, params)
        assert abs(num - ana) <= 1e-5 * max(abs(num), abs(ana), 1e-8)

    def test_clamp_zeroes_gradient_outside(self):
        assert loss_grad(0.0, 0.5) == 0.0
        assert loss_grad(1.0, 0.5) == 0.0


class TestBaselines:
    def test_l1_l2(self):
        assert loss_value(0.2, 0.5, LossParams(variant="L1")) == pytest.approx(0.3)
        assert loss_value(0.2, 0.5, LossParams(variant="L2")) == pytest.approx(0.09)

    def test_focal_binarises_target(self):
        p = LossParams(variant=LossVariant.FOCAL)
        assert loss_value(0.3, 0.7, p) == loss_value(0.3, 0.9, p)
        assert loss_value(0.3, 0.2, p) == loss_value(0.3, 0.0, p)

    def test_variant_from_string(self):
        assert LossParams(variant="RescaleFocal").variant is LossVariant.RESCALE_FOCAL
        with pytest.raises(ValueError):
            LossParams(variant="Huber")


class TestBatch:
    def test_equal_maps(self):
        h = Heatmap(DEFAULT_SPEC, np.full(DEFAULT_SPEC.shape, 0.3))
        assert batch_loss(h, h) == 0.0

    def test_single_cell(self):
        spec = GridSpec(0.0, 0.8, 0.0, 0.8, 0.8)
        a = Heatmap(spec, np.array([[0.2]]))
        b = Heatmap(spec, np.array([[0.6]]))
        assert batch_loss(a, b) == loss_value(0.2, 0.6)

    def test_two_cell_mean(self):
        spec = GridSpec(0.0, 1.6, 0.0, 0.8, 0.8)
        a = Heatmap(spec, np.array([[0.2, 0.9]]))
        b = Heatmap(spec, np.array([[0.6, 0.5]]))
        assert batch_loss(a, b) == pytest.approx((loss_value(0.2, 0.6) + loss_value(0.9, 0.5)) / 2, rel=1e-15)

    def test_spec_mismatch(self):
        spec = GridSpec(0.0, 0.8, 0.0, 0.8, 0.8)
        with pytest.raises(SpecMismatchError):
            batch_loss(Heatmap.zeros(), Heatmap.zeros(spec))

    def test_array_matches_scalar(self):
        xs = np.array([0.1, 0.5, 0.95])
        gts = np.array([0.4, 0.5, 0.3])
        vals, grads = loss_and_grad(xs, gts)
        for x, g, v, d in zip(xs, gts, vals, grads):
            assert v == loss_value(x, g) and d == loss_grad(x, g)
        assert np.array_equal(loss_array(xs, gts), vals)
