"""Heatmap regression losses with closed-form derivatives.

``RescaleFocal`` compares prediction and target as ratios: below the target it
scores ``x/gt``, above it ``(1-x)/(1-gt)``, each with a focal modulation
``(1 - ratio)^gamma`` on ``-ln(ratio)``. Both inputs are clamped to
``[eps, 1-eps]`` so targets of exactly 0 or 1 stay finite.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import Heatmap


class LossVariant(enum.Enum):
    RESCALE_FOCAL = "RescaleFocal"
    FOCAL = "Focal"
    L1 = "L1"
    L2 = "L2"


@dataclass(frozen=True)
class LossParams:
    alpha_under: float = 1.0
    alpha_over: float = 1.0
    gamma1: float = 2.0
    gamma2: float = 2.0
    epsilon: float = 1e-4
    variant: LossVariant = LossVariant.RESCALE_FOCAL

    def __post_init__(self):
        object.__setattr__(self, "variant", LossVariant(self.variant))
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("focal exponents must be >= 0")
        if not 0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 0.5)")


def _check(x, gt):
    x = np.asarray(x, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if (x < 0).any() or (x > 1).any() or (gt < 0).any() or (gt > 1).any():
        raise ValueError("loss inputs must lie in [0, 1]")
    if not (np.isfinite(x).all() and np.isfinite(gt).all()):
        raise ValueError("loss inputs must be finite")
    return x, gt


def _focal_term(ratio, gamma):
    """``(1-r)^g * -ln r`` and its derivative in ``r``."""
    one_minus = 1.0 - ratio
    log_r = np.log(ratio)
    value = one_minus ** gamma * -log_r
    if gamma == 0:
        d = -1.0 / ratio
    else:
        d = gamma * one_minus ** (gamma - 1) * log_r - one_minus ** gamma / ratio
    return value, d


def _rescale_focal(x, gt, p: LossParams, want_grad: bool):
    eps = p.epsilon
    xc = np.clip(x, eps, 1 - eps)
    gc = np.clip(gt, eps, 1 - eps)
    inside = (x >= eps) & (x <= 1 - eps)  # clamp kills the derivative outside
    under = xc < gc
    over = xc > gc
    r_under = np.where(under, xc / gc, 1.0)
    r_over = np.where(over, (1 - xc) / (1 - gc), 1.0)
    v_u, d_u = _focal_term(r_under, p.gamma1)
    v_o, d_o = _focal_term(r_over, p.gamma2)
    value = np.where(under, p.alpha_under * v_u, 0.0) + np.where(over, p.alpha_over * v_o, 0.0)
    if not want_grad:
        return value
    grad = (np.where(under, p.alpha_under * d_u / gc, 0.0)
            + np.where(over, -p.alpha_over * d_o / (1 - gc), 0.0))
    return value, np.where(inside, grad, 0.0)


def _focal(x, gt, p: LossParams, want_grad: bool):
    eps = p.epsilon
    xc = np.clip(x, eps, 1 - eps)
    inside = (x >= eps) & (x <= 1 - eps)
    pos = gt >= 0.5
    g = p.gamma1
    # positives: -(1-x)^g ln x ; negatives: -x^g ln(1-x)
    v_pos = -((1 - xc) ** g) * np.log(xc)
    v_neg = -(xc ** g) * np.log(1 - xc)
    value = np.where(pos, p.alpha_under * v_pos, p.alpha_over * v_neg)
    if not want_grad:
        return value
    if g == 0:
        d_pos = -1.0 / xc
        d_neg = 1.0 / (1 - xc)
    else:
        d_pos = g * (1 - xc) ** (g - 1) * np.log(xc) - (1 - xc) ** g / xc
        d_neg = -g * xc ** (g - 1) * np.log(1 - xc) + xc ** g / (1 - xc)
    grad = np.where(pos, p.alpha_under * d_pos, p.alpha_over * d_neg)
    return value, np.where(inside, grad, 0.0)


def _l1(x, gt, p, want_grad):
    value = np.abs(x - gt)
    return (value, np.sign(x - gt)) if want_grad else value


def _l2(x, gt, p, want_grad):
    value = (x - gt) ** 2
    return (value, 2.0 * (x - gt)) if want_grad else value


_IMPL = {
    LossVariant.RESCALE_FOCAL: _rescale_focal,
    LossVariant.FOCAL: _focal,
    LossVariant.L1: _l1,
    LossVariant.L2: _l2,
}


def loss_array(x, gt, params: LossParams = LossParams()) -> np.ndarray:
    x, gt = _check(x, gt)
    return _IMPL[params.variant](x, gt, params, False)


def loss_and_grad(x, gt, params: LossParams = LossParams()):
    """Elementwise loss and ``d loss / d x``."""
    x, gt = _check(x, gt)
    return _IMPL[params.variant](x, gt, params, True)


def loss_value(x: float, gt: float, params: LossParams = LossParams()) -> float:
    return float(loss_array(x, gt, params))


def loss_grad(x: float, gt: float, params: LossParams = LossParams()) -> float:
    return float(loss_and_grad(x, gt, params)[1])


def batch_loss(pred: Heatmap, gt: Heatmap, params: LossParams = LossParams()) -> float:
    pred.same_spec(gt)
    values = loss_array(pred.cells, gt.cells, params)
    # fixed-order pairwise summation keeps the mean bit-reproducible
    return float(np.sum(values.ravel()) / values.size)
