"""
Segmentation and classification losses and the per-epoch loss weighting.
"""
from __future__ import annotations

import dataclasses
import logging

from . import tensor_core as tc
from .exceptions import (
    ConfigError,
    DomainError,
    ShapeError,
)


logger = logging.getLogger(__name__)


DICE_EPS = 1e-7
PROB_EPS = 1e-7
DEFAULT_LAMBDA = 0.1
DEFAULT_GAMMA = 2.0
DEFAULT_ALPHA = 0.25
DEFAULT_THRESHOLD = 0.8
INITIAL_DICE_WEIGHT = 0.8


@dataclasses.dataclass(frozen=True)
class LossWeights:
    w_dice: float
    w_bce: float
    w_focal: float
    lambda_: float = DEFAULT_LAMBDA
    gamma: float = DEFAULT_GAMMA
    alpha: float = DEFAULT_ALPHA

    @property
    def w_class(self):
        return self.w_bce + self.w_focal

    def as_tuple(self):
        return (self.w_dice, self.w_bce, self.w_focal)


def _pair(p, g, kind):
    p, g = tc.as_tensor(p), tc.as_tensor(g)
    if p.shape != g.shape:
        raise ShapeError("Prediction and target shapes differ", op=kind, p=p.shape, g=g.shape)
    return p, g


def dice_loss(p, g):
    p, g = _pair(p, g, 'dice_loss')
    overlap = tc.sum(tc.mul(p, g))
    denominator = tc.add(tc.add(tc.sum(p), float(g.data.sum())), DICE_EPS)
    return tc.sub(1.0, tc.div(tc.mul(overlap, 2.0), denominator))


def bce_loss(p, g):
    p, g = _pair(p, g, 'bce_loss')
    p = tc.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    positive = tc.mul(g, tc.log(p))
    negative = tc.mul(tc.sub(1.0, g), tc.log(tc.sub(1.0, p)))
    return tc.mul(tc.mean(tc.add(positive, negative)), -1.0)


def focal_loss(p, g, gamma=DEFAULT_GAMMA, alpha=DEFAULT_ALPHA):
    """
    Alpha-balanced focal loss: positives weighted by ``alpha``, negatives by
    ``1 - alpha``, both modulated by ``(1 - p_t) ** gamma``.
    """
    p, g = _pair(p, g, 'focal_loss')
    p = tc.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    q = tc.sub(1.0, p)
    positive = tc.mul(tc.mul(g, tc.power(q, gamma)), tc.log(p))
    negative = tc.mul(tc.mul(tc.sub(1.0, g), tc.power(p, gamma)), tc.log(q))
    weighted = tc.add(tc.mul(positive, alpha), tc.mul(negative, 1.0 - alpha))
    return tc.mul(tc.mean(weighted), -1.0)


def total_loss(l_dice, l_bce, l_focal, weights):
    """
    ``w_dice * l_dice + w_bce * l_bce + w_focal * l_focal``; a ``None``
    component is left out.
    """
    terms = [
        tc.mul(loss, weight)
        for loss, weight in zip((l_dice, l_bce, l_focal), weights.as_tuple())
        if loss is not None
    ]
    if not terms:
        raise DomainError("total_loss needs at least one component")
    total = terms[0]
    for term in terms[1:]:
        total = tc.add(total, term)
    return total


def _check_lambda(lambda_):
    if not 0.0 <= lambda_ <= 1.0:
        raise DomainError("lambda outside [0, 1]", value=lambda_)


def update_weights(s_dice, lambda_=DEFAULT_LAMBDA, threshold=DEFAULT_THRESHOLD,
                   gamma=DEFAULT_GAMMA, alpha=DEFAULT_ALPHA):
    """
    Weights for the next epoch from the validation Dice score: the worse the
    segmentation, the more weight on Dice; past ``threshold`` the split is
    frozen at ``(1 - threshold, threshold)``.
    """
    if not 0.0 <= s_dice <= 1.0:
        raise DomainError("Dice score outside [0, 1]", s_dice=s_dice)
    _check_lambda(lambda_)
    s = min(s_dice, threshold)
    w_bce = lambda_ * s
    return LossWeights(1.0 - s, w_bce, s - w_bce, lambda_, gamma, alpha)


def fixed_weights(class_weight, lambda_=DEFAULT_LAMBDA, gamma=DEFAULT_GAMMA, alpha=DEFAULT_ALPHA):
    if not 0.0 <= class_weight <= 1.0:
        raise DomainError("Class weight outside [0, 1]", class_weight=class_weight)
    _check_lambda(lambda_)
    w_bce = lambda_ * class_weight
    return LossWeights(1.0 - class_weight, w_bce, class_weight - w_bce, lambda_, gamma, alpha)


def initial_weights(lambda_=DEFAULT_LAMBDA, gamma=DEFAULT_GAMMA, alpha=DEFAULT_ALPHA):
    return fixed_weights(1.0 - INITIAL_DICE_WEIGHT, lambda_, gamma, alpha)


def reallocate(weights, use_bce=True, use_focal=True):
    """
    Move the weight of a disabled classification loss onto the remaining one.
    """
    if not (use_bce or use_focal):
        raise ConfigError("At least one classification loss must be enabled")
    if use_bce and use_focal:
        return weights
    if use_bce:
        return dataclasses.replace(weights, w_bce=weights.w_class, w_focal=0.0)
    return dataclasses.replace(weights, w_bce=0.0, w_focal=weights.w_class)


def schedule_weights(train_config, s_dice=None):
    """
    Loss weights for an epoch under ``train_config``.  ``s_dice`` is the
    previous epoch's validation Dice, ``None`` before the first validation.
    """
    args = (train_config.lambda_, train_config.gamma, train_config.alpha)
    if train_config.weighting == 'fixed':
        weights = fixed_weights(train_config.fixed_class_weight, *args)
    elif s_dice is None:
        weights = initial_weights(*args)
    else:
        weights = update_weights(s_dice, train_config.lambda_, train_config.dice_threshold,
                                 train_config.gamma, train_config.alpha)
        logger.debug(
            "Scheduled loss weights dice=%.4f bce=%.4f focal=%.4f from s_dice=%.4f",
            weights.w_dice, weights.w_bce, weights.w_focal, s_dice,
        )
    return reallocate(weights, train_config.use_bce, train_config.use_focal)
