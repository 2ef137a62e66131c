"""
Adam with L2 folded into the gradient, and plateau learning-rate decay.
"""
from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np

from .exceptions import (
    ShapeError,
    TrainingError,
)


logger = logging.getLogger(__name__)


@dataclasses.dataclass
class OptimizerState:
    first_moment: dict = dataclasses.field(default_factory=dict)
    second_moment: dict = dataclasses.field(default_factory=dict)
    step: int = 0


@dataclasses.dataclass
class PlateauState:
    lr: float
    best: float = math.inf
    bad_epochs: int = 0
    reductions: int = 0


def adam_step(params, grads, state, config, lr=None):
    """
    One Adam update of every tensor in ``params``, in place.  Parameters
    without a gradient are treated as having a zero gradient.
    """
    lr = config.lr if lr is None else lr
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise TrainingError("Non-finite gradient", parameter=name, step=state.step + 1)

    state.step += 1
    beta1, beta2 = config.beta1, config.beta2
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for name, param in params.items():
        grad = grads.get(name)
        grad = np.zeros(param.shape) if grad is None else np.asarray(grad, dtype=np.float64)
        if grad.shape != param.shape:
            raise ShapeError("Gradient shape differs from its parameter", parameter=name,
                             param=param.shape, grad=grad.shape)
        if config.weight_decay:
            grad = grad + config.weight_decay * param.data

        m = state.first_moment.get(name, np.zeros(param.shape))
        v = state.second_moment.get(name, np.zeros(param.shape))
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v

        m_hat = m / correction1
        v_hat = v / correction2
        param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return params, state


def reduce_lr_on_plateau(loss, state, config):
    """
    Feed one epoch's validation loss.  The rate is multiplied by
    ``plateau_factor`` once more than ``plateau_patience`` consecutive epochs
    fail to beat the best loss by ``plateau_min_delta``; it never drops below
    ``lr_floor``.
    """
    if loss < state.best - config.plateau_min_delta:
        state.best = loss
        state.bad_epochs = 0
        return state

    state.bad_epochs += 1
    if state.bad_epochs > config.plateau_patience:
        reduced = max(state.lr * config.plateau_factor, config.lr_floor)
        if reduced < state.lr:
            logger.info("Reducing learning rate %.3e -> %.3e", state.lr, reduced)
            state.reductions += 1
        state.lr = reduced
        state.bad_epochs = 0
    return state
