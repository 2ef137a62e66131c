import dataclasses

import pytest

import numpy as np

from uscnet import tensor_core as tc
from uscnet.config import TrainConfig
from uscnet.exceptions import (
    ShapeError,
    TrainingError,
)
from uscnet.optim import (
    OptimizerState,
    PlateauState,
    adam_step,
    reduce_lr_on_plateau,
)


def test_first_adam_step_moves_by_the_learning_rate():
    config = TrainConfig(lr=0.01, weight_decay=0.0)
    params = {'w': tc.Tensor([1.0, -1.0], requires_grad=True)}
    state = OptimizerState()

    adam_step(params, {'w': np.array([0.5, -2.0])}, state, config)

    # bias corrected first step is lr * sign(grad)
    assert np.allclose(params['w'].data, [0.99, -0.99], atol=1e-6)
    assert state.step == 1


def test_weight_decay_is_folded_into_the_gradient():
    config = TrainConfig(lr=0.01, weight_decay=0.5)
    params = {'w': tc.Tensor([2.0], requires_grad=True)}

    adam_step(params, {}, OptimizerState(), config)

    # zero gradient, decay alone pulls the weight towards zero
    assert params['w'].data[0] == pytest.approx(1.99)


def test_explicit_learning_rate_overrides_config():
    config = TrainConfig(lr=0.01, weight_decay=0.0)
    params = {'w': tc.Tensor([0.0], requires_grad=True)}

    adam_step(params, {'w': np.array([1.0])}, OptimizerState(), config, lr=0.1)

    assert params['w'].data[0] == pytest.approx(-0.1, abs=1e-6)


def test_adam_minimises_a_quadratic():
    config = TrainConfig(lr=0.05, weight_decay=0.0)
    params = {'w': tc.Tensor([3.0, -2.0], requires_grad=True)}
    state = OptimizerState()
    for _ in range(500):
        adam_step(params, {'w': 2.0 * params['w'].data}, state, config)

    assert np.allclose(params['w'].data, 0.0, atol=0.05)


def test_non_finite_gradient_names_the_parameter():
    config = TrainConfig()
    params = {'w': tc.Tensor([1.0], requires_grad=True)}

    with pytest.raises(TrainingError) as err:
        adam_step(params, {'w': np.array([np.nan])}, OptimizerState(), config)

    assert err.value.context['parameter'] == 'w'
    assert params['w'].data[0] == 1.0


def test_gradient_shape_mismatch():
    params = {'w': tc.Tensor([1.0, 2.0], requires_grad=True)}

    with pytest.raises(ShapeError):
        adam_step(params, {'w': np.ones(3)}, OptimizerState(), TrainConfig())


def test_plateau_reduces_after_patience_is_exceeded():
    config = TrainConfig(lr=1e-3, plateau_patience=2, plateau_factor=0.1)
    state = PlateauState(lr=config.lr)

    history = []
    for loss in (1.0, 1.0, 1.0, 1.0, 1.0):
        reduce_lr_on_plateau(loss, state, config)
        history.append(state.lr)

    assert history == pytest.approx([1e-3, 1e-3, 1e-3, 1e-4, 1e-4])
    assert state.reductions == 1


def test_plateau_improvement_resets_the_counter():
    config = TrainConfig(plateau_patience=1)
    state = PlateauState(lr=config.lr)
    for loss in (1.0, 1.0, 0.5, 0.5):
        reduce_lr_on_plateau(loss, state, config)

    assert state.lr == config.lr
    assert state.best == 0.5


def test_plateau_respects_the_floor():
    config = dataclasses.replace(
        TrainConfig(), lr=4e-7, lr_floor=1e-7, plateau_factor=0.5, plateau_patience=1,
    )
    state = PlateauState(lr=config.lr, best=0.0)
    for _ in range(12):
        reduce_lr_on_plateau(1.0, state, config)

    assert state.lr == 1e-7
    assert state.reductions == 2
