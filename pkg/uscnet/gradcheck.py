"""
Finite-difference verification of every differentiable operation and of the
composed training loss.

Standalone cases exercise an op through ``sum(w * op(x))`` with positive
weights ``w``; inputs are drawn from regions where the op is smooth, and an
``anchor * sum(x)`` term is added where a gradient component could vanish.

The composed check covers every parameter of the model through the total
loss.  Some components have a true gradient of zero (a key bias only shifts
each softmax row), so those entries are held to an absolute bound of
``MODEL_TOLERANCE * MODEL_GRAD_FLOOR`` instead of a relative one.
"""
from __future__ import annotations

import collections
import dataclasses
import logging

import numpy as np
import pandas as pd

from . import tensor_core as tc
from .config import ModelConfig
from .losses import (
    bce_loss,
    dice_loss,
    focal_loss,
    initial_weights,
    total_loss,
)
from .model import (
    forward,
    init_params,
)
from .vtt import (
    EhrRecord,
    EhrStats,
)


logger = logging.getLogger(__name__)


OP_TOLERANCE = 1e-6
MODEL_TOLERANCE = 1e-4
# composed-loss entries with |gradient| below this are compared absolutely;
# central differences carry about 1e-10 of round-off at eps = 1e-6
MODEL_GRAD_FLOOR = 1e-5
MODEL_ENTRIES = 4
ANCHOR = 10.0

Case = collections.namedtuple('Case', ['name', 'build'])


def _uniform(rng, shape, low=0.5, high=1.5):
    return rng.uniform(low, high, size=shape)


def _weighted_sum(out, weights, x=None, anchor=0.0):
    value = tc.sum(tc.mul(out, weights))
    if anchor:
        value = tc.add(value, tc.mul(tc.sum(x), anchor))
    return value


def _unary(op, low, high, shape=(3, 4), anchor=0.0):
    def build(rng):
        x = _uniform(rng, shape, low, high)
        weights = _uniform(rng, shape)
        return x, lambda t: _weighted_sum(op(t), weights, t, anchor)
    return build


def _binary(op, position, shape=(3, 4), other_shape=None):
    def build(rng):
        x = _uniform(rng, shape)
        other = _uniform(rng, other_shape or shape)
        weights = _uniform(rng, np.broadcast_shapes(shape, other_shape or shape))
        if position == 0:
            return x, lambda t: _weighted_sum(op(t, other), weights)
        return x, lambda t: _weighted_sum(op(other, t), weights)
    return build


def _matmul(position):
    def build(rng):
        a, b = _uniform(rng, (3, 4)), _uniform(rng, (4, 2))
        weights = _uniform(rng, (3, 2))
        if position == 0:
            return a, lambda t: _weighted_sum(tc.matmul(t, b), weights)
        return b, lambda t: _weighted_sum(tc.matmul(a, t), weights)
    return build


def _relu(rng):
    signs = rng.choice([-1.0, 1.0], size=(3, 4))
    x = signs * _uniform(rng, (3, 4))
    weights = _uniform(rng, (3, 4))
    return x, lambda t: _weighted_sum(tc.relu(t), weights)


def _reduction(op, axis):
    def build(rng):
        x = _uniform(rng, (3, 4))
        weights = _uniform(rng, np.sum(x, axis=axis).shape)
        return x, lambda t: _weighted_sum(op(t, axis=axis), weights)
    return build


def _concat(rng):
    x, other = _uniform(rng, (2, 3)), _uniform(rng, (4, 3))
    weights = _uniform(rng, (6, 3))
    return x, lambda t: _weighted_sum(tc.concat([other, t], axis=0), weights)


def _reshape(rng):
    x = _uniform(rng, (3, 4))
    weights = _uniform(rng, (2, 6))
    return x, lambda t: _weighted_sum(tc.reshape(t, (2, 6)), weights)


def _transpose(rng):
    x = _uniform(rng, (2, 3, 4))
    weights = _uniform(rng, (4, 2, 3))
    return x, lambda t: _weighted_sum(tc.transpose(t, (2, 0, 1)), weights)


def _softmax(rng):
    x = rng.uniform(-1.0, 1.0, size=(3, 4))
    weights = _uniform(rng, (3, 4))
    return x, lambda t: _weighted_sum(tc.softmax(t, axis=-1), weights, t, ANCHOR)


def _layer_norm(rng):
    x = rng.normal(size=(3, 5))
    gain, bias = _uniform(rng, (5,)), rng.normal(size=(5,))
    weights = _uniform(rng, (3, 5))
    return x, lambda t: _weighted_sum(tc.layer_norm(t, gain, bias), weights, t, ANCHOR)


def _conv(position, transpose):
    def build(rng):
        if transpose:
            x, kernels, stride = _uniform(rng, (2, 2, 2, 2)), _uniform(rng, (2, 3, 2, 2, 2)), 2
            op = tc.conv_transpose3d
        else:
            x, kernels, stride = _uniform(rng, (2, 4, 4, 4)), _uniform(rng, (3, 2, 3, 3, 3)), 1
            op = tc.conv3d
        padding = 0 if transpose else 1
        weights = _uniform(rng, op(x, kernels, stride=stride, padding=padding).shape)
        def apply(a, b):
            return _weighted_sum(op(a, b, stride=stride, padding=padding), weights)
        if position == 0:
            return x, lambda t: apply(t, kernels)
        return kernels, lambda t: apply(x, t)
    return build


def _dice(rng):
    p = rng.uniform(0.1, 0.9, size=(4, 4))
    g = (rng.random((4, 4)) < 0.5).astype(np.float64)
    g[0, 0] = 1.0
    return p, lambda t: dice_loss(t, g)


def _classification(loss):
    def build(rng):
        p = rng.uniform(0.1, 0.9, size=(6,))
        g = np.array([1.0, 0.0] * 3)
        return p, lambda t: loss(t, g)
    return build


OP_CASES = (
    Case('add', _binary(tc.add, 0, other_shape=(4,))),
    Case('sub', _binary(tc.sub, 1)),
    Case('mul', _binary(tc.mul, 0)),
    Case('div_numerator', _binary(tc.div, 0)),
    Case('div_denominator', _binary(tc.div, 1)),
    Case('pow', _unary(lambda t: tc.power(t, 3.0), 0.5, 1.5)),
    Case('relu', _relu),
    Case('gelu', _unary(tc.gelu, 0.1, 2.0)),
    Case('sigmoid', _unary(tc.sigmoid, -2.0, 2.0)),
    Case('log', _unary(tc.log, 0.5, 1.5)),
    Case('clip', _unary(lambda t: tc.clip(t, -1.0, 1.0), -0.8, 0.8)),
    Case('sum', _reduction(tc.sum, 1)),
    Case('mean', _reduction(tc.mean, 0)),
    Case('concat', _concat),
    Case('reshape', _reshape),
    Case('transpose', _transpose),
    Case('matmul_left', _matmul(0)),
    Case('matmul_right', _matmul(1)),
    Case('softmax', _softmax),
    Case('layer_norm', _layer_norm),
    Case('conv3d_input', _conv(0, False)),
    Case('conv3d_kernel', _conv(1, False)),
    Case('conv_transpose3d_input', _conv(0, True)),
    Case('conv_transpose3d_kernel', _conv(1, True)),
    Case('dice_loss', _dice),
    Case('bce_loss', _classification(bce_loss)),
    Case('focal_loss', _classification(focal_loss)),
)


@dataclasses.dataclass(frozen=True)
class ToyProblem:
    config: ModelConfig
    params: dict
    volume: np.ndarray
    mask: np.ndarray
    record: EhrRecord
    stats: EhrStats
    label: float


def toy_problem(seed=0, config=None):
    """
    One synthetic sample and freshly initialised parameters on the toy config,
    with a random classification head so every branch carries gradient.
    """
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    params = init_params(config, seed=seed)
    params['head.w'].data = rng.normal(0.0, 0.5, size=params['head.w'].shape)
    side = config.volume_side
    volume = rng.uniform(0.0, 1.0, size=(side,) * 3)
    mask = np.zeros((1,) + (side,) * 3)
    mask[0, side // 4:3 * side // 4, side // 4:3 * side // 4, side // 4:3 * side // 4] = 1.0
    records = [
        EhrRecord(age, gender, leuko, creat, urine, ph, location)
        for age, gender, leuko, creat, urine, ph, location in (
            (45.0, 'male', 6.5, 78.0, 15.0, 5.8, 'left_kidney'),
            (62.0, 'female', 9.1, 96.0, 70.0, 7.4, 'bladder'),
            (38.0, 'female', 7.7, 85.0, 35.0, 6.6, 'ureter'),
        )
    ]
    return ToyProblem(config, params, volume, mask, records[1], EhrStats.from_records(records), 1.0)


def composed_loss(problem, name):
    """
    Total loss of the toy problem as a function of parameter ``name``.
    """
    weights = initial_weights()
    label = np.array([problem.label])

    def loss(value):
        params = dict(problem.params)
        params[name] = value
        output = forward(params, problem.volume, problem.record, problem.stats, problem.config)
        return total_loss(
            dice_loss(output.seg_prob, problem.mask),
            bce_loss(output.class_prob, label),
            focal_loss(output.class_prob, label, weights.gamma, weights.alpha),
            weights,
        )
    return problem.params[name].data, loss


def model_entries(problem, name, count, seed):
    """
    ``count`` flat entries of parameter ``name``, drawn without replacement
    from a stream keyed on the seed and the parameter's position.
    """
    size = problem.params[name].size
    position = list(problem.params).index(name)
    rng = np.random.default_rng([seed, position])
    return np.sort(rng.choice(size, size=min(count, size), replace=False))


def check_model_param(problem, name, entries=MODEL_ENTRIES, seed=0):
    x, f = composed_loss(problem, name)
    indices = model_entries(problem, name, entries, seed)
    return tc.grad_check(f, x, floor=MODEL_GRAD_FLOOR, indices=indices)


def run_suite(full=False, seeds=10, model_seeds=1, config=None, entries=MODEL_ENTRIES):
    """
    ``(case, seed, error, tolerance, passed)`` rows; ``full`` adds the
    composed model loss, checked at ``entries`` sampled coordinates of every
    parameter of ``config``.
    """
    rows = []
    for case in OP_CASES:
        for seed in range(seeds):
            x, f = case.build(np.random.default_rng(seed))
            error = tc.grad_check(f, x)
            rows.append((case.name, seed, error, OP_TOLERANCE, error < OP_TOLERANCE))
    if full:
        for seed in range(model_seeds):
            problem = toy_problem(seed, config)
            for name in problem.params:
                error = check_model_param(problem, name, entries, seed)
                passed = error < MODEL_TOLERANCE
                rows.append(('model:' + name, seed, error, MODEL_TOLERANCE, passed))
    frame = pd.DataFrame(rows, columns=['case', 'seed', 'error', 'tolerance', 'passed'])
    failed = int((~frame['passed']).sum())
    if failed:
        logger.warning("%d gradient checks failed", failed)
    return frame
