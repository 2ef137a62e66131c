import dataclasses

import pytest

import numpy as np

from uscnet import tensor_core as tc
from uscnet.losses import (
    bce_loss,
    dice_loss,
    focal_loss,
    initial_weights,
    total_loss,
)
from uscnet.model import (
    forward,
    init_params,
    parameter_count,
    restore,
    snapshot,
)


@pytest.fixture()
def volume(tiny_model_config, rng):
    return rng.uniform(size=(tiny_model_config.volume_side,) * 3)


def test_init_params_is_deterministic(tiny_model_config):
    first = init_params(tiny_model_config, seed=[0, 1])
    second = init_params(tiny_model_config, seed=[0, 1])
    other = init_params(tiny_model_config, seed=[0, 2])

    assert list(first) == list(second)
    assert all(np.array_equal(first[name].data, second[name].data) for name in first)
    assert not np.array_equal(first['patch.projection'].data, other['patch.projection'].data)


def test_init_params_are_leaves(tiny_model_config):
    params = init_params(tiny_model_config)

    assert all(tensor.requires_grad for tensor in params.values())
    assert all(tensor.tape is None for tensor in params.values())
    assert np.all(params['head.w'].data == 0.0)


def test_variant_parameter_sets(tiny_model_config):
    full = init_params(tiny_model_config)
    ehr_only = init_params(dataclasses.replace(tiny_model_config, use_ct=False))
    ct_only = init_params(dataclasses.replace(tiny_model_config, use_ehr=False))
    concat = init_params(dataclasses.replace(tiny_model_config, cea_mode='concat'))

    assert 'cea.w_q' in full and 'sma.w_q' in full
    assert set(ehr_only) == {name for name in full if name.startswith(('ehr.', 'head.'))}
    assert not any(name.startswith(('ehr.', 'cea.', 'sma.')) for name in ct_only)
    assert 'cea.w' in concat and 'cea.w_q' not in concat
    assert concat['cea.w'].shape == (2 * tiny_model_config.embed_dim, tiny_model_config.embed_dim)


def test_full_forward(tiny_model_config, volume, records, stats):
    params = init_params(tiny_model_config)

    output = forward(params, volume, records[0], stats, tiny_model_config)

    assert output.seg_logits.shape == (1,) + volume.shape
    assert output.class_prob.shape == (1,)
    # zero initialised head
    assert output.class_prob.item() == 0.5
    assert output.fusion.cefr.shape == (tiny_model_config.token_count, tiny_model_config.embed_dim)
    assert output.fusion.msfr.shape == output.fusion.cefr.shape


def test_ehr_only_forward_has_no_segmentation(tiny_model_config, volume, records, stats):
    config = dataclasses.replace(tiny_model_config, use_ct=False)
    params = init_params(config)

    output = forward(params, volume, records[0], stats, config)

    assert output.seg_logits is None
    assert output.seg_prob is None
    assert output.class_prob.shape == (1,)


def test_ct_only_forward_needs_no_record(tiny_model_config, volume):
    config = dataclasses.replace(tiny_model_config, use_ehr=False)
    params = init_params(config)

    output = forward(params, volume, None, None, config)

    assert output.fusion is None
    assert output.seg_logits.shape == (1,) + volume.shape


def test_forward_is_deterministic(tiny_model_config, volume, records, stats):
    params = init_params(tiny_model_config)
    params['head.w'].data = np.linspace(-1.0, 1.0, tiny_model_config.embed_dim)[:, np.newaxis]

    first = forward(params, volume, records[1], stats, tiny_model_config)
    second = forward(params, volume, records[1], stats, tiny_model_config)

    assert np.array_equal(first.seg_logits.data, second.seg_logits.data)
    assert first.class_prob.item() == second.class_prob.item()


def test_every_parameter_receives_a_gradient(tiny_model_config, volume, records, stats):
    params = init_params(tiny_model_config)
    params['head.w'].data = np.full((tiny_model_config.embed_dim, 1), 0.1)
    mask = np.zeros((1,) + volume.shape)
    mask[0, 2:6, 2:6, 2:6] = 1.0
    label = np.array([1.0])
    weights = initial_weights()

    with tc.Tape() as tape:
        output = forward(params, volume, records[0], stats, tiny_model_config)
        loss = total_loss(
            dice_loss(output.seg_prob, mask),
            bce_loss(output.class_prob, label),
            focal_loss(output.class_prob, label),
            weights,
        )
    grads = tc.backward(tape, loss)

    assert set(grads) == set(params.values())


def test_snapshot_and_restore(tiny_model_config):
    params = init_params(tiny_model_config)
    arrays = snapshot(params)
    params['head.b'].data = np.array([5.0])

    restored = restore(arrays)

    assert restored['head.b'].data[0] == 0.0
    assert restored['head.b'].requires_grad
    assert parameter_count(restored) == parameter_count(params)
