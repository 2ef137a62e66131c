import textwrap

import pytest

from uscnet.config import (
    ModelConfig,
    RunConfig,
    TrainConfig,
    dump_config,
    load_config,
    parse_config_text,
)
from uscnet.exceptions import ConfigError


def test_empty_text_gives_the_defaults():
    assert parse_config_text('') == RunConfig()


def test_parse_config_text():
    run_config = parse_config_text(textwrap.dedent('''\
        # toy run
        model.embed_dim = 32
        model.tap_indices = 1, 2, 3, 4
        model.encoder_layers = 4
        model.sma_taps = z_a,z_last

        train.lambda = 0.2   # classification split
        train.use_focal = no
        data.signal_strength = 0.5
        '''))

    assert run_config.model.embed_dim == 32
    assert run_config.model.tap_indices == (1, 2, 3, 4)
    assert run_config.model.sma_taps == ('z_a', 'z_last')
    assert run_config.train.lambda_ == 0.2
    assert run_config.train.use_focal is False
    assert run_config.data.signal_strength == 0.5


def test_dump_config_round_trips(tiny_run_config):
    text = dump_config(tiny_run_config)

    assert 'train.lambda = 0.1\n' in text
    assert 'model.tap_indices = 1,1,2,2\n' in text
    assert parse_config_text(text) == tiny_run_config


def test_load_config(tmpdir, tiny_run_config):
    path = tmpdir.join('run.cfg')
    path.write(dump_config(tiny_run_config))

    assert load_config(str(path)) == tiny_run_config


@pytest.mark.parametrize(
    "text,needle",
    (
        ('model.embed_dim 32', 'Expected'),
        ('optim.lr = 0.1', 'Unknown section'),
        ('model.depth = 3', 'Unknown key model.depth'),
        ('model.embed_dim = 3.5', 'Bad value for model.embed_dim'),
        ('model.use_ct = maybe', 'Bad value for model.use_ct'),
        ('train.lr = 0.1\ntrain.lr = 0.2', 'Duplicate key train.lr'),
    ),
)
def test_parse_errors_name_the_problem(text, needle):
    with pytest.raises(ConfigError) as err:
        parse_config_text(text)

    assert needle in str(err.value)
    assert 'line' in err.value.context


def test_parse_errors_carry_the_line_number():
    with pytest.raises(ConfigError) as err:
        parse_config_text('\n# comment\nmodel.heads = x')

    assert err.value.context['line'] == 3


@pytest.mark.parametrize(
    "changes",
    (
        {'volume_side': 10},
        {'patch_side': 3, 'volume_side': 12},
        {'embed_dim': 10, 'heads': 4},
        {'tap_indices': (2, 1, 4, 8)},
        {'tap_indices': (2, 4, 6, 7)},
        {'tap_indices': (2, 4, 8)},
        {'decoder_channels': (16,)},
        {'decoder_channels': (8, 16)},
        {'ehr_token_count': 6},
        {'use_ct': False, 'use_ehr': False},
        {'cea_mode': 'sum'},
        {'sma_taps': ()},
        {'sma_taps': ('z_d',)},
        {'sma_taps': ('z_a', 'z_a')},
    ),
)
def test_model_config_invariants(changes):
    with pytest.raises(ConfigError):
        ModelConfig(**changes).validate()


def test_patch_side_beyond_the_tap_supply():
    with pytest.raises(ConfigError):
        ModelConfig(volume_side=32, patch_side=32, decoder_channels=(32, 16, 8, 4, 2)).validate()


@pytest.mark.parametrize(
    "changes",
    (
        {'lr': 0.0},
        {'lambda_': 1.5},
        {'beta2': 1.0},
        {'plateau_patience': 0},
        {'batch_size': 0},
        {'dice_threshold': 1.0},
        {'weighting': 'adaptive'},
        {'use_bce': False, 'use_focal': False},
        {'window_lo': 100.0, 'window_hi': 100.0},
    ),
)
def test_train_config_invariants(changes):
    with pytest.raises(ConfigError):
        TrainConfig(**changes).validate()


def test_defaults_are_valid():
    assert RunConfig().validate() == RunConfig()
