import json
import os

import pytest

from click.testing import CliRunner

from uscnet.cli import main
from uscnet.config import (
    dump_config,
    parse_config_text,
)
from uscnet.metrics import REPORT_FIELDS
from uscnet.storage import load_dataset


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def config_path(tmpdir, tiny_run_config):
    path = tmpdir.join('tiny.cfg')
    path.write(dump_config(tiny_run_config))
    return str(path)


@pytest.fixture()
def train_dir(tmpdir, runner, dataset_dir, config_path):
    out_dir = str(tmpdir.join('run'))
    result = runner.invoke(main, [
        '-q', 'train', '--data', dataset_dir, '--config', config_path, '--out', out_dir,
    ])
    assert result.exit_code == 0, result.output
    return out_dir


def test_show_config_defaults(runner):
    result = runner.invoke(main, ['show-config'])

    assert result.exit_code == 0
    assert 'model.embed_dim = 48' in result.output
    assert 'train.lambda = 0.1' in result.output


def test_show_config_echoes_a_file(runner, config_path, tiny_run_config):
    result = runner.invoke(main, ['-q', 'show-config', '--config', config_path])

    assert parse_config_text(result.output) == tiny_run_config


def test_bad_config_is_reported_as_a_record(runner, tmpdir):
    path = tmpdir.join('bad.cfg')
    path.write('model.heads = many\n')

    result = runner.invoke(main, ['show-config', '--config', str(path)])

    assert result.exit_code == 1
    assert 'error=ConfigError' in result.output
    assert 'line=1' in result.output


def test_generate(runner, tmpdir, config_path, tiny_data_config):
    out_dir = str(tmpdir.join('generated'))

    result = runner.invoke(main, ['-q', 'generate', '--config', config_path, '--out', out_dir])

    assert result.exit_code == 0, result.output
    assert result.output.strip() == os.path.join(out_dir, 'manifest.json')
    samples, config = load_dataset(out_dir)
    assert len(samples) == tiny_data_config.sample_count
    assert config == tiny_data_config


def test_train_writes_outputs(train_dir):
    for name in ('epochlog.csv', 'fold_metrics.csv', 'weights_trajectory.csv', 'summary.json'):
        assert os.path.exists(os.path.join(train_dir, name))
    assert os.path.exists(os.path.join(train_dir, 'fold_0', 'checkpoint.json'))
    with open(os.path.join(train_dir, 'summary.json')) as summary_file:
        summary = json.load(summary_file)
    assert summary['folds'] == 2
    assert set(summary['metrics']) == set(REPORT_FIELDS)


def read_bytes(path):
    with open(path, 'rb') as binary_file:
        return binary_file.read()


def test_generate_and_train_are_reproducible(runner, tmpdir, config_path):
    runs = []
    for attempt in ('first', 'second'):
        data_dir = str(tmpdir.join('data_' + attempt))
        out_dir = str(tmpdir.join('run_' + attempt))
        generated = runner.invoke(main, ['-q', 'generate', '--config', config_path, '--out', data_dir])
        trained = runner.invoke(main, [
            '-q', 'train', '--data', data_dir, '--config', config_path, '--out', out_dir,
        ])
        assert generated.exit_code == 0, generated.output
        assert trained.exit_code == 0, trained.output
        runs.append((data_dir, out_dir))

    (first_data, first_run), (second_data, second_run) = runs
    assert sorted(os.listdir(first_data)) == sorted(os.listdir(second_data))
    for name in os.listdir(first_data):
        assert read_bytes(os.path.join(first_data, name)) == read_bytes(os.path.join(second_data, name))
    for name in ('epochlog.csv', os.path.join('fold_0', 'params.f64raw')):
        assert read_bytes(os.path.join(first_run, name)) == read_bytes(os.path.join(second_run, name))


def test_eval_with_subgroups(runner, train_dir, dataset_dir, tmpdir):
    subgroups = str(tmpdir.join('tables', 'subgroups.csv'))

    result = runner.invoke(main, [
        '-q', 'eval',
        '--checkpoint', os.path.join(train_dir, 'fold_0'),
        '--data', dataset_dir,
        '--subgroups', subgroups,
    ])

    assert result.exit_code == 0, result.output
    report = json.loads(result.output)
    assert set(report) == set(REPORT_FIELDS)
    assert 0.0 <= report['acc'] <= 1.0
    with open(subgroups) as table:
        assert table.readline().strip() == 'group,value,n,acc,f1,recall,precision,auc'


def test_eval_all_samples(runner, train_dir, dataset_dir):
    result = runner.invoke(main, [
        '-q', 'eval', '--checkpoint', os.path.join(train_dir, 'fold_1'), '--data', dataset_dir,
        '--all-samples',
    ])

    assert result.exit_code == 0, result.output
    assert 'dice' in json.loads(result.output)


def test_eval_without_checkpoint(runner, tmpdir, dataset_dir):
    empty = str(tmpdir.mkdir('empty'))

    result = runner.invoke(main, ['eval', '--checkpoint', empty, '--data', dataset_dir])

    assert result.exit_code == 1
    assert 'error=DataError' in result.output


def test_ablate_rejects_unknown_suite(runner, tmpdir, dataset_dir):
    result = runner.invoke(main, [
        'ablate', '--suite', 'layers', '--data', dataset_dir, '--out', str(tmpdir.join('a.csv')),
    ])

    assert result.exit_code == 1
    assert 'error=ConfigError' in result.output


def test_workers_must_be_positive(runner, tmpdir, dataset_dir):
    result = runner.invoke(main, [
        'train', '--data', dataset_dir, '--out', str(tmpdir.join('run')), '--workers', '0',
    ])

    assert result.exit_code == 2


def test_gradcheck(runner):
    result = runner.invoke(main, ['-q', 'gradcheck', '--seeds', '1'])

    assert result.exit_code == 0, result.output
    assert result.output.splitlines()[0] == 'case,seed,error,tolerance,passed'
