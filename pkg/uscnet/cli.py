"""
Command line entry point: ``uscnet generate|train|eval|ablate|gradcheck``.

Progress goes to stderr through logging; stdout only carries results.
"""
from __future__ import annotations

import dataclasses
import functools
import json
import logging
import os
import sys

import click
import numpy as np

from .ablation import (
    SUITES,
    run_ablation,
)
from .config import (
    RunConfig,
    dump_config,
    load_config,
)
from .data_synth import generate_dataset
from .exceptions import (
    DataError,
    USCNetError,
)
from .gradcheck import (
    MODEL_ENTRIES,
    run_suite,
)
from .metrics import subgroup_metrics
from .storage import (
    load_checkpoint,
    load_dataset,
    save_dataset,
)
from .training import (
    evaluate,
    run_cv,
    write_cv_outputs,
)
from .utils.filesystem import ensure_path_exists


logger = logging.getLogger(__name__)


def _configure_logging(verbose, quiet):
    level = logging.INFO
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        force=True,
    )


def _read_config(path):
    if path is None:
        run_config = RunConfig().validate()
    else:
        run_config = load_config(path)
    logger.debug("Effective configuration:\n%s", dump_config(run_config))
    return run_config


def _with_workers(run_config, workers):
    if workers is None:
        return run_config
    return dataclasses.replace(
        run_config,
        train=dataclasses.replace(run_config.train, workers=workers),
    ).validate()


def reports_errors(command):
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except USCNetError as err:
            click.echo(err.as_record(), err=True)
            sys.exit(1)
    return wrapper


@click.group()
@click.option('-v', '--verbose', is_flag=True, help="Debug logging.")
@click.option('-q', '--quiet', is_flag=True, help="Warnings only.")
def main(verbose, quiet):
    """Segmentation-guided stone classification on synthetic CT + clinical data."""
    _configure_logging(verbose, quiet)


@main.command()
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
@reports_errors
def generate(config_path, out_dir):
    """Write a synthetic dataset directory."""
    run_config = _read_config(config_path)
    samples = generate_dataset(run_config.data)
    click.echo(save_dataset(samples, run_config.data, out_dir))


@main.command()
@click.option('--data', 'data_dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
@click.option(
    '--workers', type=click.IntRange(min=1), default=None, help="Folds trained in parallel.",
)
@reports_errors
def train(data_dir, config_path, out_dir, workers):
    """Cross-validated training; writes logs, fold metrics and checkpoints."""
    run_config = _with_workers(_read_config(config_path), workers)
    samples, _ = load_dataset(data_dir)
    result = run_cv(run_config.model, run_config.train, samples)
    write_cv_outputs(result, run_config, out_dir)
    click.echo(json.dumps(result.summary, sort_keys=True))


@main.command(name='eval')
@click.option('--checkpoint', 'checkpoint_path', required=True, type=click.Path(exists=True))
@click.option('--data', 'data_dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option(
    '--all-samples', is_flag=True,
    help="Evaluate every sample, not only the fold's validation split.",
)
@click.option('--subgroups', 'subgroups_path', type=click.Path(dir_okay=False), default=None)
@reports_errors
def evaluate_command(checkpoint_path, data_dir, all_samples, subgroups_path):
    """Metrics of a saved checkpoint."""
    checkpoint = load_checkpoint(checkpoint_path)
    samples, _ = load_dataset(data_dir)
    if all_samples:
        selected = samples
    else:
        if any(index >= len(samples) for index in checkpoint.val_indices):
            raise DataError(
                "Checkpoint validation indices do not fit the dataset",
                samples=len(samples),
            )
        selected = [samples[index] for index in checkpoint.val_indices]
    if not selected:
        raise DataError("No samples to evaluate")
    run_config = checkpoint.run_config
    report, probs = evaluate(
        checkpoint.params, run_config.model, run_config.train, selected, checkpoint.stats,
    )
    if subgroups_path:
        labels = np.array([sample.label for sample in selected])
        table = subgroup_metrics(probs, labels, [sample.ehr for sample in selected])
        parent = os.path.dirname(subgroups_path)
        if parent:
            ensure_path_exists(parent)
        table.to_csv(subgroups_path, index=False)
    click.echo(json.dumps(report.as_dict(), sort_keys=True))


@main.command()
@click.option('--suite', required=True, help="One of: {0}".format(', '.join(sorted(SUITES))))
@click.option('--data', 'data_dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out_path', required=True, type=click.Path(dir_okay=False))
@click.option('--workers', type=click.IntRange(min=1), default=None)
@reports_errors
def ablate(suite, data_dir, config_path, out_path, workers):
    """Run an ablation suite and write the comparison CSV."""
    run_config = _with_workers(_read_config(config_path), workers)
    samples, _ = load_dataset(data_dir)
    table = run_ablation(suite, run_config, samples)
    parent = os.path.dirname(out_path)
    if parent:
        ensure_path_exists(parent)
    table.to_csv(out_path, index=False)
    click.echo(out_path)


@main.command()
@click.option('--full', is_flag=True, help="Include the composed model loss.")
@click.option('--seeds', type=click.IntRange(min=1), default=10)
@click.option(
    '--entries',
    type=click.IntRange(min=1),
    default=MODEL_ENTRIES,
    help="Sampled coordinates per parameter in the composed check.",
)
@reports_errors
def gradcheck(full, seeds, entries):
    """Finite-difference check of every differentiable op."""
    table = run_suite(full=full, seeds=seeds, entries=entries)
    click.echo(table.to_csv(index=False), nl=False)
    if not table['passed'].all():
        sys.exit(1)


@main.command(name='show-config')
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False))
@reports_errors
def show_config(config_path):
    """Print the effective configuration."""
    click.echo(dump_config(_read_config(config_path)), nl=False)
