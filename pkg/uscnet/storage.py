"""
On-disk layout of datasets and checkpoints.

A dataset directory holds ``manifest.json`` plus ``volume_<id>.f32raw`` and
``mask_<id>.u8raw`` per sample.  A checkpoint directory holds
``checkpoint.json`` plus one ``params.f64raw`` buffer with every parameter
in manifest order.  All buffers are raw little-endian, C order.
"""
from __future__ import annotations

import dataclasses
import logging
import os

import numpy as np
import semantic_version

from .config import (
    GeneratorConfig,
    RunConfig,
    dump_config,
    parse_config_text,
)
from .data_synth import PatientSample
from .exceptions import (
    ConfigError,
    DataError,
)
from .model import restore
from .utils.filesystem import (
    ensure_path_exists,
    read_json,
    read_raw,
    write_json,
    write_raw,
)
from .vtt import (
    EhrRecord,
    EhrStats,
)


logger = logging.getLogger(__name__)


FORMAT_VERSION = '1.0.0'
SUPPORTED_FORMATS = semantic_version.Spec('>=1.0.0,<2.0.0')

MANIFEST_NAME = 'manifest.json'
CHECKPOINT_NAME = 'checkpoint.json'
PARAMS_NAME = 'params.f64raw'


@dataclasses.dataclass(frozen=True)
class Checkpoint:
    params: dict
    run_config: RunConfig
    stats: object
    fold: int
    val_indices: tuple
    epoch: int


def _check_format(payload, path):
    raw_version = payload.get('format_version')
    try:
        version = semantic_version.Version(raw_version)
    except (TypeError, ValueError):
        raise DataError(
            "Missing or malformed format_version",
            path=path,
            format_version=raw_version,
        )
    if version not in SUPPORTED_FORMATS:
        raise DataError(
            "Unsupported format version {0}.  Supported: {1}".format(version, SUPPORTED_FORMATS),
            path=path,
        )


def volume_file(sample_id):
    return 'volume_{0}.f32raw'.format(sample_id)


def mask_file(sample_id):
    return 'mask_{0}.u8raw'.format(sample_id)


def save_dataset(samples, config, path):
    ensure_path_exists(path)
    entries = []
    for sample in samples:
        write_raw(os.path.join(path, volume_file(sample.sample_id)), sample.volume, 'f32')
        write_raw(os.path.join(path, mask_file(sample.sample_id)), sample.mask, 'u8')
        entries.append({
            'sample_id': sample.sample_id,
            'label': sample.label,
            'ehr': sample.ehr.as_dict(),
            'shape': list(sample.volume.shape),
            'volume_file': volume_file(sample.sample_id),
            'mask_file': mask_file(sample.sample_id),
        })
    write_json(os.path.join(path, MANIFEST_NAME), {
        'format_version': FORMAT_VERSION,
        'generator': dataclasses.asdict(config),
        'samples': entries,
    })
    logger.info("Wrote %d samples to %s", len(entries), path)
    return os.path.join(path, MANIFEST_NAME)


def load_dataset(path):
    """
    ``(samples, GeneratorConfig)`` of a dataset directory.
    """
    manifest_path = os.path.join(path, MANIFEST_NAME)
    if not os.path.isfile(manifest_path):
        raise DataError("No dataset manifest found", path=manifest_path)
    manifest = read_json(manifest_path)
    _check_format(manifest, manifest_path)
    try:
        config = GeneratorConfig(**manifest['generator']).validate()
    except (TypeError, ConfigError) as err:
        raise DataError(
            "Manifest carries an invalid generator config: {0}".format(err),
            path=manifest_path,
        )

    samples = []
    for entry in manifest.get('samples', []):
        shape = tuple(entry['shape'])
        try:
            volume = read_raw(os.path.join(path, entry['volume_file']), 'f32', shape)
            mask = read_raw(os.path.join(path, entry['mask_file']), 'u8', shape)
        except (OSError, ValueError) as err:
            raise DataError(
                "Unreadable sample buffer: {0}".format(err),
                sample_id=entry['sample_id'],
            )
        if entry['label'] not in (0, 1):
            raise DataError("Label must be 0 or 1", sample_id=entry['sample_id'])
        samples.append(PatientSample(
            sample_id=entry['sample_id'],
            volume=volume.astype(np.float64),
            mask=mask,
            ehr=EhrRecord.from_dict(entry['ehr']),
            label=int(entry['label']),
        ))
    if not samples:
        raise DataError("Dataset holds no samples", path=path)
    return samples, config


def save_checkpoint(path, params, run_config, stats, fold=0, val_indices=(), epoch=0):
    ensure_path_exists(path)
    entries = []
    offset = 0
    buffers = []
    for name, tensor in params.items():
        data = np.asarray(getattr(tensor, 'data', tensor), dtype=np.float64)
        entries.append({'name': name, 'shape': list(data.shape), 'offset': offset})
        offset += data.size
        buffers.append(data.reshape(-1))
    flat = np.concatenate(buffers) if buffers else np.zeros(0)
    write_raw(os.path.join(path, PARAMS_NAME), flat, 'f64')
    write_json(os.path.join(path, CHECKPOINT_NAME), {
        'format_version': FORMAT_VERSION,
        'config': dump_config(run_config),
        'stats': stats.as_dict() if stats is not None else None,
        'fold': int(fold),
        'val_indices': [int(index) for index in val_indices],
        'epoch': int(epoch),
        'params_file': PARAMS_NAME,
        'param_count': int(offset),
        'params': entries,
    })
    return os.path.join(path, CHECKPOINT_NAME)


def load_checkpoint(checkpoint_path):
    """
    Accepts either the ``checkpoint.json`` file or its directory.
    """
    if os.path.isdir(checkpoint_path):
        checkpoint_path = os.path.join(checkpoint_path, CHECKPOINT_NAME)
    if not os.path.isfile(checkpoint_path):
        raise DataError("No checkpoint found", path=checkpoint_path)
    payload = read_json(checkpoint_path)
    _check_format(payload, checkpoint_path)
    base = os.path.dirname(checkpoint_path)
    try:
        params_path = os.path.join(base, payload['params_file'])
        flat = read_raw(params_path, 'f64', (payload['param_count'],))
    except (OSError, ValueError) as err:
        raise DataError("Unreadable parameter buffer: {0}".format(err), path=checkpoint_path)

    arrays = {}
    for entry in payload['params']:
        shape = tuple(entry['shape'])
        size = int(np.prod(shape))
        arrays[entry['name']] = flat[entry['offset']:entry['offset'] + size].reshape(shape).copy()
    stats = EhrStats.from_dict(payload['stats']) if payload.get('stats') else None
    return Checkpoint(
        params=restore(arrays),
        run_config=parse_config_text(payload['config']),
        stats=stats,
        fold=int(payload['fold']),
        val_indices=tuple(payload['val_indices']),
        epoch=int(payload['epoch']),
    )
