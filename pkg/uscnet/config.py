"""
Configuration dataclasses and the ``section.key = value`` file format.

A config file holds one assignment per line::

    # toy run
    model.embed_dim = 48
    model.tap_indices = 2,4,6,8
    train.epochs = 60
    train.lambda = 0.1
    data.signal_strength = 0.9

Every key is optional; absent keys keep the dataclass defaults.
"""
from __future__ import annotations

import dataclasses
import math
import typing
from typing import Tuple

from .exceptions import ConfigError
from .utils.types import (
    to_bool,
    to_float,
    to_int,
    to_int_tuple,
    to_str_tuple,
    to_text,
)


TAP_NAMES = ('z_a', 'z_b', 'z_c', 'z_last')
FUSION_MODES = ('attention', 'concat')
WEIGHTING_MODES = ('dynamic', 'fixed')
# twice the largest stone radius plus a voxel of margin on either side
MIN_CANVAS_SIDE = 11


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    volume_side: int = 16
    patch_side: int = 4
    embed_dim: int = 48
    encoder_layers: int = 8
    tap_indices: Tuple[int, ...] = (2, 4, 6, 8)
    heads: int = 4
    decoder_channels: Tuple[int, ...] = (16, 8)
    ehr_token_count: int = 7
    layer_norm_eps: float = 1e-5
    use_ct: bool = True
    use_ehr: bool = True
    cea_mode: str = 'attention'
    sma_mode: str = 'attention'
    sma_taps: Tuple[str, ...] = ('z_last',)

    @property
    def grid_side(self):
        return self.volume_side // self.patch_side

    @property
    def token_count(self):
        return self.grid_side ** 3

    @property
    def head_dim(self):
        return self.embed_dim // self.heads

    @property
    def decoder_stages(self):
        return int(round(math.log2(self.patch_side)))

    def validate(self):
        extents = (
            self.volume_side, self.patch_side, self.embed_dim, self.encoder_layers, self.heads,
        )
        if min(extents) < 1:
            raise ConfigError("Model extents must be positive", section='model')
        if self.volume_side % self.patch_side:
            raise ConfigError(
                "volume_side must be divisible by patch_side",
                volume_side=self.volume_side,
                patch_side=self.patch_side,
            )
        if self.patch_side < 2 or self.patch_side & (self.patch_side - 1):
            raise ConfigError("patch_side must be a power of two >= 2", patch_side=self.patch_side)
        if self.embed_dim % self.heads:
            raise ConfigError(
                "embed_dim must be divisible by heads",
                embed_dim=self.embed_dim,
                heads=self.heads,
            )
        taps = self.tap_indices
        if len(taps) != 4:
            raise ConfigError("Exactly four tap indices are required", tap_indices=taps)
        if any(later < earlier for earlier, later in zip(taps, taps[1:])):
            raise ConfigError("tap_indices must be ascending", tap_indices=taps)
        if taps[0] < 1 or taps[-1] != self.encoder_layers:
            raise ConfigError(
                "tap_indices must lie in [1, encoder_layers] and end at the last layer",
                tap_indices=taps,
                encoder_layers=self.encoder_layers,
            )
        channels = self.decoder_channels
        if len(channels) != self.decoder_stages:
            raise ConfigError(
                "decoder_channels needs one entry per upsampling stage",
                stages=self.decoder_stages,
                decoder_channels=channels,
            )
        ascending = any(later > earlier for earlier, later in zip(channels, channels[1:]))
        if ascending or min(channels) < 1:
            raise ConfigError(
                "decoder_channels must be positive and descending",
                decoder_channels=channels,
            )
        if self.decoder_stages - 1 > 3:
            raise ConfigError(
                "At most three intermediate decoder stages are supported",
                patch_side=self.patch_side,
            )
        if self.ehr_token_count != 7:
            raise ConfigError(
                "The clinical record has exactly seven fields",
                ehr_token_count=self.ehr_token_count,
            )
        if self.layer_norm_eps <= 0:
            raise ConfigError("layer_norm_eps must be positive", layer_norm_eps=self.layer_norm_eps)
        if not (self.use_ct or self.use_ehr):
            raise ConfigError("At least one of use_ct / use_ehr must be enabled")
        for key in ('cea_mode', 'sma_mode'):
            if getattr(self, key) not in FUSION_MODES:
                raise ConfigError(
                    "{0} must be one of {1}".format(key, ', '.join(FUSION_MODES)),
                    value=getattr(self, key),
                )
        if not self.sma_taps or len(set(self.sma_taps)) != len(self.sma_taps):
            raise ConfigError(
                "sma_taps must be a non-empty set of tap names",
                sma_taps=self.sma_taps,
            )
        unknown = [name for name in self.sma_taps if name not in TAP_NAMES]
        if unknown:
            raise ConfigError(
                "Unknown tap names.  Must be drawn from {0}".format(', '.join(TAP_NAMES)),
                sma_taps=','.join(unknown),
            )
        return self


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    plateau_factor: float = 0.1
    plateau_patience: int = 10
    plateau_min_delta: float = 1e-4
    lr_floor: float = 1e-7
    dice_threshold: float = 0.8
    lambda_: float = 0.1
    gamma: float = 2.0
    alpha: float = 0.25
    seed: int = 0
    folds: int = 5
    weighting: str = 'dynamic'
    fixed_class_weight: float = 0.5
    use_bce: bool = True
    use_focal: bool = True
    window_lo: float = -400.0
    window_hi: float = 2000.0
    spacing: float = 1.0
    workers: int = 1

    def validate(self):
        for key in ('lr', 'plateau_factor', 'lambda_', 'alpha'):
            value = getattr(self, key)
            if not 0.0 < value <= 1.0:
                raise ConfigError("Rate outside (0, 1]", key=_key_name(key), value=value)
        if not 0.0 <= self.weight_decay <= 1.0:
            raise ConfigError("weight_decay outside [0, 1]", value=self.weight_decay)
        for key in ('beta1', 'beta2'):
            beta = getattr(self, key)
            if not 0.0 <= beta < 1.0:
                raise ConfigError("Adam betas must lie in [0, 1)", key=key, value=beta)
        if self.plateau_patience < 1:
            raise ConfigError("plateau_patience must be >= 1", value=self.plateau_patience)
        if self.epochs < 0 or self.batch_size < 1 or self.folds < 1 or self.workers < 1:
            raise ConfigError(
                "epochs must be >= 0 and batch_size / folds / workers >= 1",
                epochs=self.epochs,
                batch_size=self.batch_size,
                folds=self.folds,
                workers=self.workers,
            )
        if not 0.0 < self.dice_threshold < 1.0:
            raise ConfigError("dice_threshold must lie in (0, 1)", value=self.dice_threshold)
        if self.weighting not in WEIGHTING_MODES:
            raise ConfigError(
                "weighting must be one of {0}".format(', '.join(WEIGHTING_MODES)),
                value=self.weighting,
            )
        if not 0.0 <= self.fixed_class_weight <= 1.0:
            raise ConfigError("fixed_class_weight outside [0, 1]", value=self.fixed_class_weight)
        if not (self.use_bce or self.use_focal):
            raise ConfigError("At least one classification loss must be enabled")
        if self.gamma < 0 or self.adam_eps <= 0 or self.lr_floor < 0 or self.plateau_min_delta < 0:
            raise ConfigError(
                "gamma, lr_floor and plateau_min_delta must be non-negative, adam_eps positive",
                gamma=self.gamma,
                adam_eps=self.adam_eps,
                lr_floor=self.lr_floor,
                plateau_min_delta=self.plateau_min_delta,
            )
        if self.window_lo >= self.window_hi:
            raise ConfigError(
                "window_lo must be below window_hi",
                lo=self.window_lo,
                hi=self.window_hi,
            )
        if self.spacing <= 0:
            raise ConfigError("spacing must be positive", value=self.spacing)
        return self


@dataclasses.dataclass(frozen=True)
class GeneratorConfig:
    sample_count: int = 200
    volume_side: int = 16
    canvas_side: int = 24
    class_balance: float = 0.5
    signal_strength: float = 0.9
    seed: int = 0
    min_volume: int = 8
    hu_lo: float = -1024.0
    hu_hi: float = 3000.0
    max_retries: int = 100

    def validate(self):
        if self.sample_count <= 0:
            raise ConfigError("sample_count must be positive", value=self.sample_count)
        if self.volume_side < 4 or self.canvas_side < max(self.volume_side, MIN_CANVAS_SIDE):
            raise ConfigError(
                "Need 4 <= volume_side <= canvas_side and canvas_side >= {0}".format(
                    MIN_CANVAS_SIDE,
                ),
                volume_side=self.volume_side,
                canvas_side=self.canvas_side,
            )
        for key in ('class_balance', 'signal_strength'):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise ConfigError("Value outside [0, 1]", key=key, value=getattr(self, key))
        if self.seed < 0:
            raise ConfigError("seed must be non-negative", value=self.seed)
        if self.min_volume < 1 or self.max_retries < 1:
            raise ConfigError("min_volume and max_retries must be positive")
        if self.hu_lo >= self.hu_hi:
            raise ConfigError("hu_lo must be below hu_hi", lo=self.hu_lo, hi=self.hu_hi)
        return self


@dataclasses.dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    data: GeneratorConfig = dataclasses.field(default_factory=GeneratorConfig)

    def validate(self):
        self.model.validate()
        self.train.validate()
        self.data.validate()
        return self


SECTIONS = {
    'model': ModelConfig,
    'train': TrainConfig,
    'data': GeneratorConfig,
}


PARSERS = {
    int: to_int,
    float: to_float,
    bool: to_bool,
    str: lambda text: text.strip(),
    Tuple[int, ...]: to_int_tuple,
    Tuple[str, ...]: to_str_tuple,
}


def _key_name(field_name):
    # ``lambda`` is a keyword, the dataclass field carries a trailing underscore
    return field_name.rstrip('_')


def _field_types(cls):
    hints = typing.get_type_hints(cls)
    return {
        _key_name(field.name): (field.name, hints[field.name])
        for field in dataclasses.fields(cls)
    }


def parse_config_text(text):
    values = {section: {} for section in SECTIONS}
    for line_number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split('#', 1)[0].strip()
        if not line:
            continue
        key, separator, value = line.partition('=')
        if not separator:
            raise ConfigError("Expected `section.key = value`", line=line_number)
        section, _, name = key.strip().partition('.')
        if section not in SECTIONS:
            raise ConfigError(
                "Unknown section {0!r}.  Must be one of {1}".format(
                    section, ', '.join(sorted(SECTIONS)),
                ),
                line=line_number,
            )
        field_types = _field_types(SECTIONS[section])
        if name not in field_types:
            raise ConfigError("Unknown key {0}.{1}".format(section, name), line=line_number)
        field_name, field_type = field_types[name]
        if field_name in values[section]:
            raise ConfigError("Duplicate key {0}.{1}".format(section, name), line=line_number)
        try:
            values[section][field_name] = PARSERS[field_type](value)
        except ValueError as err:
            raise ConfigError(
                "Bad value for {0}.{1}: {2}".format(section, name, err),
                line=line_number,
            )
    run_config = RunConfig(**{
        section: SECTIONS[section](**section_values)
        for section, section_values in values.items()
    })
    return run_config.validate()


def load_config(path):
    with open(path, 'r', encoding='utf8') as config_file:
        return parse_config_text(config_file.read())


def dump_config(run_config):
    lines = []
    for section in ('model', 'train', 'data'):
        section_config = getattr(run_config, section)
        for field in dataclasses.fields(section_config):
            lines.append("{0}.{1} = {2}".format(
                section,
                _key_name(field.name),
                to_text(getattr(section_config, field.name)),
            ))
    return "\n".join(lines) + "\n"
