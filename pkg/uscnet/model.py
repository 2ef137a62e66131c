"""
Parameter initialisation and the composed forward pass.

The parameter map is an insertion ordered ``{name: Tensor}`` dict of
``requires_grad`` leaves; only the parameters of the configured variant are
created.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from . import tensor_core as tc
from .msaf import (
    ATTENTION_PARAMS,
    FusionState,
    cea,
    class_logit,
    sma,
)
from .segmenter import (
    decoder_layout,
    encoder_prefix,
    unetr_decode,
    vit_encode,
)
from .vtt import (
    EHR_FIELDS,
    embed_patches,
    encode_ehr,
    feature_width,
    patchify,
)


POSITION_STD = 0.02


@dataclasses.dataclass(frozen=True)
class ModelOutput:
    seg_logits: object
    class_prob: tc.Tensor
    taps: object
    fusion: object

    @property
    def seg_prob(self):
        if self.seg_logits is None:
            return None
        return tc.sigmoid(self.seg_logits)


class _Initializer(object):
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.params = {}

    def add(self, name, data):
        self.params[name] = tc.Tensor(data, requires_grad=True, name=name)

    def normal(self, name, shape, std):
        self.add(name, self.rng.normal(0.0, std, size=shape))

    def linear(self, name, fan_in, fan_out):
        self.normal(name, (fan_in, fan_out), 1.0 / np.sqrt(fan_in))

    def zeros(self, name, shape):
        self.add(name, np.zeros(shape))

    def ones(self, name, shape):
        self.add(name, np.ones(shape))

    def conv(self, name, out_channels, in_channels, side):
        fan_in = in_channels * side ** 3
        shape = (out_channels, in_channels) + (side,) * 3
        self.normal(name + '.kernel', shape, np.sqrt(2.0 / fan_in))
        self.zeros(name + '.bias', (out_channels, 1, 1, 1))

    def up(self, name, in_channels, out_channels):
        # transposed kernels are [C_in, C_out, k, k, k]
        shape = (in_channels, out_channels, 2, 2, 2)
        self.normal(name + '.kernel', shape, np.sqrt(2.0 / in_channels))
        self.zeros(name + '.bias', (out_channels, 1, 1, 1))

    def layer_norm(self, prefix, width):
        self.ones(prefix + '.gain', (width,))
        self.zeros(prefix + '.bias', (width,))

    def attention(self, prefix, width):
        for name in ATTENTION_PARAMS:
            if name.startswith('w_'):
                self.linear('{0}.{1}'.format(prefix, name), width, width)
            else:
                self.zeros('{0}.{1}'.format(prefix, name), (width,))

    def fusion(self, prefix, width, mode):
        if mode == 'concat':
            self.linear(prefix + '.w', 2 * width, width)
            self.zeros(prefix + '.b', (width,))
        else:
            self.attention(prefix, width)
        self.layer_norm(prefix + '.ln', width)


def init_params(config, seed=0):
    """
    Fresh parameters for ``config``; identical ``(config, seed)`` give
    identical values.
    """
    init = _Initializer(seed)
    width = config.embed_dim

    if config.use_ehr:
        for field in EHR_FIELDS:
            init.normal('ehr.' + field, (feature_width(field), width), 1.0)

    if config.use_ct:
        init.linear('patch.projection', config.patch_side ** 3, width)
        init.normal('patch.pos', (config.token_count, width), POSITION_STD)
        for layer in range(1, config.encoder_layers + 1):
            prefix = encoder_prefix(layer)
            init.layer_norm(prefix + '.ln1', width)
            init.attention(prefix + '.attn', width)
            init.layer_norm(prefix + '.ln2', width)
            init.linear(prefix + '.mlp.w1', width, 4 * width)
            init.zeros(prefix + '.mlp.b1', (4 * width,))
            init.linear(prefix + '.mlp.w2', 4 * width, width)
            init.zeros(prefix + '.mlp.b2', (width,))

        previous = width
        for stage, source, projections in decoder_layout(config):
            prefix = 'decoder.{0}'.format(stage)
            channels = config.decoder_channels[stage - 1]
            init.up(prefix + '.up', previous, channels)
            if source == 'volume':
                init.conv(prefix + '.skip', channels, 1, 3)
            else:
                for index in range(projections):
                    source_channels = width if index == 0 else channels
                    init.up('{0}.skip.{1}'.format(prefix, index), source_channels, channels)
            init.conv(prefix + '.fuse', channels, 2 * channels, 3)
            previous = channels
        init.conv('decoder.out', 1, previous, 1)

        if config.use_ehr:
            init.fusion('cea', width, config.cea_mode)
            init.fusion('sma', width, config.sma_mode)

    # zero head: every variant starts from p = 0.5
    init.zeros('head.w', (width, 1))
    init.zeros('head.b', (1,))
    return init.params


def ehr_embeddings(params):
    return {field: params['ehr.' + field] for field in EHR_FIELDS}


def forward(params, volume, record, stats, config):
    """
    One sample through the configured variant.  ``volume`` is the window
    normalised ``[S, S, S]`` cube; ``record`` / ``stats`` are the clinical
    record and the training-split standardization.
    """
    ehr = None
    if config.use_ehr:
        ehr = encode_ehr(record, stats, ehr_embeddings(params))

    if not config.use_ct:
        logit = class_logit(ehr, params)
        return ModelOutput(None, tc.sigmoid(logit), None, None)

    volume = tc.as_tensor(volume)
    patches = patchify(volume, config.patch_side)
    vision = embed_patches(patches, params['patch.projection'], params['patch.pos'])
    taps = vit_encode(vision, params, config)
    seg_logits = unetr_decode(taps, volume, params, config)
    seg_features = taps.mean_of(config.sma_taps)

    if not config.use_ehr:
        logit = class_logit(seg_features, params)
        return ModelOutput(seg_logits, tc.sigmoid(logit), taps, None)

    eps = config.layer_norm_eps
    cefr = cea(vision, ehr, params, config.heads, config.cea_mode, eps)
    msfr = sma(seg_features, cefr, params, config.heads, config.sma_mode, eps)
    logit = class_logit(msfr, params)
    return ModelOutput(seg_logits, tc.sigmoid(logit), taps, FusionState(cefr, msfr, logit))


def parameter_count(params):
    return int(sum(tensor.size for tensor in params.values()))


def snapshot(params):
    return {name: tensor.data.copy() for name, tensor in params.items()}


def restore(arrays):
    return {
        name: tc.Tensor(array, requires_grad=True, name=name)
        for name, array in arrays.items()
    }
