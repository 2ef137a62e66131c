"""
Transformer encoder with tapped hidden states and the UNETR style decoder
that turns the taps back into a voxel-wise logit volume.
"""
from __future__ import annotations

import dataclasses

from . import tensor_core as tc
from .config import TAP_NAMES
from .exceptions import (
    ConfigError,
    ShapeError,
)
from .msaf import cross_attention
from .vtt import (
    TokenSequence,
    token_tensor,
    tokens_to_grid,
)


# shallower taps feed progressively finer decoder stages
SKIP_TAPS = ('z_c', 'z_b', 'z_a')


@dataclasses.dataclass(frozen=True)
class EncoderTaps:
    z_a: tc.Tensor
    z_b: tc.Tensor
    z_c: tc.Tensor
    z_last: tc.Tensor

    def select(self, names):
        return [getattr(self, name) for name in names]

    def mean_of(self, names):
        selected = self.select(names)
        if len(selected) == 1:
            return selected[0]
        total = selected[0]
        for tap in selected[1:]:
            total = tc.add(total, tap)
        return tc.mul(total, 1.0 / len(selected))


def encoder_prefix(layer):
    return 'encoder.{0}'.format(layer)


def transformer_block(x, params, prefix, heads, eps=1e-5):
    """
    Pre-norm block: ``x + MHSA(LN(x))`` followed by ``+ MLP(LN(.))`` with a
    GELU hidden layer of width ``4E``.
    """
    tokens = token_tensor(x)
    if tokens.ndim != 2:
        raise ShapeError("Expected [N, E] tokens", shape=tokens.shape)

    def p(name):
        return params['{0}.{1}'.format(prefix, name)]

    normed = tc.layer_norm(tokens, p('ln1.gain'), p('ln1.bias'), eps)
    hidden = tc.add(tokens, cross_attention(normed, normed, params, prefix + '.attn', heads))

    normed = tc.layer_norm(hidden, p('ln2.gain'), p('ln2.bias'), eps)
    expanded = tc.gelu(tc.add(tc.matmul(normed, p('mlp.w1')), p('mlp.b1')))
    out = tc.add(hidden, tc.add(tc.matmul(expanded, p('mlp.w2')), p('mlp.b2')))
    return TokenSequence(out, 'segmentation')


def vit_encode(tokens, params, config):
    hidden = token_tensor(tokens)
    if hidden.shape != (config.token_count, config.embed_dim):
        raise ShapeError(
            "Encoder input must be [N, E]",
            shape=hidden.shape,
            expected=(config.token_count, config.embed_dim),
        )
    outputs = {}
    for layer in range(1, config.encoder_layers + 1):
        hidden = transformer_block(
            hidden,
            params,
            encoder_prefix(layer),
            config.heads,
            config.layer_norm_eps,
        ).tokens
        outputs[layer] = hidden
    return EncoderTaps(**{
        name: outputs[index]
        for name, index in zip(TAP_NAMES, config.tap_indices)
    })


def _conv(x, params, name, padding=0):
    out = tc.conv3d(x, params[name + '.kernel'], padding=padding)
    return tc.add(out, params[name + '.bias'])


def _up(x, params, name):
    out = tc.conv_transpose3d(x, params[name + '.kernel'], stride=2)
    return tc.add(out, params[name + '.bias'])


def decoder_layout(config):
    """
    ``(stage, skip source, projection count)`` for every upsampling stage;
    the last stage takes its skip from the raw volume.
    """
    stages = config.decoder_stages
    if len(config.decoder_channels) != stages:
        raise ConfigError(
            "decoder_channels needs one entry per upsampling stage",
            stages=stages,
            decoder_channels=config.decoder_channels,
        )
    if stages - 1 > len(SKIP_TAPS):
        raise ConfigError("Too many decoder stages for the available taps", stages=stages)
    layout = [(stage, SKIP_TAPS[stage - 1], stage) for stage in range(1, stages)]
    layout.append((stages, 'volume', 0))
    return layout


def decoder_taps(config):
    """
    Encoder taps the decoder reads: ``z_last`` as the bottleneck plus one
    skip tap per inner stage.  The remaining taps only reach the SMA fusion.
    """
    skips = tuple(source for _, source, _ in decoder_layout(config) if source != 'volume')
    return ('z_last',) + skips


def unetr_decode(taps, raw_volume, params, config):
    """
    Upsample the deepest tap stage by stage, merging a skip path at every
    resolution, and emit ``[1, S, S, S]`` logits.
    """
    side = config.volume_side
    raw = tc.as_tensor(raw_volume)
    if raw.shape == (side,) * 3:
        raw = tc.reshape(raw, (1,) + raw.shape)
    if raw.shape != (1,) + (side,) * 3:
        raise ShapeError("Raw volume must be [S, S, S] or [1, S, S, S]", shape=raw.shape)

    current = tokens_to_grid(taps.z_last, config.grid_side)
    for stage, source, projections in decoder_layout(config):
        prefix = 'decoder.{0}'.format(stage)
        current = _up(current, params, prefix + '.up')
        if source == 'volume':
            skip = tc.relu(_conv(raw, params, prefix + '.skip', padding=1))
        else:
            skip = tokens_to_grid(getattr(taps, source), config.grid_side)
            for index in range(projections):
                skip = _up(skip, params, '{0}.skip.{1}'.format(prefix, index))
        if skip.shape != current.shape:
            raise ShapeError(
                "Skip path does not match the upsampled features",
                stage=stage,
                skip=skip.shape,
                current=current.shape,
            )
        merged = tc.concat([current, skip], axis=0)
        current = tc.relu(_conv(merged, params, prefix + '.fuse', padding=1))
    return _conv(current, params, 'decoder.out')
