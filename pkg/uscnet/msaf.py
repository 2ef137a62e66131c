"""
Attention fusion of the imaging, clinical and segmentation streams.

Parameters are looked up in a flat ``{name: Tensor}`` map under a prefix,
e.g. ``cea.w_q`` / ``cea.b_q`` for the query projection of the CT-EHR step.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import tensor_core as tc
from .exceptions import ShapeError
from .vtt import token_tensor


ATTENTION_PARAMS = ('w_q', 'b_q', 'w_k', 'b_k', 'w_v', 'b_v', 'w_o', 'b_o')
CONCAT_PARAMS = ('w', 'b')
NORM_PARAMS = ('ln.gain', 'ln.bias')


@dataclasses.dataclass(frozen=True)
class FusionState:
    cefr: tc.Tensor
    msfr: tc.Tensor
    class_logit: tc.Tensor


def _param(params, prefix, name):
    return params['{0}.{1}'.format(prefix, name)]


def _split_heads(projected, heads):
    count, width = projected.shape
    split = tc.reshape(projected, (count, heads, width // heads))
    return tc.transpose(split, (1, 0, 2))


def cross_attention(q_src, kv_src, params, prefix, heads, return_weights=False):
    """
    Multi-head scaled dot-product attention of ``q_src`` rows over ``kv_src``
    rows.  Output is ``[|q_src|, E]``; with ``return_weights`` the
    ``[heads, |q_src|, |kv_src|]`` attention weights are returned as well.
    """
    queries, keys = token_tensor(q_src), token_tensor(kv_src)
    if queries.ndim != 2 or keys.ndim != 2 or queries.shape[1] != keys.shape[1]:
        raise ShapeError(
            "Query and key/value tokens must share the width E",
            query=queries.shape,
            key=keys.shape,
        )
    width = queries.shape[1]
    if heads < 1 or width % heads:
        raise ShapeError("Width is not divisible by the head count", width=width, heads=heads)
    head_dim = width // heads

    def project(tokens, name):
        weight = _param(params, prefix, 'w_' + name)
        return tc.add(tc.matmul(tokens, weight), _param(params, prefix, 'b_' + name))

    q = _split_heads(project(queries, 'q'), heads)
    k = _split_heads(project(keys, 'k'), heads)
    v = _split_heads(project(keys, 'v'), heads)

    logits = tc.mul(tc.matmul(q, tc.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(head_dim))
    weights = tc.softmax(logits, axis=-1)
    attended = tc.transpose(tc.matmul(weights, v), (1, 0, 2))
    merged = tc.reshape(attended, (queries.shape[0], width))
    out = tc.add(tc.matmul(merged, _param(params, prefix, 'w_o')), _param(params, prefix, 'b_o'))
    if return_weights:
        return out, weights
    return out


def concat_fusion(q_src, kv_src, params, prefix):
    """
    Plain concatenation alternative to attention: every query token is joined
    with the mean key/value token and projected back to ``E``.
    """
    queries, keys = token_tensor(q_src), token_tensor(kv_src)
    if queries.shape[1] != keys.shape[1]:
        raise ShapeError(
            "Concatenated streams must share the width E",
            query=queries.shape,
            key=keys.shape,
        )
    pooled = tc.mean(keys, axis=0, keepdims=True)
    broadcast = tc.mul(np.ones((queries.shape[0], 1)), pooled)
    joined = tc.concat([queries, broadcast], axis=1)
    return tc.add(tc.matmul(joined, _param(params, prefix, 'w')), _param(params, prefix, 'b'))


def _fuse(q_src, kv_src, params, prefix, heads, mode, eps):
    queries = token_tensor(q_src)
    if mode == 'concat':
        fused = concat_fusion(queries, kv_src, params, prefix)
    else:
        fused = cross_attention(queries, kv_src, params, prefix, heads)
    return tc.layer_norm(
        tc.add(queries, fused),
        _param(params, prefix, 'ln.gain'),
        _param(params, prefix, 'ln.bias'),
        eps,
    )


def cea(vision, ehr, params, heads, mode='attention', eps=1e-5, prefix='cea'):
    """
    CT-EHR fusion: vision tokens query the clinical tokens.  Residual plus
    layer norm around the attention output.
    """
    ehr_tokens = token_tensor(ehr)
    if ehr_tokens.shape[0] != 7:
        raise ShapeError("Clinical stream must hold seven tokens", shape=ehr_tokens.shape)
    return _fuse(vision, ehr_tokens, params, prefix, heads, mode, eps)


def sma(segmentation, cefr, params, heads, mode='attention', eps=1e-5, prefix='sma'):
    seg_tokens, cefr = token_tensor(segmentation), token_tensor(cefr)
    if seg_tokens.shape != cefr.shape:
        raise ShapeError(
            "Segmentation features and CEFR must have the same shape",
            segmentation=seg_tokens.shape,
            cefr=cefr.shape,
        )
    return _fuse(seg_tokens, cefr, params, prefix, heads, mode, eps)


def class_logit(tokens, params, prefix='head'):
    tokens = token_tensor(tokens)
    pooled = tc.mean(tokens, axis=0, keepdims=True)
    logit = tc.add(tc.matmul(pooled, _param(params, prefix, 'w')), _param(params, prefix, 'b'))
    return tc.reshape(logit, (1,))


def classify(tokens, params, prefix='head'):
    """
    Mean pool over tokens, linear ``E -> 1``, sigmoid.  Returns a ``[1]``
    probability tensor.
    """
    return tc.sigmoid(class_logit(tokens, params, prefix))
