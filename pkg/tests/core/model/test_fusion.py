import pytest

import numpy as np

from uscnet import tensor_core as tc
from uscnet.exceptions import ShapeError
from uscnet.msaf import (
    ATTENTION_PARAMS,
    cea,
    class_logit,
    classify,
    concat_fusion,
    cross_attention,
    sma,
)


WIDTH = 8
HEADS = 2


def attention_params(rng, prefix, width=WIDTH):
    params = {}
    for name in ATTENTION_PARAMS:
        shape = (width, width) if name.startswith('w_') else (width,)
        params['{0}.{1}'.format(prefix, name)] = tc.Tensor(rng.normal(0.0, 0.5, size=shape))
    params[prefix + '.ln.gain'] = tc.Tensor(np.ones(width))
    params[prefix + '.ln.bias'] = tc.Tensor(np.zeros(width))
    return params


def concat_params(rng, prefix, width=WIDTH):
    return {
        prefix + '.w': tc.Tensor(rng.normal(0.0, 0.5, size=(2 * width, width))),
        prefix + '.b': tc.Tensor(np.zeros(width)),
        prefix + '.ln.gain': tc.Tensor(np.ones(width)),
        prefix + '.ln.bias': tc.Tensor(np.zeros(width)),
    }


def test_cross_attention_shapes(rng):
    params = attention_params(rng, 'cea')
    queries = rng.normal(size=(5, WIDTH))
    keys = rng.normal(size=(7, WIDTH))

    out, weights = cross_attention(queries, keys, params, 'cea', HEADS, return_weights=True)

    assert out.shape == (5, WIDTH)
    assert weights.shape == (HEADS, 5, 7)
    assert np.allclose(weights.data.sum(axis=-1), 1.0)


def test_cross_attention_ignores_a_key_bias_shift(rng):
    params = attention_params(rng, 'cea')
    queries = rng.normal(size=(5, WIDTH))
    keys = rng.normal(size=(7, WIDTH))
    shifted = dict(params)
    shifted['cea.b_k'] = tc.Tensor(params['cea.b_k'].data + rng.normal(size=WIDTH))

    base = cross_attention(queries, keys, params, 'cea', HEADS).data
    moved = cross_attention(queries, keys, shifted, 'cea', HEADS).data

    assert np.allclose(base, moved)


def test_cross_attention_rejects_width_mismatch(rng):
    params = attention_params(rng, 'cea')

    with pytest.raises(ShapeError):
        cross_attention(rng.normal(size=(5, WIDTH)), rng.normal(size=(7, 4)), params, 'cea', HEADS)


def test_cross_attention_rejects_indivisible_heads(rng):
    params = attention_params(rng, 'cea')

    with pytest.raises(ShapeError):
        cross_attention(rng.normal(size=(5, WIDTH)), rng.normal(size=(7, WIDTH)), params, 'cea', 3)


def test_cea_output_is_layer_normed(rng):
    params = attention_params(rng, 'cea')

    cefr = cea(rng.normal(size=(8, WIDTH)), rng.normal(size=(7, WIDTH)), params, HEADS).data

    assert cefr.shape == (8, WIDTH)
    assert np.allclose(cefr.mean(axis=-1), 0.0)


def test_cea_needs_seven_clinical_tokens(rng):
    params = attention_params(rng, 'cea')

    with pytest.raises(ShapeError):
        cea(rng.normal(size=(8, WIDTH)), rng.normal(size=(6, WIDTH)), params, HEADS)


def test_sma_requires_matching_shapes(rng):
    params = attention_params(rng, 'sma')

    with pytest.raises(ShapeError):
        sma(rng.normal(size=(8, WIDTH)), rng.normal(size=(4, WIDTH)), params, HEADS)


def test_sma_in_concat_mode(rng):
    params = concat_params(rng, 'sma')

    msfr = sma(rng.normal(size=(8, WIDTH)), rng.normal(size=(8, WIDTH)), params, HEADS, mode='concat')

    assert msfr.shape == (8, WIDTH)


def test_concat_fusion_joins_the_pooled_stream(rng):
    params = concat_params(rng, 'cea')
    queries = rng.normal(size=(4, WIDTH))
    keys = rng.normal(size=(7, WIDTH))

    out = concat_fusion(queries, keys, params, 'cea').data

    joined = np.concatenate([queries, np.repeat(keys.mean(axis=0, keepdims=True), 4, axis=0)], axis=1)
    assert np.allclose(out, joined @ params['cea.w'].data)


def test_class_head_mean_pools(rng):
    params = {
        'head.w': tc.Tensor(rng.normal(size=(WIDTH, 1))),
        'head.b': tc.Tensor(np.array([0.3])),
    }
    tokens = rng.normal(size=(6, WIDTH))

    logit = class_logit(tokens, params)
    prob = classify(tokens, params)

    expected = tokens.mean(axis=0) @ params['head.w'].data[:, 0] + 0.3
    assert logit.shape == (1,)
    assert logit.item() == pytest.approx(expected)
    assert prob.item() == pytest.approx(1.0 / (1.0 + np.exp(-expected)))


def test_zero_head_gives_even_odds(rng):
    params = {'head.w': tc.Tensor(np.zeros((WIDTH, 1))), 'head.b': tc.Tensor(np.zeros(1))}

    assert classify(rng.normal(size=(6, WIDTH)), params).item() == 0.5


def straight_line_fusion(queries, keys, params, prefix, heads, eps=1e-5):
    """
    Per-head loops in plain numpy: projections, scaled dot products, row
    softmax, output projection, residual and layer norm.
    """
    def weight(name):
        return params['{0}.{1}'.format(prefix, name)].data

    q = queries @ weight('w_q') + weight('b_q')
    k = keys @ weight('w_k') + weight('b_k')
    v = keys @ weight('w_v') + weight('b_v')
    head_dim = queries.shape[1] // heads
    attended = np.zeros_like(q)
    for head in range(heads):
        cols = slice(head * head_dim, (head + 1) * head_dim)
        for row in range(q.shape[0]):
            logits = np.array([
                np.dot(q[row, cols], k[col, cols]) / np.sqrt(head_dim)
                for col in range(k.shape[0])
            ])
            exps = np.exp(logits - logits.max())
            attended[row, cols] = (exps / exps.sum()) @ v[:, cols]
    residual = queries + attended @ weight('w_o') + weight('b_o')
    centred = residual - residual.mean(axis=1, keepdims=True)
    scaled = centred / np.sqrt((centred ** 2).mean(axis=1, keepdims=True) + eps)
    return scaled * weight('ln.gain') + weight('ln.bias')


def with_random_norm(rng, params, prefix):
    params = dict(params)
    params[prefix + '.ln.gain'] = tc.Tensor(rng.uniform(0.5, 1.5, size=WIDTH))
    params[prefix + '.ln.bias'] = tc.Tensor(rng.normal(size=WIDTH))
    return params


def test_cea_matches_a_straight_line_computation(rng):
    params = with_random_norm(rng, attention_params(rng, 'cea'), 'cea')
    vision = rng.normal(size=(8, WIDTH))
    ehr = rng.normal(size=(7, WIDTH))

    cefr = cea(vision, ehr, params, HEADS).data

    assert np.allclose(cefr, straight_line_fusion(vision, ehr, params, 'cea', HEADS), atol=1e-10)


def test_sma_matches_a_straight_line_computation(rng):
    params = with_random_norm(rng, attention_params(rng, 'sma'), 'sma')
    segmentation = rng.normal(size=(8, WIDTH))
    cefr = rng.normal(size=(8, WIDTH))

    msfr = sma(segmentation, cefr, params, HEADS).data

    expected = straight_line_fusion(segmentation, cefr, params, 'sma', HEADS)
    assert np.allclose(msfr, expected, atol=1e-10)


def test_cea_ignores_the_order_of_clinical_tokens(rng):
    params = attention_params(rng, 'cea')
    vision = rng.normal(size=(8, WIDTH))
    ehr = rng.normal(size=(7, WIDTH))
    order = rng.permutation(7)

    base = cea(vision, ehr, params, HEADS).data
    shuffled = cea(vision, ehr[order], params, HEADS).data

    assert np.allclose(base, shuffled, atol=1e-12)


def test_cea_follows_the_order_of_vision_tokens(rng):
    params = attention_params(rng, 'cea')
    vision = rng.normal(size=(8, WIDTH))
    ehr = rng.normal(size=(7, WIDTH))
    order = rng.permutation(8)

    base = cea(vision, ehr, params, HEADS).data
    shuffled = cea(vision[order], ehr, params, HEADS).data

    assert np.allclose(shuffled, base[order], atol=1e-12)


def test_class_head_ignores_token_order(rng):
    params = {
        'head.w': tc.Tensor(rng.normal(size=(WIDTH, 1))),
        'head.b': tc.Tensor(np.array([-0.2])),
    }
    tokens = rng.normal(size=(6, WIDTH))

    base = classify(tokens, params).item()
    for _ in range(5):
        shuffled = tokens[rng.permutation(6)]
        assert classify(shuffled, params).item() == pytest.approx(base, abs=1e-12)
