import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oneshot_count import numcore as nc
from oneshot_count.attention import (AttentionWeights, CorrelationConfig, CorrelationParams, CorrelativeParams,
                                     FeatureSequence, SelfAttentionParams, correlative_attention_block,
                                     feature_correlation, multi_head_attention, scaled_attention,
                                     self_attention_block)
from oneshot_count.numcore import Rng, Tensor

from oracles import attention_oracle


def layer_norm_oracle(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def mha_oracle(q, k, v, w: AttentionWeights):
    heads = []
    for i in range(w.h):
        wq, wk, wv = (np.asarray(m, dtype=np.float64) for m in w.head(i))
        heads.append(attention_oracle(q, k, v, wq, wk, wv))
    return np.concatenate(heads, axis=1) @ w.wo.data


def seq(rng, n, d, dtype=None):
    return FeatureSequence.plain(Tensor(rng.normal((n, d)), dtype=dtype))


# --- scaled attention -------------------------------------------------------

def test_symmetric_keys_average_values(f64):
    eye = np.eye(1)
    out = scaled_attention(Tensor([[0.0]]), Tensor([[0.0], [0.0]]), Tensor([[1.0], [3.0]]), eye, eye, eye)
    np.testing.assert_allclose(out.data, [[2.0]])


def test_constant_keys_give_mean_of_values(f64, rng):
    k = np.tile(rng.normal((1, 4)), (5, 1))
    v = rng.normal((5, 4))
    w = [rng.normal((4, 2)) for _ in range(3)]
    out = scaled_attention(Tensor(rng.normal((3, 4))), Tensor(k), Tensor(v), *w).data
    expected = (v @ w[2]).mean(axis=0)
    np.testing.assert_allclose(out, np.tile(expected, (3, 1)), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_scaled_attention_matches_formula(f64, seed):
    r = Rng(seed)
    q, k, v = r.normal((3, 8)), r.normal((4, 8)), r.normal((4, 8))
    w = [r.normal((8, 8)) for _ in range(3)]
    out = scaled_attention(Tensor(q), Tensor(k), Tensor(v), *w).data
    np.testing.assert_allclose(out, attention_oracle(q, k, v, *w), atol=1e-10, rtol=0)


def test_key_value_length_mismatch():
    e = np.eye(2)
    with pytest.raises(ValueError, match="length mismatch"):
        scaled_attention(Tensor(np.ones((1, 2))), Tensor(np.ones((3, 2))), Tensor(np.ones((2, 2))), e, e, e)


# --- multi-head -------------------------------------------------------------

def test_single_head_with_identity_output_is_scaled_attention(f64, rng):
    w = AttentionWeights.init(rng, 6, 1)
    w.wo.data = np.eye(6)
    q, k = seq(rng, 3, 6), seq(rng, 5, 6)
    out = multi_head_attention(q, k, k, w).data
    ref = scaled_attention(q, k, k, w.wq, w.wk, w.wv).data
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_zero_value_projection_gives_zero(rng):
    w = AttentionWeights.init(rng, 8, 4)
    w.wv.data = np.zeros_like(w.wv.data)
    out = multi_head_attention(seq(rng, 3, 8), seq(rng, 4, 8), seq(rng, 4, 8), w).data
    np.testing.assert_array_equal(out, np.zeros((3, 8)))


def test_two_heads_match_per_head_oracle(f64, rng):
    w = AttentionWeights.init(rng, 4, 2)
    q, k, v = rng.normal((3, 4)), rng.normal((5, 4)), rng.normal((5, 4))
    out = multi_head_attention(Tensor(q), Tensor(k), Tensor(v), w).data
    np.testing.assert_allclose(out, mha_oracle(q, k, v, w), atol=1e-10)


def test_indivisible_dim_rejected_at_construction(rng):
    with pytest.raises(ValueError, match="divisible"):
        AttentionWeights.init(rng, 6, 4)
    with pytest.raises(ValueError):
        CorrelationConfig(h=0)


# --- self-attention block ---------------------------------------------------

def test_zero_attention_reduces_to_layer_norm(f64, rng):
    p = SelfAttentionParams.init(rng, 8, 4)
    for name in ("wq", "wk", "wv", "wo"):
        setattr(p.attn, name, Tensor(np.zeros((8, 8))))
    x = rng.normal((5, 8))
    out = self_attention_block(FeatureSequence.plain(Tensor(x)), p).tokens.data
    np.testing.assert_allclose(out, layer_norm_oracle(x, 1.0, 0.0), atol=1e-12)


def test_single_token_attends_to_itself(f64, rng):
    p = SelfAttentionParams.init(rng, 8, 2)
    x = rng.normal((1, 8))
    trace = []
    out = self_attention_block(FeatureSequence.plain(Tensor(x)), p, trace).tokens.data
    assert np.all(trace[0] == 1.0)
    expected = layer_norm_oracle(x @ p.attn.wv.data @ p.attn.wo.data + x, 1.0, 0.0)
    np.testing.assert_allclose(out, expected, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_self_attention_permutation_equivariant(seed):
    r = Rng(seed)
    p = SelfAttentionParams.init(r, 8, 4)
    x = seq(r, 7, 8)
    perm = r.permutation(7)
    a = self_attention_block(x.permuted(perm), p).tokens.data
    b = self_attention_block(x, p).tokens.data[perm]
    np.testing.assert_allclose(a, b, atol=1e-5)


# --- correlative-attention block --------------------------------------------

def correlative_oracle(x, s, p: CorrelativeParams):
    y = layer_norm_oracle(mha_oracle(x, s, s, p.attn) + x, p.ln1_gamma.data, p.ln1_beta.data)
    hidden = np.maximum(y @ p.ffn_w1.data + p.ffn_b1.data, 0.0)
    return layer_norm_oracle(hidden @ p.ffn_w2.data + p.ffn_b2.data + y, p.ln2_gamma.data, p.ln2_beta.data)


def test_correlative_matches_stepwise_oracle(f64, rng):
    p = CorrelativeParams.init(rng, 8, 4, 16)
    p.ln1_gamma.data = rng.uniform(0.5, 1.5, size=8)
    p.ffn_b1.data = rng.normal((16,)) * 0.1
    x, s = rng.normal((3, 8)), rng.normal((5, 8))
    out = correlative_attention_block(FeatureSequence.plain(Tensor(x)), FeatureSequence.plain(Tensor(s)), p).tokens.data
    np.testing.assert_allclose(out, correlative_oracle(x, s, p), atol=1e-8)


def test_constant_support_sends_identical_message(f64, rng):
    w = AttentionWeights.init(rng, 8, 4)
    s = np.tile(rng.normal((1, 8)), (6, 1))
    msg = multi_head_attention(Tensor(rng.normal((4, 8))), Tensor(s), Tensor(s), w).data
    np.testing.assert_allclose(msg, np.tile(msg[:1], (4, 1)), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_correlative_invariant_to_support_order(seed):
    r = Rng(seed)
    p = CorrelativeParams.init(r, 8, 4, 16)
    x, s = seq(r, 4, 8), seq(r, 9, 8)
    perm = r.permutation(9)
    a = correlative_attention_block(x, s.permuted(perm), p).tokens.data
    b = correlative_attention_block(x, s, p).tokens.data
    np.testing.assert_allclose(a, b, atol=1e-5)


def test_correlative_dim_mismatch(rng):
    p = CorrelativeParams.init(rng, 8, 4, 16)
    with pytest.raises(ValueError, match="dims differ"):
        correlative_attention_block(seq(rng, 3, 8), seq(rng, 3, 4), p)


# --- cycles -------------------------------------------------------------------

def test_single_cycle_is_three_blocks(f64, rng):
    cfg = CorrelationConfig(h=2, T=1)
    params = CorrelationParams.init(rng, 8, cfg)
    x, s = seq(rng, 4, 8), seq(rng, 6, 8)
    xo, so = feature_correlation(x, s, cfg, params)
    c = params.cycles[0]
    x1 = self_attention_block(x, c.self_x)
    s1 = self_attention_block(s, c.self_s)
    x2 = correlative_attention_block(x1, s1, c.corr)
    np.testing.assert_array_equal(xo.tokens.data, x2.tokens.data)
    np.testing.assert_array_equal(so.tokens.data, s1.tokens.data)


def test_zeroed_second_cycle_only_normalizes(f64, rng):
    cfg = CorrelationConfig(h=4, T=2)
    params = CorrelationParams.init(rng, 8, cfg)
    c2 = params.cycles[1]
    for attn in (c2.self_x.attn, c2.self_s.attn, c2.corr.attn):
        for name in ("wq", "wk", "wv", "wo"):
            setattr(attn, name, Tensor(np.zeros((8, 8))))
    for name in ("ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"):
        setattr(c2.corr, name, Tensor(np.zeros(getattr(c2.corr, name).shape)))
    x, s = seq(rng, 5, 8), seq(rng, 7, 8)
    two, _ = feature_correlation(x, s, cfg, params)
    one, _ = feature_correlation(x, s, CorrelationConfig(h=4, T=1), params)
    x1 = one.tokens.data
    # self-attn LN, correlative LN, FFN-residual LN
    expected = layer_norm_oracle(layer_norm_oracle(layer_norm_oracle(x1, 1, 0), 1, 0), 1, 0)
    np.testing.assert_allclose(two.tokens.data, expected, atol=1e-10)
    np.testing.assert_allclose(two.tokens.data, layer_norm_oracle(x1, 1, 0), atol=1e-4)


def test_default_config_shapes(rng):
    cfg = CorrelationConfig()
    assert (cfg.h, cfg.T) == (4, 2)
    params = CorrelationParams.init(rng, 64, cfg)
    x, s = seq(rng, 64, 64), seq(rng, 80, 64)
    xo, so = feature_correlation(x, s, cfg, params)
    assert xo.tokens.shape == (64, 64) and so.tokens.shape == (80, 64)


def test_attention_rows_sum_to_one_everywhere(rng):
    cfg = CorrelationConfig()
    params = CorrelationParams.init(rng, 16, cfg)
    trace = []
    feature_correlation(seq(rng, 12, 16), seq(rng, 20, 16), cfg, params, trace)
    assert len(trace) == 3 * cfg.T
    for weights in trace:
        assert weights.shape[0] == cfg.h
        np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-6)


def test_ablated_blocks_are_skipped(rng):
    cfg = CorrelationConfig(h=2, T=1, self_attn_x=False, self_attn_s=False)
    params = CorrelationParams.init(rng, 8, cfg)
    x, s = seq(rng, 3, 8), seq(rng, 4, 8)
    xo, so = feature_correlation(x, s, cfg, params)
    assert so.tokens is s.tokens
    direct = correlative_attention_block(x, s, params.cycles[0].corr).tokens.data
    np.testing.assert_array_equal(xo.tokens.data, direct)


def test_block_gradients(f64, rng):
    p = CorrelativeParams.init(rng, 4, 2, 8)
    s = Tensor(rng.normal((3, 4)))

    def f(x, wq, w1):
        p.attn.wq = wq
        p.ffn_w1 = w1
        out = correlative_attention_block(FeatureSequence.plain(x), FeatureSequence.plain(s), p)
        return nc.sum(nc.square(out.tokens) * np.arange(8).reshape(2, 4))

    assert nc.grad_check(f, [Tensor(rng.normal((2, 4))), p.attn.wq, p.ffn_w1]) < 1e-3
