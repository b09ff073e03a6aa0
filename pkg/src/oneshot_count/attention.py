"""Feature correlation: multi-head attention, self-attention and
correlative-attention blocks, and the cycle that stacks them.

All blocks map an (L, d) token matrix to an (L, d) token matrix. Position
embeddings are added to the tokens before they reach this module, so the
attention logits here are plain scaled dot products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import numcore as nc
from .numcore import Rng, Tensor
from .numcore.params import constant_param, uniform_param


@dataclass
class FeatureSequence:
    """Token matrix plus per-token position descriptors.

    ``scale`` holds the feature-map level each token came from and ``pos`` the
    scalar position (in finest-grid units) used for the sinusoidal embedding.
    """

    tokens: Tensor
    scale: np.ndarray
    pos: np.ndarray
    grid: tuple[int, int] | None = None

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=np.int64)
        self.pos = np.asarray(self.pos, dtype=np.int64)
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise ValueError(f"tokens must be (L, d) with L >= 1, got {self.tokens.shape}")
        if self.scale.shape != (len(self),) or self.pos.shape != (len(self),):
            raise ValueError("scale and pos need one entry per token")

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    def with_tokens(self, tokens: Tensor) -> "FeatureSequence":
        return replace(self, tokens=tokens)

    def permuted(self, perm) -> "FeatureSequence":
        perm = np.asarray(perm)
        return FeatureSequence(Tensor(self.tokens.data[perm], dtype=self.tokens.dtype), self.scale[perm], self.pos[perm])

    @classmethod
    def plain(cls, tokens) -> "FeatureSequence":
        """Sequence with trivial positions (scale 0, pos = index)."""
        tokens = nc.as_tensor(tokens)
        n = tokens.shape[0]
        return cls(tokens, np.zeros(n, dtype=np.int64), np.arange(n))


@dataclass
class CorrelationConfig:
    h: int = 4
    T: int = 2
    use_pe: bool = True
    ffn_hidden: int | None = None  # None -> 2 * d
    self_attn_x: bool = True
    self_attn_s: bool = True

    def __post_init__(self):
        if self.h < 1 or self.T < 1:
            raise ValueError(f"need h >= 1 and T >= 1, got h={self.h}, T={self.T}")


@dataclass
class AttentionWeights:
    """Projections for all heads.

    Column block ``i`` of ``wq``/``wk``/``wv`` (width d/h) is head i's
    projection; ``wo`` is the d x d output projection.
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    h: int = 1

    def __post_init__(self):
        d = self.wq.shape[0]
        if d % self.h:
            raise ValueError(f"feature dim {d} is not divisible by head count {self.h}")
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (d, d):
                raise ValueError(f"{name} must be ({d}, {d}), got {getattr(self, name).shape}")

    @property
    def d(self) -> int:
        return self.wq.shape[0]

    def head(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        dh = self.d // self.h
        cols = slice(i * dh, (i + 1) * dh)
        return self.wq.data[:, cols], self.wk.data[:, cols], self.wv.data[:, cols]

    @classmethod
    def init(cls, rng: Rng, d: int, h: int) -> "AttentionWeights":
        if d % h:
            raise ValueError(f"feature dim {d} is not divisible by head count {h}")
        b = 1.0 / math.sqrt(d)
        return cls(*(uniform_param(rng, (d, d), b) for _ in range(4)), h=h)


@dataclass
class SelfAttentionParams:
    attn: AttentionWeights
    ln_gamma: Tensor
    ln_beta: Tensor

    @classmethod
    def init(cls, rng: Rng, d: int, h: int) -> "SelfAttentionParams":
        return cls(AttentionWeights.init(rng, d, h), constant_param((d,), 1.0), constant_param((d,), 0.0))


@dataclass
class CorrelativeParams:
    attn: AttentionWeights
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor

    @classmethod
    def init(cls, rng: Rng, d: int, h: int, hidden: int) -> "CorrelativeParams":
        return cls(
            AttentionWeights.init(rng, d, h),
            constant_param((d,), 1.0), constant_param((d,), 0.0),
            uniform_param(rng, (d, hidden), 1.0 / math.sqrt(d)), constant_param((hidden,), 0.0),
            uniform_param(rng, (hidden, d), 1.0 / math.sqrt(hidden)), constant_param((d,), 0.0),
            constant_param((d,), 1.0), constant_param((d,), 0.0),
        )


@dataclass
class CycleParams:
    self_x: SelfAttentionParams
    self_s: SelfAttentionParams
    corr: CorrelativeParams


@dataclass
class CorrelationParams:
    cycles: list[CycleParams]

    @classmethod
    def init(cls, rng: Rng, d: int, cfg: CorrelationConfig) -> "CorrelationParams":
        hidden = cfg.ffn_hidden or 2 * d
        cycles = []
        for _ in range(cfg.T):
            cycles.append(CycleParams(
                SelfAttentionParams.init(rng, d, cfg.h),
                SelfAttentionParams.init(rng, d, cfg.h),
                CorrelativeParams.init(rng, d, cfg.h, hidden),
            ))
        return cls(cycles)


LN_EPS = 1e-5


def _tokens(x) -> Tensor:
    return x.tokens if isinstance(x, FeatureSequence) else nc.as_tensor(x)


def scaled_attention(q, k, v, wq, wk, wv, trace: list | None = None) -> Tensor:
    """Single head: softmax((q Wq)(k Wk)^T / sqrt(d_head)) (v Wv)."""
    q, k, v = _tokens(q), _tokens(k), _tokens(v)
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"key/value length mismatch: {k.shape[0]} vs {v.shape[0]}")
    wq, wk, wv = nc.as_tensor(wq), nc.as_tensor(wk), nc.as_tensor(wv)
    qp, kp, vp = q @ wq, k @ wk, v @ wv
    logits = (qp @ nc.transpose(kp)) * (1.0 / math.sqrt(wq.shape[1]))
    weights = nc.softmax_rows(logits)
    if trace is not None:
        trace.append(weights.data)
    return weights @ vp


def multi_head_attention(q, k, v, w: AttentionWeights, trace: list | None = None) -> Tensor:
    """Concat(head_1..head_h) Wo with every head evaluated in one batched product."""
    q, k, v = _tokens(q), _tokens(k), _tokens(v)
    d = w.d
    if q.shape[1] != d or k.shape[1] != d or v.shape[1] != d:
        raise ValueError(f"feature dims {q.shape[1]}, {k.shape[1]}, {v.shape[1]} do not match weights ({d})")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"key/value length mismatch: {k.shape[0]} vs {v.shape[0]}")
    h, dh = w.h, d // w.h

    def split(t: Tensor) -> Tensor:
        return nc.transpose(nc.reshape(t, (t.shape[0], h, dh)), (1, 0, 2))

    qh, kh, vh = split(q @ w.wq), split(k @ w.wk), split(v @ w.wv)
    logits = (qh @ nc.transpose(kh, (0, 2, 1))) * (1.0 / math.sqrt(dh))
    weights = nc.softmax_rows(logits)
    if trace is not None:
        trace.append(weights.data)
    heads = nc.transpose(weights @ vh, (1, 0, 2))
    return nc.reshape(heads, (q.shape[0], d)) @ w.wo


def self_attention_block(x: FeatureSequence, p: SelfAttentionParams, trace: list | None = None) -> FeatureSequence:
    """LN(MA(x, x, x) + x)."""
    t = x.tokens
    out = nc.layer_norm(multi_head_attention(t, t, t, p.attn, trace) + t, p.ln_gamma, p.ln_beta, LN_EPS)
    return x.with_tokens(out)


def correlative_attention_block(x: FeatureSequence, s: FeatureSequence, p: CorrelativeParams,
                                trace: list | None = None) -> FeatureSequence:
    """Query tokens attend to support tokens, then a residual FFN; post-norm after each."""
    if x.dim != s.dim:
        raise ValueError(f"query and support feature dims differ: {x.dim} vs {s.dim}")
    xt, st = x.tokens, s.tokens
    y = nc.layer_norm(multi_head_attention(xt, st, st, p.attn, trace) + xt, p.ln1_gamma, p.ln1_beta, LN_EPS)
    hidden = nc.relu(y @ p.ffn_w1 + p.ffn_b1)
    z = nc.layer_norm(hidden @ p.ffn_w2 + p.ffn_b2 + y, p.ln2_gamma, p.ln2_beta, LN_EPS)
    return x.with_tokens(z)


def feature_correlation(x: FeatureSequence, s: FeatureSequence, cfg: CorrelationConfig,
                        params: CorrelationParams, trace: list | None = None
                        ) -> tuple[FeatureSequence, FeatureSequence]:
    """Run ``cfg.T`` cycles of (self-attn on x, self-attn on s, correlative-attn x<-s)."""
    if len(params.cycles) < cfg.T:
        raise ValueError(f"config asks for {cfg.T} cycles but only {len(params.cycles)} are parameterized")
    for cycle in params.cycles[: cfg.T]:
        if cfg.self_attn_x:
            x = self_attention_block(x, cycle.self_x, trace)
        if cfg.self_attn_s:
            s = self_attention_block(s, cycle.self_s, trace)
        x = correlative_attention_block(x, s, cycle.corr, trace)
    return x, s
