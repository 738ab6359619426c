"""Scaled dot-product attention, multi-head attention, and pre-norm encoder blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError
from .optim import Parameter
from .tensor import (Tensor, add, dense, dropout, layer_norm, matmul, relu,
                     reshape, softmax, sqrt_scale, transpose)
from .util import trunc_normal


@dataclass
class NormWeights:
    gamma: Parameter
    beta: Parameter

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]


@dataclass
class MultiHeadWeights:
    """Projections for h-head attention.

    Head width is d_k = d_v = d_model // h, so w_q/w_k/w_v map d_model to
    h * d_k and w_o maps the h * d_v concatenation back to d_model.  When h
    divides d_model this is exactly a square projection sliced into heads;
    an odd d_model floors the head width and w_o absorbs the difference.
    """

    w_q: Parameter
    b_q: Parameter
    w_k: Parameter
    b_k: Parameter
    w_v: Parameter
    b_v: Parameter
    w_o: Parameter
    b_o: Parameter
    heads: int

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_k(self) -> int:
        return self.w_q.shape[1] // self.heads

    def parameters(self) -> list[Parameter]:
        return [self.w_q, self.b_q, self.w_k, self.b_k,
                self.w_v, self.b_v, self.w_o, self.b_o]


@dataclass
class EncoderBlockWeights:
    norm1: NormWeights
    mha: MultiHeadWeights
    norm2: NormWeights
    mlp_w1: Parameter
    mlp_b1: Parameter
    mlp_w2: Parameter
    mlp_b2: Parameter
    dropout_rate: float

    def parameters(self) -> list[Parameter]:
        return (self.norm1.parameters() + self.mha.parameters() + self.norm2.parameters()
                + [self.mlp_w1, self.mlp_b1, self.mlp_w2, self.mlp_b2])


def init_multi_head(d_model: int, heads: int, rng: np.random.Generator,
                    dtype=np.float64, prefix: str = "mha") -> MultiHeadWeights:
    if heads < 1:
        raise ConfigError(f"heads must be >= 1, got {heads}")
    d_k = d_model // heads
    if d_k < 1:
        raise ConfigError(f"d_model {d_model} too small for {heads} heads")
    inner = heads * d_k

    def w(name, shape):
        return Parameter(trunc_normal(rng, shape, dtype=dtype), name=f"{prefix}.{name}")

    def b(name, width):
        return Parameter(np.zeros(width, dtype=dtype), name=f"{prefix}.{name}")

    return MultiHeadWeights(
        w_q=w("w_q", (d_model, inner)), b_q=b("b_q", inner),
        w_k=w("w_k", (d_model, inner)), b_k=b("b_k", inner),
        w_v=w("w_v", (d_model, inner)), b_v=b("b_v", inner),
        w_o=w("w_o", (inner, d_model)), b_o=b("b_o", d_model),
        heads=heads,
    )


def init_encoder_block(d_model: int, heads: int, d_mlp: int, dropout_rate: float,
                       rng: np.random.Generator, dtype=np.float64,
                       prefix: str = "block") -> EncoderBlockWeights:
    def norm(name):
        return NormWeights(
            gamma=Parameter(np.ones(d_model, dtype=dtype), name=f"{prefix}.{name}.gamma"),
            beta=Parameter(np.zeros(d_model, dtype=dtype), name=f"{prefix}.{name}.beta"),
        )

    return EncoderBlockWeights(
        norm1=norm("norm1"),
        mha=init_multi_head(d_model, heads, rng, dtype, prefix=f"{prefix}.mha"),
        norm2=norm("norm2"),
        mlp_w1=Parameter(trunc_normal(rng, (d_model, d_mlp), dtype=dtype), name=f"{prefix}.mlp_w1"),
        mlp_b1=Parameter(np.zeros(d_mlp, dtype=dtype), name=f"{prefix}.mlp_b1"),
        mlp_w2=Parameter(trunc_normal(rng, (d_mlp, d_model), dtype=dtype), name=f"{prefix}.mlp_w2"),
        mlp_b2=Parameter(np.zeros(d_model, dtype=dtype), name=f"{prefix}.mlp_b2"),
        dropout_rate=dropout_rate,
    )


def scaled_dot_product_attention(q, k, v) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V, softmax over the key axis.

    Operands are [..., n, d]; any leading axes (batch, heads) broadcast.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key count {k.shape[-2]} != value count {v.shape[-2]}")
    perm = list(range(k.ndim))
    perm[-1], perm[-2] = perm[-2], perm[-1]
    scores = sqrt_scale(matmul(q, transpose(k, perm)), q.shape[-1])
    weights = softmax(scores, axis=-1)
    return matmul(weights, v)


def multi_head_attention(x, w: MultiHeadWeights) -> Tensor:
    """Project to per-head Q/K/V, attend, concatenate heads, project back."""
    squeeze = x.ndim == 2
    xb = reshape(x, (1,) + tuple(x.shape)) if squeeze else x
    b, n, d = xb.shape
    if d != w.d_model:
        raise ValueError(f"input width {d} != attention d_model {w.d_model}")
    h, d_k = w.heads, w.d_k

    def heads_first(t):
        # [b, n, h*d_k] -> [b, h, n, d_k]
        return transpose(reshape(t, (b, n, h, d_k)), (0, 2, 1, 3))

    q = heads_first(dense(xb, w.w_q.tensor, w.b_q.tensor))
    k = heads_first(dense(xb, w.w_k.tensor, w.b_k.tensor))
    v = heads_first(dense(xb, w.w_v.tensor, w.b_v.tensor))
    attended = scaled_dot_product_attention(q, k, v)
    merged = reshape(transpose(attended, (0, 2, 1, 3)), (b, n, h * d_k))
    out = dense(merged, w.w_o.tensor, w.b_o.tensor)
    return reshape(out, (n, d)) if squeeze else out


def encoder_block(x, w: EncoderBlockWeights, training: bool = False, rng=None) -> Tensor:
    """Pre-norm residual block: attention sublayer, then a two-layer ReLU MLP."""
    attended = multi_head_attention(layer_norm(x, w.norm1.gamma.tensor, w.norm1.beta.tensor), w.mha)
    x1 = add(x, dropout(attended, w.dropout_rate, training, rng))
    hidden = relu(dense(layer_norm(x1, w.norm2.gamma.tensor, w.norm2.beta.tensor),
                        w.mlp_w1.tensor, w.mlp_b1.tensor))
    mlp_out = dense(hidden, w.mlp_w2.tensor, w.mlp_b2.tensor)
    return add(x1, dropout(mlp_out, w.dropout_rate, training, rng))


def encoder_stack(x, blocks, final_norm: NormWeights, training: bool = False, rng=None) -> Tensor:
    """Sequential encoder blocks followed by one final layer norm."""
    t = x
    for block in blocks:
        t = encoder_block(t, block, training, rng)
    return layer_norm(t, final_norm.gamma.tensor, final_norm.beta.tensor)
