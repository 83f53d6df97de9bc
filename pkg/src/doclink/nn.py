"""Attention and transformer building blocks on top of the tensor core.

Layers follow the post-layer-norm residual arrangement with a 4x-wide ReLU
feed-forward sublayer.  Weights are stored (out_dim, in_dim) so a projection
reads ``x @ W.T + b``.  Masks are key-padding masks: boolean, True where a
position is real, one entry per token.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .rng import RngStream
from .tensor import (
    Tensor,
    layernorm,
    matmul,
    relu,
    reshape,
    softmax,
    swapaxes,
    transpose,
)


def xavier_uniform(rng: RngStream, fan_out: int, fan_in: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_out, fan_in)), requires_grad=True)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return matmul(x, transpose(w)) + b


class LayerNormParams:
    """Learned affine of one named layer norm."""

    def __init__(self, dim: int):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layernorm(x, self.gain, self.bias)

    def named(self, prefix: str):
        yield f"{prefix}.gain", self.gain
        yield f"{prefix}.bias", self.bias


class AttentionParams:
    def __init__(self, dim: int, rng: RngStream):
        self.wq = xavier_uniform(rng, dim, dim)
        self.wk = xavier_uniform(rng, dim, dim)
        self.wv = xavier_uniform(rng, dim, dim)
        self.wo = xavier_uniform(rng, dim, dim)
        self.bq = Tensor(np.zeros(dim), requires_grad=True)
        self.bk = Tensor(np.zeros(dim), requires_grad=True)
        self.bv = Tensor(np.zeros(dim), requires_grad=True)
        self.bo = Tensor(np.zeros(dim), requires_grad=True)

    def named(self, prefix: str):
        for tag in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo"):
            yield f"{prefix}.{tag}", getattr(self, tag)


class TransformerLayerParams:
    """Self-attention sublayer + feed-forward sublayer, each post-normed."""

    def __init__(self, dim: int, rng: RngStream):
        self.attn = AttentionParams(dim, rng)
        self.ln_attn = LayerNormParams(dim)
        self.ff_w1 = xavier_uniform(rng, 4 * dim, dim)
        self.ff_b1 = Tensor(np.zeros(4 * dim), requires_grad=True)
        self.ff_w2 = xavier_uniform(rng, dim, 4 * dim)
        self.ff_b2 = Tensor(np.zeros(dim), requires_grad=True)
        self.ln_ff = LayerNormParams(dim)

    def named(self, prefix: str):
        yield from self.attn.named(f"{prefix}.attn")
        yield from self.ln_attn.named(f"{prefix}.ln_attn")
        yield f"{prefix}.ff_w1", self.ff_w1
        yield f"{prefix}.ff_b1", self.ff_b1
        yield f"{prefix}.ff_w2", self.ff_w2
        yield f"{prefix}.ff_b2", self.ff_b2
        yield from self.ln_ff.named(f"{prefix}.ln_ff")


def multihead_attention(q, k, v, params: AttentionParams, heads: int, mask=None) -> Tensor:
    """Scaled dot-product attention with per-head 1/sqrt(d/heads) scaling.

    Accepts (L, d) or batched (B, L, d) inputs.  ``mask`` marks real key
    positions: shape (L,) or (B, L); padded keys receive exactly zero weight.
    """
    dim = q.shape[-1]
    if dim % heads != 0:
        raise ConfigError(f"attention width {dim} is not divisible by {heads} heads")
    squeeze = q.ndim == 2
    if squeeze:
        q = reshape(q, (1,) + q.shape)
        k = reshape(k, (1,) + k.shape)
        v = reshape(v, (1,) + v.shape)
    batch, length = q.shape[0], q.shape[1]
    head_dim = dim // heads

    def split_heads(x):
        x = reshape(x, (batch, x.shape[1], heads, head_dim))
        return swapaxes(x, 1, 2)  # (B, H, L, dh)

    qh = split_heads(linear(q, params.wq, params.bq))
    kh = split_heads(linear(k, params.wk, params.bk))
    vh = split_heads(linear(v, params.wv, params.bv))

    scores = matmul(qh, swapaxes(kh, -1, -2)) * (1.0 / np.sqrt(head_dim))
    key_mask = None
    if mask is not None:
        key_mask = np.asarray(mask, dtype=bool)
        if key_mask.ndim == 1:
            key_mask = key_mask[None, :]
        key_mask = key_mask[:, None, None, :]  # broadcast over heads and queries
    weights = softmax(scores, mask=key_mask, axis=-1)

    mixed = matmul(weights, vh)  # (B, H, L, dh)
    merged = reshape(swapaxes(mixed, 1, 2), (batch, length, dim))
    out = linear(merged, params.wo, params.bo)
    if squeeze:
        out = reshape(out, out.shape[1:])
    return out


def transformer_layer(x: Tensor, params: TransformerLayerParams, heads: int, mask=None) -> Tensor:
    """One encoder layer: post-norm residual attention, then post-norm FFN."""
    attended = multihead_attention(x, x, x, params.attn, heads, mask=mask)
    x = params.ln_attn(x + attended)
    hidden = relu(linear(x, params.ff_w1, params.ff_b1))
    x = params.ln_ff(x + linear(hidden, params.ff_w2, params.ff_b2))
    return x
