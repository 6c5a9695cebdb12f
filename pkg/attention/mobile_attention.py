"""
Multi-Head Self-Attention Block

A MobileViT-style block over a feature map: the map is unfolded into N = H*W
tokens, encoded to d dimensions, mixed by h attention heads, decoded back to
C channels and added to the input. There is no positional encoding, so the
block is equivariant to any permutation of the tokens.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from engine import ops
from engine.rng import Rng
from engine.tensor import DimensionError, Parameter, Tensor

logger = logging.getLogger(__name__)


@dataclass
class AttentionConfig:
    """Head count h and per-head width d_h; the embedding width is d = h * d_h."""

    heads: int = 2
    head_dim: int = 64

    def __post_init__(self):
        if self.heads < 1 or self.head_dim < 1:
            raise ValueError(f"attention heads and head_dim must be positive, got {self.heads}, {self.head_dim}")

    @property
    def embed_dim(self) -> int:
        return self.heads * self.head_dim


def _uniform(rng: Rng, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-limit, limit, shape).astype(np.float32)


@dataclass
class AttentionWeights:
    """Encoder G (layer norm + affine C->d), per-head W_Q/W_K/W_V (d x d_h), W_O (d x d), decoder (d->C)."""

    norm_gamma: Parameter
    norm_beta: Parameter
    encoder_weight: Parameter
    encoder_bias: Parameter
    query: List[Parameter]
    key: List[Parameter]
    value: List[Parameter]
    output: Parameter
    decoder_weight: Parameter
    decoder_bias: Parameter
    channels: int = field(default=0)

    @classmethod
    def initialize(cls, prefix: str, channels: int, config: AttentionConfig, rng: Rng) -> 'AttentionWeights':
        """Symmetric-uniform projections scaled by 1/sqrt(fan_in); the decoder starts at zero."""
        d, dh = config.embed_dim, config.head_dim

        def param(name: str, values: np.ndarray) -> Parameter:
            return Parameter.create(f"{prefix}.{name}", values)

        heads = range(config.heads)
        return cls(
            norm_gamma=param('encoder.norm.gamma', np.ones(channels, dtype=np.float32)),
            norm_beta=param('encoder.norm.beta', np.zeros(channels, dtype=np.float32)),
            encoder_weight=param('encoder.weight', _uniform(rng.derive(0), (channels, d), channels)),
            encoder_bias=param('encoder.bias', np.zeros(d, dtype=np.float32)),
            query=[param(f"head{i}.query", _uniform(rng.derive(1, i), (d, dh), d)) for i in heads],
            key=[param(f"head{i}.key", _uniform(rng.derive(2, i), (d, dh), d)) for i in heads],
            value=[param(f"head{i}.value", _uniform(rng.derive(3, i), (d, dh), d)) for i in heads],
            output=param('output.weight', _uniform(rng.derive(4), (d, d), d)),
            decoder_weight=param('decoder.weight', np.zeros((d, channels), dtype=np.float32)),
            decoder_bias=param('decoder.bias', np.zeros(channels, dtype=np.float32)),
            channels=channels,
        )

    def parameters(self) -> Dict[str, Parameter]:
        ordered = [self.norm_gamma, self.norm_beta, self.encoder_weight, self.encoder_bias]
        for q, k, v in zip(self.query, self.key, self.value):
            ordered.extend([q, k, v])
        ordered.extend([self.output, self.decoder_weight, self.decoder_bias])
        return {p.name: p for p in ordered}


def unfold(x: Tensor) -> Tensor:
    """[H, W, C] -> [N, C] (or batched [B, H, W, C] -> [B, N, C]); row n is x[n // W, n % W]."""
    if x.ndim == 3:
        height, width, channels = x.shape
        return ops.reshape(x, (height * width, channels))
    if x.ndim == 4:
        batch, height, width, channels = x.shape
        return ops.reshape(x, (batch, height * width, channels))
    raise DimensionError('unfold', 'rank', '3 or 4', x.ndim)


def fold(x_u: Tensor, height: int, width: int) -> Tensor:
    """Exact inverse of unfold."""
    if x_u.shape[-2] != height * width:
        raise DimensionError('fold', 'tokens', height * width, x_u.shape[-2])
    return ops.reshape(x_u, x_u.shape[:-2] + (height, width, x_u.shape[-1]))


def encode(x_u: Tensor, weights: AttentionWeights) -> Tensor:
    """Z = G(X_U): per-row layer normalisation followed by an affine projection to d."""
    normed = ops.layer_norm(x_u, weights.norm_gamma.tensor, weights.norm_beta.tensor)
    return ops.affine(normed, weights.encoder_weight.tensor, weights.encoder_bias.tensor)


def multi_head_attention(z: Tensor, weights: AttentionWeights, config: AttentionConfig,
                         return_attention: bool = False):
    """Scaled dot-product self-attention with ``config.heads`` heads.

    Args:
        z (Tensor): tokens [N, d] or [B, N, d]
        weights (AttentionWeights): projections
        config (AttentionConfig): h and d_h

    Returns:
        Tensor X_t of the same shape as z; with ``return_attention`` also the
        list of per-head attention matrices A_i as arrays.
    """
    if z.shape[-1] != config.embed_dim:
        raise DimensionError('multi_head_attention', 'embedding', config.embed_dim, z.shape[-1])
    scale = 1.0 / math.sqrt(config.head_dim)
    heads = []
    attention = []
    for i in range(config.heads):
        q = ops.matmul(z, weights.query[i].tensor)
        k = ops.matmul(z, weights.key[i].tensor)
        v = ops.matmul(z, weights.value[i].tensor)
        scores = ops.scale(ops.matmul(q, ops.transpose_last(k)), scale)
        a = ops.softmax(scores)
        attention.append(a.data)
        heads.append(ops.matmul(a, v))
    merged = heads[0] if len(heads) == 1 else ops.concat_last(heads)
    x_t = ops.matmul(merged, weights.output.tensor)
    if return_attention:
        return x_t, attention
    return x_t


def decode_residual(x_t: Tensor, x: Tensor, weights: AttentionWeights) -> Tensor:
    """X + fold(Ĝ(X_t)): map tokens back to C channels and add them to the input map."""
    height, width = x.shape[-3], x.shape[-2]
    if x_t.shape[-2] != height * width:
        raise DimensionError('decode_residual', 'tokens', height * width, x_t.shape[-2])
    decoded = ops.affine(x_t, weights.decoder_weight.tensor, weights.decoder_bias.tensor)
    return ops.add(x, fold(decoded, height, width))


def attention_block(x: Tensor, weights: AttentionWeights, config: AttentionConfig) -> Tensor:
    """unfold -> encode -> multi-head attention -> decode + residual; shape preserving."""
    if x.shape[-1] != weights.channels:
        raise DimensionError('attention_block', 'channels', weights.channels, x.shape[-1])
    z = encode(unfold(x), weights)
    return decode_residual(multi_head_attention(z, weights, config), x, weights)
