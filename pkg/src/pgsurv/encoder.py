"""Patient-level encoder: two transformer layers over the N group embeddings,
then gated global attention pooling to one 256-dim vector.

No positional encoding is used, so the encoder is invariant to group order.
"""
import numpy as np

from .diffcore import Dense, LayerNorm, Module, Parameter, ops
from .diffcore.module import uniform_init
from .embedders import EMBED_DIM, GatedAttention


class HeadCountError(ValueError):
    pass


def self_attention(Q, K, V):
    """softmax(Q K^T / sqrt(d_k)) V. Works on (N, d) or batched (h, N, d)."""
    d_k = ops.const(Q).value.shape[-1]
    logits = ops.scale(ops.matmul(Q, ops.transpose(K, _swap_last(ops.const(K).value.ndim))),
                       1.0 / np.sqrt(d_k))
    A = ops.softmax(logits, axis=-1)
    return ops.matmul(A, V), A


def _swap_last(ndim):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


class MultiHeadAttention(Module):
    def __init__(self, dim, heads, rng):
        if dim % heads:
            raise HeadCountError(f"{heads} heads do not divide model dim {dim}")
        self.heads = heads
        self.Wq = Parameter(uniform_init(rng, dim, (dim, dim)))
        self.Wk = Parameter(uniform_init(rng, dim, (dim, dim)))
        self.Wv = Parameter(uniform_init(rng, dim, (dim, dim)))
        self.out = Dense(dim, dim, rng)

    def __call__(self, H, return_attention=False):
        n, dim = H.shape
        h, dk = self.heads, dim // self.heads

        def split(x):  # (N, dim) -> (h, N, dk)
            return ops.transpose(ops.reshape(x, (n, h, dk)), (1, 0, 2))

        Q = split(ops.matmul(H, self.Wq))
        K = split(ops.matmul(H, self.Wk))
        V = split(ops.matmul(H, self.Wv))
        heads, A = self_attention(Q, K, V)
        merged = ops.reshape(ops.transpose(heads, (1, 0, 2)), (n, dim))
        out = self.out(merged)
        return (out, A) if return_attention else out


def msa(H, layer, heads=None):
    """Multi-head self-attention of one layer; ``heads`` must match the layer."""
    attn = layer.attn if isinstance(layer, TransformerLayer) else layer
    if heads is not None and heads != attn.heads:
        raise HeadCountError(f"layer built for {attn.heads} heads, asked for {heads}")
    return attn(H)


class TransformerLayer(Module):
    """Pre-norm block: x + MSA(LN x), then x + FFN(LN x)."""

    def __init__(self, dim, heads, rng, ff_dim=512, layer_norm=True, residual=True):
        self.use_norm = layer_norm
        self.residual = residual
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.ff1 = Dense(dim, ff_dim, rng)
        self.ff2 = Dense(ff_dim, dim, rng)

    def __call__(self, x):
        h = self.attn(self.ln1(x) if self.use_norm else x)
        x = ops.add(x, h) if self.residual else h
        h = self.ff2(ops.relu(self.ff1(self.ln2(x) if self.use_norm else x)))
        return ops.add(x, h) if self.residual else h


class ModalityStream(Module):
    """Group embeddings (N, 256) -> patient embedding (256,)."""

    def __init__(self, rng, dim=EMBED_DIM, heads=4, n_layers=2, pool_hidden=128,
                 layer_norm=True, residual=True):
        self.layers = [TransformerLayer(dim, heads, rng, layer_norm=layer_norm, residual=residual)
                       for _ in range(n_layers)]
        self.use_norm = layer_norm
        self.ln_out = LayerNorm(dim)
        self.pool = GatedAttention(dim, pool_hidden, rng)

    def transform(self, groups):
        x = groups
        for layer in self.layers:
            x = layer(x)
        return self.ln_out(x) if self.use_norm else x

    def __call__(self, groups):
        return ops.reshape(self.pool.pool(self.transform(groups)), (-1,))


def encode_patient(groups, stream):
    return stream(groups)
