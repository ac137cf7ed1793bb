"""Cross-domain Transformer encoder: per-domain self-attention layers
interleaved with cross-attention layers between the temporal and spectral
token sequences."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DimensionError
from .layers import LayerNorm, Linear, Module
from .numerics import Parameter, Tensor
from .sparse_attention import LshConfig, attention, lsh_pattern


@dataclass(frozen=True)
class TransformerConfig:
    dim: int = 384
    heads: int = 8
    ffn_mult: int = 4
    depth: int = 5
    layer_scale_init: float = 1e-4
    input_scale: float = 1.0
    # "parallel": both cross layers read pre-layer states; "sequential": spectral sees updated temporal
    cross_mode: str = "parallel"
    sparse_cross: bool = False

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.layer_scale_init <= 0:
            raise ConfigError("layer_scale_init must be > 0")
        if self.cross_mode not in ("parallel", "sequential"):
            raise ConfigError(f"unknown cross_mode {self.cross_mode!r}")


@dataclass
class DomainSequence:
    tokens: Tensor  # [len, dim] or [batch, len, dim]
    origin: str  # "temporal" | "spectral"
    geometry: Optional[tuple] = None  # (bins, frames) for spectral

    def __post_init__(self):
        n = self.tokens.shape[-2]
        if n < 1:
            raise DimensionError("empty sequence")
        if self.origin == "spectral":
            if self.geometry is None or self.geometry[0] * self.geometry[1] != n:
                raise DimensionError(f"spectral geometry {self.geometry} does not match length {n}")


def sinusoidal_pe_1d(length, dim):
    if dim % 2:
        raise DimensionError(f"1D positional encoding needs an even dim, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = 10000.0 ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe.astype(np.float32)


def sinusoidal_pe_2d(n_bins, n_frames, dim):
    """First half of the channels encodes the bin index, second half the frame
    index. Token order is bin-major: token ``f * n_frames + t``."""
    if dim % 4:
        raise DimensionError(f"2D positional encoding needs dim % 4 == 0, got {dim}")
    half = dim // 2
    pf = sinusoidal_pe_1d(n_bins, half)
    pt = sinusoidal_pe_1d(n_frames, half)
    pe = np.concatenate([
        np.repeat(pf[:, None, :], n_frames, axis=1),
        np.repeat(pt[None, :, :], n_bins, axis=0),
    ], axis=-1)
    return pe.reshape(n_bins * n_frames, dim)


class MultiheadAttention(Module):
    def __init__(self, dim, heads, rng):
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self._heads = heads

    def _split(self, x):
        b, n, d = x.shape
        h = self._heads
        return nx.transpose(nx.reshape(x, (b, n, h, d // h)), (0, 2, 1, 3))

    def __call__(self, x, ctx, keep_fn=None):
        """``x`` [B, N, D] queries, ``ctx`` [B, M, D] keys/values.

        ``keep_fn(q, k)`` may return a boolean keep-mask [B, N, M] shared by heads.
        """
        q, k, v = self.q(x), self.k(ctx), self.v(ctx)
        mask = None
        if keep_fn is not None:
            mask = keep_fn(q.data, k.data)[:, None]
        qh, kh, vh = self._split(q), self._split(k), self._split(v)
        out, weights = attention(qh, kh, vh, mask)
        b, h, n, dh = out.shape
        out = nx.reshape(nx.transpose(out, (0, 2, 1, 3)), (b, n, h * dh))
        self._last_weights = weights.data
        return self.out(out)


class EncoderLayer(Module):
    """Pre-norm attention and feed-forward residuals with Layer Scale, followed by
    a normalization over all tokens jointly."""

    def __init__(self, cfg: TransformerConfig, rng, cross=False, sparse: LshConfig = None, lsh_seed=0):
        d = cfg.dim
        self.norm1 = LayerNorm(d)
        self.norm_ctx = LayerNorm(d) if cross else None
        self.attn = MultiheadAttention(d, cfg.heads, rng)
        self.gamma1 = Parameter(np.full(d, cfg.layer_scale_init))
        self.norm2 = LayerNorm(d)
        self.ffn_in = Linear(d, d * cfg.ffn_mult, rng)
        self.ffn_out = Linear(d * cfg.ffn_mult, d, rng)
        self.gamma2 = Parameter(np.full(d, cfg.layer_scale_init))
        self.norm3 = LayerNorm(d, axes=(-2, -1))
        self._cross = cross
        self._dim = d
        self._sparse = sparse
        self._lsh_seed = lsh_seed

    def _keep_fn(self):
        if self._sparse is None:
            return None
        cfg, seed = self._sparse, self._lsh_seed

        def keep(q, k):
            return np.stack([lsh_pattern(qb, kb, cfg, seed).mask for qb, kb in zip(q, k)])

        return keep

    def residual(self, x, ctx=None):
        if x.shape[-1] != self._dim:
            raise DimensionError(f"layer expects dim {self._dim}, got {x.shape[-1]}")
        if self._cross != (ctx is not None):
            raise DimensionError("context must be given exactly for cross-attention layers")
        h = self.norm1(x)
        kv = self.norm_ctx(ctx) if self._cross else h
        x = x + self.gamma1 * self.attn(h, kv, self._keep_fn())
        h = self.ffn_out(nx.gelu(self.ffn_in(self.norm2(x))))
        return x + self.gamma2 * h

    def __call__(self, x, ctx=None):
        return self.norm3(self.residual(x, ctx))


class CrossDomainEncoder(Module):
    """Per domain, layer l is self-attention for even l and cross-attention for odd l."""

    def __init__(self, cfg: TransformerConfig, rng, sparse: LshConfig = None, lsh_seed=0):
        self.cfg = cfg
        self.temporal = []
        self.spectral = []
        for i in range(cfg.depth):
            cross = i % 2 == 1
            use_sparse = sparse if (not cross or cfg.sparse_cross) else None
            for domain, layers in ((0, self.temporal), (1, self.spectral)):
                seed = (lsh_seed, i, domain)
                layers.append(EncoderLayer(cfg, rng, cross, use_sparse, lsh_seed=seed))

    def layer_kinds(self):
        return ["cross" if l._cross else "self" for l in self.temporal]

    def __call__(self, temporal: Tensor, spectral: Tensor, geometry, add_pe=True):
        """``temporal`` [B, Nt, D]; ``spectral`` [B, F*T, D] with ``geometry=(F, T)``."""
        d = self.cfg.dim
        if temporal.shape[-1] != d or spectral.shape[-1] != d:
            raise DimensionError("both domains must be projected to the transformer dim")
        xt = nx.mul(temporal, self.cfg.input_scale)
        xs = nx.mul(spectral, self.cfg.input_scale)
        if add_pe:
            xt = xt + Tensor(sinusoidal_pe_1d(xt.shape[-2], d).astype(xt.dtype))
            xs = xs + Tensor(sinusoidal_pe_2d(geometry[0], geometry[1], d).astype(xs.dtype))
        for lt, ls in zip(self.temporal, self.spectral):
            if not lt._cross:
                xt, xs = lt(xt), ls(xs)
            elif self.cfg.cross_mode == "parallel":
                xt, xs = lt(xt, xs), ls(xs, xt)
            else:
                xt = lt(xt, xs)
                xs = ls(xs, xt)
        return xt, xs


def encoder_layer(x: DomainSequence, ctx: Optional[DomainSequence], layer: EncoderLayer) -> DomainSequence:
    tokens = x.tokens
    squeeze = tokens.ndim == 2
    if squeeze:
        tokens = nx.reshape(tokens, (1,) + tokens.shape)
    c = None
    if ctx is not None:
        c = ctx.tokens if ctx.tokens.ndim == 3 else nx.reshape(ctx.tokens, (1,) + ctx.tokens.shape)
    out = layer(tokens, c)
    if squeeze:
        out = nx.reshape(out, out.shape[1:])
    return DomainSequence(out, x.origin, x.geometry)


def cross_domain_encoder(temporal: DomainSequence, spectral: DomainSequence, encoder: CrossDomainEncoder):
    def batched(t):
        return t if t.ndim == 3 else nx.reshape(t, (1,) + t.shape)

    xt, xs = encoder(batched(temporal.tokens), batched(spectral.tokens), spectral.geometry)
    if temporal.tokens.ndim == 2:
        xt, xs = nx.reshape(xt, xt.shape[1:]), nx.reshape(xs, xs.shape[1:])
    return (DomainSequence(xt, "temporal"), DomainSequence(xs, "spectral", spectral.geometry))

