"""Hybrid temporal/spectral U-Net around the cross-domain Transformer encoder.

Temporal branch: strided convolutions over the waveform. Spectral branch: the
same layer type applied along the frequency axis of the complex STFT, one
frame at a time, with real/imag parts stacked as channels. The spectral
output goes through the iSTFT and is summed with the temporal output.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import dsp
from . import numerics as nx
from .dsp import AudioClip
from .errors import ConfigError, FormatError, LengthError
from .layers import Conv1d, ConvTranspose1d, Linear, Module
from .numerics import Tensor
from .sparse_attention import LshConfig
from .transformer import CrossDomainEncoder, TransformerConfig

SOURCES = ("drums", "bass", "other", "vocals")


@dataclass(frozen=True)
class ModelConfig:
    sources: tuple = SOURCES
    audio_channels: int = 2
    channels: int = 48
    growth: int = 2
    n_layers_outer: int = 4
    kernel: int = 8
    stride: int = 4
    rewrite_context: int = 1  # decoder 1x(2c+1) rewrite conv
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    sparse: Optional[LshConfig] = None
    lsh_seed: int = 0
    n_fft: int = dsp.N_FFT
    hop: int = dsp.HOP
    samplerate: int = dsp.SAMPLE_RATE

    def __post_init__(self):
        if isinstance(self.sources, list):
            object.__setattr__(self, "sources", tuple(self.sources))
        if not self.sources:
            raise ConfigError("sources must be nonempty")
        if len(set(self.sources)) != len(self.sources):
            raise ConfigError("duplicate source names")
        if self.audio_channels not in (1, 2):
            raise ConfigError("audio_channels must be 1 or 2")
        if self.channels < 1 or self.growth < 1 or self.n_layers_outer < 1:
            raise ConfigError("channels, growth and n_layers_outer must be >= 1")
        if self.kernel < self.stride or self.kernel % 4:
            raise ConfigError("kernel must be a multiple of 4 and >= stride")
        bins = self.n_fft // 2
        if bins % self.total_stride:
            raise ConfigError(f"{bins} frequency bins not divisible by total stride {self.total_stride}")

    @property
    def widths(self):
        return [self.channels * self.growth ** i for i in range(self.n_layers_outer)]

    @property
    def inner_width(self):
        return self.widths[-1]

    @property
    def total_stride(self):
        return self.stride ** self.n_layers_outer

    @property
    def inner_bins(self):
        return self.n_fft // 2 // self.total_stride

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["transformer"] = TransformerConfig(**d.get("transformer", {}))
        if d.get("sparse") is not None:
            d["sparse"] = LshConfig(**d["sparse"])
        d["sources"] = tuple(d.get("sources", SOURCES))
        return cls(**d)


class EncLayer(Module):
    def __init__(self, c_in, c_out, cfg: ModelConfig, rng):
        self.conv = Conv1d(c_in, c_out, cfg.kernel, rng, stride=cfg.stride, padding=cfg.kernel // 4)
        self.rewrite = Conv1d(c_out, 2 * c_out, 1, rng)

    def __call__(self, x):
        return nx.glu(self.rewrite(nx.gelu(self.conv(x))), axis=1)


class DecLayer(Module):
    def __init__(self, c_in, c_out, cfg: ModelConfig, rng, last=False):
        ctx = cfg.rewrite_context
        self.rewrite = Conv1d(c_in, 2 * c_in, 2 * ctx + 1, rng, padding=ctx)
        self.conv_tr = ConvTranspose1d(c_in, c_out, cfg.kernel, rng, stride=cfg.stride,
                                       padding=cfg.kernel // 4, bias=not last)
        self._last = last

    def __call__(self, x, skip):
        y = nx.glu(self.rewrite(x + skip), axis=1)
        y = self.conv_tr(y)
        return y if self._last else nx.gelu(y)


class HTDemucs(Module):
    def __init__(self, cfg: ModelConfig, seed=0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        widths = cfg.widths
        n_src = len(cfg.sources)
        ch = cfg.audio_channels

        def stack(c_in, c_out_final):
            enc, dec = [], []
            prev = c_in
            for w in widths:
                enc.append(EncLayer(prev, w, cfg, rng))
                prev = w
            outs = [c_out_final] + widths[:-1]
            for i in reversed(range(len(widths))):
                dec.append(DecLayer(widths[i], outs[i], cfg, rng, last=i == 0))
            return enc, dec

        self.t_encoder, self.t_decoder = stack(ch, n_src * ch)
        self.f_encoder, self.f_decoder = stack(2 * ch, 2 * n_src * ch)

        dim = cfg.transformer.dim
        if dim != cfg.inner_width:
            self.t_up = Linear(cfg.inner_width, dim, rng)
            self.f_up = Linear(cfg.inner_width, dim, rng)
            self.t_down = Linear(dim, cfg.inner_width, rng)
            self.f_down = Linear(dim, cfg.inner_width, rng)
        self.crosstransformer = CrossDomainEncoder(cfg.transformer, rng, cfg.sparse, cfg.lsh_seed)
        self._check_skip_geometry()

    def _check_skip_geometry(self):
        """Symbolic length pass: every decoder output must match its skip."""
        cfg = self.cfg
        pad = cfg.kernel // 4
        for length in (cfg.total_stride, cfg.n_fft // 2):
            sizes = [length]
            for _ in range(cfg.n_layers_outer):
                sizes.append((sizes[-1] + 2 * pad - cfg.kernel) // cfg.stride + 1)
            cur = sizes[-1]
            for level in reversed(range(cfg.n_layers_outer)):
                cur = (cur - 1) * cfg.stride - 2 * pad + cfg.kernel
                if cur != sizes[level]:
                    raise ConfigError(f"decoder level {level} yields length {cur}, skip has {sizes[level]}")

    @property
    def sources(self):
        return list(self.cfg.sources)

    def __call__(self, mix):
        return self.forward(mix)

    def forward(self, mix):
        """``mix`` ndarray [B, C, L] (or [C, L]) -> Tensor [B, S, C, L]."""
        mix = np.asarray(mix)
        squeeze = mix.ndim == 2
        if squeeze:
            mix = mix[None]
        cfg = self.cfg
        dtype = self.t_encoder[0].conv.weight.dtype
        mix = mix.astype(dtype)
        b, ch, length = mix.shape
        if ch != cfg.audio_channels:
            raise FormatError(f"model expects {cfg.audio_channels} channels, got {ch}")
        if length < cfg.n_fft:
            raise LengthError(f"input of {length} samples shorter than n_fft={cfg.n_fft}")
        n_src = len(cfg.sources)

        # spectral input: drop the Nyquist bin so the bin count divides the total stride
        z = dsp.stft_array(mix, cfg.n_fft, cfg.hop)[:, :, :-1, :]
        n_bins, n_frames = z.shape[-2:]
        spec = np.stack([z.real, z.imag], axis=2).reshape(b, 2 * ch, n_bins, n_frames).astype(dtype)
        f_mean = spec.mean(axis=(1, 2, 3), keepdims=True)
        f_std = spec.std(axis=(1, 2, 3), keepdims=True)
        spec = (spec - f_mean) / (1e-5 + f_std)
        # frames become batch: [B*T, C, F]
        xf = Tensor(np.ascontiguousarray(spec.transpose(0, 3, 1, 2)).reshape(b * n_frames, 2 * ch, n_bins))

        t_mean = mix.mean(axis=(1, 2), keepdims=True)
        t_std = mix.std(axis=(1, 2), keepdims=True)
        xt_np = (mix - t_mean) / (1e-5 + t_std)
        padded = -(-length // cfg.total_stride) * cfg.total_stride
        if padded != length:
            xt_np = np.pad(xt_np, ((0, 0), (0, 0), (0, padded - length)), mode="reflect")
        xt = Tensor(xt_np.astype(dtype))

        t_skips, f_skips = [], []
        for enc in self.t_encoder:
            xt = enc(xt)
            t_skips.append(xt)
        for enc in self.f_encoder:
            xf = enc(xf)
            f_skips.append(xf)

        width = cfg.inner_width
        f_inner = xf.shape[-1]
        # [B*T, C, F4] -> [B, F4, T, C] -> tokens f*T + t
        sf = nx.transpose(nx.reshape(xf, (b, n_frames, width, f_inner)), (0, 3, 1, 2))
        sf = nx.reshape(sf, (b, f_inner * n_frames, width))
        st = nx.transpose(xt, (0, 2, 1))
        if hasattr(self, "t_up"):
            st, sf = self.t_up(st), self.f_up(sf)
        st, sf = self.crosstransformer(st, sf, (f_inner, n_frames))
        if hasattr(self, "t_down"):
            st, sf = self.t_down(st), self.f_down(sf)
        xt = nx.transpose(st, (0, 2, 1))
        xf = nx.reshape(nx.transpose(nx.reshape(sf, (b, f_inner, n_frames, width)), (0, 2, 3, 1)),
                        (b * n_frames, width, f_inner))

        for dec, skip in zip(self.t_decoder, reversed(t_skips)):
            xt = dec(xt, skip)
        for dec, skip in zip(self.f_decoder, reversed(f_skips)):
            xf = dec(xf, skip)

        # temporal output [B, S*C, padded] -> [B, S, C, L]
        xt = nx.reshape(xt[:, :, :length], (b, n_src, ch, length))
        xt = xt * Tensor(t_std[:, None]) + Tensor(t_mean[:, None])

        # spectral output [B*T, S*C*2, F] -> real/imag [B, S, C, F, T]
        xf = nx.reshape(xf, (b, n_frames, n_src, ch, 2, n_bins))
        xf = nx.transpose(xf, (0, 2, 3, 4, 5, 1))
        xf = xf * Tensor(f_std[:, None, None]) + Tensor(f_mean[:, None, None])
        xf = nx.pad(xf, [(0, 0)] * 4 + [(0, 1), (0, 0)])
        re, im = xf[:, :, :, 0], xf[:, :, :, 1]
        wav_f = dsp.istft_tensor(re, im, length, cfg.n_fft, cfg.hop)

        out = xt + wav_f
        return nx.reshape(out, out.shape[1:]) if squeeze else out


def build_model(cfg: ModelConfig, seed=0) -> HTDemucs:
    return HTDemucs(cfg, seed)


def model_forward(model: HTDemucs, mixture: AudioClip) -> Tensor:
    if mixture.sample_rate != model.cfg.samplerate:
        raise FormatError(f"model expects {model.cfg.samplerate} Hz, got {mixture.sample_rate}")
    return model.forward(mixture.samples)


def count_params(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))
