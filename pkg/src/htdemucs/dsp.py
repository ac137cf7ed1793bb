"""Audio containers, STFT/iSTFT and segment volume."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from .errors import DimensionError, FormatError, LengthError
from .numerics import Tensor, _make

SAMPLE_RATE = 44100
N_FFT = 4096
HOP = 1024
POWER_FLOOR = 1e-12


@dataclass
class AudioClip:
    samples: np.ndarray  # [channels, frames]
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim == 1:
            s = s[None]
        if s.ndim != 2 or s.shape[0] not in (1, 2):
            raise FormatError(f"expected 1 or 2 channels, got shape {s.shape}")
        if self.sample_rate <= 0:
            raise FormatError("sample_rate must be positive")
        if not np.all(np.isfinite(s)):
            raise FormatError("audio contains non-finite samples")
        if s.dtype not in (np.float32, np.float64):
            s = s.astype(np.float32)
        self.samples = s

    @property
    def channels(self):
        return self.samples.shape[0]

    @property
    def frames(self):
        return self.samples.shape[1]

    @property
    def duration(self):
        return self.frames / self.sample_rate


@dataclass
class Spectrogram:
    real: np.ndarray  # [channels, bins, frames_spec]
    imag: np.ndarray
    n_fft: int
    hop: int

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise DimensionError("real and imag planes differ in shape")
        if self.real.shape[-2] != self.n_fft // 2 + 1:
            raise DimensionError(f"expected {self.n_fft // 2 + 1} bins, got {self.real.shape[-2]}")
        if self.n_fft % self.hop:
            raise DimensionError("hop must divide n_fft")

    @property
    def complex(self):
        return self.real + 1j * self.imag


def hann(n, dtype=np.float64):
    # periodic Hann: satisfies COLA at hop n/4
    return (0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)).astype(dtype)


def n_frames(length, hop):
    return -(-length // hop)


def _check_geometry(n_fft, hop):
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise DimensionError(f"n_fft must be a power of two, got {n_fft}")
    if hop < 1 or n_fft % hop:
        raise DimensionError(f"hop {hop} must divide n_fft {n_fft}")


def _pads(length, n_fft, hop):
    n = n_frames(length, hop)
    left = n_fft // 2
    right = (n - 1) * hop + n_fft - length - left
    return n, left, right


def stft_array(x, n_fft=N_FFT, hop=HOP):
    """Complex STFT of ``x[..., L]`` -> ``[..., n_fft//2 + 1, ceil(L/hop)]``.

    Frame ``i`` is centred on sample ``i * hop`` (reflect padding); scaled by
    ``1/sqrt(n_fft)``.
    """
    _check_geometry(n_fft, hop)
    x = np.asarray(x)
    length = x.shape[-1]
    if length < n_fft:
        raise LengthError(f"signal of {length} samples is shorter than n_fft={n_fft}")
    n, left, right = _pads(length, n_fft, hop)
    widths = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    xp = np.pad(x, widths, mode="reflect")
    frames = sliding_window_view(xp, n_fft, axis=-1)[..., ::hop, :][..., :n, :]
    win = hann(n_fft, x.dtype)
    spec = np.fft.rfft(frames * win, axis=-1) / math.sqrt(n_fft)
    cdtype = np.complex64 if x.dtype == np.float32 else np.complex128
    return np.swapaxes(spec, -1, -2).astype(cdtype)


def _window_envelope(n, n_fft, hop, dtype):
    win = hann(n_fft, dtype)
    sq = np.broadcast_to(win * win, (1, n, n_fft))
    return _kernels.overlap_add(np.ascontiguousarray(sq), hop, (n - 1) * hop + n_fft)[0]


def overlap_add_frames(frames, hop):
    """Raw synthesis overlap-add of ``frames[..., n, n_fft]`` (no normalization)."""
    n, n_fft = frames.shape[-2:]
    return _kernels.overlap_add(np.ascontiguousarray(frames), hop, (n - 1) * hop + n_fft)


def istft_array(spec, length, n_fft=N_FFT, hop=HOP):
    """Inverse of :func:`stft_array` by windowed overlap-add, normalized by the
    summed squared window."""
    _check_geometry(n_fft, hop)
    spec = np.asarray(spec)
    bins, n = spec.shape[-2:]
    expected, left, _ = _pads(length, n_fft, hop)
    if bins != n_fft // 2 + 1 or n != expected:
        raise DimensionError(f"spectrogram {spec.shape} inconsistent with length {length}")
    real_dtype = np.float32 if spec.dtype == np.complex64 else np.float64
    frames = np.fft.irfft(np.swapaxes(spec, -1, -2), n=n_fft, axis=-1) * math.sqrt(n_fft)
    frames = (frames * hann(n_fft)).astype(real_dtype)
    out = overlap_add_frames(frames, hop)
    env = _window_envelope(n, n_fft, hop, np.float64)
    out = out[..., left:left + length] / env[left:left + length]
    return out.astype(real_dtype)


def istft_tensor(real, imag, length, n_fft=N_FFT, hop=HOP):
    """Differentiable iSTFT: ``real``/``imag`` Tensors [..., bins, frames] -> [..., length]."""
    _check_geometry(n_fft, hop)
    bins, n = real.shape[-2:]
    expected, left, _ = _pads(length, n_fft, hop)
    if bins != n_fft // 2 + 1 or n != expected or real.shape != imag.shape:
        raise DimensionError(f"spectrogram {real.shape} inconsistent with length {length}")
    dtype = real.dtype
    win = hann(n_fft)
    env = _window_envelope(n, n_fft, hop, np.float64)[left:left + length]
    scale = math.sqrt(n_fft)
    spec = real.data + 1j * imag.data
    frames = (np.fft.irfft(np.swapaxes(spec, -1, -2), n=n_fft, axis=-1) * (scale * win)).astype(dtype)
    out = (overlap_add_frames(frames, hop)[..., left:left + length] / env).astype(dtype)

    # Adjoint: crop^T, 1/env, frame extraction, window, irfft^T.
    # irfft^T(g) = c_k / N * rfft(g), with c_k = 1 at DC/Nyquist and 2 elsewhere.
    ck = np.full(bins, 2.0)
    ck[0] = ck[-1] = 1.0

    def bw(g):
        full = np.zeros(g.shape[:-1] + ((n - 1) * hop + n_fft,), dtype=np.float64)
        full[..., left:left + length] = g / env
        gframes = sliding_window_view(full, n_fft, axis=-1)[..., ::hop, :][..., :n, :]
        gspec = np.fft.rfft(gframes * (scale * win), axis=-1) * (ck / n_fft)
        gspec = np.swapaxes(gspec, -1, -2)
        return gspec.real.astype(dtype), gspec.imag.astype(dtype)

    return _make(out, (real, imag), bw)


def stft(clip: AudioClip, n_fft=N_FFT, hop=HOP) -> Spectrogram:
    z = stft_array(clip.samples, n_fft, hop)
    return Spectrogram(z.real.copy(), z.imag.copy(), n_fft, hop)


def istft(spec: Spectrogram, out_len, sample_rate=SAMPLE_RATE) -> AudioClip:
    return AudioClip(istft_array(spec.complex, out_len, spec.n_fft, spec.hop), sample_rate)


def segment_power(samples, sample_rate, seconds=1.0):
    """Mean power over non-overlapping segments, averaged across channels."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    seg = int(round(seconds * sample_rate))
    n = samples.shape[-1] // seg
    if n < 1:
        raise LengthError(f"need at least {seconds} s of audio, got {samples.shape[-1]} samples")
    blocks = samples[..., :n * seg].reshape(samples.shape[0], n, seg)
    return (blocks ** 2).mean(axis=(0, 2))


def volume_db(clip: AudioClip, seconds=1.0):
    """Volume in dB of each whole 1 s segment; trailing partial segment dropped."""
    power = segment_power(clip.samples, clip.sample_rate, seconds)
    return 10.0 * np.log10(np.maximum(power, POWER_FLOOR))
