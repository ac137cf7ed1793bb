"""Deterministic synthetic multitrack songs.

Each source lives in its own band so a small model can learn to pull them
apart: drums are decaying noise bursts on a beat grid, bass a low sine
melody, vocals a vibrato sine in the mid range, other a band-passed noise pad.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .dsp import SAMPLE_RATE, AudioClip
from .unet import SOURCES
from .wavio import save_audio

DEFAULT_GAINS = {"drums": 0.4, "bass": 0.35, "other": 0.2, "vocals": 0.3}


@dataclass
class SynthSpec:
    seed: int = 0
    duration_s: float = 4.0
    sample_rate: int = SAMPLE_RATE
    gains: dict = field(default_factory=lambda: dict(DEFAULT_GAINS))
    bass_range: tuple = (40.0, 120.0)
    vocal_range: tuple = (200.0, 800.0)
    pad_band: tuple = (2000.0, 6000.0)


@dataclass
class SongStems:
    song_id: str
    stems: dict  # source -> AudioClip
    raw_names: dict = field(default_factory=dict)  # source -> list of original stem names

    def __post_init__(self):
        clips = list(self.stems.values())
        if clips:
            n, sr = clips[0].frames, clips[0].sample_rate
            if any(c.frames != n or c.sample_rate != sr for c in clips):
                raise ValueError(f"{self.song_id}: stems differ in length or rate")

    @property
    def sample_rate(self):
        return next(iter(self.stems.values())).sample_rate

    @property
    def frames(self):
        return next(iter(self.stems.values())).frames

    @property
    def mixture(self) -> AudioClip:
        total = None
        for clip in self.stems.values():
            total = clip.samples.copy() if total is None else total + clip.samples
        return AudioClip(total, self.sample_rate)

    def stack(self, sources=SOURCES):
        """[sources, channels, frames] float32 array."""
        return np.stack([self.stems[s].samples for s in sources]).astype(np.float32)


def _pan(mono, rng, spread=0.3):
    p = rng.uniform(-spread, spread)
    return np.stack([mono * (1 - p), mono * (1 + p)])


def _drums(rng, n, sr):
    out = np.zeros(n)
    bpm = rng.uniform(100, 140)
    step = 60.0 / bpm / 2  # eighth notes
    t = rng.uniform(0, step)
    burst_len = int(0.08 * sr)
    env = np.exp(-np.arange(burst_len) / (0.015 * sr))
    while t < n / sr:
        i = int(t * sr)
        seg = rng.standard_normal(burst_len) * env * rng.uniform(0.6, 1.0)
        seg[0] += 1.0  # click
        stop = min(n, i + burst_len)
        out[i:stop] += seg[:stop - i]
        t += step
    return out / 2.0


def _melody(rng, n, sr, lo, hi, note_s, vibrato=0.0):
    freqs = np.empty(n)
    t = 0
    note = int(note_s * sr)
    while t < n:
        freqs[t:t + note] = np.exp(rng.uniform(np.log(lo), np.log(hi)))
        t += note
    if vibrato:
        rate = rng.uniform(4.5, 6.0)
        freqs = freqs * (1 + vibrato * np.sin(2 * np.pi * rate * np.arange(n) / sr))
    phase = 2 * np.pi * np.cumsum(freqs) / sr + rng.uniform(0, 2 * np.pi)
    return np.sin(phase)


def _pad(rng, n, sr, band):
    noise = rng.standard_normal(n)
    spec = np.fft.rfft(noise)
    f = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(f < band[0]) | (f > band[1])] = 0
    x = np.fft.irfft(spec, n=n)
    x /= np.sqrt(np.mean(x ** 2)) + 1e-12
    lfo = 0.75 + 0.25 * np.sin(2 * np.pi * rng.uniform(0.2, 0.5) * np.arange(n) / sr)
    return x * lfo * 0.5


def generate_song(spec: SynthSpec, song_id=None) -> SongStems:
    if spec.duration_s < 2.0:
        raise ValueError("synthetic songs need at least 2 s")
    rng = np.random.default_rng(spec.seed)
    sr = spec.sample_rate
    n = int(round(spec.duration_s * sr))
    mono = {
        "drums": _drums(rng, n, sr),
        "bass": _melody(rng, n, sr, *spec.bass_range, note_s=0.5),
        "other": _pad(rng, n, sr, spec.pad_band),
        "vocals": _melody(rng, n, sr, *spec.vocal_range, note_s=0.75, vibrato=0.02),
    }
    stems = {}
    for src in SOURCES:
        x = _pan(mono[src], rng) * spec.gains[src]
        stems[src] = AudioClip(x.astype(np.float32), sr)
    return SongStems(song_id or f"synth{spec.seed:04d}", stems, {s: [s] for s in SOURCES})


def generate_dataset(n_songs, seed=0, duration_s=4.0, sample_rate=SAMPLE_RATE):
    return [generate_song(SynthSpec(seed=seed + i, duration_s=duration_s, sample_rate=sample_rate))
            for i in range(n_songs)]


def write_song(song: SongStems, root, write_mixture=False):
    d = os.path.join(root, song.song_id)
    os.makedirs(d, exist_ok=True)
    for src, clip in song.stems.items():
        save_audio(clip, os.path.join(d, f"{src}.wav"))
    if write_mixture:
        save_audio(song.mixture, os.path.join(d, "mixture.wav"))
    return d
