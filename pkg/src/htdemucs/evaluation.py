"""SDR over 1 s chunks with median-of-medians aggregation, and the real-time
factor benchmark."""
from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .dsp import AudioClip
from .errors import ContractError, DimensionError, LengthError

SDR_EPS = 1e-10
SDR_CLAMP = 100.0


def sdr_chunks(ref: AudioClip, est: AudioClip, seconds=1.0):
    """Per non-overlapping chunk: ``10 log10((|ref|^2 + eps) / (|ref - est|^2 + eps))``,
    summed over samples and channels, clamped to [-100, 100] dB."""
    r = np.asarray(ref.samples, dtype=np.float64)
    e = np.asarray(est.samples, dtype=np.float64)
    if r.shape != e.shape:
        raise DimensionError(f"reference {r.shape} and estimate {e.shape} differ")
    seg = int(round(seconds * ref.sample_rate))
    n = r.shape[-1] // seg
    if n < 1:
        raise LengthError("SDR needs at least one full chunk")
    r = r[:, :n * seg].reshape(r.shape[0], n, seg)
    e = e[:, :n * seg].reshape(e.shape[0], n, seg)
    num = (r ** 2).sum(axis=(0, 2)) + SDR_EPS
    den = ((r - e) ** 2).sum(axis=(0, 2)) + SDR_EPS
    return np.clip(10.0 * np.log10(num / den), -SDR_CLAMP, SDR_CLAMP)


def silent_chunks(ref: AudioClip, seconds=1.0):
    seg = int(round(seconds * ref.sample_rate))
    n = ref.frames // seg
    r = np.asarray(ref.samples, dtype=np.float64)[:, :n * seg].reshape(ref.channels, n, seg)
    return (r ** 2).sum(axis=(0, 2)) <= SDR_EPS


def median(values):
    """Even counts average the two middle values."""
    return float(statistics.median(values))


@dataclass
class SdrResult:
    per_song: dict  # song -> source -> median chunk SDR
    per_source: dict  # source -> median over songs
    all: float

    def to_dict(self):
        return {"per_song": self.per_song, "per_source": self.per_source, "all": self.all}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self):
        sources = list(self.per_source)
        width = max([len(s) for s in self.per_song] + [4])
        lines = [" ".join([f"{'song':<{width}}"] + [f"{s:>8}" for s in sources])]
        for song, row in self.per_song.items():
            lines.append(" ".join([f"{song:<{width}}"] + [f"{row.get(s, float('nan')):8.3f}" for s in sources]))
        lines.append(" ".join([f"{'median':<{width}}"] + [f"{self.per_source[s]:8.3f}" for s in sources]))
        lines.append(f"All: {self.all:.3f} dB")
        return "\n".join(lines)


def aggregate(chunk_sdrs, skip_silent=None):
    """``chunk_sdrs``: song -> source -> sequence of chunk SDRs.

    ``skip_silent`` optionally maps song -> source -> boolean mask of chunks to drop.
    Median over chunks per (song, source), median over songs per source, and
    "All" as the mean of the per-source medians.
    """
    if not chunk_sdrs:
        raise ContractError("nothing to aggregate")
    per_song = {}
    for song, by_src in chunk_sdrs.items():
        row = {}
        for src, vals in by_src.items():
            vals = np.asarray(vals, dtype=np.float64)
            if skip_silent is not None:
                vals = vals[~np.asarray(skip_silent[song][src], dtype=bool)]
            vals = vals[np.isfinite(vals)]
            if vals.size:
                row[src] = median(vals)
        per_song[song] = row
    sources = []
    for row in chunk_sdrs.values():
        sources.extend(s for s in row if s not in sources)
    per_source = {}
    for src in sources:
        vals = [row[src] for row in per_song.values() if src in row]
        if not vals:
            raise ContractError(f"no finite chunk SDR for source {src!r}")
        per_source[src] = median(vals)
    return SdrResult(per_song, per_source, float(np.mean(list(per_source.values()))))


def evaluate_songs(refs, ests, skip_silent=False):
    """``refs``/``ests``: song -> source -> AudioClip."""
    chunks, masks = {}, {}
    for song, by_src in refs.items():
        chunks[song], masks[song] = {}, {}
        for src, ref in by_src.items():
            chunks[song][src] = sdr_chunks(ref, ests[song][src])
            masks[song][src] = silent_chunks(ref)
    return aggregate(chunks, masks if skip_silent else None)


def gaussian_noise_clip(seconds=40.0, sample_rate=44100, channels=2, seed=0):
    rng = np.random.default_rng(seed)
    return AudioClip(rng.standard_normal((channels, int(seconds * sample_rate))).astype(np.float32), sample_rate)


def rtf_bench(pipeline, input_seconds=40.0, runs=3, sample_rate=44100, seed=0, threads=1):
    """Median over ``runs`` of wall-clock processing time divided by the input
    duration. ``pipeline`` takes an AudioClip of Gaussian noise."""
    from ._kernels import set_num_threads

    clip = gaussian_noise_clip(input_seconds, sample_rate, seed=seed)
    limiter = set_num_threads(threads)
    try:
        times = []
        for _ in range(runs):
            t0 = time.perf_counter()
            pipeline(clip)
            times.append(time.perf_counter() - t0)
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    return median(times) / input_seconds
