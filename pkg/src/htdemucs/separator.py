"""Chunked inference with overlapping chunks and a linear crossfade."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .dsp import AudioClip
from .errors import FormatError, NumericError


@dataclass
class ChunkPlan:
    total_frames: int
    chunk_frames: int
    overlap: float
    starts: list
    weights: list  # one float64 gain array of length chunk_frames per chunk

    def coverage(self):
        acc = np.zeros(self.total_frames)
        for s, w in zip(self.starts, self.weights):
            acc[s:s + len(w)] += w
        return acc


def plan_chunks(total_frames, chunk_frames, overlap=0.25) -> ChunkPlan:
    if chunk_frames < 2:
        raise ValueError("chunk_frames must be >= 2")
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    if total_frames <= chunk_frames:
        return ChunkPlan(total_frames, total_frames, overlap, [0], [np.ones(total_frames)])

    hop = max(1, int(round(chunk_frames * (1.0 - overlap))))
    starts = list(range(0, total_frames - chunk_frames, hop))
    starts.append(total_frames - chunk_frames)  # last chunk ends at the clip end
    ramp = int(round(overlap * chunk_frames))
    base = np.ones(chunk_frames)
    if ramp:
        up = np.arange(1, ramp + 1) / (ramp + 1)
        base[:ramp] = up
        base[-ramp:] = up[::-1]
    raw = []
    for i in range(len(starts)):
        w = base.copy()
        if i == 0 and ramp:
            w[:ramp] = 1.0
        if i == len(starts) - 1 and ramp:
            w[-ramp:] = 1.0
        raw.append(w)
    total = np.zeros(total_frames)
    for s, w in zip(starts, raw):
        total[s:s + chunk_frames] += w
    weights = [w / total[s:s + chunk_frames] for s, w in zip(starts, raw)]
    return ChunkPlan(total_frames, chunk_frames, overlap, starts, weights)


def separate(model, clip: AudioClip, plan: ChunkPlan = None, batch=1):
    """Run ``model`` chunk by chunk and crossfade. Returns ``{source: AudioClip}``.

    ``model`` needs ``sources`` and ``forward(ndarray [B, C, L]) -> [B, S, C, L]``;
    a ``cfg.samplerate`` attribute, when present, must match the clip.
    """
    rate = getattr(getattr(model, "cfg", None), "samplerate", clip.sample_rate)
    if rate != clip.sample_rate:
        raise FormatError(f"model expects {rate} Hz, got {clip.sample_rate}")
    if plan is None:
        plan = plan_chunks(clip.frames, clip.frames)
    if plan.total_frames != clip.frames:
        raise ValueError("chunk plan does not match the clip length")
    x = clip.samples
    out = np.zeros((len(model.sources),) + x.shape, dtype=np.float64)
    with nx.no_grad():
        for i in range(0, len(plan.starts), batch):
            starts = plan.starts[i:i + batch]
            chunks = np.stack([x[:, s:s + plan.chunk_frames] for s in starts])
            pred = model.forward(chunks)
            pred = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
            for j, s in enumerate(starts):
                out[..., s:s + plan.chunk_frames] += pred[j] * plan.weights[i + j]
    if not np.all(np.isfinite(out)):
        raise NumericError("model produced non-finite output")
    return {src: AudioClip(out[k].astype(np.float32), clip.sample_rate)
            for k, src in enumerate(model.sources)}
