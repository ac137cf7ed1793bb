"""Dataset curation: stem-name labeling, silence gating, the leakage matrix
and song selection."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .dsp import AudioClip, volume_db
from .synthdata import SongStems
from .unet import SOURCES
from .wavio import load_audio

SILENCE_DB = -40.0
LEAK_DB = -10.0
MIN_ACTIVITY = 0.30
MIN_DIAGONAL = 0.70
MAX_OFF_DIAGONAL = 0.30

# checked in this order; first keyword hit wins
DEFAULT_KEYWORDS = {
    "vocals": ["vocal", "vox", "lead"],
    "drums": ["drum", "kick", "snare", "perc"],
    "bass": ["bass", "sub"],
    "other": ["other", "fx", "synth", "gtr", "guitar", "keys", "piano"],
}

UNMATCHED = None


def map_stem_name(raw_name, keywords=None):
    """Case-insensitive keyword match of a producer stem name; ``None`` if unmatched."""
    name = raw_name.lower()
    for source, words in (keywords or DEFAULT_KEYWORDS).items():
        if any(w in name for w in words):
            return source
    return UNMATCHED


def load_keywords(path):
    """Keyword table file: one ``source = word, word, ...`` line per source."""
    table = {}
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            src, _, words = line.partition("=")
            table[src.strip()] = [w.strip().lower() for w in words.split(",") if w.strip()]
    return table


def activity_fraction(stem: AudioClip, threshold_db=SILENCE_DB):
    return float(np.mean(volume_db(stem) >= threshold_db))


@dataclass
class LeakageReport:
    song_id: str
    P: np.ndarray  # [4, 4]; NaN rows where the stem is never active
    activity: np.ndarray  # [4]
    sources: tuple = SOURCES
    accepted: bool = False
    reasons: list = field(default_factory=list)

    def to_record(self):
        return {
            "song_id": self.song_id,
            "activity": [round(float(a), 6) for a in self.activity],
            "P": [None if not np.isfinite(p) else round(float(p), 6) for p in self.P.ravel()],
            "accepted": self.accepted,
            "reasons": list(self.reasons),
        }


def leakage_matrix(song: SongStems, separator_fn, sources=SOURCES) -> LeakageReport:
    """Separate each isolated stem and measure how often each output slot is
    within 10 dB of the stem's own volume, over segments where the stem is active.

    ``separator_fn(clip)`` returns a mapping source -> AudioClip.
    """
    n = len(sources)
    P = np.full((n, n), np.nan)
    activity = np.zeros(n)
    reasons = []
    for i, src in enumerate(sources):
        x = song.stems[src]
        vx = volume_db(x)
        active = vx >= SILENCE_DB
        activity[i] = active.mean()
        if not active.any():
            reasons.append(f"{src} never active: leakage row undefined")
            continue
        outputs = separator_fn(x)
        for j, out_src in enumerate(sources):
            vy = volume_db(outputs[out_src])[:len(vx)]
            P[i, j] = np.mean((vy - vx)[active] > LEAK_DB)
    report = LeakageReport(song.song_id, P, activity, tuple(sources), reasons=reasons)
    return report


def select_song(report: LeakageReport) -> LeakageReport:
    """Accept iff every activity >= 30 %, every diagonal P > 70 % and every
    off-diagonal P < 30 %. ``reasons`` lists each violated predicate."""
    reasons = list(report.reasons)
    srcs = report.sources
    for i, src in enumerate(srcs):
        if report.activity[i] < MIN_ACTIVITY:
            reasons.append(f"{src} activity {report.activity[i]:.2f} < {MIN_ACTIVITY:.2f}")
    for i, a in enumerate(srcs):
        for j, b in enumerate(srcs):
            p = report.P[i, j]
            if not np.isfinite(p):
                continue
            if i == j and not p > MIN_DIAGONAL:
                reasons.append(f"P[{a},{a}] = {p:.2f} not > {MIN_DIAGONAL:.2f}")
            if i != j and not p < MAX_OFF_DIAGONAL:
                reasons.append(f"P[{a},{b}] = {p:.2f} not < {MAX_OFF_DIAGONAL:.2f}")
    report.reasons = reasons
    report.accepted = not reasons
    return report


# --- stub separators -------------------------------------------------------------

def ideal_separator(song: SongStems, sources=SOURCES, leak_db=None):
    """Knows the song's stems: returns the stem in its own slot and silence
    (or the stem at ``leak_db``) elsewhere."""
    def fn(clip):
        owner = next((s for s in sources if np.array_equal(song.stems[s].samples, clip.samples)), None)
        gain = 0.0 if leak_db is None else 10 ** (leak_db / 20)
        return {s: AudioClip(clip.samples if s == owner else clip.samples * gain, clip.sample_rate)
                for s in sources}
    return fn


def passthrough_separator(sources=SOURCES):
    def fn(clip):
        return {s: clip for s in sources}
    return fn


def model_separator(model, chunk_seconds=None, overlap=0.25):
    from .separator import plan_chunks, separate

    def fn(clip):
        plan = None
        if chunk_seconds:
            plan = plan_chunks(clip.frames, int(chunk_seconds * clip.sample_rate), overlap)
        return separate(model, clip, plan)
    return fn


# --- directory pipeline -------------------------------------------------------------

def load_song_dir(path, keywords=None, sources=SOURCES) -> SongStems:
    """Read ``<song>/<stemname>.wav``; stems mapping to the same source are summed,
    missing sources are silent."""
    song_id = os.path.basename(os.path.normpath(path))
    acc, names, unmatched = {}, {s: [] for s in sources}, []
    rate, length = None, None
    for fname in sorted(os.listdir(path)):
        if not fname.lower().endswith(".wav"):
            continue
        stem = os.path.splitext(fname)[0]
        src = map_stem_name(stem, keywords)
        if src is None or src not in sources:
            unmatched.append(stem)
            continue
        clip = load_audio(os.path.join(path, fname))
        x = clip.samples if clip.channels == 2 else np.repeat(clip.samples, 2, axis=0)
        rate = rate or clip.sample_rate
        length = x.shape[1] if length is None else min(length, x.shape[1])
        acc[src] = x if src not in acc else acc[src][:, :length] + x[:, :length]
        names[src].append(stem)
    if rate is None:
        raise ValueError(f"{path}: no recognizable stems")
    stems = {s: AudioClip(acc[s][:, :length] if s in acc else np.zeros((2, length), np.float32), rate)
             for s in sources}
    song = SongStems(song_id, stems, names)
    song.unmatched = unmatched
    return song


def load_overrides(path):
    """``song_id accept|reject`` per line; forces the decision after manual review."""
    out = {}
    with open(path) as f:
        for line in f:
            parts = line.split("#", 1)[0].split()
            if len(parts) == 2 and parts[1] in ("accept", "reject"):
                out[parts[0]] = parts[1] == "accept"
    return out


def curate_song(song: SongStems, separator_fn, overrides=None):
    report = select_song(leakage_matrix(song, separator_fn))
    if overrides and song.song_id in overrides:
        forced = overrides[song.song_id]
        report.reasons.append(f"manual override: {'accept' if forced else 'reject'}")
        report.accepted = forced
    return report


def curate_dir(root, separator_factory, out=None, keywords=None, overrides=None):
    """Curate every song directory under ``root``; ``separator_factory(song)``
    returns the separator used for that song. Writes one JSON line per song."""
    reports = []
    for name in sorted(os.listdir(root)):
        path = os.path.join(root, name)
        if not os.path.isdir(path):
            continue
        song = load_song_dir(path, keywords)
        report = curate_song(song, separator_factory(song), overrides)
        reports.append(report)
        if out is not None:
            out.write(json.dumps(report.to_record()) + "\n")
    return reports

