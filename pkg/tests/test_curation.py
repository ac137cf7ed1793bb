import io
import json

import numpy as np
import pytest

from htdemucs.curation import (DEFAULT_KEYWORDS, LeakageReport, activity_fraction, curate_dir, curate_song,
                               ideal_separator, leakage_matrix, load_keywords, load_overrides, load_song_dir,
                               map_stem_name, passthrough_separator, select_song)
from htdemucs.dsp import AudioClip
from htdemucs.synthdata import SongStems, SynthSpec, generate_song, write_song
from htdemucs.unet import SOURCES
from htdemucs.wavio import load_audio, save_audio

SR = 44100


@pytest.mark.parametrize("raw,expected", [
    ("vocals2", "vocals"), ("Lead Vox", "vocals"), ("SUB", "bass"), ("Kick_01", "drums"),
    ("snare top", "drums"), ("Rhythm GTR", "other"), ("piano", "other"), ("xyzzy", None),
])
def test_map_stem_name(raw, expected):
    assert map_stem_name(raw) == expected


def test_first_keyword_hit_wins():
    # "bass drum" contains both a drums and a bass keyword; drums is checked first
    assert map_stem_name("bass drum") == "drums"


def test_custom_keywords(tmp_path):
    path = tmp_path / "kw.txt"
    path.write_text("# table\nvocals = singer, choir\nbass = low\n\n")
    table = load_keywords(path)
    assert table == {"vocals": ["singer", "choir"], "bass": ["low"]}
    assert map_stem_name("Choir L", table) == "vocals"
    assert map_stem_name("vocals", table) is None


def _tone(seconds, amp, silent_from=None, seed=0):
    n = int(seconds * SR)
    x = amp * np.random.default_rng(seed).standard_normal((2, n))
    if silent_from is not None:
        x[:, int(silent_from * SR):] = 0
    return AudioClip(x.astype(np.float32))


def test_activity_fraction_cases():
    assert activity_fraction(AudioClip(np.zeros((2, 3 * SR), np.float32))) == 0.0
    assert activity_fraction(AudioClip(np.full((2, 3 * SR), 0.1, np.float32))) == 1.0  # -20 dB
    assert activity_fraction(_tone(4, 0.3, silent_from=2)) == 0.5


def test_ideal_separator_gives_identity_and_accepts():
    song = generate_song(SynthSpec(seed=3, duration_s=4))
    report = select_song(leakage_matrix(song, ideal_separator(song)))
    np.testing.assert_array_equal(report.P, np.eye(4))
    assert report.accepted and report.reasons == []


def test_passthrough_gives_all_ones_and_rejects():
    song = generate_song(SynthSpec(seed=3, duration_s=4))
    report = select_song(leakage_matrix(song, passthrough_separator()))
    np.testing.assert_array_equal(report.P, np.ones((4, 4)))
    assert not report.accepted
    assert len(report.reasons) == 12  # every off-diagonal cell


def test_leak_below_threshold_is_not_counted():
    song = generate_song(SynthSpec(seed=4, duration_s=4))
    report = select_song(leakage_matrix(song, ideal_separator(song, leak_db=-12)))
    np.testing.assert_array_equal(report.P, np.eye(4))
    assert report.accepted
    report = select_song(leakage_matrix(song, ideal_separator(song, leak_db=-8)))
    np.testing.assert_array_equal(report.P, np.ones((4, 4)))


def test_diagonal_exactly_at_threshold_rejects():
    P = np.eye(4)
    P[1, 1] = 0.70
    report = select_song(LeakageReport("s", P, np.ones(4)))
    assert not report.accepted
    assert report.reasons == [f"P[{SOURCES[1]},{SOURCES[1]}] = 0.70 not > 0.70"]


def test_off_diagonal_exactly_at_threshold_rejects():
    P = np.eye(4)
    P[0, 2] = 0.30
    report = select_song(LeakageReport("s", P, np.ones(4)))
    assert not report.accepted and len(report.reasons) == 1


def test_low_vocal_activity_rejects_with_reason():
    song = generate_song(SynthSpec(seed=5, duration_s=5))
    stems = dict(song.stems)
    v = stems["vocals"].samples.copy()
    v[:, SR:] = 0  # active for 1 of 5 segments
    stems["vocals"] = AudioClip(v)
    song = SongStems("quiet_vocals", stems)
    report = select_song(leakage_matrix(song, ideal_separator(song)))
    assert report.activity[SOURCES.index("vocals")] == pytest.approx(0.2)
    assert not report.accepted
    assert any(r.startswith("vocals activity 0.20") for r in report.reasons)


def test_silent_stem_row_is_undefined():
    song = generate_song(SynthSpec(seed=6, duration_s=3))
    stems = dict(song.stems)
    stems["bass"] = AudioClip(np.zeros_like(stems["bass"].samples))
    song = SongStems("no_bass", stems)
    report = select_song(leakage_matrix(song, ideal_separator(song)))
    b = SOURCES.index("bass")
    assert np.all(np.isnan(report.P[b]))
    assert not report.accepted
    assert report.to_record()["P"][4 * b] is None


def _matrix_separator(G, sources=SOURCES):
    """Linear stub: output slot j receives G[j] times the input."""
    def fn(clip):
        return {s: AudioClip(clip.samples * G[j], clip.sample_rate) for j, s in enumerate(sources)}
    return fn


@pytest.mark.parametrize("alpha", [0.5, 2.0])
def test_gain_invariance(alpha):
    song = generate_song(SynthSpec(seed=7, duration_s=4))
    scaled = SongStems("scaled", {s: AudioClip(c.samples * alpha) for s, c in song.stems.items()})
    G = np.array([1.0, 0.5, 0.2, 0.05])
    a = leakage_matrix(song, _matrix_separator(G))
    b = leakage_matrix(scaled, _matrix_separator(G))
    np.testing.assert_array_equal(a.activity, b.activity)
    np.testing.assert_array_equal(a.P, b.P)


def test_leak_monotonicity():
    song = generate_song(SynthSpec(seed=8, duration_s=4))
    previous = None
    for leak in np.linspace(-30, 0, 13):
        P = leakage_matrix(song, ideal_separator(song, leak_db=leak)).P
        off = P[~np.eye(4, dtype=bool)]
        if previous is not None:
            assert np.all(off >= previous)
        previous = off


def _write_producer_song(root, name):
    d = root / name
    d.mkdir(parents=True)
    rng = np.random.default_rng(0)
    clips = {}
    for stem in ("Lead Vox", "Kick", "Snare", "SubBass", "Gtr", "click"):
        clips[stem] = AudioClip((0.1 * rng.standard_normal((2, 2 * SR))).astype(np.float32))
        save_audio(clips[stem], d / f"{stem}.wav")
    return d, clips


def test_load_song_dir_maps_and_sums(tmp_path):
    d, clips = _write_producer_song(tmp_path, "prod1")
    song = load_song_dir(d)
    assert song.song_id == "prod1"
    assert song.unmatched == ["click"]
    assert sorted(song.raw_names["drums"]) == ["Kick", "Snare"]
    np.testing.assert_array_equal(song.stems["drums"].samples, clips["Kick"].samples + clips["Snare"].samples)
    np.testing.assert_array_equal(song.stems["vocals"].samples, clips["Lead Vox"].samples)


def test_load_song_dir_missing_source_is_silent(tmp_path):
    d = tmp_path / "partial"
    d.mkdir()
    save_audio(AudioClip(np.ones((2, SR), np.float32) * 0.2), d / "vocals.wav")
    song = load_song_dir(d)
    assert not song.stems["bass"].samples.any()
    assert song.stems["bass"].frames == SR


def test_load_song_dir_without_stems(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(ValueError):
        load_song_dir(tmp_path / "empty")


def test_overrides(tmp_path):
    path = tmp_path / "ov.txt"
    path.write_text("songA accept\nsongB reject  # bad bleed\ngarbage line here\n")
    assert load_overrides(path) == {"songA": True, "songB": False}
    song = generate_song(SynthSpec(seed=9, duration_s=3), song_id="songA")
    report = curate_song(song, passthrough_separator(), {"songA": True})
    assert report.accepted and report.reasons[-1] == "manual override: accept"


def test_curate_dir_writes_json_lines(tmp_path):
    root = tmp_path / "songs"
    for seed in (1, 2):
        write_song(generate_song(SynthSpec(seed=seed, duration_s=3)), root)
    # the ideal stub must know the stems as loaded from disk
    out = io.StringIO()
    reports = curate_dir(root, ideal_separator, out)
    lines = [json.loads(line) for line in out.getvalue().splitlines()]
    assert [r["song_id"] for r in lines] == ["synth0001", "synth0002"]
    assert all(r["accepted"] for r in lines) and all(r.accepted for r in reports)
    assert lines[0]["P"] == np.eye(4).ravel().tolist()


def test_round_trip_stem_files_keep_values(tmp_path):
    song = generate_song(SynthSpec(seed=11, duration_s=2))
    d = write_song(song, tmp_path)
    for s in SOURCES:
        np.testing.assert_array_equal(load_audio(f"{d}/{s}.wav").samples, song.stems[s].samples)


def test_default_keyword_table_covers_all_sources():
    assert set(DEFAULT_KEYWORDS) == set(SOURCES)
