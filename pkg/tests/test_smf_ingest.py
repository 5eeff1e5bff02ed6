from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accompanist import ingest, smf
from accompanist.ingest import (
    Arrangement,
    ArrangementEntry,
    MalformedAnnotation,
    SourceDirectory,
    TrackAmbiguity,
    ingest_dataset_song,
    read_midi_notes,
    validate_arrangement,
    write_midi,
)
from accompanist.songmodel import NoteEvent


def entry(index, start, notes, length=4):
    return ArrangementEntry(measure_index=index, source_id=f"s:{index}", start_beat=Fraction(start),
                            length_beats=length, notes=notes)


def one_note_arrangement():
    notes = [NoteEvent(Fraction(0), Fraction(1), 60, 80)]
    return Arrangement(song_id="x", tempo_bpm=120.0, meter=(4, 4), entries=[entry(0, 0, notes)])


def test_single_note_tick_arithmetic(tmp_path):
    path = tmp_path / "one.mid"
    write_midi(one_note_arrangement(), path)
    data = smf.parse_midi_file(path)
    notes = [n for t in data.tracks for n in t.notes]
    assert len(notes) == 1
    assert notes[0].start_tick == 0
    assert notes[0].duration_tick == 480
    assert notes[0].pitch == 60 and notes[0].velocity == 80


def test_empty_arrangement_rejected(tmp_path):
    arr = Arrangement(song_id="x", tempo_bpm=120.0, meter=(4, 4), entries=[])
    assert validate_arrangement(arr)
    with pytest.raises(ValueError):
        write_midi(arr, tmp_path / "no.mid")


def test_empty_measure_rejected(tmp_path):
    arr = one_note_arrangement()
    arr.entries.append(entry(1, 4, []))
    with pytest.raises(ValueError):
        write_midi(arr, tmp_path / "no.mid")


@st.composite
def arrangements(draw):
    n = draw(st.integers(1, 4))
    entries = []
    start = 0
    for i in range(n):
        length = draw(st.integers(2, 6))
        notes = []
        for _ in range(draw(st.integers(1, 6))):
            onset = Fraction(draw(st.integers(0, length * 24 - 1)), 24)
            dur = Fraction(draw(st.integers(1, 72)), 24)
            notes.append(NoteEvent(onset, dur, draw(st.integers(21, 108)),
                                   draw(st.integers(1, 127))))
        notes.sort(key=lambda x: (x.onset, x.pitch))
        entries.append(entry(i, start, notes, length))
        start += length
    return Arrangement(song_id="h", tempo_bpm=float(draw(st.integers(40, 200))), meter=(4, 4),
                       entries=entries)


@given(arrangements())
@settings(max_examples=40, deadline=None)
def test_midi_round_trip_exact(arr, tmp_path_factory):
    path = tmp_path_factory.mktemp("midi") / "rt.mid"
    write_midi(arr, path)
    back = read_midi_notes(path)
    original = sorted(
        (e.start_beat + n.onset, n.duration, n.pitch, n.velocity)
        for e in arr.entries
        for n in e.notes
    )
    assert back == original


# ---------------------------------------------------------------------------
# dataset directory ingestion


def write_source_dir(root: Path, n_measures=4, beat_step=0.5, decreasing=False,
                     tracks=(("MELODY", [(0, 8, 72, 90)]), ("PIANO", None))):
    root.mkdir(parents=True, exist_ok=True)
    n_beats = n_measures * 4
    times = [round(i * beat_step, 3) for i in range(n_beats)]
    if decreasing:
        times[2], times[3] = times[3], times[2]
    lines = [f"{t}\t{1.0 if i % 4 == 0 else 2.0}" for i, t in enumerate(times)]
    (root / "beats.txt").write_text("\n".join(lines), "utf-8")
    end = n_beats * beat_step
    (root / "chords.txt").write_text(f"0.0\t{end}\tC:maj\n", "utf-8")
    (root / "keys.txt").write_text(f"0.0\t{end}\tC:maj\n", "utf-8")
    (root / "phrases.txt").write_text(f"0\t{n_measures}\tverse\n", "utf-8")

    piano_notes = [
        # (start_tick, dur_tick, pitch, vel) at 480 ppqn, 120bpm -> beat = 0.5s = 480 ticks
        smf.MidiNote(i * 480, 240, 48 + (i % 12), 70)
        for i in range(n_beats)
    ]
    # anticipation: a note starting on the last beat of measure 1, 2 beats long
    piano_notes.append(smf.MidiNote(3 * 480, 960, 60, 77))
    out_tracks = []
    for name, notes in tracks:
        if notes is None:
            midi_notes = piano_notes
        else:
            midi_notes = [smf.MidiNote(s * 480, d * 480, p, v) for s, d, p, v in notes]
        out_tracks.append((name, midi_notes))

    # write a multi-track file by concatenating per-track chunks
    payload = b"MThd" + (6).to_bytes(4, "big") + (1).to_bytes(2, "big") + \
        (len(out_tracks) + 1).to_bytes(2, "big") + (480).to_bytes(2, "big")
    tempo_track = smf.write_midi_bytes(120.0, [], track_name="meta")
    payload += tempo_track[14:14 + int.from_bytes(tempo_track[18:22], "big") + 8]
    for name, notes in out_tracks:
        blob = smf.write_midi_bytes(120.0, notes, track_name=name)
        first_len = int.from_bytes(blob[18:22], "big")
        second = blob[14 + 8 + first_len:]
        payload += second
    (root / "song.mid").write_bytes(payload)
    return SourceDirectory.discover(root)


def test_ingest_expands_chord_spans(tmp_path):
    src = write_source_dir(tmp_path / "song1")
    song = ingest_dataset_song(src)
    assert len(song.measures) == 4
    for m in song.measures:
        assert len(m.chords) == 4
        assert all(c.root_pc == 0 and c.quality == "maj" for c in m.chords)


def test_anticipation_stays_with_onset_measure(tmp_path):
    src = write_source_dir(tmp_path / "song2")
    song = ingest_dataset_song(src)
    m0 = song.measures[0]
    crossing = [n for n in m0.accompaniment if n.onset + n.duration > m0.length_beats]
    assert crossing, "anticipation note should be owned by measure 0"
    assert crossing[0].duration == Fraction(2)


def test_decreasing_beats_rejected(tmp_path):
    src = write_source_dir(tmp_path / "song3", decreasing=True)
    with pytest.raises(MalformedAnnotation):
        ingest_dataset_song(src)


def test_track_ambiguity(tmp_path):
    notes = [(i, 1, 50 + i, 70) for i in range(8)]
    src = write_source_dir(
        tmp_path / "song4",
        tracks=(("MELODY", [(0, 8, 72, 90)]), ("LEFT", notes), ("RIGHT", notes)),
    )
    with pytest.raises(TrackAmbiguity):
        ingest_dataset_song(src)


def test_ingest_deterministic(tmp_path):
    src = write_source_dir(tmp_path / "song5")
    a = ingest_dataset_song(src)
    b = ingest_dataset_song(src)
    from accompanist.songmodel import write_song_bundle

    assert write_song_bundle(a) == write_song_bundle(b)


def test_compact_phrase_string(tmp_path):
    src = write_source_dir(tmp_path / "song6", n_measures=8)
    (Path(tmp_path / "song6") / "phrases.txt").write_text("i4A4", "utf-8")
    song = ingest_dataset_song(src)
    assert [m.section_label for m in song.measures[:4]] == ["intro"] * 4
    assert [m.section_label for m in song.measures[4:]] == ["verse"] * 4
    assert song.measures[4].phrase_role == "begin"
    assert song.measures[7].phrase_role == "end"
