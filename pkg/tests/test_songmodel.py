from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accompanist import harmony
from accompanist.songmodel import (
    Measure,
    NoteEvent,
    SchemaViolation,
    Song,
    StyleVector,
    parse_song_bundle,
    song_from_bundle,
    song_to_bundle,
    validate_song,
    write_song_bundle,
)


def make_measure(index=0, length=4, start=0, chords=None, notes=(), melody=(),
                 section="verse", role="mid"):
    if chords is None:
        chords = [harmony.parse_chord("C:maj")] * length
    return Measure(
        index=index,
        length_beats=length,
        beat_positions=[Fraction(start + b) for b in range(length)],
        melody=list(melody),
        accompaniment=list(notes),
        chords=chords,
        section_label=section,
        phrase_role=role,
        dynamics_trend="none",
    )


def make_song(measures, mode="major", tonic=0):
    return Song(
        id="t",
        key_spans=[harmony.KeyContext(tonic_pc=tonic, mode=mode, start=0, end=len(measures))],
        meter=(4, 4),
        tempo_bpm=120.0,
        measures=measures,
    )


def test_wellformed_song_has_no_violations():
    note = NoteEvent(Fraction(0), Fraction(1), 60, 80)
    song = make_song([make_measure(0, notes=[note]), make_measure(1, start=4)])
    assert validate_song(song) == []


def test_chord_count_violation_names_chords():
    m = make_measure(0, chords=[harmony.parse_chord("C:maj")] * 3)
    song = make_song([m])
    violations = validate_song(song)
    assert any("chords" in v and "measure 0" in v for v in violations)


def test_velocity_zero_violation_names_velocity():
    note = NoteEvent(Fraction(0), Fraction(1), 60, 0)
    song = make_song([make_measure(0, notes=[note])])
    violations = validate_song(song)
    assert any("velocity" in v for v in violations)


def test_anticipation_is_legal():
    # a note may ring past the bar line
    note = NoteEvent(Fraction(3), Fraction(2), 60, 80)
    song = make_song([make_measure(0, notes=[note]), make_measure(1, start=4)])
    assert validate_song(song) == []


def test_key_span_gap_detected():
    song = make_song([make_measure(0), make_measure(1, start=4)])
    song.key_spans = [harmony.KeyContext(0, "major", 0, 1)]
    assert any("key_spans" in v for v in validate_song(song))


def test_style_vector_validation():
    StyleVector("quiet", "gentle", "slow", "steady", "block", "warm").validate()
    with pytest.raises(ValueError):
        StyleVector("quiet", "gentle", "slow", "steady", "block", "nope").validate()


# ---------------------------------------------------------------------------
# canonical bundle round trip

_CHORDS = ["C:maj", "D:min(7)", "G:dom(7)", "A:min", "F:maj(maj7)", "G:dom(7)/B", "E:sus4"]


@st.composite
def songs(draw):
    n = draw(st.integers(1, 5))
    measures = []
    start = 0
    for i in range(n):
        length = draw(st.integers(2, 6))
        notes = []
        for _ in range(draw(st.integers(0, 4))):
            onset = Fraction(draw(st.integers(0, length * 24 - 1)), 24)
            dur = Fraction(draw(st.integers(1, 48)), 24)
            notes.append(
                NoteEvent(onset, dur, draw(st.integers(21, 108)), draw(st.integers(1, 127)),
                          draw(st.one_of(st.none(), st.integers(0, 3))))
            )
        notes.sort(key=lambda x: (x.onset, x.pitch))
        measures.append(
            make_measure(
                i,
                length=length,
                start=start,
                chords=[harmony.parse_chord(draw(st.sampled_from(_CHORDS))) for _ in range(length)],
                notes=notes,
                section=draw(st.sampled_from(["intro", "verse", "chorus"])),
                role=draw(st.sampled_from(["begin", "mid", "end", "single"])),
            )
        )
        start += length
    return make_song(measures, mode=draw(st.sampled_from(["major", "minor"])),
                     tonic=draw(st.integers(0, 11)))


@given(songs())
@settings(max_examples=40, deadline=None)
def test_bundle_round_trip(song):
    text = write_song_bundle(song)
    back = parse_song_bundle(text)
    assert write_song_bundle(back) == text
    assert back.id == song.id and back.meter == song.meter
    assert len(back.measures) == len(song.measures)
    for a, b in zip(song.measures, back.measures):
        assert a.accompaniment == b.accompaniment
        assert a.melody == b.melody
        assert a.chords == b.chords
        assert a.beat_positions == b.beat_positions


def test_minimal_bundle_parses():
    song = make_song([make_measure(0)])
    back = song_from_bundle(song_to_bundle(song))
    assert len(back.measures) == 1


def test_missing_field_reports_json_path():
    song = make_song([make_measure(0)])
    obj = song_to_bundle(song)
    del obj["measures"][0]["phrase_role"]
    with pytest.raises(SchemaViolation) as exc:
        song_from_bundle(obj)
    assert "$.measures[0].phrase_role" in str(exc.value)
