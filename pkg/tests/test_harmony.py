import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accompanist import harmony
from accompanist.harmony import (
    ChordSymbol,
    KeyContext,
    MatchKind,
    RelaxStage,
    chord_tone_mask,
    diatonic_mask,
    format_chord,
    normalize_key,
    parse_chord,
    quality_match,
    to_roman,
    transpose_chord,
)
from .test_songmodel import make_measure, make_song
from accompanist.songmodel import NoteEvent


# ---------------------------------------------------------------------------
# key normalization


def test_a_minor_song_unchanged():
    song = make_song([make_measure(0)], mode="minor", tonic=9)
    out = normalize_key(song)
    assert out.key_spans[0].tonic_pc == 9
    assert out.measures[0].chords == song.measures[0].chords


def test_g_major_shifts_up_five():
    note = NoteEvent(Fraction(0), Fraction(1), 67, 80)
    chord = parse_chord("G:maj")
    song = make_song([make_measure(0, chords=[chord] * 4, notes=[note])], tonic=7)
    out = normalize_key(song)
    assert out.key_spans[0].tonic_pc == 0
    assert out.measures[0].accompaniment[0].pitch == 72  # +5, not -7
    assert out.measures[0].chords[0].root_pc == 0


def test_modulation_spans_shift_independently():
    # C major then E major: first span untouched, second shifted by -4
    m0 = make_measure(0, chords=[parse_chord("C:maj")] * 4)
    m1 = make_measure(1, start=4, chords=[parse_chord("E:maj")] * 4,
                      notes=[NoteEvent(Fraction(0), Fraction(1), 64, 80)])
    song = make_song([m0, m1])
    song.key_spans = [KeyContext(0, "major", 0, 1), KeyContext(4, "major", 1, 2)]
    out = normalize_key(song)
    assert out.measures[0].chords[0].root_pc == 0
    assert out.measures[1].chords[0].root_pc == (4 - 4) % 12
    assert out.measures[1].accompaniment[0].pitch == 60
    assert all(s.tonic_pc == 0 for s in out.key_spans)


# ---------------------------------------------------------------------------
# roman numerals

# independent scale-degree oracle: degree and offset for every pc in C major
_C_MAJOR_TABLE = {
    0: (1, 0), 1: (2, -1), 2: (2, 0), 3: (3, -1), 4: (3, 0), 5: (4, 0),
    6: (4, +1), 7: (5, 0), 8: (6, -1), 9: (6, 0), 10: (7, -1), 11: (7, 0),
}


def test_roman_degree_table_oracle():
    key = KeyContext(0, "major")
    for pc, (degree, offset) in _C_MAJOR_TABLE.items():
        rn = to_roman(ChordSymbol(pc, "maj"), key)
        assert (rn.degree, rn.chromatic_offset) == (degree, offset), pc


def test_d_min7_is_ii7():
    rn = to_roman(parse_chord("D:min(7)"), KeyContext(0, "major"))
    assert rn.degree == 2 and rn.quality == "min"


def test_cmaj7_is_I_in_C_and_V_in_F():
    chord = parse_chord("C:maj7")
    assert to_roman(chord, KeyContext(0, "major")).degree == 1
    assert to_roman(chord, KeyContext(5, "major")).degree == 5


def test_eb_in_c_major_is_flat_three():
    rn = to_roman(parse_chord("D#:maj"), KeyContext(0, "major"))
    assert rn.degree == 3 and rn.chromatic_offset == -1


def test_raised_seventh_in_minor():
    rn = to_roman(ChordSymbol(8, "maj"), KeyContext(9, "minor"))  # G# in A minor
    assert rn.degree == 7 and rn.chromatic_offset == +1


@given(st.integers(0, 11), st.integers(-24, 24), st.sampled_from(["major", "minor"]))
@settings(max_examples=200, deadline=None)
def test_transposition_coherence(root, k, mode):
    chord = ChordSymbol(root, "min", frozenset({"7"}))
    key = KeyContext(3, mode)
    shifted_key = KeyContext((key.tonic_pc + k) % 12, mode)
    assert to_roman(transpose_chord(chord, k), shifted_key) == to_roman(chord, key)


# ---------------------------------------------------------------------------
# quality matching


def beat(q, ext=()):
    return (q, frozenset(ext))


def test_exact_match():
    assert quality_match(beat("maj"), beat("maj"), RelaxStage.STRICT) == MatchKind.EXACT


def test_family_match_min_min7():
    assert quality_match(beat("min"), beat("min", {"7"}), RelaxStage.FAMILY) == MatchKind.FAMILY


def test_dom_vs_min_by_stage():
    assert quality_match(beat("dom"), beat("min"), RelaxStage.STRICT) == MatchKind.MISMATCH
    assert quality_match(beat("dom"), beat("min"), RelaxStage.CROSS_FAMILY) == MatchKind.CROSS_FAMILY


def _oracle_match(t, c, stage):
    """Independent truth table for the match classification."""
    tq, text_ = t[0], t[1]
    cq, cext = c[0], c[1]
    if tq == "other" or cq == "other":
        return MatchKind.MISSING
    if tq == cq and text_ == cext:
        return MatchKind.EXACT
    if tq == cq:
        return MatchKind.FAMILY if stage >= 2 else MatchKind.MISMATCH
    sus_pair = ({tq, cq} & {"sus2", "sus4"}) and ({tq, cq} & {"maj", "dom"})
    if sus_pair and len({tq, cq}) == 2:
        return MatchKind.SUS_RELATED if stage >= 2 else MatchKind.MISMATCH
    return MatchKind.CROSS_FAMILY if stage >= 3 else MatchKind.MISMATCH


def test_quality_match_truth_table():
    exts = [frozenset(), frozenset({"7"})]
    beats = [(q, e) for q in harmony.QUALITIES for e in exts
             if not (q == "maj" and e) and not (q == "dim" and False)]
    beats = [(q, e if q in ("min", "dom", "dim", "sus2", "sus4", "other") else frozenset())
             for q, e in beats]
    for t, c in itertools.product(beats, repeat=2):
        for stage in RelaxStage:
            got = quality_match(t, c, stage)
            want = _oracle_match(t, c, stage)
            assert got == want, (t, c, stage, got, want)


def test_match_symmetry_for_exact_and_family():
    pairs = [(beat("min"), beat("min", {"7"})), (beat("maj"), beat("maj"))]
    for a, b in pairs:
        k1 = quality_match(a, b, RelaxStage.FAMILY)
        k2 = quality_match(b, a, RelaxStage.FAMILY)
        assert k1 == k2


def test_match_kind_monotone_in_stage():
    exts = [frozenset(), frozenset({"7"})]
    beats = [(q, e) for q in ("maj", "min", "dom", "sus4", "dim", "other")
             for e in exts if not (q == "maj" and e)]
    stages = list(RelaxStage)
    for t, c in itertools.product(beats, repeat=2):
        kinds = [quality_match(t, c, s) for s in stages]
        # once a non-mismatch kind appears it persists
        seen = None
        for k in kinds:
            if seen is not None and seen != MatchKind.MISMATCH:
                assert k == seen
            seen = k


def test_other_never_matches():
    assert quality_match(beat("other"), beat("other"), RelaxStage.CROSS_FAMILY) == MatchKind.MISSING
    assert quality_match(beat("other"), beat("maj"), RelaxStage.CROSS_FAMILY) == MatchKind.MISSING
    assert quality_match(beat("maj"), beat("maj"), RelaxStage.FAMILY,
                         wildcard_beat=True) == MatchKind.WILDCARD


# ---------------------------------------------------------------------------
# masks and grammar


def test_c_major_triad_mask():
    assert chord_tone_mask(parse_chord("C:maj")) == frozenset({0, 4, 7})


def test_g_dom7_mask():
    assert chord_tone_mask(parse_chord("G:dom(7)")) == frozenset({7, 11, 2, 5})


def test_a_minor_diatonic_mask():
    assert diatonic_mask(KeyContext(9, "minor")) == frozenset({9, 11, 0, 2, 4, 5, 7})


@given(st.integers(0, 11), st.sampled_from(harmony.QUALITIES),
       st.one_of(st.none(), st.integers(0, 11)))
@settings(max_examples=100, deadline=None)
def test_mask_contains_root_and_bass(root, quality, bass):
    chord = ChordSymbol(root, quality, bass_pc=bass)
    mask = chord_tone_mask(chord)
    assert root in mask
    if bass is not None:
        assert bass in mask


def test_grammar_round_trip():
    for text in ["C:maj(maj7)", "D:min(7)", "G:dom(7)/B", "F#:sus4", "A:min(6,9)",
                 "C:aug", "B:dim(7)", "E:other"]:
        chord = parse_chord(text)
        assert parse_chord(format_chord(chord)) == chord


def test_alias_parsing():
    assert parse_chord("Cmaj7") == parse_chord("C:maj(maj7)")
    assert parse_chord("Dm7") == parse_chord("D:min(7)")
    assert parse_chord("G7") == parse_chord("G:dom(7)")


def test_unknown_quality_maps_to_other():
    chord, recognized = harmony.parse_chord_lenient("C:weirdness")
    assert chord.quality == "other" and not recognized
