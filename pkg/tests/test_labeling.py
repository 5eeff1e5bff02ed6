from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accompanist.labeling import (
    EMPTY_MEASURE_STYLE,
    CorpusTooSmall,
    ContinuousStyleFeatures,
    EmptyMeasure,
    build_quantile_table,
    classify_texture,
    extract_features,
    label_measure,
    metrical_weight,
    syncopation_score,
)
from accompanist.songmodel import NoteEvent


def note(onset, dur, pitch, vel=80):
    return NoteEvent(Fraction(onset), Fraction(dur), pitch, vel)


def quarters(pitches, vel=80, dur=1):
    return [note(i, dur, p, vel) for i, p in enumerate(pitches)]


# ---------------------------------------------------------------------------
# features


def test_basic_feature_arithmetic():
    notes = [note(Fraction(i, 2), Fraction(1, 2), 48 + i, 80) for i in range(8)]
    f = extract_features(notes, 4)
    assert f.onset_rate == 2.0
    assert f.velocity_median == 80.0


def test_all_short_notes_staccato_ratio_one():
    notes = [note(i, Fraction(1, 10), 60) for i in range(4)]
    f = extract_features(notes, 4)
    assert f.staccato_ratio == 1.0


def test_empty_measure_features():
    f = extract_features([], 4)
    assert f.onset_rate == 0.0 and f.register_mean is None


# ---------------------------------------------------------------------------
# syncopation


def test_all_onbeat_is_zero():
    assert syncopation_score([Fraction(i) for i in range(4)], (4, 4)) == 0.0


def test_single_offbeat_is_one():
    assert syncopation_score([Fraction(3, 2)], (4, 4)) == 1.0


def test_half_offbeat_is_half():
    onsets = [Fraction(i) for i in range(4)] + [Fraction(i) + Fraction(1, 2) for i in range(4)]
    assert syncopation_score(onsets, (4, 4)) == 0.5


def test_direct_weighted_count_oracle(rng):
    # score equals the weak-position fraction computed independently
    for _ in range(200):
        n = int(rng.integers(1, 12))
        onsets = [Fraction(int(rng.integers(0, 96)), 24) for _ in range(n)]
        weak = sum(1 for o in onsets if metrical_weight(int(o * 24)) < 0.8)
        assert syncopation_score(onsets, (4, 4)) == pytest.approx(weak / n)


def test_syncopation_ignores_velocity():
    a = [note(Fraction(1, 2), 1, 60, 20), note(1, 1, 62, 120)]
    b = [note(Fraction(1, 2), 1, 60, 90), note(1, 1, 62, 30)]
    fa = extract_features(a, 4)
    fb = extract_features(b, 4)
    assert fa.syncopation_score == fb.syncopation_score


# ---------------------------------------------------------------------------
# texture rules


def test_block_chords():
    notes = []
    for b in range(4):
        notes += [note(b, 1, p) for p in (60, 64, 67)]
    texture, _ = classify_texture(notes, 4)
    assert texture == "block"


def test_alberti_cell():
    pitches = [48, 55, 52, 55] * 2
    notes = [note(Fraction(i, 2), Fraction(1, 2), p) for i, p in enumerate(pitches)]
    texture, _ = classify_texture(notes, 4)
    assert texture == "alberti"


def test_stride_bass_chord_alternation():
    notes = [note(0, 1, 40), note(2, 1, 41)]
    for b in (1, 3):
        notes += [note(b, 1, p) for p in (60, 64, 67)]
    texture, _ = classify_texture(sorted(notes, key=lambda n: (n.onset, n.pitch)), 4)
    assert texture == "stride"


def test_ostinato_repeating_cell():
    notes = []
    for b in range(4):
        notes.append(note(b, Fraction(1, 2), 48))
        notes.append(note(b + Fraction(1, 2), Fraction(1, 2), 55))
    texture, _ = classify_texture(notes, 4)
    assert texture == "ostinato"


def test_arp_run():
    pitches = [48, 52, 55, 60, 64, 67, 72, 76]
    notes = [note(Fraction(i, 2), Fraction(1, 2), p) for i, p in enumerate(pitches)]
    texture, _ = classify_texture(notes, 4)
    assert texture == "arp"


def test_empty_measure_raises():
    with pytest.raises(EmptyMeasure):
        classify_texture([], 4)


# ---------------------------------------------------------------------------
# quantile table + labeling


def _features(values):
    return [
        ContinuousStyleFeatures(velocity_median=v, staccato_ratio=v / 200.0, onset_rate=v / 25.0,
                                syncopation_score=min(v / 150.0, 1.0), register_mean=30.0 + v / 2,
                                register_span=10.0)
        for v in values
    ]


def test_quantile_interpolation():
    table = build_quantile_table(_features(range(1, 101)))
    assert table.breakpoints["velocity_median"][0] == pytest.approx(25.75)


def test_uniform_values_flag_degenerate():
    table = build_quantile_table(_features([50] * 10))
    assert "velocity_median" in table.degenerate_axes


def test_corpus_too_small():
    with pytest.raises(CorpusTooSmall):
        build_quantile_table(_features([1, 2, 3]))


def test_label_above_q75_is_loud():
    table = build_quantile_table(_features(range(1, 101)))
    f = _features([99])[0]
    assert label_measure(f, table, texture="block").dyn == "loud"


def test_label_at_median_is_soft_or_medium():
    table = build_quantile_table(_features(range(1, 101)))
    f = _features([50])[0]
    assert label_measure(f, table, texture="block").dyn in ("soft", "medium")


def test_empty_measure_gets_lowest_labels():
    table = build_quantile_table(_features(range(1, 101)))
    f = extract_features([], 4)
    assert label_measure(f, table) == EMPTY_MEASURE_STYLE


def test_transposing_octave_changes_only_register(corpus):
    song = corpus.train[0]
    table = corpus.table
    for m in song.measures[:8]:
        if not m.accompaniment:
            continue
        up = [NoteEvent(n.onset, n.duration, n.pitch + 12, n.velocity) for n in m.accompaniment]
        base = label_measure(extract_features(m.accompaniment, m.length_beats), table,
                             texture=classify_texture(m.accompaniment, m.length_beats)[0])
        moved = label_measure(extract_features(up, m.length_beats), table,
                              texture=classify_texture(up, m.length_beats)[0])
        assert base.dyn == moved.dyn and base.art == moved.art
        assert base.rhythm == moved.rhythm and base.tension == moved.tension


def test_corpus_labels_live_in_inventory(corpus):
    # every labeled corpus measure is in the inventory by construction
    for song in corpus.train:
        for m, style in zip(song.measures, corpus.labels[song.id]):
            assert corpus.index.inventory.count(m.length_beats, style) >= 1
