from fractions import Fraction

import numpy as np
import pytest

from accompanist.indexing import (
    EmptyCorpus,
    StyleInventory,
    active_signature,
    build_index,
    corpus_signature_stats,
    first_onset_pitches,
    load_index,
    pitch_signature,
    query,
    save_index,
    sustained_pitches,
)
from accompanist.songmodel import NoteEvent, StyleVector

from .test_songmodel import make_measure, make_song


def note(onset, dur, pitch, vel=80):
    return NoteEvent(Fraction(onset), Fraction(dur), pitch, vel)


# ---------------------------------------------------------------------------
# signatures


def test_empty_measure_silent_signature():
    sig = active_signature([], 4)
    assert sig == active_signature([], 4)
    assert sig != active_signature([note(0, 1, 60)], 4)


def test_active_signature_pitch_free_within_band():
    a = [note(0, 1, 60), note(1, 1, 62)]
    b = [note(0, 1, 63), note(1, 1, 65)]  # +3 semitones, same mid band
    assert active_signature(a, 4) == active_signature(b, 4)


def test_one_onset_patterns_all_distinct():
    # exhaustive over all single-onset cells on a 16-cell grid
    sigs = set()
    for cell in range(16):
        notes = [note(Fraction(cell, 4), Fraction(1, 4), 60)]
        sigs.add(active_signature(notes, 4).canonical)
    assert len(sigs) == 16


def test_band_changes_signature():
    low = [note(0, 1, 40)]
    mid = [note(0, 1, 60)]
    high = [note(0, 1, 80)]
    assert len({active_signature(x, 4).canonical for x in (low, mid, high)}) == 3


def test_pitch_signature_stricter():
    a = [note(0, 1, 60)]
    b = [note(0, 1, 61)]
    assert active_signature(a, 4) == active_signature(b, 4)
    assert pitch_signature(a, 4) != pitch_signature(b, 4)
    assert pitch_signature(a, 4) == pitch_signature(list(a), 4)


def test_pitch_equality_implies_active_equality(rng):
    def random_pattern():
        n = int(rng.integers(1, 8))
        return [
            note(Fraction(int(rng.integers(0, 16)), 4), Fraction(int(rng.integers(1, 8)), 4),
                 int(rng.integers(30, 100)))
            for _ in range(n)
        ]

    seen = {}
    for _ in range(2000):
        p = random_pattern()
        ps = pitch_signature(p, 4).canonical
        asig = active_signature(p, 4).canonical
        if ps in seen:
            assert seen[ps] == asig
        seen[ps] = asig


def test_sustain_flag_in_signature():
    held = [note(0, 4, 60)]
    short = [note(0, Fraction(1, 4), 60)]
    assert active_signature(held, 4) != active_signature(short, 4)


def test_first_onset_and_sustained_helpers():
    pattern = [note(0, 1, 64), note(0, 1, 60), note(3, 2, 70)]
    assert first_onset_pitches(pattern) == [60, 64]
    assert sustained_pitches(pattern, 4) == [70]


# ---------------------------------------------------------------------------
# index build + query


def _mini_song(styles):
    measures = [make_measure(i, start=4 * i, notes=[note(0, 1, 60 + i)]) for i in range(len(styles))]
    return make_song(measures)


def test_identical_measures_inventory_count():
    style = StyleVector("soft", "normal", "medium", "steady", "block", "mid")
    song = _mini_song([style] * 10)
    idx = build_index([song], {song.id: [style] * 10})
    assert idx.inventory.count(4, style) == 10
    assert len(idx.inventory.vectors(4)) == 1


def test_absent_key_returns_empty_not_error(corpus):
    weird = StyleVector("loud", "staccato", "dense", "syncopated", "stride", "warm")
    if corpus.index.inventory.count(4, weird):
        pytest.skip("style unexpectedly present")
    assert query(corpus.index, weird, None, None, 4) == []


def test_inventory_totals_match_measure_count(corpus):
    inv = corpus.index.inventory
    per_length = {}
    for rec in corpus.index.records:
        per_length[rec.length_beats] = per_length.get(rec.length_beats, 0) + 1
    for length, count in per_length.items():
        assert inv.total(length) == count


def test_query_equals_brute_force(corpus, rng):
    index = corpus.index
    styles = index.inventory.vectors(4)
    for _ in range(50):
        style = styles[int(rng.integers(0, len(styles)))]
        use_set = rng.random() < 0.3
        style_filter = {style, styles[0]} if use_set else style

        def qual_pred(rec):
            return rec.qual_seq[0][0] in ("maj", "min")

        def role_pred(rec):
            return rec.role.phrase_role in ("begin", "mid")

        got = query(index, style_filter, qual_pred, role_pred, 4)
        expected = sorted(
            (
                r
                for r in index.records
                if r.length_beats == 4
                and (r.style in style_filter if use_set else r.style == style)
                and qual_pred(r)
                and role_pred(r)
            ),
            key=lambda r: r.id,
        )
        assert [r.id for r in got] == [r.id for r in expected]


def test_empty_corpus_raises():
    with pytest.raises(EmptyCorpus):
        build_index([], {})


def test_index_save_load_round_trip(corpus, tmp_path):
    path = tmp_path / "index.bin"
    save_index(corpus.index, path)
    back = load_index(path)
    assert len(back.records) == len(corpus.index.records)
    for a, b in zip(corpus.index.records, back.records):
        assert a.id == b.id
        assert a.style == b.style
        assert a.pattern == b.pattern
        assert a.active_sig == b.active_sig
        assert a.qual_seq == b.qual_seq
        assert a.role == b.role
    assert back.inventory.counts == corpus.index.inventory.counts
    assert back.quantiles.breakpoints == corpus.index.quantiles.breakpoints


def test_signature_stats_shape(corpus):
    stats = corpus_signature_stats(corpus.index)
    assert 0.0 <= stats["mean_unique_ratio"] <= 1.0
    assert stats["measures"] == len(corpus.index.records)
