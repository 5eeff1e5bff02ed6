"""Seeded synthetic corpora for desk-scale experiments and acceptance tests.

Structured songs map (section, harmonic degree) deterministically to an
accompaniment pattern, so style labels derived by the labeler are a learnable
function of the conditioning tokens.  Coverage etudes sweep texture, dynamics,
activity, and register combinations so keyword-pinned retrieval always finds
inventory support; they are meant for the index, not for planner training.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import harmony
from .harmony import ChordSymbol, KeyContext
from .labeling import build_quantile_table, extract_features, label_song_measures
from .songmodel import Measure, NoteEvent, Song, StyleVector

TEMPO = 100.0
METER = (4, 4)

_MAJOR_DEGREE_PC = {1: 0, 2: 2, 3: 4, 4: 5, 5: 7, 6: 9, 7: 11}
_MINOR_DEGREE_PC = {1: 0, 2: 2, 3: 3, 4: 5, 5: 7, 6: 8, 7: 10}


def degree_chord(degree: int, quality: str, key: KeyContext,
                 extensions: frozenset[str] = frozenset()) -> ChordSymbol:
    table = _MAJOR_DEGREE_PC if key.mode == "major" else _MINOR_DEGREE_PC
    root = (key.tonic_pc + table[degree]) % 12
    return ChordSymbol(root, quality, extensions)


def _chord_pitches(chord: ChordSymbol, center: int, count: int = 3) -> list[int]:
    rel = sorted(harmony.QUALITY_TEMPLATES[chord.quality])[:count]
    base = center - 6
    root_pitch = base + ((chord.root_pc - base) % 12)
    return [root_pitch + r for r in rel]


def _short(i: int, frac: float) -> bool:
    if frac <= 0.0:
        return False
    return int(i * frac) > int((i - 1) * frac)


def _dur(i: int, frac: float, full: Fraction) -> Fraction:
    return Fraction(1, 5) if _short(i, frac) else full


class _PatternBuilder:
    def __init__(self, velocity: int, short_frac: float):
        self.velocity = velocity
        self.short_frac = short_frac
        self.notes: list[NoteEvent] = []
        self.counter = 0

    def add(self, onset: Fraction, duration: Fraction, pitch: int) -> None:
        self.counter += 1
        d = _dur(self.counter, self.short_frac, duration)
        self.notes.append(NoteEvent(onset=onset, duration=d, pitch=max(21, min(108, pitch)),
                                    velocity=self.velocity))


def make_pattern(texture: str, chords: Sequence[ChordSymbol], length_beats: int,
                 velocity: int, register_center: int, short_frac: float = 0.0,
                 notes_per_beat: int = 2, offbeat: bool = False) -> list[NoteEvent]:
    """Deterministic accompaniment measure in a named texture family."""
    b = _PatternBuilder(velocity, short_frac)
    if texture == "block":
        for beat in range(length_beats):
            for p in _chord_pitches(chords[beat], register_center):
                b.add(Fraction(beat), Fraction(1), p)
    elif texture == "arp":
        npb = max(1, notes_per_beat)
        step = Fraction(1, npb)
        shift = Fraction(1, 2) if offbeat else Fraction(0)
        idx = 0
        for beat in range(length_beats):
            tones = _chord_pitches(chords[beat], register_center)
            cycle = [tones[0], tones[1], tones[2], tones[0] + 12]
            for k in range(npb):
                b.add(beat + k * step + shift, step, cycle[idx % 4])
                idx += 1
    elif texture == "alberti":
        for beat in range(0, length_beats, 2):
            tones = _chord_pitches(chords[beat], register_center)
            low, mid, high = tones[0], tones[1], tones[2]
            cell = [low, high, mid, high]
            for k, p in enumerate(cell):
                onset = beat + Fraction(k, 2)
                if onset < length_beats:
                    b.add(onset, Fraction(1, 2), p)
    elif texture == "stride":
        for beat in range(length_beats):
            tones = _chord_pitches(chords[beat], max(register_center, 58))
            if beat % 2 == 0:
                b.add(Fraction(beat), Fraction(1), tones[0] - 24)
            else:
                for p in tones:
                    b.add(Fraction(beat), Fraction(1), p)
    elif texture == "ostinato":
        for beat in range(length_beats):
            tones = _chord_pitches(chords[0], register_center)
            b.add(Fraction(beat), Fraction(1, 2), tones[0])
            b.add(beat + Fraction(1, 2), Fraction(1, 4), tones[2])
            b.add(beat + Fraction(3, 4), Fraction(1, 4), tones[1])
    else:  # mixed: chord then passing notes
        for beat in range(length_beats):
            tones = _chord_pitches(chords[beat], register_center)
            if beat % 2 == 0:
                for p in tones[:2]:
                    b.add(Fraction(beat), Fraction(1), p)
            else:
                b.add(Fraction(beat), Fraction(1, 2), tones[0])
                b.add(beat + Fraction(1, 2), Fraction(1, 2), tones[1])
    return sorted(b.notes, key=lambda n: (n.onset, n.pitch))


def _melody(chords: Sequence[ChordSymbol], length_beats: int) -> list[NoteEvent]:
    targets = (74, 76, 72, 79)
    notes = []
    for beat in range(length_beats):
        mask = sorted(harmony.chord_tone_mask(chords[beat]))
        target = targets[beat % 4]
        pitch = min(
            (p for oct_ in range(5, 7) for pc in mask for p in [pc + 12 * oct_]),
            key=lambda p: (abs(p - target), p),
        )
        notes.append(NoteEvent(onset=Fraction(beat), duration=Fraction(1), pitch=pitch, velocity=90))
    return notes


SECTION_SPECS: dict[str, dict] = {
    "intro": dict(velocity=65, register=52, short_frac=0.0, npb=2, offbeat=False,
                  textures={1: "arp", 2: "arp", 4: "alberti", 5: "arp", 6: "alberti"},
                  progression=[(1, "maj", ()), (4, "maj", ())]),
    "verse": dict(velocity=65, register=56, short_frac=0.15, npb=2, offbeat=False,
                  textures={1: "arp", 2: "alberti", 4: "alberti", 5: "arp", 6: "alberti"},
                  progression=[(1, "maj", ()), (6, "min", ()), (4, "maj", ()), (5, "dom", ("7",))]),
    "prechorus": dict(velocity=85, register=60, short_frac=0.15, npb=2, offbeat=False,
                      textures={1: "ostinato", 2: "ostinato", 4: "arp", 5: "arp", 6: "ostinato"},
                      progression=[(2, "min", ("7",)), (5, "dom", ("7",))]),
    "chorus": dict(velocity=105, register=62, short_frac=0.3, npb=2, offbeat=False,
                   textures={1: "block", 2: "block", 4: "stride", 5: "block", 6: "stride"},
                   progression=[(1, "maj", ()), (5, "dom", ()), (6, "min", ()), (4, "maj", ())]),
    "bridge": dict(velocity=85, register=58, short_frac=0.15, npb=2, offbeat=False,
                   textures={1: "ostinato", 2: "ostinato", 4: "ostinato", 5: "arp", 6: "arp"},
                   progression=[(6, "min", ()), (4, "maj", ()), (1, "maj", ()), (5, "dom", ("7",))]),
    "outro": dict(velocity=45, register=50, short_frac=0.0, npb=1, offbeat=True,
                  textures={1: "arp", 2: "arp", 4: "arp", 5: "arp", 6: "arp"},
                  progression=[(1, "maj", ()), (4, "maj", ())]),
}

_MINOR_QUALITY = {"maj": "min", "min": "maj", "dom": "dom"}


def _phrase_roles(length: int) -> list[str]:
    roles = []
    pos = 0
    while pos < length:
        span = min(4, length - pos)
        if span == 1:
            roles.append("single")
        else:
            roles.extend(["begin"] + ["mid"] * (span - 2) + ["end"])
        pos += span
    return roles


def synth_song(song_id: str, seed: int, minor: bool = False) -> Song:
    """One structured synthetic song with learnable section/degree style mapping."""
    rng = np.random.default_rng(seed)
    key = KeyContext(tonic_pc=9 if minor else 0, mode="minor" if minor else "major")
    plan = ["intro", "verse", "prechorus", "chorus", "verse", "prechorus", "chorus", "bridge", "outro"]
    lengths = {"intro": 4, "outro": 4, "bridge": 4, "prechorus": 4}

    measures: list[Measure] = []
    beat_cursor = 0
    for section in plan:
        length = lengths.get(section) or int(rng.choice([6, 8]))
        spec = SECTION_SPECS[section]
        roles = _phrase_roles(length)
        prog = spec["progression"]
        for j in range(length):
            degree, quality, ext = prog[j % len(prog)]
            if minor:
                quality = _MINOR_QUALITY.get(quality, quality)
            split = section in ("verse", "chorus") and rng.random() < 0.2
            if split:
                d2, q2, e2 = prog[(j + 1) % len(prog)]
                if minor:
                    q2 = _MINOR_QUALITY.get(q2, q2)
                c1 = degree_chord(degree, quality, key, frozenset(ext))
                c2 = degree_chord(d2, q2, key, frozenset(e2))
                chords = [c1, c1, c2, c2]
            else:
                c = degree_chord(degree, quality, key, frozenset(ext))
                chords = [c, c, c, c]
            texture = spec["textures"].get(degree, "arp")
            pattern = make_pattern(texture, chords, 4, spec["velocity"], spec["register"],
                                   spec["short_frac"], notes_per_beat=spec["npb"],
                                   offbeat=spec["offbeat"])
            idx = len(measures)
            measures.append(
                Measure(
                    index=idx,
                    length_beats=4,
                    beat_positions=[Fraction(beat_cursor + b) for b in range(4)],
                    melody=_melody(chords, 4),
                    accompaniment=pattern,
                    chords=chords,
                    section_label=section,
                    phrase_role=roles[j],
                    dynamics_trend="crescendo" if (section == "verse" and j == length - 1) else "none",
                )
            )
            beat_cursor += 4
    spans = [KeyContext(tonic_pc=key.tonic_pc, mode=key.mode, start=0, end=len(measures))]
    return Song(id=song_id, key_spans=spans, meter=METER, tempo_bpm=TEMPO, measures=measures)


def synth_etude(song_id: str, seed: int, variant: int = 0) -> Song:
    """Coverage sweep over (texture, velocity, register, activity) combos.

    Meant for the retrieval index only; style is a function of sweep position,
    not of the visible context, so keep etudes out of planner training.
    """
    rng = np.random.default_rng(seed)
    key = KeyContext(tonic_pc=0, mode="major")
    textures = ("block", "arp", "alberti", "stride", "ostinato")
    velocities = (45, 65, 85, 105)
    registers = (52, 58, 66)
    npbs = (1, 2, 3, 4)
    prog = [(1, "maj", ()), (4, "maj", ()), (5, "dom", ("7",)), (6, "min", ())]

    measures: list[Measure] = []
    beat_cursor = 0
    combos = []
    for texture in textures:
        for vel in velocities:
            reg = registers[(variant + len(combos)) % len(registers)]
            npb = npbs[(variant + len(combos)) % len(npbs)]
            combos.append((texture, vel, reg, npb))
    rng.shuffle(combos)
    for i, (texture, vel, reg, npb) in enumerate(combos):
        degree, quality, ext = prog[i % len(prog)]
        c = degree_chord(degree, quality, key, frozenset(ext))
        chords = [c] * 4
        short_frac = (0.0, 0.15, 0.3)[(i + variant) % 3]
        pattern = make_pattern(texture, chords, 4, vel, reg, short_frac, notes_per_beat=npb)
        roles = ("begin", "mid", "mid", "end")
        measures.append(
            Measure(
                index=i,
                length_beats=4,
                beat_positions=[Fraction(beat_cursor + b) for b in range(4)],
                melody=_melody(chords, 4),
                accompaniment=pattern,
                chords=chords,
                section_label="other",
                phrase_role=roles[i % 4],
                dynamics_trend="none",
            )
        )
        beat_cursor += 4
    spans = [KeyContext(tonic_pc=0, mode="major", start=0, end=len(measures))]
    return Song(id=song_id, key_spans=spans, meter=METER, tempo_bpm=TEMPO, measures=measures)


def synth_corpus(n_songs: int = 20, seed: int = 7, n_etudes: int = 4,
                 n_test: int = 5, minor_fraction: float = 0.2):
    """(train songs, etude songs, test songs) with disjoint seeded ids."""
    rng = np.random.default_rng(seed)
    train = [
        synth_song(f"syn{seed}_{i:03d}", int(rng.integers(0, 2**31)),
                   minor=rng.random() < minor_fraction)
        for i in range(n_songs)
    ]
    etudes = [
        synth_etude(f"etude{seed}_{i:02d}", int(rng.integers(0, 2**31)), variant=i)
        for i in range(n_etudes)
    ]
    test = [
        synth_song(f"test{seed}_{i:03d}", int(rng.integers(0, 2**31)), minor=False)
        for i in range(n_test)
    ]
    return train, etudes, test


def label_corpus(songs: Sequence[Song]):
    """(labels, features, quantile table) over every measure of the songs."""
    feats = {
        song.id: [extract_features(m.accompaniment, m.length_beats) for m in song.measures]
        for song in songs
    }
    flat = [f for per_song in feats.values() for f in per_song if f.onset_rate > 0]
    table = build_quantile_table(flat)
    labels = {song.id: label_song_measures(song.measures, table) for song in songs}
    return labels, feats, table


# ---------------------------------------------------------------------------
# Adversarial fixtures for acceptance tests


def sparse_case(seed: int):
    """Tiny corpus with >= 1 measure per length 2-6 plus a random target song."""
    rng = np.random.default_rng(seed)
    key = KeyContext(tonic_pc=0, mode="major")
    qualities = ("maj", "min", "dom", "sus4")

    def random_measure(idx: int, length: int, beat_cursor: int) -> Measure:
        chords = []
        for _ in range(length):
            q = qualities[int(rng.integers(0, len(qualities)))]
            root = int(rng.integers(0, 12))
            chords.append(ChordSymbol(root, q, frozenset(("7",)) if (q in ("min", "dom") and rng.random() < 0.5) else frozenset()))
        n_notes = int(rng.integers(1, 4 + length))
        notes = []
        for _ in range(n_notes):
            onset = Fraction(int(rng.integers(0, length * 4)), 4)
            notes.append(
                NoteEvent(onset=onset, duration=Fraction(1, 2), pitch=int(rng.integers(40, 80)),
                          velocity=int(rng.integers(40, 110)))
            )
        notes.sort(key=lambda n: (n.onset, n.pitch))
        roles = ("begin", "mid", "end", "single")
        return Measure(
            index=idx,
            length_beats=length,
            beat_positions=[Fraction(beat_cursor + b) for b in range(length)],
            melody=[],
            accompaniment=notes,
            chords=chords,
            section_label=("verse", "chorus", "other")[int(rng.integers(0, 3))],
            phrase_role=roles[int(rng.integers(0, 4))],
            dynamics_trend="none",
        )

    corpus_measures = []
    cursor = 0
    idx = 0
    for length in (2, 3, 4, 5, 6):
        for _ in range(int(rng.integers(1, 4))):
            corpus_measures.append(random_measure(idx, length, cursor))
            cursor += length
            idx += 1
    corpus = Song(id=f"sparse{seed}", key_spans=[KeyContext(0, "major", 0, len(corpus_measures))],
                  meter=METER, tempo_bpm=TEMPO, measures=corpus_measures)

    n_target = int(rng.integers(8, 17))
    target_measures = []
    cursor = 0
    for i in range(n_target):
        length = int(rng.choice([2, 3, 4, 5, 6]))
        target_measures.append(random_measure(i, length, cursor))
        cursor += length
    target = Song(id=f"sparse{seed}_target", key_spans=[KeyContext(0, "major", 0, n_target)],
                  meter=METER, tempo_bpm=TEMPO, measures=target_measures)
    return corpus, target


def dominant_case(seed: int, n_dominant: int = 30, n_alternates: int = 10,
                  target_len: int = 24):
    """Corpus dominated by one pattern signature; target song of like measures."""
    rng = np.random.default_rng(seed)
    key = KeyContext(tonic_pc=0, mode="major")
    chord = ChordSymbol(0, "maj")
    chords = [chord] * 4

    def measure(idx: int, pattern: list[NoteEvent], cursor: int, role: str) -> Measure:
        return Measure(
            index=idx, length_beats=4,
            beat_positions=[Fraction(cursor + b) for b in range(4)],
            melody=_melody(chords, 4), accompaniment=pattern, chords=chords,
            section_label="verse", phrase_role=role, dynamics_trend="none",
        )

    dominant_pattern = make_pattern("block", chords, 4, 80, 58)
    measures = []
    cursor = 0
    roles = _phrase_roles(n_dominant + n_alternates)
    for i in range(n_dominant):
        measures.append(measure(i, list(dominant_pattern), cursor, roles[i]))
        cursor += 4
    for i in range(n_alternates):
        base = make_pattern(("arp", "alberti", "ostinato", "stride")[i % 4], chords, 4, 80,
                            56 + (i % 5), notes_per_beat=2 + (i % 2))
        measures.append(measure(n_dominant + i, base, cursor, roles[n_dominant + i]))
        cursor += 4
    corpus = Song(id=f"dom{seed}", key_spans=[KeyContext(0, "major", 0, len(measures))],
                  meter=METER, tempo_bpm=TEMPO, measures=measures)

    target_measures = []
    cursor = 0
    roles = _phrase_roles(target_len)
    for i in range(target_len):
        target_measures.append(measure(i, list(dominant_pattern), cursor, roles[i]))
        cursor += 4
    target = Song(id=f"dom{seed}_target", key_spans=[KeyContext(0, "major", 0, target_len)],
                  meter=METER, tempo_bpm=TEMPO, measures=target_measures)
    return corpus, target
