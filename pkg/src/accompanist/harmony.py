"""Functional harmony: chord symbols, key normalization, Roman numerals.

Chords are factorized into a root pitch class, a quality class, and optional
extension/alteration sets, so retrieval can match on function rather than
absolute spelling.  Keys are normalized per span to C major / A minor; all
downstream matching happens in that normalized space.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Optional

QUALITIES = ("maj", "min", "dom", "dim", "aug", "sus2", "sus4", "other")

# Base pitch-class templates relative to the root.
QUALITY_TEMPLATES: dict[str, frozenset[int]] = {
    "maj": frozenset({0, 4, 7}),
    "min": frozenset({0, 3, 7}),
    "dom": frozenset({0, 4, 7}),
    "dim": frozenset({0, 3, 6}),
    "aug": frozenset({0, 4, 8}),
    "sus2": frozenset({0, 2, 7}),
    "sus4": frozenset({0, 5, 7}),
    "other": frozenset({0, 7}),
}

EXTENSION_OFFSETS = {"6": 9, "7": 10, "maj7": 11, "9": 2, "11": 5, "13": 9}
ALTERATION_OFFSETS = {"b5": 6, "#5": 8, "b9": 1, "#9": 3, "#11": 6, "b13": 8}

# Which extensions are structurally consistent with each quality class.
ALLOWED_EXTENSIONS: dict[str, frozenset[str]] = {
    "maj": frozenset({"6", "maj7", "9", "11", "13"}),
    "min": frozenset({"6", "7", "maj7", "9", "11", "13"}),
    "dom": frozenset({"7", "9", "11", "13"}),
    "dim": frozenset({"7"}),
    "aug": frozenset({"7", "maj7"}),
    "sus2": frozenset({"7"}),
    "sus4": frozenset({"7"}),
    "other": frozenset(EXTENSION_OFFSETS),
}

_EXT_ORDER = ["6", "7", "maj7", "9", "11", "13", "b5", "#5", "b9", "#9", "#11", "b13"]

PITCH_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
_NAME_TO_PC = {name: pc for pc, name in enumerate(PITCH_NAMES)}
_NAME_TO_PC.update({"DB": 1, "EB": 3, "GB": 6, "AB": 8, "BB": 10, "FB": 4, "CB": 11, "E#": 5, "B#": 0})

MAJOR_SCALE = (0, 2, 4, 5, 7, 9, 11)
MINOR_SCALE = (0, 2, 3, 5, 7, 8, 10)  # natural minor

# Non-diatonic root -> (degree, chromatic offset).  Lowered readings for the
# common borrowed roots in major; raised 4/6/7 in minor.
_NONDIATONIC_MAJOR = {1: (2, -1), 3: (3, -1), 6: (4, +1), 8: (6, -1), 10: (7, -1)}
_NONDIATONIC_MINOR = {1: (2, -1), 4: (3, +1), 6: (4, +1), 9: (6, +1), 11: (7, +1)}


class ChordSyntaxError(ValueError):
    pass


@dataclass(frozen=True)
class ChordSymbol:
    root_pc: int
    quality: str
    extensions: frozenset[str] = frozenset()
    alterations: frozenset[str] = frozenset()
    bass_pc: Optional[int] = None

    def __post_init__(self):
        if self.quality not in QUALITIES:
            raise ValueError(f"unknown quality {self.quality!r}")
        bad = self.extensions - ALLOWED_EXTENSIONS[self.quality]
        if bad:
            raise ValueError(f"extensions {sorted(bad)} inconsistent with quality {self.quality}")


@dataclass(frozen=True)
class KeyContext:
    tonic_pc: int
    mode: str  # "major" | "minor"
    start: int = 0
    end: int = 0  # measure range [start, end)


@dataclass(frozen=True)
class RomanNumeral:
    degree: int  # 1-7
    quality: str
    chromatic_offset: int = 0  # -1 borrowed/lowered, +1 raised
    bass_degree: Optional[int] = None


class MatchKind(IntEnum):
    EXACT = 0
    FAMILY = 1
    SUS_RELATED = 2
    CROSS_FAMILY = 3
    WILDCARD = 4
    MISSING = 5
    MISMATCH = 6


class RelaxStage(IntEnum):
    """Candidate-pool relaxation ladder; match kinds unlock monotonically."""

    STRICT = 0
    WILDCARD = 1
    FAMILY = 2
    CROSS_FAMILY = 3
    STYLE_ONLY = 4
    STYLE_RELAXED = 5
    NEIGHBOR = 6


# ---------------------------------------------------------------------------
# Chord text grammar: ROOT ":" QUALITY ["(" ext/alt "," ... ")"] ["/" BASS]

_QUALITY_ALIASES: dict[str, tuple[str, frozenset[str]]] = {
    "maj": ("maj", frozenset()),
    "major": ("maj", frozenset()),
    "m": ("min", frozenset()),
    "min": ("min", frozenset()),
    "minor": ("min", frozenset()),
    "dom": ("dom", frozenset()),
    "dim": ("dim", frozenset()),
    "aug": ("aug", frozenset()),
    "+": ("aug", frozenset()),
    "sus": ("sus4", frozenset()),
    "sus2": ("sus2", frozenset()),
    "sus4": ("sus4", frozenset()),
    "maj7": ("maj", frozenset({"maj7"})),
    "maj9": ("maj", frozenset({"maj7", "9"})),
    "maj6": ("maj", frozenset({"6"})),
    "6": ("maj", frozenset({"6"})),
    "m7": ("min", frozenset({"7"})),
    "min7": ("min", frozenset({"7"})),
    "m6": ("min", frozenset({"6"})),
    "min6": ("min", frozenset({"6"})),
    "m9": ("min", frozenset({"7", "9"})),
    "min9": ("min", frozenset({"7", "9"})),
    "minmaj7": ("min", frozenset({"maj7"})),
    "7": ("dom", frozenset({"7"})),
    "dom7": ("dom", frozenset({"7"})),
    "9": ("dom", frozenset({"7", "9"})),
    "dom9": ("dom", frozenset({"7", "9"})),
    "11": ("dom", frozenset({"7", "9", "11"})),
    "13": ("dom", frozenset({"7", "9", "13"})),
    "dim7": ("dim", frozenset({"7"})),
    "hdim": ("dim", frozenset({"7"})),
    "hdim7": ("dim", frozenset({"7"})),
    "m7b5": ("dim", frozenset({"7"})),
    "7sus4": ("sus4", frozenset({"7"})),
    "sus4(b7)": ("sus4", frozenset({"7"})),
}


def parse_pitch_name(text: str) -> int:
    pc = _NAME_TO_PC.get(text.strip().upper())
    if pc is None:
        raise ChordSyntaxError(f"unknown pitch name {text!r}")
    return pc


def parse_chord_lenient(text: str) -> tuple[ChordSymbol, bool]:
    """Parse a chord label; unknown qualities map to 'other'.

    Returns (chord, recognized).  Raises ChordSyntaxError only when the text
    cannot be shaped into root/quality at all.
    """
    text = text.strip()
    if text.upper() in ("N", "NC", "N.C."):
        return ChordSymbol(0, "other"), True
    bass_pc = None
    if "/" in text:
        text, bass = text.rsplit("/", 1)
        bass_pc = parse_pitch_name(bass)
    if ":" in text:
        root_txt, qual_txt = text.split(":", 1)
    else:
        # tolerate bare "Cmaj7" style by peeling the longest valid root
        root_txt, qual_txt = text[:1], text[1:]
        if len(text) > 1 and text[1] in "#b":
            root_txt, qual_txt = text[:2], text[2:]
    root_pc = parse_pitch_name(root_txt)

    extras = ""
    if "(" in qual_txt:
        if not qual_txt.endswith(")"):
            raise ChordSyntaxError(f"unbalanced parentheses in {text!r}")
        qual_txt, extras = qual_txt[:-1].split("(", 1)

    recognized = True
    exts: set[str] = set()
    alts: set[str] = set()
    if qual_txt in QUALITIES:
        quality = qual_txt
    elif qual_txt in _QUALITY_ALIASES:
        quality, base_ext = _QUALITY_ALIASES[qual_txt]
        exts |= base_ext
    else:
        quality, recognized = "other", False

    for token in filter(None, (t.strip() for t in extras.split(","))):
        if token in EXTENSION_OFFSETS:
            exts.add(token)
        elif token in ALTERATION_OFFSETS:
            alts.add(token)
        else:
            recognized = False
    exts &= ALLOWED_EXTENSIONS[quality]
    return (
        ChordSymbol(root_pc, quality, frozenset(exts), frozenset(alts), bass_pc),
        recognized,
    )


def parse_chord(text: str) -> ChordSymbol:
    chord, _ = parse_chord_lenient(text)
    return chord


def format_chord(chord: ChordSymbol) -> str:
    out = f"{PITCH_NAMES[chord.root_pc]}:{chord.quality}"
    tokens = sorted(chord.extensions, key=_EXT_ORDER.index) + sorted(
        chord.alterations, key=_EXT_ORDER.index
    )
    if tokens:
        out += "(" + ",".join(tokens) + ")"
    if chord.bass_pc is not None:
        out += "/" + PITCH_NAMES[chord.bass_pc]
    return out


def transpose_chord(chord: ChordSymbol, semitones: int) -> ChordSymbol:
    return replace(
        chord,
        root_pc=(chord.root_pc + semitones) % 12,
        bass_pc=None if chord.bass_pc is None else (chord.bass_pc + semitones) % 12,
    )


# ---------------------------------------------------------------------------
# Key normalization and Roman numerals


def normalization_offset(span: KeyContext) -> int:
    """Semitone shift moving the span's tonic to C (major) or A (minor).

    Chosen in (-6, +6] to minimize register displacement.
    """
    target = 0 if span.mode == "major" else 9
    off = (target - span.tonic_pc) % 12
    return off - 12 if off > 6 else off


def _shift_pitch(pitch: int, off: int) -> int:
    p = pitch + off
    while p > 127:
        p -= 12
    while p < 0:
        p += 12
    return p


def normalize_key(song):
    """Return a copy of the song with every key span moved to C major / A minor.

    Melody, accompaniment, chord roots, and bass notes shift by the same
    per-span offset; a measure inherits the span containing its downbeat.
    """
    from .songmodel import Song  # local import; songmodel imports this module

    offsets = {id(span): normalization_offset(span) for span in song.key_spans}
    new_spans = [
        replace(span, tonic_pc=(span.tonic_pc + offsets[id(span)]) % 12)
        for span in song.key_spans
    ]

    new_measures = []
    for m in song.measures:
        span = song.key_at(m.index)
        off = offsets[id(span)]
        if off == 0:
            new_measures.append(m)
            continue
        new_measures.append(
            dataclasses.replace(
                m,
                melody=[replace(n, pitch=_shift_pitch(n.pitch, off)) for n in m.melody],
                accompaniment=[replace(n, pitch=_shift_pitch(n.pitch, off)) for n in m.accompaniment],
                chords=[transpose_chord(c, off) for c in m.chords],
            )
        )
    return Song(
        id=song.id,
        key_spans=new_spans,
        meter=song.meter,
        tempo_bpm=song.tempo_bpm,
        measures=new_measures,
    )


def _degree_of_pc(rel_pc: int, mode: str) -> tuple[int, int]:
    scale = MAJOR_SCALE if mode == "major" else MINOR_SCALE
    if rel_pc in scale:
        return scale.index(rel_pc) + 1, 0
    table = _NONDIATONIC_MAJOR if mode == "major" else _NONDIATONIC_MINOR
    return table[rel_pc]


def to_roman(chord: ChordSymbol, key: KeyContext) -> RomanNumeral:
    rel = (chord.root_pc - key.tonic_pc) % 12
    degree, offset = _degree_of_pc(rel, key.mode)
    bass_degree = None
    if chord.bass_pc is not None:
        bass_degree = _degree_of_pc((chord.bass_pc - key.tonic_pc) % 12, key.mode)[0]
    return RomanNumeral(degree=degree, quality=chord.quality, chromatic_offset=offset, bass_degree=bass_degree)


def chord_tone_mask(chord: ChordSymbol) -> frozenset[int]:
    """Absolute pitch classes covered by the chord (template + colors + bass)."""
    rel = set(QUALITY_TEMPLATES[chord.quality])
    rel.update(EXTENSION_OFFSETS[e] for e in chord.extensions)
    rel.update(ALTERATION_OFFSETS[a] for a in chord.alterations)
    pcs = {(chord.root_pc + r) % 12 for r in rel}
    if chord.bass_pc is not None:
        pcs.add(chord.bass_pc)
    return frozenset(pcs)


def color_pcs(chord: ChordSymbol) -> frozenset[int]:
    """Pitch classes the chord adds beyond its base triad template."""
    rel = {EXTENSION_OFFSETS[e] for e in chord.extensions}
    rel.update(ALTERATION_OFFSETS[a] for a in chord.alterations)
    return frozenset((chord.root_pc + r) % 12 for r in rel)


def diatonic_mask(key: KeyContext) -> frozenset[int]:
    scale = MAJOR_SCALE if key.mode == "major" else MINOR_SCALE
    return frozenset((key.tonic_pc + s) % 12 for s in scale)


BeatQuality = tuple[str, frozenset]


def quality_match(target: Optional[BeatQuality], cand: Optional[BeatQuality], stage: RelaxStage,
                  wildcard_beat: bool = False) -> MatchKind:
    """Classify one beat's quality pair under the given relaxation stage.

    `wildcard_beat` marks the beat as ignored (only honored once the ladder
    reaches the wildcard stage).  'other' never matches except via wildcard.
    """
    if wildcard_beat and stage >= RelaxStage.WILDCARD:
        return MatchKind.WILDCARD
    if target is None or cand is None:
        return MatchKind.MISSING
    tq, text = target[0], frozenset(target[1])
    cq, cext = cand[0], frozenset(cand[1])
    if tq == "other" or cq == "other":
        return MatchKind.MISSING
    if tq == cq:
        if text == cext:
            return MatchKind.EXACT
        return MatchKind.FAMILY if stage >= RelaxStage.FAMILY else MatchKind.MISMATCH
    sus = {"sus2", "sus4"}
    plain = {"dom", "maj"}
    if (tq in sus and cq in plain) or (tq in plain and cq in sus):
        return MatchKind.SUS_RELATED if stage >= RelaxStage.FAMILY else MatchKind.MISMATCH
    return MatchKind.CROSS_FAMILY if stage >= RelaxStage.CROSS_FAMILY else MatchKind.MISMATCH
