"""Beat-synchronous song representation shared by every stage of the pipeline.

All timing is expressed in beats as exact rationals on a 24-ticks-per-beat
grid, so feature extraction, signatures, and MIDI round trips are bit-exact.
A song is a flat list of measures; each measure owns the notes whose onsets
fall inside it (a note may ring past the bar line), one chord symbol per
beat, and a structure triple (section label, phrase role, dynamics trend).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, NamedTuple, Optional

from . import harmony

GRID_TICKS_PER_BEAT = 24

SECTION_LABELS = ("intro", "verse", "prechorus", "chorus", "bridge", "outro", "other")
PHRASE_ROLES = ("begin", "mid", "end", "single")
DYNAMICS_TRENDS = ("none", "crescendo", "decrescendo", "swell", "drop")

STYLE_AXES = ("dyn", "art", "rhythm", "tension", "texture", "register")

# One fixed categorical vocabulary per style axis.  Sizes sum to 23; adding
# one AUTO slot per axis yields the 29-dimensional prompt space.
STYLE_VOCAB: dict[str, tuple[str, ...]] = {
    "dyn": ("quiet", "soft", "medium", "loud"),
    "art": ("gentle", "normal", "staccato"),
    "rhythm": ("slow", "medium", "fast", "dense"),
    "tension": ("steady", "light_sync", "syncopated"),
    "texture": ("block", "arp", "alberti", "stride", "ostinato", "mixed"),
    "register": ("warm", "mid", "bright"),
}

AUTO_LABEL = "AUTO"
PROMPT_DIM = sum(len(v) + 1 for v in STYLE_VOCAB.values())  # 29


class StyleVector(NamedTuple):
    """Six discrete per-measure style slots; the planner/retriever interface."""

    dyn: str
    art: str
    rhythm: str
    tension: str
    texture: str
    register: str

    def validate(self) -> None:
        for axis, label in zip(STYLE_AXES, self):
            if label not in STYLE_VOCAB[axis]:
                raise ValueError(f"style axis {axis!r} has no label {label!r}")

    @property
    def key(self) -> tuple[str, ...]:
        return tuple(self)


def hamming(a: StyleVector, b: StyleVector) -> int:
    return sum(1 for x, y in zip(a, b) if x != y)


def weighted_hamming(a: StyleVector, b: StyleVector, weights: dict[str, float] | None = None) -> float:
    if weights is None:
        return float(hamming(a, b))
    return sum(weights.get(axis, 1.0) for axis, x, y in zip(STYLE_AXES, a, b) if x != y)


@dataclass(frozen=True)
class NoteEvent:
    """One played note, measure-relative onset in beats.

    onset + duration may exceed the measure length: anticipations stay owned
    by the measure where they start.
    """

    onset: Fraction
    duration: Fraction
    pitch: int
    velocity: int
    voice_hint: Optional[int] = None


@dataclass
class Measure:
    index: int
    length_beats: int
    beat_positions: list[Fraction]
    melody: list[NoteEvent]
    accompaniment: list[NoteEvent]
    chords: list[harmony.ChordSymbol]
    section_label: str
    phrase_role: str
    dynamics_trend: str = "none"


@dataclass
class Song:
    id: str
    key_spans: list[harmony.KeyContext]
    meter: tuple[int, int]
    tempo_bpm: float
    measures: list[Measure]

    def key_at(self, measure_index: int) -> harmony.KeyContext:
        """Key span containing the measure's downbeat (spans tile the song)."""
        for span in self.key_spans:
            if span.start <= measure_index < span.end:
                return span
        raise KeyError(f"no key span covers measure {measure_index}")


class SchemaViolation(ValueError):
    """Bundle text violates the canonical schema; carries the JSON path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def snap_to_grid(value: Fraction) -> Fraction:
    """Round a beat value to the nearest 1/24 beat."""
    ticks = round(value * GRID_TICKS_PER_BEAT)
    return Fraction(ticks, GRID_TICKS_PER_BEAT)


def beat_str(value: Fraction) -> str:
    return f"{value.numerator}/{value.denominator}"


def parse_beat(text: str, path: str = "") -> Fraction:
    try:
        num, den = text.split("/")
        return Fraction(int(num), int(den))
    except (ValueError, ZeroDivisionError) as exc:
        raise SchemaViolation(path, f"bad beat value {text!r}") from exc


def validate_song(song: Song) -> list[str]:
    """Collect invariant violations; empty list means the song is well formed."""
    problems: list[str] = []
    if not song.measures:
        problems.append("song: no measures")
    if song.meter[0] < 1 or song.meter[1] not in (1, 2, 4, 8, 16):
        problems.append(f"song: unsupported meter {song.meter}")

    covered = 0
    for span in sorted(song.key_spans, key=lambda s: s.start):
        if span.start != covered:
            problems.append(f"key_spans: gap or overlap at measure {covered}")
        if span.mode not in ("major", "minor"):
            problems.append(f"key_spans: bad mode {span.mode!r}")
        if not 0 <= span.tonic_pc < 12:
            problems.append(f"key_spans: tonic_pc {span.tonic_pc} out of range")
        covered = span.end
    if song.measures and covered != len(song.measures):
        problems.append(f"key_spans: cover {covered} measures, song has {len(song.measures)}")

    for m in song.measures:
        where = f"measure {m.index}"
        if not 2 <= m.length_beats <= 6:
            problems.append(f"{where}: length_beats {m.length_beats} outside 2-6")
        if len(m.chords) != m.length_beats:
            problems.append(f"{where}: chords has {len(m.chords)} entries, expected {m.length_beats}")
        if len(m.beat_positions) != m.length_beats:
            problems.append(f"{where}: beat_positions has {len(m.beat_positions)} entries, expected {m.length_beats}")
        if m.section_label not in SECTION_LABELS:
            problems.append(f"{where}: section_label {m.section_label!r} unknown")
        if m.phrase_role not in PHRASE_ROLES:
            problems.append(f"{where}: phrase_role {m.phrase_role!r} unknown")
        if m.dynamics_trend not in DYNAMICS_TRENDS:
            problems.append(f"{where}: dynamics_trend {m.dynamics_trend!r} unknown")
        for kind, notes in (("melody", m.melody), ("accompaniment", m.accompaniment)):
            for i, note in enumerate(notes):
                tag = f"{where}: {kind}[{i}]"
                if note.onset < 0:
                    problems.append(f"{tag}: onset {note.onset} negative")
                if note.duration <= 0:
                    problems.append(f"{tag}: duration {note.duration} not positive")
                if not 0 <= note.pitch <= 127:
                    problems.append(f"{tag}: pitch {note.pitch} outside 0-127")
                if not 1 <= note.velocity <= 127:
                    problems.append(f"{tag}: velocity {note.velocity} outside 1-127")
    return problems


# ---------------------------------------------------------------------------
# Canonical JSON bundle (one UTF-8 document per song, fixed field order)


def _note_to_dict(note: NoteEvent) -> dict:
    return {
        "onset": beat_str(note.onset),
        "duration": beat_str(note.duration),
        "pitch": note.pitch,
        "velocity": note.velocity,
        "voice_hint": note.voice_hint,
    }


def _note_from_dict(obj: dict, path: str) -> NoteEvent:
    if not isinstance(obj, dict):
        raise SchemaViolation(path, "note must be an object")
    for key in ("onset", "duration", "pitch", "velocity"):
        if key not in obj:
            raise SchemaViolation(f"{path}.{key}", "missing field")
    note = NoteEvent(
        onset=parse_beat(obj["onset"], f"{path}.onset"),
        duration=parse_beat(obj["duration"], f"{path}.duration"),
        pitch=int(obj["pitch"]),
        velocity=int(obj["velocity"]),
        voice_hint=obj.get("voice_hint"),
    )
    if note.duration <= 0:
        raise SchemaViolation(f"{path}.duration", "must be positive")
    return note


def song_to_bundle(song: Song) -> dict:
    return {
        "id": song.id,
        "key_spans": [
            {"tonic_pc": s.tonic_pc, "mode": s.mode, "start": s.start, "end": s.end}
            for s in song.key_spans
        ],
        "meter": [song.meter[0], song.meter[1]],
        "tempo_bpm": song.tempo_bpm,
        "measures": [
            {
                "index": m.index,
                "length_beats": m.length_beats,
                "beat_positions": [beat_str(b) for b in m.beat_positions],
                "melody": [_note_to_dict(n) for n in m.melody],
                "accompaniment": [_note_to_dict(n) for n in m.accompaniment],
                "chords": [harmony.format_chord(c) for c in m.chords],
                "section_label": m.section_label,
                "phrase_role": m.phrase_role,
                "dynamics_trend": m.dynamics_trend,
            }
            for m in song.measures
        ],
    }


def song_from_bundle(obj: dict) -> Song:
    if not isinstance(obj, dict):
        raise SchemaViolation("$", "bundle must be an object")
    for key in ("id", "key_spans", "meter", "tempo_bpm", "measures"):
        if key not in obj:
            raise SchemaViolation(f"$.{key}", "missing field")
    spans = []
    for i, s in enumerate(obj["key_spans"]):
        path = f"$.key_spans[{i}]"
        for key in ("tonic_pc", "mode", "start", "end"):
            if key not in s:
                raise SchemaViolation(f"{path}.{key}", "missing field")
        spans.append(
            harmony.KeyContext(
                tonic_pc=int(s["tonic_pc"]), mode=s["mode"], start=int(s["start"]), end=int(s["end"])
            )
        )
    meter = obj["meter"]
    if not (isinstance(meter, list) and len(meter) == 2):
        raise SchemaViolation("$.meter", "must be [numerator, denominator]")

    measures = []
    for i, m in enumerate(obj["measures"]):
        path = f"$.measures[{i}]"
        for key in (
            "index",
            "length_beats",
            "beat_positions",
            "melody",
            "accompaniment",
            "chords",
            "section_label",
            "phrase_role",
            "dynamics_trend",
        ):
            if key not in m:
                raise SchemaViolation(f"{path}.{key}", "missing field")
        try:
            chords = [harmony.parse_chord(c) for c in m["chords"]]
        except harmony.ChordSyntaxError as exc:
            raise SchemaViolation(f"{path}.chords", str(exc)) from exc
        measures.append(
            Measure(
                index=int(m["index"]),
                length_beats=int(m["length_beats"]),
                beat_positions=[
                    parse_beat(b, f"{path}.beat_positions[{j}]")
                    for j, b in enumerate(m["beat_positions"])
                ],
                melody=[_note_from_dict(n, f"{path}.melody[{j}]") for j, n in enumerate(m["melody"])],
                accompaniment=[
                    _note_from_dict(n, f"{path}.accompaniment[{j}]")
                    for j, n in enumerate(m["accompaniment"])
                ],
                chords=chords,
                section_label=m["section_label"],
                phrase_role=m["phrase_role"],
                dynamics_trend=m["dynamics_trend"],
            )
        )
    return Song(
        id=str(obj["id"]),
        key_spans=spans,
        meter=(int(meter[0]), int(meter[1])),
        tempo_bpm=float(obj["tempo_bpm"]),
        measures=measures,
    )


def write_song_bundle(song: Song) -> str:
    return json.dumps(song_to_bundle(song), indent=2, ensure_ascii=False) + "\n"


def parse_song_bundle(text: str) -> Song:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation("$", f"not valid JSON: {exc}") from exc
    return song_from_bundle(obj)
