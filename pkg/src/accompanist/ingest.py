"""Dataset ingestion and arrangement output.

Reads per-song source directories (MIDI plus beat/chord/phrase/key sidecar
annotations) into the shared Song representation, and writes generated
arrangements as type-1 Standard MIDI Files at 480 PPQN with velocities taken
verbatim from the retrieved patterns.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from . import harmony, smf
from .songmodel import (
    GRID_TICKS_PER_BEAT,
    Measure,
    NoteEvent,
    SECTION_LABELS,
    Song,
    parse_song_bundle,
    snap_to_grid,
    write_song_bundle,
)

__all__ = [
    "SourceDirectory",
    "Arrangement",
    "ArrangementEntry",
    "MalformedAnnotation",
    "TrackAmbiguity",
    "IoFailure",
    "ingest_dataset_song",
    "parse_song_bundle",
    "write_song_bundle",
    "write_midi",
    "read_midi_notes",
    "validate_arrangement",
]

TICKS_PER_BEAT_MIDI = smf.PPQN  # 480; 20 MIDI ticks per grid tick


class MalformedAnnotation(ValueError):
    pass


class TrackAmbiguity(ValueError):
    pass


class IoFailure(OSError):
    pass


@dataclass
class SourceDirectory:
    midi_path: Path
    beat_annotation_path: Path
    chord_annotation_path: Path
    phrase_annotation_path: Path
    key_annotation_path: Path

    @classmethod
    def discover(cls, directory) -> "SourceDirectory":
        d = Path(directory)
        mids = sorted(d.glob("*.mid")) + sorted(d.glob("*.midi"))
        if not mids:
            raise IoFailure(f"no MIDI file in {d}")

        def pick(*names):
            for name in names:
                p = d / name
                if p.exists():
                    return p
            raise IoFailure(f"missing annotation ({'/'.join(names)}) in {d}")

        return cls(
            midi_path=mids[0],
            beat_annotation_path=pick("beats.txt", "beat_midi.txt", "beat_audio.txt"),
            chord_annotation_path=pick("chords.txt", "chord_midi.txt", "chord_audio.txt"),
            phrase_annotation_path=pick("phrases.txt", "human_label1.txt", "label.txt"),
            key_annotation_path=pick("keys.txt", "key_audio.txt", "key_midi.txt"),
        )


@dataclass
class ArrangementEntry:
    measure_index: int
    source_id: str
    start_beat: Fraction
    length_beats: int
    notes: list[NoteEvent]


@dataclass
class Arrangement:
    song_id: str
    tempo_bpm: float
    meter: tuple[int, int]
    entries: list[ArrangementEntry] = field(default_factory=list)


def validate_arrangement(arr: Arrangement) -> list[str]:
    problems = []
    if not arr.entries:
        problems.append("arrangement: no entries")
    for i, entry in enumerate(arr.entries):
        if entry.measure_index != i:
            problems.append(f"entry {i}: measure_index {entry.measure_index} out of order")
        if not entry.notes:
            problems.append(f"entry {i}: empty measure (always-return violated)")
    return problems


# ---------------------------------------------------------------------------
# MIDI output / read-back


def write_midi(arr: Arrangement, path) -> None:
    problems = validate_arrangement(arr)
    if problems:
        raise ValueError("invalid arrangement: " + "; ".join(problems))
    notes = []
    for entry in arr.entries:
        for n in entry.notes:
            start = (entry.start_beat + n.onset) * TICKS_PER_BEAT_MIDI
            dur = n.duration * TICKS_PER_BEAT_MIDI
            if start.denominator != 1 or dur.denominator != 1:
                raise ValueError(f"measure {entry.measure_index}: off-grid note {n}")
            notes.append(smf.MidiNote(int(start), int(dur), n.pitch, n.velocity))
    try:
        smf.write_midi_file(path, arr.tempo_bpm, notes, time_signature=arr.meter)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_midi_notes(path) -> list[tuple[Fraction, Fraction, int, int]]:
    """(onset_beats, duration_beats, pitch, velocity) for every note, in order."""
    data = smf.parse_midi_file(path)
    out = []
    for track in data.tracks:
        for n in track.notes:
            out.append(
                (
                    Fraction(n.start_tick, data.ppqn),
                    Fraction(n.duration_tick, data.ppqn),
                    n.pitch,
                    n.velocity,
                )
            )
    out.sort(key=lambda t: (t[0], t[2]))
    return out


# ---------------------------------------------------------------------------
# Annotation parsing


def _read_rows(path, min_cols: int) -> list[list[str]]:
    try:
        text = Path(path).read_text("utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cols = line.split()
        if len(cols) < min_cols:
            raise MalformedAnnotation(f"{path}:{lineno}: expected {min_cols} columns, got {len(cols)}")
        rows.append(cols)
    return rows


def _parse_beats(path) -> tuple[list[float], list[int]]:
    """Beat times plus measure-group boundaries.

    Accepts two-column files where the second column is either a downbeat
    flag (values in {0,1}) or a 1-based beat index within the measure.
    """
    rows = _read_rows(path, 2)
    times = [float(r[0]) for r in rows]
    marks = [float(r[1]) for r in rows]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise MalformedAnnotation(f"{path}: beat times not strictly increasing")
    if not times:
        raise MalformedAnnotation(f"{path}: no beats")
    if all(m in (0.0, 1.0) for m in marks):
        downbeats = [i for i, m in enumerate(marks) if m == 1.0]
    else:
        downbeats = [i for i, m in enumerate(marks) if int(m) == 1]
    if not downbeats:
        downbeats = [0]
    return times, downbeats


def _parse_spans(path, what: str) -> list[tuple[float, float, str]]:
    rows = _read_rows(path, 3)
    spans = []
    for r in rows:
        try:
            spans.append((float(r[0]), float(r[1]), r[2]))
        except ValueError as exc:
            raise MalformedAnnotation(f"{path}: bad {what} row {r}") from exc
    spans.sort()
    return spans


_PHRASE_LETTER_SECTIONS = {"i": "intro", "o": "outro", "b": "bridge", "x": "other"}


def _parse_phrases(path, n_measures: int) -> list[tuple[int, int, str]]:
    """Phrase spans as (start_measure, end_measure_exclusive, section_label).

    Accepts explicit rows ("start end label") or a compact letters+digits
    string such as "i4A8B8o4" (uppercase letters map to verse/chorus/bridge
    by order of first appearance).
    """
    try:
        text = Path(path).read_text("utf-8").strip()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not text:
        raise MalformedAnnotation(f"{path}: empty phrase file")

    first = text.splitlines()[0].split()
    if len(first) >= 3:
        spans = []
        for r in _read_rows(path, 3):
            label = r[2] if r[2] in SECTION_LABELS else "other"
            spans.append((int(r[0]), int(r[1]), label))
        return spans

    # compact form
    token = text.split()[0]
    spans = []
    upper_map: dict[str, str] = {}
    upper_cycle = ["verse", "chorus", "bridge", "other"]
    pos = 0
    i = 0
    while i < len(token):
        ch = token[i]
        i += 1
        digits = ""
        while i < len(token) and token[i].isdigit():
            digits += token[i]
            i += 1
        if not digits:
            raise MalformedAnnotation(f"{path}: phrase letter {ch!r} without a length")
        length = int(digits)
        if ch.isupper():
            if ch not in upper_map:
                upper_map[ch] = upper_cycle[min(len(upper_map), len(upper_cycle) - 1)]
            label = upper_map[ch]
        else:
            label = _PHRASE_LETTER_SECTIONS.get(ch, "other")
        spans.append((pos, pos + length, label))
        pos += length
    if pos < n_measures:
        spans.append((pos, n_measures, "other"))
    return spans


def _parse_key_label(label: str) -> tuple[int, str]:
    label = label.replace("major", "maj").replace("minor", "min")
    if ":" in label:
        tonic, mode = label.split(":", 1)
    elif label and label[-1] == "m":
        tonic, mode = label[:-1], "min"
    else:
        tonic, mode = label, "maj"
    pc = harmony.parse_pitch_name(tonic)
    return pc, ("minor" if mode.strip().startswith("min") else "major")


# ---------------------------------------------------------------------------
# Main ingestion


def _accompaniment_track(data: smf.MidiData):
    named = {t.name.strip().upper(): t for t in data.tracks if t.name}
    melody = named.get("MELODY")
    piano = next((t for name, t in named.items() if "PIANO" in name), None)
    if piano is not None:
        return piano, melody
    candidates = [t for t in data.tracks if t.notes and t is not melody]
    if not candidates:
        raise TrackAmbiguity("no candidate accompaniment track")
    candidates.sort(key=lambda t: len(t.notes), reverse=True)
    if len(candidates) > 1 and len(candidates[1].notes) > 0.9 * len(candidates[0].notes):
        raise TrackAmbiguity(
            f"cannot identify accompaniment: tracks {candidates[0].name!r} and "
            f"{candidates[1].name!r} have similar note counts"
        )
    return candidates[0], melody


def _seconds_to_beat(t: float, beat_times: list[float]) -> float:
    """Piecewise-linear time-to-beat map with edge extrapolation."""
    n = len(beat_times)
    if n == 1:
        return 0.0
    if t <= beat_times[0]:
        step = beat_times[1] - beat_times[0]
        return (t - beat_times[0]) / step
    if t >= beat_times[-1]:
        step = beat_times[-1] - beat_times[-2]
        return (n - 1) + (t - beat_times[-1]) / step
    lo, hi = 0, n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if beat_times[mid] <= t:
            lo = mid
        else:
            hi = mid
    frac = (t - beat_times[lo]) / (beat_times[hi] - beat_times[lo])
    return lo + frac


@dataclass
class IngestReport:
    songs: int = 0
    skipped: int = 0
    unrecognized_chords: int = 0
    dropped_pickup_notes: int = 0

    def to_dict(self) -> dict:
        return {
            "songs": self.songs,
            "skipped": self.skipped,
            "unrecognized_chords": self.unrecognized_chords,
            "dropped_pickup_notes": self.dropped_pickup_notes,
        }


def ingest_dataset_song(src: SourceDirectory, song_id: Optional[str] = None,
                        report: Optional[IngestReport] = None) -> Song:
    """Parse one source directory into a beat-snapped Song."""
    report = report if report is not None else IngestReport()
    data = smf.parse_midi_file(src.midi_path)
    beat_times, downbeats = _parse_beats(src.beat_annotation_path)
    chord_spans = _parse_spans(src.chord_annotation_path, "chord")
    key_spans_sec = _parse_spans(src.key_annotation_path, "key")

    # measure grouping from downbeats
    bounds = downbeats + [len(beat_times)]
    groups = [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]
    if downbeats and downbeats[0] > 0:
        groups.insert(0, (0, downbeats[0]))
    merged: list[tuple[int, int]] = []
    for start, end in groups:
        if end - start < 2 and merged and (end - merged[-1][0]) <= 6:
            merged[-1] = (merged[-1][0], end)
        elif end - start < 2 and not merged:
            continue  # unusable leading fragment
        else:
            merged.append((start, end))
    groups = [(s, e) for s, e in merged if 2 <= e - s <= 6]
    if not groups:
        raise MalformedAnnotation(f"{src.beat_annotation_path}: no usable measures")

    intervals = [b - a for a, b in zip(beat_times, beat_times[1:])]
    tempo = round(60.0 / statistics.median(intervals), 1) if intervals else 120.0
    meter_num = statistics.mode([e - s for s, e in groups])
    n_measures = len(groups)

    phrase_spans = _parse_phrases(src.phrase_annotation_path, n_measures)

    def chord_at(t: float) -> str:
        for s, e, label in chord_spans:
            if s <= t < e:
                return label
        return "N"

    def key_at(t: float) -> tuple[int, str]:
        for s, e, label in key_spans_sec:
            if s <= t < e:
                return _parse_key_label(label)
        if key_spans_sec:
            return _parse_key_label(key_spans_sec[0][2] if t < key_spans_sec[0][0] else key_spans_sec[-1][2])
        return 0, "major"

    def section_of(measure_idx: int) -> tuple[str, str]:
        for s, e, label in phrase_spans:
            if s <= measure_idx < e:
                length = e - s
                if length == 1:
                    role = "single"
                elif measure_idx == s:
                    role = "begin"
                elif measure_idx == e - 1:
                    role = "end"
                else:
                    role = "mid"
                return label, role
        return "other", "mid"

    acc_track, melody_track = _accompaniment_track(data)

    def notes_to_beats(track) -> list[tuple[Fraction, Fraction, int, int]]:
        out = []
        if track is None:
            return out
        for n in track.notes:
            onset_b = _seconds_to_beat(data.tick_to_seconds(n.start_tick), beat_times)
            end_b = _seconds_to_beat(data.tick_to_seconds(n.start_tick + n.duration_tick), beat_times)
            onset = snap_to_grid(Fraction(onset_b).limit_denominator(4096))
            end = snap_to_grid(Fraction(end_b).limit_denominator(4096))
            dur = max(end - onset, Fraction(1, GRID_TICKS_PER_BEAT))
            out.append((onset, dur, n.pitch, max(1, min(127, n.velocity))))
        return out

    acc_notes = notes_to_beats(acc_track)
    mel_notes = notes_to_beats(melody_track)

    measures: list[Measure] = []
    key_list: list[tuple[int, str]] = []
    group_start_beats = []
    acc_beat0 = groups[0][0]
    for idx, (s, e) in enumerate(groups):
        group_start_beats.append(s)
        length = e - s
        section, role = section_of(idx)
        beat_positions = [Fraction(b - acc_beat0) for b in range(s, e)]
        chords = []
        for b in range(s, e):
            label = chord_at(beat_times[b])
            chord, recognized = harmony.parse_chord_lenient(label)
            if not recognized:
                report.unrecognized_chords += 1
            chords.append(chord)
        key_list.append(key_at(beat_times[s]))
        if length < meter_num and idx == 0:
            role = "begin"  # pickup
        measures.append(
            Measure(
                index=idx,
                length_beats=length,
                beat_positions=beat_positions,
                melody=[],
                accompaniment=[],
                chords=chords,
                section_label=section,
                phrase_role=role,
                dynamics_trend="none",
            )
        )

    def assign(notes, attr):
        for onset, dur, pitch, vel in notes:
            beat_global = onset + acc_beat0
            idx = None
            for i, (s, e) in enumerate(groups):
                if s <= beat_global < e:
                    idx = i
                    break
            if idx is None:
                if beat_global >= groups[-1][1]:
                    idx = len(groups) - 1
                else:
                    report.dropped_pickup_notes += 1
                    continue
            rel = onset + acc_beat0 - groups[idx][0]
            getattr(measures[idx], attr).append(
                NoteEvent(onset=Fraction(rel), duration=dur, pitch=pitch, velocity=vel)
            )

    assign(acc_notes, "accompaniment")
    assign(mel_notes, "melody")
    for m in measures:
        m.accompaniment.sort(key=lambda n: (n.onset, n.pitch))
        m.melody.sort(key=lambda n: (n.onset, n.pitch))
        m.dynamics_trend = _dynamics_trend(m.accompaniment)

    spans = []
    for idx, key in enumerate(key_list):
        if spans and spans[-1][2] == key:
            spans[-1] = (spans[-1][0], idx + 1, key)
        else:
            spans.append((idx, idx + 1, key))
    key_contexts = [
        harmony.KeyContext(tonic_pc=k[0], mode=k[1], start=s, end=e) for s, e, k in spans
    ]

    sid = song_id or Path(src.midi_path).stem
    report.songs += 1
    return Song(
        id=sid,
        key_spans=key_contexts,
        meter=(meter_num, 4),
        tempo_bpm=tempo,
        measures=measures,
    )


def _dynamics_trend(notes: Sequence[NoteEvent]) -> str:
    if len(notes) < 4:
        return "none"
    mid = statistics.median(n.onset for n in notes)
    first = [n.velocity for n in notes if n.onset <= mid]
    second = [n.velocity for n in notes if n.onset > mid]
    if not first or not second:
        return "none"
    delta = statistics.median(second) - statistics.median(first)
    if delta > 8:
        return "crescendo"
    if delta < -8:
        return "decrescendo"
    return "none"
