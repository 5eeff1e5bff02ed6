"""Measure-level retrieval index: records, signatures, style inventories.

Each corpus measure becomes a MeasureRecord carrying its performance pattern,
style labels, per-beat quality sequence, structural role flags, continuous
features, and two pattern signatures (a pitch-free active grid and a stricter
pitch-aware variant).  The index answers (length, style, quality, role)
queries exactly; there is no approximate search.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence

from . import harmony
from .labeling import ContinuousStyleFeatures, QuantileTable, extract_features
from .songmodel import (
    GRID_TICKS_PER_BEAT,
    Measure,
    NoteEvent,
    Song,
    StyleVector,
    beat_str,
    parse_beat,
)

INDEX_MAGIC = b"ACIX"
INDEX_VERSION = 1

CELLS_PER_BEAT = 4
LOW_BAND_TOP = 48  # C3
HIGH_BAND_BOTTOM = 72  # C5
BANDS = 3


class EmptyCorpus(ValueError):
    pass


@dataclass(frozen=True)
class PatternSignature:
    """Canonical grid string plus a 64-bit hash used as the index key."""

    canonical: str
    digest: int

    @classmethod
    def from_canonical(cls, canonical: str) -> "PatternSignature":
        h = hashlib.blake2b(canonical.encode("utf-8"), digest_size=8).digest()
        return cls(canonical=canonical, digest=int.from_bytes(h, "little"))


def _band(pitch: int) -> int:
    if pitch < LOW_BAND_TOP:
        return 0
    if pitch > HIGH_BAND_BOTTOM:
        return 2
    return 1


def _grid_cells(pattern: Sequence[NoteEvent], length_beats: int):
    """Per (cell, band): onset count and sustain flag on the sixteenth grid."""
    n_cells = length_beats * CELLS_PER_BEAT
    ticks_per_cell = GRID_TICKS_PER_BEAT // CELLS_PER_BEAT
    onsets = [[0] * BANDS for _ in range(n_cells)]
    sustains = [[0] * BANDS for _ in range(n_cells)]
    pcs: list[set[int]] = [set() for _ in range(n_cells)]
    for note in pattern:
        start = round(note.onset * GRID_TICKS_PER_BEAT)
        end = round((note.onset + note.duration) * GRID_TICKS_PER_BEAT)
        band = _band(note.pitch)
        cell = start // ticks_per_cell
        if 0 <= cell < n_cells:
            onsets[cell][band] += 1
            pcs[cell].add(note.pitch % 12)
        first_sustained = cell + 1
        last = min((end - 1) // ticks_per_cell, n_cells - 1)
        for c in range(max(first_sustained, 0), last + 1):
            sustains[c][band] = 1
    return onsets, sustains, pcs


def active_signature(pattern: Sequence[NoteEvent], length_beats: int) -> PatternSignature:
    """Pitch-free rhythm/texture skeleton over cells x register bands."""
    onsets, sustains, _ = _grid_cells(pattern, length_beats)
    parts = [f"L{length_beats}"]
    for cell in range(len(onsets)):
        cell_txt = "".join(
            f"{min(onsets[cell][b], 2)}{sustains[cell][b]}" for b in range(BANDS)
        )
        parts.append(cell_txt)
    return PatternSignature.from_canonical(".".join(parts))


def pitch_signature(pattern: Sequence[NoteEvent], length_beats: int) -> PatternSignature:
    """Active signature extended with each cell's sorted onset pitch classes."""
    base = active_signature(pattern, length_beats)
    _, _, pcs = _grid_cells(pattern, length_beats)
    pc_txt = "|".join(",".join(str(p) for p in sorted(cell)) for cell in pcs)
    return PatternSignature.from_canonical(base.canonical + "#" + pc_txt)


@dataclass(frozen=True)
class RoleFlags:
    phrase_role: str
    song_start: bool = False
    song_end: bool = False
    pickup: bool = False
    cadential: bool = False

    def to_dict(self) -> dict:
        return {
            "phrase_role": self.phrase_role,
            "song_start": self.song_start,
            "song_end": self.song_end,
            "pickup": self.pickup,
            "cadential": self.cadential,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RoleFlags":
        return cls(**obj)


@dataclass
class MeasureRecord:
    id: str  # "<song_id>:<measure_index>"
    song_id: str
    measure_index: int
    length_beats: int
    style: StyleVector
    qual_seq: list[harmony.BeatQuality]
    chords: list[harmony.ChordSymbol]
    role: RoleFlags
    pattern: list[NoteEvent]
    first_onset_pitches: list[int]
    sustained_in: list[int]
    features: ContinuousStyleFeatures
    active_sig: PatternSignature
    pitch_sig: PatternSignature
    section_label: str = "other"


@dataclass
class StyleInventory:
    """Observed style vectors with empirical counts, keyed by measure length."""

    counts: dict[int, Counter] = field(default_factory=dict)

    def add(self, length_beats: int, style: StyleVector) -> None:
        self.counts.setdefault(length_beats, Counter())[style] += 1

    def vectors(self, length_beats: int) -> list[StyleVector]:
        return sorted(self.counts.get(length_beats, Counter()))

    def count(self, length_beats: int, style: StyleVector) -> int:
        return self.counts.get(length_beats, Counter()).get(style, 0)

    def total(self, length_beats: int) -> int:
        return sum(self.counts.get(length_beats, Counter()).values())

    def frequency(self, length_beats: int, style: StyleVector) -> float:
        total = self.total(length_beats)
        return self.count(length_beats, style) / total if total else 0.0

    def lengths(self) -> list[int]:
        return sorted(self.counts)


def first_onset_pitches(pattern: Sequence[NoteEvent]) -> list[int]:
    """Pitches sounding at the measure's earliest onset, low to high."""
    if not pattern:
        return []
    first = min(n.onset for n in pattern)
    return sorted(n.pitch for n in pattern if n.onset == first)


def sustained_pitches(pattern: Sequence[NoteEvent], length_beats: int) -> list[int]:
    """Pitches whose duration rings past the bar line (anticipations)."""
    return sorted(n.pitch for n in pattern if n.onset + n.duration > length_beats)


def make_record(song: Song, measure: Measure, style: StyleVector,
                features: Optional[ContinuousStyleFeatures] = None) -> MeasureRecord:
    if features is None:
        features = extract_features(measure.accompaniment, measure.length_beats)
    qual_seq = [(c.quality, frozenset(c.extensions)) for c in measure.chords]
    is_first = measure.index == 0
    is_last = measure.index == len(song.measures) - 1
    role = RoleFlags(
        phrase_role=measure.phrase_role,
        song_start=is_first,
        song_end=is_last,
        pickup=measure.length_beats < song.meter[0] and measure.phrase_role == "begin",
        cadential=measure.phrase_role == "end",
    )
    pattern = sorted(measure.accompaniment, key=lambda n: (n.onset, n.pitch))
    return MeasureRecord(
        id=f"{song.id}:{measure.index}",
        song_id=song.id,
        measure_index=measure.index,
        length_beats=measure.length_beats,
        style=style,
        qual_seq=qual_seq,
        chords=list(measure.chords),
        role=role,
        pattern=pattern,
        first_onset_pitches=first_onset_pitches(pattern),
        sustained_in=sustained_pitches(pattern, measure.length_beats),
        features=features,
        active_sig=active_signature(pattern, measure.length_beats),
        pitch_sig=pitch_signature(pattern, measure.length_beats),
        section_label=measure.section_label,
    )


@dataclass
class CorpusIndex:
    records: list[MeasureRecord]
    inventory: StyleInventory
    quantiles: Optional[QuantileTable] = None
    by_key: dict[tuple[int, tuple], list[int]] = field(default_factory=dict)
    by_length: dict[int, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.by_key:
            for i, rec in enumerate(self.records):
                self.by_key.setdefault((rec.length_beats, rec.style.key), []).append(i)
                self.by_length.setdefault(rec.length_beats, []).append(i)

    def lengths(self) -> list[int]:
        return sorted(self.by_length)


def build_index(songs: Sequence[Song], labels: dict[str, list[StyleVector]],
                features: Optional[dict[str, list[ContinuousStyleFeatures]]] = None,
                quantiles: Optional[QuantileTable] = None) -> CorpusIndex:
    """Index every measure of every song; labels must cover all measures."""
    records: list[MeasureRecord] = []
    inventory = StyleInventory()
    for song in songs:
        song_styles = labels[song.id]
        if len(song_styles) != len(song.measures):
            raise ValueError(f"labels for {song.id} cover {len(song_styles)} of {len(song.measures)} measures")
        song_feats = features.get(song.id) if features else None
        for m in song.measures:
            feat = song_feats[m.index] if song_feats else None
            rec = make_record(song, m, song_styles[m.index], features=feat)
            records.append(rec)
            inventory.add(rec.length_beats, rec.style)
    if not records:
        raise EmptyCorpus("no measures to index")
    records.sort(key=lambda r: r.id)
    return CorpusIndex(records=records, inventory=inventory, quantiles=quantiles)


StylePredicate = object  # StyleVector | set[StyleVector] | None


def query(index: CorpusIndex, style, qual_pred: Optional[Callable], role_pred: Optional[Callable],
          length_beats: int) -> list[MeasureRecord]:
    """All records of the given length satisfying every predicate, ordered by id.

    `style` may be a single StyleVector, a set of them, or None (no filter).
    """
    if isinstance(style, StyleVector):
        candidate_ids = index.by_key.get((length_beats, style.key), [])
    elif style is None:
        candidate_ids = index.by_length.get(length_beats, [])
    else:
        candidate_ids = []
        for s in sorted(style):
            candidate_ids.extend(index.by_key.get((length_beats, tuple(s)), []))
    out = []
    for i in candidate_ids:
        rec = index.records[i]
        if qual_pred is not None and not qual_pred(rec):
            continue
        if role_pred is not None and not role_pred(rec):
            continue
        out.append(rec)
    out.sort(key=lambda r: r.id)
    return out


# ---------------------------------------------------------------------------
# Serialization: versioned header + zlib-compressed JSON record table


def _note_to_list(n: NoteEvent) -> list:
    return [beat_str(n.onset), beat_str(n.duration), n.pitch, n.velocity, n.voice_hint]


def _note_from_list(row: list) -> NoteEvent:
    return NoteEvent(parse_beat(row[0]), parse_beat(row[1]), row[2], row[3], row[4])


def _record_to_dict(rec: MeasureRecord) -> dict:
    return {
        "id": rec.id,
        "song_id": rec.song_id,
        "measure_index": rec.measure_index,
        "length_beats": rec.length_beats,
        "style": list(rec.style),
        "qual_seq": [[q, sorted(ext)] for q, ext in rec.qual_seq],
        "chords": [harmony.format_chord(c) for c in rec.chords],
        "role": rec.role.to_dict(),
        "pattern": [_note_to_list(n) for n in rec.pattern],
        "first_onset_pitches": rec.first_onset_pitches,
        "sustained_in": rec.sustained_in,
        "features": rec.features.to_dict(),
        "active_sig": rec.active_sig.canonical,
        "pitch_sig": rec.pitch_sig.canonical,
        "section_label": rec.section_label,
    }


def _record_from_dict(obj: dict) -> MeasureRecord:
    return MeasureRecord(
        id=obj["id"],
        song_id=obj["song_id"],
        measure_index=obj["measure_index"],
        length_beats=obj["length_beats"],
        style=StyleVector(*obj["style"]),
        qual_seq=[(q, frozenset(ext)) for q, ext in obj["qual_seq"]],
        chords=[harmony.parse_chord(c) for c in obj["chords"]],
        role=RoleFlags.from_dict(obj["role"]),
        pattern=[_note_from_list(n) for n in obj["pattern"]],
        first_onset_pitches=obj["first_onset_pitches"],
        sustained_in=obj["sustained_in"],
        features=ContinuousStyleFeatures.from_dict(obj["features"]),
        active_sig=PatternSignature.from_canonical(obj["active_sig"]),
        pitch_sig=PatternSignature.from_canonical(obj["pitch_sig"]),
        section_label=obj.get("section_label", "other"),
    )


def save_index(index: CorpusIndex, path) -> None:
    payload = {
        "records": [_record_to_dict(r) for r in index.records],
        "quantiles": index.quantiles.to_dict() if index.quantiles else None,
    }
    blob = zlib.compress(json.dumps(payload).encode("utf-8"), level=6)
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(INDEX_VERSION.to_bytes(4, "little"))
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)


def load_index(path) -> CorpusIndex:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != INDEX_MAGIC:
            raise ValueError(f"not an index file (magic {magic!r})")
        version = int.from_bytes(fh.read(4), "little")
        if version != INDEX_VERSION:
            raise ValueError(f"unsupported index version {version}")
        size = int.from_bytes(fh.read(8), "little")
        payload = json.loads(zlib.decompress(fh.read(size)).decode("utf-8"))
    records = [_record_from_dict(r) for r in payload["records"]]
    inventory = StyleInventory()
    for rec in records:
        inventory.add(rec.length_beats, rec.style)
    quantiles = QuantileTable.from_dict(payload["quantiles"]) if payload["quantiles"] else None
    return CorpusIndex(records=records, inventory=inventory, quantiles=quantiles)


def corpus_signature_stats(index: CorpusIndex) -> dict:
    """Per-song signature diversity averaged over the corpus.

    unique = distinct signatures / measures; dominant = largest identical
    cluster share; repeat = consecutive-identical rate.
    """
    per_song: dict[str, list[str]] = {}
    for rec in index.records:
        per_song.setdefault(rec.song_id, []).append((rec.measure_index, rec.active_sig.canonical))
    uniques, dominants, repeats = [], [], []
    for sigs in per_song.values():
        ordered = [s for _, s in sorted(sigs)]
        n = len(ordered)
        if n < 2:
            continue
        counts = Counter(ordered)
        uniques.append(len(counts) / n)
        dominants.append(max(counts.values()) / n)
        repeats.append(sum(1 for a, b in zip(ordered, ordered[1:]) if a == b) / (n - 1))
    agg = lambda xs: sum(xs) / len(xs) if xs else 0.0
    return {
        "songs": len(per_song),
        "measures": len(index.records),
        "mean_unique_ratio": agg(uniques),
        "mean_dominant_cluster_ratio": agg(dominants),
        "mean_repeat_ratio": agg(repeats),
        "inventory_sizes": {l: len(index.inventory.counts[l]) for l in index.inventory.lengths()},
        "measures_per_length": {l: index.inventory.total(l) for l in index.inventory.lengths()},
    }
