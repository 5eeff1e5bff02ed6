"""Feature-based style labeling of performed accompaniment measures.

Continuous features (velocity, articulation, onset activity, syncopation,
register) are reduced to the six discrete style slots via corpus-relative
quantile thresholds, and the same quantile machinery supplies the target
bands used for drift control during generation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .songmodel import GRID_TICKS_PER_BEAT, NoteEvent, StyleVector

STACCATO_MAX_BEATS = Fraction(1, 4)

# Metrical weights on the 24-tick beat grid.  Positions at or above the beat
# level (weight >= 0.8) count as strong; onsets elsewhere carry the
# syncopation mass.
METRICAL_WEIGHTS = {"downbeat": 1.0, "beat": 0.8, "eighth": 0.3, "sixteenth": 0.1, "other": 0.1}
STRONG_WEIGHT = 0.8

TEXTURE_FAMILIES = ("block", "arp", "alberti", "stride", "ostinato", "mixed")

LOW_BAND_TOP = 48  # C3
HIGH_BAND_BOTTOM = 72  # C5


class CorpusTooSmall(ValueError):
    pass


class EmptyMeasure(ValueError):
    pass


@dataclass
class ContinuousStyleFeatures:
    velocity_median: float
    staccato_ratio: float
    onset_rate: float
    syncopation_score: float
    register_mean: Optional[float]
    register_span: Optional[float]
    texture_scores: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "velocity_median": self.velocity_median,
            "staccato_ratio": self.staccato_ratio,
            "onset_rate": self.onset_rate,
            "syncopation_score": self.syncopation_score,
            "register_mean": self.register_mean,
            "register_span": self.register_span,
            "texture_scores": dict(self.texture_scores),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ContinuousStyleFeatures":
        return cls(
            velocity_median=obj["velocity_median"],
            staccato_ratio=obj["staccato_ratio"],
            onset_rate=obj["onset_rate"],
            syncopation_score=obj["syncopation_score"],
            register_mean=obj.get("register_mean"),
            register_span=obj.get("register_span"),
            texture_scores=dict(obj.get("texture_scores", {})),
        )


@dataclass
class QuantileTable:
    """Corpus quantile breakpoints per feature axis plus per-label drift bands.

    Quartile axes carry (q25, q50, q75); third axes carry (q33, q66).  Bands
    map each label to an inclusive (lo, hi) target range; None means open.
    """

    breakpoints: dict[str, tuple[float, ...]]
    bands: dict[str, dict[str, tuple[Optional[float], Optional[float]]]]
    degenerate_axes: set[str] = field(default_factory=set)

    def to_dict(self) -> dict:
        return {
            "breakpoints": {k: list(v) for k, v in self.breakpoints.items()},
            "bands": {
                axis: {label: list(band) for label, band in labels.items()}
                for axis, labels in self.bands.items()
            },
            "degenerate_axes": sorted(self.degenerate_axes),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "QuantileTable":
        return cls(
            breakpoints={k: tuple(v) for k, v in obj["breakpoints"].items()},
            bands={
                axis: {label: (band[0], band[1]) for label, band in labels.items()}
                for axis, labels in obj["bands"].items()
            },
            degenerate_axes=set(obj.get("degenerate_axes", [])),
        )


def _onset_ticks(note: NoteEvent) -> int:
    return round(note.onset * GRID_TICKS_PER_BEAT)


def metrical_weight(onset_ticks: int) -> float:
    tick_in_beat = onset_ticks % GRID_TICKS_PER_BEAT
    if tick_in_beat == 0:
        return METRICAL_WEIGHTS["downbeat"] if onset_ticks == 0 else METRICAL_WEIGHTS["beat"]
    if tick_in_beat == GRID_TICKS_PER_BEAT // 2:
        return METRICAL_WEIGHTS["eighth"]
    if tick_in_beat % (GRID_TICKS_PER_BEAT // 4) == 0:
        return METRICAL_WEIGHTS["sixteenth"]
    return METRICAL_WEIGHTS["other"]


def syncopation_score(onsets: Sequence[Fraction], meter: tuple[int, int]) -> float:
    """Fraction of onset mass at metrically weak (sub-beat) positions.

    Positions at or above the beat level carry no syncopation mass, so a
    measure of pure on-beat onsets scores 0 and pure offbeats score 1.
    """
    if not onsets:
        return 0.0
    weak = sum(1 for o in onsets if metrical_weight(round(o * GRID_TICKS_PER_BEAT)) < STRONG_WEIGHT)
    return weak / len(onsets)


def _onset_groups(notes: Sequence[NoteEvent]) -> list[tuple[int, list[NoteEvent]]]:
    groups: dict[int, list[NoteEvent]] = {}
    for n in notes:
        groups.setdefault(_onset_ticks(n), []).append(n)
    return sorted(groups.items())


def _block_score(groups) -> float:
    return sum(1 for _, g in groups if len(g) >= 2) / len(groups)


def _arp_score(groups) -> float:
    if any(len(g) > 1 for _, g in groups) or len(groups) < 3:
        return 0.0
    pitches = [g[0].pitch for _, g in groups]
    steps = [b - a for a, b in zip(pitches, pitches[1:])]
    directional = sum(1 for s in steps if s != 0 and abs(s) <= 9)
    consistent = 0
    for a, b in zip(steps, steps[1:]):
        if a * b > 0:
            consistent += 1
    return 0.0 if not steps else (directional / len(steps)) * (0.5 + 0.5 * (consistent / max(len(steps) - 1, 1)))


def _alberti_score(groups) -> float:
    if any(len(g) > 1 for _, g in groups) or len(groups) < 4:
        return 0.0
    pitches = [g[0].pitch for _, g in groups]
    cells = [pitches[i:i + 4] for i in range(0, len(pitches) - 3, 4)]
    if not cells:
        return 0.0
    hits = 0
    for p in cells:
        low, high, mid, again = p
        if low < mid < high and again == high:
            hits += 1
    return hits / len(cells)


def _stride_score(groups, length_beats: int) -> float:
    """Bass-register single onsets on odd beats alternating with mid clusters."""
    per_beat: dict[int, list[list[NoteEvent]]] = {}
    for ticks, g in groups:
        if ticks % GRID_TICKS_PER_BEAT:
            return 0.0
        per_beat.setdefault(ticks // GRID_TICKS_PER_BEAT, []).append(g)
    hits = 0
    for beat in range(length_beats):
        events = per_beat.get(beat, [])
        if len(events) != 1:
            continue
        g = events[0]
        if beat % 2 == 0:
            if len(g) == 1 and g[0].pitch < LOW_BAND_TOP + 5:
                hits += 1
        else:
            if len(g) >= 2 and min(n.pitch for n in g) >= LOW_BAND_TOP:
                hits += 1
    return hits / length_beats


def _ostinato_score(notes, length_beats: int) -> float:
    """Best coverage by a repeating figuration cell of at most one beat.

    Cells with simultaneous onsets do not count (repeated chords are block,
    not ostinato).
    """
    total = length_beats * GRID_TICKS_PER_BEAT
    events = sorted((_onset_ticks(n), n.pitch) for n in notes)
    best = 0.0
    for cell_ticks in (6, 8, 12, 24):
        bucket: dict[int, list] = {}
        for t, p in events:
            bucket.setdefault(t // cell_ticks, []).append((t % cell_ticks, p))
        n_cells = total // cell_ticks
        if n_cells < 3 or len(bucket) < 3:
            continue
        shapes = [tuple(sorted(bucket.get(i, []))) for i in range(n_cells)]
        base = shapes[0]
        if not base:
            continue
        offsets = [o for o, _ in base]
        if len(offsets) != len(set(offsets)):
            continue
        repeats = sum(1 for s in shapes if s == base)
        if repeats >= 3:
            best = max(best, repeats / n_cells)
    return best


def _texture_from_scores(scores: dict[str, float]) -> str:
    if not scores:
        return "mixed"
    best = max(scores.values())
    if best < 0.5:
        return "mixed"
    winners = [t for t in TEXTURE_FAMILIES if scores.get(t, 0.0) == best]
    if len(winners) > 1:
        # alberti/stride patterns also repeat; prefer the more specific family
        if "alberti" in winners:
            return "alberti"
        if "stride" in winners:
            return "stride"
        return "mixed"
    return winners[0]


def classify_texture(notes: Sequence[NoteEvent], length_beats: int) -> tuple[str, dict[str, float]]:
    """Rule-scored texture family; ties (including all-zero) resolve to mixed."""
    if not notes:
        raise EmptyMeasure("cannot classify texture of an empty measure")
    groups = _onset_groups(notes)
    scores = {
        "block": _block_score(groups),
        "arp": _arp_score(groups),
        "alberti": _alberti_score(groups),
        "stride": _stride_score(groups, length_beats),
        "ostinato": _ostinato_score(notes, length_beats),
        "mixed": 0.0,
    }
    return _texture_from_scores(scores), scores


def extract_features(notes: Sequence[NoteEvent], length_beats: int) -> ContinuousStyleFeatures:
    if not notes:
        return ContinuousStyleFeatures(
            velocity_median=0.0,
            staccato_ratio=0.0,
            onset_rate=0.0,
            syncopation_score=0.0,
            register_mean=None,
            register_span=None,
            texture_scores={},
        )
    pitches = np.array([n.pitch for n in notes], dtype=float)
    texture, scores = classify_texture(notes, length_beats)
    return ContinuousStyleFeatures(
        velocity_median=float(np.median([n.velocity for n in notes])),
        staccato_ratio=sum(1 for n in notes if n.duration <= STACCATO_MAX_BEATS) / len(notes),
        onset_rate=len(notes) / length_beats,
        syncopation_score=syncopation_score([n.onset for n in notes], (length_beats, 4)),
        register_mean=float(pitches.mean()),
        register_span=float(np.percentile(pitches, 95) - np.percentile(pitches, 5)),
        texture_scores=scores,
    )


QUARTILE_AXES = ("velocity_median", "onset_rate")
THIRD_AXES = ("staccato_ratio", "syncopation_score", "register_mean")
DRIFT_AXES = ("velocity_median", "staccato_ratio", "onset_rate")

_AXIS_LABELS = {
    "velocity_median": ("quiet", "soft", "medium", "loud"),
    "onset_rate": ("slow", "medium", "fast", "dense"),
    "staccato_ratio": ("gentle", "normal", "staccato"),
    "syncopation_score": ("steady", "light_sync", "syncopated"),
    "register_mean": ("warm", "mid", "bright"),
}


def build_quantile_table(corpus_features: Sequence[ContinuousStyleFeatures]) -> QuantileTable:
    """Quantile breakpoints + per-label bands from every non-empty corpus measure."""
    if len(corpus_features) < 4:
        raise CorpusTooSmall(f"need at least 4 measures, got {len(corpus_features)}")
    breakpoints: dict[str, tuple[float, ...]] = {}
    bands: dict[str, dict[str, tuple[Optional[float], Optional[float]]]] = {}
    degenerate: set[str] = set()

    def values(axis):
        if axis == "register_mean":
            vals = [f.register_mean for f in corpus_features if f.register_mean is not None]
            return vals or [60.0]
        return [getattr(f, axis) for f in corpus_features]

    for axis in QUARTILE_AXES + THIRD_AXES:
        vals = np.asarray(values(axis), dtype=float)
        qs = (25, 50, 75) if axis in QUARTILE_AXES else (100 / 3, 200 / 3)
        bps = tuple(float(np.percentile(vals, q)) for q in qs)
        breakpoints[axis] = bps
        if len(set(bps)) < len(bps):
            degenerate.add(axis)
        labels = _AXIS_LABELS[axis]
        edges: list[Optional[float]] = [None, *bps, None]
        bands[axis] = {label: (edges[i], edges[i + 1]) for i, label in enumerate(labels)}
    return QuantileTable(breakpoints=breakpoints, bands=bands, degenerate_axes=degenerate)


def _quartile_label(value: float, bps: tuple[float, ...], labels: tuple[str, ...]) -> str:
    q25, q50, q75 = bps
    if value < q25:
        return labels[0]
    if value < q50:
        return labels[1]
    if value < q75:
        return labels[2]
    return labels[3]


def _third_label(value: float, bps: tuple[float, ...], labels: tuple[str, ...]) -> str:
    lo, hi = bps
    if value < lo:
        return labels[0]
    if value > hi:
        return labels[2]
    return labels[1]


EMPTY_MEASURE_STYLE = StyleVector("quiet", "gentle", "slow", "steady", "mixed", "mid")


def label_measure(features: ContinuousStyleFeatures, table: QuantileTable,
                  texture: Optional[str] = None) -> StyleVector:
    """Discretize one measure's features against the corpus quantile table."""
    if features.onset_rate == 0.0:
        return EMPTY_MEASURE_STYLE
    if texture is None:
        texture = _texture_from_scores(features.texture_scores)
    return StyleVector(
        dyn=_quartile_label(features.velocity_median, table.breakpoints["velocity_median"],
                            _AXIS_LABELS["velocity_median"]),
        art=_third_label(features.staccato_ratio, table.breakpoints["staccato_ratio"],
                         _AXIS_LABELS["staccato_ratio"]),
        rhythm=_quartile_label(features.onset_rate, table.breakpoints["onset_rate"],
                               _AXIS_LABELS["onset_rate"]),
        tension=_third_label(features.syncopation_score, table.breakpoints["syncopation_score"],
                             _AXIS_LABELS["syncopation_score"]),
        texture=texture,
        register=_third_label(features.register_mean if features.register_mean is not None else 60.0,
                              table.breakpoints["register_mean"], _AXIS_LABELS["register_mean"]),
    )


def label_song_measures(measures: Iterable, table: QuantileTable) -> list[StyleVector]:
    out = []
    for m in measures:
        feats = extract_features(m.accompaniment, m.length_beats)
        if m.accompaniment:
            texture, _ = classify_texture(m.accompaniment, m.length_beats)
        else:
            texture = None
        out.append(label_measure(feats, table, texture=texture))
    return out
