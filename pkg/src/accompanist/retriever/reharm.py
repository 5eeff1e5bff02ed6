"""Reharmonization: constrained nearest-pitch mapping of retrieved patterns.

Only pitches move; onsets, durations, and velocities are untouched, so the
rhythmic motor and voicing topology of the source performance survive.  Each
beat carries a policy deciding the allowed pitch-class set, and candidates
whose mapping would distort too much are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .. import harmony
from ..songmodel import NoteEvent
from .config import RetrieverConfig

POLICY_KINDS = ("strict", "colored", "gesture")


class RejectCandidate(Exception):
    """Candidate unusable; `reason` is a stable machine-readable string."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}{': ' + detail if detail else ''}")


@dataclass(frozen=True)
class BeatPolicy:
    kind: str  # strict | colored | gesture
    color_pcs: frozenset[int] = frozenset()
    source_mask: Optional[frozenset[int]] = None  # source chord tones, for gesture

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown beat policy {self.kind!r}")


@dataclass
class ReharmonizedMeasure:
    notes: list[NoteEvent]
    mean_abs_shift: float
    register_drift: float
    chord_tone_ratio: float
    policies: tuple[str, ...]  # per-beat provenance


def nearest_allowed_pitch(pitch: int, allowed_pcs: frozenset[int]) -> int:
    """Closest pitch whose class is allowed; equidistant ties resolve downward."""
    if not allowed_pcs:
        return pitch
    for d in range(12):
        down = pitch - d
        if down >= 0 and down % 12 in allowed_pcs:
            return down
        up = pitch + d
        if d and up <= 127 and up % 12 in allowed_pcs:
            return up
    return pitch


def _beat_of(note: NoteEvent, length_beats: int) -> int:
    return min(int(note.onset), length_beats - 1)


def reharmonize(pattern: Sequence[NoteEvent], target_chords: Sequence[harmony.ChordSymbol],
                key: harmony.KeyContext, beat_policies: Sequence[BeatPolicy],
                cfg: RetrieverConfig, limit_scale: float = 1.0) -> ReharmonizedMeasure:
    """Map every onset to the nearest allowed pitch for its beat.

    Raises RejectCandidate(excessive_shift | register_drift |
    low_chord_tone_ratio) when the configured limits (scaled by
    `limit_scale`; use inf to force acceptance) are crossed.
    """
    if not pattern:
        raise RejectCandidate("empty_pattern")
    if len(target_chords) != len(beat_policies):
        raise ValueError("one policy per beat required")
    length_beats = len(target_chords)
    chord_masks = [harmony.chord_tone_mask(c) for c in target_chords]
    scale_pcs = harmony.diatonic_mask(key)

    mapped: list[NoteEvent] = []
    shifts: list[int] = []
    chord_tone_hits = 0
    for note in pattern:
        b = _beat_of(note, length_beats)
        policy = beat_policies[b]
        if policy.kind == "strict":
            allowed = chord_masks[b]
        elif policy.kind == "colored":
            allowed = chord_masks[b] | policy.color_pcs
        else:  # gesture
            source_mask = policy.source_mask if policy.source_mask is not None else frozenset()
            if note.pitch % 12 in source_mask:
                allowed = chord_masks[b]
            else:
                allowed = scale_pcs
        new_pitch = nearest_allowed_pitch(note.pitch, allowed)
        shifts.append(abs(new_pitch - note.pitch))
        if new_pitch % 12 in chord_masks[b]:
            chord_tone_hits += 1
        mapped.append(replace(note, pitch=new_pitch))

    mean_shift = sum(shifts) / len(shifts)
    old_mean = sum(n.pitch for n in pattern) / len(pattern)
    new_mean = sum(n.pitch for n in mapped) / len(mapped)
    drift = abs(new_mean - old_mean)
    ratio = chord_tone_hits / len(mapped)

    if mean_shift > cfg.max_mean_shift * limit_scale:
        raise RejectCandidate("excessive_shift", f"mean |shift| {mean_shift:.2f}")
    if drift > cfg.max_register_drift * limit_scale:
        raise RejectCandidate("register_drift", f"drift {drift:.2f}")
    if ratio < cfg.min_chord_tone_ratio / limit_scale:  # inf scale disables the floor
        raise RejectCandidate("low_chord_tone_ratio", f"ratio {ratio:.2f}")
    return ReharmonizedMeasure(
        notes=mapped,
        mean_abs_shift=mean_shift,
        register_drift=drift,
        chord_tone_ratio=ratio,
        policies=tuple(p.kind for p in beat_policies),
    )
