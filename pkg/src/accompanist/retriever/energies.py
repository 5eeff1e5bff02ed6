"""Per-candidate energy terms: quality, voice leading, style, drift, diversity.

Every term is additive and itemized into an EnergyBreakdown so selection can
be audited measure by measure.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ..harmony import BeatQuality, MatchKind, RelaxStage, quality_match
from ..labeling import ContinuousStyleFeatures, QuantileTable
from ..songmodel import STYLE_AXES, StyleVector, weighted_hamming
from .config import RetrieverConfig
from .reharm import RejectCandidate

DRIFT_FLOORS = {"velocity_median": 8.0, "staccato_ratio": 0.1, "onset_rate": 0.5}
STYLE_TO_DRIFT_AXIS = {"dyn": "velocity_median", "art": "staccato_ratio", "rhythm": "onset_rate"}


class LengthMismatch(ValueError):
    pass


@dataclass
class MatchCounts:
    n_wild: int = 0
    n_miss: int = 0
    n_fam: int = 0
    n_sus: int = 0
    n_cross: int = 0
    n_mismatch: int = 0

    def to_dict(self) -> dict:
        return dict(
            n_wild=self.n_wild, n_miss=self.n_miss, n_fam=self.n_fam,
            n_sus=self.n_sus, n_cross=self.n_cross, n_mismatch=self.n_mismatch,
        )


@dataclass
class EnergyBreakdown:
    e_qual: float = 0.0
    e_vl: float = 0.0
    e_style: float = 0.0
    e_drift: float = 0.0
    e_diversity: float = 0.0
    e_role: float = 0.0
    e_reuse: float = 0.0
    stage: int = 0
    counts: MatchCounts = field(default_factory=MatchCounts)

    @property
    def total(self) -> float:
        return (self.e_qual + self.e_vl + self.e_style + self.e_drift
                + self.e_diversity + self.e_role + self.e_reuse)

    def to_dict(self) -> dict:
        return {
            "e_qual": self.e_qual,
            "e_vl": self.e_vl,
            "e_style": self.e_style,
            "e_drift": self.e_drift,
            "e_diversity": self.e_diversity,
            "e_role": self.e_role,
            "e_reuse": self.e_reuse,
            "total": self.total,
            "stage": self.stage,
            "counts": self.counts.to_dict(),
        }


def weak_beats(length_beats: int) -> frozenset[int]:
    """Beats eligible for wildcards: everything but beat 1 and the midpoint."""
    strong = {0}
    if length_beats % 2 == 0:
        strong.add(length_beats // 2)
    return frozenset(b for b in range(length_beats) if b not in strong)


def classify_beats(target: Sequence[Optional[BeatQuality]], cand: Sequence[Optional[BeatQuality]],
                   stage: RelaxStage, wildcard_ok: bool = True) -> list[MatchKind]:
    """Beatwise match kinds at a stage; unresolvable weak beats become wildcards."""
    if len(target) != len(cand):
        raise LengthMismatch(f"{len(target)} target beats vs {len(cand)} candidate beats")
    harmony_stage = min(stage, RelaxStage.CROSS_FAMILY)
    weak = weak_beats(len(target)) if wildcard_ok else frozenset()
    kinds = []
    for b, (t, c) in enumerate(zip(target, cand)):
        kind = quality_match(t, c, harmony_stage)
        if kind == MatchKind.MISMATCH and stage >= RelaxStage.WILDCARD and b in weak:
            kind = quality_match(t, c, harmony_stage, wildcard_beat=True)
        kinds.append(kind)
    return kinds


def quality_energy(target: Sequence[Optional[BeatQuality]], cand: Sequence[Optional[BeatQuality]],
                   stage: RelaxStage, cfg: RetrieverConfig,
                   wildcard_ok: bool = True) -> tuple[float, MatchCounts]:
    """Weighted tally of the beatwise mismatch profile.

    Suspension matches against a dominant-function target beat land in the
    sus bucket (the heavier penalty); against maj they count as family.
    """
    kinds = classify_beats(target, cand, stage, wildcard_ok)
    counts = MatchCounts()
    for b, kind in enumerate(kinds):
        if kind == MatchKind.EXACT:
            continue
        if kind == MatchKind.WILDCARD:
            counts.n_wild += 1
        elif kind == MatchKind.MISSING:
            counts.n_miss += 1
        elif kind == MatchKind.FAMILY:
            counts.n_fam += 1
        elif kind == MatchKind.SUS_RELATED:
            if target[b] is not None and target[b][0] == "dom":
                counts.n_sus += 1
            else:
                counts.n_fam += 1
        elif kind == MatchKind.CROSS_FAMILY:
            counts.n_cross += 1
        else:
            counts.n_mismatch += 1
    energy = (
        cfg.wild_weight * counts.n_wild
        + cfg.miss_weight * counts.n_miss
        + cfg.family_weight * counts.n_fam
        + cfg.sus_weight * counts.n_sus
        + cfg.cross_weight * counts.n_cross
        + cfg.mismatch_weight * counts.n_mismatch
    )
    return energy, counts


def voice_leading_energy(prev_pitches: Optional[Sequence[int]], cand_pitches: Sequence[int],
                         sustained_in: Sequence[int], beat1_onsets: Sequence[int],
                         cfg: RetrieverConfig, final_measure: bool = False,
                         tonic_pc: Optional[int] = None) -> float:
    """Pianistic continuity cost between consecutive selections.

    Voices pair positionally (callers supply pitch vectors sorted low to
    high, so rank k pairs with rank k); unpaired voices cost the rest
    penalty.  With no previous measure only the anticipation term applies.
    """
    e = 0.0
    if prev_pitches:
        paired = min(len(prev_pitches), len(cand_pitches))
        deltas = [cand_pitches[i] - prev_pitches[i] for i in range(paired)]
        e += sum(abs(d) for d in deltas)
        e += cfg.leap_weight * sum(1 for d in deltas if abs(d) > cfg.leap_threshold)
        e += cfg.rest_weight * abs(len(prev_pitches) - len(cand_pitches))
        crossings = 0
        parallels = 0
        for i in range(paired):
            for j in range(i + 1, paired):
                before = prev_pitches[i] - prev_pitches[j]
                after = cand_pitches[i] - cand_pitches[j]
                if before * after < 0:
                    crossings += 1
                di, dj = deltas[i], deltas[j]
                if di != 0 and dj != 0 and (di > 0) == (dj > 0):
                    iv_before = abs(before) % 12
                    iv_after = abs(after) % 12
                    if iv_before == iv_after and iv_after in (0, 7):
                        parallels += 1
        e += cfg.crossing_weight * crossings
        e += cfg.parallel_weight * parallels

    collisions = 0
    sustained = list(sustained_in)
    for onset in beat1_onsets:
        if any(onset % 12 == s % 12 or abs(onset - s) <= 2 for s in sustained):
            collisions += 1
    e += cfg.anticipation_weight * collisions

    if final_measure and tonic_pc is not None and cand_pitches:
        if min(cand_pitches) % 12 == tonic_pc:
            e -= cfg.tonic_bonus
    return e


def role_energy(target_role, cand_role, cfg: RetrieverConfig) -> float:
    """Soft penalty for structural-role mismatches (cadential source mid-phrase etc.)."""
    mismatches = 0
    for flag in ("cadential", "song_start", "song_end", "pickup"):
        if getattr(target_role, flag) != getattr(cand_role, flag):
            mismatches += 1
    return cfg.role_penalty * mismatches


StyleTarget = object  # StyleVector | Sequence[(StyleVector, float)]


def style_distance(planned, cand_style: StyleVector, cfg: RetrieverConfig) -> float:
    """Capped weighted Hamming distance; accepts a distribution over targets."""
    if isinstance(planned, StyleVector):
        return min(weighted_hamming(planned, cand_style, cfg.style_axis_weights), cfg.style_cap)
    total = 0.0
    mass = 0.0
    for vec, prob in planned:
        total += prob * min(weighted_hamming(vec, cand_style, cfg.style_axis_weights), cfg.style_cap)
        mass += prob
    return total / mass if mass else 0.0


def _planned_mode(planned) -> StyleVector:
    if isinstance(planned, StyleVector):
        return planned
    return max(planned, key=lambda vp: vp[1])[0]


def style_energy(planned, cand_style: StyleVector, cand_features: ContinuousStyleFeatures,
                 cfg: RetrieverConfig, quantiles: Optional[QuantileTable],
                 at_transition: bool, at_song_boundary: bool,
                 phrase_budget_left: int, song_budget_left: int) -> tuple[float, bool]:
    """Capped style distance plus deviation gating.

    Returns (energy, deviates).  Deviating candidates are rejected outside
    annotated harmonic transitions, at song boundaries, or once the slack
    budget is spent; quiet+gentle plans reject busier-than-median candidates.
    """
    mode_vec = _planned_mode(planned)
    if (mode_vec.dyn == "quiet" and mode_vec.art == "gentle" and quantiles is not None):
        median_rate = quantiles.breakpoints["onset_rate"][1]
        if cand_features.onset_rate > median_rate:
            raise RejectCandidate("quiet_guard",
                                  f"onset rate {cand_features.onset_rate:.2f} > median {median_rate:.2f}")

    if isinstance(planned, StyleVector):
        deviates = cand_style != planned
    else:
        deviates = all(cand_style != vec for vec, _ in planned)
    if deviates:
        if at_song_boundary or not at_transition:
            raise RejectCandidate("slack_exhausted", "deviation not permitted here")
        if phrase_budget_left <= 0 or song_budget_left <= 0:
            raise RejectCandidate("slack_exhausted", "deviation budget spent")
    return style_distance(planned, cand_style, cfg), deviates


def drift_penalty(selected_features: Sequence[ContinuousStyleFeatures],
                  cand_features: ContinuousStyleFeatures, planned: StyleVector,
                  quantiles: QuantileTable, cfg: RetrieverConfig) -> float:
    """Thermostat: penalize running medians escaping the planned labels' bands."""
    if cfg.drift_weight == 0.0:
        return 0.0
    total = 0.0
    for style_axis, feat_axis in STYLE_TO_DRIFT_AXIS.items():
        label = getattr(planned, style_axis)
        lo, hi = quantiles.bands[feat_axis][label]
        values = [getattr(f, feat_axis) for f in selected_features]
        values.append(getattr(cand_features, feat_axis))
        med = statistics.median(values)
        width = (hi - lo) if (lo is not None and hi is not None) else None
        tol = cfg.band_tolerance * width if width else 0.0
        overshoot = 0.0
        if lo is not None and med < lo - tol:
            overshoot = (lo - tol) - med
        elif hi is not None and med > hi + tol:
            overshoot = med - (hi + tol)
        if overshoot > 0.0:
            scale = max(width or 0.0, DRIFT_FLOORS[feat_axis])
            total += overshoot / scale
    return cfg.drift_weight * total
