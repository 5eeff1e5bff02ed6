"""Left-to-right realization of a style plan with stateful diversity control."""

from __future__ import annotations

import statistics
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .. import harmony
from ..indexing import (
    CorpusIndex,
    MeasureRecord,
    RoleFlags,
    active_signature,
    first_onset_pitches,
    pitch_signature,
    sustained_pitches,
)
from ..ingest import Arrangement, ArrangementEntry
from ..labeling import ContinuousStyleFeatures, QuantileTable, extract_features
from ..planner.decoding import snap_style
from ..songmodel import Song, StyleVector
from .config import RetrieverConfig
from .energies import (
    EnergyBreakdown,
    classify_beats,
    drift_penalty,
    quality_energy,
    role_energy,
    style_energy,
    voice_leading_energy,
)
from .pools import PoolResult, build_candidate_pool
from .reharm import BeatPolicy, ReharmonizedMeasure, RejectCandidate, reharmonize
from ..harmony import MatchKind, RelaxStage


class CorpusExhausted(RuntimeError):
    pass


@dataclass
class GenerationState:
    rng: np.random.Generator
    step: int = 0
    prev_pitches: Optional[list[int]] = None
    prev_sustained: list[int] = field(default_factory=list)
    prev_style: Optional[StyleVector] = None
    prev_sig: Optional[str] = None
    consecutive_repeats: int = 0
    last_use: dict[str, int] = field(default_factory=dict)
    sig_counts: Counter = field(default_factory=Counter)
    selected_features: list[ContinuousStyleFeatures] = field(default_factory=list)
    phrase_selections: int = 0
    phrase_deviations: int = 0
    song_deviations: int = 0
    phrase_use: Counter = field(default_factory=Counter)
    section_use: Counter = field(default_factory=Counter)
    song_use: Counter = field(default_factory=Counter)
    prev_phrase_ids: set = field(default_factory=set)
    prev_section_ids: set = field(default_factory=set)

    def phrase_budget_left(self, cfg: RetrieverConfig) -> int:
        import math

        return math.ceil(cfg.phrase_slack * self.phrase_selections) - self.phrase_deviations

    def song_budget_left(self, cfg: RetrieverConfig) -> int:
        import math

        return math.ceil(cfg.song_slack * self.step) - self.song_deviations

    def begin_phrase(self) -> None:
        self.prev_phrase_ids = set(self.phrase_use)
        self.phrase_use = Counter()
        self.phrase_selections = 0
        self.phrase_deviations = 0

    def begin_section(self) -> None:
        self.prev_section_ids = set(self.section_use)
        self.section_use = Counter()

    def observed_unique(self) -> float:
        return len(self.sig_counts) / self.step if self.step else 1.0

    def apply_selection(self, record: MeasureRecord, reharm: ReharmonizedMeasure,
                        realized_sig: str, length_beats: int, deviated: bool) -> None:
        self.step += 1
        self.phrase_selections += 1
        if realized_sig == self.prev_sig:
            self.consecutive_repeats += 1
        else:
            self.consecutive_repeats = 0
        self.last_use[realized_sig] = self.step
        self.sig_counts[realized_sig] += 1
        self.prev_sig = realized_sig
        self.prev_pitches = first_onset_pitches(reharm.notes)
        self.prev_sustained = sustained_pitches(reharm.notes, length_beats)
        self.prev_style = record.style
        self.selected_features.append(extract_features(reharm.notes, length_beats))
        self.phrase_use[record.id] += 1
        self.section_use[record.id] += 1
        self.song_use[record.id] += 1
        if deviated:
            self.phrase_deviations += 1
            self.song_deviations += 1


def diversity_penalty(state: GenerationState, realized_sig: str, record_id: str,
                      harmonic_change: bool, cfg: RetrieverConfig) -> tuple[float, float]:
    """(signature repetition penalty, measure reuse penalty) for a candidate."""
    rep = 0.0
    if realized_sig == state.prev_sig:
        run = state.consecutive_repeats + 1
        if run > cfg.repeat_allowance:
            rep += cfg.repeat_penalty * (run - cfg.repeat_allowance)
    else:
        last = state.last_use.get(realized_sig)
        if last is not None:
            age = state.step + 1 - last
            if 2 <= age <= cfg.cooldown:
                rep += cfg.repeat_penalty * (cfg.cooldown + 1 - age) / cfg.cooldown
    if rep > 0.0 and harmonic_change:
        rep *= cfg.harmonic_change_multiplier
    if rep > 0.0 and state.step > 0:
        scale = cfg.target_unique / max(state.observed_unique(), 1e-9)
        rep *= min(max(scale, 1.0), cfg.adaptive_max)
    reuse = (
        cfg.reuse_phrase_weight * state.phrase_use[record_id]
        + cfg.reuse_section_weight * state.section_use[record_id]
        + cfg.reuse_song_weight * state.song_use[record_id]
    )
    return rep, reuse


@dataclass
class ScoredCandidate:
    record: MeasureRecord
    reharm: ReharmonizedMeasure
    breakdown: EnergyBreakdown
    realized_sig: str


def select(scored: Sequence[ScoredCandidate], cfg: RetrieverConfig,
           rng: np.random.Generator) -> ScoredCandidate:
    """Gate on voice-leading, dedupe by signature, then argmin or Boltzmann-sample."""
    if not scored:
        raise ValueError("empty candidate list")
    min_evl = min(c.breakdown.e_vl for c in scored)
    gated = [c for c in scored if c.breakdown.e_vl <= min_evl + cfg.vl_gate]
    by_sig: dict[str, ScoredCandidate] = {}
    for c in sorted(gated, key=lambda c: (c.breakdown.total, c.breakdown.e_vl, c.record.id)):
        by_sig.setdefault(c.realized_sig, c)
    pool = sorted(by_sig.values(), key=lambda c: (c.breakdown.total, c.breakdown.e_vl, c.record.id))
    if cfg.selection_mode == "map" or len(pool) == 1:
        return pool[0]
    if cfg.top_k and cfg.top_k > 0:
        pool = pool[:cfg.top_k]
    totals = np.array([c.breakdown.total for c in pool])
    logits = -(totals - totals.min()) / max(cfg.temperature, 1e-9)
    probs = np.exp(logits)
    probs /= probs.sum()
    return pool[int(rng.choice(len(pool), p=probs))]


def beat_policies_for(kinds: Sequence[MatchKind], source_chords, cfg: RetrieverConfig) -> list[BeatPolicy]:
    """Map per-beat match kinds to reharmonization policies.

    Exact beats keep the source gesture, family/sus beats may borrow source
    color tones, everything else pins onsets to target chord tones.
    """
    policies = []
    for b, kind in enumerate(kinds):
        src = source_chords[b] if b < len(source_chords) else None
        if kind == MatchKind.EXACT and src is not None:
            policies.append(BeatPolicy("gesture", source_mask=harmony.chord_tone_mask(src)))
        elif kind in (MatchKind.FAMILY, MatchKind.SUS_RELATED) and src is not None:
            policies.append(BeatPolicy("colored", color_pcs=harmony.color_pcs(src)))
        else:
            policies.append(BeatPolicy("strict"))
    return policies


@dataclass
class GenerationLog:
    rows: list[dict] = field(default_factory=list)
    strict_miss_count: int = 0
    median_strict_pool: float = 0.0
    section_stats: dict[str, dict] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "measures": len(self.rows),
            "strict_miss_count": self.strict_miss_count,
            "median_strict_pool": self.median_strict_pool,
            "sections": self.section_stats,
        }


def _harmonic_change(song: Song, t: int) -> bool:
    if t == 0:
        return False
    key = song.key_at(t)
    prev_key = song.key_at(t - 1)
    cur = harmony.to_roman(song.measures[t].chords[0], key).degree
    prev = harmony.to_roman(song.measures[t - 1].chords[-1], prev_key).degree
    return cur != prev


def _target_role(song: Song, t: int) -> RoleFlags:
    m = song.measures[t]
    return RoleFlags(
        phrase_role=m.phrase_role,
        song_start=t == 0,
        song_end=t == len(song.measures) - 1,
        pickup=m.length_beats < song.meter[0] and m.phrase_role == "begin",
        cadential=m.phrase_role == "end",
    )


def _score_candidate(record: MeasureRecord, reharm: ReharmonizedMeasure,
                     planned: StyleVector, target_qual, target_role, stage: RelaxStage,
                     state: GenerationState, cfg: RetrieverConfig,
                     quantiles: Optional[QuantileTable], harmonic_change: bool,
                     at_song_boundary: bool, final_measure: bool, tonic_pc: int,
                     wildcard_ok: bool, forced: bool = False) -> ScoredCandidate:
    e_qual, counts = quality_energy(target_qual, record.qual_seq, stage, cfg, wildcard_ok)
    cand_pitches = first_onset_pitches(reharm.notes)
    beat1 = [n.pitch for n in reharm.notes if n.onset < 1]
    e_vl = voice_leading_energy(state.prev_pitches, cand_pitches, state.prev_sustained,
                                beat1, cfg, final_measure=final_measure, tonic_pc=tonic_pc)
    if forced:
        from .energies import style_distance

        e_style = style_distance(planned, record.style, cfg)
        deviated = record.style != planned
    else:
        e_style, deviated = style_energy(
            planned, record.style, record.features, cfg, quantiles,
            at_transition=harmonic_change, at_song_boundary=at_song_boundary,
            phrase_budget_left=state.phrase_budget_left(cfg),
            song_budget_left=state.song_budget_left(cfg),
        )
    e_drift = 0.0
    if quantiles is not None:
        e_drift = drift_penalty(state.selected_features, record.features, planned, quantiles, cfg)
    realized_sig = active_signature(reharm.notes, record.length_beats).canonical
    e_div, e_reuse = diversity_penalty(state, realized_sig, record.id, harmonic_change, cfg)
    e_role = role_energy(target_role, record.role, cfg)
    breakdown = EnergyBreakdown(
        e_qual=e_qual, e_vl=e_vl, e_style=e_style, e_drift=e_drift,
        e_diversity=e_div, e_role=e_role, e_reuse=e_reuse,
        stage=int(stage), counts=counts,
    )
    scored = ScoredCandidate(record=record, reharm=reharm, breakdown=breakdown,
                             realized_sig=realized_sig)
    scored._deviated = deviated  # type: ignore[attr-defined]
    return scored


def _reharm_candidate(record: MeasureRecord, song: Song, t: int, stage: RelaxStage,
                      cfg: RetrieverConfig, wildcard_ok: bool,
                      limit_scale: float = 1.0) -> ReharmonizedMeasure:
    m = song.measures[t]
    target_qual = [(c.quality, frozenset(c.extensions)) for c in m.chords]
    kinds = classify_beats(target_qual, record.qual_seq, stage, wildcard_ok) \
        if len(record.qual_seq) == len(target_qual) else [MatchKind.MISMATCH] * len(target_qual)
    policies = beat_policies_for(kinds, record.chords, cfg)
    return reharmonize(record.pattern, m.chords, song.key_at(t), policies, cfg,
                       limit_scale=limit_scale)


def fallback_select(song: Song, t: int, planned: StyleVector, index: CorpusIndex,
                    state: GenerationState, cfg: RetrieverConfig,
                    quantiles: Optional[QuantileTable],
                    candidates: Optional[Sequence[MeasureRecord]] = None) -> ScoredCandidate:
    """Conservative forced selection: relax reharm limits, pick min total energy.

    Tries the given candidates (or every record of the right length) at
    escalating reharmonization limits; never returns empty unless the corpus
    has no measure of the required length at all.
    """
    m = song.measures[t]
    if candidates is None:
        idxs = index.by_length.get(m.length_beats, [])
        candidates = [index.records[i] for i in idxs]
    if not candidates:
        raise CorpusExhausted(f"no corpus measure of length {m.length_beats}")
    target_qual = [(c.quality, frozenset(c.extensions)) for c in m.chords]
    target_role = _target_role(song, t)
    harmonic_change = _harmonic_change(song, t)
    at_boundary = t == 0 or t == len(song.measures) - 1
    final = t == len(song.measures) - 1
    tonic = song.key_at(t).tonic_pc
    stage = RelaxStage.NEIGHBOR
    for scale in (1.0, 2.0, float("inf")):
        scored = []
        for rec in candidates:
            try:
                reharm = _reharm_candidate(rec, song, t, stage, cfg, True, limit_scale=scale)
            except RejectCandidate:
                continue
            scored.append(
                _score_candidate(rec, reharm, planned, target_qual, target_role, stage,
                                 state, cfg, quantiles, harmonic_change, at_boundary,
                                 final, tonic, True, forced=True)
            )
        if scored:
            return min(scored, key=lambda c: (c.breakdown.total, c.breakdown.e_vl, c.record.id))
    raise CorpusExhausted(f"all candidates rejected for measure {t}")


def generate_song(plan: Sequence[StyleVector], song: Song, index: CorpusIndex,
                  cfg: Optional[RetrieverConfig] = None,
                  quantiles: Optional[QuantileTable] = None) -> tuple[Arrangement, GenerationLog]:
    """Realize a plan over a normalized lead sheet; one entry per measure, always."""
    if cfg is None:
        cfg = RetrieverConfig()
    if quantiles is None:
        quantiles = index.quantiles
    if len(plan) != len(song.measures):
        raise ValueError(f"plan covers {len(plan)} measures, song has {len(song.measures)}")

    state = GenerationState(rng=np.random.default_rng(cfg.seed))
    log = GenerationLog()
    entries: list[ArrangementEntry] = []
    strict_sizes: list[int] = []
    cursor = Fraction(0)

    for t, m in enumerate(song.measures):
        at_phrase_boundary = t > 0 and m.phrase_role in ("begin", "single")
        at_section_boundary = t > 0 and m.section_label != song.measures[t - 1].section_label
        if at_phrase_boundary:
            state.begin_phrase()
        if at_section_boundary:
            state.begin_section()

        planned = snap_style(plan[t], index.inventory, m.length_beats,
                             weights=cfg.style_axis_weights)
        target_qual = [(c.quality, frozenset(c.extensions)) for c in m.chords]
        target_role = _target_role(song, t)
        harmonic_change = _harmonic_change(song, t)
        at_boundary = t == 0 or t == len(song.measures) - 1
        final = t == len(song.measures) - 1
        tonic = song.key_at(t).tonic_pc
        interior = not (target_role.song_start or target_role.song_end)

        neighbor_styles = []
        if state.prev_style is not None:
            neighbor_styles.append(state.prev_style)
        if t > 0:
            neighbor_styles.append(snap_style(plan[t - 1], index.inventory, m.length_beats,
                                              weights=cfg.style_axis_weights))
        pool = build_candidate_pool(index, planned, target_qual, target_role,
                                    m.length_beats, cfg, neighbor_styles=neighbor_styles)
        strict_sizes.append(pool.strict_pool_size)

        records = pool.records
        if cfg.boundary_novelty and records and (at_phrase_boundary or at_section_boundary):
            blocked = set()
            if at_phrase_boundary:
                blocked |= state.prev_phrase_ids
            if at_section_boundary:
                blocked |= state.prev_section_ids
            fresh = [r for r in records if r.id not in blocked]
            if fresh:
                records = fresh

        scored: list[ScoredCandidate] = []
        reject_reasons: Counter = Counter()
        reharm_ok: list[tuple[MeasureRecord, ReharmonizedMeasure]] = []
        wildcard_ok = interior and pool.stage >= RelaxStage.WILDCARD
        for rec in records:
            try:
                reharm = _reharm_candidate(rec, song, t, pool.stage, cfg, wildcard_ok)
            except RejectCandidate as exc:
                reject_reasons[exc.reason] += 1
                continue
            reharm_ok.append((rec, reharm))
            try:
                scored.append(
                    _score_candidate(rec, reharm, planned, target_qual, target_role,
                                     pool.stage, state, cfg, quantiles, harmonic_change,
                                     at_boundary, final, tonic, wildcard_ok)
                )
            except RejectCandidate as exc:
                reject_reasons[exc.reason] += 1

        if scored:
            choice = select(scored, cfg, state.rng)
        elif reharm_ok:
            # feasible pool, every candidate rejected on style grounds: force
            choice = fallback_select(song, t, planned, index, state, cfg, quantiles,
                                     candidates=[rec for rec, _ in reharm_ok])
        elif records:
            # every candidate rejected during reharmonization: relax limits
            choice = fallback_select(song, t, planned, index, state, cfg, quantiles,
                                     candidates=records)
        else:
            choice = fallback_select(song, t, planned, index, state, cfg, quantiles)

        deviated = getattr(choice, "_deviated", choice.record.style != planned)
        state.apply_selection(choice.record, choice.reharm, choice.realized_sig,
                              m.length_beats, deviated)
        entries.append(
            ArrangementEntry(
                measure_index=t,
                source_id=choice.record.id,
                start_beat=cursor,
                length_beats=m.length_beats,
                notes=choice.reharm.notes,
            )
        )
        cursor += m.length_beats
        log.rows.append(
            {
                "measure": t,
                "section": m.section_label,
                "planned_style": list(planned),
                "chosen": choice.record.id,
                "chosen_style": list(choice.record.style),
                "stage": int(pool.stage),
                "strict_pool": pool.strict_pool_size,
                "pool_size": len(records),
                "rejects": dict(reject_reasons),
                "energy": choice.breakdown.to_dict(),
                "deviated": bool(deviated),
                "active_sig": choice.realized_sig,
                "pitch_sig": pitch_signature(choice.reharm.notes, m.length_beats).canonical,
            }
        )

    log.strict_miss_count = sum(1 for s in strict_sizes if s == 0)
    log.median_strict_pool = float(statistics.median(strict_sizes)) if strict_sizes else 0.0
    sections: dict[str, list[int]] = {}
    for row, size in zip(log.rows, strict_sizes):
        sections.setdefault(row["section"], []).append(size)
    log.section_stats = {
        label: {
            "measures": len(sizes),
            "miss": sum(1 for s in sizes if s == 0),
            "median_strict_pool": float(statistics.median(sizes)),
        }
        for label, sizes in sections.items()
    }
    arrangement = Arrangement(song_id=song.id, tempo_bpm=song.tempo_bpm, meter=song.meter,
                              entries=entries)
    return arrangement, log


def denormalize_arrangement(arr: Arrangement, original_song: Song) -> Arrangement:
    """Shift each measure back to the original song's key (inverse of normalization)."""
    from dataclasses import replace as _replace

    out_entries = []
    for entry in arr.entries:
        span = original_song.key_at(entry.measure_index)
        off = harmony.normalization_offset(span)
        if off == 0:
            out_entries.append(entry)
            continue
        notes = [
            _replace(n, pitch=_fold_pitch(n.pitch - off))
            for n in entry.notes
        ]
        out_entries.append(_replace(entry, notes=notes))
    return Arrangement(song_id=arr.song_id, tempo_bpm=arr.tempo_bpm, meter=arr.meter,
                       entries=out_entries)


def _fold_pitch(p: int) -> int:
    while p > 127:
        p -= 12
    while p < 0:
        p += 12
    return p
