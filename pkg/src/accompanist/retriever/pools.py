"""Staged candidate-pool construction with structural awareness.

The ladder starts from strict style+quality+role intersection and widens one
notch at a time: weak-beat wildcards, quality families, cross-family colors,
style-only, bounded style relaxation, and finally neighbor-style proxies.
Boundary measures keep their role-flag filters at every stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from ..harmony import MatchKind, RelaxStage
from ..indexing import CorpusIndex, MeasureRecord, RoleFlags, query
from ..songmodel import StyleVector, weighted_hamming
from .config import RetrieverConfig
from .energies import classify_beats


@dataclass
class PoolResult:
    records: list[MeasureRecord]
    stage: RelaxStage
    strict_pool_size: int


_ALLOWED_BY_STAGE = {
    RelaxStage.STRICT: {MatchKind.EXACT, MatchKind.MISSING},
    RelaxStage.WILDCARD: {MatchKind.EXACT, MatchKind.MISSING, MatchKind.WILDCARD},
    RelaxStage.FAMILY: {MatchKind.EXACT, MatchKind.MISSING, MatchKind.WILDCARD,
                        MatchKind.FAMILY, MatchKind.SUS_RELATED},
    RelaxStage.CROSS_FAMILY: {MatchKind.EXACT, MatchKind.MISSING, MatchKind.WILDCARD,
                              MatchKind.FAMILY, MatchKind.SUS_RELATED, MatchKind.CROSS_FAMILY},
}


def _role_pred(target_role: RoleFlags, stage: RelaxStage):
    boundary = target_role.song_start or target_role.song_end

    def strict(rec: MeasureRecord) -> bool:
        r = rec.role
        return (r.phrase_role == target_role.phrase_role
                and r.song_start == target_role.song_start
                and r.song_end == target_role.song_end
                and r.pickup == target_role.pickup)

    def boundary_flags(rec: MeasureRecord) -> bool:
        r = rec.role
        if target_role.song_start and not r.song_start:
            return False
        if target_role.song_end and not r.song_end:
            return False
        return True

    def interior(rec: MeasureRecord) -> bool:
        return not rec.role.pickup

    if stage == RelaxStage.STRICT:
        return strict
    return boundary_flags if boundary else interior


def _qual_pred(target_qual, stage: RelaxStage, wildcard_ok: bool):
    allowed = _ALLOWED_BY_STAGE.get(stage)
    if allowed is None:
        return None  # stages 4+: quality unconstrained

    def pred(rec: MeasureRecord) -> bool:
        if len(rec.qual_seq) != len(target_qual):
            return False
        kinds = classify_beats(target_qual, rec.qual_seq, stage, wildcard_ok)
        return all(k in allowed for k in kinds)

    return pred


def _style_sets_within(index: CorpusIndex, planned: StyleVector, length: int,
                       max_distance: float, cfg: RetrieverConfig) -> set[StyleVector]:
    out = set()
    for vec in index.inventory.vectors(length):
        if weighted_hamming(planned, vec, cfg.style_axis_weights) <= max_distance:
            out.add(vec)
    return out


def build_candidate_pool(index: CorpusIndex, planned: StyleVector,
                         target_qual: Sequence, target_role: RoleFlags, length_beats: int,
                         cfg: RetrieverConfig,
                         neighbor_styles: Sequence[StyleVector] = ()) -> PoolResult:
    """Walk the relaxation ladder; stop at the first stage reaching min_pool.

    If no stage reaches min_pool the last non-empty pool wins (pools only
    grow along the ladder); an empty result means the caller must fall back
    to forced selection.
    """
    boundary = target_role.song_start or target_role.song_end
    interior = not boundary
    best: Optional[PoolResult] = None
    strict_size = 0

    for stage in RelaxStage:
        if stage == RelaxStage.WILDCARD and not interior:
            continue
        if stage == RelaxStage.CROSS_FAMILY and not interior:
            continue
        wildcard_ok = interior and stage >= RelaxStage.WILDCARD

        if stage <= RelaxStage.STYLE_ONLY:
            style_filter = planned
        elif stage == RelaxStage.STYLE_RELAXED:
            style_filter = _style_sets_within(index, planned, length_beats, 1.0, cfg)
        else:  # NEIGHBOR: bounded relaxation plus neighbor-style proxies
            style_filter = _style_sets_within(index, planned, length_beats, 1.0, cfg)
            style_filter |= set(neighbor_styles)
        qual_pred = _qual_pred(target_qual, stage, wildcard_ok)
        role_pred = _role_pred(target_role, stage)
        records = query(index, style_filter, qual_pred, role_pred, length_beats)

        if stage == RelaxStage.STRICT:
            strict_size = len(records)
        if records:
            best = PoolResult(records=records, stage=stage, strict_pool_size=strict_size)
            if len(records) >= cfg.min_pool:
                return best
    if best is not None:
        return best
    return PoolResult(records=[], stage=RelaxStage.NEIGHBOR, strict_pool_size=strict_size)
