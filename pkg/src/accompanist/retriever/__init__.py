from .config import RetrieverConfig
from .energies import (
    EnergyBreakdown,
    LengthMismatch,
    MatchCounts,
    classify_beats,
    drift_penalty,
    quality_energy,
    role_energy,
    style_distance,
    style_energy,
    voice_leading_energy,
    weak_beats,
)
from .generate import (
    CorpusExhausted,
    GenerationLog,
    GenerationState,
    ScoredCandidate,
    denormalize_arrangement,
    diversity_penalty,
    fallback_select,
    generate_song,
    select,
)
from .pools import PoolResult, build_candidate_pool
from .reharm import (
    BeatPolicy,
    ReharmonizedMeasure,
    RejectCandidate,
    nearest_allowed_pitch,
    reharmonize,
)
