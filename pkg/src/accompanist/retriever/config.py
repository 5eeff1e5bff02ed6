"""Retriever configuration: every energy weight, budget, and selection knob."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict


def _default_style_weights() -> dict[str, float]:
    return {"dyn": 1.0, "art": 1.0, "rhythm": 1.0, "tension": 1.0, "texture": 1.5, "register": 1.0}


@dataclass
class RetrieverConfig:
    # per-beat quality-match penalties
    wild_weight: float = 0.3
    miss_weight: float = 0.5
    family_weight: float = 0.5
    sus_weight: float = 0.8
    cross_weight: float = 1.5
    mismatch_weight: float = 3.0
    # voice leading
    leap_weight: float = 2.0
    leap_threshold: int = 12
    rest_weight: float = 1.0
    crossing_weight: float = 2.0
    parallel_weight: float = 2.0
    anticipation_weight: float = 1.0
    tonic_bonus: float = 2.0
    role_penalty: float = 1.0
    # style distance
    style_axis_weights: dict[str, float] = field(default_factory=_default_style_weights)
    style_cap: float = 3.0
    # slack budgets (ratio of selections so far)
    phrase_slack: float = 0.15
    song_slack: float = 0.10
    # drift thermostat
    drift_weight: float = 1.0
    band_tolerance: float = 0.1
    # repetition control
    cooldown: int = 8
    repeat_allowance: int = 1
    repeat_penalty: float = 1.5
    target_unique: float = 0.85
    adaptive_max: float = 3.0
    harmonic_change_multiplier: float = 1.5
    reuse_phrase_weight: float = 1.0
    reuse_section_weight: float = 0.5
    reuse_song_weight: float = 0.2
    boundary_novelty: bool = True
    # selection
    vl_gate: float = 4.0
    selection_mode: str = "sample"  # "map" | "sample"
    temperature: float = 0.7
    top_k: int = 8
    # candidate pool
    min_pool: int = 3
    # reharmonization limits
    max_mean_shift: float = 3.0
    max_register_drift: float = 5.0
    min_chord_tone_ratio: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.leap_threshold < 1:
            raise ValueError("leap_threshold must be >= 1")
        for name in ("phrase_slack", "song_slack"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.selection_mode not in ("map", "sample"):
            raise ValueError(f"unknown selection mode {self.selection_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "RetrieverConfig":
        return cls(**obj)
