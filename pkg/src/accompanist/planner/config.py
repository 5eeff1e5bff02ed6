"""Planner configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict


@dataclass
class PlannerConfig:
    d_model: int = 256
    layers: int = 4
    heads: int = 8
    d_ff: int = 1024
    dropout: float = 0.1
    learning_rate: float = 3e-4
    epochs: int = 20
    batch_size: int = 32
    past_window: int = 32
    future_window: int = 1
    # keyword conditioning
    prompt_conditioning: bool = True
    prompt_constraint_weight: float = 0.2
    prompt_drop_prob: float = 0.3
    prompt_scope_probs: tuple[float, float, float] = (0.5, 0.35, 0.15)
    # inventory projection
    inventory_prior_weight: float = 0.5  # 0 for ablation parity
    anchor_weight: float = 0.0  # section anchors disabled by default
    # decoding
    decode_mode: str = "map"  # "map" | "sample"
    temperature: float = 1.0
    top_k: int = 0  # 0 = no truncation
    top_p: float = 0.0  # 0 = no truncation
    seed: int = 0
    val_split: float = 0.1
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.past_window < 1 or self.future_window < 1:
            raise ValueError("windows must be >= 1")
        if self.decode_mode not in ("map", "sample"):
            raise ValueError(f"unknown decode mode {self.decode_mode!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prompt_scope_probs"] = list(self.prompt_scope_probs)
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "PlannerConfig":
        obj = dict(obj)
        if "prompt_scope_probs" in obj:
            obj["prompt_scope_probs"] = tuple(obj["prompt_scope_probs"])
        return cls(**obj)
