"""Inventory-constrained decoding: projection, style snapping, song planning."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .. import prompts
from ..indexing import StyleInventory
from ..songmodel import STYLE_AXES, STYLE_VOCAB, Song, StyleVector, weighted_hamming
from .config import PlannerConfig
from .model import PlannerModel, SlotDistributions, softmax
from .vocab import encode_context, section_runs


class EmptyInventory(ValueError):
    pass


class PinsInfeasible(ValueError):
    pass


def _score_vectors(dists: SlotDistributions, vectors: Sequence[StyleVector],
                   inventory: StyleInventory, length_beats: int,
                   prior_weight: float, anchor: Optional[StyleVector],
                   anchor_weight: float) -> np.ndarray:
    logp = {
        axis: np.log(np.maximum(dists.dists[axis], 1e-300)) for axis in STYLE_AXES
    }
    scores = np.empty(len(vectors))
    total = inventory.total(length_beats)
    for i, vec in enumerate(vectors):
        s = sum(logp[axis][STYLE_VOCAB[axis].index(label)] for axis, label in zip(STYLE_AXES, vec))
        if prior_weight > 0.0:
            s += prior_weight * np.log(inventory.count(length_beats, vec) / total)
        if anchor is not None and anchor_weight > 0.0:
            s -= anchor_weight * sum(1 for a, b in zip(vec, anchor) if a != b)
        scores[i] = s
    return scores


def _map_pick(vectors, scores, inventory, length_beats) -> StyleVector:
    """Argmax with deterministic ties: higher count, then lexicographic order."""
    best = scores.max()
    tied = [v for v, s in zip(vectors, scores) if s == best]
    if len(tied) == 1:
        return tied[0]
    return min(tied, key=lambda v: (-inventory.count(length_beats, v), tuple(v)))


def project_to_inventory(dists: SlotDistributions, inventory: StyleInventory,
                         length_beats: int, prior_weight: float = 0.0,
                         anchor: Optional[StyleVector] = None, anchor_weight: float = 0.0,
                         constraints: Optional[prompts.PromptConstraints] = None,
                         mode: str = "map", temperature: float = 1.0,
                         top_k: int = 0, top_p: float = 0.0,
                         rng: Optional[np.random.Generator] = None) -> StyleVector:
    """Select the joint style vector maximizing slot log-likelihood plus priors.

    Hard keyword constraints restrict the inventory (with staged relaxation
    back to the full inventory when over-specified).  Sampling mode draws
    from a Boltzmann distribution over candidate scores.
    """
    if inventory.total(length_beats) == 0:
        raise EmptyInventory(f"no inventory for length {length_beats}")
    if constraints is not None:
        vectors, _dropped = prompts.constraint_set_relaxed(constraints, inventory, length_beats)
    else:
        vectors = inventory.vectors(length_beats)
    scores = _score_vectors(dists, vectors, inventory, length_beats,
                            prior_weight, anchor, anchor_weight)
    if mode == "map":
        return _map_pick(vectors, scores, inventory, length_beats)

    if rng is None:
        rng = np.random.default_rng(0)
    order = sorted(
        range(len(vectors)),
        key=lambda i: (-scores[i], -inventory.count(length_beats, vectors[i]), tuple(vectors[i])),
    )
    if top_k and top_k > 0:
        order = order[:top_k]
    probs = softmax(scores[order] / max(temperature, 1e-9))
    if top_p and 0.0 < top_p < 1.0:
        cum = np.cumsum(probs)
        keep = int(np.searchsorted(cum, top_p) + 1)
        order = order[:keep]
        probs = probs[:keep] / probs[:keep].sum()
    choice = int(rng.choice(len(order), p=probs))
    return vectors[order[choice]]


def snap_style(style: StyleVector, inventory: StyleInventory, length_beats: int,
               pins: Optional[dict[str, str]] = None,
               weights: Optional[dict[str, float]] = None) -> StyleVector:
    """Nearest observed vector under weighted Hamming distance, honoring pins."""
    if inventory.total(length_beats) == 0:
        raise EmptyInventory(f"no inventory for length {length_beats}")
    candidates = inventory.vectors(length_beats)
    if pins:
        candidates = [
            v for v in candidates
            if all(getattr(v, axis) == label for axis, label in pins.items())
        ]
        if not candidates:
            raise PinsInfeasible(f"no inventory vector satisfies pins {pins}")
    return min(
        candidates,
        key=lambda v: (
            weighted_hamming(style, v, weights),
            -inventory.count(length_beats, v),
            tuple(v),
        ),
    )


@dataclass
class PlanResult:
    styles: list[StyleVector]
    dists: list[SlotDistributions]
    anchors: dict[str, StyleVector] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "styles": [list(s) for s in self.styles],
            "anchors": {k: list(v) for k, v in self.anchors.items()},
        }


def _merge_measure_keywords(song: Song, t: int, keywords: Sequence[str],
                            section_keywords: Optional[dict[str, Sequence[str]]]) -> frozenset[str]:
    names = set(keywords)
    if section_keywords:
        names |= set(section_keywords.get(song.measures[t].section_label, ()))
    return frozenset(names)


def first_pass_anchors(styles: Sequence[StyleVector], song: Song) -> dict[str, StyleVector]:
    """Modal planned vector of each section label's first contiguous run."""
    anchors: dict[str, StyleVector] = {}
    for start, end, label in section_runs(song):
        if label in anchors:
            continue
        counts = Counter(styles[start:end])
        top = max(counts.values())
        anchors[label] = min((v for v, c in counts.items() if c == top), key=tuple)
    return anchors


def plan_song(model: PlannerModel, song: Song, inventory: StyleInventory,
              config: Optional[PlannerConfig] = None,
              keywords: Sequence[str] = (),
              section_keywords: Optional[dict[str, Sequence[str]]] = None,
              anchors: Optional[dict[str, StyleVector]] = None,
              registry=None,
              rng: Optional[np.random.Generator] = None) -> PlanResult:
    """Left-to-right planning: encode, predict, project, measure by measure.

    Past measures expose their already-planned style tokens; the current and
    future measures' style tokens stay masked (their styles do not exist yet).
    When section anchoring is enabled without explicit anchors, a first pass
    plans unanchored and each section label's first run supplies its anchor.
    """
    if config is None:
        config = model.config
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if registry is None:
        registry = prompts.load_registry()

    if config.anchor_weight > 0.0 and anchors is None:
        pre = plan_song(model, song, inventory, config=_without_anchor(config),
                        keywords=keywords, section_keywords=section_keywords,
                        registry=registry, rng=np.random.default_rng(config.seed))
        anchors = first_pass_anchors(pre.styles, song)

    styles: list[Optional[StyleVector]] = [None] * len(song.measures)
    all_dists: list[SlotDistributions] = []
    constraint_cache: dict[frozenset, Optional[prompts.PromptConstraints]] = {}
    for t in range(len(song.measures)):
        names = _merge_measure_keywords(song, t, keywords, section_keywords)
        if names not in constraint_cache:
            constraint_cache[names] = prompts.merge_keywords(names, registry) if names else None
        constraints = constraint_cache[names]
        u = prompts.prompt_vector(constraints) if constraints else prompts.auto_prompt_vector()
        seq, struct = encode_context(song, t, config, prompt_vec=u, labels=styles,
                                     vocab=model.vocab)
        dists = model.forward(seq, struct)
        all_dists.append(dists)
        anchor = None
        if anchors and config.anchor_weight > 0.0:
            anchor = anchors.get(song.measures[t].section_label)
        styles[t] = project_to_inventory(
            dists,
            inventory,
            song.measures[t].length_beats,
            prior_weight=config.inventory_prior_weight,
            anchor=anchor,
            anchor_weight=config.anchor_weight,
            constraints=constraints,
            mode=config.decode_mode,
            temperature=config.temperature,
            top_k=config.top_k,
            top_p=config.top_p,
            rng=rng,
        )
    return PlanResult(styles=list(styles), dists=all_dists, anchors=dict(anchors or {}))


def _without_anchor(config: PlannerConfig) -> PlannerConfig:
    import dataclasses

    return dataclasses.replace(config, anchor_weight=0.0)


def constant_plan(style: StyleVector, song: Song, inventory: StyleInventory,
                  weights: Optional[dict[str, float]] = None) -> list[StyleVector]:
    """Flat plan: the same style snapped to the inventory of each measure length."""
    out = []
    for m in song.measures:
        out.append(snap_style(style, inventory, m.length_beats, weights=weights))
    return out


def majority_style(inventory: StyleInventory) -> StyleVector:
    """Most frequent style vector across all lengths (ties: lexicographic)."""
    totals: Counter = Counter()
    for length in inventory.lengths():
        totals.update(inventory.counts[length])
    if not totals:
        raise EmptyInventory("inventory is empty")
    top = max(totals.values())
    return min((v for v, c in totals.items() if c == top), key=tuple)
