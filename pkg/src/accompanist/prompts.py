"""Keyword prompt handling: registry, merging, soft prompt vectors, feasibility.

Each musician keyword maps to per-axis allowed / preferred / excluded label
sets.  Merging intersects allowed sets, unions preferences and exclusions,
and the result feeds three consumers: a 29-dimensional soft prompt vector for
the planner, a feasible subset of the style inventory for decoding, and a
compatibility predicate used when sampling training-time keywords.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Optional, Sequence

import numpy as np

from .indexing import StyleInventory
from .songmodel import AUTO_LABEL, PROMPT_DIM, STYLE_AXES, STYLE_VOCAB, StyleVector

# Axes dropped first when a prompt over-specifies the corpus.
RELAXATION_ORDER = ("texture", "register", "tension", "rhythm", "art", "dyn")

SCOPES = ("song", "section", "measure")


class UnknownKeyword(KeyError):
    pass


@dataclass(frozen=True)
class AxisRule:
    allowed: Optional[frozenset[str]] = None  # None = unconstrained
    preferred: frozenset[str] = frozenset()
    excluded: frozenset[str] = frozenset()


@dataclass(frozen=True)
class KeywordRule:
    name: str
    axes: dict[str, AxisRule] = field(default_factory=dict)

    def axis(self, name: str) -> AxisRule:
        return self.axes.get(name, AxisRule())


@dataclass
class PromptConstraints:
    allowed: dict[str, Optional[frozenset[str]]]
    preferred: dict[str, frozenset[str]]
    excluded: dict[str, frozenset[str]]
    overspecified: set[str] = field(default_factory=set)

    @classmethod
    def unconstrained(cls) -> "PromptConstraints":
        return cls(
            allowed={a: None for a in STYLE_AXES},
            preferred={a: frozenset() for a in STYLE_AXES},
            excluded={a: frozenset() for a in STYLE_AXES},
        )

    def admits(self, style: StyleVector) -> bool:
        for axis, label in zip(STYLE_AXES, style):
            if label in self.excluded[axis]:
                return False
            allowed = self.allowed[axis]
            if allowed is not None and label not in allowed:
                return False
        return True

    def dropping(self, axes: Iterable[str]) -> "PromptConstraints":
        drop = set(axes)
        return PromptConstraints(
            allowed={a: (None if a in drop else self.allowed[a]) for a in STYLE_AXES},
            preferred={a: (frozenset() if a in drop else self.preferred[a]) for a in STYLE_AXES},
            excluded={a: (frozenset() if a in drop else self.excluded[a]) for a in STYLE_AXES},
            overspecified=self.overspecified - drop,
        )


def load_registry(path=None) -> dict[str, KeywordRule]:
    """Keyword registry from a JSON file (default: the packaged asset)."""
    if path is None:
        text = resources.files("accompanist.data").joinpath("keywords.json").read_text("utf-8")
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    raw = json.loads(text)["keywords"]
    registry = {}
    for name, axes in raw.items():
        rules = {}
        for axis, spec in axes.items():
            if axis not in STYLE_AXES:
                raise ValueError(f"keyword {name!r}: unknown axis {axis!r}")
            vocab = set(STYLE_VOCAB[axis])
            for key in ("allowed", "preferred", "excluded"):
                bad = set(spec.get(key, [])) - vocab
                if bad:
                    raise ValueError(f"keyword {name!r}: {key} labels {sorted(bad)} not in axis {axis!r}")
            rules[axis] = AxisRule(
                allowed=frozenset(spec["allowed"]) if "allowed" in spec else None,
                preferred=frozenset(spec.get("preferred", [])),
                excluded=frozenset(spec.get("excluded", [])),
            )
        registry[name] = KeywordRule(name=name, axes=rules)
    return registry


def merge_keywords(names: Iterable[str], registry: Optional[dict[str, KeywordRule]] = None) -> PromptConstraints:
    """Intersect allowed sets, union preferences and exclusions across keywords."""
    if registry is None:
        registry = load_registry()
    rules = []
    for name in sorted(set(names)):
        if name not in registry:
            raise UnknownKeyword(name)
        rules.append(registry[name])

    out = PromptConstraints.unconstrained()
    for axis in STYLE_AXES:
        allowed: Optional[frozenset] = None
        preferred: frozenset = frozenset()
        excluded: frozenset = frozenset()
        for rule in rules:
            ar = rule.axis(axis)
            if ar.allowed is not None:
                allowed = ar.allowed if allowed is None else allowed & ar.allowed
            preferred |= ar.preferred
            excluded |= ar.excluded
        if allowed is not None:
            preferred &= allowed
            if not allowed:
                out.overspecified.add(axis)
        preferred -= excluded
        out.allowed[axis] = allowed
        out.preferred[axis] = preferred
        out.excluded[axis] = excluded
    return out


def prompt_vector(constraints: PromptConstraints) -> np.ndarray:
    """29-dim concatenation of per-axis distributions over labels + AUTO.

    Weights: preferred 1.0, allowed-but-not-preferred 0.5, excluded or
    out-of-allowed 0.0; an axis with no surviving weight puts all mass on AUTO.
    """
    blocks = []
    for axis in STYLE_AXES:
        labels = STYLE_VOCAB[axis]
        allowed = constraints.allowed[axis]
        w = np.zeros(len(labels) + 1)
        for i, label in enumerate(labels):
            if label in constraints.excluded[axis]:
                continue
            if label in constraints.preferred[axis]:
                w[i] = 1.0
            elif allowed is not None and label in allowed:
                w[i] = 0.5
        if w.sum() == 0.0:
            w[-1] = 1.0  # AUTO
        blocks.append(w / w.sum())
    vec = np.concatenate(blocks)
    assert vec.shape == (PROMPT_DIM,)
    return vec


def auto_prompt_vector() -> np.ndarray:
    return prompt_vector(PromptConstraints.unconstrained())


def constraint_set(constraints: PromptConstraints, inventory: StyleInventory,
                   length_beats: int) -> list[StyleVector]:
    """Feasible inventory subset; may be empty (callers then relax)."""
    return [s for s in inventory.vectors(length_beats) if constraints.admits(s)]


def constraint_set_relaxed(constraints: PromptConstraints, inventory: StyleInventory,
                           length_beats: int) -> tuple[list[StyleVector], tuple[str, ...]]:
    """Staged relaxation: drop axes in RELAXATION_ORDER until feasible.

    Returns (vectors, dropped_axes); a fully dropped prompt yields the whole
    inventory with all six axes reported dropped.
    """
    dropped: list[str] = []
    current = constraints
    vectors = constraint_set(current, inventory, length_beats)
    for axis in RELAXATION_ORDER:
        if vectors:
            break
        dropped.append(axis)
        current = constraints.dropping(dropped)
        vectors = constraint_set(current, inventory, length_beats)
    if not vectors:
        vectors = inventory.vectors(length_beats)
        dropped = list(RELAXATION_ORDER)
    return vectors, tuple(dropped)


def keyword_compatible(rule: KeywordRule, style: StyleVector) -> bool:
    """True when the keyword neither excludes nor disallows any slot of `style`."""
    for axis, label in zip(STYLE_AXES, style):
        ar = rule.axis(axis)
        if label in ar.excluded:
            return False
        if ar.allowed is not None and label not in ar.allowed:
            return False
    return True


def sample_compatible_keywords(gt: StyleVector, rng: np.random.Generator,
                               registry: Optional[dict[str, KeywordRule]] = None,
                               p_drop: float = 0.3,
                               scope_probs: Sequence[float] = (0.5, 0.35, 0.15),
                               max_keywords: int = 2) -> tuple[frozenset[str], str]:
    """Training-time keyword sampling that never contradicts the ground truth."""
    if registry is None:
        registry = load_registry()
    scope = SCOPES[int(rng.choice(len(SCOPES), p=np.asarray(scope_probs) / np.sum(scope_probs)))]
    if rng.random() < p_drop:
        return frozenset(), scope
    compatible = sorted(name for name, rule in registry.items() if keyword_compatible(rule, gt))
    if not compatible:
        return frozenset(), scope
    k = int(rng.integers(1, max_keywords + 1))
    k = min(k, len(compatible))
    picked = rng.choice(len(compatible), size=k, replace=False)
    return frozenset(compatible[i] for i in picked), scope
