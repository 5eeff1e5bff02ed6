"""Evaluation metrics: pattern diversity, style-space motion, isolation, features.

Entropies are natural-log Shannon entropies over clusters of identical
canonical signatures (or style vectors); normalized entropy divides by
log(cluster count) and is defined as 1.0 for a single cluster.
"""

from __future__ import annotations

import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .songmodel import STYLE_AXES, StyleVector

STACCATO_MAX_BEATS = Fraction(1, 4)


class TooShort(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class TooFewSongs(ValueError):
    pass


def pattern_diversity(signatures: Sequence[str]) -> tuple[float, float, float]:
    """(unique ratio, dominant cluster ratio, consecutive repeat ratio)."""
    n = len(signatures)
    if n < 2:
        raise TooShort(f"need >= 2 signatures, got {n}")
    counts = Counter(signatures)
    unique = len(counts) / n
    dominant = max(counts.values()) / n
    repeat = sum(1 for a, b in zip(signatures, signatures[1:]) if a == b) / (n - 1)
    return unique, dominant, repeat


def normalized_entropy(cluster_sizes: Sequence[int]) -> float:
    """H(clusters)/log(k); 1.0 when all clusters are equal-sized or k == 1."""
    k = len(cluster_sizes)
    if k <= 1:
        return 1.0
    total = sum(cluster_sizes)
    h = -sum((c / total) * math.log(c / total) for c in cluster_sizes if c)
    return h / math.log(k)


def shannon_entropy(cluster_sizes: Sequence[int]) -> float:
    total = sum(cluster_sizes)
    if total == 0:
        return 0.0
    return -sum((c / total) * math.log(c / total) for c in cluster_sizes if c)


@dataclass
class SectionDiversityRow:
    section: str
    start: int
    end: int
    measures: int
    normalized_entropy: float
    top3_coverage: float
    dominant_ratio: float
    strict_miss_count: int
    median_strict_pool: float
    single_cluster: bool = False

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def _section_runs(sections: Sequence[str]) -> list[tuple[int, int, str]]:
    runs: list[tuple[int, int, str]] = []
    for i, label in enumerate(sections):
        if runs and runs[-1][2] == label and runs[-1][1] == i:
            runs[-1] = (runs[-1][0], i + 1, label)
        else:
            runs.append((i, i + 1, label))
    return runs


def section_diversity(signatures: Sequence[str], sections: Sequence[str],
                      pool_log: Optional[Sequence[dict]] = None) -> list[SectionDiversityRow]:
    """Per contiguous section run: entropy, coverage, dominance, retrieval health."""
    if len(signatures) != len(sections):
        raise LengthMismatch("signatures and sections must align")
    rows = []
    for start, end, label in _section_runs(list(sections)):
        sigs = signatures[start:end]
        counts = sorted(Counter(sigs).values(), reverse=True)
        n = len(sigs)
        miss = 0
        pools: list[float] = []
        if pool_log is not None:
            for row in pool_log[start:end]:
                size = row["strict_pool"] if isinstance(row, dict) else row
                pools.append(size)
                if size == 0:
                    miss += 1
        rows.append(
            SectionDiversityRow(
                section=label,
                start=start,
                end=end,
                measures=n,
                normalized_entropy=normalized_entropy(counts),
                top3_coverage=sum(counts[:3]) / n,
                dominant_ratio=counts[0] / n,
                strict_miss_count=miss,
                median_strict_pool=float(statistics.median(pools)) if pools else 0.0,
                single_cluster=len(counts) == 1,
            )
        )
    return rows


@dataclass
class StyleSpaceReport:
    transition_distance: float
    boundary_contrast: float
    axis_entropy: float
    vector_entropy: float
    section_mode_ratio: float
    axis_consistency: float
    vector_consistency: float

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def style_space_metrics(plan: Sequence[StyleVector], sections: Sequence[str]) -> StyleSpaceReport:
    """Style-plan motion and within-section concentration statistics.

    Distances are normalized Hamming (fraction of the six slots that differ).
    Mode ratios average per contiguous section run; consistencies measure
    agreement with each section label's global modal choice.
    """
    n = len(plan)
    if n < 2:
        raise TooShort("need at least 2 measures")
    if len(sections) != n:
        raise LengthMismatch("plan and sections must align")

    def nham(a: StyleVector, b: StyleVector) -> float:
        return sum(1 for x, y in zip(a, b) if x != y) / len(STYLE_AXES)

    within, across = [], []
    for i in range(n - 1):
        d = nham(plan[i], plan[i + 1])
        (across if sections[i] != sections[i + 1] else within).append(d)
    transition = float(np.mean(within + across))
    boundary_contrast = (float(np.mean(across)) if across else 0.0) - (
        float(np.mean(within)) if within else 0.0
    )

    runs = _section_runs(list(sections))
    axis_entropies, vector_entropies, mode_ratios = [], [], []
    for start, end, _label in runs:
        chunk = plan[start:end]
        vec_counts = Counter(tuple(v) for v in chunk)
        vector_entropies.append(shannon_entropy(list(vec_counts.values())))
        mode_ratios.append(max(vec_counts.values()) / len(chunk))
        per_axis = []
        for j in range(len(STYLE_AXES)):
            counts = Counter(v[j] for v in chunk)
            per_axis.append(shannon_entropy(list(counts.values())))
        axis_entropies.append(float(np.mean(per_axis)))

    label_modes: dict[str, tuple] = {}
    label_axis_modes: dict[str, list[str]] = {}
    by_label: dict[str, list[StyleVector]] = {}
    for v, s in zip(plan, sections):
        by_label.setdefault(s, []).append(v)
    for label, vecs in by_label.items():
        counts = Counter(tuple(v) for v in vecs)
        top = max(counts.values())
        label_modes[label] = min(v for v, c in counts.items() if c == top)
        axis_modes = []
        for j in range(len(STYLE_AXES)):
            ac = Counter(v[j] for v in vecs)
            atop = max(ac.values())
            axis_modes.append(min(l for l, c in ac.items() if c == atop))
        label_axis_modes[label] = axis_modes

    vector_consistency = sum(
        1 for v, s in zip(plan, sections) if tuple(v) == label_modes[s]
    ) / n
    axis_hits = 0
    for v, s in zip(plan, sections):
        for j in range(len(STYLE_AXES)):
            if v[j] == label_axis_modes[s][j]:
                axis_hits += 1
    axis_consistency = axis_hits / (n * len(STYLE_AXES))

    return StyleSpaceReport(
        transition_distance=transition,
        boundary_contrast=boundary_contrast,
        axis_entropy=float(np.mean(axis_entropies)),
        vector_entropy=float(np.mean(vector_entropies)),
        section_mode_ratio=float(np.mean(mode_ratios)),
        axis_consistency=axis_consistency,
        vector_consistency=vector_consistency,
    )


@dataclass
class IsolationReport:
    all_match_ratio: float
    pairwise_match_mean: float
    union_size: int

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def isolation_metrics(runs: Sequence[Sequence[str]]) -> IsolationReport:
    """Cross-run signature overlap: all-match rate, pairwise mean, union size."""
    if not runs:
        raise TooShort("need at least one run")
    length = len(runs[0])
    if any(len(r) != length for r in runs):
        raise LengthMismatch("all runs must have the same length")
    n_runs = len(runs)
    all_match = sum(
        1 for i in range(length) if len({r[i] for r in runs}) == 1
    ) / length if length else 0.0
    pair_values = []
    for a in range(n_runs):
        for b in range(a + 1, n_runs):
            matches = sum(1 for i in range(length) if runs[a][i] == runs[b][i])
            pair_values.append(matches / length)
    pairwise = float(np.mean(pair_values)) if pair_values else 1.0
    union = len({sig for r in runs for sig in r})
    return IsolationReport(all_match_ratio=all_match, pairwise_match_mean=pairwise,
                           union_size=union)


@dataclass
class RealizedFeatures:
    starts_per_measure: float
    velocity_median: float
    staccato_ratio: float
    register_span: float

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def realized_features(arrangement) -> RealizedFeatures:
    """Continuous performance features of a rendered arrangement."""
    notes = [n for entry in arrangement.entries for n in entry.notes]
    measures = len(arrangement.entries)
    if not notes or not measures:
        raise TooShort("arrangement has no notes")
    pitches = np.array([n.pitch for n in notes], dtype=float)
    return RealizedFeatures(
        starts_per_measure=len(notes) / measures,
        velocity_median=float(np.median([n.velocity for n in notes])),
        staccato_ratio=sum(1 for n in notes if n.duration <= STACCATO_MAX_BEATS) / len(notes),
        register_span=float(np.percentile(pitches, 95) - np.percentile(pitches, 5)),
    )


def bootstrap_ci(deltas: Sequence[float], resamples: int = 10000, level: float = 0.95,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of per-song deltas."""
    n = len(deltas)
    if n < 2:
        raise TooFewSongs(f"need >= 2 songs, got {n}")
    rng = np.random.default_rng(seed)
    arr = np.asarray(deltas, dtype=float)
    idx = rng.integers(0, n, size=(resamples, n))
    means = arr[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo = float(np.percentile(means, 100 * alpha))
    hi = float(np.percentile(means, 100 * (1.0 - alpha)))
    return lo, hi
