"""Conditioning-tape construction: tokens, melodic summaries, structure vectors.

Each measure contributes a fixed budget of 8 tokens (structure, two compound
style tokens, four harmony tokens, one melodic summary); 3 global tokens
describe key mode, tempo bin, and meter.  The target measure's style tokens
are replaced by the mask id and excluded from attention and pooling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .. import harmony
from ..songmodel import (
    DYNAMICS_TRENDS,
    PHRASE_ROLES,
    PROMPT_DIM,
    SECTION_LABELS,
    Song,
    StyleVector,
)
from .config import PlannerConfig

PAD_ID = 0
MASK_ID = 1
UNK_ID = 2
SPECIALS = ("<pad>", "<mask>", "<unk>")

TOKENS_PER_MEASURE = 8
N_GLOBALS = 3
STYLE_TOKEN_OFFSETS = (1, 2)  # positions of the two style tokens in a measure block

STRUCT_DIM = len(SECTION_LABELS) + len(PHRASE_ROLES) + 3 + len(DYNAMICS_TRENDS)  # 19
FULL_STRUCT_DIM = STRUCT_DIM + PROMPT_DIM  # 48

TEMPO_BIN_EDGES = (70.0, 90.0, 110.0, 130.0)

# 16 canonical melody rhythm templates on a 16-cell (4 beats x 4) grid.
RHYTHM_TEMPLATES: tuple[frozenset[int], ...] = tuple(
    frozenset(cells)
    for cells in (
        (),
        (0,),
        (0, 8),
        (0, 4, 8, 12),
        (0, 2, 4, 6, 8, 10, 12, 14),
        tuple(range(16)),
        (2, 6, 10, 14),
        (0, 6, 8, 14),
        (0, 4, 8, 12, 14),
        (0, 2, 4, 8, 10, 12),
        (0, 8, 12),
        (4, 12),
        (0, 2, 8, 10),
        (0, 4, 6, 8, 12, 14),
        (0, 12),
        (0, 4, 8),
    )
)

CONTOURS = ("up", "down", "flat", "arch", "v")


class IndexOutOfRange(IndexError):
    pass


@dataclass
class TokenVocab:
    tokens: list[str] = field(default_factory=lambda: list(SPECIALS))
    ids: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.ids:
            self.ids = {t: i for i, t in enumerate(self.tokens)}

    def add(self, token: str) -> int:
        if token not in self.ids:
            self.ids[token] = len(self.tokens)
            self.tokens.append(token)
        return self.ids[token]

    def id(self, token: str) -> int:
        return self.ids.get(token, UNK_ID)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class TokenSequence:
    ids: np.ndarray  # (S,) int32
    attend: np.ndarray  # (S,) bool; False = excluded from attention keys
    pool: np.ndarray  # (S,) bool; target-measure pooling span
    measure_offsets: np.ndarray  # (S,) int; offset relative to target measure
    tokens: list[str] = field(default_factory=list)


def melody_summary(measure) -> tuple[int, int, int, str]:
    """(density bin, register bin, rhythm template id, contour) for one measure."""
    notes = measure.melody
    if not notes:
        return 0, 1, 0, "flat"
    density = len(notes) / measure.length_beats
    if density < 0.75:
        dbin = 0
    elif density < 1.5:
        dbin = 1
    elif density < 2.5:
        dbin = 2
    else:
        dbin = 3
    mean_pitch = sum(n.pitch for n in notes) / len(notes)
    rbin = 0 if mean_pitch < 60 else (1 if mean_pitch <= 72 else 2)

    cells = set()
    for n in notes:
        cell = int(n.onset * 4)
        if 0 <= cell < 16:
            cells.add(cell)
    best_id, best_d = 0, 99
    for i, tmpl in enumerate(RHYTHM_TEMPLATES):
        d = len(cells ^ tmpl)
        if d < best_d:
            best_id, best_d = i, d

    pitches = [n.pitch for n in sorted(notes, key=lambda n: n.onset)]
    first, last = pitches[0], pitches[-1]
    peak, trough = max(pitches), min(pitches)
    if peak >= first + 3 and peak >= last + 3:
        contour = "arch"
    elif trough <= first - 3 and trough <= last - 3:
        contour = "v"
    elif last - first >= 3:
        contour = "up"
    elif first - last >= 3:
        contour = "down"
    else:
        contour = "flat"
    return dbin, rbin, best_id, contour


def _roman_token(chord: harmony.ChordSymbol, key: harmony.KeyContext) -> str:
    rn = harmony.to_roman(chord, key)
    sign = "+" if rn.chromatic_offset > 0 else ("-" if rn.chromatic_offset < 0 else "")
    ext = "x" if chord.extensions else ""
    bass = f"/{rn.bass_degree}" if rn.bass_degree is not None else ""
    return f"H:{rn.degree}{sign}:{rn.quality}{ext}{bass}"


def _harmony_beats(length_beats: int) -> list[int]:
    return [int(round(x)) for x in np.linspace(0, length_beats - 1, 4)]


def measure_tokens(song: Song, index: int, style: Optional[StyleVector]) -> list[str]:
    """The 8-token block for one in-song measure; style None means mask."""
    m = song.measures[index]
    key = song.key_at(index)
    toks = [f"S:{m.section_label}/{m.phrase_role}/{m.dynamics_trend}"]
    if style is None:
        toks += [SPECIALS[MASK_ID], SPECIALS[MASK_ID]]
    else:
        toks += [f"Y1:{style.dyn}|{style.art}|{style.rhythm}",
                 f"Y2:{style.tension}|{style.texture}|{style.register}"]
    for b in _harmony_beats(m.length_beats):
        toks.append(_roman_token(m.chords[b], key))
    dbin, rbin, tid, contour = melody_summary(m)
    toks.append(f"M:{dbin}|{rbin}|{tid}|{contour}")
    return toks


def global_tokens(song: Song, index: int) -> list[str]:
    key = song.key_at(index)
    bin_idx = sum(1 for e in TEMPO_BIN_EDGES if song.tempo_bpm >= e)
    return [f"G:MODE:{key.mode}", f"G:TEMPO:{bin_idx}", f"G:METER:{song.meter[0]}/{song.meter[1]}"]


def section_runs(song: Song) -> list[tuple[int, int, str]]:
    runs = []
    for i, m in enumerate(song.measures):
        if runs and runs[-1][2] == m.section_label and runs[-1][1] == i:
            runs[-1] = (runs[-1][0], i + 1, m.section_label)
        else:
            runs.append((i, i + 1, m.section_label))
    return runs


def phrase_runs(song: Song) -> list[tuple[int, int]]:
    """Contiguous phrase spans derived from phrase roles."""
    runs = []
    start = 0
    for i, m in enumerate(song.measures):
        if m.phrase_role in ("begin", "single") and i > start:
            runs.append((start, i))
            start = i
        if m.phrase_role in ("end", "single"):
            runs.append((start, i + 1))
            start = i + 1
    if start < len(song.measures):
        runs.append((start, len(song.measures)))
    return [r for r in runs if r[1] > r[0]]


def _position_in(runs, index) -> float:
    for s, e, *_ in [(r[0], r[1]) for r in runs]:
        if s <= index < e:
            return (index - s) / (e - s - 1) if e - s > 1 else 0.0
    return 0.0


def structure_vector(song: Song, index: int, prompt_vec: Optional[np.ndarray] = None) -> np.ndarray:
    """Section/phrase/trend one-hots + positional scalars + prompt block."""
    m = song.measures[index]
    vec = np.zeros(FULL_STRUCT_DIM)
    pos = 0
    vec[pos + SECTION_LABELS.index(m.section_label)] = 1.0
    pos += len(SECTION_LABELS)
    vec[pos + PHRASE_ROLES.index(m.phrase_role)] = 1.0
    pos += len(PHRASE_ROLES)
    vec[pos] = min(m.length_beats / song.meter[0], 1.0)
    vec[pos + 1] = _position_in(section_runs(song), index)
    vec[pos + 2] = _position_in(phrase_runs(song), index)
    pos += 3
    vec[pos + DYNAMICS_TRENDS.index(m.dynamics_trend)] = 1.0
    pos += len(DYNAMICS_TRENDS)
    if prompt_vec is None:
        from ..prompts import auto_prompt_vector

        prompt_vec = auto_prompt_vector()
    vec[pos:pos + PROMPT_DIM] = prompt_vec
    return vec


def encode_context(song: Song, t: int, config: PlannerConfig,
                   prompt_vec: Optional[np.ndarray] = None,
                   labels: Optional[Sequence[Optional[StyleVector]]] = None,
                   vocab: Optional[TokenVocab] = None,
                   grow_vocab: bool = False) -> tuple[TokenSequence, np.ndarray]:
    """Token window + structure vector for measure t.

    `labels[i]` supplies the style tokens of neighbor measures; None (and the
    target measure itself) yields mask tokens that are excluded from
    attention.  Out-of-song positions become attendable boundary padding.
    """
    if not 0 <= t < len(song.measures):
        raise IndexOutOfRange(f"measure {t} outside song of {len(song.measures)}")
    tokens: list[str] = list(global_tokens(song, t))
    attend = [True] * N_GLOBALS
    pool = [False] * N_GLOBALS
    offsets = [0] * N_GLOBALS

    lo = t - config.past_window
    hi = t + config.future_window
    for i in range(lo, hi + 1):
        off = i - t
        if i < 0 or i >= len(song.measures):
            block = [SPECIALS[PAD_ID]] * TOKENS_PER_MEASURE
            block_attend = [True] * TOKENS_PER_MEASURE
            block_pool = [False] * TOKENS_PER_MEASURE
        else:
            style = None
            if i != t and labels is not None and i < len(labels):
                style = labels[i]
            block = measure_tokens(song, i, style)
            masked = [j in STYLE_TOKEN_OFFSETS and block[j] == SPECIALS[MASK_ID]
                      for j in range(TOKENS_PER_MEASURE)]
            block_attend = [not m for m in masked]
            block_pool = [i == t and not m for m in masked]
        tokens.extend(block)
        attend.extend(block_attend)
        pool.extend(block_pool)
        offsets.extend([off] * TOKENS_PER_MEASURE)

    if vocab is None:
        vocab = TokenVocab()
        grow_vocab = True
    ids = np.array(
        [vocab.add(tok) if grow_vocab else vocab.id(tok) for tok in tokens], dtype=np.int32
    )
    seq = TokenSequence(
        ids=ids,
        attend=np.array(attend, dtype=bool),
        pool=np.array(pool, dtype=bool),
        measure_offsets=np.array(offsets, dtype=np.int32),
        tokens=tokens,
    )
    return seq, structure_vector(song, t, prompt_vec)


def build_vocab(songs: Sequence[Song], labels: dict[str, list[StyleVector]],
                config: PlannerConfig) -> TokenVocab:
    """Vocabulary over every token the training songs can produce."""
    vocab = TokenVocab()
    for song in songs:
        for tok in global_tokens(song, 0):
            vocab.add(tok)
        song_labels = labels.get(song.id)
        for i in range(len(song.measures)):
            style = song_labels[i] if song_labels else None
            for tok in measure_tokens(song, i, style):
                vocab.add(tok)
    return vocab


def expected_token_count(config: PlannerConfig) -> int:
    return N_GLOBALS + (config.past_window + 1 + config.future_window) * TOKENS_PER_MEASURE
