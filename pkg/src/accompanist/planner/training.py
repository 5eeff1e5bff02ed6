"""Masked-slot training: loss, Adam updates, the epoch loop, gradient checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .. import prompts
from ..songmodel import PROMPT_DIM, STYLE_AXES, STYLE_VOCAB, Song, StyleVector
from .config import PlannerConfig
from .model import Batch, PlannerModel, SlotDistributions, softmax
from .vocab import STRUCT_DIM, TokenVocab, build_vocab, encode_context


class EmptyMask(ValueError):
    pass


class DataTooSmall(ValueError):
    pass


def masked_loss(dists: Sequence[SlotDistributions], targets: Sequence[Sequence[Optional[int]]],
                mask_set: set[tuple[int, str]]) -> float:
    """Mean negative log-likelihood over the masked, labeled slots.

    `targets[t][j]` is the class index for sample t, axis j (None = no label;
    such slots are skipped even when masked).
    """
    if not mask_set:
        raise EmptyMask("mask set is empty")
    total, count = 0.0, 0
    for t, axis in sorted(mask_set):
        j = STYLE_AXES.index(axis)
        y = targets[t][j]
        if y is None:
            continue
        p = dists[t].dists[axis][y]
        total += -math.log(max(float(p), 1e-300))
        count += 1
    if count == 0:
        raise EmptyMask("no masked slot has a valid label")
    return total / count


def slot_loss_and_dlogits(logits: dict[str, np.ndarray], targets: np.ndarray,
                          mask: np.ndarray) -> tuple[float, dict[str, np.ndarray], int]:
    """Cross-entropy over masked slots; returns (loss, dlogits, n_terms).

    targets: (B, 6) int with -1 for missing labels; mask: (B, 6) bool.
    dlogits already carries the 1/n normalization.
    """
    B = targets.shape[0]
    valid = mask & (targets >= 0)
    n = int(valid.sum())
    if n == 0:
        raise EmptyMask("no masked slot has a valid label")
    loss = 0.0
    dlogits = {}
    for j, axis in enumerate(STYLE_AXES):
        l = logits[axis]
        shifted = l - l.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1))
        p = np.exp(shifted) / np.exp(logz)[:, None]
        dl = np.zeros_like(l)
        rows = np.nonzero(valid[:, j])[0]
        for b in rows:
            y = targets[b, j]
            loss += float(logz[b] - shifted[b, y])
            dl[b] = p[b]
            dl[b, y] -= 1.0
        dlogits[axis] = dl / n
    return loss / n, dlogits, n


def prompt_alignment_loss(logits: dict[str, np.ndarray],
                          prompt_blocks: Sequence[Optional[dict[str, np.ndarray]]],
                          weight: float) -> tuple[float, dict[str, np.ndarray]]:
    """Soft cross-entropy pulling active axes toward the prompt's label distribution."""
    terms = 0
    for blocks in prompt_blocks:
        if blocks:
            terms += len(blocks)
    dlogits = {axis: np.zeros_like(logits[axis]) for axis in STYLE_AXES}
    if terms == 0 or weight == 0.0:
        return 0.0, dlogits
    loss = 0.0
    for b, blocks in enumerate(prompt_blocks):
        if not blocks:
            continue
        for axis, u in blocks.items():
            l = logits[axis][b]
            shifted = l - l.max()
            logz = np.log(np.exp(shifted).sum())
            p = np.exp(shifted - logz)
            loss += float(-(u * (shifted - logz)).sum())
            dlogits[axis][b] += weight * (p - u) / terms
    return weight * loss / terms, dlogits


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[k] / b1c
            vhat = self.v[k] / b2c
            params[k] -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(params[k].dtype)


@dataclass
class TrainSample:
    song_idx: int
    t: int
    seq: object
    struct: np.ndarray
    targets: np.ndarray  # (6,) int, -1 for missing
    style: StyleVector


def _style_targets(style: Optional[StyleVector]) -> np.ndarray:
    if style is None:
        return np.full(6, -1, dtype=np.int64)
    return np.array([STYLE_VOCAB[a].index(getattr(style, a)) for a in STYLE_AXES], dtype=np.int64)


def _encode_all(songs: Sequence[Song], labels: dict[str, list[StyleVector]],
                config: PlannerConfig, vocab: TokenVocab) -> list[TrainSample]:
    samples = []
    for si, song in enumerate(songs):
        song_labels = labels[song.id]
        for t in range(len(song.measures)):
            seq, struct = encode_context(song, t, config, labels=song_labels, vocab=vocab)
            samples.append(
                TrainSample(
                    song_idx=si,
                    t=t,
                    seq=seq,
                    struct=struct,
                    targets=_style_targets(song_labels[t]),
                    style=song_labels[t],
                )
            )
    return samples


def _prompt_blocks(u: np.ndarray) -> dict[str, np.ndarray]:
    """Per-axis label distributions for axes the prompt actively constrains."""
    blocks = {}
    pos = 0
    for axis in STYLE_AXES:
        size = len(STYLE_VOCAB[axis]) + 1
        block = u[pos:pos + size]
        if block[-1] < 0.5:  # AUTO mass absent: axis is constrained
            labels = block[:-1]
            s = labels.sum()
            if s > 0:
                blocks[axis] = labels / s
        pos += size
    return blocks


def evaluate(model: PlannerModel, samples: Sequence[TrainSample],
             batch_size: int = 64) -> tuple[float, dict[str, float]]:
    """Masked-slot validation loss and per-axis accuracy (AUTO prompts)."""
    total_loss, total_n = 0.0, 0
    correct = {a: 0 for a in STYLE_AXES}
    counted = {a: 0 for a in STYLE_AXES}
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        batch = Batch.stack([(s.seq, s.struct) for s in chunk])
        logits, _ = model.forward_batch(batch, training=False)
        targets = np.stack([s.targets for s in chunk])
        mask = np.ones_like(targets, dtype=bool)
        loss, _, n = slot_loss_and_dlogits(logits, targets, mask)
        total_loss += loss * n
        total_n += n
        for j, axis in enumerate(STYLE_AXES):
            pred = logits[axis].argmax(axis=1)
            for b in range(len(chunk)):
                if targets[b, j] >= 0:
                    counted[axis] += 1
                    correct[axis] += int(pred[b] == targets[b, j])
    acc = {a: (correct[a] / counted[a] if counted[a] else 0.0) for a in STYLE_AXES}
    return total_loss / max(total_n, 1), acc


def train(songs: Sequence[Song], labels: dict[str, list[StyleVector]], config: PlannerConfig,
          registry=None, val_song_ids: Optional[set[str]] = None,
          verbose: bool = False) -> tuple[PlannerModel, list[dict]]:
    """Mini-batch Adam on the masked-slot objective; keeps the best-val params."""
    if len(songs) < 2:
        raise DataTooSmall(f"need >= 2 songs, got {len(songs)}")
    rng = np.random.default_rng(config.seed)
    if registry is None and config.prompt_conditioning:
        registry = prompts.load_registry()

    ids = [s.id for s in songs]
    if val_song_ids is None:
        order = list(range(len(songs)))
        rng.shuffle(order)
        n_val = max(1, round(config.val_split * len(songs)))
        val_song_ids = {ids[i] for i in order[:n_val]}
    train_songs = [s for s in songs if s.id not in val_song_ids]
    val_songs = [s for s in songs if s.id in val_song_ids]
    if not train_songs or not val_songs:
        raise DataTooSmall("empty train or validation split")

    vocab = build_vocab(train_songs, labels, config)
    model = PlannerModel(config, vocab, rng=rng)
    train_samples = _encode_all(train_songs, labels, config, vocab)
    val_samples = _encode_all(val_songs, labels, config, vocab)
    opt = Adam(model.params, lr=config.learning_rate)

    curves: list[dict] = []
    best_val = math.inf
    best_params = model.copy_params()
    auto_u = prompts.auto_prompt_vector()

    for epoch in range(1, config.epochs + 1):
        order = np.arange(len(train_samples))
        rng.shuffle(order)
        epoch_loss, epoch_n = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            chunk = [train_samples[i] for i in order[start:start + config.batch_size]]
            structs = []
            prompt_blocks: list[Optional[dict[str, np.ndarray]]] = []
            for s in chunk:
                struct = s.struct
                blocks = None
                if config.prompt_conditioning and s.style is not None:
                    kwset, _scope = prompts.sample_compatible_keywords(
                        s.style, rng, registry,
                        p_drop=config.prompt_drop_prob,
                        scope_probs=config.prompt_scope_probs,
                    )
                    if kwset:
                        u = prompts.prompt_vector(prompts.merge_keywords(kwset, registry))
                        struct = struct.copy()
                        struct[STRUCT_DIM:] = u
                        blocks = _prompt_blocks(u)
                structs.append(struct)
                prompt_blocks.append(blocks)
            batch = Batch(
                ids=np.stack([s.seq.ids for s in chunk]),
                attend=np.stack([s.seq.attend for s in chunk]),
                pool=np.stack([s.seq.pool for s in chunk]),
                struct=np.stack(structs),
            )
            targets = np.stack([s.targets for s in chunk])
            mask = np.ones_like(targets, dtype=bool)
            logits, fwd_cache = model.forward_batch(batch, training=True, rng=rng)
            loss, dlogits, n = slot_loss_and_dlogits(logits, targets, mask)
            if config.prompt_constraint_weight > 0.0:
                ploss, pdl = prompt_alignment_loss(logits, prompt_blocks,
                                                   config.prompt_constraint_weight)
                loss += ploss
                for axis in STYLE_AXES:
                    dlogits[axis] += pdl[axis]
            grads = model.backward_batch(fwd_cache, dlogits)
            opt.step(model.params, grads)
            epoch_loss += loss * len(chunk)
            epoch_n += len(chunk)

        val_loss, val_acc = evaluate(model, val_samples)
        train_loss = epoch_loss / max(epoch_n, 1)
        acc_mean = sum(val_acc.values()) / len(val_acc)
        curves.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "val_acc": val_acc,
                "val_acc_mean": acc_mean,
            }
        )
        if verbose:
            print(f"epoch {epoch:3d}  train {train_loss:.4f}  val {val_loss:.4f}  acc {acc_mean:.3f}")
        if val_loss < best_val:
            best_val = val_loss
            best_params = model.copy_params()

    model.params = best_params
    return model, curves


def grad_check(model: PlannerModel, seq, struct, targets: np.ndarray,
               eps: float = 1e-4, max_entries_per_group: int = 24,
               corrupt_group: Optional[str] = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs in float64 with dropout disabled; checks a deterministic spread of
    entries in every parameter group.  `corrupt_group` perturbs one group's
    analytic gradient (negative control).
    """
    m = model.astype(np.float64)
    batch = Batch.single(seq, np.asarray(struct, dtype=np.float64))
    targets = np.asarray(targets).reshape(1, 6)
    mask = np.ones_like(targets, dtype=bool)

    def loss_only() -> float:
        logits, _ = m.forward_batch(batch, training=False)
        loss, _, _ = slot_loss_and_dlogits(logits, targets, mask)
        return loss

    logits, cache = m.forward_batch(batch, training=False)
    _, dlogits, _ = slot_loss_and_dlogits(logits, targets, mask)
    grads = m.backward_batch(cache, dlogits)
    if corrupt_group is not None:
        grads[corrupt_group] = grads[corrupt_group] + 1.0

    worst = 0.0
    for name in sorted(m.params):
        param = m.params[name]
        flat = param.reshape(-1)
        gflat = grads[name].reshape(-1)
        n_entries = min(flat.size, max_entries_per_group)
        idxs = np.unique(np.linspace(0, flat.size - 1, n_entries).astype(int))
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss_only()
            flat[idx] = orig - eps
            down = loss_only()
            flat[idx] = orig
            numeric = (up - down) / (2.0 * eps)
            analytic = gflat[idx]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
