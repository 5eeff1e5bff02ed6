"""Compact transformer encoder with explicit forward/backward passes in numpy.

The model encodes the conditioning tape, mean-pools the target measure's
token span, adds a projected structure/prompt vector, and predicts each of
the six style slots with its own softmax head.  Backpropagation is written
out by hand so gradients can be verified against finite differences; all
randomness (init, dropout) flows through one seeded generator.
"""

from __future__ import annotations

import json
import struct as _struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..songmodel import STYLE_AXES, STYLE_VOCAB, StyleVector
from .config import PlannerConfig
from .vocab import FULL_STRUCT_DIM, TokenSequence, TokenVocab

LN_EPS = 1e-5
MASK_BIAS = -1e9
CHECKPOINT_MAGIC = b"APLN"
CHECKPOINT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


@dataclass
class Batch:
    ids: np.ndarray  # (B,S) int32
    attend: np.ndarray  # (B,S) bool
    pool: np.ndarray  # (B,S) bool
    struct: np.ndarray  # (B,Z)

    @classmethod
    def single(cls, seq: TokenSequence, struct: np.ndarray) -> "Batch":
        return cls(
            ids=seq.ids[None, :],
            attend=seq.attend[None, :],
            pool=seq.pool[None, :],
            struct=np.asarray(struct)[None, :],
        )

    @classmethod
    def stack(cls, items: list[tuple[TokenSequence, np.ndarray]]) -> "Batch":
        return cls(
            ids=np.stack([s.ids for s, _ in items]),
            attend=np.stack([s.attend for s, _ in items]),
            pool=np.stack([s.pool for s, _ in items]),
            struct=np.stack([np.asarray(z) for _, z in items]),
        )


@dataclass
class SlotDistributions:
    dists: dict[str, np.ndarray]

    def argmax(self) -> StyleVector:
        return StyleVector(*(STYLE_VOCAB[a][int(np.argmax(self.dists[a]))] for a in STYLE_AXES))

    def log_prob(self, style: StyleVector, floor: float = 1e-300) -> float:
        total = 0.0
        for axis, label in zip(STYLE_AXES, style):
            p = self.dists[axis][STYLE_VOCAB[axis].index(label)]
            total += float(np.log(max(p, floor)))
        return total


def sinusoidal_positions(max_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def _layer_norm_backward(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )
    return dx, dg, db


class PlannerModel:
    """Token embeddings + L post-norm encoder blocks + structure projection + slot heads."""

    def __init__(self, config: PlannerConfig, vocab: TokenVocab,
                 rng: Optional[np.random.Generator] = None,
                 params: Optional[dict[str, np.ndarray]] = None,
                 dtype: Optional[np.dtype] = None):
        self.config = config
        self.vocab = vocab
        self.dtype = np.dtype(dtype or config.dtype)
        if params is not None:
            self.params = params
        else:
            if rng is None:
                rng = np.random.default_rng(config.seed)
            self.params = self._init_params(rng)
        max_len = 8 * (config.past_window + 1 + config.future_window) + 8
        self.pe = sinusoidal_positions(max_len, config.d_model).astype(self.dtype)

    def _init_params(self, rng) -> dict[str, np.ndarray]:
        cfg = self.config
        D, F, Z = cfg.d_model, cfg.d_ff, FULL_STRUCT_DIM

        def xavier(shape):
            bound = np.sqrt(6.0 / sum(shape))
            return rng.uniform(-bound, bound, size=shape).astype(self.dtype)

        p: dict[str, np.ndarray] = {
            "tok_emb": (rng.normal(0.0, 0.02, size=(len(self.vocab), D))).astype(self.dtype),
            "Wz": xavier((Z, D)),
            "bz": np.zeros(D, dtype=self.dtype),
        }
        for l in range(cfg.layers):
            pre = f"layer{l}."
            for name in ("Wq", "Wk", "Wv", "Wo"):
                p[pre + "attn." + name] = xavier((D, D))
            # no key bias: softmax is invariant to a per-row constant
            for name in ("bq", "bv", "bo"):
                p[pre + "attn." + name] = np.zeros(D, dtype=self.dtype)
            p[pre + "ln1.g"] = np.ones(D, dtype=self.dtype)
            p[pre + "ln1.b"] = np.zeros(D, dtype=self.dtype)
            p[pre + "ff.W1"] = xavier((D, F))
            p[pre + "ff.b1"] = np.zeros(F, dtype=self.dtype)
            p[pre + "ff.W2"] = xavier((F, D))
            p[pre + "ff.b2"] = np.zeros(D, dtype=self.dtype)
            p[pre + "ln2.g"] = np.ones(D, dtype=self.dtype)
            p[pre + "ln2.b"] = np.zeros(D, dtype=self.dtype)
        for axis in STYLE_AXES:
            p[f"head.{axis}.W"] = xavier((D, len(STYLE_VOCAB[axis])))
            p[f"head.{axis}.b"] = np.zeros(len(STYLE_VOCAB[axis]), dtype=self.dtype)
        return p

    def astype(self, dtype) -> "PlannerModel":
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        return PlannerModel(self.config, self.vocab, params=params, dtype=np.dtype(dtype))

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    # ------------------------------------------------------------------
    # forward

    def forward_batch(self, batch: Batch, training: bool = False,
                      rng: Optional[np.random.Generator] = None):
        """Returns ({axis: logits (B,K)}, cache for backward)."""
        cfg = self.config
        p = self.params
        B, S = batch.ids.shape
        D, H = cfg.d_model, cfg.heads
        dh = D // H
        if batch.struct.shape[-1] != FULL_STRUCT_DIM:
            raise ShapeMismatch(
                f"structure vector has dim {batch.struct.shape[-1]}, expected {FULL_STRUCT_DIM}"
            )
        if S > self.pe.shape[0]:
            raise ShapeMismatch(f"sequence length {S} exceeds positional table {self.pe.shape[0]}")
        drop_p = cfg.dropout if training else 0.0

        def dropout(x):
            if drop_p <= 0.0:
                return x, None
            mask = (rng.random(x.shape) >= drop_p).astype(x.dtype) / (1.0 - drop_p)
            return x * mask, mask

        struct = batch.struct.astype(self.dtype)
        emb = p["tok_emb"][batch.ids]
        x = emb + self.pe[:S][None, :, :]
        x, d0 = dropout(x)

        bias = np.where(batch.attend[:, None, None, :], 0.0, MASK_BIAS).astype(self.dtype)
        layer_caches = []
        for l in range(cfg.layers):
            pre = f"layer{l}."
            x_in = x
            q = x @ p[pre + "attn.Wq"] + p[pre + "attn.bq"]
            k = x @ p[pre + "attn.Wk"]
            v = x @ p[pre + "attn.Wv"] + p[pre + "attn.bv"]
            qh = q.reshape(B, S, H, dh).transpose(0, 2, 1, 3)
            kh = k.reshape(B, S, H, dh).transpose(0, 2, 1, 3)
            vh = v.reshape(B, S, H, dh).transpose(0, 2, 1, 3)
            scores = np.einsum("bhid,bhjd->bhij", qh, kh) / np.sqrt(dh)
            scores = scores + bias
            attn = softmax(scores, axis=-1)
            attn_d, dmask_a = dropout(attn)
            ctx = np.einsum("bhij,bhjd->bhid", attn_d, vh)
            ctx_m = ctx.transpose(0, 2, 1, 3).reshape(B, S, D)
            out = ctx_m @ p[pre + "attn.Wo"] + p[pre + "attn.bo"]
            out, d1 = dropout(out)
            x1, ln1_cache = _layer_norm(x_in + out, p[pre + "ln1.g"], p[pre + "ln1.b"])
            f1 = x1 @ p[pre + "ff.W1"] + p[pre + "ff.b1"]
            r = np.maximum(f1, 0.0)
            f2 = r @ p[pre + "ff.W2"] + p[pre + "ff.b2"]
            f2, d2 = dropout(f2)
            x, ln2_cache = _layer_norm(x1 + f2, p[pre + "ln2.g"], p[pre + "ln2.b"])
            layer_caches.append(
                dict(x_in=x_in, qh=qh, kh=kh, vh=vh, attn=attn, attn_d=attn_d, ctx_m=ctx_m,
                     dmask_a=dmask_a, d1=d1, d2=d2, x1=x1, f1=f1, r=r,
                     ln1=ln1_cache, ln2=ln2_cache)
            )

        counts = batch.pool.sum(axis=1).astype(self.dtype)
        if np.any(counts == 0):
            raise ShapeMismatch("pooling span is empty for some sample")
        poolf = batch.pool.astype(self.dtype)
        h = (x * poolf[:, :, None]).sum(axis=1) / counts[:, None]
        ht = h + struct @ p["Wz"] + p["bz"]
        logits = {axis: ht @ p[f"head.{axis}.W"] + p[f"head.{axis}.b"] for axis in STYLE_AXES}
        cache = dict(batch=batch, emb_ids=batch.ids, d0=d0, layers=layer_caches, x_final=x,
                     poolf=poolf, counts=counts, h=h, ht=ht, struct=struct)
        return logits, cache

    def forward(self, seq: TokenSequence, struct: np.ndarray) -> SlotDistributions:
        logits, _ = self.forward_batch(Batch.single(seq, struct))
        return SlotDistributions({a: softmax(logits[a][0]) for a in STYLE_AXES})

    # ------------------------------------------------------------------
    # backward

    def backward_batch(self, cache, dlogits: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        cfg = self.config
        p = self.params
        batch: Batch = cache["batch"]
        B, S = batch.ids.shape
        D, H = cfg.d_model, cfg.heads
        dh = D // H
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}

        dht = np.zeros_like(cache["ht"])
        for axis in STYLE_AXES:
            dl = dlogits[axis].astype(self.dtype)
            grads[f"head.{axis}.W"] += cache["ht"].T @ dl
            grads[f"head.{axis}.b"] += dl.sum(axis=0)
            dht += dl @ p[f"head.{axis}.W"].T

        grads["Wz"] += cache["struct"].T @ dht
        grads["bz"] += dht.sum(axis=0)
        dh_pool = dht  # gradient wrt pooled h
        dx = cache["poolf"][:, :, None] * (dh_pool / cache["counts"][:, None])[:, None, :]

        for l in reversed(range(cfg.layers)):
            pre = f"layer{l}."
            c = cache["layers"][l]
            dsum2, dg2, db2 = _layer_norm_backward(dx, c["ln2"])
            grads[pre + "ln2.g"] += dg2
            grads[pre + "ln2.b"] += db2
            dx1 = dsum2.copy()
            df2 = dsum2 if c["d2"] is None else dsum2 * c["d2"]
            grads[pre + "ff.W2"] += c["r"].reshape(-1, cfg.d_ff).T @ df2.reshape(-1, D)
            grads[pre + "ff.b2"] += df2.sum(axis=(0, 1))
            dr = df2 @ p[pre + "ff.W2"].T
            df1 = dr * (c["f1"] > 0)
            grads[pre + "ff.W1"] += c["x1"].reshape(-1, D).T @ df1.reshape(-1, cfg.d_ff)
            grads[pre + "ff.b1"] += df1.sum(axis=(0, 1))
            dx1 += df1 @ p[pre + "ff.W1"].T

            dsum1, dg1, db1 = _layer_norm_backward(dx1, c["ln1"])
            grads[pre + "ln1.g"] += dg1
            grads[pre + "ln1.b"] += db1
            dx_in = dsum1.copy()
            dout = dsum1 if c["d1"] is None else dsum1 * c["d1"]
            grads[pre + "attn.Wo"] += c["ctx_m"].reshape(-1, D).T @ dout.reshape(-1, D)
            grads[pre + "attn.bo"] += dout.sum(axis=(0, 1))
            dctx_m = dout @ p[pre + "attn.Wo"].T
            dctx = dctx_m.reshape(B, S, H, dh).transpose(0, 2, 1, 3)
            dattn_d = np.einsum("bhid,bhjd->bhij", dctx, c["vh"])
            dvh = np.einsum("bhij,bhid->bhjd", c["attn_d"], dctx)
            dattn = dattn_d if c["dmask_a"] is None else dattn_d * c["dmask_a"]
            a = c["attn"]
            dscores = a * (dattn - (dattn * a).sum(axis=-1, keepdims=True))
            dqh = np.einsum("bhij,bhjd->bhid", dscores, c["kh"]) / np.sqrt(dh)
            dkh = np.einsum("bhij,bhid->bhjd", dscores, c["qh"]) / np.sqrt(dh)
            dq = dqh.transpose(0, 2, 1, 3).reshape(B, S, D)
            dk = dkh.transpose(0, 2, 1, 3).reshape(B, S, D)
            dv = dvh.transpose(0, 2, 1, 3).reshape(B, S, D)
            x_in = c["x_in"]
            flat = x_in.reshape(-1, D)
            grads[pre + "attn.Wq"] += flat.T @ dq.reshape(-1, D)
            grads[pre + "attn.Wk"] += flat.T @ dk.reshape(-1, D)
            grads[pre + "attn.Wv"] += flat.T @ dv.reshape(-1, D)
            grads[pre + "attn.bq"] += dq.sum(axis=(0, 1))
            grads[pre + "attn.bv"] += dv.sum(axis=(0, 1))
            dx_in += dq @ p[pre + "attn.Wq"].T
            dx_in += dk @ p[pre + "attn.Wk"].T
            dx_in += dv @ p[pre + "attn.Wv"].T
            dx = dx_in

        demb = dx if cache["d0"] is None else dx * cache["d0"]
        flat_ids = cache["emb_ids"].ravel()
        np.add.at(grads["tok_emb"], flat_ids, demb.reshape(-1, D))
        return grads


# ---------------------------------------------------------------------------
# Checkpoints: versioned JSON header + named little-endian float32 tensors


def save_checkpoint(model: PlannerModel, path) -> None:
    names = sorted(model.params)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "axis_vocab": {a: list(v) for a, v in STYLE_VOCAB.items()},
        "token_vocab": list(model.vocab.tokens),
        "tensors": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    head = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(CHECKPOINT_VERSION.to_bytes(4, "little"))
        fh.write(len(head).to_bytes(8, "little"))
        fh.write(head)
        for n in names:
            arr = np.ascontiguousarray(model.params[n], dtype="<f4")
            fh.write(_struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(_struct.pack("<Q", dim))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> PlannerModel:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError("not a planner checkpoint")
        version = int.from_bytes(fh.read(4), "little")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        head_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(head_len).decode("utf-8"))
        config = PlannerConfig.from_dict(header["config"])
        vocab = TokenVocab(tokens=list(header["token_vocab"]))
        params = {}
        for entry in header["tensors"]:
            (ndim,) = _struct.unpack("<I", fh.read(4))
            shape = tuple(_struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            if list(shape) != list(entry["shape"]):
                raise ValueError(f"tensor {entry['name']}: shape mismatch")
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(4 * count)
            params[entry["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    return PlannerModel(config, vocab, params=params, dtype=np.float32)
