"""Attention-based encoder-decoder approximator.

Bidirectional GRU encoder over the digit tokens, additive attention, GRU
decoder and a single affine softmax layer over ``[s_i; c_i; E y_{i-1}]``.
Forward and backward passes are written out by hand in numpy (float64) and
operate on padded minibatches.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from . import decoding, language
from .catalog import RailcarCatalog
from .instances import Instance
from .oracle import SolutionDescription

log = logging.getLogger(__name__)

BLOCKS = (
    "E_src", "E_tgt",
    "enc_f_W", "enc_f_U", "enc_f_b",
    "enc_b_W", "enc_b_U", "enc_b_b",
    "init_W", "init_b",
    "att_W", "att_U", "att_v",
    "dec_W", "dec_U", "dec_b",
    "out_W", "out_b",
)


@dataclass(frozen=True)
class NmtDims:
    src_vocab: int
    tgt_vocab: int
    embed: int = 64
    hidden: int = 128
    attention: int = 0  # 0 means "same as hidden"

    def __post_init__(self) -> None:
        if not self.attention:
            object.__setattr__(self, "attention", self.hidden)

    @property
    def att(self) -> int:
        return self.attention

    def shapes(self) -> dict[str, tuple[int, ...]]:
        e, h, a = self.embed, self.hidden, self.att
        return {
            "E_src": (self.src_vocab, e), "E_tgt": (self.tgt_vocab, e),
            "enc_f_W": (e, 3 * h), "enc_f_U": (h, 3 * h), "enc_f_b": (3 * h,),
            "enc_b_W": (e, 3 * h), "enc_b_U": (h, 3 * h), "enc_b_b": (3 * h,),
            "init_W": (h, h), "init_b": (h,),
            "att_W": (h, a), "att_U": (2 * h, a), "att_v": (a,),
            "dec_W": (e + 2 * h, 3 * h), "dec_U": (h, 3 * h), "dec_b": (3 * h,),
            "out_W": (3 * h + e, self.tgt_vocab), "out_b": (self.tgt_vocab,),
        }

    def as_tuple(self) -> tuple[int, ...]:
        return (self.src_vocab, self.tgt_vocab, self.embed, self.hidden, self.att)


@dataclass
class NmtParams:
    dims: NmtDims
    blocks: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        shapes = self.dims.shapes()
        for name in BLOCKS:
            if self.blocks[name].shape != shapes[name]:
                raise ValueError(f"block {name} has shape {self.blocks[name].shape}, expected {shapes[name]}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]

    def copy(self) -> "NmtParams":
        return NmtParams(self.dims, {k: v.copy() for k, v in self.blocks.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.blocks.items()}


def init_params(dims: NmtDims, rng: np.random.Generator) -> NmtParams:
    blocks = {}
    for name, shape in dims.shapes().items():
        if name.endswith("_b") or name == "init_b" or name == "out_b":
            blocks[name] = np.zeros(shape)
        elif name.endswith("_U") and name != "att_U":
            # orthogonal recurrent blocks, one per gate
            h = shape[0]
            gates = [np.linalg.qr(rng.standard_normal((h, h)))[0] for _ in range(3)]
            blocks[name] = np.concatenate(gates, axis=1)
        elif name.startswith("E_"):
            blocks[name] = rng.normal(0.0, 0.1, size=shape)
        else:
            fan_in = shape[0]
            blocks[name] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
    return NmtParams(dims, blocks)


def dims_for(catalog: RailcarCatalog, embed: int = 64, hidden: int = 128, attention: int = 0) -> NmtDims:
    return NmtDims(language.source_vocab(catalog).size, language.target_vocab(catalog).size, embed, hidden, attention)


# ---------------------------------------------------------------------------
# building blocks


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _gru(xp, h, U, b):
    """One GRU step; ``xp`` is the input already projected by W (…, 3H)."""
    H = h.shape[-1]
    hu = h @ U[:, : 2 * H]
    z = _sigmoid(xp[..., :H] + hu[..., :H] + b[:H])
    r = _sigmoid(xp[..., H: 2 * H] + hu[..., H:] + b[H: 2 * H])
    rh = r * h
    n = np.tanh(xp[..., 2 * H:] + rh @ U[:, 2 * H:] + b[2 * H:])
    return z * n + (1.0 - z) * h, (h, z, r, rh, n)


def _gru_back(dh_new, cache, U, dU):
    """Returns (d h_prev, d pre-activations); accumulates into dU."""
    h, z, r, rh, n = cache
    H = h.shape[-1]
    dn = dh_new * z
    dz = dh_new * (n - h)
    dh = dh_new * (1.0 - z)
    dan = dn * (1.0 - n * n)
    drh = dan @ U[:, 2 * H:].T
    dh += drh * r
    dzr = np.concatenate([dz * z * (1.0 - z), drh * h * r * (1.0 - r)], axis=-1)
    dU[:, : 2 * H] += h.T @ dzr
    dU[:, 2 * H:] += rh.T @ dan
    dh += dzr @ U[:, : 2 * H].T
    return dh, np.concatenate([dzr, dan], axis=-1)


def _softmax(x, axis=-1):
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def encode(params: NmtParams, source: Sequence[int]) -> np.ndarray:
    """Annotations (T, 2H) for one source phrase."""
    src = np.asarray(source, dtype=np.int64)[None, :]
    _check_ids(src, params.dims.src_vocab, "source")
    H, _, _ = _encode(params, src, None)
    return H[0]


def attend(params: NmtParams, s_prev: np.ndarray, annotations: np.ndarray):
    """Context vector and alignment weights for one decoder state."""
    UH = annotations @ params["att_U"]
    a = np.tanh(s_prev @ params["att_W"] + UH)
    alpha = _softmax(a @ params["att_v"])
    return alpha @ annotations, alpha


def decode_step(params: NmtParams, s_prev: np.ndarray, prev_token: int, context: np.ndarray):
    """New decoder state and logits; ``prev_token`` < 0 stands for the start symbol."""
    e = params["E_tgt"][prev_token] if prev_token >= 0 else np.zeros(params.dims.embed)
    x = np.concatenate([e, context])
    s, _ = _gru(x @ params["dec_W"], s_prev, params["dec_U"], params["dec_b"])
    o = np.concatenate([s, context, e])
    return s, o @ params["out_W"] + params["out_b"]


def _check_ids(ids, size, what):
    valid = ids[ids >= 0]
    if valid.size and (valid.max() >= size):
        raise ValueError(f"{what} token id {int(valid.max())} outside vocabulary of size {size}")


def _encode(params, src, drop):
    """Batched encoder. ``drop`` is an optional multiplicative mask on source embeddings."""
    B, T = src.shape
    h_dim = params.dims.hidden
    X = params["E_src"][src]
    if drop is not None:
        X = X * drop
    XPf = X @ params["enc_f_W"]
    XPb = X @ params["enc_b_W"]
    hf = np.zeros((B, T, h_dim))
    hb = np.zeros((B, T, h_dim))
    cf, cb = [None] * T, [None] * T
    h = np.zeros((B, h_dim))
    for t in range(T):
        h, cf[t] = _gru(XPf[:, t], h, params["enc_f_U"], params["enc_f_b"])
        hf[:, t] = h
    h = np.zeros((B, h_dim))
    for t in range(T - 1, -1, -1):
        h, cb[t] = _gru(XPb[:, t], h, params["enc_b_U"], params["enc_b_b"])
        hb[:, t] = h
    H = np.concatenate([hf, hb], axis=-1)
    return H, X, (cf, cb)


# ---------------------------------------------------------------------------
# examples, batches and the loss


@dataclass(frozen=True)
class Example:
    source: tuple[int, ...]
    target: tuple[int, ...]
    masks: np.ndarray  # (len(target), V) feasibility at each step


def target_masks(source: Sequence[int], target: Sequence[int], catalog: RailcarCatalog, mask_on: bool = True) -> np.ndarray:
    V = catalog.n_patterns + 2
    if not mask_on:
        return np.ones((len(target), V), dtype=bool)
    x_a = language.decode_input(source, catalog)
    max_len = decoding.default_max_len(x_a, catalog)
    state = decoding.init_state(x_a)
    out = np.zeros((len(target), V), dtype=bool)
    for i, tok in enumerate(target):
        m = decoding.mask(state, catalog, max_len)
        if not m[tok]:
            raise ValueError(f"target token {tok} at step {i} is infeasible for its source")
        out[i] = m
        state = decoding.advance(state, tok, catalog, max_len)
    return out


def prepare(pairs: Iterable[tuple[Sequence[int], Sequence[int]]], catalog: RailcarCatalog, mask_on: bool = True) -> list[Example]:
    return [Example(tuple(s), tuple(t), target_masks(s, t, catalog, mask_on)) for s, t in pairs]


@dataclass(frozen=True)
class Batch:
    src: np.ndarray  # (B, Ts)
    tgt: np.ndarray  # (B, To), -1 padded
    masks: np.ndarray  # (B, To, V)

    @property
    def size(self) -> int:
        return self.src.shape[0]


def make_batch(examples: Sequence[Example]) -> Batch:
    if not examples:
        raise ValueError("empty batch")
    B = len(examples)
    Ts = len(examples[0].source)
    To = max(len(e.target) for e in examples)
    V = examples[0].masks.shape[1]
    src = np.array([e.source for e in examples], dtype=np.int64).reshape(B, Ts)
    tgt = np.full((B, To), -1, dtype=np.int64)
    masks = np.ones((B, To, V), dtype=bool)
    for b, e in enumerate(examples):
        tgt[b, : len(e.target)] = e.target
        masks[b, : len(e.target)] = e.masks
    return Batch(src, tgt, masks)


@dataclass
class Dropout:
    src: np.ndarray  # (B, Ts, E)
    tgt: np.ndarray  # (B, To, E)
    out: np.ndarray  # (B, To, 3H+E)

    @classmethod
    def sample(cls, rate: float, batch: Batch, dims: NmtDims, rng: np.random.Generator) -> "Dropout | None":
        if rate <= 0:
            return None
        keep = 1.0 - rate
        B, Ts = batch.src.shape
        To = batch.tgt.shape[1]

        def m(*shape):
            return (rng.random(shape) < keep) / keep

        return cls(m(B, Ts, dims.embed), m(B, To, dims.embed), m(B, To, 3 * dims.hidden + dims.embed))


def _forward(params: NmtParams, batch: Batch, drop: Dropout | None, keep_cache: bool):
    """Teacher-forced pass; returns per-example log-probabilities and a cache."""
    d = params.dims
    hdim, E = d.hidden, d.embed
    src, tgt, masks = batch.src, batch.tgt, batch.masks
    B, To = tgt.shape
    H, Xs, enc_cache = _encode(params, src, drop.src if drop else None)
    UH = H @ params["att_U"]
    hb0 = H[:, 0, hdim:]
    s = np.tanh(hb0 @ params["init_W"] + params["init_b"])
    s0 = s

    prev = np.concatenate([np.full((B, 1), -1), tgt[:, :-1]], axis=1)
    Et = params["E_tgt"][np.maximum(prev, 0)] * (prev >= 0)[..., None]
    if drop is not None:
        Et = Et * drop.tgt
    valid = tgt >= 0
    logp = np.zeros(B)
    steps = []
    for i in range(To):
        e = Et[:, i]
        q = s @ params["att_W"]
        A = np.tanh(q[:, None, :] + UH)
        alpha = _softmax(A @ params["att_v"])
        c = np.einsum("bt,btk->bk", alpha, H)
        xp = e @ params["dec_W"][:E] + c @ params["dec_W"][E:]
        s_new, gcache = _gru(xp, s, params["dec_U"], params["dec_b"])
        o = np.concatenate([s_new, c, e], axis=1)
        if drop is not None:
            o = o * drop.out[:, i]
        logits = o @ params["out_W"] + params["out_b"]
        lp = decoding.masked_log_softmax(logits, masks[:, i])
        tok = np.maximum(tgt[:, i], 0)
        picked = lp[np.arange(B), tok]
        if not np.all(np.isfinite(picked[valid[:, i]])):
            raise ValueError(f"observed token masked at step {i}")
        logp += np.where(valid[:, i], picked, 0.0)
        if keep_cache:
            steps.append((s, e, A, alpha, c, gcache, o, lp))
        s = s_new
    cache = (H, Xs, enc_cache, UH, s0, hb0, prev, steps) if keep_cache else None
    return logp, cache


def sequence_logprob(params: NmtParams, source, target, catalog: RailcarCatalog, mask_on: bool = True) -> float:
    ex = Example(tuple(source), tuple(target), target_masks(source, target, catalog, mask_on))
    logp, _ = _forward(params, make_batch([ex]), None, False)
    return float(logp[0])


def batch_loss(params: NmtParams, examples: Sequence[Example], batch_size: int = 256) -> float:
    """Mean negative log-likelihood over examples, no dropout."""
    total = 0.0
    for k in range(0, len(examples), batch_size):
        logp, _ = _forward(params, make_batch(examples[k:k + batch_size]), None, False)
        total -= logp.sum()
    return total / len(examples)


def loss_and_gradients(params: NmtParams, batch: Batch, drop: Dropout | None = None):
    """Mean negative log-probability over the batch and its exact gradient."""
    if batch.size == 0:
        raise ValueError("empty batch")
    d = params.dims
    hdim, E = d.hidden, d.embed
    B, To = batch.tgt.shape
    logp, cache = _forward(params, batch, drop, True)
    H, Xs, (cf, cb), UH, s0, hb0, prev, steps = cache
    g = params.zeros_like()
    dH = np.zeros_like(H)
    dUH = np.zeros_like(UH)
    dEt = np.zeros((B, To, E))
    ds = np.zeros((B, hdim))
    valid = batch.tgt >= 0
    W_o = params["out_W"]
    dec_W = params["dec_W"]
    v = params["att_v"]

    for i in range(To - 1, -1, -1):
        s_prev, e, A, alpha, c, gcache, o, lp = steps[i]
        dlog = np.exp(lp)
        dlog[np.arange(B), np.maximum(batch.tgt[:, i], 0)] -= 1.0
        dlog *= valid[:, i, None] / B
        g["out_W"] += o.T @ dlog
        g["out_b"] += dlog.sum(0)
        do = dlog @ W_o.T
        if drop is not None:
            do *= drop.out[:, i]
        ds += do[:, :hdim]
        dc = do[:, hdim: 3 * hdim]
        de = do[:, 3 * hdim:]
        ds_prev, dxp = _gru_back(ds, gcache, params["dec_U"], g["dec_U"])
        g["dec_b"] += dxp.sum(0)
        g["dec_W"][:E] += e.T @ dxp
        g["dec_W"][E:] += c.T @ dxp
        de += dxp @ dec_W[:E].T
        dc += dxp @ dec_W[E:].T
        dEt[:, i] = de
        # attention
        dH += alpha[:, :, None] * dc[:, None, :]
        dalpha = np.einsum("bk,btk->bt", dc, H)
        dscore = alpha * (dalpha - (alpha * dalpha).sum(1, keepdims=True))
        g["att_v"] += np.einsum("bt,bta->a", dscore, A)
        dpre = dscore[:, :, None] * v * (1.0 - A * A)
        dUH += dpre
        dq = dpre.sum(1)
        g["att_W"] += s_prev.T @ dq
        ds = ds_prev + dq @ params["att_W"].T

    # initial state
    dpre0 = ds * (1.0 - s0 * s0)
    g["init_W"] += hb0.T @ dpre0
    g["init_b"] += dpre0.sum(0)
    dH += np.einsum("bta,ka->btk", dUH, params["att_U"])
    g["att_U"] += np.einsum("btk,bta->ka", H, dUH)
    dH[:, 0, hdim:] += dpre0 @ params["init_W"].T

    # target embeddings
    if drop is not None:
        dEt *= drop.tgt
    has = prev >= 0
    np.add.at(g["E_tgt"], prev[has], dEt[has])

    # encoder
    T = H.shape[1]
    dXPf = np.zeros((B, T, 3 * hdim))
    dXPb = np.zeros((B, T, 3 * hdim))
    dh = np.zeros((B, hdim))
    for t in range(T - 1, -1, -1):
        dh, dXPf[:, t] = _gru_back(dh + dH[:, t, :hdim], cf[t], params["enc_f_U"], g["enc_f_U"])
    dh = np.zeros((B, hdim))
    for t in range(T):
        dh, dXPb[:, t] = _gru_back(dh + dH[:, t, hdim:], cb[t], params["enc_b_U"], g["enc_b_U"])
    g["enc_f_b"] += dXPf.sum((0, 1))
    g["enc_b_b"] += dXPb.sum((0, 1))
    g["enc_f_W"] += np.einsum("bte,btk->ek", Xs, dXPf)
    g["enc_b_W"] += np.einsum("bte,btk->ek", Xs, dXPb)
    dX = dXPf @ params["enc_f_W"].T + dXPb @ params["enc_b_W"].T
    if drop is not None:
        dX *= drop.src
    np.add.at(g["E_src"], batch.src, dX)

    for name, arr in g.items():
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite gradient in block {name}")
    return float(-logp.mean()), g


def gradients(params: NmtParams, examples: Sequence[Example], drop: Dropout | None = None) -> dict[str, np.ndarray]:
    if len(examples) == 0:
        raise ValueError("empty minibatch")
    return loss_and_gradients(params, make_batch(examples), drop)[1]


# ---------------------------------------------------------------------------
# optimisers


class Adadelta:
    def __init__(self, params: dict[str, np.ndarray], rho: float = 0.95, eps: float = 1e-6):
        self.rho, self.eps = rho, eps
        self.g2 = {k: np.zeros_like(v) for k, v in params.items()}
        self.d2 = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        rho, eps = self.rho, self.eps
        for k, g in grads.items():
            self.g2[k] *= rho
            self.g2[k] += (1 - rho) * g * g
            dx = -np.sqrt(self.d2[k] + eps) / np.sqrt(self.g2[k] + eps) * g
            self.d2[k] *= rho
            self.d2[k] += (1 - rho) * dx * dx
            params[k] += dx

    def state(self) -> dict[str, np.ndarray]:
        return {**{f"g2/{k}": v for k, v in self.g2.items()}, **{f"d2/{k}": v for k, v in self.d2.items()}}

    def load(self, st) -> None:
        for k in self.g2:
            self.g2[k] = np.array(st[f"g2/{k}"])
            self.d2[k] = np.array(st[f"d2/{k}"])


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] *= self.b1
            self.m[k] += (1 - self.b1) * g
            self.v[k] *= self.b2
            self.v[k] += (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state(self):
        return {"t": np.array(self.t), **{f"m/{k}": v for k, v in self.m.items()}, **{f"v/{k}": v for k, v in self.v.items()}}

    def load(self, st) -> None:
        self.t = int(st["t"])
        for k in self.m:
            self.m[k] = np.array(st[f"m/{k}"])
            self.v[k] = np.array(st[f"v/{k}"])


def make_optimizer(name: str, params: dict[str, np.ndarray], lr: float | None = None):
    if name == "adadelta":
        return Adadelta(params)
    if name == "adam":
        return Adam(params, lr=lr if lr is not None else 1e-3)
    raise ValueError(f"unknown optimizer {name!r}")


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    batch_size: int = 64
    dropout: float = 0.2
    patience: int = 1
    max_epochs: int = 30
    seed: int = 0
    width: int = 5
    embed: int = 64
    hidden: int = 128
    lr: float | None = None
    clip: float = 5.0
    mask: bool = True

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("minibatch size must be at least 1")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout rate must lie in [0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_loss: float
    seconds: float

    def line(self) -> str:
        return f"epoch={self.epoch} train_loss={self.train_loss:.6f} valid_loss={self.valid_loss:.6f} seconds={self.seconds:.3f}"


@dataclass
class TrainState:
    """Everything needed to continue training bit-for-bit."""

    params: NmtParams
    optimizer: object
    epoch: int = 0
    best: NmtParams | None = None
    best_loss: float = float("inf")
    bad_epochs: int = 0
    history: list[EpochRecord] = field(default_factory=list)


def new_state(config: TrainConfig, dims: NmtDims) -> TrainState:
    params = init_params(dims, np.random.default_rng([config.seed, 0]))
    return TrainState(params, make_optimizer(config.optimizer, params.blocks, config.lr))


def run_epoch(state: TrainState, train_ex: Sequence[Example], valid_ex: Sequence[Example], config: TrainConfig) -> EpochRecord:
    t0 = time.perf_counter()
    epoch = state.epoch + 1
    rng = np.random.default_rng([config.seed, epoch])
    order = rng.permutation(len(train_ex))
    total, seen = 0.0, 0
    for k in range(0, len(order), config.batch_size):
        batch = make_batch([train_ex[i] for i in order[k:k + config.batch_size]])
        drop = Dropout.sample(config.dropout, batch, state.params.dims, rng)
        loss, grads = loss_and_gradients(state.params, batch, drop)
        clip_gradients(grads, config.clip)
        state.optimizer.step(state.params.blocks, grads)
        total += loss * batch.size
        seen += batch.size
    valid = batch_loss(state.params, valid_ex)
    rec = EpochRecord(epoch, total / max(seen, 1), valid, time.perf_counter() - t0)
    state.epoch = epoch
    state.history.append(rec)
    if valid < state.best_loss:
        state.best_loss = valid
        state.best = state.params.copy()
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
    return rec


def train(
    train_pairs,
    valid_pairs,
    catalog: RailcarCatalog,
    config: TrainConfig = TrainConfig(),
    state: TrainState | None = None,
    on_epoch=None,
) -> tuple[NmtParams, list[EpochRecord]]:
    """Minibatch training with early stopping on the validation loss.

    Returns the best-validation parameters and the per-epoch history.
    ``on_epoch(state, record)`` is called after every epoch.
    """
    train_ex = train_pairs if _is_examples(train_pairs) else prepare(train_pairs, catalog, config.mask)
    valid_ex = valid_pairs if _is_examples(valid_pairs) else prepare(valid_pairs, catalog, config.mask)
    if not train_ex or not valid_ex:
        raise ValueError("training and validation sets must be nonempty")
    dims = dims_for(catalog, config.embed, config.hidden)
    if state is None:
        state = new_state(config, dims)
    elif state.params.dims != dims:
        raise ValueError("checkpoint dimensions do not match catalog and config")
    while state.epoch < config.max_epochs and state.bad_epochs < config.patience:
        rec = run_epoch(state, train_ex, valid_ex, config)
        log.info(rec.line())
        if on_epoch is not None:
            on_epoch(state, rec)
    return state.best if state.best is not None else state.params, state.history


def _is_examples(items) -> bool:
    return len(items) > 0 and isinstance(items[0], Example)


# ---------------------------------------------------------------------------
# inference


class NmtScorer:
    """Beam-search scorer with input projections folded into lookup tables.

    Both encoder directions run as one block-diagonal recurrence, and every
    product of the context vector is folded into a per-source table.
    """

    def __init__(self, params: NmtParams, catalog: RailcarCatalog):
        self.params = params
        self.catalog = catalog
        p = params
        E, h = params.dims.embed, params.dims.hidden
        self.h = h
        # encoder: gate columns laid out as [z_f z_b r_f r_b n_f n_b]
        Wf = p["E_src"] @ p["enc_f_W"]
        Wb = p["E_src"] @ p["enc_b_W"]
        V = Wf.shape[0]
        self.src_f = np.zeros((V, 6 * h))
        self.src_b = np.zeros((V, 6 * h))
        for g in range(3):
            self.src_f[:, 2 * g * h: (2 * g + 1) * h] = Wf[:, g * h: (g + 1) * h] + p["enc_f_b"][g * h: (g + 1) * h]
            self.src_b[:, (2 * g + 1) * h: (2 * g + 2) * h] = Wb[:, g * h: (g + 1) * h] + p["enc_b_b"][g * h: (g + 1) * h]
        self.src_zr_f, self.src_n_f = np.ascontiguousarray(self.src_f[:, : 4 * h]), np.ascontiguousarray(self.src_f[:, 4 * h:])
        self.src_zr_b, self.src_n_b = np.ascontiguousarray(self.src_b[:, : 4 * h]), np.ascontiguousarray(self.src_b[:, 4 * h:])
        self.enc_zr = np.zeros((2 * h, 4 * h))
        self.enc_n = np.zeros((2 * h, 2 * h))
        for d, U in enumerate((p["enc_f_U"], p["enc_b_U"])):
            rows = slice(d * h, (d + 1) * h)
            self.enc_zr[rows, d * h: (d + 1) * h] = U[:, :h]
            self.enc_zr[rows, (2 + d) * h: (3 + d) * h] = U[:, h: 2 * h]
            self.enc_n[rows, d * h: (d + 1) * h] = U[:, 2 * h:]
        zero = np.zeros((1, E))
        Et = np.concatenate([p["E_tgt"], zero])  # row -1 is the start symbol
        self.tgt_in = Et @ p["dec_W"][:E] + p["dec_b"]
        self.tgt_out = Et @ p["out_W"][3 * h:] + p["out_b"]
        self.ctx_W = np.concatenate([p["dec_W"][E:], p["out_W"][h: 3 * h]], axis=1)
        self.dec_zr = p["dec_U"][:, : 2 * h]
        self.dec_n = p["dec_U"][:, 2 * h:]
        self.out_Ws = p["out_W"][:h]
        self.att_W = p["att_W"]
        self.att_v = p["att_v"]

    def start(self, x_a: Instance):
        p = self.params
        src = np.asarray(language.encode_input(x_a, self.catalog))
        T, h = len(src), self.h
        xzr = self.src_zr_f[src] + self.src_zr_b[src[::-1]]
        xn = self.src_n_f[src] + self.src_n_b[src[::-1]]
        k = 2 * h
        # row t + 1 holds the state after t + 1 tokens; updates run in place
        out = np.zeros((T + 1, k))
        zr, rs = np.empty(2 * k), np.empty(k)
        for t in range(T):
            s = out[t]
            np.dot(s, self.enc_zr, out=zr)
            zr += xzr[t]
            expit(zr, out=zr)
            np.multiply(zr[k:], s, out=rs)
            n = np.dot(rs, self.enc_n)
            n += xn[t]
            np.tanh(n, out=n)
            n -= s
            n *= zr[:k]
            n += s
            out[t + 1] = n
        out = out[1:]
        H = np.concatenate([out[:, :h], out[::-1, h:]], axis=1)
        s0 = np.tanh(H[0, h:] @ p["init_W"] + p["init_b"])
        return (s0[None, :], H @ p["att_U"], H @ self.ctx_W)

    def step(self, state, prev):
        s, UH, HC = state
        h = self.h
        e = np.tanh((s @ self.att_W)[:, None, :] + UH) @ self.att_v
        e = np.exp(e - e.max(axis=1, keepdims=True))
        cp = (e @ HC) / e.sum(axis=1, keepdims=True)
        xp = self.tgt_in[prev] + cp[:, : 3 * h]
        zr = expit(xp[:, : 2 * h] + s @ self.dec_zr)
        n = np.tanh(xp[:, 2 * h:] + (zr[:, h:] * s) @ self.dec_n)
        s_new = s + zr[:, :h] * (n - s)
        logits = s_new @ self.out_Ws + cp[:, 3 * h:] + self.tgt_out[prev]
        return (s_new, UH, HC), logits

    def select(self, state, rows):
        s, UH, HC = state
        return (s[rows], UH, HC)


class NmtPredictor:
    def __init__(self, params: NmtParams, catalog: RailcarCatalog, width: int = 5):
        self.scorer = NmtScorer(params, catalog)
        self.catalog = catalog
        self.width = width

    def __call__(self, x_a: Instance) -> SolutionDescription:
        toks = decoding.beam_search(self.scorer, x_a.first_stage, self.catalog, self.width)
        return language.decode_output(toks, self.catalog)


def predict(params: NmtParams, x_a: Instance, catalog: RailcarCatalog, width: int = 5) -> SolutionDescription:
    return NmtPredictor(params, catalog, width)(x_a)
