"""Feedforward next-loading classifier.

Each training pair is expanded into one example per output token. The
features are the railcar counts, the container counts and how often each
output token has been committed so far; the label is the next token. The
network sees ``log1p`` of these counts.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import decoding, language
from .catalog import RailcarCatalog
from .instances import Instance
from .nmt import EpochRecord, clip_gradients, make_optimizer
from .oracle import SolutionDescription

log = logging.getLogger(__name__)


def feature_size(catalog: RailcarCatalog) -> int:
    return catalog.n_types + catalog.n_lengths + catalog.n_patterns + 2


@dataclass(frozen=True)
class Expanded:
    features: np.ndarray  # (N, F) integer counts
    labels: np.ndarray  # (N,)
    masks: np.ndarray  # (N, V) feasibility of the label position

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "Expanded":
        return Expanded(self.features[idx], self.labels[idx], self.masks[idx])


def transform_dataset(pairs, catalog: RailcarCatalog, mask_on: bool = True) -> Expanded:
    """One example per target token: the counts committed before it, labelled with it."""
    J, L = catalog.n_types, catalog.n_lengths
    V = catalog.n_patterns + 2
    feats, labels, masks = [], [], []
    for src, tgt in pairs:
        x_a = language.decode_input(src, catalog)
        language.decode_output(tgt, catalog)  # syntax check
        max_len = decoding.default_max_len(x_a, catalog)
        state = decoding.init_state(x_a)
        committed = np.zeros(V, dtype=np.int64)
        head = np.array(x_a.railcars + x_a.containers, dtype=np.int64)
        for tok in tgt:
            m = decoding.mask(state, catalog, max_len)
            if not m[tok]:
                raise ValueError(f"target token {tok} is infeasible for its source")
            feats.append(np.concatenate([head, committed]))
            labels.append(tok)
            masks.append(m if mask_on else np.ones(V, dtype=bool))
            committed[tok] += 1
            state = decoding.advance(state, tok, catalog, max_len)
    F = J + L + V
    return Expanded(
        np.array(feats, dtype=np.int64).reshape(-1, F),
        np.array(labels, dtype=np.int64),
        np.array(masks, dtype=bool).reshape(-1, V),
    )


def write_expanded(ex: Expanded, path: str | Path, catalog: RailcarCatalog) -> None:
    vocab = language.target_vocab(catalog)
    with open(path, "w", newline="\n") as fh:
        for f, y in zip(ex.features, ex.labels):
            fh.write(" ".join(str(int(v)) for v in f) + "\t" + vocab.tokens[y] + "\n")


def read_expanded(path: str | Path, catalog: RailcarCatalog) -> tuple[np.ndarray, np.ndarray]:
    vocab = language.target_vocab(catalog)
    feats, labels = [], []
    for line in Path(path).read_text().splitlines():
        f, y = line.split("\t")
        feats.append([int(v) for v in f.split()])
        labels.append(vocab.id(y))
    return np.array(feats, dtype=np.int64).reshape(-1, feature_size(catalog)), np.array(labels, dtype=np.int64)


# ---------------------------------------------------------------------------
# the network


@dataclass
class BaselineParams:
    sizes: tuple[int, ...]  # input, hidden..., output
    blocks: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        for i, (a, b) in enumerate(zip(self.sizes, self.sizes[1:])):
            if self.blocks[f"W{i}"].shape != (a, b) or self.blocks[f"b{i}"].shape != (b,):
                raise ValueError(f"layer {i} has inconsistent shapes")

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def names(self) -> list[str]:
        return [n for i in range(self.n_layers) for n in (f"W{i}", f"b{i}")]

    def copy(self) -> "BaselineParams":
        return BaselineParams(self.sizes, {k: v.copy() for k, v in self.blocks.items()})


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> BaselineParams:
    blocks = {}
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        blocks[f"W{i}"] = rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b))
        blocks[f"b{i}"] = np.zeros(b)
    return BaselineParams(tuple(sizes), blocks)


def sizes_for(catalog: RailcarCatalog, hidden: Sequence[int] = (256, 256)) -> tuple[int, ...]:
    return (feature_size(catalog), *hidden, catalog.n_patterns + 2)


def _logits(params: BaselineParams, X: np.ndarray, drops=None):
    acts = [X]
    a = X
    for i in range(params.n_layers):
        z = a @ params.blocks[f"W{i}"] + params.blocks[f"b{i}"]
        if i < params.n_layers - 1:
            a = np.maximum(z, 0.0)
            if drops is not None:
                a = a * drops[i]
            acts.append(a)
        else:
            return z, acts


def mlp_forward(params: BaselineParams, features) -> np.ndarray:
    """Softmax distribution over the output vocabulary; masking is left to the caller."""
    x = np.log1p(np.asarray(features, dtype=float))
    if x.shape[-1] != params.sizes[0]:
        raise ValueError(f"expected {params.sizes[0]} features, got {x.shape[-1]}")
    z, _ = _logits(params, x.reshape(-1, params.sizes[0]))
    z = np.exp(z - z.max(axis=1, keepdims=True))
    p = z / z.sum(axis=1, keepdims=True)
    return p.reshape(*x.shape[:-1], -1)


def loss_and_gradients(params: BaselineParams, ex: Expanded, drops=None):
    """Mean masked cross-entropy over the examples and its gradient."""
    if len(ex) == 0:
        raise ValueError("empty batch")
    X = np.log1p(ex.features.astype(float))
    z, acts = _logits(params, X, drops)
    lp = decoding.masked_log_softmax(z, ex.masks)
    N = len(ex)
    picked = lp[np.arange(N), ex.labels]
    if not np.all(np.isfinite(picked)):
        raise ValueError("a label is masked out")
    dz = np.exp(lp)
    dz[np.arange(N), ex.labels] -= 1.0
    dz /= N
    g = {}
    for i in range(params.n_layers - 1, -1, -1):
        a = acts[i]
        g[f"W{i}"] = a.T @ dz
        g[f"b{i}"] = dz.sum(0)
        if i > 0:
            da = dz @ params.blocks[f"W{i}"].T
            if drops is not None:
                da = da * drops[i - 1]
            dz = da * (acts[i] > 0)
    for name, arr in g.items():
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite gradient in block {name}")
    return float(-picked.mean()), g


def dataset_loss(params: BaselineParams, ex: Expanded, batch_size: int = 4096) -> float:
    total = 0.0
    for k in range(0, len(ex), batch_size):
        part = ex.take(slice(k, k + batch_size))
        total += loss_and_gradients(params, part)[0] * len(part)
    return total / len(ex)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class BaselineConfig:
    hidden: tuple[int, ...] = (256, 256)
    optimizer: str = "adam"
    batch_size: int = 64
    dropout: float = 0.2
    patience: int = 1
    max_epochs: int = 30
    seed: int = 0
    width: int = 5
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
class BaselineTrainState:
    params: BaselineParams
    optimizer: object
    epoch: int = 0
    best: BaselineParams | None = None
    best_loss: float = float("inf")
    bad_epochs: int = 0
    history: list[EpochRecord] = field(default_factory=list)


def new_state(config: BaselineConfig, catalog: RailcarCatalog) -> BaselineTrainState:
    params = init_params(sizes_for(catalog, config.hidden), np.random.default_rng([config.seed, 0]))
    return BaselineTrainState(params, make_optimizer(config.optimizer, params.blocks, config.lr))


def run_epoch(state: BaselineTrainState, train_ex: Expanded, valid_ex: Expanded, config: BaselineConfig) -> EpochRecord:
    t0 = time.perf_counter()
    epoch = state.epoch + 1
    rng = np.random.default_rng([config.seed, epoch])
    order = rng.permutation(len(train_ex))
    keep = 1.0 - config.dropout
    total = 0.0
    for k in range(0, len(order), config.batch_size):
        part = train_ex.take(order[k:k + config.batch_size])
        drops = None
        if config.dropout > 0:
            drops = [(rng.random((len(part), h)) < keep) / keep for h in state.params.sizes[1:-1]]
        loss, grads = loss_and_gradients(state.params, part, drops)
        clip_gradients(grads, config.clip)
        state.optimizer.step(state.params.blocks, grads)
        total += loss * len(part)
    valid = dataset_loss(state.params, valid_ex)
    rec = EpochRecord(epoch, total / len(train_ex), valid, time.perf_counter() - t0)
    state.epoch = epoch
    state.history.append(rec)
    if valid < state.best_loss:
        state.best_loss = valid
        state.best = state.params.copy()
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
    return rec


def train_baseline(
    train_data,
    valid_data,
    catalog: RailcarCatalog,
    config: BaselineConfig = BaselineConfig(),
    state: BaselineTrainState | None = None,
    on_epoch=None,
) -> tuple[BaselineParams, list[EpochRecord]]:
    """Train on expanded examples (or raw pairs, expanded here) with early stopping."""
    train_ex = train_data if isinstance(train_data, Expanded) else transform_dataset(train_data, catalog, config.mask)
    valid_ex = valid_data if isinstance(valid_data, Expanded) else transform_dataset(valid_data, catalog, config.mask)
    if len(train_ex) == 0 or len(valid_ex) == 0:
        raise ValueError("training and validation sets must be nonempty")
    if state is None:
        state = new_state(config, catalog)
    elif state.params.sizes != sizes_for(catalog, config.hidden):
        raise ValueError("checkpoint layer sizes do not match catalog and config")
    while state.epoch < config.max_epochs and state.bad_epochs < config.patience:
        rec = run_epoch(state, train_ex, valid_ex, config)
        log.info(rec.line())
        if on_epoch is not None:
            on_epoch(state, rec)
    return state.best if state.best is not None else state.params, state.history


# ---------------------------------------------------------------------------
# generation


class BaselineScorer:
    """Scorer whose state is the committed-count vector of each hypothesis."""

    def __init__(self, params: BaselineParams, catalog: RailcarCatalog):
        self.params = params
        self.catalog = catalog
        self.V = catalog.n_patterns + 2

    def start(self, x_a: Instance):
        head = np.log1p(np.array(x_a.railcars + x_a.containers, dtype=float))
        return (head, np.zeros((1, self.V), dtype=np.int64))

    def step(self, state, prev):
        head, committed = state
        committed = committed.copy()
        rows = np.flatnonzero(prev >= 0)
        committed[rows, prev[rows]] += 1
        X = np.concatenate([np.broadcast_to(head, (len(committed), len(head))), np.log1p(committed)], axis=1)
        z, _ = _logits(self.params, X)
        return (head, committed), z

    def select(self, state, rows):
        head, committed = state
        return (head, committed[rows])


class BaselinePredictor:
    def __init__(self, params: BaselineParams, catalog: RailcarCatalog, width: int = 5):
        self.scorer = BaselineScorer(params, catalog)
        self.catalog = catalog
        self.width = width

    def __call__(self, x_a: Instance) -> SolutionDescription:
        toks = decoding.beam_search(self.scorer, x_a.first_stage, self.catalog, self.width)
        return language.decode_output(toks, self.catalog)


def generate(params: BaselineParams, x_a: Instance, catalog: RailcarCatalog, width: int = 5) -> SolutionDescription:
    return BaselinePredictor(params, catalog, width)(x_a)
