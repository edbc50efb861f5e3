"""Feasibility state machine, probability mask and masked beam search.

The mask enforces the output rules at every step: a loading token needs an
available railcar of its type and enough remaining containers of each
length; BLANK only in first position and only followed by EOS; EOS never in
first position and decoding stops at the first EOS.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from .catalog import RailcarCatalog
from .instances import Instance
from .language import blank_id, eos_id


class MaskError(RuntimeError):
    pass


@dataclass(frozen=True)
class DecodeState:
    railcars: tuple[int, ...]
    containers: tuple[int, ...]
    position: int = 0
    last: int | None = None
    terminal: bool = False


@dataclass(frozen=True)
class _Tables:
    types: np.ndarray  # (P,) railcar type of each pattern
    counts: np.ndarray  # (P, L)
    eos: int
    blank: int
    size: int


@lru_cache(maxsize=32)
def tables(catalog: RailcarCatalog) -> _Tables:
    P = catalog.n_patterns
    types = np.array([p.railcar_type for p in catalog.patterns], dtype=np.int64)
    counts = np.array([p.counts for p in catalog.patterns], dtype=np.int64).reshape(P, catalog.n_lengths)
    return _Tables(types, counts, eos_id(catalog), blank_id(catalog), P + 2)


def init_state(x_a: Instance) -> DecodeState:
    if any(c < 0 for c in x_a.railcars) or any(c < 0 for c in x_a.containers):
        raise ValueError("availabilities must be nonnegative")
    return DecodeState(tuple(x_a.railcars), tuple(x_a.containers))


def mask(state: DecodeState, catalog: RailcarCatalog, max_len: int | None = None) -> np.ndarray:
    """Boolean feasibility vector over the output vocabulary.

    With ``max_len`` set, the last admissible position allows only EOS.
    """
    if state.terminal:
        raise MaskError("no token may follow EOS")
    tb = tables(catalog)
    return batch_mask(
        np.asarray(state.railcars)[None],
        np.asarray(state.containers)[None],
        state.position,
        np.array([state.last == tb.blank]),
        tb,
        max_len,
    )[0]


def batch_mask(rem_r, rem_c, position: int, after_blank, tb: _Tables, max_len: int | None = None) -> np.ndarray:
    """Masks for n states sharing one position; ``rem_r`` is (n, J), ``rem_c`` (n, L)."""
    n = rem_r.shape[0]
    out = np.zeros((n, tb.size), dtype=bool)
    if max_len is not None and position >= max_len - 1:
        out[:, tb.eos] = True
        return out
    fits = rem_r[:, tb.types] >= 1
    for l in range(tb.counts.shape[1]):
        fits &= tb.counts[:, l] <= rem_c[:, l, None]
    out[:, : tb.eos] = fits
    if position == 0:
        out[:, tb.blank] = True
    else:
        out[:, tb.eos] = True
    if after_blank.any():
        out[after_blank] = False
        out[after_blank, tb.eos] = True
    return out


def masked_log_softmax(logits: np.ndarray, feasible: np.ndarray) -> np.ndarray:
    """Log-probabilities renormalised over feasible entries; masked entries are -inf."""
    z = np.where(feasible, logits, -np.inf)
    m = z.max(axis=-1, keepdims=True)
    if not m.min() > -np.inf:
        raise MaskError("every token is masked or has zero probability")
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def apply_mask(values: np.ndarray, feasible: np.ndarray, kind: str = "logits") -> np.ndarray:
    """Zero the infeasible entries and renormalise.

    ``kind`` says whether ``values`` are logits or probabilities; the
    renormalisation is done in log space either way.
    """
    values = np.asarray(values, dtype=float)
    if kind == "probs":
        with np.errstate(divide="ignore"):
            values = np.log(values)
    elif kind != "logits":
        raise ValueError(f"kind must be 'logits' or 'probs', got {kind!r}")
    if not feasible.any():
        raise MaskError("mask leaves no feasible token")
    return np.exp(masked_log_softmax(values, feasible))


def advance(state: DecodeState, token: int, catalog: RailcarCatalog, max_len: int | None = None) -> DecodeState:
    if not mask(state, catalog, max_len)[token]:
        raise MaskError(f"token {token} is infeasible at position {state.position}")
    tb = tables(catalog)
    if token == tb.eos:
        return DecodeState(state.railcars, state.containers, state.position + 1, token, True)
    if token == tb.blank:
        return DecodeState(state.railcars, state.containers, state.position + 1, token)
    r = list(state.railcars)
    r[int(tb.types[token])] -= 1
    c = tuple(int(a - b) for a, b in zip(state.containers, tb.counts[token]))
    return DecodeState(tuple(r), c, state.position + 1, token)


def default_max_len(x_a: Instance, catalog: RailcarCatalog) -> int:
    return x_a.n_platforms(catalog) + 2


# ---------------------------------------------------------------------------
# beam search


class Scorer(Protocol):
    """Incremental next-token model over a batch of hypotheses.

    ``step`` receives the previous token of each hypothesis (-1 before the
    first step) and returns the updated state and unnormalised logits of
    shape (n_hypotheses, vocab). ``select`` gathers hypothesis rows.
    """

    def start(self, x_a: Instance) -> Any: ...

    def step(self, state: Any, prev: np.ndarray) -> tuple[Any, np.ndarray]: ...

    def select(self, state: Any, rows: np.ndarray) -> Any: ...


class FunctionScorer:
    """Adapts ``fn(prefix, x_a) -> logits`` to the Scorer protocol."""

    def __init__(self, fn: Callable[[tuple[int, ...], Instance], Sequence[float]]):
        self.fn = fn

    def start(self, x_a):
        return (x_a, [()])

    def step(self, state, prev):
        x_a, prefixes = state
        prefixes = [p if t < 0 else p + (int(t),) for p, t in zip(prefixes, prev)]
        logits = np.array([np.asarray(self.fn(p, x_a), dtype=float) for p in prefixes])
        return (x_a, prefixes), logits

    def select(self, state, rows):
        x_a, prefixes = state
        return (x_a, [prefixes[i] for i in rows])


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    logprob: float
    state: DecodeState


def beam_search_scored(
    scorer: Scorer,
    x_a: Instance,
    catalog: RailcarCatalog,
    width: int = 5,
    max_len: int | None = None,
) -> Hypothesis:
    """Highest-scoring complete hypothesis under masked conditionals.

    Scores are sums of masked log-probabilities; ties go to the
    lexicographically smallest token sequence.
    """
    if max_len is None:
        max_len = default_max_len(x_a, catalog)
    score, toks = _beam(scorer, x_a, catalog, width, max_len)
    state = init_state(x_a)
    for t in toks:
        state = advance(state, t, catalog, max_len)
    return Hypothesis(toks, score, state)


def beam_search(scorer: Scorer, x_a: Instance, catalog: RailcarCatalog, width: int = 5, max_len: int | None = None) -> tuple[int, ...]:
    if max_len is None:
        max_len = default_max_len(x_a, catalog)
    return _beam(scorer, x_a, catalog, width, max_len)[1]


def _beam(scorer, x_a, catalog, width, max_len):
    if width < 1:
        raise ValueError("beam width must be at least 1")
    start = init_state(x_a)
    tb = tables(catalog)
    # alive hypotheses as parallel arrays; all share the current position
    toks: list[tuple[int, ...]] = [()]
    score = np.zeros(1)
    rem_r = np.array([start.railcars], dtype=np.int64)
    rem_c = np.array([start.containers], dtype=np.int64)
    blank = np.zeros(1, dtype=bool)
    model_state = scorer.start(x_a)
    prev = np.array([-1])
    finished: list[tuple[float, tuple[int, ...]]] = []
    V = tb.size

    best_done = -np.inf
    for pos in range(max_len):
        feasible = batch_mask(rem_r, rem_c, pos, blank, tb, max_len)
        if pos > 0 and feasible.sum() == len(feasible):
            # EOS is the only choice everywhere; its masked log-probability is exactly 0
            finished.extend((v, t + (tb.eos,)) for v, t in zip(score.tolist(), toks))
            break
        model_state, logits = scorer.step(model_state, prev)
        total = score[:, None] + masked_log_softmax(logits, feasible)

        done = total[:, tb.eos]
        ended = np.flatnonzero(done > -np.inf)
        if len(ended):
            vals = done[ended].tolist()
            finished.extend((v, toks[i] + (tb.eos,)) for i, v in zip(ended.tolist(), vals))
            best_done = max(best_done, max(vals))
        total[:, tb.eos] = -np.inf

        flat = total.ravel()
        order = np.argsort(-flat, kind="stable")
        if flat[order[0]] == -np.inf:
            break
        cand = order[:width]
        if len(order) > width and flat[order[width]] == flat[order[width - 1]] > -np.inf:
            # a tie straddles the cut: rank every tied candidate by its token sequence
            tied = np.flatnonzero(flat >= flat[order[width - 1]])
            cand = np.asarray(sorted(tied, key=lambda c: (-flat[c], toks[c // V] + (c % V,)))[:width])
        cand = cand[flat[cand] > -np.inf]
        rows, new = cand // V, cand % V
        score = flat[cand]
        toks = [toks[r] + (t,) for r, t in zip(rows.tolist(), new.tolist())]
        rem_r = rem_r[rows]
        rem_c = rem_c[rows]
        is_pat = new < tb.eos
        if is_pat.all():
            rem_r[np.arange(len(new)), tb.types[new]] -= 1
            rem_c -= tb.counts[new]
        else:
            pt = new[is_pat]
            rem_r[np.flatnonzero(is_pat), tb.types[pt]] -= 1
            rem_c[is_pat] -= tb.counts[pt]
        blank = new == tb.blank
        model_state = scorer.select(model_state, rows)
        prev = new
        if best_done > score[0]:
            break

    if not finished:
        raise MaskError("beam search produced no complete hypothesis")
    return min(finished, key=lambda f: (-f[0], f[1]))
