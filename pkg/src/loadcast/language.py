"""Input/output vocabularies and the digit syntaxes linking instances and loadings to tokens.

Source phrase: one two-digit pair per railcar type (``r<j>_<d>``), then one
three-digit triple per container length (``c<len>_<d>``), most significant
digit first. Target phrase: loading tokens ``pat<j>_<k>`` terminated by
``EOS``, or ``BLANK EOS`` when nothing is loaded.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from .catalog import RailcarCatalog
from .instances import Instance
from .oracle import SolutionDescription

RAILCAR_DIGITS = 2
CONTAINER_DIGITS = 3


class TokenSyntaxError(ValueError):
    """Token sequence violates the source or target syntax."""


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def index(self) -> dict[str, int]:
        return _index(self.tokens)

    def id(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise TokenSyntaxError(f"unknown token {token!r}") from None

    def to_line(self, ids) -> str:
        return " ".join(self.tokens[i] for i in ids)

    def from_line(self, line: str) -> tuple[int, ...]:
        return tuple(self.id(t) for t in line.split())


@lru_cache(maxsize=None)
def _index(tokens: tuple[str, ...]) -> dict[str, int]:
    return {t: i for i, t in enumerate(tokens)}


@lru_cache(maxsize=32)
def source_vocab(catalog: RailcarCatalog) -> Vocabulary:
    toks = [f"r{j}_{d}" for j in range(catalog.n_types) for d in range(10)]
    toks += [f"c{length}_{d}" for length in catalog.container_lengths for d in range(10)]
    return Vocabulary(tuple(toks))


@lru_cache(maxsize=32)
def target_vocab(catalog: RailcarCatalog) -> Vocabulary:
    toks = [f"pat{p.railcar_type}_{p.local_index}" for p in catalog.patterns]
    return Vocabulary(tuple(toks) + ("EOS", "BLANK"))


def eos_id(catalog: RailcarCatalog) -> int:
    return catalog.n_patterns


def blank_id(catalog: RailcarCatalog) -> int:
    return catalog.n_patterns + 1


def source_length(catalog: RailcarCatalog) -> int:
    return RAILCAR_DIGITS * catalog.n_types + CONTAINER_DIGITS * catalog.n_lengths


def _digits(value: int, width: int) -> list[int]:
    if not 0 <= value < 10**width:
        raise ValueError(f"count {value} does not fit in {width} decimal digits")
    return [int(c) for c in str(value).zfill(width)]


def encode_input(x_a: Instance, catalog: RailcarCatalog) -> tuple[int, ...]:
    if len(x_a.railcars) != catalog.n_types or len(x_a.containers) != catalog.n_lengths:
        raise ValueError("instance dimensions do not match the catalog")
    ids = []
    for j, n in enumerate(x_a.railcars):
        ids += [10 * j + d for d in _digits(n, RAILCAR_DIGITS)]
    base = 10 * catalog.n_types
    for l, n in enumerate(x_a.containers):
        ids += [base + 10 * l + d for d in _digits(n, CONTAINER_DIGITS)]
    return tuple(ids)


def decode_input(ids, catalog: RailcarCatalog) -> Instance:
    ids = list(ids)
    if len(ids) != source_length(catalog):
        raise TokenSyntaxError(f"source phrase has {len(ids)} tokens, expected {source_length(catalog)}")
    pos = 0
    railcars = []
    for j in range(catalog.n_types):
        value = 0
        for _ in range(RAILCAR_DIGITS):
            t = ids[pos]
            if not 10 * j <= t < 10 * j + 10:
                raise TokenSyntaxError(f"position {pos}: expected a digit of railcar type {j}, got id {t}")
            value = 10 * value + t - 10 * j
            pos += 1
        railcars.append(value)
    base = 10 * catalog.n_types
    containers = []
    for l in range(catalog.n_lengths):
        value = 0
        lo = base + 10 * l
        for _ in range(CONTAINER_DIGITS):
            t = ids[pos]
            if not lo <= t < lo + 10:
                raise TokenSyntaxError(f"position {pos}: expected a digit of length class {l}, got id {t}")
            value = 10 * value + t - lo
            pos += 1
        containers.append(value)
    return Instance(tuple(railcars), tuple(containers))


def encode_output(description: SolutionDescription, catalog: RailcarCatalog) -> tuple[int, ...]:
    if description.is_blank:
        return (blank_id(catalog), eos_id(catalog))
    for p in description.patterns:
        if not 0 <= p < catalog.n_patterns:
            raise ValueError(f"pattern {p} is not in the catalog")
    return tuple(sorted(description.patterns)) + (eos_id(catalog),)


def decode_output(ids, catalog: RailcarCatalog) -> SolutionDescription:
    """Tally loadings of a target phrase; order is disregarded."""
    ids = list(ids)
    eos, blank = eos_id(catalog), blank_id(catalog)
    if not ids or ids[-1] != eos:
        raise TokenSyntaxError("target phrase must end with EOS")
    if ids[0] == eos:
        raise TokenSyntaxError("EOS cannot appear in first position")
    if eos in ids[:-1]:
        raise TokenSyntaxError("EOS must be the last token")
    body = ids[:-1]
    if blank in body:
        if body != [blank]:
            raise TokenSyntaxError("BLANK cannot be preceded by another token and must be followed by EOS")
        return SolutionDescription()
    for t in body:
        if not 0 <= t < catalog.n_patterns:
            raise TokenSyntaxError(f"unknown target id {t}")
    return SolutionDescription.of(body)


def write_vocab(vocab: Vocabulary, path: str | Path) -> None:
    Path(path).write_text("".join(t + "\n" for t in vocab.tokens))


def read_vocab(path: str | Path) -> Vocabulary:
    return Vocabulary(tuple(Path(path).read_text().split("\n")[:-1]))
