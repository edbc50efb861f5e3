"""Railcar / container geometry and the enumeration of feasible loading patterns.

A catalog file is YAML with a ``format_version`` field::

    format_version: 1
    name: toy
    container_lengths: [40, 53]
    railcars:
      - index: 0
        name: R0
        weight_cap: 60.0
        platforms:
          - {bottom: [40, 53], top: [40], weight_cap: 60.0}

A platform entry may carry ``count: n`` to repeat it ``n`` times.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import yaml

FORMAT_VERSION = 1


class CatalogError(ValueError):
    """Raised for unparsable or inconsistent catalog files."""


@dataclass(frozen=True)
class PlatformSpec:
    allowed_bottom: frozenset[int]
    allowed_top: frozenset[int]
    weight_cap: float

    def fillings(self) -> list[tuple[int | None, int | None]]:
        """All (bottom, top) slot fillings by length class index; None = empty."""
        out: list[tuple[int | None, int | None]] = [(None, None)]
        for b in sorted(self.allowed_bottom):
            out.append((b, None))
            for t in sorted(self.allowed_top):
                out.append((b, t))
        return out


@dataclass(frozen=True)
class RailcarType:
    index: int
    name: str
    platforms: tuple[PlatformSpec, ...]
    weight_cap: float

    @property
    def n_platforms(self) -> int:
        return len(self.platforms)


@dataclass(frozen=True)
class LoadPattern:
    """One feasible loading of a railcar type: containers per length class."""

    railcar_type: int
    counts: tuple[int, ...]
    min_platforms: int
    local_index: int
    global_index: int

    @property
    def n_containers(self) -> int:
        return sum(self.counts)


def enumerate_patterns(railcar: RailcarType, n_lengths: int) -> list[tuple[tuple[int, ...], int]]:
    """Distinct nonzero count vectors achievable on ``railcar``.

    Returns ``(counts, min_platforms)`` pairs sorted ascending by counts, where
    ``min_platforms`` is the fewest occupied platforms realising the counts.
    """
    # reachable count vector -> fewest occupied platforms
    reach: dict[tuple[int, ...], int] = {(0,) * n_lengths: 0}
    for plat in railcar.platforms:
        options: dict[tuple[int, ...], int] = {}
        for bottom, top in plat.fillings():
            vec = [0] * n_lengths
            for slot in (bottom, top):
                if slot is not None:
                    vec[slot] += 1
            occupied = int(bottom is not None)
            key = tuple(vec)
            options[key] = min(options.get(key, occupied), occupied)
        nxt: dict[tuple[int, ...], int] = {}
        for base, used in reach.items():
            for opt, occ in options.items():
                key = tuple(a + b for a, b in zip(base, opt))
                if key not in nxt or used + occ < nxt[key]:
                    nxt[key] = used + occ
        reach = nxt
    return sorted((k, v) for k, v in reach.items() if any(k))


@dataclass(frozen=True, eq=False)
class RailcarCatalog:
    name: str
    container_lengths: tuple[int, ...]
    railcar_types: tuple[RailcarType, ...]
    patterns_by_type: tuple[tuple[LoadPattern, ...], ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        per_type = []
        g = 0
        for rt in self.railcar_types:
            pats = []
            for k, (counts, min_plat) in enumerate(enumerate_patterns(rt, self.n_lengths)):
                pats.append(LoadPattern(rt.index, counts, min_plat, k, g))
                g += 1
            per_type.append(tuple(pats))
        object.__setattr__(self, "patterns_by_type", tuple(per_type))

    @property
    def n_types(self) -> int:
        return len(self.railcar_types)

    @property
    def n_lengths(self) -> int:
        return len(self.container_lengths)

    @cached_property
    def patterns(self) -> tuple[LoadPattern, ...]:
        return tuple(p for pats in self.patterns_by_type for p in pats)

    @property
    def n_patterns(self) -> int:
        return len(self.patterns)

    @cached_property
    def pattern_lookup(self) -> dict[tuple[int, tuple[int, ...]], LoadPattern]:
        return {(p.railcar_type, p.counts): p for p in self.patterns}

    def find_pattern(self, railcar_type: int, counts) -> LoadPattern | None:
        return self.pattern_lookup.get((railcar_type, tuple(int(c) for c in counts)))

    def length_index(self, length: int) -> int:
        try:
            return self.container_lengths.index(length)
        except ValueError:
            raise CatalogError(f"unknown container length {length}") from None

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "name": self.name,
            "container_lengths": list(self.container_lengths),
            "railcars": [
                {
                    "index": rt.index,
                    "name": rt.name,
                    "weight_cap": rt.weight_cap,
                    "platforms": [
                        {
                            "bottom": [self.container_lengths[i] for i in sorted(p.allowed_bottom)],
                            "top": [self.container_lengths[i] for i in sorted(p.allowed_top)],
                            "weight_cap": p.weight_cap,
                        }
                        for p in rt.platforms
                    ],
                }
                for rt in self.railcar_types
            ],
        }

    @cached_property
    def hash(self) -> str:
        """Content hash; independent of file formatting and comments."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, RailcarCatalog) and self.hash == other.hash

    def __hash__(self) -> int:
        return hash(self.hash)


def _as_float(value, what: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise CatalogError(f"{what}: weight_cap must be a number, got {value!r}") from None
    if not out > 0:
        raise CatalogError(f"{what}: weight_cap must be positive")
    return out


def catalog_from_dict(doc: dict) -> RailcarCatalog:
    if not isinstance(doc, dict):
        raise CatalogError("catalog document must be a mapping")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CatalogError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    lengths = doc.get("container_lengths")
    if not lengths or not all(isinstance(x, int) for x in lengths):
        raise CatalogError("container_lengths must be a non-empty list of integers")
    if len(set(lengths)) != len(lengths):
        raise CatalogError("container_lengths contains duplicates")
    lengths = tuple(lengths)
    raw_cars = doc.get("railcars")
    if not raw_cars:
        raise CatalogError("catalog must define at least one railcar type")

    cars: dict[int, RailcarType] = {}
    for raw in raw_cars:
        idx = raw.get("index")
        name = str(raw.get("name", f"R{idx}"))
        what = f"railcar type {idx} ({name})"
        if not isinstance(idx, int) or idx < 0:
            raise CatalogError(f"{what}: index must be a non-negative integer")
        if idx in cars:
            raise CatalogError(f"{what}: duplicate railcar index")
        cap = _as_float(raw.get("weight_cap"), what)
        platforms = []
        for praw in raw.get("platforms") or []:
            try:
                bottom = frozenset(lengths.index(x) for x in praw.get("bottom", []))
                top = frozenset(lengths.index(x) for x in praw.get("top", []))
            except ValueError:
                raise CatalogError(f"{what}: platform refers to an unknown container length") from None
            if top and not bottom:
                raise CatalogError(f"{what}: platform allows top containers but no bottom")
            pcap = _as_float(praw.get("weight_cap", cap), what)
            count = praw.get("count", 1)
            if not isinstance(count, int) or count < 1:
                raise CatalogError(f"{what}: platform count must be a positive integer")
            platforms.extend([PlatformSpec(bottom, top, pcap)] * count)
        cars[idx] = RailcarType(idx, name, tuple(platforms), cap)

    if sorted(cars) != list(range(len(cars))):
        raise CatalogError(f"railcar indices must be contiguous from 0, got {sorted(cars)}")
    return RailcarCatalog(
        name=str(doc.get("name", "catalog")),
        container_lengths=lengths,
        railcar_types=tuple(cars[i] for i in range(len(cars))),
    )


def parse_catalog(text: str) -> RailcarCatalog:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise CatalogError(f"catalog parse error: {where}{getattr(exc, 'problem', exc)}") from None
    return catalog_from_dict(doc)


def load_catalog(path: str | Path) -> RailcarCatalog:
    """Load a catalog file. Bare names (``toy``, ``default10``) resolve to the bundled files."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and p.name == str(path):
        return builtin_catalog(str(path))
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise CatalogError(f"catalog file not found: {path}") from None
    return parse_catalog(text)


def builtin_catalog(name: str) -> RailcarCatalog:
    res = resources.files("loadcast") / "catalogs" / f"{name}.cfg"
    if not res.is_file():
        raise CatalogError(f"no bundled catalog named {name!r}")
    return parse_catalog(res.read_text())

