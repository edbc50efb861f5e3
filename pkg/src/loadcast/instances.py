"""Sampling of load planning instances and construction of labelled datasets."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .catalog import RailcarCatalog

log = logging.getLogger(__name__)

MAX_RAILCARS = 99
MAX_CONTAINERS = 999


@dataclass(frozen=True)
class Instance:
    """First-stage counts plus (optionally) the realised container weights.

    ``weights[l]`` lists the masses of the length-``l`` containers in tonnes.
    """

    railcars: tuple[int, ...]
    containers: tuple[int, ...]
    weights: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self) -> None:
        if any(c < 0 or c > MAX_RAILCARS for c in self.railcars):
            raise ValueError(f"railcar counts must lie in 0..{MAX_RAILCARS}: {self.railcars}")
        if any(c < 0 or c > MAX_CONTAINERS for c in self.containers):
            raise ValueError(f"container counts must lie in 0..{MAX_CONTAINERS}: {self.containers}")
        if self.weights is not None:
            if len(self.weights) != len(self.containers) or any(
                len(w) != n for w, n in zip(self.weights, self.containers)
            ):
                raise ValueError("weight lists do not match container counts")

    @property
    def first_stage(self) -> "Instance":
        return Instance(self.railcars, self.containers)

    def n_platforms(self, catalog: RailcarCatalog) -> int:
        return sum(n * rt.n_platforms for n, rt in zip(self.railcars, catalog.railcar_types))

    def with_weights(self, weights) -> "Instance":
        return Instance(self.railcars, self.containers, tuple(tuple(float(x) for x in w) for w in weights))


@dataclass(frozen=True)
class DataClass:
    """Ranges (inclusive) for total containers and total platforms."""

    name: str
    container_range: tuple[int, int]
    platform_range: tuple[int, int]
    max_railcars: int | None = None


DATA_CLASSES = {
    "A": DataClass("A", (1, 150), (1, 50)),
    "B": DataClass("B", (151, 300), (1, 50)),
    "C": DataClass("C", (1, 150), (51, 100)),
    "D": DataClass("D", (151, 300), (51, 100)),
    # desk-scale class for the toy catalog
    "T": DataClass("T", (1, 20), (1, 8), max_railcars=5),
}


@dataclass(frozen=True)
class WeightModel:
    """Per-length container mass: tare + uniform payload."""

    tare: tuple[float, ...] = (3.8, 4.9)
    payload_low: tuple[float, ...] = (2.0, 2.0)
    payload_high: tuple[float, ...] = (26.0, 22.0)

    def mean(self, length: int) -> float:
        return self.tare[length] + 0.5 * (self.payload_low[length] + self.payload_high[length])

    def std(self, length: int) -> float:
        return (self.payload_high[length] - self.payload_low[length]) / np.sqrt(12.0)


DEFAULT_WEIGHTS = WeightModel()


def sample_instance(cls: DataClass, catalog: RailcarCatalog, rng: np.random.Generator) -> Instance:
    """Draw first-stage counts for one instance of ``cls``.

    The container total is uniform on the class range and split uniformly
    between length classes. Railcars are added one at a time with a uniform
    type until a uniformly drawn platform target is hit; a draw that would
    overshoot the target is rejected and redrawn.
    """
    lo, hi = cls.container_range
    total = int(rng.integers(lo, hi + 1))
    containers = _uniform_split(total, catalog.n_lengths, rng)

    plats = [rt.n_platforms for rt in catalog.railcar_types]
    usable = [j for j, p in enumerate(plats) if p > 0]
    if not usable:
        raise ValueError("catalog has no railcar type with platforms")
    smallest = min(plats[j] for j in usable)
    plo, phi = cls.platform_range
    while True:
        target = int(rng.integers(plo, phi + 1))
        counts = [0] * catalog.n_types
        current = 0
        while target - current >= smallest:
            j = usable[int(rng.integers(len(usable)))]
            if current + plats[j] > target:
                continue
            counts[j] += 1
            current += plats[j]
        ok = plo <= current <= phi and all(c <= MAX_RAILCARS for c in counts)
        if cls.max_railcars is not None:
            ok = ok and sum(counts) <= cls.max_railcars
        if ok:
            return Instance(tuple(counts), containers)


def _uniform_split(total: int, parts: int, rng: np.random.Generator) -> tuple[int, ...]:
    # uniform over compositions of `total` into `parts` nonnegative integers (stars and bars)
    if parts == 1:
        return (total,)
    bars = np.sort(rng.choice(total + parts - 1, size=parts - 1, replace=False))
    edges = np.concatenate(([-1], bars, [total + parts - 1]))
    return tuple(int(x) for x in np.diff(edges) - 1)


def sample_weights(instance: Instance, rng: np.random.Generator, model: WeightModel = DEFAULT_WEIGHTS) -> Instance:
    weights = []
    for l, n in enumerate(instance.containers):
        payload = rng.uniform(model.payload_low[l], model.payload_high[l], size=n)
        weights.append(tuple(float(x) for x in np.round(model.tare[l] + payload, 6)))
    return instance.with_weights(weights)


@dataclass(frozen=True)
class DatasetSpec:
    data_class: DataClass
    count: int
    seed: int
    splits: tuple[tuple[str, float], ...] = (("train", 0.64), ("valid", 0.16), ("test", 0.20))
    name: str | None = None
    node_budget: int = 10**7
    weight_model: WeightModel = field(default=DEFAULT_WEIGHTS)

    def __post_init__(self) -> None:
        if abs(sum(f for _, f in self.splits) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if self.count < 0:
            raise ValueError("count must be nonnegative")

    @property
    def stem(self) -> str:
        return self.name or self.data_class.name


def split_sizes(count: int, fractions) -> list[int]:
    sizes = [int(round(count * f)) for f in fractions]
    sizes[-1] = count - sum(sizes[:-1])
    return sizes


def instance_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


@dataclass(frozen=True)
class LabelledInstance:
    index: int
    instance: Instance
    source: tuple[int, ...]
    target: tuple[int, ...]
    timed_out: bool


def label_instance(index: int, spec: DatasetSpec, catalog: RailcarCatalog, oracle: Callable | None = None) -> LabelledInstance:
    from . import language
    from .oracle import SolverTimeout, solve_full_info, synthesize

    rng = instance_rng(spec.seed, index)
    inst = sample_weights(sample_instance(spec.data_class, catalog, rng), rng, spec.weight_model)
    timed_out = False
    try:
        if oracle is None:
            sol = solve_full_info(inst, catalog, node_budget=spec.node_budget)
        else:
            sol = oracle(inst, catalog)
    except SolverTimeout as exc:
        sol = exc.incumbent
        timed_out = True
    except Exception as exc:
        raise RuntimeError(f"oracle failed on instance {index}: {exc}") from exc
    desc = synthesize(sol)
    return LabelledInstance(
        index,
        inst,
        language.encode_input(inst, catalog),
        language.encode_output(desc, catalog),
        timed_out,
    )


def _label_chunk(args):
    indices, spec, catalog = args
    return [label_instance(i, spec, catalog) for i in indices]


def generate_labelled(spec: DatasetSpec, catalog: RailcarCatalog, jobs: int = 1, oracle: Callable | None = None) -> list[LabelledInstance]:
    indices = list(range(spec.count))
    if jobs <= 1 or oracle is not None or spec.count < 2:
        return [label_instance(i, spec, catalog, oracle) for i in indices]
    chunks = [indices[k::jobs] for k in range(jobs)]
    out: dict[int, LabelledInstance] = {}
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for part in pool.map(_label_chunk, [(c, spec, catalog) for c in chunks]):
            for li in part:
                out[li.index] = li
    return [out[i] for i in indices]


def assign_splits(spec: DatasetSpec) -> dict[str, list[int]]:
    """Random partition of instance indices into the named splits."""
    perm = np.random.default_rng([spec.seed, 2**31 - 1]).permutation(spec.count)
    sizes = split_sizes(spec.count, [f for _, f in spec.splits])
    out, start = {}, 0
    for (name, _), size in zip(spec.splits, sizes):
        out[name] = sorted(int(i) for i in perm[start:start + size])
        start += size
    return out


def build_dataset(
    spec: DatasetSpec,
    catalog: RailcarCatalog,
    out_dir: str | Path,
    jobs: int = 1,
    oracle: Callable | None = None,
) -> dict[str, Path]:
    """Sample, label and write ``<stem>.<split>.src/.tgt`` plus ``<stem>.manifest``.

    Returns the written paths keyed by ``"<split>.src"`` etc.
    """
    from . import language

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labelled = generate_labelled(spec, catalog, jobs=jobs, oracle=oracle)
    splits = assign_splits(spec)
    src_vocab, tgt_vocab = language.source_vocab(catalog), language.target_vocab(catalog)
    language.write_vocab(src_vocab, out / "vocab.src.txt")
    language.write_vocab(tgt_vocab, out / "vocab.tgt.txt")

    paths: dict[str, Path] = {}
    for name, idx in splits.items():
        for side, vocab in (("src", src_vocab), ("tgt", tgt_vocab)):
            path = out / f"{spec.stem}.{name}.{side}"
            with open(path, "w", newline="\n") as fh:
                for i in idx:
                    seq = labelled[i].source if side == "src" else labelled[i].target
                    fh.write(vocab.to_line(seq) + "\n")
            paths[f"{name}.{side}"] = path

    manifest = {
        "format_version": 1,
        "name": spec.stem,
        "seed": spec.seed,
        "class": spec.data_class.name,
        "count": spec.count,
        "catalog": catalog.name,
        "catalog_hash": catalog.hash,
        "node_budget": spec.node_budget,
        "split_counts": {k: len(v) for k, v in splits.items()},
        "splits": splits,
        "timed_out": [li.index for li in labelled if li.timed_out],
    }
    mpath = out / f"{spec.stem}.manifest"
    mpath.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    paths["manifest"] = mpath
    if manifest["timed_out"]:
        log.warning("%d instances hit the node budget; incumbents used", len(manifest["timed_out"]))
    return paths
