"""Sample average approximation: scenario medoid predictor and the D lower bound."""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .catalog import RailcarCatalog
from .evaluation import d_from_counts, discrepancy, observation_ratio, timing_from
from .instances import DEFAULT_WEIGHTS, Instance, WeightModel, sample_weights
from .oracle import SolutionDescription, SolverTimeout, solve_full_info, synthesize

DEFAULT_SCENARIOS = (5, 10, 25, 50, 99)


class ScenarioError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"scenario {index}: {cause}")
        self.index = index


def medoid(descriptions: Sequence[SolutionDescription], catalog: RailcarCatalog) -> int:
    """Index of the description with least mean single-observation D to all others.

    Ties go to the smallest index. Distances are computed once per distinct
    description and weighted by multiplicity.
    """
    if not descriptions:
        raise ValueError("no candidates")
    first: dict[SolutionDescription, int] = {}
    mult: dict[SolutionDescription, int] = {}
    for i, d in enumerate(descriptions):
        first.setdefault(d, i)
        mult[d] = mult.get(d, 0) + 1
    distinct = list(first)
    if len(distinct) == 1:
        return 0
    best_i, best_v = None, None
    for c in distinct:
        v = sum(m * observation_ratio(*discrepancy(d, c, catalog)) for d, m in mult.items())
        i = first[c]
        if best_v is None or v < best_v or (v == best_v and i < best_i):
            best_i, best_v = i, v
    return best_i


def scenario_descriptions(
    x_a: Instance,
    n: int,
    rng: np.random.Generator,
    catalog: RailcarCatalog,
    oracle: Callable | None = None,
    weights: WeightModel = DEFAULT_WEIGHTS,
) -> list[SolutionDescription]:
    if n < 1:
        raise ValueError("need at least one scenario")
    out = []
    for s in range(n):
        scen = sample_weights(x_a.first_stage, rng, weights)
        try:
            sol = oracle(scen, catalog) if oracle is not None else solve_full_info(scen, catalog)
        except SolverTimeout as exc:
            sol = exc.incumbent
        except Exception as exc:
            raise ScenarioError(s, exc) from exc
        out.append(synthesize(sol))
    return out


def saa_predict(
    x_a: Instance,
    n_scenarios: int,
    rng: np.random.Generator,
    catalog: RailcarCatalog,
    oracle: Callable | None = None,
    weights: WeightModel = DEFAULT_WEIGHTS,
) -> SolutionDescription:
    descs = scenario_descriptions(x_a, n_scenarios, rng, catalog, oracle, weights)
    return descs[medoid(descs, catalog)]


def saa_rng(seed: int, index: int, n_scenarios: int) -> np.random.Generator:
    return np.random.default_rng([seed, index, n_scenarios])


@dataclass(frozen=True)
class SaaRow:
    n_scenarios: int
    D: float
    D_se: float
    ratio_std: float
    time_mean: float  # non-deterministic
    time_std: float  # non-deterministic


def _observe(args):
    instances, actual, catalog, n, seed, offset, oracle = args
    out = []
    for i, (x, gold) in enumerate(zip(instances, actual), start=offset):
        t0 = time.perf_counter()
        pred = saa_predict(x, n, saa_rng(seed, i, n), catalog, oracle)
        elapsed = time.perf_counter() - t0
        out.append((*discrepancy(gold, pred, catalog), elapsed, pred))
    return out


def saa_bound(
    instances: Sequence[Instance],
    actual: Sequence[SolutionDescription],
    catalog: RailcarCatalog,
    counts: Sequence[int] = DEFAULT_SCENARIOS,
    seed: int = 0,
    oracle: Callable | None = None,
    predictions: dict | None = None,
    jobs: int = 1,
) -> list[SaaRow]:
    """One row per scenario count: D of the SAA predictions against the actual labels and timing.

    When ``predictions`` is a dict it receives the predicted descriptions per count.
    """
    if not counts or list(counts) != sorted(set(counts)) or min(counts) < 1:
        raise ValueError("scenario counts must be positive and increasing")
    if len(instances) != len(actual):
        raise ValueError("instances and labels differ in number")
    rows = []
    for n in counts:
        if jobs > 1 and oracle is None and len(instances) > 1:
            size = -(-len(instances) // jobs)
            chunks = [
                (instances[k:k + size], actual[k:k + size], catalog, n, seed, k, None)
                for k in range(0, len(instances), size)
            ]
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                obs = [o for part in pool.map(_observe, chunks) for o in part]
        else:
            obs = _observe((instances, actual, catalog, n, seed, 0, oracle))
        nums = np.array([o[0] for o in obs])
        dens = np.array([o[1] for o in obs])
        d = d_from_counts(nums, dens)
        t = timing_from([o[2] for o in obs])
        rows.append(SaaRow(n, d.D, d.D_se, d.ratio_std, t.mean, t.std))
        if predictions is not None:
            predictions[n] = [o[3] for o in obs]
    return rows


def format_rows(rows: Sequence[SaaRow], timing: bool = True) -> str:
    head = ["n_scenarios", "D", "D_se", "ratio_std"] + (["time_mean", "time_std"] if timing else [])
    lines = [",".join(head)]
    for r in rows:
        vals = [str(r.n_scenarios), f"{r.D:.6f}", f"{r.D_se:.6f}", f"{r.ratio_std:.6f}"]
        if timing:
            vals += [f"{r.time_mean:.6f}", f"{r.time_std:.6f}"]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"
