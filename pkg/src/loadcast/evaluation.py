"""Order-invariant discrepancy D, aggregate error and prediction timing."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, fields
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .catalog import RailcarCatalog
from .oracle import SolutionDescription


class UndefinedMetricError(ArithmeticError):
    pass


def assignment_min(actual: Sequence[Sequence[int]], predicted: Sequence[Sequence[int]]) -> int:
    """Least total L1 distance over one-to-one matchings of two padded loading lists."""
    if len(actual) != len(predicted):
        raise ValueError(f"padded sizes differ: {len(actual)} vs {len(predicted)}")
    if not actual:
        return 0
    a = np.asarray(actual, dtype=np.int64)
    p = np.asarray(predicted, dtype=np.int64)
    cost = np.abs(a[:, None, :] - p[None, :, :]).sum(-1)
    rows, cols = linear_sum_assignment(cost)
    return int(cost[rows, cols].sum())


def pad(actual: list, predicted: list, n_lengths: int) -> tuple[list, list]:
    k = max(len(actual), len(predicted))
    zero = (0,) * n_lengths
    return actual + [zero] * (k - len(actual)), predicted + [zero] * (k - len(predicted))


def discrepancy(actual: SolutionDescription, predicted: SolutionDescription, catalog: RailcarCatalog) -> tuple[int, int]:
    """(numerator, denominator) of D for a single observation."""
    L = catalog.n_lengths
    num = 0
    for act, pred in zip(actual.by_type(catalog), predicted.by_type(catalog)):
        num += assignment_min(*pad(act, pred, L))
    return num, sum(actual.container_usage(catalog))


def observation_ratio(num: int, den: int) -> float:
    # 0/0 counts as a perfect prediction; a nonzero numerator over nothing loaded is scored per container of 1
    return num / max(den, 1)


@dataclass(frozen=True)
class DReport:
    n: int
    D: float  # ratio of sums
    D_se: float  # linearised standard error of the ratio
    mean_ratio: float
    ratio_std: float
    ratio_se: float
    undefined: int  # observations with nothing loaded but a nonzero discrepancy


def dataset_D(pairs: Iterable[tuple[SolutionDescription, SolutionDescription]], catalog: RailcarCatalog) -> DReport:
    """D over (actual, predicted) pairs."""
    nd = np.array([discrepancy(a, p, catalog) for a, p in pairs], dtype=float).reshape(-1, 2)
    return d_from_counts(nd[:, 0], nd[:, 1])


def d_from_counts(num: np.ndarray, den: np.ndarray) -> DReport:
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    n = len(num)
    if n == 0:
        raise ValueError("empty dataset")
    tn, td = num.sum(), den.sum()
    if td == 0:
        if tn > 0:
            raise UndefinedMetricError("nothing loaded in the actual solutions but predictions differ")
        D = 0.0
        resid = np.zeros(n)
    else:
        D = tn / td
        resid = (num - D * den) / (td / n)
    ratios = num / np.maximum(den, 1)
    std = float(ratios.std(ddof=1)) if n > 1 else 0.0
    d_se = float(resid.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return DReport(
        n=n,
        D=float(D),
        D_se=d_se,
        mean_ratio=float(ratios.mean()),
        ratio_std=std,
        ratio_se=std / math.sqrt(n),
        undefined=int(((den == 0) & (num > 0)).sum()),
    )


def totals(desc: SolutionDescription, catalog: RailcarCatalog) -> tuple[int, int]:
    """(loaded containers, used platform slots) implied by a description."""
    containers = 0
    slots = 0
    for p in desc.patterns:
        pat = catalog.patterns[p]
        containers += pat.n_containers
        slots += pat.min_platforms
    return containers, slots


def aggregate_error(pairs: Iterable[tuple[SolutionDescription, SolutionDescription]], catalog: RailcarCatalog) -> float:
    diffs = [
        [abs(x - y) for x, y in zip(totals(a, catalog), totals(p, catalog))]
        for a, p in pairs
    ]
    if not diffs:
        return 0.0
    return float(np.mean(diffs, axis=0).sum())


@dataclass(frozen=True)
class Timing:
    n: int
    mean: float
    std: float
    stderr: float


def timing_from(samples: Sequence[float]) -> Timing:
    t = np.asarray(samples, dtype=float)
    n = len(t)
    std = float(t.std(ddof=1)) if n > 1 else 0.0
    return Timing(n, float(t.mean()) if n else 0.0, std, std / math.sqrt(n) if n else 0.0)


def time_predictions(predictor: Callable, instances: Sequence, warmup: int = 1) -> tuple[list, Timing]:
    """Predict each instance, recording per-instance wall time."""
    for x in instances[:warmup]:
        predictor(x)
    out, times = [], []
    for x in instances:
        t0 = time.perf_counter()
        out.append(predictor(x))
        times.append(time.perf_counter() - t0)
    return out, timing_from(times)


@dataclass(frozen=True)
class EvalReport:
    n: int
    D: float
    D_se: float
    mean_ratio: float
    ratio_std: float
    ratio_se: float
    undefined: int
    aggregate_error: float
    time_mean: float | None = None  # non-deterministic
    time_std: float | None = None  # non-deterministic

    TIMING_FIELDS = ("time_mean", "time_std")

    def to_text(self, timing: bool = True) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in self.TIMING_FIELDS and (not timing or v is None):
                continue
            lines.append(f"{f.name}: {v:.6g}" if isinstance(v, float) else f"{f.name}: {v}")
        return "\n".join(lines) + "\n"

    def to_csv(self, timing: bool = True) -> str:
        row = {k: v for k, v in asdict(self).items() if timing or k not in self.TIMING_FIELDS}
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow({k: ("" if v is None else v) for k, v in row.items()})
        return buf.getvalue()


def evaluate(
    actual: Sequence[SolutionDescription],
    predicted: Sequence[SolutionDescription],
    catalog: RailcarCatalog,
    timing: Timing | None = None,
) -> EvalReport:
    if len(actual) != len(predicted):
        raise ValueError(f"{len(actual)} gold descriptions but {len(predicted)} predictions")
    pairs = list(zip(actual, predicted))
    d = dataset_D(pairs, catalog)
    return EvalReport(
        **asdict(d),
        aggregate_error=aggregate_error(pairs, catalog),
        time_mean=None if timing is None else timing.mean,
        time_std=None if timing is None else timing.std,
    )
