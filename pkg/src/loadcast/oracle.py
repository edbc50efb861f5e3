"""Exact full-information load planning solver and the synthesis map to loadings.

The objective is lexicographic: maximise loaded containers, then minimise
occupied platforms, then minimise used railcars.

Two facts keep the search small. First, any optimal plan can swap its loaded
containers for the lightest ``k_l`` containers of each length without breaking
a weight limit, so only the loaded *counts* are searched over. Second, for a
fixed count vector the remaining problem is a bin packing of known items into
railcars, solved by depth-first branch and bound (heaviest item first).
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .catalog import LoadPattern, RailcarCatalog, RailcarType
from .instances import Instance

EPS = 1e-9

Slot = tuple[int, int]  # (length index, container index within that length)


class SolverTimeout(RuntimeError):
    """Node budget exhausted; ``incumbent`` is the best feasible plan found."""

    def __init__(self, incumbent: "OperationalSolution", nodes: int):
        super().__init__(f"node budget exhausted after {nodes} nodes")
        self.incumbent = incumbent
        self.nodes = nodes


class FeasibilityError(ValueError):
    pass


class Cost(NamedTuple):
    loaded_containers: int
    used_platforms: int
    used_railcars: int

    def key(self) -> tuple[int, int, int]:
        """Smaller is better."""
        return (-self.loaded_containers, self.used_platforms, self.used_railcars)


@dataclass(frozen=True)
class RailcarLoad:
    """One used railcar: its pattern and the container in each (bottom, top) slot."""

    railcar_type: int
    pattern: int  # global pattern index
    slots: tuple[tuple[Slot | None, Slot | None], ...]

    @property
    def occupied_platforms(self) -> int:
        return sum(1 for b, t in self.slots if b is not None or t is not None)


@dataclass(frozen=True)
class OperationalSolution:
    loads: tuple[RailcarLoad, ...]

    def cost(self) -> Cost:
        n = sum(1 for ld in self.loads for b, t in ld.slots for s in (b, t) if s is not None)
        return Cost(n, sum(ld.occupied_platforms for ld in self.loads), len(self.loads))


@dataclass(frozen=True)
class SolutionDescription:
    """Multiset of loadings, stored as sorted global pattern indices."""

    patterns: tuple[int, ...] = ()

    @classmethod
    def of(cls, patterns) -> "SolutionDescription":
        return cls(tuple(sorted(int(p) for p in patterns)))

    @property
    def is_blank(self) -> bool:
        return not self.patterns

    def multiplicities(self) -> Counter:
        return Counter(self.patterns)

    def railcar_usage(self, catalog: RailcarCatalog) -> list[int]:
        used = [0] * catalog.n_types
        for p in self.patterns:
            used[catalog.patterns[p].railcar_type] += 1
        return used

    def container_usage(self, catalog: RailcarCatalog) -> list[int]:
        used = [0] * catalog.n_lengths
        for p in self.patterns:
            for l, c in enumerate(catalog.patterns[p].counts):
                used[l] += c
        return used

    def by_type(self, catalog: RailcarCatalog) -> list[list[tuple[int, ...]]]:
        out: list[list[tuple[int, ...]]] = [[] for _ in range(catalog.n_types)]
        for p in self.patterns:
            pat = catalog.patterns[p]
            out[pat.railcar_type].append(pat.counts)
        return out


def synthesize(solution: OperationalSolution) -> SolutionDescription:
    return SolutionDescription.of(ld.pattern for ld in solution.loads)


# ---------------------------------------------------------------------------
# per-railcar slot placement


class _Placer:
    """Memoised slot assignment of weighted containers on one railcar type.

    ``relaxed`` drops the rule that a top container needs a bottom one; it is
    a necessary condition used to prune partial loads.
    """

    def __init__(self, catalog: RailcarCatalog):
        self.catalog = catalog
        self._memo: dict = {}

    def reset(self) -> None:
        self._memo.clear()

    def place(self, rt: RailcarType, items: tuple[tuple[int, float], ...], relaxed: bool = False):
        """Return (occupied platforms, per-platform (bottom, top) item positions) or None.

        ``items`` are (length, weight) pairs; the returned slots hold positions
        into ``items``. Among feasible placements the one with fewest occupied
        platforms is returned.
        """
        return self._cached(rt, items, not relaxed, relaxed)

    def floor(self, rt: RailcarType, items: tuple[tuple[int, float], ...]) -> int | None:
        """Fewest occupied platforms with tops allowed to float; a lower bound for any superset."""
        res = self._cached(rt, items, False, False)
        return None if res is None else res[0]

    def _cached(self, rt, items, strict, first):
        key = (rt.index, strict, first, items)
        hit = self._memo.get(key)
        if hit is not None or key in self._memo:
            return hit
        res = self._solve(rt, items, strict, first)
        self._memo[key] = res
        return res

    def _solve(self, rt, items, strict, first):
        total = sum(w for _, w in items)
        if total > rt.weight_cap + EPS or len(items) > 2 * rt.n_platforms:
            return None
        plats = rt.platforms
        n_p = len(plats)
        order = sorted(range(len(items)), key=lambda i: (-items[i][1], items[i][0], i))
        bottom = [-1] * n_p
        top = [-1] * n_p
        load = [0.0] * n_p
        best: list = [None]

        def rec(k: int, occupied: int) -> None:
            if best[0] is not None and (first or occupied >= best[0][0]):
                return
            if k == len(order):
                if strict and any(top[p] >= 0 and bottom[p] < 0 for p in range(n_p)):
                    return
                best[0] = (occupied, tuple((bottom[p], top[p]) for p in range(n_p)))
                return
            i = order[k]
            length, w = items[i]
            tried = set()
            # occupied platforms first keeps the first solution compact
            cand = sorted(range(n_p), key=lambda p: (bottom[p] < 0 and top[p] < 0, p))
            for p in cand:
                spec = plats[p]
                if load[p] + w > spec.weight_cap + EPS:
                    continue
                empty = bottom[p] < 0 and top[p] < 0
                sig = (spec, bottom[p] < 0, top[p] < 0, round(load[p], 9))
                if sig in tried:
                    continue
                tried.add(sig)
                for level in (0, 1):
                    slots = bottom if level == 0 else top
                    allowed = spec.allowed_bottom if level == 0 else spec.allowed_top
                    if slots[p] >= 0 or length not in allowed:
                        continue
                    slots[p] = i
                    load[p] += w
                    rec(k + 1, occupied + int(empty))
                    load[p] -= w
                    slots[p] = -1

        rec(0, 0)
        return best[0]


# ---------------------------------------------------------------------------
# solver


class _Budget:
    def __init__(self, limit: int):
        self.limit = limit
        self.nodes = 0

    def tick(self) -> bool:
        self.nodes += 1
        return self.nodes > self.limit


class _Exhausted(Exception):
    pass


_UNREACHABLE = np.iinfo(np.int64).max // 4
_R_SCALE = 4096  # encodes (platforms, railcars) as platforms * _R_SCALE + railcars


def geometric_floor(catalog: RailcarCatalog, railcars, limits) -> np.ndarray:
    """Lexicographically least (platforms, railcars) per exactly attainable count vector.

    Entry ``[k_1, ..., k_L]`` is ``platforms * _R_SCALE + railcars`` over all
    pattern multisets within railcar availability whose container counts equal
    ``k``; ``_UNREACHABLE`` where no such multiset exists. Weights are ignored.
    """
    shape = tuple(int(x) + 1 for x in limits)
    best = np.full(shape, _UNREACHABLE, dtype=np.int64)
    best[(0,) * len(shape)] = 0
    for j, n in enumerate(railcars):
        pats = [p for p in catalog.patterns_by_type[j] if all(c <= lim for c, lim in zip(p.counts, limits))]
        for _ in range(n):
            nxt = best.copy()
            for pat in pats:
                src = tuple(slice(0, s - c) for s, c in zip(shape, pat.counts))
                dst = tuple(slice(c, s) for s, c in zip(shape, pat.counts))
                np.minimum(nxt[dst], best[src] + (pat.min_platforms * _R_SCALE + 1), out=nxt[dst])
            nxt[nxt > _UNREACHABLE] = _UNREACHABLE
            best = nxt
    return best


class FullInfoSolver:
    def __init__(self, catalog: RailcarCatalog, node_budget: int = 10**7):
        self.catalog = catalog
        self.node_budget = node_budget
        self.placer = _Placer(catalog)
        L = catalog.n_lengths
        self._sub: list[dict[tuple[int, ...], tuple[tuple[int, ...], int]]] = []
        for pats in catalog.patterns_by_type:
            # partial count vector -> (max extra per length, max extra total)
            table: dict[tuple[int, ...], tuple[list[int], int]] = {}
            for pat in pats:
                for part in np.ndindex(*(c + 1 for c in pat.counts)):
                    extra = [c - q for c, q in zip(pat.counts, part)]
                    cur = table.get(part)
                    if cur is None:
                        table[part] = (extra, sum(extra))
                    else:
                        table[part] = ([max(a, b) for a, b in zip(cur[0], extra)], max(cur[1], sum(extra)))
            self._sub.append({k: (tuple(v[0]), v[1]) for k, v in table.items()})
        self._empty = [self._sub[j].get((0,) * L, ((0,) * L, 0)) for j in range(catalog.n_types)]

    # -- public -------------------------------------------------------------

    def solve(self, instance: Instance) -> OperationalSolution:
        if instance.weights is None:
            raise ValueError("full-information solve needs container weights")
        cat = self.catalog
        if len(instance.railcars) != cat.n_types or len(instance.containers) != cat.n_lengths:
            raise ValueError("instance dimensions do not match the catalog")
        budget = _Budget(self.node_budget)
        self.placer.reset()
        self._geo_memo: dict = {}
        # lightest first within each length; remember original positions
        order = [sorted(range(len(w)), key=lambda i: (w[i], i)) for w in instance.weights]
        sorted_w = [[instance.weights[l][i] for i in order[l]] for l in range(cat.n_lengths)]
        incumbent = self._greedy(instance.railcars, sorted_w)
        best: list = [incumbent, incumbent_key(incumbent, cat)]

        try:
            for target, floor in self._targets(instance, sorted_w):
                if -sum(target) > best[1][0]:
                    break  # every remaining target loads fewer containers than the incumbent
                if (-sum(target),) + floor >= best[1]:
                    continue
                self._pack(target, floor, instance.railcars, sorted_w, best, budget)
        except _Exhausted:
            raise SolverTimeout(self._restore(best[0], order), budget.nodes) from None
        return self._restore(best[0], order)

    # -- internals ----------------------------------------------------------

    def _targets(self, instance: Instance, sorted_w):
        """Candidate loaded-count vectors with their (platforms, railcars) floor, best first."""
        cat = self.catalog
        floor = geometric_floor(cat, instance.railcars, instance.containers)
        cap_total = sum(n * rt.weight_cap for n, rt in zip(instance.railcars, cat.railcar_types))
        prefix = [np.concatenate(([0.0], np.cumsum(w))) for w in sorted_w]
        cands = []
        for idx in zip(*np.nonzero(floor < _UNREACHABLE)):
            k = tuple(int(x) for x in idx)
            if sum(prefix[l][k[l]] for l in range(len(k))) > cap_total + EPS:
                continue
            code = int(floor[idx])
            cands.append((k, (code // _R_SCALE, code % _R_SCALE)))
        cands.sort(key=lambda kc: (-sum(kc[0]), kc[1], tuple(-x for x in kc[0])))
        return cands

    def _completion(self, partials: tuple, unopened: tuple, rem: tuple) -> tuple[int, int] | None:
        """Lex-least geometric (platforms, railcars) for finishing a partial plan, ignoring weights.

        ``partials`` are the open railcars as (type, counts); each must end on a
        pattern. Fresh railcars may take any pattern or stay empty.
        """
        key = (partials, unopened, rem)
        hit = self._geo_memo.get(key, False)
        if hit is not False:
            return hit
        shape = tuple(r + 1 for r in rem)
        best = np.full(shape, _UNREACHABLE, dtype=np.int64)
        best[(0,) * len(shape)] = 0

        def shifted(src, delta, add, into):
            if any(d >= s for d, s in zip(delta, shape)):
                return
            a = tuple(slice(0, s - d) for s, d in zip(shape, delta))
            b = tuple(slice(d, s) for s, d in zip(shape, delta))
            np.minimum(into[b], src[a] + add, out=into[b])

        for j, q in partials:
            nxt = np.full(shape, _UNREACHABLE, dtype=np.int64)
            for pat in self.catalog.patterns_by_type[j]:
                if all(c >= x for c, x in zip(pat.counts, q)):
                    delta = tuple(c - x for c, x in zip(pat.counts, q))
                    shifted(best, delta, pat.min_platforms * _R_SCALE + 1, nxt)
            best = nxt
        for j, u in enumerate(unopened):
            for _ in range(u):
                nxt = best.copy()
                for pat in self.catalog.patterns_by_type[j]:
                    shifted(best, pat.counts, pat.min_platforms * _R_SCALE + 1, nxt)
                best = nxt
        code = int(best[rem])
        out = None if code >= _UNREACHABLE else (code // _R_SCALE, code % _R_SCALE)
        self._geo_memo[key] = out
        return out

    def _pack(self, target, floor, railcars, sorted_w, best, budget) -> None:
        cat = self.catalog
        types = cat.railcar_types
        items = [(l, sorted_w[l][i], i) for l in range(len(target)) for i in range(target[l])]
        items.sort(key=lambda t: (-t[1], t[0], t[2]))
        n_items = len(items)
        suffix_w = [0.0] * (n_items + 1)
        suffix_n = [[0] * len(target) for _ in range(n_items + 1)]
        for k in range(n_items - 1, -1, -1):
            suffix_w[k] = suffix_w[k + 1] + items[k][1]
            suffix_n[k] = list(suffix_n[k + 1])
            suffix_n[k][items[k][0]] += 1
        L = len(target)
        unopened = list(railcars)
        # open railcar: [type, counts(list), weight, items(list of (l, w, i))]
        open_cars: list[list] = []
        placer = self.placer

        def absorb(k: int, slots: int, room: float) -> float:
            # most weight a railcar with `slots` free slots and `room` tonnes can take from items[k:]
            return min(room, suffix_w[k] - suffix_w[min(n_items, k + slots)])

        def bound_ok(k: int) -> bool:
            rem_n = suffix_n[k]
            rem_tot = n_items - k
            rem_w = suffix_w[k]
            cap_l = [0] * L
            cap_tot = 0
            soak = 0.0
            plat_lb = 0
            odd = 0
            for car in open_cars:
                extra, etot = self._sub[car[0]][tuple(car[1])]
                for l in range(L):
                    cap_l[l] += extra[l]
                cap_tot += etot
                soak += absorb(k, etot, types[car[0]].weight_cap - car[2])
                n = len(car[3])
                f = placer.floor(types[car[0]], tuple((a, b) for a, b, _ in car[3]))
                plat_lb += f
                odd += 2 * f - n
            short_n = rem_tot - cap_tot
            short_w = rem_w - soak
            fresh = []
            for j, u in enumerate(unopened):
                if u:
                    extra, etot = self._empty[j]
                    for l in range(L):
                        cap_l[l] += u * extra[l]
                    cap_tot += u * etot
                    a = absorb(k, etot, types[j].weight_cap)
                    soak += u * a
                    fresh.extend([(etot, a)] * u)
            if rem_tot > cap_tot or any(rem_n[l] > cap_l[l] for l in range(L)):
                return False
            if rem_w > soak + EPS:
                return False
            # fewest fresh railcars that could cover the slot and weight shortfall
            extra_cars = 0
            if short_n > 0 or short_w > EPS:
                by_n = sorted((f[0] for f in fresh), reverse=True)
                by_w = sorted((f[1] for f in fresh), reverse=True)
                need_n = need_w = 0
                acc = 0
                while acc < short_n:
                    acc += by_n[need_n]
                    need_n += 1
                accw = 0.0
                while accw < short_w - EPS and need_w < len(by_w):
                    accw += by_w[need_w]
                    need_w += 1
                extra_cars = max(need_n, need_w)
            plat_lb += max(0, math.ceil((rem_tot - odd) / 2))
            key = (-n_items, max(plat_lb, floor[0]), max(len(open_cars) + extra_cars, floor[1]))
            if key >= best[1]:
                return False
            partials = tuple(sorted((car[0], tuple(car[1])) for car in open_cars))
            geo = self._completion(partials, tuple(unopened), tuple(rem_n))
            if geo is None:
                return False
            return max(key, (-n_items,) + geo) < best[1]

        def leaf() -> None:
            loads = []
            plats = 0
            for car in open_cars:
                pat = cat.find_pattern(car[0], car[1])
                if pat is None:
                    return
                its = tuple((l, w) for l, w, _ in car[3])
                res = placer.place(types[car[0]], its, relaxed=False)
                if res is None:
                    return
                plats += res[0]
                loads.append((car[0], pat, list(car[3]), res[1]))
            key = (-n_items, plats, len(open_cars))
            if key < best[1]:
                best[0] = loads
                best[1] = key

        def rec(k: int) -> None:
            if budget.tick():
                raise _Exhausted
            if k == n_items:
                leaf()
                return
            if not bound_ok(k):
                return
            l, w, i = items[k]
            # existing railcars first, in opening order
            for car in open_cars:
                j = car[0]
                car[1][l] += 1
                if tuple(car[1]) in self._sub[j] and car[2] + w <= types[j].weight_cap + EPS:
                    its = tuple((a, b) for a, b, _ in car[3]) + ((l, w),)
                    if placer.place(types[j], its, relaxed=True) is not None:
                        car[2] += w
                        car[3].append(items[k])
                        rec(k + 1)
                        car[3].pop()
                        car[2] -= w
                car[1][l] -= 1
            # one fresh railcar per type (fresh railcars of a type are interchangeable)
            for j, u in enumerate(unopened):
                if not u:
                    continue
                start = [0] * L
                start[l] = 1
                if tuple(start) not in self._sub[j] or w > types[j].weight_cap + EPS:
                    continue
                if placer.place(types[j], ((l, w),), relaxed=True) is None:
                    continue
                unopened[j] -= 1
                open_cars.append([j, start, w, [items[k]]])
                rec(k + 1)
                open_cars.pop()
                unopened[j] += 1

        if n_items == 0:
            key = (0, 0, 0)
            if key < best[1]:
                best[0], best[1] = [], key
            return
        rec(0)

    def _greedy(self, railcars, sorted_w):
        """Quick feasible plan: each railcar takes its largest pattern that fits the lightest leftovers."""
        cat = self.catalog
        used = [0] * cat.n_lengths
        loads = []
        for j, n in enumerate(railcars):
            rt = cat.railcar_types[j]
            pats = sorted(cat.patterns_by_type[j], key=lambda p: (-p.n_containers, p.local_index))
            for _ in range(n):
                for pat in pats:
                    if any(used[l] + c > len(sorted_w[l]) for l, c in enumerate(pat.counts)):
                        continue
                    its = [(l, sorted_w[l][used[l] + q], used[l] + q) for l, c in enumerate(pat.counts) for q in range(c)]
                    res = self.placer.place(rt, tuple((a, b) for a, b, _ in its), relaxed=False)
                    if res is None:
                        continue
                    loads.append((j, pat, its, res[1]))
                    for l, c in enumerate(pat.counts):
                        used[l] += c
                    break
        return loads

    def _restore(self, loads, order) -> OperationalSolution:
        out = []
        for j, pat, its, slots in loads:
            def pos(k):
                if k < 0:
                    return None
                l, _, i = its[k]
                return (l, order[l][i])
            out.append(RailcarLoad(j, pat.global_index, tuple((pos(b), pos(t)) for b, t in slots)))
        out.sort(key=lambda ld: (ld.railcar_type, ld.pattern, ld.slots))
        return OperationalSolution(tuple(out))


def incumbent_key(loads, catalog: RailcarCatalog) -> tuple[int, int, int]:
    n = sum(pat.n_containers for _, pat, _, _ in loads)
    plats = sum(sum(1 for b, t in slots if b >= 0 or t >= 0) for _, _, _, slots in loads)
    return (-n, plats, len(loads))


_SOLVERS: dict[tuple[str, int], FullInfoSolver] = {}


def solve_full_info(instance: Instance, catalog: RailcarCatalog, node_budget: int = 10**7) -> OperationalSolution:
    """Exact optimum of the lexicographic objective; raises SolverTimeout past ``node_budget``."""
    key = (catalog.hash, node_budget)
    solver = _SOLVERS.get(key)
    if solver is None:
        if len(_SOLVERS) > 8:
            _SOLVERS.clear()
        solver = _SOLVERS[key] = FullInfoSolver(catalog, node_budget)
    return solver.solve(instance)


# ---------------------------------------------------------------------------
# feasibility and cost


def check_solution(instance: Instance, solution: OperationalSolution, catalog: RailcarCatalog) -> None:
    """Raise FeasibilityError naming the first violated constraint."""
    if instance.weights is None:
        raise FeasibilityError("weights missing")
    seen: set[Slot] = set()
    used = [0] * catalog.n_types
    for ld in solution.loads:
        rt = catalog.railcar_types[ld.railcar_type]
        used[ld.railcar_type] += 1
        if len(ld.slots) != rt.n_platforms:
            raise FeasibilityError(f"railcar type {rt.index}: slot layout has wrong platform count")
        counts = [0] * catalog.n_lengths
        total = 0.0
        for spec, (b, t) in zip(rt.platforms, ld.slots):
            if t is not None and b is None:
                raise FeasibilityError(f"railcar type {rt.index}: top container without bottom")
            plat = 0.0
            for s, allowed in ((b, spec.allowed_bottom), (t, spec.allowed_top)):
                if s is None:
                    continue
                l, i = s
                if l not in allowed:
                    raise FeasibilityError(f"railcar type {rt.index}: length class {l} not allowed in slot")
                if not 0 <= i < instance.containers[l]:
                    raise FeasibilityError(f"container ({l}, {i}) does not exist")
                if s in seen:
                    raise FeasibilityError(f"container ({l}, {i}) loaded twice")
                seen.add(s)
                counts[l] += 1
                plat += instance.weights[l][i]
            if plat > spec.weight_cap + EPS:
                raise FeasibilityError(f"railcar type {rt.index}: platform weight cap exceeded")
            total += plat
        if total > rt.weight_cap + EPS:
            raise FeasibilityError(f"railcar type {rt.index}: railcar weight cap exceeded")
        pat = catalog.patterns[ld.pattern]
        if pat.railcar_type != rt.index or tuple(counts) != pat.counts:
            raise FeasibilityError(f"railcar type {rt.index}: slots do not realise pattern {ld.pattern}")
    for j, (u, n) in enumerate(zip(used, instance.railcars)):
        if u > n:
            raise FeasibilityError(f"railcar availability exceeded for type {j}: {u} > {n}")


def check_description(instance: Instance, description: SolutionDescription, catalog: RailcarCatalog) -> None:
    """Availability check for a tactical description (weights are not considered)."""
    for p in description.patterns:
        if not 0 <= p < catalog.n_patterns:
            raise FeasibilityError(f"unknown pattern index {p}")
    for j, (u, n) in enumerate(zip(description.railcar_usage(catalog), instance.railcars)):
        if u > n:
            raise FeasibilityError(f"railcar availability exceeded for type {j}: {u} > {n}")
    for l, (u, n) in enumerate(zip(description.container_usage(catalog), instance.containers)):
        if u > n:
            raise FeasibilityError(f"container availability exceeded for length class {l}: {u} > {n}")


def cost(instance: Instance, solution, catalog: RailcarCatalog) -> Cost:
    """Cost tuple of an operational plan or a description.

    For a description the platform count is each pattern's minimal occupied
    platform count.
    """
    if isinstance(solution, OperationalSolution):
        check_solution(instance, solution, catalog)
        return solution.cost()
    check_description(instance, solution, catalog)
    pats: list[LoadPattern] = [catalog.patterns[p] for p in solution.patterns]
    return Cost(
        sum(p.n_containers for p in pats),
        sum(p.min_platforms for p in pats),
        len(pats),
    )
