"""Brute-force reference implementations used only by the tests.

Nothing here shares code with the package's solvers; each routine enumerates
its search space exhaustively.
"""
from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


def patterns_by_slot_fillings(railcar, n_lengths):
    seen = set()
    per_platform = []
    for p in railcar.platforms:
        opts = [(None, None)]
        for b in p.allowed_bottom:
            opts.append((b, None))
            for t in p.allowed_top:
                opts.append((b, t))
        per_platform.append(opts)
    for combo in itertools.product(*per_platform):
        vec = [0] * n_lengths
        for b, t in combo:
            for s in (b, t):
                if s is not None:
                    vec[s] += 1
        if any(vec):
            seen.add(tuple(vec))
    return seen


def railcar_min_platforms(railcar, items):
    """Fewest occupied platforms over all slot assignments of (length, weight) items, or None."""
    slots = [(p, lvl) for p in range(len(railcar.platforms)) for lvl in (0, 1)]
    if sum(w for _, w in items) > railcar.weight_cap + 1e-9:
        return None
    best = None
    for perm in itertools.permutations(slots, len(items)):
        ok = True
        loads = [0.0] * len(railcar.platforms)
        has = [[False, False] for _ in railcar.platforms]
        for (length, w), (p, lvl) in zip(items, perm):
            spec = railcar.platforms[p]
            allowed = spec.allowed_bottom if lvl == 0 else spec.allowed_top
            if length not in allowed:
                ok = False
                break
            loads[p] += w
            has[p][lvl] = True
        if not ok:
            continue
        if any(loads[p] > railcar.platforms[p].weight_cap + 1e-9 for p in range(len(loads))):
            continue
        if any(h[1] and not h[0] for h in has):
            continue
        occ = sum(1 for h in has if h[0] or h[1])
        if best is None or occ < best:
            best = occ
    return best


def exhaustive_optimum(instance, catalog):
    """Best (loaded, platforms, railcars) over every container-to-railcar map."""
    cars = [j for j, n in enumerate(instance.railcars) for _ in range(n)]
    conts = [(l, w) for l, ws in enumerate(instance.weights) for w in ws]

    @lru_cache(maxsize=None)
    def car_cost(j, items):
        if not items:
            return 0
        return railcar_min_platforms(catalog.railcar_types[j], items)

    best = (0, 0, 0)
    best_key = (0, 0, 0)
    for assign in itertools.product(range(len(cars) + 1), repeat=len(conts)):
        groups = [[] for _ in cars]
        for c, a in zip(conts, assign):
            if a < len(cars):
                groups[a].append(c)
        plats = 0
        used = 0
        ok = True
        for j, g in zip(cars, groups):
            if not g:
                continue
            occ = car_cost(j, tuple(sorted(g)))
            if occ is None:
                ok = False
                break
            plats += occ
            used += 1
        if not ok:
            continue
        loaded = sum(len(g) for g in groups)
        key = (-loaded, plats, used)
        if key < best_key or best == (0, 0, 0) and key == (0, 0, 0):
            best_key = key
            best = (loaded, plats, used)
    return best


def brute_assignment_min(actual, predicted):
    """Minimum L1 matching cost between two equal-length lists of count vectors."""
    k = len(actual)
    best = math.inf
    for perm in itertools.permutations(range(k)):
        c = sum(sum(abs(a - b) for a, b in zip(actual[perm[i]], predicted[i])) for i in range(k))
        best = min(best, c)
    return 0 if k == 0 else best


def central_difference(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def enumerate_masked_sequences(catalog, x_a, logprob_fn, max_len):
    """All mask-consistent output sequences with their joint masked log-probabilities.

    ``logprob_fn(prefix)`` gives unnormalised log-weights over the output
    vocabulary; masking and renormalisation are recomputed here from the
    output-syntax rules directly.
    """
    P = catalog.n_patterns
    EOS, BLANK = P, P + 1
    out = []

    def feasible(prefix, rem_r, rem_c):
        pos = len(prefix)
        if prefix and prefix[-1] == BLANK:
            return [EOS]
        if pos == max_len - 1:
            return [EOS]
        ok = []
        for pat in catalog.patterns:
            if rem_r[pat.railcar_type] >= 1 and all(c <= r for c, r in zip(pat.counts, rem_c)):
                ok.append(pat.global_index)
        if pos >= 1:
            ok.append(EOS)
        if pos == 0:
            ok.append(BLANK)
        return ok

    def rec(prefix, score, rem_r, rem_c):
        toks = feasible(prefix, rem_r, rem_c)
        logits = np.asarray(logprob_fn(tuple(prefix)), dtype=float)
        sub = logits[toks]
        m = sub.max()
        lse = m + np.log(np.exp(sub - m).sum())
        for t, v in zip(toks, sub):
            s = score + (v - lse)
            if t == EOS:
                out.append((tuple(prefix) + (EOS,), s))
                continue
            if t == BLANK:
                rec(prefix + [t], s, rem_r, rem_c)
                continue
            pat = catalog.patterns[t]
            r2 = list(rem_r)
            r2[pat.railcar_type] -= 1
            c2 = [a - b for a, b in zip(rem_c, pat.counts)]
            rec(prefix + [t], s, r2, c2)

    rec([], 0.0, list(x_a.railcars), list(x_a.containers))
    return out


def random_small_instance(rng, max_railcars=3, max_containers=8, n_types=2):
    """Toy-sized instance with weights; half of them heavy enough that caps bind."""
    from loadcast.instances import Instance, sample_weights

    rc = [0] * n_types
    for _ in range(int(rng.integers(0, max_railcars + 1))):
        rc[int(rng.integers(n_types))] += 1
    nc = int(rng.integers(0, max_containers + 1))
    c40 = int(rng.integers(0, nc + 1))
    inst = sample_weights(Instance(tuple(rc), (c40, nc - c40)), rng)
    if rng.random() < 0.5:
        inst = inst.with_weights([[w * 1.6 for w in ws] for ws in inst.weights])
    return inst
