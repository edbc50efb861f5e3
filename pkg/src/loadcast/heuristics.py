"""Weight-blind reference predictors."""
from __future__ import annotations

from .catalog import RailcarCatalog
from .instances import Instance
from .oracle import SolutionDescription


def fill_largest(x_a: Instance, catalog: RailcarCatalog) -> SolutionDescription:
    """Each railcar, in type order, takes the largest pattern the remaining containers allow.

    Ties prefer fewer platforms, then the lower pattern index.
    """
    rem = list(x_a.containers)
    chosen = []
    for j, n in enumerate(x_a.railcars):
        pats = sorted(catalog.patterns_by_type[j], key=lambda p: (-p.n_containers, p.min_platforms, p.local_index))
        for _ in range(n):
            for pat in pats:
                if all(c <= r for c, r in zip(pat.counts, rem)):
                    chosen.append(pat.global_index)
                    rem = [r - c for r, c in zip(rem, pat.counts)]
                    break
    return SolutionDescription.of(chosen)
