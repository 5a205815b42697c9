from __future__ import annotations

from typing import Hashable, Mapping, Sequence, TypeVar

K = TypeVar("K", bound=Hashable)


def water_fill(counts: Mapping[K, int], total: int, order: Sequence[K] | None = None) -> dict[K, int]:
    """Distribute ``total`` extra units so the smallest groups are raised first.

    Equivalent to adding one unit at a time to the currently smallest group,
    ties going to the group that comes first in ``order`` (default: sorted
    keys), but computed in closed form from the final fill level.
    """
    keys = list(order) if order is not None else sorted(counts)
    if total < 0:
        raise ValueError("total must be non-negative")
    if not keys:
        if total:
            raise ValueError("no groups to distribute into")
        return {}
    if total == 0:
        return {k: 0 for k in keys}

    levels = sorted(counts[k] for k in keys)
    # Highest integer level L with sum(max(0, L - c)) <= total.
    level, used, i = levels[0], 0, 0
    n = len(levels)
    while True:
        while i < n and levels[i] <= level:
            i += 1
        nxt = levels[i] if i < n else None
        cost_per_step = i
        if nxt is None:
            steps = (total - used) // cost_per_step
            level += steps
            used += steps * cost_per_step
            break
        need = (nxt - level) * cost_per_step
        if used + need > total:
            steps = (total - used) // cost_per_step
            level += steps
            used += steps * cost_per_step
            break
        used += need
        level = nxt

    alloc = {k: max(0, level - counts[k]) for k in keys}
    leftover = total - sum(alloc.values())
    for k in keys:
        if leftover == 0:
            break
        if counts[k] + alloc[k] == level:
            alloc[k] += 1
            leftover -= 1
    return alloc
