"""Combine real training records with a chosen share of synthetic ones."""

from __future__ import annotations

from collections import Counter
from typing import Sequence

from .._alloc import water_fill
from .._common import make_rng, round_half_up
from ..errors import NotEnoughSynthetic
from ..manifest import DatasetManifest, SubgroupKey, SyntheticRecord, assign_group


def synthetic_count(n_real: int, fraction: float) -> int:
    """``round(f * R / (1 - f))`` so that ``s / (R + s)`` is as close to ``f`` as possible."""
    if not 0 <= fraction < 1:
        raise ValueError("synthetic fraction must lie in [0, 1)")
    return round_half_up(fraction * n_real / (1.0 - fraction))


def mix_datasets(
    real: DatasetManifest,
    synth: Sequence[SyntheticRecord],
    synth_fraction: float | None,
    seed: int = 42,
) -> DatasetManifest:
    """Real records followed by the selected synthetic records.

    ``synth_fraction=None`` keeps every synthetic record. Otherwise ``s``
    records are chosen one at a time for the group whose combined count is
    currently smallest (ties by group order) among groups with synthetic
    records left; within a group the order is a seeded shuffle.
    """
    if synth_fraction == 0:
        return real
    if synth_fraction is None:
        chosen = sorted(synth, key=lambda r: r.subject_id)
    else:
        s = synthetic_count(len(real), synth_fraction)
        chosen = _select(real, synth, s, seed)
    base = real.with_absolute_paths() if real.source_path else real
    return DatasetManifest(base.records + tuple(chosen), "", real.schema_version)


def _select(real: DatasetManifest, synth: Sequence[SyntheticRecord], s: int, seed: int) -> list[SyntheticRecord]:
    pools: dict[SubgroupKey, list[SyntheticRecord]] = {}
    for r in sorted(synth, key=lambda r: r.subject_id):
        pools.setdefault(assign_group(r), []).append(r)
    counts = Counter(assign_group(r) for r in real)

    if s > len(synth):
        groups = sorted(set(counts) | set(pools))
        ideal = water_fill({g: counts.get(g, 0) for g in groups}, s, groups)
        shortfall = {str(g): ideal[g] - len(pools.get(g, [])) for g in groups
                     if ideal[g] > len(pools.get(g, []))}
        raise NotEnoughSynthetic(s, len(synth), shortfall)

    groups = sorted(pools)
    for gi, g in enumerate(groups):
        order = make_rng(seed, gi).permutation(len(pools[g]))
        pools[g] = [pools[g][i] for i in order]
    current = {g: counts.get(g, 0) for g in groups}
    taken = {g: 0 for g in groups}
    chosen: list[SyntheticRecord] = []
    for _ in range(s):
        open_groups = [g for g in groups if taken[g] < len(pools[g])]
        g = min(open_groups, key=lambda k: (current[k], groups.index(k)))
        chosen.append(pools[g][taken[g]])
        taken[g] += 1
        current[g] += 1
    return sorted(chosen, key=lambda r: r.subject_id)
