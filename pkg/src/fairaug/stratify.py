"""Subgroup populations, SW/SSW sampling weights and debiasing plans."""

from __future__ import annotations

import csv
import enum
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Union

import numpy as np

from ._alloc import water_fill
from ._common import fmt_float, make_rng, round_half_up
from .errors import EmptyCell, InvariantViolation, NoDonorInGroup, SampleLargerThanPopulation
from .genbridge.jobs import GenerationJob
from .genbridge.prompts import assemble_prompt
from .manifest import (
    DatasetManifest,
    SubgroupKey,
    SubjectRecord,
    all_subgroup_keys,
    assign_group,
)

ATTRIBUTES = ("sex", "age_bin", "bmi_bin", "diagnosis")


@dataclass(frozen=True)
class StratificationReport:
    counts: dict[SubgroupKey, int]
    total: int
    marginals: dict[str, dict[str, int]]

    def all_counts(self) -> dict[SubgroupKey, int]:
        """Counts for all 36 cells, absent cells reported as zero."""
        return {k: self.counts.get(k, 0) for k in all_subgroup_keys()}

    def to_dict(self, include_empty: bool = False) -> dict:
        counts = self.all_counts() if include_empty else self.counts
        return {
            "counts": {str(k): v for k, v in counts.items()},
            "total": self.total,
            "marginals": self.marginals,
            "n_groups_observed": len(self.counts),
        }


def stratification_report(manifest: DatasetManifest | Iterable[SubjectRecord]) -> StratificationReport:
    keys = [assign_group(r) for r in manifest]
    counts = dict(sorted(Counter(keys).items()))
    marginals: dict[str, dict[str, int]] = {a: {} for a in ATTRIBUTES} if keys else {}
    for k, n in counts.items():
        for attr in ATTRIBUTES:
            label = getattr(k, attr).value
            marginals[attr][label] = marginals[attr].get(label, 0) + n
    marginals = {a: dict(sorted(m.items())) for a, m in marginals.items()}
    report = StratificationReport(counts, len(keys), marginals)
    if sum(counts.values()) != report.total:
        raise InvariantViolation("group counts do not sum to total")
    return report


# -- weights ----------------------------------------------------------------

class WeightMode(enum.Enum):
    SW = "SW"    # cell = label
    SSW = "SSW"  # cell = (label, subgroup); the subgroup already contains the label


def weight_cell(record: SubjectRecord, mode: WeightMode):
    if mode is WeightMode.SW:
        return record.diagnosis
    return assign_group(record)


@dataclass(frozen=True)
class WeightTable:
    mode: WeightMode
    weights: dict[str, float]

    def to_csv(self) -> str:
        lines = ["subject_id,weight"] + [f"{sid},{fmt_float(w)}" for sid, w in self.weights.items()]
        return "\n".join(lines) + "\n"

    def write(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def read_weights(path: str | os.PathLike, mode: WeightMode | str = WeightMode.SSW) -> WeightTable:
    with open(path, newline="", encoding="utf-8") as fh:
        weights = {row["subject_id"]: float(row["weight"]) for row in csv.DictReader(fh)}
    return WeightTable(WeightMode(mode), weights)


def compute_weights(manifest: DatasetManifest, mode: WeightMode | str, cells: Iterable | None = None) -> WeightTable:
    """Inverse-frequency weights, ``(1/|c|) / n_cells`` for a member of cell ``c``.

    Sampling proportionally to these weights makes every non-empty cell equally
    likely. ``cells`` optionally lists the cells that must be populated;
    an empty one raises :class:`EmptyCell`.
    """
    mode = WeightMode(mode)
    cell_of = {r.subject_id: weight_cell(r, mode) for r in manifest}
    sizes = Counter(cell_of.values())
    if cells is not None:
        for c in cells:
            if sizes.get(c, 0) == 0:
                raise EmptyCell(f"weight cell {c} has no members")
    n_cells = len(sizes)
    weights = {sid: 1.0 / sizes[c] / n_cells for sid, c in cell_of.items()}
    return WeightTable(mode, weights)


def weighted_sample(
    weights: WeightTable | Mapping[str, float],
    n: int,
    seed: int,
    with_replacement: bool = True,
) -> list[str]:
    """Draw ``n`` subject ids proportionally to ``weights`` (need not be normalized)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    table = weights.weights if isinstance(weights, WeightTable) else weights
    ids = list(table)
    if n == 0:
        return []
    w = np.asarray([table[i] for i in ids], dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ValueError("weights must be finite, non-negative and not all zero")
    if not with_replacement and n > np.count_nonzero(w):
        raise SampleLargerThanPopulation(f"cannot draw {n} without replacement from {np.count_nonzero(w)} subjects")
    rng = make_rng(seed)
    idx = rng.choice(len(ids), size=n, replace=with_replacement, p=w / w.sum())
    return [ids[i] for i in idx]


# -- debias plan ------------------------------------------------------------

@dataclass(frozen=True)
class EqualizeToMax:
    """Fill every observed group up to the size of the largest one."""

    def to_dict(self) -> dict:
        return {"name": "equalize_to_max"}


@dataclass(frozen=True)
class SyntheticFraction:
    """Add ``s`` synthetic records, distributed smallest-group-first.

    ``basis="combined"``: synthetic share of the combined set is ``fraction``,
    ``s = round(fraction * R / (1 - fraction))``.
    ``basis="additive"``: ``s = round(fraction * R)``.
    """

    fraction: float
    basis: str = "combined"

    def __post_init__(self):
        if not 0 <= self.fraction < 1:
            raise ValueError("fraction must lie in [0, 1)")
        if self.basis not in ("combined", "additive"):
            raise ValueError("basis must be 'combined' or 'additive'")

    def n_synthetic(self, n_real: int) -> int:
        if self.basis == "additive":
            return round_half_up(self.fraction * n_real)
        return round_half_up(self.fraction * n_real / (1 - self.fraction))

    def to_dict(self) -> dict:
        return {"name": "synthetic_fraction", "fraction": self.fraction, "basis": self.basis}


Strategy = Union[EqualizeToMax, SyntheticFraction]


def strategy_from_dict(d: dict) -> Strategy:
    if d["name"] == "equalize_to_max":
        return EqualizeToMax()
    return SyntheticFraction(float(d["fraction"]), d.get("basis", "combined"))


@dataclass(frozen=True)
class DebiasPlan:
    target_per_group: dict[SubgroupKey, int]
    synthetic_needed: dict[SubgroupKey, int]
    jobs: list[GenerationJob]
    strategy: Strategy
    seed: int = 0
    counts: dict[SubgroupKey, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.to_dict(),
            "seed": self.seed,
            "counts": {str(k): v for k, v in self.counts.items()},
            "target_per_group": {str(k): v for k, v in self.target_per_group.items()},
            "synthetic_needed": {str(k): v for k, v in self.synthetic_needed.items()},
            "n_jobs": len(self.jobs),
            "jobs": [j.to_dict() for j in self.jobs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DebiasPlan":
        def keyed(m):
            return {SubgroupKey.parse(k): int(v) for k, v in sorted(m.items())}
        return cls(
            target_per_group=keyed(d["target_per_group"]),
            synthetic_needed=keyed(d["synthetic_needed"]),
            jobs=[GenerationJob.from_dict(j) for j in d["jobs"]],
            strategy=strategy_from_dict(d["strategy"]),
            seed=int(d["seed"]),
            counts=keyed(d.get("counts", {})),
        )


def donor_mask_file(manifest: DatasetManifest, record: SubjectRecord) -> Path:
    """2-D mask used for a donor: the central slice at the ED frame when the
    stored mask path is a per-slice directory, else the file itself."""
    from .preprocess import central_slice, frame_filename

    p = Path(os.path.normpath(manifest.resolve(record.mask_path)))
    if p.suffix.lower() == ".png":
        return p
    return p / frame_filename(central_slice(record.n_slices), record.ed_frame)


def _distinct_seeds(seed: int, n: int) -> list[int]:
    rng = make_rng(seed, 0x5EED)
    out: list[int] = []
    seen: set[int] = set()
    while len(out) < n:
        for s in rng.integers(0, 2**31 - 1, size=n - len(out)).tolist():
            if s not in seen:
                seen.add(s)
                out.append(s)
    return out


def build_debias_plan(
    report: StratificationReport,
    manifest: DatasetManifest,
    strategy: Strategy,
    seed: int,
    healthy_clause: bool = False,
) -> DebiasPlan:
    """Targets per group plus one generation job per missing record.

    Jobs only reuse prompts and masks of real records from the same group.
    Each group's donors are shuffled with a seeded generator and then used
    round-robin, so every donor contributes once before any repeats.
    """
    counts = dict(report.counts)
    groups = sorted(counts)
    if isinstance(strategy, EqualizeToMax):
        top = max(counts.values(), default=0)
        target = {g: top for g in groups}
    else:
        extra = water_fill(counts, strategy.n_synthetic(report.total), groups) if groups else {}
        target = {g: counts[g] + extra.get(g, 0) for g in groups}
    needed = {g: max(0, target[g] - counts[g]) for g in groups}

    members: dict[SubgroupKey, list[SubjectRecord]] = {g: [] for g in groups}
    for r in manifest:
        g = assign_group(r)
        if g in members:
            members[g].append(r)

    seeds = _distinct_seeds(seed, sum(needed.values()))
    jobs: list[GenerationJob] = []
    for gi, g in enumerate(groups):
        if needed[g] == 0:
            continue
        donors = sorted(members[g], key=lambda r: r.subject_id)
        if not donors:
            raise NoDonorInGroup(f"group {g} needs {needed[g]} synthetic records but has no real members")
        order = make_rng(seed, gi).permutation(len(donors))
        for j in range(needed[g]):
            donor = donors[order[j % len(donors)]]
            job_id = f"syn_{g}_{j:05d}"
            jobs.append(GenerationJob(
                job_id=job_id,
                donor_subject_id=donor.subject_id,
                prompt=assemble_prompt(donor, healthy_clause=healthy_clause),
                mask_path=str(donor_mask_file(manifest, donor)),
                target_group=g,
                seed=seeds[len(jobs)],
                output_path=f"{job_id}.png",
            ))
    return DebiasPlan(target, needed, jobs, strategy, seed, counts)
