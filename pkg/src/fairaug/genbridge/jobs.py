"""Generation jobs: the file contract with the external image generator."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from ..errors import InvariantViolation, ValidationError
from ..manifest import DatasetManifest, SubgroupKey, assign_group

JOB_FIELDS = ("job_id", "donor_subject_id", "prompt", "mask_path", "target_group", "seed", "output_path")
HEADER = "# fairaug generation jobs v1: one JSON object per line"


@dataclass(frozen=True)
class GenerationJob:
    job_id: str
    donor_subject_id: str
    prompt: str
    mask_path: str
    target_group: SubgroupKey
    seed: int
    output_path: str

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "donor_subject_id": self.donor_subject_id,
            "prompt": self.prompt,
            "mask_path": self.mask_path,
            "target_group": self.target_group.to_dict(),
            "seed": self.seed,
            "output_path": self.output_path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationJob":
        missing = [f for f in JOB_FIELDS if f not in d]
        if missing:
            raise ValidationError(f"job is missing field(s) {missing}")
        return cls(
            job_id=str(d["job_id"]),
            donor_subject_id=str(d["donor_subject_id"]),
            prompt=str(d["prompt"]),
            mask_path=str(d["mask_path"]),
            target_group=SubgroupKey.from_dict(d["target_group"]),
            seed=int(d["seed"]),
            output_path=str(d["output_path"]),
        )


def format_jobs(jobs: Iterable[GenerationJob]) -> str:
    lines = [HEADER]
    lines += [json.dumps(j.to_dict(), sort_keys=True, ensure_ascii=False) for j in jobs]
    return "\n".join(lines) + "\n"


def emit_generation_jobs(plan, manifest: DatasetManifest, out_path: str | os.PathLike) -> Path:
    """Write the plan's jobs as JSONL, group-sorted then by job index.

    Every job is checked against ``manifest``: its donor must exist and belong
    to the job's target group.
    """
    donors = manifest.by_id()
    ids, seeds = set(), set()
    for job in plan.jobs:
        donor = donors.get(job.donor_subject_id)
        if donor is None:
            raise ValidationError(f"job {job.job_id}: donor {job.donor_subject_id!r} not in manifest")
        if assign_group(donor) != job.target_group:
            raise InvariantViolation(f"job {job.job_id}: donor group differs from target group")
        if job.job_id in ids or job.seed in seeds:
            raise InvariantViolation(f"job {job.job_id}: duplicate job id or seed")
        ids.add(job.job_id)
        seeds.add(job.seed)
    ordered = sorted(plan.jobs, key=lambda j: (j.target_group, j.job_id))
    out_path = Path(out_path)
    out_path.write_text(format_jobs(ordered), encoding="utf-8")
    return out_path


def read_jobs(path: str | os.PathLike) -> list[GenerationJob]:
    jobs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                jobs.append(GenerationJob.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad job line ({exc})") from exc
    return jobs
