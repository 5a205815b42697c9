"""Reconcile generator outputs with the job manifest."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image

from ..errors import AllOutputsMissing, ValidationError
from ..manifest import DatasetManifest, Split, SyntheticRecord, assign_group
from .jobs import GenerationJob, read_jobs


@dataclass
class IngestReport:
    n_jobs: int = 0
    ingested: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    corrupt: list[str] = field(default_factory=list)
    dimension_mismatch: list[str] = field(default_factory=list)
    group_mismatch: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_jobs": self.n_jobs,
            "n_ingested": len(self.ingested),
            "missing": self.missing,
            "corrupt": self.corrupt,
            "dimension_mismatch": self.dimension_mismatch,
            "group_mismatch": self.group_mismatch,
        }


def _image_size(path: Path) -> tuple[int, int]:
    with Image.open(path) as im:
        im.load()
        return im.size


def ingest_synthetic(
    jobs: list[GenerationJob] | str | os.PathLike,
    images_dir: str | os.PathLike,
    manifest: DatasetManifest,
    size: int | None = None,
) -> tuple[list[SyntheticRecord], IngestReport]:
    """Turn finished jobs into synthetic records; problems go into the report.

    An output is accepted when it exists, decodes, and has the donor mask's
    dimensions (or ``size x size`` when the generator upscaled). Records
    inherit the donor's demographics and frame metadata.
    """
    if not isinstance(jobs, list):
        jobs = read_jobs(jobs)
    images_dir = Path(images_dir)
    donors = manifest.by_id()
    report = IngestReport(n_jobs=len(jobs))
    records: list[SyntheticRecord] = []
    for job in jobs:
        donor = donors.get(job.donor_subject_id)
        if donor is None:
            raise ValidationError(f"job {job.job_id}: donor {job.donor_subject_id!r} not in manifest")
        if assign_group(donor) != job.target_group:
            report.group_mismatch.append(job.job_id)
            continue
        path = images_dir / job.output_path
        if not path.is_file():
            report.missing.append(job.job_id)
            continue
        try:
            got = _image_size(path)
        except (OSError, ValueError, SyntaxError):
            report.corrupt.append(job.job_id)
            continue
        if size:
            expected = (size, size)
        else:
            try:
                expected = _image_size(Path(job.mask_path))
            except (OSError, ValueError, SyntaxError):
                report.corrupt.append(job.job_id)
                continue
        if got != expected:
            report.dimension_mismatch.append(job.job_id)
            continue
        records.append(SyntheticRecord(
            subject_id=job.job_id, sex=donor.sex, age=donor.age, bmi=donor.bmi,
            diagnosis=donor.diagnosis, image_path=str(path.resolve()), mask_path=job.mask_path,
            ed_frame=donor.ed_frame, es_frame=donor.es_frame, n_slices=donor.n_slices,
            n_frames=donor.n_frames, split=Split.TRAIN, source_job_id=job.job_id,
        ))
        report.ingested.append(job.job_id)
    if jobs and not records:
        raise AllOutputsMissing(f"none of the {len(jobs)} job outputs could be ingested")
    return records, report
