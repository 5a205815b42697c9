"""Dataset manifest: subject records, subgroup binning and stratified splits.

The manifest is a UTF-8 CSV with header::

    subject_id,sex,age,bmi,diagnosis,image_path,mask_path,ed_frame,es_frame,n_slices,n_frames[,split]

``sex`` is ``F``/``M``, ``diagnosis`` is ``HF``/``healthy``, ``split`` is
``train``/``val``/``test`` (or empty). Synthetic records produced by
:mod:`fairaug.genbridge` add ``origin`` and ``source_job_id`` columns.
Relative paths are resolved against the manifest's own directory.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import os
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from ._common import make_rng
from .errors import (
    DuplicateSubjectId,
    EmptyManifest,
    FrameIndexOutOfRange,
    InvalidValue,
    ManifestError,
    MissingColumn,
    UnparsableValue,
)

SCHEMA_VERSION = "1"

REQUIRED_COLUMNS = (
    "subject_id", "sex", "age", "bmi", "diagnosis", "image_path", "mask_path",
    "ed_frame", "es_frame", "n_slices", "n_frames",
)
OPTIONAL_COLUMNS = ("split", "origin", "source_job_id")


class _OrderedEnum(enum.Enum):
    """Enum ordered by declaration, so keys sort deterministically."""

    def _index(self):
        return list(type(self)).index(self)

    def __lt__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self._index() < other._index()


class Sex(_OrderedEnum):
    FEMALE = "F"
    MALE = "M"

    @property
    def word(self) -> str:
        return "Female" if self is Sex.FEMALE else "Male"


class Diagnosis(_OrderedEnum):
    HEART_FAILURE = "HF"
    HEALTHY = "healthy"

    @property
    def label(self) -> int:
        return 1 if self is Diagnosis.HEART_FAILURE else 0


class AgeBin(_OrderedEnum):
    UNDER_60 = "under60"
    FROM_60_TO_70 = "60to70"
    OVER_70 = "over70"


class BmiBin(_OrderedEnum):
    UNDER_25 = "under25"
    FROM_25_TO_30 = "25to30"
    OVER_30 = "over30"


class Split(_OrderedEnum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    sex: Sex
    age: int
    bmi: float
    diagnosis: Diagnosis
    image_path: str
    mask_path: str
    ed_frame: int
    es_frame: int
    n_slices: int
    n_frames: int
    split: Split | None = None

    @property
    def label(self) -> int:
        return self.diagnosis.label

    @property
    def is_synthetic(self) -> bool:
        return False


@dataclass(frozen=True)
class SyntheticRecord(SubjectRecord):
    """A generated image carrying its donor's demographics verbatim."""

    origin: str = "synthetic"
    source_job_id: str = ""

    @property
    def is_synthetic(self) -> bool:
        return True


@dataclass(frozen=True, order=True)
class SubgroupKey:
    sex: Sex
    age_bin: AgeBin
    bmi_bin: BmiBin
    diagnosis: Diagnosis

    def __str__(self) -> str:
        return f"{self.sex.value}_{self.age_bin.value}_{self.bmi_bin.value}_{self.diagnosis.value}"

    def to_dict(self) -> dict:
        return {
            "sex": self.sex.value,
            "age_bin": self.age_bin.value,
            "bmi_bin": self.bmi_bin.value,
            "diagnosis": self.diagnosis.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubgroupKey":
        return cls(Sex(d["sex"]), AgeBin(d["age_bin"]), BmiBin(d["bmi_bin"]), Diagnosis(d["diagnosis"]))

    @classmethod
    def parse(cls, text: str) -> "SubgroupKey":
        sex, age, bmi, diag = text.split("_")
        return cls(Sex(sex), AgeBin(age), BmiBin(bmi), Diagnosis(diag))


def all_subgroup_keys() -> list[SubgroupKey]:
    """The 2 x 3 x 3 x 2 = 36 cells, in sort order."""
    return [
        SubgroupKey(s, a, b, d)
        for s in Sex for a in AgeBin for b in BmiBin for d in Diagnosis
    ]


def age_bin(age: int) -> AgeBin:
    if age < 60:
        return AgeBin.UNDER_60
    if age < 70:
        return AgeBin.FROM_60_TO_70
    return AgeBin.OVER_70


def bmi_bin(bmi: float) -> BmiBin:
    if bmi < 25.0:
        return BmiBin.UNDER_25
    if bmi < 30.0:
        return BmiBin.FROM_25_TO_30
    return BmiBin.OVER_30


def assign_group(record: SubjectRecord) -> SubgroupKey:
    """Map a record onto its (sex, age bin, BMI bin, diagnosis) cell.

    Bins are half-open: age [0,60), [60,70), [70,inf) in integer years and
    BMI [0,25), [25,30), [30,inf).
    """
    return SubgroupKey(record.sex, age_bin(record.age), bmi_bin(record.bmi), record.diagnosis)


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[SubjectRecord, ...]
    source_path: str = ""
    schema_version: str = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for r in self.records:
            if r.subject_id in seen:
                raise DuplicateSubjectId(f"duplicate subject_id {r.subject_id!r}")
            seen.add(r.subject_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[SubjectRecord]:
        return iter(self.records)

    @property
    def base_dir(self) -> Path | None:
        return Path(self.source_path).resolve().parent if self.source_path else None

    def resolve(self, path: str) -> Path:
        """Absolute location of a path stored in this manifest."""
        p = Path(path)
        if p.is_absolute() or self.base_dir is None:
            return p
        return self.base_dir / p

    def by_id(self) -> dict[str, SubjectRecord]:
        return {r.subject_id: r for r in self.records}

    def subset(self, split: Split) -> "DatasetManifest":
        """Records of one split; records without a split count as training data."""
        keep = [r for r in self.records if (r.split or Split.TRAIN) is split]
        return replace(self, records=tuple(keep))

    def with_absolute_paths(self) -> "DatasetManifest":
        recs = [
            replace(r, image_path=str(self.resolve(r.image_path)), mask_path=str(self.resolve(r.mask_path)))
            for r in self.records
        ]
        return DatasetManifest(tuple(recs), "", self.schema_version)


# -- parsing ----------------------------------------------------------------

_INT_RE = re.compile(r"^[0-9]+$")
_DECIMAL_RE = re.compile(r"^[+-]?([0-9]+(\.[0-9]*)?|\.[0-9]+)([eE][+-]?[0-9]+)?$")


def _parse_int(row: int, field_name: str, text: str) -> int:
    if not _INT_RE.match(text):
        raise UnparsableValue(row, field_name, text)
    return int(text)


def _parse_decimal(row: int, field_name: str, text: str) -> float:
    if not _DECIMAL_RE.match(text):
        raise UnparsableValue(row, field_name, text)
    return float(text)


def _parse_row(row: int, d: dict[str, str]) -> SubjectRecord:
    sid = d["subject_id"]
    if not sid:
        raise InvalidValue("empty subject_id", row)
    try:
        sex = Sex(d["sex"])
    except ValueError:
        raise UnparsableValue(row, "sex", d["sex"]) from None
    try:
        diagnosis = Diagnosis(d["diagnosis"])
    except ValueError:
        raise UnparsableValue(row, "diagnosis", d["diagnosis"]) from None
    age = _parse_int(row, "age", d["age"])
    bmi = _parse_decimal(row, "bmi", d["bmi"])
    ed = _parse_int(row, "ed_frame", d["ed_frame"])
    es = _parse_int(row, "es_frame", d["es_frame"])
    n_slices = _parse_int(row, "n_slices", d["n_slices"])
    n_frames = _parse_int(row, "n_frames", d["n_frames"])
    split_text = d.get("split") or ""
    try:
        split = Split(split_text) if split_text else None
    except ValueError:
        raise UnparsableValue(row, "split", split_text) from None

    if not 0 <= age <= 120:
        raise InvalidValue(f"age {age} outside [0, 120]", row)
    if not (math.isfinite(bmi) and 5 < bmi < 100):
        raise InvalidValue(f"bmi {bmi} outside (5, 100)", row)
    if n_slices < 1 or n_frames < 1:
        raise InvalidValue("n_slices and n_frames must be >= 1", row)
    if ed >= n_frames:
        raise FrameIndexOutOfRange(f"ed_frame {ed} >= n_frames {n_frames}", row)
    if es >= n_frames:
        raise FrameIndexOutOfRange(f"es_frame {es} >= n_frames {n_frames}", row)
    if ed == es:
        raise InvalidValue("ed_frame equals es_frame", row)
    if not d["image_path"] or not d["mask_path"]:
        raise InvalidValue("empty image_path or mask_path", row)

    common = dict(
        subject_id=sid, sex=sex, age=age, bmi=bmi, diagnosis=diagnosis,
        image_path=d["image_path"], mask_path=d["mask_path"], ed_frame=ed,
        es_frame=es, n_slices=n_slices, n_frames=n_frames, split=split,
    )
    origin = d.get("origin") or "real"
    if origin == "synthetic":
        return SyntheticRecord(**common, source_job_id=d.get("source_job_id") or "")
    if origin != "real":
        raise UnparsableValue(row, "origin", origin)
    return SubjectRecord(**common)


def parse_manifest(text: str, source_path: str = "") -> DatasetManifest:
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise MissingColumn(f"missing column(s): {', '.join(missing)}")
    unknown = [c for c in header if c not in REQUIRED_COLUMNS + OPTIONAL_COLUMNS]
    if unknown:
        raise ManifestError(f"unknown column(s): {', '.join(unknown)}")

    records: list[SubjectRecord] = []
    issues: list[ManifestError] = []
    seen: dict[str, int] = {}
    for i, d in enumerate(reader, start=1):
        if None in d or any(v is None for v in d.values()):
            issues.append(ManifestError("wrong number of fields", i))
            continue
        d = {k: v.strip() for k, v in d.items()}
        try:
            rec = _parse_row(i, d)
        except ManifestError as exc:
            issues.append(exc)
            continue
        if rec.subject_id in seen:
            issues.append(DuplicateSubjectId(
                f"subject_id {rec.subject_id!r} already used at row {seen[rec.subject_id]}", i))
            continue
        seen[rec.subject_id] = i
        records.append(rec)

    if issues:
        first = issues[0]
        first.issues = issues
        raise first
    return DatasetManifest(tuple(records), source_path)


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Read and validate a manifest CSV.

    Every row is checked; on failure the first problem is raised and the
    complete list is available as ``exc.issues``.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_manifest(text, str(path))


def _relativize(manifest: DatasetManifest, stored: str, out_dir: Path) -> str:
    p = manifest.resolve(stored)
    if not p.is_absolute():
        return stored
    try:
        return os.path.relpath(p, out_dir)
    except ValueError:
        return str(p)


def format_manifest(manifest: DatasetManifest, out_dir: Path | None = None) -> str:
    recs = manifest.records
    header = list(REQUIRED_COLUMNS)
    if any(r.split is not None for r in recs):
        header.append("split")
    if any(r.is_synthetic for r in recs):
        header += ["origin", "source_job_id"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in recs:
        img, msk = r.image_path, r.mask_path
        if out_dir is not None:
            img = _relativize(manifest, img, out_dir)
            msk = _relativize(manifest, msk, out_dir)
        row = [
            r.subject_id, r.sex.value, str(r.age), repr(float(r.bmi)), r.diagnosis.value,
            img, msk, str(r.ed_frame), str(r.es_frame), str(r.n_slices), str(r.n_frames),
        ]
        if "split" in header:
            row.append(r.split.value if r.split else "")
        if "origin" in header:
            row += ["synthetic", r.source_job_id] if r.is_synthetic else ["real", ""]
        w.writerow(row)
    return buf.getvalue()


def write_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    """Write ``manifest`` as CSV; stored paths are rewritten relative to the new file."""
    path = Path(path)
    out_dir = path.resolve().parent
    path.write_text(format_manifest(manifest, out_dir), encoding="utf-8")


# -- splitting --------------------------------------------------------------

@dataclass(frozen=True)
class SplitAssignment:
    assignments: dict[str, Split]
    seed: int
    test_frac: float = 0.2
    val_frac_of_train: float = 0.2

    def counts(self) -> dict[Split, int]:
        out = {s: 0 for s in Split}
        for s in self.assignments.values():
            out[s] += 1
        return out

    def to_csv(self) -> str:
        lines = ["subject_id,split"]
        lines += [f"{sid},{s.value}" for sid, s in self.assignments.items()]
        return "\n".join(lines) + "\n"

    def write(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def read_split(path: str | os.PathLike) -> dict[str, Split]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != {"subject_id", "split"}:
            raise MissingColumn("split file needs header subject_id,split")
        return {row["subject_id"]: Split(row["split"]) for row in reader}


def _allocate(sizes: Sequence[int], frac: float, total: int) -> list[int]:
    """Floor each stratum's share, then hand the global remainder to the
    strata with the largest fractional parts (ties: earlier stratum first)."""
    exact = [m * frac for m in sizes]
    base = [int(math.floor(e + 1e-9)) for e in exact]
    rem = total - sum(base)
    order = sorted(range(len(sizes)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:max(rem, 0)]:
        base[i] += 1
    return base


def split_dataset(
    manifest: DatasetManifest,
    seed: int,
    test_frac: float = 0.2,
    val_frac_of_train: float = 0.2,
) -> SplitAssignment:
    """Split stratified by subgroup, deterministic for a given seed.

    Global split sizes are ``floor(N * test_frac)`` for test and
    ``floor((N - test) * val_frac_of_train)`` for validation; everything left
    over is training data. Per stratum, counts are floored and the global
    remainder goes to the largest fractional parts, so each stratum lands
    within one record of its exact share.
    """
    if not (0 < test_frac < 1 and 0 < val_frac_of_train < 1):
        raise ValueError("fractions must lie in (0, 1)")
    if len(manifest) == 0:
        raise EmptyManifest("cannot split an empty manifest")

    strata: dict[SubgroupKey, list[str]] = {}
    for r in manifest:
        strata.setdefault(assign_group(r), []).append(r.subject_id)
    keys = sorted(strata)
    members = [sorted(strata[k]) for k in keys]
    sizes = [len(m) for m in members]

    n = len(manifest)
    n_test = int(math.floor(n * test_frac + 1e-9))
    n_val = int(math.floor((n - n_test) * val_frac_of_train + 1e-9))
    test_counts = _allocate(sizes, test_frac, n_test)
    remaining = [m - t for m, t in zip(sizes, test_counts)]
    val_counts = _allocate(remaining, val_frac_of_train, n_val)

    rng = make_rng(seed)
    by_id: dict[str, Split] = {}
    for ids, t, v in zip(members, test_counts, val_counts):
        order = rng.permutation(len(ids))
        for rank, idx in enumerate(order):
            if rank < t:
                by_id[ids[idx]] = Split.TEST
            elif rank < t + v:
                by_id[ids[idx]] = Split.VAL
            else:
                by_id[ids[idx]] = Split.TRAIN
    ordered = {r.subject_id: by_id[r.subject_id] for r in manifest}
    return SplitAssignment(ordered, seed, test_frac, val_frac_of_train)


def apply_split(manifest: DatasetManifest, assignment: dict[str, Split] | SplitAssignment) -> DatasetManifest:
    if isinstance(assignment, SplitAssignment):
        assignment = assignment.assignments
    recs = tuple(replace(r, split=assignment.get(r.subject_id, r.split)) for r in manifest)
    return replace(manifest, records=recs)


def group_members(records: Iterable[SubjectRecord]) -> dict[SubgroupKey, list[SubjectRecord]]:
    out: dict[SubgroupKey, list[SubjectRecord]] = {}
    for r in records:
        out.setdefault(assign_group(r), []).append(r)
    return dict(sorted(out.items()))
