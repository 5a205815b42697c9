"""Synthetic cardiac phantoms and manifests for tests and demos.

Nothing here resembles real anatomy closely; it produces label masks with the
right topology (LV pool, myocardial ring, RV crescent) and cine volumes whose
ventricles contract over the cycle.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import numpy as np

from .manifest import (
    DatasetManifest,
    Diagnosis,
    Sex,
    Split,
    SubjectRecord,
    write_manifest,
)
from .preprocess import frame_filename, write_mask, write_volume

INTENSITY = {0: 60.0, 1: 900.0, 2: 420.0, 3: 700.0}


def cardiac_mask(rng: np.random.Generator, size: int = 48, scale: float = 1.0) -> np.ndarray:
    """Label mask: 1 LV disk, 2 myocardial ring, 3 RV crescent on the left."""
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    cy = size / 2 + rng.uniform(-2, 2)
    cx = size / 2 + 2 + rng.uniform(-2, 2)
    r_lv = rng.uniform(5.5, 8.0) * scale
    r_myo = r_lv + rng.uniform(2.5, 4.0)
    r_rv = rng.uniform(6.0, 9.0) * scale
    d = np.hypot(yy - cy, xx - cx)
    mask = np.zeros((size, size), dtype=np.uint8)
    rv_cx = cx - r_myo - r_rv * 0.35
    rv = np.hypot(yy - cy, xx - rv_cx) <= r_rv
    mask[rv & (d > r_myo + 1)] = 3
    mask[d <= r_myo] = 2
    mask[d <= r_lv] = 1
    return mask


def cine_volume(rng: np.random.Generator, n_slices: int, n_frames: int, ed: int, es: int,
                size: int = 48) -> tuple[np.ndarray, dict[tuple[int, int], np.ndarray]]:
    """uint16 volume ``(n_slices, n_frames, size, size)`` plus masks at ED and ES per slice."""
    base = np.random.Generator(np.random.Philox(int(rng.integers(0, 2**31))))
    seeds = base.integers(0, 2**31, size=n_slices)
    vol = np.zeros((n_slices, n_frames, size, size), dtype=np.uint16)
    masks = {}
    for s in range(n_slices):
        for t in range(n_frames):
            # ventricles at full size at ED, 75% at ES
            frac = abs(t - ed) / (abs(t - ed) + abs(t - es))
            scale = 1.0 - 0.25 * frac
            m = cardiac_mask(np.random.Generator(np.random.Philox(int(seeds[s]))), size, scale)
            img = np.zeros((size, size))
            for label, v in INTENSITY.items():
                img[m == label] = v
            img += rng.normal(0, 25, size=img.shape)
            vol[s, t] = np.clip(img, 0, 65535).astype(np.uint16)
            if t in (ed, es):
                masks[s, t] = m
    return vol, masks


def random_record(rng: np.random.Generator, subject_id: str, image_path: str = "", mask_path: str = "",
                  hf_rate: float = 0.5) -> SubjectRecord:
    n_frames = int(rng.integers(10, 50))
    ed = int(rng.integers(1, n_frames // 2 - 1))
    es = int(rng.integers(n_frames // 2, n_frames - 1))
    return SubjectRecord(
        subject_id=subject_id,
        sex=Sex.FEMALE if rng.random() < 0.5 else Sex.MALE,
        age=int(rng.integers(40, 90)),
        bmi=round(float(rng.uniform(16.0, 42.0)), 1),
        diagnosis=Diagnosis.HEART_FAILURE if rng.random() < hf_rate else Diagnosis.HEALTHY,
        image_path=image_path or f"volumes/{subject_id}",
        mask_path=mask_path or f"masks/{subject_id}",
        ed_frame=ed, es_frame=es,
        n_slices=int(rng.integers(3, 12)), n_frames=n_frames,
    )


def fuzz_records(n: int, seed: int = 0, hf_rate: float = 0.5) -> list[SubjectRecord]:
    rng = np.random.default_rng(seed)
    return [random_record(rng, f"sub{i:05d}", hf_rate=hf_rate) for i in range(n)]


def write_demo_dataset(
    root: str | os.PathLike,
    records: Sequence[SubjectRecord],
    seed: int = 0,
    size: int = 48,
    volumes: bool = True,
) -> DatasetManifest:
    """Materialize ``records`` on disk under ``root`` and write ``root/manifest.csv``.

    With ``volumes=True`` each subject gets a PNG cine stack and per-slice ED/ES
    masks (paths are directories). Otherwise only a single 2-D mask per subject
    is written and ``mask_path`` points at that file.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    out = []
    for r in records:
        if volumes:
            vol, masks = cine_volume(rng, r.n_slices, r.n_frames, r.ed_frame, r.es_frame, size)
            vdir, mdir = root / "volumes" / r.subject_id, root / "masks" / r.subject_id
            write_volume(vdir, vol)
            mdir.mkdir(parents=True, exist_ok=True)
            for (s, t), m in masks.items():
                write_mask(mdir / frame_filename(s, t), m)
            out.append(_with_paths(r, f"volumes/{r.subject_id}", f"masks/{r.subject_id}"))
        else:
            (root / "masks").mkdir(parents=True, exist_ok=True)
            write_mask(root / "masks" / f"{r.subject_id}.png", cardiac_mask(rng, size))
            out.append(_with_paths(r, f"volumes/{r.subject_id}", f"masks/{r.subject_id}.png"))
    manifest = DatasetManifest(tuple(out), str(root / "manifest.csv"))
    root.mkdir(parents=True, exist_ok=True)
    write_manifest(manifest, root / "manifest.csv")
    return manifest


def _with_paths(r: SubjectRecord, image_path: str, mask_path: str) -> SubjectRecord:
    from dataclasses import replace
    return replace(r, image_path=image_path, mask_path=mask_path)


def imbalanced_records(n: int = 500, seed: int = 0) -> list[SubjectRecord]:
    """Records skewed towards healthy, male, older, overweight subjects.

    Every one of the 36 cells is populated at least once (when ``n >= 36``) so
    that an equalizing plan always has donors.
    """
    from .manifest import all_subgroup_keys

    rng = np.random.default_rng(seed)
    age_of = {"under60": (45, 60), "60to70": (60, 70), "over70": (70, 85)}
    bmi_of = {"under25": (19.0, 24.9), "25to30": (25.0, 29.9), "over30": (30.0, 40.0)}
    keys = all_subgroup_keys()
    w = np.array([
        (3.0 if k.sex is Sex.MALE else 1.0)
        * (6.0 if k.diagnosis is Diagnosis.HEALTHY else 1.0)
        * {"under60": 1.0, "60to70": 2.0, "over70": 1.5}[k.age_bin.value]
        * {"under25": 1.0, "25to30": 2.5, "over30": 1.5}[k.bmi_bin.value]
        for k in keys
    ])
    picks = list(range(len(keys))) * (1 if n >= len(keys) else 0)
    picks += rng.choice(len(keys), size=n - len(picks), p=w / w.sum()).tolist()
    recs = []
    for i, ki in enumerate(picks):
        k = keys[ki]
        lo, hi = age_of[k.age_bin.value]
        blo, bhi = bmi_of[k.bmi_bin.value]
        n_frames = int(rng.integers(20, 50))
        recs.append(SubjectRecord(
            subject_id=f"sub{i:04d}", sex=k.sex, age=int(rng.integers(lo, hi)),
            bmi=round(float(rng.uniform(blo, bhi)), 1), diagnosis=k.diagnosis,
            image_path=f"volumes/sub{i:04d}", mask_path=f"masks/sub{i:04d}.png",
            ed_frame=int(rng.integers(1, 5)), es_frame=int(rng.integers(10, n_frames - 1)),
            n_slices=int(rng.integers(3, 12)), n_frames=n_frames, split=Split.TRAIN,
        ))
    return recs
