"""Deterministic stand-in for the external diffusion generator.

Renders a label mask into an 8-bit image: per-label base intensities, an
epicardial rim whose brightness grows with the BMI category named in the
prompt, and seeded Gaussian noise. Only meant for exercising the pipeline.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

from .._common import make_rng
from ..errors import MaskUnreadable
from ..preprocess import check_mask, read_png, resize_image
from .jobs import GenerationJob
from .prompts import bmi_category_from_prompt

BASE_INTENSITY = {0: 20.0, 1: 140.0, 2: 70.0, 3: 110.0}
RIM_WIDTH = 2
RIM_STEP = 15.0
NOISE_SIGMA = 5.0


def _dilate(region: np.ndarray, steps: int) -> np.ndarray:
    """8-connected binary dilation by ``steps`` pixels."""
    out = region.copy()
    for _ in range(steps):
        p = np.pad(out, 1)
        grown = np.zeros_like(out)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                grown |= p[1 + dy:1 + dy + out.shape[0], 1 + dx:1 + dx + out.shape[1]]
        out = grown
    return out


def rim_band(mask: np.ndarray, width: int = RIM_WIDTH) -> np.ndarray:
    """Myocardium pixels within ``width`` px of the epicardial border
    (the border facing neither myocardium nor left-ventricle blood pool)."""
    myo = mask == 2
    outside = ~(myo | (mask == 1))
    return myo & _dilate(outside, width)


def render_mock(mask: np.ndarray, bmi_category: int, seed: int) -> np.ndarray:
    """uint8 single-channel rendering of ``mask``; identical for identical inputs."""
    mask = check_mask(np.asarray(mask))
    lut = np.array([BASE_INTENSITY[k] for k in sorted(BASE_INTENSITY)])
    img = lut[mask.astype(np.intp)]
    img[rim_band(mask)] += RIM_STEP * bmi_category
    img += make_rng(seed).normal(0.0, NOISE_SIGMA, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def mock_generate(job: GenerationJob, out_dir: str | os.PathLike | None = None, size: int | None = None) -> Path:
    """Render ``job`` and write a 3-channel PNG to ``out_dir / job.output_path``."""
    try:
        mask = read_png(job.mask_path)
    except (OSError, ValueError) as exc:
        raise MaskUnreadable(f"job {job.job_id}: cannot read mask {job.mask_path}: {exc}") from exc
    if mask.ndim != 2:
        raise MaskUnreadable(f"job {job.job_id}: mask {job.mask_path} is not single-channel")
    gray = render_mock(mask, bmi_category_from_prompt(job.prompt), job.seed)
    if size:
        gray = np.clip(np.rint(resize_image(gray.astype(float), size, "bilinear")), 0, 255).astype(np.uint8)
    out = Path(out_dir or ".") / job.output_path
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.stack([gray] * 3, axis=-1), mode="RGB").save(out)
    return out
