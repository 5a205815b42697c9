"""Fixed-order radiomics feature vector: 13 first-order, 6 GLCM and 7 shape features.

Formulas (masked pixels ``x_1..x_n``, population moments):

first order
    mean, median, min, max, p10, p90, iqr (p75 - p25), variance,
    skewness ``m3 / m2**1.5``, kurtosis ``m4 / m2**2 - 3``, energy ``sum x**2``,
    rms ``sqrt(energy / n)``, mad ``mean |x - mean|``. Percentiles use linear
    interpolation. Constant regions give skewness = kurtosis = 0.

GLCM
    32 equal-width gray levels over the masked range; symmetric co-occurrence
    matrices at offsets (0,1), (1,0), (1,1), (1,-1), each normalized and then
    averaged. contrast ``sum (i-j)^2 P``, dissimilarity ``sum |i-j| P``,
    homogeneity ``sum P / (1 + (i-j)^2)``, ASM ``sum P^2``, correlation
    (1 when either marginal has zero variance) and entropy ``-sum P log2 P``.

shape (pixel geometry of the selected labels)
    area (pixel count), perimeter (number of pixel edges between the region
    and the outside), perimeter/area, elongation ``sqrt(l2/l1)`` of the
    coordinate covariance eigenvalues ``l1 >= l2``, major/minor axis
    ``4 sqrt(l)``, compactness ``4 pi area / perimeter^2``.
"""

from __future__ import annotations

import csv
import io
import math
import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._common import fmt_float
from .errors import (
    DegenerateRange,
    EmptyStructure,
    InvariantViolation,
    MaskTooSmall,
    NoValidPairs,
    ValidationError,
)
from .preprocess import StackedImage, normalize_intensity, percentiles

FIRST_ORDER_NAMES = (
    "fo_mean", "fo_median", "fo_min", "fo_max", "fo_p10", "fo_p90", "fo_iqr",
    "fo_variance", "fo_skewness", "fo_kurtosis", "fo_energy", "fo_rms", "fo_mad",
)
GLCM_NAMES = (
    "glcm_contrast", "glcm_dissimilarity", "glcm_homogeneity", "glcm_asm",
    "glcm_correlation", "glcm_entropy",
)
SHAPE_NAMES = (
    "shape_area", "shape_perimeter", "shape_perimeter_area_ratio", "shape_elongation",
    "shape_major_axis", "shape_minor_axis", "shape_compactness",
)
FEATURE_NAMES = FIRST_ORDER_NAMES + GLCM_NAMES + SHAPE_NAMES

DEFAULT_LEVELS = 32
DEFAULT_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))
FOREGROUND_LABELS = (1, 2, 3)
MIN_PIXELS = 16


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        if len(self.values) != len(self.names):
            raise InvariantViolation("feature vector length does not match its names")
        if not np.all(np.isfinite(self.values)):
            raise InvariantViolation("feature vector contains non-finite values")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


def _masked(image: np.ndarray, mask: np.ndarray, min_pixels: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if np.asarray(image).shape != mask.shape:
        raise ValidationError("image and mask shapes differ")
    n = int(mask.sum())
    if n < min_pixels:
        raise MaskTooSmall(f"mask has {n} foreground pixels, need >= {min_pixels}")
    return np.asarray(image, dtype=float)[mask]


def discretize(image: np.ndarray, mask: np.ndarray, levels: int = DEFAULT_LEVELS,
               min_pixels: int = MIN_PIXELS) -> np.ndarray:
    """Equal-width quantization of the masked pixels into ``0..levels-1``.

    Pixels outside the mask are set to -1. The masked maximum always maps to
    ``levels - 1``; a constant region maps to 0 with a warning.
    """
    if levels < 2:
        raise ValueError("levels must be >= 2")
    vals = _masked(image, mask, min_pixels)
    mask = np.asarray(mask, dtype=bool)
    lo, hi = vals.min(), vals.max()
    out = np.full(mask.shape, -1, dtype=np.int64)
    if not hi > lo:
        warnings.warn("masked region is constant; all pixels quantized to 0", DegenerateRange, stacklevel=2)
        out[mask] = 0
        return out
    q = np.floor((vals - lo) / (hi - lo) * levels).astype(np.int64)
    out[mask] = np.clip(q, 0, levels - 1)
    return out


def first_order_features(image: np.ndarray, mask: np.ndarray, min_pixels: int = MIN_PIXELS) -> np.ndarray:
    x = _masked(image, mask, min_pixels)
    n = x.size
    mean = x.mean()
    d = x - mean
    m2 = np.mean(d ** 2)
    if m2 > 0:
        skew = np.mean(d ** 3) / m2 ** 1.5
        kurt = np.mean(d ** 4) / m2 ** 2 - 3.0
    else:
        skew = kurt = 0.0
    p10, p25, p50, p75, p90 = percentiles(x, [10, 25, 50, 75, 90])
    energy = np.sum(x ** 2)
    return np.array([
        mean, p50, x.min(), x.max(), p10, p90, p75 - p25, m2, skew, kurt,
        energy, math.sqrt(energy / n), np.mean(np.abs(d)),
    ])


def glcm_matrix(quantized: np.ndarray, mask: np.ndarray | None = None, levels: int = DEFAULT_LEVELS,
                offsets: Sequence[tuple[int, int]] = DEFAULT_OFFSETS) -> np.ndarray:
    """Symmetric, normalized co-occurrence matrix averaged over ``offsets``.

    Only pairs with both pixels inside the mask (and quantized >= 0) count.
    Offsets without any valid pair are left out of the average.
    """
    q = np.asarray(quantized)
    valid = q >= 0
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    h, w = q.shape
    codes = []
    for k, (dy, dx) in enumerate(offsets):
        # a = pixel (y, x), b = pixel (y + dy, x + dx)
        ys_a = slice(max(0, -dy), h - max(0, dy))
        ys_b = slice(max(0, dy), h - max(0, -dy))
        xs_a = slice(max(0, -dx), w - max(0, dx))
        xs_b = slice(max(0, dx), w - max(0, -dx))
        a, b = q[ys_a, xs_a], q[ys_b, xs_b]
        ok = valid[ys_a, xs_a] & valid[ys_b, xs_b]
        codes.append((k * levels + a[ok]) * levels + b[ok])
    n_off = len(offsets)
    counts = np.bincount(np.concatenate(codes), minlength=n_off * levels * levels)
    counts = counts.reshape(n_off, levels, levels).astype(float)
    sym = counts + counts.transpose(0, 2, 1)
    totals = sym.sum(axis=(1, 2))
    used = totals > 0
    if not used.any():
        raise NoValidPairs("no pixel pair inside the mask at any offset")
    mats = sym[used] / totals[used][:, None, None]
    P = np.mean(mats, axis=0)
    return (P + P.T) / 2.0


_GRIDS: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _grid(L: int):
    if L not in _GRIDS:
        i, j = np.indices((L, L))
        _GRIDS[L] = (i, j, (i - j).astype(float))
    return _GRIDS[L]


def glcm_features_from_matrix(P: np.ndarray) -> np.ndarray:
    L = P.shape[0]
    i, j, diff = _grid(L)
    contrast = np.sum(diff ** 2 * P)
    dissimilarity = np.sum(np.abs(diff) * P)
    homogeneity = np.sum(P / (1.0 + diff ** 2))
    asm = np.sum(P ** 2)
    px = P.sum(axis=1)
    levels = np.arange(L, dtype=float)
    mu = np.sum(levels * px)
    var = np.sum((levels - mu) ** 2 * px)
    if var > 1e-15:
        corr = np.sum((i - mu) * (j - mu) * P) / var
        corr = float(np.clip(corr, -1.0, 1.0))
    else:
        corr = 1.0
    nz = P[P > 0]
    entropy = float(-np.sum(nz * np.log2(nz))) + 0.0
    return np.array([contrast, dissimilarity, homogeneity, asm, corr, entropy])


def glcm_features(quantized: np.ndarray, mask: np.ndarray | None = None, levels: int = DEFAULT_LEVELS,
                  offsets: Sequence[tuple[int, int]] = DEFAULT_OFFSETS) -> np.ndarray:
    return glcm_features_from_matrix(glcm_matrix(quantized, mask, levels, offsets))


def select_labels(mask: np.ndarray, labels: Iterable[int]) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype == np.uint8:
        lut = np.zeros(256, dtype=bool)
        lut[list(labels)] = True
        return lut[mask]
    return np.isin(mask, list(labels))


def shape_features(mask: np.ndarray, structure: Iterable[int] = FOREGROUND_LABELS) -> np.ndarray:
    structure = tuple(structure)
    region = select_labels(mask, structure)
    area = int(region.sum())
    if area == 0:
        raise EmptyStructure(f"no pixels with labels {sorted(structure)}")
    padded = np.pad(region, 1)
    perimeter = int(
        np.sum(padded[1:, :] != padded[:-1, :]) + np.sum(padded[:, 1:] != padded[:, :-1])
    )
    ys, xs = np.nonzero(region)
    coords = np.stack([ys, xs]).astype(float)
    coords -= coords.mean(axis=1, keepdims=True)
    cov = coords @ coords.T / area
    # closed-form eigenvalues of a symmetric 2x2
    a, b, c = cov[0, 0], cov[0, 1], cov[1, 1]
    half_tr = (a + c) / 2.0
    disc = math.sqrt(max(((a - c) / 2.0) ** 2 + b * b, 0.0))
    l1, l2 = half_tr + disc, max(half_tr - disc, 0.0)
    elongation = math.sqrt(l2 / l1) if l1 > 0 else 1.0
    return np.array([
        area, perimeter, perimeter / area, elongation,
        4.0 * math.sqrt(l1), 4.0 * math.sqrt(l2), 4.0 * math.pi * area / perimeter ** 2,
    ])


@dataclass(frozen=True)
class ExtractionSettings:
    levels: int = DEFAULT_LEVELS
    offsets: tuple[tuple[int, int], ...] = DEFAULT_OFFSETS
    channels: tuple[str, ...] = ("ed",)
    normalization: str = "percentile(1,99)"

    def feature_names(self) -> tuple[str, ...]:
        if self.channels == ("ed",):
            return FEATURE_NAMES
        names: list[str] = []
        for ch in self.channels:
            names += [f"{ch}_{n}" for n in FIRST_ORDER_NAMES + GLCM_NAMES]
        return tuple(names) + SHAPE_NAMES

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "offsets": [list(o) for o in self.offsets],
            "channel": list(self.channels),
            "normalization": self.normalization,
        }


def _intensity_features(channel: np.ndarray, fg: np.ndarray, settings: ExtractionSettings) -> np.ndarray:
    img = normalize_intensity(channel, "percentile", 1.0, 99.0)
    fo = first_order_features(img, fg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateRange)
        q = discretize(img, fg, settings.levels)
    return np.concatenate([fo, glcm_features(q, fg, settings.levels, settings.offsets)])


def extract_features(stacked: StackedImage, mask: np.ndarray,
                     settings: ExtractionSettings = ExtractionSettings()) -> FeatureVector:
    """Canonical feature vector of one image.

    Intensity features come from the ED channel (optionally also ES) after
    percentile(1, 99) normalization, restricted to labels {1, 2, 3}; shape
    features describe the same union.
    """
    mask = np.asarray(mask)
    if mask.shape != stacked.shape:
        raise ValidationError(f"mask shape {mask.shape} differs from image shape {stacked.shape}")
    fg = select_labels(mask, FOREGROUND_LABELS)
    parts = []
    for ch in settings.channels:
        channel = stacked.ed if ch == "ed" else stacked.es
        parts.append(_intensity_features(channel, fg, settings))
    parts.append(shape_features(mask, FOREGROUND_LABELS))
    return FeatureVector(np.concatenate(parts), settings.feature_names())


# -- feature tables ---------------------------------------------------------

@dataclass(frozen=True)
class FeatureTable:
    ids: tuple[str, ...]
    names: tuple[str, ...]
    values: np.ndarray  # (n_rows, n_features)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(len(self.ids), len(self.names))
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self) -> int:
        return len(self.ids)

    def select_rows(self, ids: Iterable[str]) -> "FeatureTable":
        pos = {sid: i for i, sid in enumerate(self.ids)}
        keep = [sid for sid in ids if sid in pos]
        return FeatureTable(tuple(keep), self.names, self.values[[pos[s] for s in keep]])

    def rows(self, index: np.ndarray) -> "FeatureTable":
        return FeatureTable(tuple(self.ids[i] for i in index), self.names, self.values[index])

    def drop_columns(self, names: Iterable[str]) -> "FeatureTable":
        drop = set(names)
        keep = [i for i, n in enumerate(self.names) if n not in drop]
        return FeatureTable(self.ids, tuple(self.names[i] for i in keep), self.values[:, keep])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("subject_id",) + self.names)
        for sid, row in sorted(zip(self.ids, self.values.tolist())):
            w.writerow([sid] + [fmt_float(v) for v in row])
        return buf.getvalue()

    def write(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def table_from_vectors(ids: Sequence[str], vectors: Sequence[FeatureVector]) -> FeatureTable:
    names = vectors[0].names if vectors else FEATURE_NAMES
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    vals = np.array([vectors[i].values for i in order]) if vectors else np.empty((0, len(names)))
    return FeatureTable(tuple(ids[i] for i in order), names, vals)


def read_feature_table(path: str | os.PathLike) -> FeatureTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "subject_id":
            raise ValidationError(f"{path}: first column must be subject_id")
        ids, rows = [], []
        for row in reader:
            ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return FeatureTable(tuple(ids), tuple(header[1:]), np.array(rows).reshape(len(ids), len(header) - 1))
