"""Turn 4-D cine volumes into 2-D three-channel (ED, ES, third) training images.

Volumes are arrays shaped ``(n_slices, n_frames, height, width)``. On disk a
volume is a directory of 16-bit grayscale PNGs named ``s{slice:02}_t{frame:03}.png``;
label masks use the same naming with 8-bit labels {0, 1, 2, 3}.
"""

from __future__ import annotations

import enum
import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import (
    DegenerateRange,
    IndexOutOfRange,
    InsufficientSlices,
    InvalidSide,
    TemporalBoundary,
    ValidationError,
)
from .manifest import Split, SubjectRecord

LABELS = {0: "background", 1: "left_ventricle", 2: "myocardium", 3: "right_ventricle"}
TEMPORAL_OFFSETS = (-1, 0, 1)
TRAIN_SIZE_GENERATOR = 512
TRAIN_SIZE_CLASSIFIER = 224


class ChannelPolicy(enum.Enum):
    DUPLICATE_ED = "duplicate-ed"
    MEAN_THIRD = "mean-third"


@dataclass(frozen=True)
class StackedImage:
    """Three equally sized channels: ED frame, ES frame and a policy-defined third."""

    channels: np.ndarray  # (3, H, W) float
    subject_id: str = ""
    slice_index: int = 0
    temporal_offset: int = 0

    def __post_init__(self):
        if self.channels.ndim != 3 or self.channels.shape[0] != 3:
            raise ValidationError(f"expected (3, H, W) channels, got {self.channels.shape}")

    @property
    def ed(self) -> np.ndarray:
        return self.channels[0]

    @property
    def es(self) -> np.ndarray:
        return self.channels[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.channels.shape[1:]


def frame_filename(slice_index: int, frame: int) -> str:
    return f"s{slice_index:02d}_t{frame:03d}.png"


def central_slice(n_slices: int) -> int:
    return n_slices // 2


def check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 2 or min(image.shape) < 8:
        raise ValidationError(f"images must be 2-D with sides >= 8, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValidationError("image contains non-finite values")
    return image


def check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.size and mask.dtype.kind in "iu" and 0 <= mask.min() and mask.max() <= max(LABELS):
        return mask
    bad = set(np.unique(mask).tolist()) - set(LABELS)
    if bad:
        raise ValidationError(f"mask contains undeclared labels {sorted(bad)}")
    return mask


# -- stacking ---------------------------------------------------------------

def stack_frames(
    volume: np.ndarray,
    slice_index: int,
    ed: int,
    es: int,
    policy: ChannelPolicy = ChannelPolicy.DUPLICATE_ED,
    subject_id: str = "",
    temporal_offset: int = 0,
) -> StackedImage:
    n_slices, n_frames = volume.shape[:2]
    if not 0 <= slice_index < n_slices:
        raise IndexOutOfRange(f"slice {slice_index} outside [0, {n_slices})")
    for name, f in (("ed", ed), ("es", es)):
        if not 0 <= f < n_frames:
            raise IndexOutOfRange(f"{name} frame {f} outside [0, {n_frames})")
    ed_img = np.asarray(volume[slice_index, ed], dtype=float)
    es_img = np.asarray(volume[slice_index, es], dtype=float)
    if ChannelPolicy(policy) is ChannelPolicy.MEAN_THIRD:
        third = (ed_img + es_img) / 2.0
    else:
        third = ed_img
    return StackedImage(np.stack([ed_img, es_img, third]), subject_id, slice_index, temporal_offset)


def expand_training_views(
    record: SubjectRecord,
    volume: np.ndarray,
    policy: ChannelPolicy = ChannelPolicy.DUPLICATE_ED,
) -> list[StackedImage]:
    """Nine views: three central slices x frame offsets -1/0/+1 applied jointly to ED and ES."""
    n_slices, n_frames = volume.shape[:2]
    if n_slices < 3:
        raise InsufficientSlices(f"{record.subject_id}: need >= 3 slices, got {n_slices}")
    for name, f in (("ed", record.ed_frame), ("es", record.es_frame)):
        if f - 1 < 0 or f + 1 >= n_frames:
            raise TemporalBoundary(f"{record.subject_id}: {name} frame {f} has no neighbour in [0, {n_frames})")
    c = central_slice(n_slices)
    return [
        stack_frames(volume, s, record.ed_frame + o, record.es_frame + o, policy, record.subject_id, o)
        for s in (c - 1, c, c + 1)
        for o in TEMPORAL_OFFSETS
    ]


def eval_view(
    record: SubjectRecord,
    volume: np.ndarray,
    policy: ChannelPolicy = ChannelPolicy.DUPLICATE_ED,
) -> StackedImage:
    """The single view used for validation and test subjects."""
    return stack_frames(volume, central_slice(volume.shape[0]), record.ed_frame, record.es_frame,
                        policy, record.subject_id, 0)


def views_for_record(
    record: SubjectRecord,
    volume: np.ndarray,
    policy: ChannelPolicy = ChannelPolicy.DUPLICATE_ED,
    train_views: int = 9,
) -> list[StackedImage]:
    """Nine views for training subjects (or unsplit ones), one otherwise."""
    if train_views not in (1, 9):
        raise ValueError("train_views must be 1 or 9")
    if (record.split or Split.TRAIN) is Split.TRAIN and train_views == 9:
        return expand_training_views(record, volume, policy)
    return [eval_view(record, volume, policy)]


# -- resizing ---------------------------------------------------------------

def _axis_weights(n_in: int, n_out: int):
    # Half-pixel-centre convention; resizing to the same size is the identity.
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def _bilinear(img: np.ndarray, side: int) -> np.ndarray:
    h, w = img.shape
    r0, r1, rw = _axis_weights(h, side)
    c0, c1, cw = _axis_weights(w, side)
    rows = img[r0] * (1 - rw)[:, None] + img[r1] * rw[:, None]
    return rows[:, c0] * (1 - cw) + rows[:, c1] * cw


def _nearest(img: np.ndarray, side: int) -> np.ndarray:
    h, w = img.shape
    ri = np.minimum(np.floor((np.arange(side) + 0.5) * h / side).astype(int), h - 1)
    ci = np.minimum(np.floor((np.arange(side) + 0.5) * w / side).astype(int), w - 1)
    return img[ri][:, ci]


def resize_image(image, side: int, method: str = "bilinear"):
    """Resize a 2-D array or :class:`StackedImage` to ``side x side``.

    Use ``method="nearest"`` for label masks: it never invents labels.
    """
    if side <= 0:
        raise InvalidSide(f"side must be positive, got {side}")
    if method not in ("bilinear", "nearest"):
        raise ValueError(f"unknown resize method {method!r}")
    fn = _bilinear if method == "bilinear" else _nearest
    if isinstance(image, StackedImage):
        chans = np.stack([fn(np.asarray(c, dtype=float), side) for c in image.channels])
        return StackedImage(chans, image.subject_id, image.slice_index, image.temporal_offset)
    arr = np.asarray(image)
    if arr.shape == (side, side):
        return arr.copy()
    if method == "bilinear":
        return fn(arr.astype(float), side)
    return fn(arr, side)


# -- intensity normalization --------------------------------------------------

def percentiles(values: np.ndarray, qs) -> np.ndarray:
    """Linear-interpolation percentiles (numpy's default method) from one sort."""
    x = np.sort(np.asarray(values, dtype=float), axis=None)
    pos = np.asarray(qs, dtype=float) / 100.0 * (x.size - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, x.size - 1)
    frac = pos - lo
    return x[lo] + (x[hi] - x[lo]) * frac


def normalize_intensity(image: np.ndarray, mode: str = "percentile", p_lo: float = 1.0, p_hi: float = 99.0) -> np.ndarray:
    """Map intensities to [0, 1].

    ``minmax`` scales min->0 and max->1. ``percentile`` first clips to the
    ``p_lo``/``p_hi`` percentiles. A degenerate range gives all zeros and a
    :class:`~fairaug.errors.DegenerateRange` warning.
    """
    img = np.asarray(image, dtype=float)
    if mode == "minmax":
        lo, hi = img.min(), img.max()
    elif mode == "percentile":
        lo, hi = percentiles(img, [p_lo, p_hi])
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")
    if not hi > lo:
        warnings.warn("intensity range is degenerate; returning zeros", DegenerateRange, stacklevel=2)
        return np.zeros_like(img)
    return (np.clip(img, lo, hi) - lo) / (hi - lo)


def to_uint8(image01: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image01) * 255.0), 0, 255).astype(np.uint8)


# -- file I/O ---------------------------------------------------------------

def read_png(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im)


def write_gray16(path: str | os.PathLike, arr: np.ndarray) -> None:
    Image.fromarray(np.asarray(arr, dtype=np.uint16)).save(path)


def write_mask(path: str | os.PathLike, mask: np.ndarray) -> None:
    Image.fromarray(check_mask(np.asarray(mask, dtype=np.uint8)), mode="L").save(path)


def write_rgb(path: str | os.PathLike, stacked: StackedImage | np.ndarray) -> None:
    chans = stacked.channels if isinstance(stacked, StackedImage) else np.asarray(stacked)
    Image.fromarray(np.moveaxis(np.asarray(chans, dtype=np.uint8), 0, -1), mode="RGB").save(path)


def read_stacked(path: str | os.PathLike, subject_id: str = "") -> StackedImage:
    arr = read_png(path).astype(float)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3)
    else:
        arr = np.moveaxis(arr[..., :3], -1, 0)
    return StackedImage(arr, subject_id)


def load_frames(directory: str | os.PathLike, frames: Sequence[tuple[int, int]]) -> dict[tuple[int, int], np.ndarray]:
    directory = Path(directory)
    return {(s, t): read_png(directory / frame_filename(s, t)) for s, t in frames}


def load_volume(directory: str | os.PathLike, n_slices: int, n_frames: int) -> np.ndarray:
    directory = Path(directory)
    frames = [[read_png(directory / frame_filename(s, t)) for t in range(n_frames)] for s in range(n_slices)]
    return np.asarray(frames)


def write_volume(directory: str | os.PathLike, volume: np.ndarray) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for s in range(volume.shape[0]):
        for t in range(volume.shape[1]):
            write_gray16(directory / frame_filename(s, t), volume[s, t])


class _LazyVolume:
    """Reads frames on demand so only the ~9 needed PNGs per subject are decoded."""

    def __init__(self, directory: Path, n_slices: int, n_frames: int):
        self.directory = directory
        self.shape = (n_slices, n_frames)
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def __getitem__(self, idx):
        s, t = idx
        if (s, t) not in self._cache:
            self._cache[s, t] = read_png(self.directory / frame_filename(s, t))
        return self._cache[s, t]


def open_volume(directory: str | os.PathLike, n_slices: int, n_frames: int) -> _LazyVolume:
    return _LazyVolume(Path(directory), n_slices, n_frames)


def mask_for_view(mask_dir: Path, view: StackedImage, ed_frame: int) -> np.ndarray:
    """Masks exist for the annotated ED frame only; neighbouring frames reuse it."""
    return check_mask(read_png(mask_dir / frame_filename(view.slice_index, ed_frame)))


def export_view(view: StackedImage, mask: np.ndarray | None, out_dir: Path, side: int | None,
                normalization: str = "percentile") -> tuple[str, str]:
    """Normalize jointly over the three channels, resize, and write 8-bit PNGs."""
    chans = view.channels
    if normalization == "percentile":
        lo, hi = percentiles(chans, [1.0, 99.0])
    else:
        lo, hi = chans.min(), chans.max()
    scaled = np.zeros_like(chans) if not hi > lo else (np.clip(chans, lo, hi) - lo) / (hi - lo)
    out = StackedImage(scaled, view.subject_id, view.slice_index, view.temporal_offset)
    if side:
        out = resize_image(out, side, "bilinear")
        if mask is not None:
            mask = resize_image(mask, side, "nearest")
    stem = f"{view.subject_id}_s{view.slice_index:02d}_o{view.temporal_offset:+d}"
    img_path = out_dir / "images" / f"{stem}.png"
    img_path.parent.mkdir(parents=True, exist_ok=True)
    write_rgb(img_path, to_uint8(out.channels))
    mask_path = ""
    if mask is not None:
        mp = out_dir / "masks" / f"{stem}.png"
        mp.parent.mkdir(parents=True, exist_ok=True)
        write_mask(mp, mask)
        mask_path = str(mp)
    return str(img_path), mask_path
