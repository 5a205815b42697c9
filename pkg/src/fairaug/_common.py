"""Small helpers used across modules: seeded RNGs, canonical JSON, fingerprints,
and the thread pool honouring ``FAIRAUG_THREADS``."""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, TypeVar

import numpy as np

from . import __version__

T = TypeVar("T")
R = TypeVar("R")

DEFAULT_SEED = 42


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for ``seed``, optionally on an independent substream.

    Philox is used so that substreams derived from ``(seed, index)`` never share
    state and no global RNG is ever touched.
    """
    if seed < 0:
        raise ValueError("seed must be an unsigned integer")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path: str | os.PathLike, obj: Any) -> None:
    Path(path).write_text(canonical_json(obj), encoding="utf-8")


def fingerprint(**settings: Any) -> dict:
    """Settings echo with a stable hash; attached to every emitted report."""
    body = {"tool": "fairaug", "version": __version__, **settings}
    digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
    return {**body, "sha256": digest[:16]}


def thread_count() -> int:
    raw = os.environ.get("FAIRAUG_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def parallel_map(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """Ordered map; results come back in input order regardless of scheduling."""
    items = list(items)
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def fmt_float(x: float) -> str:
    """Shortest repr that round-trips, so CSV output is reproducible."""
    return repr(float(x))
