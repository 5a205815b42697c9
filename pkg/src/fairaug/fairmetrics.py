"""Classification and fairness metrics computed from prediction files.

Predictions are a CSV ``subject_id,score,label``; group membership comes from
joining the subject ids onto the manifest.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping

import numpy as np

from ._common import fingerprint, make_rng
from .errors import (
    BootstrapFailure,
    JoinFailure,
    SingleClass,
    TooFewGroups,
    UndefinedRateWarning,
    ValidationError,
)
from .manifest import DatasetManifest, SubgroupKey, assign_group

# summary table rows: attribute -> display name
REPORT_ATTRIBUTES = {"sex": "Sex", "bmi": "BMI", "age": "Age"}


# -- core metrics -----------------------------------------------------------

def _arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    if s.shape != y.shape or s.ndim != 1:
        raise ValidationError("scores and labels must be 1-D arrays of equal length")
    return s, y


def auroc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2).

    Mann-Whitney U from mid-ranks; O(n log n).
    """
    s, y = _arrays(scores, labels)
    n_pos = int(np.sum(y == 1))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs both classes")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    _, first, counts = np.unique(sorted_s, return_index=True, return_counts=True)
    mid = first + (counts + 1) / 2.0  # 1-based mid-rank of each tie block
    ranks = np.empty(s.size)
    ranks[order] = np.repeat(mid, counts)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class Confusion:
    tp: int
    fn: int
    tn: int
    fp: int

    @property
    def tpr(self) -> float | None:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else None

    @property
    def tnr(self) -> float | None:
        return self.tn / (self.tn + self.fp) if self.tn + self.fp else None

    @property
    def tpr_exact(self) -> Fraction | None:
        return Fraction(self.tp, self.tp + self.fn) if self.tp + self.fn else None


def confusion(scores, labels, threshold: float = 0.5) -> Confusion:
    s, y = _arrays(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return Confusion(
        tp=int(np.sum(pred & pos)), fn=int(np.sum(~pred & pos)),
        tn=int(np.sum(~pred & ~pos)), fp=int(np.sum(pred & ~pos)),
    )


def bacc(scores, labels, threshold: float = 0.5) -> float:
    """(TPR + TNR) / 2, predicting positive iff ``score >= threshold``."""
    c = confusion(scores, labels, threshold)
    if c.tpr is None or c.tnr is None:
        raise SingleClass("balanced accuracy needs both classes")
    return (c.tpr + c.tnr) / 2.0


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    c = confusion(scores, labels, threshold)
    return (c.tp + c.tn) / max(c.tp + c.tn + c.fp + c.fn, 1)


def tpr(scores, labels, threshold: float = 0.5) -> float:
    c = confusion(scores, labels, threshold)
    if c.tpr is None:
        raise SingleClass("TPR needs at least one positive")
    return c.tpr


def youden_threshold(scores, labels) -> float:
    """Threshold maximizing TPR + TNR - 1 over the observed scores (smallest on ties)."""
    s, y = _arrays(scores, labels)
    best, best_t = -np.inf, 0.5
    for t in np.unique(s):
        c = confusion(s, y, t)
        if c.tpr is None or c.tnr is None:
            raise SingleClass("Youden threshold needs both classes")
        j = c.tpr + c.tnr - 1.0
        if j > best:
            best, best_t = j, float(t)
    return best_t


# -- predictions ------------------------------------------------------------

@dataclass(frozen=True)
class PredictionSet:
    subject_ids: tuple[str, ...]
    scores: np.ndarray
    labels: np.ndarray
    groups: tuple[SubgroupKey, ...] = ()

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        if not np.all(np.isfinite(s)) or np.any((s < 0) | (s > 1)):
            raise ValidationError("scores must be finite and within [0, 1]")
        y = np.asarray(self.labels).astype(int)
        if not np.all((y == 0) | (y == 1)):
            raise ValidationError("labels must be 0 or 1")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.subject_ids)

    def take(self, idx: np.ndarray) -> "PredictionSet":
        return PredictionSet(
            tuple(self.subject_ids[i] for i in idx), self.scores[idx], self.labels[idx],
            tuple(self.groups[i] for i in idx) if self.groups else (),
        )

    def join(self, manifest: DatasetManifest) -> "PredictionSet":
        recs = manifest.by_id()
        groups = []
        for sid in self.subject_ids:
            if sid not in recs:
                raise JoinFailure(sid)
            groups.append(assign_group(recs[sid]))
        return PredictionSet(self.subject_ids, self.scores, self.labels, tuple(groups))


def read_predictions(path: str | os.PathLike) -> PredictionSet:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"subject_id", "score", "label"} <= set(reader.fieldnames):
            raise ValidationError(f"{path}: header must be subject_id,score,label")
        ids, scores, labels = [], [], []
        for i, row in enumerate(reader, start=1):
            try:
                scores.append(float(row["score"]))
                labels.append(int(row["label"]))
            except ValueError as exc:
                raise ValidationError(f"{path}: row {i}: {exc}") from None
            ids.append(row["subject_id"])
    return PredictionSet(tuple(ids), np.array(scores), np.array(labels))


def attribute_value(key: SubgroupKey, attribute: str) -> str:
    if attribute == "sex":
        return key.sex.value
    if attribute in ("bmi", "bmi_bin"):
        return key.bmi_bin.value
    if attribute in ("age", "age_bin"):
        return key.age_bin.value
    if attribute == "full-key":
        return str(key)
    raise ValueError(f"unknown attribute {attribute!r}")


def group_indices(predictions: PredictionSet, attribute: str) -> dict[str, np.ndarray]:
    if not predictions.groups:
        raise ValidationError("predictions are not joined to a manifest")
    vals = [attribute_value(g, attribute) for g in predictions.groups]
    # keep the enum declaration order of group labels
    order = {}
    for key in sorted(set(predictions.groups)):
        order.setdefault(attribute_value(key, attribute), len(order))
    out: dict[str, list[int]] = {}
    for i, v in enumerate(vals):
        out.setdefault(v, []).append(i)
    return {k: np.array(out[k]) for k in sorted(out, key=order.get)}


# -- group rates / EOD --------------------------------------------------------

@dataclass(frozen=True)
class GroupRates:
    attribute: str
    threshold: float
    groups: dict[str, Confusion]

    def tprs(self) -> dict[str, float | None]:
        return {g: c.tpr for g, c in self.groups.items()}

    def undefined(self) -> list[str]:
        return [g for g, c in self.groups.items() if c.tpr is None]


def group_rates(predictions: PredictionSet, attribute: str, threshold: float = 0.5) -> GroupRates:
    rates = {}
    for g, idx in group_indices(predictions, attribute).items():
        rates[g] = confusion(predictions.scores[idx], predictions.labels[idx], threshold)
    out = GroupRates(attribute, threshold, rates)
    if out.undefined():
        warnings.warn(f"{attribute}: TPR undefined (no positives) for {out.undefined()}",
                      UndefinedRateWarning, stacklevel=2)
    return out


def eod_gap(rates: GroupRates | Mapping[str, float | Fraction | None]) -> float:
    """Equal opportunity difference reported as ``max TPR - min TPR`` >= 0.

    Groups without positives are excluded. Rates taken from confusion counts
    are subtracted as exact fractions, so TPRs 9/10 and 6/10 give 0.3 rather
    than 0.30000000000000004.
    """
    if isinstance(rates, GroupRates):
        tprs = {g: c.tpr_exact for g, c in rates.groups.items()}
    else:
        tprs = dict(rates)
    defined = [v for v in tprs.values() if v is not None]
    if len(defined) < 2:
        raise TooFewGroups(f"EOD needs >= 2 groups with defined TPR, got {len(defined)}")
    return float(max(defined) - min(defined))


# -- bootstrap --------------------------------------------------------------

MetricFn = Callable[[np.ndarray, np.ndarray], float]
NAMED_METRICS: dict[str, MetricFn] = {
    "auroc": auroc,
    "bacc": bacc,
    "accuracy": accuracy,
    "tpr": tpr,
}


def stratified_resample(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn with replacement separately within each label."""
    parts = []
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        if idx.size:
            parts.append(idx[rng.integers(0, idx.size, size=idx.size)])
    return np.sort(np.concatenate(parts)) if parts else np.array([], dtype=int)


def bootstrap_ci(
    metric: str | MetricFn,
    scores,
    labels,
    n_resamples: int = 1000,
    seed: int = 42,
    level: float = 0.95,
    max_skip_fraction: float = 0.2,
) -> tuple[float, float]:
    """Percentile bootstrap CI with label-stratified subject resampling.

    Resample ``i`` uses its own generator derived from ``(seed, i)``.
    Resamples where the metric is undefined are skipped; more than
    ``max_skip_fraction`` skipped raises :class:`BootstrapFailure`.
    """
    fn = NAMED_METRICS[metric] if isinstance(metric, str) else metric
    s, y = _arrays(scores, labels)
    fn(s, y)  # must be computable on the full set
    vals, skipped = [], 0
    for i in range(n_resamples):
        idx = stratified_resample(y, make_rng(seed, i))
        try:
            vals.append(fn(s[idx], y[idx]))
        except (SingleClass, ValidationError):
            skipped += 1
    if skipped > max_skip_fraction * n_resamples:
        raise BootstrapFailure(f"{skipped}/{n_resamples} resamples undefined")
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(vals, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


# -- report -----------------------------------------------------------------

def _safe(fn, *args):
    try:
        return fn(*args)
    except (SingleClass, TooFewGroups):
        return None


def _point_estimates(scores: np.ndarray, labels: np.ndarray, threshold: float,
                     codes: dict[str, tuple[list[str], np.ndarray]]) -> dict:
    """Flat {entry name: value or None} for every report entry.

    ``codes[attr]`` is (group names, integer group code per row).
    """
    out = {
        "overall.AUROC": _safe(auroc, scores, labels),
        "overall.BACC": _safe(bacc, scores, labels, threshold),
    }
    for attr, (names, code) in codes.items():
        aucs, baccs, tprs = [], [], {}
        for gi, g in enumerate(names):
            sel = code == gi
            s, y = scores[sel], labels[sel]
            a = _safe(auroc, s, y) if s.size else None
            b = _safe(bacc, s, y, threshold) if s.size else None
            t = confusion(s, y, threshold).tpr_exact if s.size else None
            out[f"{attr}.{g}.AUROC"], out[f"{attr}.{g}.BACC"] = a, b
            out[f"{attr}.{g}.TPR"] = None if t is None else float(t)
            aucs.append(a)
            baccs.append(b)
            tprs[g] = t
        for m, vals in (("AUROC", aucs), ("BACC", baccs)):
            defined = [v for v in vals if v is not None]
            out[f"{attr}.average.{m}"] = float(np.mean(defined)) if defined else None
        out[f"{attr}.EOD"] = _safe(eod_gap, tprs)
    return out


def _entry(value, ci) -> dict:
    def x100(v):
        return None if v is None else round(v * 100.0, 10)
    return {
        "value": value,
        "x100": x100(value),
        "ci": list(ci) if ci else None,
        "ci_x100": [x100(ci[0]), x100(ci[1])] if ci else None,
    }


def fairness_report(
    predictions: PredictionSet,
    manifest: DatasetManifest,
    threshold: float = 0.5,
    seed: int = 42,
    n_resamples: int = 1000,
    level: float = 0.95,
    threshold_mode: str = "fixed",
) -> dict:
    """Overall, per-group and attribute-averaged AUROC/BACC/TPR plus EOD, with CIs.

    Attribute averages are unweighted means over the groups where the metric
    is defined. CIs come from one label-stratified bootstrap shared by all
    entries; an entry whose metric is undefined in more than 20% of the
    resamples gets ``ci = null`` and a diagnostic.
    """
    p = predictions.join(manifest)
    index_by_attr = {a: group_indices(p, a) for a in REPORT_ATTRIBUTES}
    codes = {}
    for attr, groups in index_by_attr.items():
        code = np.empty(len(p), dtype=int)
        for gi, idx in enumerate(groups.values()):
            code[idx] = gi
        codes[attr] = (list(groups), code)
    point = _point_estimates(p.scores, p.labels, threshold, codes)

    diagnostics: list[str] = []
    for attr, groups in index_by_attr.items():
        for g, idx in groups.items():
            if point[f"{attr}.{g}.TPR"] is None:
                diagnostics.append(f"{attr}={g}: no positives, TPR undefined and excluded from EOD")
            if point[f"{attr}.{g}.AUROC"] is None:
                diagnostics.append(f"{attr}={g}: single class, AUROC undefined")

    samples: dict[str, list[float]] = {k: [] for k in point}
    for i in range(n_resamples):
        idx = stratified_resample(p.labels, make_rng(seed, i))
        sub_codes = {a: (names, code[idx]) for a, (names, code) in codes.items()}
        for k, v in _point_estimates(p.scores[idx], p.labels[idx], threshold, sub_codes).items():
            if v is not None and k in samples:
                samples[k].append(v)

    alpha = (1.0 - level) / 2.0
    cis = {}
    for k, vals in samples.items():
        if point[k] is None:
            cis[k] = None
        elif len(vals) < (1 - 0.2) * n_resamples:
            cis[k] = None
            diagnostics.append(f"{k}: undefined in {n_resamples - len(vals)}/{n_resamples} resamples, no CI")
        else:
            lo, hi = np.quantile(vals, [alpha, 1.0 - alpha])
            cis[k] = (float(lo), float(hi))

    attributes = {}
    table = []
    for attr, groups in index_by_attr.items():
        block = {"groups": {}, "average": {}}
        for g, idx in groups.items():
            y = p.labels[idx]
            block["groups"][g] = {
                m: _entry(point[f"{attr}.{g}.{m}"], cis[f"{attr}.{g}.{m}"]) for m in ("AUROC", "BACC", "TPR")
            }
            block["groups"][g]["n"] = int(idx.size)
            block["groups"][g]["n_positive"] = int(y.sum())
        for m in ("AUROC", "BACC"):
            block["average"][m] = _entry(point[f"{attr}.average.{m}"], cis[f"{attr}.average.{m}"])
        block["EOD"] = _entry(point[f"{attr}.EOD"], cis[f"{attr}.EOD"])
        attributes[attr] = block
        for m in ("AUROC", "BACC"):
            table.append({"group": REPORT_ATTRIBUTES[attr], "metric": m, **block["average"][m]})
        table.append({"group": REPORT_ATTRIBUTES[attr], "metric": "EOD", **block["EOD"]})
    overall = {m: _entry(point[f"overall.{m}"], cis[f"overall.{m}"]) for m in ("AUROC", "BACC")}
    for m in ("AUROC", "BACC"):
        table.append({"group": "Overall", "metric": m, **overall[m]})

    return {
        "settings": fingerprint(
            threshold=threshold, threshold_mode=threshold_mode, seed=seed, n_resamples=n_resamples,
            ci_level=level, ci_method="percentile_bootstrap_label_stratified",
            eod="max_tpr_minus_min_tpr", average="unweighted_group_mean",
        ),
        "n": len(p),
        "n_positive": int(p.labels.sum()),
        "overall": overall,
        "attributes": attributes,
        "table": table,
        "diagnostics": diagnostics,
    }
