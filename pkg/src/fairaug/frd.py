"""Fréchet Radiomics Distance between Gaussian fits of feature tables.

For summaries ``(mu_a, S_a)`` and ``(mu_b, S_b)`` the reported value is the
squared distance

    d2 = |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)

The symmetric inner form has the same trace as ``(S_a S_b)^1/2`` but keeps the
operand symmetric PSD, so both square roots go through :func:`jacobi_eigh`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ._common import fingerprint, make_rng
from .errors import (
    DiagnosticWarning,
    DimensionMismatch,
    IndefiniteBeyondTolerance,
    NotSymmetric,
    ReferenceTooSmall,
    SmallSampleWarning,
    TooFewSamples,
)
from .radiomics import FeatureTable

EPSILON = 1e-6
N_SPLITS = 5


# -- symmetric eigensolver --------------------------------------------------

def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings for one sweep: ``m - 1`` rounds of disjoint (p, q) pairs, p < q.

    Circle method; with odd ``n`` a phantom index sits out one pair per round.
    """
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for k in range(m // 2):
            a, b = players[k], players[m - 1 - k]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=int), np.array(qs, dtype=int)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


_ROUNDS_CACHE: dict[int, list] = {}


def _rounds(n: int) -> list[tuple[np.ndarray, ...]]:
    """Round-robin pairs plus the flat indices of (p,p), (q,q), (p,q), (q,p)."""
    out = _ROUNDS_CACHE.get(n)
    if out is None:
        out = _ROUNDS_CACHE[n] = [(p * n + p, q * n + q, p * n + q, q * n + p) for p, q in _round_robin(n)]
    return out


def jacobi_eigh(S: np.ndarray, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every (p, q) pair once, in round-robin order so that the
    rotations of one round act on disjoint index pairs and can be applied
    together. Iterates until the off-diagonal norm is below machine precision
    relative to ``|S|_F``.

    Returns ``(eigenvalues, eigenvectors)`` sorted ascending, with
    ``S = Q diag(w) Q^T``.
    """
    A = np.array(S, dtype=float, copy=True)
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionMismatch(f"expected a square matrix, got {A.shape}")
    V = np.eye(n)
    if n == 1:
        return A.diagonal().copy(), V
    rounds = _rounds(n)
    scale = np.linalg.norm(A)
    tol = np.finfo(float).eps * max(scale, np.finfo(float).tiny)
    offdiag = ~np.eye(n, dtype=bool)
    eye = np.eye(n)

    for _ in range(max_sweeps):
        if np.linalg.norm(A[offdiag]) <= tol:
            break
        for ipp, iqq, ipq, iqp in rounds:
            flat = A.ravel()
            apq = flat[ipq]
            tau = flat[iqq] - flat[ipp]
            # tan of the rotation angle, smaller root; apq == 0 gives t = 0
            denom = np.abs(tau) + np.hypot(tau, 2.0 * apq)
            t = np.divide(np.where(tau >= 0, 2.0, -2.0) * apq, denom, out=np.zeros_like(apq), where=denom > 0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            # the rotations of a round touch disjoint (p, q) pairs: apply them as one block matrix
            J = eye.copy()
            Jf = J.ravel()
            Jf[ipp] = c
            Jf[iqq] = c
            Jf[ipq] = s
            Jf[iqp] = -s
            A = J.T @ A @ J
            Af = A.ravel()
            Af[ipq] = 0.0
            Af[iqp] = 0.0
            V = V @ J
        A = (A + A.T) / 2.0
    w = A.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def _check_symmetric(S: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {S.shape}")
    if np.max(np.abs(S - S.T), initial=0.0) > tol * (1.0 + np.max(np.abs(S), initial=0.0)):
        raise NotSymmetric("matrix is not symmetric within tolerance")
    return (S + S.T) / 2.0


def _psd_eigenvalues(w: np.ndarray, scale: float, tol: float = 1e-9) -> np.ndarray:
    if w.size and w.min() < -tol * max(1.0, scale):
        raise IndefiniteBeyondTolerance(f"smallest eigenvalue {w.min():.3e} is below -{tol:g}")
    return np.clip(w, 0.0, None)


def matrix_sqrt_psd(S: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root ``R`` with ``R @ R == S``.

    Eigenvalues down to -1e-9 are treated as rounding noise and clamped to 0.
    """
    S = _check_symmetric(S)
    w, Q = jacobi_eigh(S)
    w = _psd_eigenvalues(w, float(np.max(np.abs(S), initial=0.0)))
    R = (Q * np.sqrt(w)) @ Q.T
    return (R + R.T) / 2.0


def sqrt_trace_product(Sa: np.ndarray, Sb: np.ndarray) -> float:
    """``tr((Sa Sb)^1/2)`` via the symmetric form ``tr((Sa^1/2 Sb Sa^1/2)^1/2)``."""
    ra = matrix_sqrt_psd(Sa)
    inner = _check_symmetric(ra @ _check_symmetric(Sb) @ ra, tol=1e-8)
    w, _ = jacobi_eigh(inner)
    w = _psd_eigenvalues(w, float(np.max(np.abs(inner), initial=0.0)))
    return float(np.sum(np.sqrt(w)))


# -- Gaussian summaries -----------------------------------------------------

@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray
    covariance: np.ndarray
    n: int

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_gaussian(table: FeatureTable | np.ndarray, eps: float = EPSILON) -> GaussianSummary:
    """Sample mean and (n-1)-denominator covariance plus ``eps * I``."""
    X = table.values if isinstance(table, FeatureTable) else np.asarray(table, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise TooFewSamples(f"need at least 2 rows to fit a Gaussian, got {X.shape[0] if X.ndim else 0}")
    n, d = X.shape
    if n < d:
        warnings.warn(f"{n} samples for {d} features; covariance is rank deficient", SmallSampleWarning, stacklevel=2)
    mu = X.mean(axis=0)
    D = X - mu
    cov = D.T @ D / (n - 1)
    cov = (cov + cov.T) / 2.0 + eps * np.eye(d)
    return GaussianSummary(mu, cov, n)


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimension {a.dim} != {b.dim}")
    diff = a.mean - b.mean
    tr = float(np.trace(a.covariance) + np.trace(b.covariance))
    d2 = float(diff @ diff) + tr - 2.0 * sqrt_trace_product(a.covariance, b.covariance)
    return max(d2, 0.0)


# -- standardization --------------------------------------------------------

@dataclass(frozen=True)
class Standardized:
    table: FeatureTable
    reference: FeatureTable
    dropped: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray


def standardize_features(table: FeatureTable, reference: FeatureTable) -> Standardized:
    """z-score both tables with the reference mean/std (ddof=1).

    Features that are constant in the reference are dropped from both tables.
    """
    if table.names != reference.names:
        raise DimensionMismatch("feature tables have different columns")
    if len(reference) < 2:
        raise ReferenceTooSmall(f"reference has {len(reference)} rows, need >= 2")
    mu = reference.values.mean(axis=0)
    sd = reference.values.std(axis=0, ddof=1)
    const = sd <= 1e-12 * np.maximum(1.0, np.abs(mu))
    dropped = tuple(n for n, c in zip(reference.names, const) if c)
    if dropped:
        warnings.warn(f"dropping constant reference features: {', '.join(dropped)}", DiagnosticWarning, stacklevel=2)
    keep = ~const
    names = tuple(n for n, k in zip(reference.names, keep) if k)
    mu, sd = mu[keep], sd[keep]

    def z(t: FeatureTable) -> FeatureTable:
        return FeatureTable(t.ids, names, (t.values[:, keep] - mu) / sd)

    return Standardized(z(table), z(reference), dropped, mu, sd)


# -- group matrix -----------------------------------------------------------

@dataclass(frozen=True)
class FRDResult:
    value: float
    group_a: str
    group_b: str
    n_a: int
    n_b: int
    fingerprint: str = ""

    def to_dict(self) -> dict:
        return {"group_a": self.group_a, "group_b": self.group_b, "value": self.value,
                "n_a": self.n_a, "n_b": self.n_b, "fingerprint": self.fingerprint}


@dataclass(frozen=True)
class FRDMatrix:
    groups: tuple[str, ...]
    values: np.ndarray
    entries: tuple[FRDResult, ...]
    settings: dict = field(default_factory=dict)
    dropped: tuple[str, ...] = ()

    def get(self, a: str, b: str) -> float:
        return float(self.values[self.groups.index(a), self.groups.index(b)])

    def to_dict(self) -> dict:
        return {
            "settings": self.settings,
            "groups": list(self.groups),
            "dropped_features": list(self.dropped),
            "matrix": [[float(v) for v in row] for row in self.values],
            "entries": [e.to_dict() for e in self.entries],
        }


def intra_group_frd(X: np.ndarray, seed: int, stream: int, n_splits: int = N_SPLITS, eps: float = EPSILON) -> float:
    """Mean distance between the two halves of ``n_splits`` seeded 50/50 splits."""
    n = X.shape[0]
    if n < 4:
        raise TooFewSamples(f"intra-group FRD needs >= 4 rows, got {n}")
    vals = []
    for k in range(n_splits):
        perm = make_rng(seed, stream, k).permutation(n)
        half = n // 2
        vals.append(frechet_distance(fit_gaussian(X[perm[:half]], eps), fit_gaussian(X[perm[half:]], eps)))
    return float(np.mean(vals))


def frd_matrix(
    tables: Mapping[str, FeatureTable],
    reference: str | FeatureTable = "pooled",
    seed: int = 42,
    n_splits: int = N_SPLITS,
    eps: float = EPSILON,
) -> FRDMatrix:
    """Symmetric FRD matrix over labelled feature tables.

    All tables are standardized against ``reference`` ("pooled" = all rows of
    all tables, a group label, or an explicit table). Off-diagonal entries
    compare full groups; diagonal entries use seeded half-splits.
    """
    labels = tuple(sorted(tables))
    if not labels:
        raise TooFewSamples("no groups given")
    names = tables[labels[0]].names
    if isinstance(reference, FeatureTable):
        ref = reference
        ref_name = "explicit"
    elif reference == "pooled":
        ref = FeatureTable(
            tuple(i for l in labels for i in tables[l].ids), names,
            np.vstack([tables[l].values for l in labels]),
        )
        ref_name = "pooled"
    else:
        ref = tables[reference]
        ref_name = f"group:{reference}"

    std = {l: standardize_features(tables[l], ref) for l in labels}
    dropped = std[labels[0]].dropped if labels else ()
    X = {l: std[l].table.values for l in labels}
    dim = X[labels[0]].shape[1]
    for l in labels:
        if X[l].shape[0] < 2 * dim:
            warnings.warn(f"group {l!r} has {X[l].shape[0]} rows for {dim} features", SmallSampleWarning, stacklevel=2)

    settings = fingerprint(
        value="squared_frechet_distance", eps=eps, n_splits=n_splits, seed=seed,
        reference=ref_name, standardization="zscore_ddof1", features=list(std[labels[0]].table.names),
    )
    fits = {l: fit_gaussian(X[l], eps) for l in labels}
    k = len(labels)
    M = np.zeros((k, k))
    entries = []
    for i, a in enumerate(labels):
        for j in range(i, k):
            b = labels[j]
            if i == j:
                v = intra_group_frd(X[a], seed, i, n_splits, eps)
                na = nb = X[a].shape[0]
            else:
                v = frechet_distance(fits[a], fits[b])
                na, nb = X[a].shape[0], X[b].shape[0]
            M[i, j] = M[j, i] = v
            entries.append(FRDResult(v, a, b, na, nb, settings["sha256"]))
    return FRDMatrix(labels, M, tuple(entries), settings, dropped)
