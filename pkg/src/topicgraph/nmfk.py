"""Automatic rank selection by perturbation-ensemble stability.

For each candidate rank an ensemble of NMF fits is run on randomly
perturbed copies of the data. The W columns of the ensemble are matched
into clusters; a rank is stable when every cluster is tight compared to
its neighbours (cosine silhouette).
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .matrices import as_sparse
from .nmf import FactorPair, NmfParams, fit_H, nmf, normalize_factors, relative_error

logger = logging.getLogger(__name__)


def derive_seed(*parts: int) -> int:
    """Stable 32-bit seed from a tuple of nonnegative integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass(frozen=True)
class NmfkParams:
    k_range: tuple[int, int] = (1, 10)
    n_perturbs: int = 10
    perturb_epsilon: float = 0.015
    silhouette_threshold: float = 0.75
    nmf_params: NmfParams = field(default_factory=NmfParams)
    master_seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        lo, hi = self.k_range
        if lo < 1 or hi < lo:
            raise ValueError(f"bad k_range {self.k_range}")
        if self.n_perturbs < 2:
            raise ValueError("n_perturbs must be >= 2")
        if not 0 <= self.perturb_epsilon < 1:
            raise ValueError("perturb_epsilon must be in [0, 1)")
        if not 0 < self.silhouette_threshold <= 1:
            raise ValueError("silhouette_threshold must be in (0, 1]")

    def with_seed(self, seed: int) -> "NmfkParams":
        return replace(self, master_seed=int(seed))

    def clipped(self, max_k: int, min_k: int | None = None) -> "NmfkParams":
        """Same settings with ``k_range`` clamped into ``[min_k or lo, max_k]``."""
        lo, hi = self.k_range
        if min_k is not None:
            lo = min_k
        hi = min(hi, max_k)
        lo = min(lo, hi)
        return replace(self, k_range=(max(lo, 1), max(hi, 1)))


@dataclass
class ModelSelection:
    k_star: int
    per_k_min_silhouette: dict[int, float]
    per_k_rel_error: dict[int, float]
    consensus: FactorPair


def perturb(A, epsilon: float, seed: int) -> sp.csc_matrix:
    """Multiply every stored entry by an independent draw from U[1-eps, 1+eps]."""
    if not 0 <= epsilon < 1:
        raise ValueError("epsilon must be in [0, 1)")
    A = as_sparse(A)
    out = A.copy()
    if epsilon == 0:
        return out
    rng = np.random.default_rng(seed)
    out.data = out.data * rng.uniform(1 - epsilon, 1 + epsilon, size=out.data.size)
    return out


def _cosine_distance(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return np.clip(1.0 - X.T @ Y, 0.0, 2.0)


def _greedy_assign(sim: np.ndarray) -> np.ndarray:
    """One-to-one column->cluster assignment by descending similarity."""
    k = sim.shape[0]
    order = np.argsort(-sim, axis=None, kind="stable")
    assign = np.full(k, -1)
    used_col = np.zeros(k, bool)
    used_cluster = np.zeros(k, bool)
    n_left = k
    for flat in order:
        c, j = divmod(int(flat), k)
        if used_col[c] or used_cluster[j]:
            continue
        assign[c] = j
        used_col[c] = used_cluster[j] = True
        n_left -= 1
        if not n_left:
            break
    return assign


def silhouettes(points: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-point cosine silhouette for unit-norm columns of ``points``."""
    D = _cosine_distance(points, points)
    ks = np.unique(labels)
    s = np.zeros(points.shape[1])
    if ks.size < 2:
        return np.ones(points.shape[1])
    for i in range(points.shape[1]):
        own = labels == labels[i]
        n_own = own.sum() - 1
        a = D[i, own].sum() / n_own if n_own else 0.0
        b = min(D[i, labels == c].mean() for c in ks if c != labels[i])
        denom = max(a, b)
        s[i] = (b - a) / denom if denom > 0 else 0.0
    return s


def cluster_columns(runs: list[np.ndarray]):
    """Match W columns across runs into k clusters.

    The first run's columns seed the clusters; every later run contributes
    exactly one column per cluster, matched greedily by cosine similarity
    to the running centroids. Returns ``(clusters, min_silhouette)`` where
    ``clusters[j]`` lists the column index each run gave to cluster j.
    """
    if not runs:
        raise ValueError("no runs to cluster")
    shape = runs[0].shape
    if any(W.shape != shape for W in runs):
        raise ValueError("all runs must share one W shape")
    k = shape[1]
    clusters = np.zeros((k, len(runs)), dtype=np.int64)
    clusters[:, 0] = np.arange(k)
    sums = runs[0].copy()
    for r, W in enumerate(runs[1:], start=1):
        centroids = sums / np.maximum(np.linalg.norm(sums, axis=0), 1e-300)
        assign = _greedy_assign(W.T @ centroids)
        for c, j in enumerate(assign):
            clusters[j, r] = c
            sums[:, j] += W[:, c]
    if k == 1:
        return [list(row) for row in clusters], 1.0
    points = np.hstack([W[:, clusters[:, r]] for r, W in enumerate(runs)])
    labels = np.tile(np.arange(k), len(runs))
    s = silhouettes(points, labels)
    min_sil = min(float(s[labels == j].mean()) for j in range(k))
    return [list(row) for row in clusters], min_sil


def _medoids(runs: list[np.ndarray], clusters) -> np.ndarray:
    cols = []
    for j, members in enumerate(clusters):
        pts = np.column_stack([runs[r][:, c] for r, c in enumerate(members)])
        D = _cosine_distance(pts, pts)
        cols.append(pts[:, int(np.argmin(D.sum(axis=1)))])
    return np.column_stack(cols)


def _ensemble_run(A, k: int, params: NmfkParams, run: int):
    seed = derive_seed(params.master_seed, k, run)
    Ap = perturb(A, params.perturb_epsilon, seed)
    fp = nmf(Ap, k, params.nmf_params.with_seed(seed))
    W, H = fp.W, fp.H
    # a dead column would break normalization; give it a uniform direction
    dead = np.linalg.norm(W, axis=0) == 0
    if dead.any():
        W = W.copy()
        W[:, dead] = 1.0
        H = H.copy()
        H[dead] = 0.0
    W, H = normalize_factors(W, H)
    return W, relative_error(A, W, H)


def _map(fn, items, n_jobs: int):
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def evaluate_k(A, k: int, params: NmfkParams):
    """Run the perturbation ensemble at one rank.

    Returns ``(min_silhouette, median_rel_error, medoid_W)``.
    """
    results = _map(lambda r: _ensemble_run(A, k, params, r), range(params.n_perturbs), params.n_jobs)
    runs = [W for W, _ in results]
    clusters, min_sil = cluster_columns(runs)
    return min_sil, float(np.median([e for _, e in results])), _medoids(runs, clusters)


def choose_k(per_k_min_silhouette: dict[int, float], threshold: float) -> int:
    """Largest stable rank; otherwise the most stable one, smaller k on ties."""
    stable = [k for k, s in per_k_min_silhouette.items() if s >= threshold]
    if stable:
        return max(stable)
    best = max(per_k_min_silhouette.values())
    return min(k for k, s in per_k_min_silhouette.items() if s == best)


def select_k(A, params: NmfkParams) -> ModelSelection:
    A = as_sparse(A)
    if A.nnz == 0:
        raise ValueError("cannot factorize a zero matrix")
    lo, hi = params.k_range
    if hi > min(A.shape):
        raise ValueError(f"k_range {params.k_range} exceeds min(shape)={min(A.shape)}")
    sil, err, medoids = {}, {}, {}
    for k in range(lo, hi + 1):
        sil[k], err[k], medoids[k] = evaluate_k(A, k, params)
        logger.debug("k=%d min_silhouette=%.3f rel_error=%.4f", k, sil[k], err[k])
    k_star = choose_k(sil, params.silhouette_threshold)
    W = medoids[k_star]
    nmf_params = params.nmf_params.with_seed(derive_seed(params.master_seed, k_star, params.n_perturbs))
    H = fit_H(A, W, nmf_params)
    consensus = FactorPair(
        W=W, H=H, k=k_star, rel_error=relative_error(A, W, H), seed=nmf_params.seed
    )
    logger.info("selected k=%d from %s", k_star, {k: round(v, 3) for k, v in sil.items()})
    return ModelSelection(k_star, sil, err, consensus)
