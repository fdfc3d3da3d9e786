"""Frobenius-loss NMF with Lee-Seung multiplicative updates.

The data matrix stays sparse throughout: the updates only need ``W^T A``
and ``A H^T``, and the loss is assembled from the nonzeros plus the Gram
matrices of the factors.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .matrices import as_sparse, read_dense, write_dense

logger = logging.getLogger(__name__)

# flip on to assert nonnegativity after every update
DEBUG_CHECKS = False


@dataclass(frozen=True)
class NmfParams:
    max_iter: int = 500
    tol: float = 1e-8
    init: str = "random-uniform"
    seed: int = 0
    epsilon_guard: float = 1e-16

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.epsilon_guard <= 0:
            raise ValueError("epsilon_guard must be positive")
        if self.init != "random-uniform":
            raise ValueError(f"unsupported init {self.init!r}")

    def with_seed(self, seed: int) -> "NmfParams":
        return replace(self, seed=int(seed))


@dataclass
class FactorPair:
    W: np.ndarray
    H: np.ndarray
    k: int
    rel_error: float
    iterations: int = 0
    seed: int = 0
    objective: list[float] = field(default_factory=list, repr=False)

    def save(self, directory, prefix: str = "") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_dense(self.W, directory / f"{prefix}W.txt")
        write_dense(self.H, directory / f"{prefix}H.txt")
        meta = {
            "k": self.k,
            "seed": self.seed,
            "iterations": self.iterations,
            "rel_error": self.rel_error,
        }
        (directory / f"{prefix}meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory, prefix: str = "") -> "FactorPair":
        directory = Path(directory)
        meta = json.loads((directory / f"{prefix}meta.json").read_text())
        return cls(
            W=read_dense(directory / f"{prefix}W.txt"),
            H=read_dense(directory / f"{prefix}H.txt"),
            k=meta["k"],
            rel_error=meta["rel_error"],
            iterations=meta["iterations"],
            seed=meta["seed"],
        )


def _loss_parts(A: sp.csc_matrix, W: np.ndarray, H: np.ndarray, normA2: float) -> float:
    """Squared residual ``||A - WH||_F^2`` without forming WH densely."""
    coo = A.tocoo()
    wh_nz = np.einsum("ij,ij->i", W[coo.row], H[:, coo.col].T)
    on_support = np.sum((coo.data - wh_nz) ** 2)
    gram = np.sum((W.T @ W) * (H @ H.T))
    off_support = max(gram - np.dot(wh_nz, wh_nz), 0.0)
    return on_support + off_support


def relative_error(A, W: np.ndarray, H: np.ndarray) -> float:
    """``||A - WH||_F / ||A||_F`` for sparse ``A``."""
    A = as_sparse(A)
    if A.shape != (W.shape[0], H.shape[1]) or W.shape[1] != H.shape[0]:
        raise ValueError(f"shape mismatch: A {A.shape}, W {W.shape}, H {H.shape}")
    normA2 = float(np.dot(A.data, A.data))
    if normA2 == 0:
        raise ValueError("relative error undefined for a zero matrix")
    return float(np.sqrt(_loss_parts(A, W, H, normA2) / normA2))


def normalize_factors(W: np.ndarray, H: np.ndarray):
    """Scale W columns to unit length and push the norms into H rows."""
    norms = np.linalg.norm(W, axis=0)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero column of W")
    return W / norms, H * norms[:, None]


def init_factors(A: sp.csc_matrix, k: int, seed: int):
    rng = np.random.default_rng(seed)
    scale = np.sqrt(A.sum() / (A.shape[0] * A.shape[1]) / k)
    # 1 - U[0,1) is U(0,1]: never starts a factor entry at exactly zero
    W = (1.0 - rng.random((A.shape[0], k))) * scale
    H = (1.0 - rng.random((k, A.shape[1]))) * scale
    return W, H


def nmf(A, k: int, params: NmfParams | None = None, W0=None, H0=None, fix_W: bool = False) -> FactorPair:
    """Factorize nonnegative ``A`` (rows x cols) as ``W @ H`` at rank ``k``.

    Stops after ``max_iter`` sweeps or once the relative drop in the squared
    loss over one sweep falls below ``tol``. ``fix_W`` keeps ``W0`` fixed and
    only updates H. The per-sweep loss is expanded as
    ``||A||^2 - 2<W, A H^T> + <W^T W, H H^T>`` from products the updates
    already need; the reported ``rel_error`` is recomputed residual-first.
    """
    params = params or NmfParams()
    A = as_sparse(A)
    if A.nnz == 0:
        raise ValueError("cannot factorize a zero matrix")
    n_rows, n_cols = A.shape
    if fix_W and W0 is None:
        raise ValueError("fix_W requires W0")
    if not fix_W and not 1 <= k <= min(n_rows, n_cols):
        raise ValueError(f"rank k={k} outside [1, {min(n_rows, n_cols)}]")
    W_init, H_init = init_factors(A, k, params.seed)
    W = np.array(W0, dtype=np.float64) if W0 is not None else W_init
    H = np.array(H0, dtype=np.float64) if H0 is not None else H_init
    if W.shape != (n_rows, k) or H.shape != (k, n_cols):
        raise ValueError("initial factor shapes do not match A and k")

    At = A.T.tocsc()
    eps = params.epsilon_guard
    normA2 = float(np.dot(A.data, A.data))

    def loss(AHt, HHt, WtW):
        return max(normA2 - 2.0 * np.sum(W * AHt) + np.sum(WtW * HHt), 0.0)

    WtW = W.T @ W
    obj = [loss(A @ H.T, H @ H.T, WtW)]
    it = 0
    for it in range(1, params.max_iter + 1):
        H *= (At @ W).T / (WtW @ H + eps)
        AHt = A @ H.T
        HHt = H @ H.T
        if not fix_W:
            W *= AHt / (W @ HHt + eps)
            WtW = W.T @ W
        if DEBUG_CHECKS:
            assert np.all(W >= 0) and np.all(H >= 0), "negative factor entry"
        obj.append(loss(AHt, HHt, WtW))
        prev, cur = obj[-2], obj[-1]
        if cur == 0 or (prev > 0 and (prev - cur) / prev < params.tol):
            break
    rel = float(np.sqrt(_loss_parts(A, W, H, normA2) / normA2))
    logger.debug("nmf k=%d seed=%d: %d iterations, rel_error %.3g", k, params.seed, it, rel)
    return FactorPair(W=W, H=H, k=k, rel_error=rel, iterations=it, seed=params.seed, objective=obj)


def fit_H(A, W: np.ndarray, params: NmfParams | None = None) -> np.ndarray:
    """Nonnegative coefficients for a fixed basis ``W`` (H-only updates)."""
    A = as_sparse(A)
    k = W.shape[1]
    return nmf(A, k, params, W0=W, fix_W=True).H
