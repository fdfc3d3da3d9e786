"""Chunked joint factorization: factor column chunks, merge their bases,
then fuse in bases learned from side matrices (word context, categories).

Every basis that gets concatenated is first scaled to unit-norm columns
and the norms are folded into the matching coefficient rows, so blocks of
very different magnitude compete fairly in the merge factorization.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .matrices import as_sparse
from .nmf import FactorPair, normalize_factors, relative_error
from .nmfk import ModelSelection, NmfkParams, _map, derive_seed, select_k

logger = logging.getLogger(__name__)

# seed stream tags, one per factorization role
_CHUNK, _MERGE, _SIDE_S, _SIDE_C, _FUSE = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class SplitParams:
    """Chunk count, rank-selection settings and side-matrix block weights."""

    m: int = 20
    nmfk: NmfkParams = field(default_factory=NmfkParams)
    weights: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if min(self.weights) < 0:
            raise ValueError("side weights must be nonnegative")


@dataclass
class ChunkFactors:
    factors: list[FactorPair]
    offsets: list[int]
    n_cols: int

    @property
    def ranks(self) -> list[int]:
        return [fp.k for fp in self.factors]

    @property
    def K(self) -> int:
        return sum(self.ranks)


@dataclass
class MergeResult:
    W_x: np.ndarray
    M: np.ndarray
    M_blocks: list[np.ndarray]
    H_star: np.ndarray
    p: int
    selection: Optional[ModelSelection] = field(default=None, repr=False)


@dataclass
class SideMergeResult:
    W: np.ndarray
    H: np.ndarray
    t: int
    Y: Optional[np.ndarray] = None
    W_plus: Optional[np.ndarray] = None
    W_s: Optional[np.ndarray] = None
    H_s: Optional[np.ndarray] = None
    W_c: Optional[np.ndarray] = None
    H_c: Optional[np.ndarray] = None
    p: int = 0
    s: int = 0
    c: int = 0

    @property
    def Z(self) -> int:
        return self.p + self.s + self.c

    @property
    def Y_blocks(self):
        if self.Y is None:
            return None
        return (
            self.Y[:, : self.p],
            self.Y[:, self.p : self.p + self.s],
            self.Y[:, self.p + self.s :],
        )


def chunk_columns(X, m: int):
    """Split columns into ``m`` contiguous near-equal slices.

    Returns ``(chunks, offsets)``; the first ``N % m`` chunks are one
    column wider.
    """
    X = as_sparse(X)
    N = X.shape[1]
    if m < 1 or m > N:
        raise ValueError(f"chunk count m={m} outside [1, {N}]")
    base, extra = divmod(N, m)
    sizes = [base + (1 if i < extra else 0) for i in range(m)]
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int).tolist()
    chunks = [X[:, o : o + s] for o, s in zip(offsets, sizes)]
    return chunks, offsets


def _select(A, params: NmfkParams, tag: int, index: int = 0, min_k: int | None = None) -> ModelSelection:
    A = as_sparse(A)
    p = params.clipped(min(A.shape), min_k=min_k).with_seed(derive_seed(params.master_seed, tag, index))
    return select_k(A, p)


def _fit_chunks(chunks, params: NmfkParams, indices) -> list[FactorPair]:
    for i in indices:
        if as_sparse(chunks[i]).nnz == 0:
            raise ValueError(f"chunk {i} is entirely zero")
    # parallelism goes across chunks, so each ensemble runs sequentially
    inner = NmfkParams(**{**params.__dict__, "n_jobs": 1})
    selections = _map(lambda i: _select(chunks[i], inner, _CHUNK, i), list(indices), params.n_jobs)
    for i, sel in zip(indices, selections):
        logger.info("chunk %d: k=%d", i, sel.k_star)
    return [sel.consensus for sel in selections]


def factorize_chunks(chunks, params: NmfkParams, offsets=None) -> ChunkFactors:
    """Rank-select and factor every chunk; chunk i uses a seed derived from i."""
    if offsets is None:
        offsets = np.concatenate([[0], np.cumsum([c.shape[1] for c in chunks])[:-1]]).astype(int).tolist()
    factors = _fit_chunks(chunks, params, range(len(chunks)))
    return ChunkFactors(factors, list(offsets), offsets[-1] + chunks[-1].shape[1])


def _stack_normalized(blocks):
    """Unit-normalize each basis; return the concatenation and per-block norms."""
    cols, norms = [], []
    for W in blocks:
        n = np.linalg.norm(W, axis=0)
        n = np.where(n > 0, n, 1.0)
        cols.append(W / n)
        norms.append(n)
    return np.hstack(cols), norms


def _lift(cf: ChunkFactors, W_x: np.ndarray, M: np.ndarray, norms=None) -> MergeResult:
    if norms is None:
        _, norms = _stack_normalized([fp.W for fp in cf.factors])
    p = W_x.shape[1]
    H_star = np.zeros((p, cf.n_cols))
    blocks, start = [], 0
    for fp, n, off in zip(cf.factors, norms, cf.offsets):
        M_i = M[:, start : start + fp.k]
        blocks.append(M_i)
        H_star[:, off : off + fp.H.shape[1]] = M_i @ (fp.H * n[:, None])
        start += fp.k
    return MergeResult(W_x=W_x, M=M, M_blocks=blocks, H_star=H_star, p=p)


def merge_chunk_factors(cf: ChunkFactors, params: NmfkParams) -> MergeResult:
    """Factor ``[W_1|...|W_m] ~ W_x M`` and lift each ``H_i`` to ``M_i H_i``."""
    if not cf.factors:
        raise ValueError("no chunk factors to merge")
    W_tilde, norms = _stack_normalized([fp.W for fp in cf.factors])
    sel = _select(W_tilde, params, _MERGE, min_k=1)
    mr = _lift(cf, sel.consensus.W, sel.consensus.H, norms)
    mr.selection = sel
    logger.info("merged K=%d chunk topics into p=%d", cf.K, mr.p)
    return mr


def incorporate_side_info(
    mr: MergeResult,
    S=None,
    C=None,
    weights: tuple[float, float] = (1.0, 1.0),
    params: NmfkParams | None = None,
    side: dict | None = None,
) -> SideMergeResult:
    """Fuse word-context and category bases into the document basis.

    ``side`` may carry precomputed ``{"S": FactorPair, "C": FactorPair}``
    (used when resuming from checkpoints).
    """
    params = params or NmfkParams()
    F = mr.W_x.shape[0]
    if S is None and C is None:
        return SideMergeResult(W=mr.W_x, H=mr.H_star, t=mr.p, p=mr.p)
    if S is not None and as_sparse(S).shape != (F, F):
        raise ValueError(f"S has shape {as_sparse(S).shape}, expected ({F}, {F})")
    if C is not None and as_sparse(C).shape[0] != F:
        raise ValueError(f"C has {as_sparse(C).shape[0]} rows, expected {F}")
    side = dict(side or {})
    w_s, w_c = weights

    if S is not None and "S" not in side:
        side["S"] = _select(S, params, _SIDE_S, min_k=1).consensus
    if C is not None and "C" not in side:
        side["C"] = _select(C, params, _SIDE_C, min_k=1).consensus
    fs, fc = side.get("S"), side.get("C")

    W_x, H_star = normalize_factors(mr.W_x, mr.H_star)
    blocks = [W_x]
    W_s = H_s = W_c = H_c = None
    if fs is not None:
        W_s, H_s = normalize_factors(fs.W, fs.H)
        blocks.append(w_s * W_s)
    if fc is not None:
        W_c, H_c = normalize_factors(fc.W, fc.H)
        blocks.append(w_c * W_c)
    W_plus = np.hstack(blocks)
    sel = _select(W_plus, params, _FUSE, min_k=1)
    W, Y = sel.consensus.W, sel.consensus.H
    H = Y[:, : mr.p] @ H_star
    s = 0 if W_s is None else W_s.shape[1]
    c = 0 if W_c is None else W_c.shape[1]
    logger.info("fused Z=%d+%d+%d columns into t=%d topics", mr.p, s, c, sel.k_star)
    return SideMergeResult(
        W=W, H=H, t=sel.k_star, Y=Y, W_plus=W_plus,
        W_s=W_s, H_s=H_s, W_c=W_c, H_c=H_c, p=mr.p, s=s, c=c,
    )


# ---------------------------------------------------------------------------
# end-to-end with checkpoints
# ---------------------------------------------------------------------------


def matrix_digest(A) -> str:
    h = hashlib.sha256()
    if A is None:
        return "none"
    A = as_sparse(A)
    h.update(np.asarray(A.shape, dtype=np.int64).tobytes())
    for arr in (A.indptr, A.indices, A.data):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def _params_key(params: NmfkParams) -> dict:
    d = dict(params.__dict__)
    d.pop("n_jobs")
    d["nmf_params"] = dict(params.nmf_params.__dict__)
    d["k_range"] = list(d["k_range"])
    return d


def _load_fp(d: Path) -> FactorPair | None:
    try:
        return FactorPair.load(d)
    except (OSError, ValueError, KeyError):
        return None


def run_split(
    X,
    m: int,
    params: NmfkParams,
    S=None,
    C=None,
    weights: tuple[float, float] = (1.0, 1.0),
    checkpoint_dir=None,
):
    """Full chunk -> merge -> side-fusion pipeline.

    With ``checkpoint_dir`` every intermediate FactorPair is written as
    triplet files next to a ``manifest.json``; a later call with the same
    inputs reloads them instead of refitting.
    Returns ``(SideMergeResult, ChunkFactors, MergeResult)``.
    """
    X = as_sparse(X)
    m = min(m, X.shape[1])
    chunks, offsets = chunk_columns(X, m)
    ckpt = Path(checkpoint_dir) if checkpoint_dir else None
    key = {
        "X": matrix_digest(X), "S": matrix_digest(S), "C": matrix_digest(C),
        "m": m, "weights": list(weights), "params": _params_key(params),
    }
    reuse = False
    if ckpt is not None:
        mf = ckpt / "manifest.json"
        if mf.exists():
            reuse = json.loads(mf.read_text()).get("key") == key
        ckpt.mkdir(parents=True, exist_ok=True)

    factors: list[FactorPair | None] = [None] * m
    if reuse:
        factors = [_load_fp(ckpt / f"chunk_{i:03d}") for i in range(m)]
    todo = [i for i, f in enumerate(factors) if f is None]
    if todo:
        for i, fp in zip(todo, _fit_chunks(chunks, params, todo)):
            factors[i] = fp
            if ckpt is not None:
                fp.save(ckpt / f"chunk_{i:03d}")
    cf = ChunkFactors(factors, offsets, X.shape[1])

    mr = None
    if reuse and (ckpt / "merge" / "meta.json").exists():
        fp = _load_fp(ckpt / "merge")
        if fp is not None:
            mr = _lift(cf, fp.W, fp.H)
    if mr is None:
        mr = merge_chunk_factors(cf, params)
        if ckpt is not None:
            FactorPair(mr.W_x, mr.M, mr.p, mr.selection.consensus.rel_error,
                       seed=mr.selection.consensus.seed).save(ckpt / "merge")

    side = {}
    for name, A in (("S", S), ("C", C)):
        if A is None:
            continue
        fp = _load_fp(ckpt / f"side_{name}") if reuse else None
        if fp is None:
            tag = _SIDE_S if name == "S" else _SIDE_C
            fp = _select(A, params, tag, min_k=1).consensus
            if ckpt is not None:
                fp.save(ckpt / f"side_{name}")
        side[name] = fp
    result = incorporate_side_info(mr, S, C, weights, params, side=side)

    if ckpt is not None:
        FactorPair(result.W, result.H, result.t, relative_error(X, result.W, result.H)).save(ckpt / "final")
        manifest = {
            "key": key,
            "offsets": offsets,
            "chunk_ranks": cf.ranks,
            "chunk_seeds": [fp.seed for fp in cf.factors],
            "p": mr.p, "s": result.s, "c": result.c, "t": result.t,
        }
        (ckpt / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return result, cf, mr


