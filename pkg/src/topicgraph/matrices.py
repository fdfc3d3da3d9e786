"""TF-IDF, co-occurrence/SPPMI and category matrices.

Every matrix is a ``scipy.sparse.csc_matrix`` of float64 holding only
strictly positive entries. Rows index the vocabulary.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import TokenizedDocument, Vocabulary


@dataclass(frozen=True)
class CooccurrenceConfig:
    window: int = 100
    shift: float = 4.0

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.shift < 1:
            raise ValueError("shift must be >= 1")


def as_sparse(A) -> sp.csc_matrix:
    """Coerce to canonical CSC form and check the nonnegativity invariant."""
    A = sp.csc_matrix(A, dtype=np.float64)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    if A.nnz and (not np.all(np.isfinite(A.data)) or A.data.min() < 0):
        raise ValueError("matrix entries must be finite and nonnegative")
    return A


def _from_triplets(rows, cols, vals, shape) -> sp.csc_matrix:
    return as_sparse(
        sp.coo_matrix(
            (np.asarray(vals, dtype=np.float64), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
            shape=shape,
        )
    )


def _token_ids(doc: TokenizedDocument, vocab: Vocabulary) -> np.ndarray:
    idx = vocab.index
    return np.fromiter((idx[t] for t in doc.tokens if t in idx), dtype=np.int64)


def _tfidf(columns: Sequence[Counter], n_rows: int) -> sp.csc_matrix:
    n = len(columns)
    df = np.zeros(n_rows, dtype=np.int64)
    for col in columns:
        for f in col:
            df[f] += 1
    rows, cols, vals = [], [], []
    for j, col in enumerate(columns):
        for f, tf in col.items():
            if df[f] < n:
                rows.append(f)
                cols.append(j)
                vals.append(tf * math.log(n / df[f]))
    return _from_triplets(rows, cols, vals, (n_rows, n))


def build_tfidf(docs: Sequence[TokenizedDocument], vocab: Vocabulary) -> sp.csc_matrix:
    """Token-by-document matrix with raw counts times ``ln(N / df)``.

    Document frequencies are counted over ``docs`` themselves, which equals
    ``vocab.df`` when the vocabulary was built from the same documents.
    """
    if not len(vocab):
        raise ValueError("empty vocabulary")
    if not docs:
        raise ValueError("no documents")
    columns = [Counter(_token_ids(d, vocab).tolist()) for d in docs]
    return _tfidf(columns, len(vocab))


def build_cooccurrence(
    docs: Sequence[TokenizedDocument], vocab: Vocabulary, window: int
) -> sp.csc_matrix:
    """Symmetric windowed co-occurrence counts.

    Out-of-vocabulary tokens are removed before positions are counted, and a
    window never spans two documents. A same-token pair adds 2 to the
    diagonal cell.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    F = len(vocab)
    row_parts, col_parts = [], []
    for d in docs:
        ids = _token_ids(d, vocab)
        for off in range(1, min(window, len(ids) - 1) + 1):
            a, b = ids[:-off], ids[off:]
            row_parts += [a, b]
            col_parts += [b, a]
    if not row_parts:
        return sp.csc_matrix((F, F), dtype=np.float64)
    rows = np.concatenate(row_parts)
    cols = np.concatenate(col_parts)
    return _from_triplets(rows, cols, np.ones(rows.size), (F, F))


def sppmi(counts, shift: float) -> sp.csc_matrix:
    """Shifted positive PMI: ``max(ln(c_ij * T / (r_i r_j)) - ln(shift), 0)``."""
    if shift < 1:
        raise ValueError("shift must be >= 1")
    C = sp.coo_matrix(as_sparse(counts))
    total = C.data.sum()
    if total <= 0:
        raise ValueError("co-occurrence matrix is all zero")
    row = np.asarray(as_sparse(counts).sum(axis=1)).ravel()
    pmi = np.log(C.data * total / (row[C.row] * row[C.col])) - math.log(shift)
    keep = pmi > 0
    return _from_triplets(C.row[keep], C.col[keep], pmi[keep], C.shape)


def category_labels(doc_category: Mapping[str, str]) -> list[str]:
    return sorted(set(doc_category.values()))


def build_category_matrix(
    docs: Sequence[TokenizedDocument], vocab: Vocabulary, doc_category: Mapping[str, str]
) -> tuple[sp.csc_matrix, list[str]]:
    """Token-by-category TF-IDF, one super-document per category.

    Returns the matrix and the lexicographically ordered category labels
    that index its columns.
    """
    if not len(vocab):
        raise ValueError("empty vocabulary")
    missing = [d.doc_id for d in docs if d.doc_id not in doc_category]
    if missing:
        raise ValueError(f"documents without a category: {missing[:5]}")
    labels = sorted({doc_category[d.doc_id] for d in docs})
    if not labels:
        raise ValueError("no categories")
    pos = {c: j for j, c in enumerate(labels)}
    columns = [Counter() for _ in labels]
    for d in docs:
        columns[pos[doc_category[d.doc_id]]].update(_token_ids(d, vocab).tolist())
    return _tfidf(columns, len(vocab)), labels


# ---------------------------------------------------------------------------
# triplet text format
# ---------------------------------------------------------------------------


def write_triplets(A, path) -> None:
    """Header ``rows cols nnz`` then ``row col value`` sorted by (col, row)."""
    A = sp.csc_matrix(A, dtype=np.float64)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    lines = [f"{A.shape[0]} {A.shape[1]} {A.nnz}"]
    for j in range(A.shape[1]):
        lo, hi = A.indptr[j], A.indptr[j + 1]
        for i, v in zip(A.indices[lo:hi], A.data[lo:hi]):
            lines.append(f"{i} {j} {v:.17g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_triplets(path) -> sp.csc_matrix:
    with open(path, encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: bad triplet header")
        n_rows, n_cols, nnz = map(int, header)
        data = np.loadtxt(fh, ndmin=2) if nnz else np.empty((0, 3))
    if data.shape[0] != nnz:
        raise ValueError(f"{path}: header says {nnz} entries, found {data.shape[0]}")
    M = sp.csc_matrix(
        (data[:, 2], (data[:, 0].astype(np.int64), data[:, 1].astype(np.int64))),
        shape=(n_rows, n_cols),
    )
    M.sort_indices()
    return M


def write_dense(M: np.ndarray, path) -> None:
    write_triplets(sp.csc_matrix(np.asarray(M, dtype=np.float64)), path)


def read_dense(path) -> np.ndarray:
    return read_triplets(path).toarray()
