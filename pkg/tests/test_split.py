import numpy as np
import pytest
import scipy.sparse as sp

from planted import matched_agreement, topic_corpus
from topicgraph.corpus import build_vocabulary
from topicgraph.matrices import build_cooccurrence, build_tfidf, sppmi
from topicgraph.nmf import FactorPair, nmf, relative_error
from topicgraph.nmfk import NmfkParams
from topicgraph.split import (
    ChunkFactors,
    MergeResult,
    chunk_columns,
    factorize_chunks,
    incorporate_side_info,
    merge_chunk_factors,
    run_split,
)

FAST = NmfkParams(k_range=(1, 4), n_perturbs=4, master_seed=0)


def rank_one_blocks(n_blocks=2, size=10, seed=0):
    """Block diagonal with each block an outer product of positive vectors."""
    rng = np.random.default_rng(seed)
    A = np.zeros((n_blocks * size, n_blocks * size))
    for b in range(n_blocks):
        s = slice(b * size, (b + 1) * size)
        A[s, s] = np.outer(rng.uniform(0.5, 1.5, size), rng.uniform(0.5, 1.5, size))
    return sp.csc_matrix(A)


def chunk_factor(W, H):
    return FactorPair(np.asarray(W, float), np.asarray(H, float), W.shape[1], 0.0)


class TestChunkColumns:
    def test_sizes(self):
        chunks, offsets = chunk_columns(sp.csc_matrix(np.ones((2, 10))), 3)
        assert [c.shape[1] for c in chunks] == [4, 3, 3]
        assert offsets == [0, 4, 7]

    def test_single_chunk_is_identity(self):
        X = sp.random(5, 7, density=0.5, random_state=0, format="csc")
        (c,), _ = chunk_columns(X, 1)
        assert (c != X).nnz == 0

    def test_concatenation_bit_exact(self):
        X = sp.random(20, 23, density=0.3, random_state=1, format="csc")
        chunks, _ = chunk_columns(X, 5)
        Y = sp.hstack(chunks).tocsc()
        assert np.array_equal(Y.indptr, X.indptr) and np.array_equal(Y.indices, X.indices)
        assert np.array_equal(Y.data, X.data)

    def test_too_many_chunks(self):
        with pytest.raises(ValueError):
            chunk_columns(sp.csc_matrix(np.ones((2, 3))), 4)


class TestFactorizeChunks:
    def test_one_block_per_chunk(self):
        chunks, offsets = chunk_columns(rank_one_blocks(), 2)
        cf = factorize_chunks(chunks, NmfkParams(k_range=(1, 3), n_perturbs=5), offsets)
        assert cf.ranks == [1, 1] and cf.K == 2

    def test_zero_chunk_named(self):
        X = sp.csc_matrix(np.hstack([np.ones((4, 3)), np.zeros((4, 3))]))
        chunks, offsets = chunk_columns(X, 2)
        with pytest.raises(ValueError, match="chunk 1"):
            factorize_chunks(chunks, FAST, offsets)


class TestMerge:
    def test_duplicate_basis_merges_to_one(self):
        u = np.array([[3.0], [4.0], [0.0]])
        h1, h2 = np.array([[1.0, 2.0]]), np.array([[0.5, 0.0, 1.5]])
        cf = ChunkFactors([chunk_factor(u, h1), chunk_factor(u, h2)], [0, 2], 5)
        mr = merge_chunk_factors(cf, FAST)
        assert mr.p == 1
        # norms fold into the mixing: W_x H_star reproduces [u h1 | u h2] up to
        # the consensus basis coming from perturbed (+-epsilon) runs
        np.testing.assert_allclose(mr.W_x @ mr.H_star, u @ np.hstack([h1, h2]), rtol=2 * FAST.perturb_epsilon, atol=1e-9)
        ratio = mr.H_star[0] / np.hstack([h1, h2])[0].clip(1e-300)
        nz = np.hstack([h1, h2])[0] > 0
        np.testing.assert_allclose(ratio[nz], ratio[nz][0], rtol=1e-9)

    def test_single_chunk_refactorization(self):
        rng = np.random.default_rng(4)
        X = sp.csc_matrix(rng.random((20, 3)) @ rng.random((3, 30)) + 0.3 * rng.random((20, 30)))
        fp = nmf(X, 3)
        cf = ChunkFactors([fp], [0], 30)
        mr = merge_chunk_factors(cf, NmfkParams(k_range=(1, 6), n_perturbs=5))
        W1 = fp.W / np.linalg.norm(fp.W, axis=0)
        assert np.linalg.norm(mr.W_x @ mr.M - W1) / np.linalg.norm(W1) < 1e-2
        merged = relative_error(X, mr.W_x, mr.H_star)
        assert abs(merged - fp.rel_error) <= 0.1 * fp.rel_error

    def test_disjoint_topics(self):
        W = np.kron(np.eye(4), np.ones((5, 1)))
        rng = np.random.default_rng(0)
        cf = ChunkFactors(
            [chunk_factor(W[:, :2], rng.random((2, 6))), chunk_factor(W[:, 2:], rng.random((2, 6)))],
            [0, 6], 12,
        )
        mr = merge_chunk_factors(cf, NmfkParams(k_range=(1, 6), n_perturbs=5))
        assert mr.p == 4
        assert mr.H_star.shape == (4, 12) and (mr.H_star >= 0).all()


class TestSideInfo:
    def _merge(self, p=5, F=12, N=8):
        rng = np.random.default_rng(1)
        W, H = rng.random((F, p)), rng.random((p, N))
        return MergeResult(W_x=W, M=np.eye(p), M_blocks=[np.eye(p)], H_star=H, p=p)

    def test_passthrough(self):
        mr = self._merge()
        out = incorporate_side_info(mr, None, None)
        assert out.W is mr.W_x and out.H is mr.H_star and out.t == mr.p

    def test_dimension_bookkeeping(self):
        rng = np.random.default_rng(2)
        mr = self._merge()
        S, C = sp.csc_matrix(np.ones((12, 12))), sp.csc_matrix(np.ones((12, 3)))
        side = {
            "S": chunk_factor(rng.random((12, 4)), rng.random((4, 12))),
            "C": chunk_factor(rng.random((12, 3)), rng.random((3, 3))),
        }
        out = incorporate_side_info(mr, S, C, (1.0, 1.0), NmfkParams(k_range=(1, 3), n_perturbs=3), side=side)
        assert (out.p, out.s, out.c, out.Z) == (5, 4, 3, 12)
        assert out.W_plus.shape == (12, 12) and out.Y.shape == (out.t, 12)
        assert [b.shape[1] for b in out.Y_blocks] == [5, 4, 3]
        assert out.W.shape == (12, out.t) and out.H.shape == (out.t, 8)

    def test_shape_checks(self):
        with pytest.raises(ValueError, match="S has shape"):
            incorporate_side_info(self._merge(), sp.csc_matrix(np.ones((3, 3))), None)

    @pytest.mark.slow
    def test_planted_with_word_context(self):
        docs, labels = topic_corpus(0, n_words=120, n_docs=240, n_topics=4)
        v = build_vocabulary(docs, 1, 1.0)
        X = build_tfidf(docs, v)
        S = sppmi(build_cooccurrence(docs, v, 5), 1.0)
        res, _, _ = run_split(X, 3, NmfkParams(k_range=(1, 6), n_perturbs=6, master_seed=0), S=S)
        assert res.t == 4
        assert matched_agreement(res.H.argmax(0), labels) >= 0.9
        assert (res.H >= 0).all()


class TestRunSplit:
    def test_checkpoint_reuse_is_identical(self, tmp_path):
        X = rank_one_blocks(3, 6, seed=3)
        a, cf, _ = run_split(X, 3, FAST, checkpoint_dir=tmp_path)
        assert (tmp_path / "manifest.json").exists()
        assert (tmp_path / "chunk_002" / "W.txt").exists()
        b, cf2, _ = run_split(X, 3, FAST, checkpoint_dir=tmp_path)
        assert np.array_equal(a.W, b.W) and np.array_equal(a.H, b.H)
        assert cf.ranks == cf2.ranks

    def test_parallel_chunks_identical(self):
        X = rank_one_blocks(3, 6, seed=5)
        a, _, _ = run_split(X, 3, FAST)
        b, _, _ = run_split(X, 3, NmfkParams(k_range=(1, 4), n_perturbs=4, master_seed=0, n_jobs=3))
        assert np.array_equal(a.W, b.W) and np.array_equal(a.H, b.H)

    def test_shapes(self):
        X = rank_one_blocks(2, 8, seed=6)
        res, _, _ = run_split(X, 2, FAST)
        assert res.W.shape == (16, res.t) and res.H.shape == (res.t, 16)
