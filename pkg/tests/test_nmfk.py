import numpy as np
import pytest
import scipy.sparse as sp

from planted import block_matrix
from topicgraph.nmfk import NmfkParams, choose_k, cluster_columns, derive_seed, perturb, select_k, silhouettes


def unit_columns(M):
    return M / np.linalg.norm(M, axis=0)


class TestPerturb:
    A = sp.csc_matrix(np.array([[1.0, 0.0, 2.0], [0.0, 3.0, 0.0]]))

    def test_zero_epsilon_identity(self):
        assert (perturb(self.A, 0.0, 1) != self.A).nnz == 0

    def test_range(self):
        P = perturb(sp.csc_matrix(np.ones((5, 5))), 0.5, 3)
        assert P.data.min() >= 0.5 and P.data.max() <= 1.5

    def test_same_seed_bit_identical(self):
        a, b = perturb(self.A, 0.1, 9), perturb(self.A, 0.1, 9)
        assert np.array_equal(a.data, b.data)

    def test_pattern_preserved(self):
        P = perturb(self.A, 0.9, 2)
        assert np.array_equal(P.indices, self.A.indices) and np.array_equal(P.indptr, self.A.indptr)
        assert (P.data > 0).all()

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            perturb(self.A, 1.0, 0)


class TestClusterColumns:
    def test_identical_orthogonal_runs(self):
        W = np.eye(4)[:, :3]
        clusters, min_sil = cluster_columns([W, W.copy()])
        assert min_sil == pytest.approx(1.0)
        assert len(clusters) == 3

    def test_single_column_convention(self):
        W = unit_columns(np.random.default_rng(0).random((6, 1)))
        clusters, min_sil = cluster_columns([W, W])
        assert min_sil == 1.0 and len(clusters) == 1

    def test_random_columns_unstable(self):
        rng = np.random.default_rng(12345)
        runs = [unit_columns(rng.random((50, 4))), unit_columns(rng.random((50, 4)))]
        _, min_sil = cluster_columns(runs)
        assert min_sil < 0.9

    def test_perfect_matching_per_run(self):
        rng = np.random.default_rng(1)
        base = unit_columns(rng.random((10, 3)))
        runs = [base[:, rng.permutation(3)] for _ in range(4)]
        clusters, min_sil = cluster_columns(runs)
        assert all(len(cl) == 4 for cl in clusters)
        for r in range(4):
            assert sorted(cl[r] for cl in clusters) == [0, 1, 2]
        assert -1 <= min_sil <= 1
        assert min_sil == pytest.approx(1.0)

    def test_silhouette_bounds(self):
        rng = np.random.default_rng(2)
        pts = unit_columns(rng.random((5, 12)))
        s = silhouettes(pts, np.arange(12) % 3)
        assert ((s >= -1) & (s <= 1)).all()


class TestChooseK:
    def test_largest_above_threshold(self):
        assert choose_k({1: 1.0, 2: 0.9, 3: 0.8, 4: 0.2}, 0.75) == 3

    def test_fallback_argmax_smallest_on_ties(self):
        assert choose_k({2: 0.5, 3: 0.6, 4: 0.6}, 0.75) == 3


class TestSelectK:
    def test_planted_blocks(self):
        sel = select_k(block_matrix(0), NmfkParams(k_range=(2, 6), n_perturbs=5, master_seed=0))
        assert sel.k_star == 3
        assert set(sel.per_k_min_silhouette) == {2, 3, 4, 5, 6}
        assert sel.consensus.W.shape == (30, 3) and sel.consensus.H.shape == (3, 60)

    def test_singleton_range(self):
        sel = select_k(block_matrix(1), NmfkParams(k_range=(4, 4), n_perturbs=3))
        assert sel.k_star == 4

    def test_rank_one(self):
        sel = select_k(np.array([[2.0, 4.0], [1.0, 2.0]]), NmfkParams(k_range=(1, 2), n_perturbs=5))
        assert sel.k_star == 1

    def test_deterministic_and_thread_independent(self):
        A = block_matrix(2)
        p = NmfkParams(k_range=(2, 4), n_perturbs=4, master_seed=3)
        a = select_k(A, p)
        b = select_k(A, NmfkParams(k_range=(2, 4), n_perturbs=4, master_seed=3, n_jobs=3))
        assert a.k_star == b.k_star and a.per_k_min_silhouette == b.per_k_min_silhouette
        assert np.array_equal(a.consensus.W, b.consensus.W) and np.array_equal(a.consensus.H, b.consensus.H)

    def test_k_range_exceeding_dims(self):
        with pytest.raises(ValueError):
            select_k(np.ones((2, 3)), NmfkParams(k_range=(1, 5), n_perturbs=2))


def test_derive_seed_stable():
    assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)
    assert derive_seed(0, 1, 2) != derive_seed(0, 2, 1)
