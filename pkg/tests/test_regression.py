import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.decomp import eval_field, random_cp, random_ht, random_tt
from core.errors import DomainError
from core.tree import balanced_tree, tree_from_nested
from modules.regression import (
    cp_khatri_rao_rows,
    cp_regression_block,
    cp_regression_matrix,
    ht_internal_ls,
    ht_leaf_ls,
    tt_regression_block,
    tt_regression_matrix,
)


def _vec(a):
    return np.asarray(a).reshape(-1, order="F")


class TestTensorTrainBlocks:
    @pytest.mark.parametrize("k, ranks", [(2, [1, 3, 1]), (3, [1, 2, 3, 1]), (4, [1, 2, 3, 2, 1])])
    def test_block_times_core_is_field(self, rng, k, ranks):
        t = random_tt(3, k, ranks, rng)
        x = rng.standard_normal(3)
        for p in range(1, k + 1):
            H = tt_regression_block(t, p, x)
            assert H.shape == (3, t.cores[p - 1].size)
            assert_allclose(H @ _vec(t.cores[p - 1]), eval_field(t, x), rtol=1e-10, atol=1e-12)

    def test_stacked_matrix(self, rng):
        t = random_tt(3, 4, [1, 2, 3, 2, 1], rng)
        X = rng.standard_normal((3, 6))
        for p in range(1, 5):
            H = tt_regression_matrix(t, p, X)
            assert H.shape == (18, t.cores[p - 1].size)
            assert_allclose(H @ _vec(t.cores[p - 1]), _vec(eval_field(t, X)), rtol=1e-10, atol=1e-12)

    def test_invalid_core_index(self, rng):
        t = random_tt(3, 3, [1, 2, 2, 1], rng)
        with pytest.raises(DomainError):
            tt_regression_block(t, 4, np.ones(3))


class TestHierarchicalTuckerBlocks:
    @pytest.mark.parametrize(
        "tree",
        [
            balanced_tree(2, [1, 2, 3]),
            balanced_tree(3, 2),
            balanced_tree(4, [1, 2, 3, 2, 2, 3, 2]),
            tree_from_nested([[1, 3], [2, 4]], 2),
        ],
    )
    def test_blocks_reproduce_field(self, rng, tree):
        h = random_ht(3, tree, rng)
        X = rng.standard_normal((3, 5))
        target = _vec(eval_field(h, X))
        for p in range(1, tree.order + 1):
            leaf = tree.leaf_of_mode(p)
            H = ht_leaf_ls(h, p, X)
            assert_allclose(H @ _vec(h.leaf_factors[leaf]), target, rtol=1e-10, atol=1e-12)
        for node_id in tree.internal_nodes:
            H = ht_internal_ls(h, node_id, X)
            assert_allclose(H @ _vec(h.transfer[node_id]), target, rtol=1e-10, atol=1e-12)

    def test_root_block_has_one_column_per_child_pair(self, rng):
        tree = balanced_tree(4, [1, 2, 3, 2, 2, 3, 2])
        h = random_ht(3, tree, rng)
        assert ht_internal_ls(h, 0, rng.standard_normal((3, 4))).shape == (12, 6)

    def test_leaf_is_not_internal(self, rng):
        h = random_ht(3, balanced_tree(3, 2), rng)
        with pytest.raises(DomainError):
            ht_internal_ls(h, h.tree.leaf_of_mode(1), np.ones((3, 2)))
        with pytest.raises(DomainError):
            ht_leaf_ls(h, 4, np.ones((3, 2)))


class TestCanonicalPolyadicBlocks:
    @pytest.mark.parametrize("k, r", [(2, 2), (3, 1), (4, 3)])
    def test_block_times_factor_is_field(self, rng, k, r):
        c = random_cp(3, k, r, rng)
        x = rng.standard_normal(3)
        for p in range(1, k):
            H = cp_regression_block(c, p, x)
            assert_allclose(H @ _vec(c.factors[p - 1]), eval_field(c, x), rtol=1e-10, atol=1e-12)

    def test_stacked_matrix_and_last_factor_rows(self, rng):
        c = random_cp(3, 4, 2, rng)
        X = rng.standard_normal((3, 5))
        target = eval_field(c, X)
        for p in range(1, 4):
            assert_allclose(cp_regression_matrix(c, p, X) @ _vec(c.factors[p - 1]), _vec(target), rtol=1e-10, atol=1e-12)
        B = cp_khatri_rao_rows(c, X)
        assert_allclose(B @ c.last_factor.T, target.T, rtol=1e-10, atol=1e-12)

    def test_zero_state_gives_zero_block(self, rng):
        c = random_cp(3, 3, 2, rng)
        assert_allclose(cp_regression_block(c, 1, np.zeros(3)), 0.0)

    def test_last_factor_has_no_block(self, rng):
        c = random_cp(3, 3, 2, rng)
        with pytest.raises(DomainError):
            cp_regression_block(c, 3, np.ones(3))


@pytest.mark.parametrize("instance", range(20))
class TestRandomInstances:
    """Each block times its own parameters reproduces the field on random shapes."""

    @staticmethod
    def _shape(instance):
        rng = np.random.default_rng([instance, 31])
        n = int(rng.integers(2, 5))
        k = int(rng.integers(2, 5))
        return rng, n, k, rng.standard_normal((n, 4))

    def test_tensor_train(self, instance):
        rng, n, k, X = self._shape(instance)
        ranks = [1, *rng.integers(1, 4, size=k - 1).tolist(), 1]
        t = random_tt(n, k, ranks, rng)
        target = _vec(eval_field(t, X))
        for p in range(1, k + 1):
            assert_allclose(tt_regression_matrix(t, p, X) @ _vec(t.cores[p - 1]), target, rtol=1e-9, atol=1e-11)

    def test_hierarchical_tucker(self, instance):
        rng, n, k, X = self._shape(instance)
        h = random_ht(n, balanced_tree(k, int(rng.integers(1, 4))), rng)
        target = _vec(eval_field(h, X))
        for p in range(1, k + 1):
            leaf = h.tree.leaf_of_mode(p)
            assert_allclose(ht_leaf_ls(h, p, X) @ _vec(h.leaf_factors[leaf]), target, rtol=1e-9, atol=1e-11)
        for node_id in h.tree.internal_nodes:
            assert_allclose(ht_internal_ls(h, node_id, X) @ _vec(h.transfer[node_id]), target, rtol=1e-9, atol=1e-11)

    def test_canonical_polyadic(self, instance):
        rng, n, k, X = self._shape(instance)
        c = random_cp(n, k, int(rng.integers(1, 4)), rng)
        target = eval_field(c, X)
        for p in range(1, k):
            assert_allclose(cp_regression_matrix(c, p, X) @ _vec(c.factors[p - 1]), _vec(target), rtol=1e-9, atol=1e-11)
        assert_allclose(cp_khatri_rao_rows(c, X) @ c.last_factor.T, target.T, rtol=1e-9, atol=1e-11)
