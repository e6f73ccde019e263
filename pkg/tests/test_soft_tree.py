import numpy as np
import pytest
from conftest import dense_oracle, hard_leaf, random_tree
from hypothesis import given, settings
from hypothesis import strategies as st

from wsbart.soft_tree import (
    Forest,
    SoftTree,
    gate_prob,
    leaf_posterior,
    leaf_probs,
    marginal_loglik_from_phi,
    predict_forest,
    predict_tree,
    sample_leaf_values,
    weighted_marginal_loglik,
)


class TestGate:
    def test_examples(self):
        assert gate_prob(0.3, 0.3, 0.7) == 0.5
        assert gate_prob(1.5, 1.0, 0.5) == pytest.approx(0.7310585786300049, rel=1e-14)
        assert gate_prob(0.1, 0.0, 1e-8) == pytest.approx(1.0)

    def test_invalid_tau(self):
        with pytest.raises(ValueError):
            gate_prob(0.0, 0.0, 0.0)

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.05, 5), st.floats(1e-3, 2))
    def test_monotone_and_complement(self, x, c, tau, delta):
        assert gate_prob(x + delta, c, tau) >= gate_prob(x, c, tau)
        assert gate_prob(c + delta, c, tau) + gate_prob(c - delta, c, tau) == pytest.approx(1.0, abs=1e-12)


class TestLeafProbs:
    def test_single_leaf(self):
        np.testing.assert_array_equal(leaf_probs(SoftTree.leaf(), [0.3]), [1.0])

    def test_one_branch(self):
        tree = SoftTree.leaf().split(0, 0, 0.0, 1.0)
        np.testing.assert_allclose(leaf_probs(tree, [0.0]), [0.5, 0.5])

    def test_chain_depth_two(self):
        tree = SoftTree.leaf().split(0, 0, 0.2, 0.5).split(2, 1, 0.7, 0.5)
        # leaves in heap order: 1 (left of root), 5, 6
        np.testing.assert_allclose(leaf_probs(tree, [0.2, 0.7]), [0.5, 0.25, 0.25], rtol=1e-14)

    def test_direction_is_right_for_large_x(self):
        tree = SoftTree.leaf().split(0, 0, 0.0, 0.1)
        p = leaf_probs(tree, [1.0])
        assert p[1] > 0.99

    def test_normalization(self, rng):
        for _ in range(1000):
            tree = random_tree(rng, n_features=3, max_leaves=8, max_depth=6)
            x = rng.uniform(-0.5, 1.5, size=(1, 3))
            assert abs(leaf_probs(tree, x).sum() - 1.0) <= 1e-12
            assert np.all(leaf_probs(tree, x) >= 0)

    def test_hard_limit(self, rng):
        checked = 0
        for _ in range(1000):
            tree = random_tree(rng, n_features=3, max_leaves=8, tau=1e-8, max_depth=6)
            x = rng.random(3)
            br = tree.branches
            if np.min(np.abs(x[tree.var[br]] - tree.cut[br]), initial=np.inf) < 1e-4:
                continue
            p = leaf_probs(tree, x)
            assert p[list(tree.leaves).index(hard_leaf(tree, x))] >= 1 - 1e-6
            checked += 1
        assert checked > 900

    def test_dimension_check(self):
        tree = SoftTree.leaf().split(0, 2, 0.5)
        with pytest.raises(ValueError):
            leaf_probs(tree, [0.1, 0.2])


class TestPredict:
    def test_constant_leaves(self, rng):
        tree = random_tree(rng, max_leaves=4)
        tree = tree.with_leaf_values(np.full(tree.n_leaves, 3.0))
        np.testing.assert_allclose(predict_tree(tree, rng.random((5, 2))), 3.0)

    def test_forest_of_copies(self, rng):
        tree = random_tree(rng, max_leaves=3)
        X = rng.random((7, 2))
        forest = Forest([tree.copy() for _ in range(4)], 2)
        np.testing.assert_allclose(predict_forest(forest, X), 4 * predict_tree(tree, X), rtol=1e-14)

    def test_hard_tree_lookup(self, rng):
        tree = random_tree(rng, max_leaves=5, tau=1e-8, max_depth=5)
        X = rng.random((200, 2))
        far = np.all([np.abs(X[:, tree.var[b]] - tree.cut[b]) > 1e-4 for b in tree.branches], axis=0) \
            if tree.branches.size else np.ones(200, bool)
        expected = [tree.value[hard_leaf(tree, x)] for x in X[far]]
        np.testing.assert_allclose(predict_tree(tree, X[far]), expected, atol=1e-6)

    def test_forest_validation(self):
        with pytest.raises(ValueError):
            Forest([], 2)
        with pytest.raises(ValueError):
            Forest([SoftTree.leaf().split(0, 5, 0.1)], 2)


class TestMarginalLikelihood:
    def test_dense_oracle(self, rng):
        for _ in range(200):
            tree = random_tree(rng, max_leaves=3)
            n = int(rng.integers(1, 11))
            X, R = rng.random((n, 2)), rng.standard_normal(n)
            W = rng.uniform(1e-3, 1.0, n)
            sigma, sigma_mu, m = rng.uniform(0.2, 2), rng.uniform(0.2, 2), int(rng.integers(1, 60))
            got = weighted_marginal_loglik(tree, X, R, W, sigma, sigma_mu, m)
            want = dense_oracle(leaf_probs(tree, X), R, W, sigma, sigma_mu, m)
            assert got == pytest.approx(want, rel=1e-8)

    def test_replication_identity(self, rng):
        for _ in range(20):
            tree = random_tree(rng, max_leaves=3)
            n = 8
            X, R = rng.random((n, 2)), rng.standard_normal(n)
            W = rng.integers(1, 4, n).astype(float)
            rep = np.repeat(np.arange(n), W.astype(int))
            a = weighted_marginal_loglik(tree, X, R, W, 0.7, 0.9, 10)
            b = weighted_marginal_loglik(tree, X[rep], R[rep], np.ones(rep.size), 0.7, 0.9, 10)
            assert a == pytest.approx(b, abs=1e-10)

    def test_prior_collapse(self, rng):
        X, R, W = rng.random((6, 2)), rng.standard_normal(6), rng.uniform(0.1, 1, 6)
        sigma = 0.8
        got = weighted_marginal_loglik(SoftTree.leaf(), X, R, W, sigma, 1e-9, 1)
        want = np.sum(W * (-0.5 * np.log(2 * np.pi * sigma**2) - R**2 / (2 * sigma**2)))
        assert got == pytest.approx(want, rel=1e-9)

    def test_leaf_reordering(self, rng):
        tree = random_tree(rng, max_leaves=4)
        X, R, W = rng.random((9, 2)), rng.standard_normal(9), rng.uniform(0.1, 1, 9)
        phi = leaf_probs(tree, X)
        perm = rng.permutation(phi.shape[1])
        a = marginal_loglik_from_phi(phi, R, W, 0.5, 1.0, 5)
        b = marginal_loglik_from_phi(phi[:, perm], R, W, 0.5, 1.0, 5)
        assert a == pytest.approx(b, rel=1e-12)

    def test_rejects_bad_weights(self, rng):
        with pytest.raises(ValueError):
            weighted_marginal_loglik(SoftTree.leaf(), rng.random((3, 1)), np.zeros(3),
                                     np.array([1.0, 0.0, 1.0]), 1.0, 1.0, 1)


class TestLeafSampling:
    def _setup(self, rng):
        tree = SoftTree.leaf().split(0, 0, 0.5, 0.2).split(2, 1, 0.4, 0.3)
        X = rng.random((12, 2))
        R = rng.standard_normal(12)
        W = rng.uniform(0.2, 1.0, 12)
        return tree, X, R, W

    def test_moments(self, rng):
        tree, X, R, W = self._setup(rng)
        post = leaf_posterior(tree, X, R, W, 0.6, 0.8, 3)
        np.testing.assert_allclose(post.covariance @ post.precision, np.eye(3), atol=1e-10)
        n = 100_000
        draws = np.array([sample_leaf_values(tree, X, R, W, 0.6, 0.8, 3, rng).leaf_values
                          for _ in range(n)])
        sd = np.sqrt(np.diag(post.covariance))
        assert np.all(np.abs(draws.mean(axis=0) - post.mean) < 3 * sd / np.sqrt(n))
        emp = np.cov(draws.T)
        # standard error of a sample covariance entry: sqrt((S_ii S_jj + S_ij^2) / n)
        se = np.sqrt((np.outer(sd**2, sd**2) + post.covariance**2) / n)
        assert np.all(np.abs(emp - post.covariance) < 3 * se)

    def test_prior_collapse(self, rng):
        tree, X, R, W = self._setup(rng)
        vals = sample_leaf_values(tree, X, R, W, 0.6, 1e-8, 3, rng).leaf_values
        assert np.all(np.abs(vals) < 1e-6)

    def test_reproducible(self):
        tree, X, R, W = self._setup(np.random.default_rng(0))
        a = sample_leaf_values(tree, X, R, W, 0.6, 0.8, 3, np.random.default_rng(5))
        b = sample_leaf_values(tree, X, R, W, 0.6, 0.8, 3, np.random.default_rng(5))
        np.testing.assert_array_equal(a.value, b.value)
        assert tree.value[5] == 0.0  # original untouched


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_validate_random_trees(seed):
    tree = random_tree(np.random.default_rng(seed), n_features=3, max_leaves=6, max_depth=5)
    tree.validate(3)
