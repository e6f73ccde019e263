"""Soft decision trees and the leaf-integrated weighted Gaussian likelihood.

Branches route an input right with logistic probability
``1 / (1 + exp(-(x - c) / tau))``; a leaf's membership probability is the
product of the routing probabilities along its root path.  With leaf values
``mu ~ N(0, sigma_mu^2 / m)`` and a weighted Gaussian likelihood, the leaf
values integrate out in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import _kernels as K

DEFAULT_MAX_DEPTH = 10


def gate_prob(x, c, tau):
    """Probability of routing ``x`` to the right child of a branch with cut ``c``.

    Parameters
    ----------
    x : float or array_like
        Value(s) of the split feature.
    c : float
        Cut point.
    tau : float
        Softness, must be positive.  As ``tau -> 0`` the gate becomes the
        hard indicator ``x > c``.

    Returns
    -------
    float or ndarray
    """
    if not tau > 0:
        raise ValueError(f"softness must be positive, got {tau!r}")
    return expit((np.asarray(x, dtype=float) - c) / tau)[()]


@dataclass
class SoftTree:
    """A soft binary tree in heap layout.

    Slot ``i`` has children ``2i+1`` (left) and ``2i+2`` (right).  Use
    :meth:`leaf` and :meth:`split` to build trees by hand.
    """

    kind: np.ndarray
    var: np.ndarray
    cut: np.ndarray
    tau: np.ndarray
    value: np.ndarray

    @classmethod
    def leaf(cls, value: float = 0.0, max_depth: int = DEFAULT_MAX_DEPTH) -> SoftTree:
        n = K.n_nodes_for_depth(max_depth)
        kind = np.zeros(n, np.int8)
        kind[0] = K.LEAF
        val = np.zeros(n)
        val[0] = value
        return cls(kind, np.zeros(n, np.int32), np.zeros(n), np.ones(n), val)

    @property
    def max_depth(self) -> int:
        return int(np.log2(self.kind.size + 1)) - 1

    @property
    def leaves(self) -> np.ndarray:
        """Heap indices of the leaves, ascending."""
        return np.flatnonzero(self.kind == K.LEAF)

    @property
    def branches(self) -> np.ndarray:
        return np.flatnonzero(self.kind == K.BRANCH)

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.kind == K.LEAF))

    @property
    def leaf_values(self) -> np.ndarray:
        return self.value[self.leaves]

    def copy(self) -> SoftTree:
        return SoftTree(self.kind.copy(), self.var.copy(), self.cut.copy(),
                        self.tau.copy(), self.value.copy())

    def split(self, node: int, var: int, cut: float, tau: float = 1.0,
              left: float = 0.0, right: float = 0.0) -> SoftTree:
        """Return a copy with leaf ``node`` turned into a branch."""
        if self.kind[node] != K.LEAF:
            raise ValueError(f"node {node} is not a leaf")
        if 2 * node + 2 >= self.kind.size:
            raise ValueError("split would exceed the maximum depth")
        if not tau > 0:
            raise ValueError("softness must be positive")
        t = self.copy()
        t.kind[node] = K.BRANCH
        t.var[node] = var
        t.cut[node] = cut
        t.tau[node] = tau
        t.kind[2 * node + 1] = K.LEAF
        t.kind[2 * node + 2] = K.LEAF
        t.value[2 * node + 1] = left
        t.value[2 * node + 2] = right
        return t

    def with_leaf_values(self, values) -> SoftTree:
        t = self.copy()
        t.value[t.leaves] = np.asarray(values, dtype=float)
        return t

    def depth_of(self, node: int) -> int:
        return K.node_depth(node)

    def validate(self, n_features: int | None = None) -> None:
        kind = self.kind
        if kind[0] == K.EMPTY:
            raise ValueError("tree has no root")
        for i in np.flatnonzero(kind != K.EMPTY):
            if i > 0 and kind[(i - 1) // 2] != K.BRANCH:
                raise ValueError(f"node {i} has no branch parent")
            if kind[i] == K.BRANCH:
                if 2 * i + 2 >= kind.size or kind[2 * i + 1] == K.EMPTY or kind[2 * i + 2] == K.EMPTY:
                    raise ValueError(f"branch {i} lacks two children")
                if not self.tau[i] > 0:
                    raise ValueError(f"branch {i} has non-positive softness")
                if n_features is not None and not 0 <= self.var[i] < n_features:
                    raise ValueError(f"branch {i} splits on feature {self.var[i]}")


@dataclass
class Forest:
    trees: list[SoftTree]
    n_features: int

    def __post_init__(self):
        if len(self.trees) < 1:
            raise ValueError("a forest needs at least one tree")
        for t in self.trees:
            t.validate(self.n_features)

    @property
    def n_trees(self) -> int:
        return len(self.trees)


@dataclass
class LeafPosterior:
    """Gaussian posterior of a tree's leaf values given its structure."""

    precision: np.ndarray
    mean: np.ndarray
    _chol: np.ndarray = field(repr=False)

    @property
    def covariance(self) -> np.ndarray:
        Linv = np.linalg.inv(self._chol)
        return Linv.T @ Linv


def _as_2d(X, tree: SoftTree):
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    br = tree.branches
    if br.size and X.shape[1] <= tree.var[br].max():
        raise ValueError(
            f"input has {X.shape[1]} features but the tree splits on feature {tree.var[br].max()}")
    return np.ascontiguousarray(X), single


def leaf_probs(tree: SoftTree, x) -> np.ndarray:
    """Leaf-membership probabilities, leaves in ascending heap order.

    ``x`` may be one feature vector (returns shape ``(n_leaves,)``) or a
    matrix of rows (returns ``(n, n_leaves)``).
    """
    X, single = _as_2d(x, tree)
    phi = K.leaf_matrix(X, tree.kind, tree.var, tree.cut, tree.tau, tree.leaves)
    return phi[0] if single else phi


def predict_tree(tree: SoftTree, x):
    phi = leaf_probs(tree, x)
    return phi @ tree.leaf_values


def predict_forest(forest: Forest, x):
    out = predict_tree(forest.trees[0], x)
    for t in forest.trees[1:]:
        out = out + predict_tree(t, x)
    return out


def _check_lik_args(R, W, sigma, sigma_mu, m):
    R = np.ascontiguousarray(R, dtype=float)
    W = np.ascontiguousarray(W, dtype=float)
    if R.shape != W.shape or R.ndim != 1:
        raise ValueError("residuals and weights must be 1-d arrays of equal length")
    if np.any(W <= 0):
        raise ValueError("weights must be positive")
    if not (sigma > 0 and sigma_mu > 0 and m >= 1):
        raise ValueError("sigma, sigma_mu must be positive and m >= 1")
    return R, W


def marginal_loglik_from_phi(phi, R, W, sigma, sigma_mu, m) -> float:
    """Weighted marginal log-likelihood given a leaf-probability matrix.

    The weighting acts like case replication: integer weight ``w`` gives the
    same value as repeating the case ``w`` times.
    """
    R, W = _check_lik_args(R, W, sigma, sigma_mu, m)
    phi = np.ascontiguousarray(phi, dtype=float)
    G, b, wrr, sw = K.weighted_stats(phi, R, W)
    val = K.log_marginal(G, b, wrr, sw, sigma * sigma, m / sigma_mu**2)
    if np.isnan(val):
        raise np.linalg.LinAlgError("leaf posterior precision is not positive definite")
    return float(val)


def weighted_marginal_loglik(tree: SoftTree, X, R, W, sigma, sigma_mu, m) -> float:
    """Log of the weighted likelihood of residuals ``R`` with leaf values integrated out.

    Parameters
    ----------
    tree : SoftTree
    X : (n, d) array
        Features of the cases.
    R : (n,) array
        Residuals this tree must explain.
    W : (n,) array
        Positive case weights.
    sigma : float
        Noise standard deviation.
    sigma_mu : float
        Leaf prior scale; each leaf value is N(0, sigma_mu^2 / m).
    m : int
        Number of trees in the ensemble.
    """
    X, _ = _as_2d(X, tree)
    phi = K.leaf_matrix(X, tree.kind, tree.var, tree.cut, tree.tau, tree.leaves)
    return marginal_loglik_from_phi(phi, R, W, sigma, sigma_mu, m)


def _posterior_factor(tree, X, R, W, sigma, sigma_mu, m):
    R, W = _check_lik_args(R, W, sigma, sigma_mu, m)
    X, _ = _as_2d(X, tree)
    phi = K.leaf_matrix(X, tree.kind, tree.var, tree.cut, tree.tau, tree.leaves)
    G, b, _, _ = K.weighted_stats(phi, R, W)
    ok, Lm, z = K.posterior_factor(G, b, sigma * sigma, m / sigma_mu**2)
    if not ok:
        raise np.linalg.LinAlgError("leaf posterior precision is not positive definite")
    return G, Lm, z


def leaf_posterior(tree: SoftTree, X, R, W, sigma, sigma_mu, m) -> LeafPosterior:
    G, Lm, z = _posterior_factor(tree, X, R, W, sigma, sigma_mu, m)
    prec = G / sigma**2 + (m / sigma_mu**2) * np.eye(z.size)
    return LeafPosterior(prec, K.backward_solve_t(Lm, z), Lm)


def sample_leaf_values(tree: SoftTree, X, R, W, sigma, sigma_mu, m,
                       rng: np.random.Generator) -> SoftTree:
    """Draw leaf values from their Gaussian posterior; returns an updated copy."""
    _, Lm, z = _posterior_factor(tree, X, R, W, sigma, sigma_mu, m)
    return tree.with_leaf_values(K.draw_leaves(Lm, z, rng))
