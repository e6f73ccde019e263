"""Scikit-learn estimator for weighted soft BART on ordinary tabular data."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import _check_sample_weight, check_is_fitted, validate_data

from .sampler import SamplerConfig, fit, predict


class SoftBARTRegressor(RegressorMixin, BaseEstimator):
    """Weighted soft Bayesian additive regression trees.

    Parameters
    ----------
    n_trees : int, optional
        Number of trees; 50 for soft trees and 200 for hard trees by default.
    n_iter, burn_in, thin : int
        Chain length, discarded warm-up and thinning of retained draws.
    mode : {"soft", "hard"}
        Hard mode fixes every softness at 1e-8 (classic step-function trees).
    k : float
        Leaf prior scale; larger values shrink harder.
    sparse : bool
        Update split-variable probabilities under the Dirichlet prior.
    random_state : int or None

    Attributes
    ----------
    draws_ : PosteriorDraws
    n_features_in_ : int

    Examples
    --------
    >>> import numpy as np
    >>> rng = np.random.default_rng(0)
    >>> X = rng.random((100, 2))
    >>> y = np.sin(6 * X[:, 0]) + 0.1 * rng.standard_normal(100)
    >>> model = SoftBARTRegressor(n_trees=10, n_iter=200, burn_in=50).fit(X, y)
    >>> model.predict(X[:3]).shape
    (3,)
    """

    def __init__(self, n_trees=None, n_iter=2500, burn_in=500, thin=1, mode="soft", k=2.0,
                 sparse=True, random_state=0):
        self.n_trees = n_trees
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.mode = mode
        self.k = k
        self.sparse = sparse
        self.random_state = random_state

    def _config(self) -> SamplerConfig:
        seed = self.random_state
        if isinstance(seed, np.random.RandomState):
            seed = int(seed.randint(2**31 - 1))
        return SamplerConfig(n_trees=self.n_trees, n_iter=self.n_iter, burn_in=self.burn_in,
                             thin=self.thin, mode=self.mode, k=self.k,
                             update_split_probs=self.sparse, seed=seed)

    def fit(self, X, y, sample_weight=None):
        X, y = validate_data(self, X, y, y_numeric=True, dtype=np.float64)
        w = _check_sample_weight(sample_weight, X, dtype=np.float64)
        if np.any(w < 0):
            raise ValueError("sample weights must be nonnegative")
        keep = w > 0  # a zero-weight row carries no likelihood
        if keep.sum() < 2:
            raise ValueError(f"need at least two rows with positive weight, got {keep.sum()} sample(s)")
        self.draws_ = fit(X[keep], y[keep], w[keep], config=self._config())
        return self

    def predict(self, X):
        check_is_fitted(self, "draws_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return predict(self.draws_, X, quantiles=()).mean

    def predict_quantiles(self, X, quantiles=(0.05, 0.5, 0.95)):
        """Posterior quantiles of f, shape ``(n_samples, len(quantiles))``."""
        check_is_fitted(self, "draws_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return predict(self.draws_, X, quantiles=quantiles).quantiles

    def sample_posterior(self, X):
        """Posterior draws of f at ``X``, shape ``(n_draws, n_samples)``."""
        check_is_fitted(self, "draws_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return self.draws_.sample_f(X)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.allow_nan = False
        return tags
