"""MCMC for weighted soft (or hard) Bayesian additive regression trees.

Each Gibbs sweep updates every tree against its backfitting residual
(structure by Metropolis-Hastings with leaf values integrated out, then a
leaf-value draw), then the noise scale, the split-variable probabilities
and the per-tree softness.  Case weights enter the likelihood as
``prod_i N(r_i | 0, sigma^2) ** w_i``, so integer weights behave exactly
like replicated cases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from numba.typed import List as TypedList
from scipy.stats import chi2

from . import _kernels as K
from .soft_tree import DEFAULT_MAX_DEPTH, Forest, SoftTree, weighted_marginal_loglik

logger = logging.getLogger(__name__)

HARD_TAU = 1e-8
MOVES = ("grow", "prune", "change", "swap")


class DegenerateDataError(ValueError):
    """Raised when the training data cannot support a fit."""


@dataclass(frozen=True)
class AffineMap:
    """``forward(v) = (v - shift) / scale``."""

    shift: float
    scale: float

    def forward(self, v):
        return (np.asarray(v, dtype=float) - self.shift) / self.scale

    def inverse(self, v):
        return np.asarray(v, dtype=float) * self.scale + self.shift


@dataclass(frozen=True)
class Priors:
    """Prior hyperparameters on the internal (rescaled) response scale.

    Trees: a node at depth ``d`` splits with probability
    ``alpha / (1 + d) ** beta``.  Leaves: ``N(0, sigma_mu^2)`` in every tree, so
    the sum of ``m`` trees has prior variance ``m * sigma_mu^2``.  Noise:
    ``sigma^2 ~ nu * lam / chi2_nu``.  Split variables: ``s ~ Dirichlet(a/d)``.
    Softness: exponential with mean ``tau0``.
    """

    sigma_mu: float
    lam: float
    nu: float = 3.0
    alpha: float = 0.95
    beta: float = 2.0
    a: float = 1.0
    tau0: float = 0.1
    response_map: AffineMap = AffineMap(0.0, 1.0)

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        for name in ("sigma_mu", "lam", "nu", "a", "tau0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class SamplerConfig:
    n_trees: int | None = None
    n_iter: int = 2500
    burn_in: int = 500
    thin: int = 1
    move_probs: tuple[float, float, float, float] = (0.25, 0.25, 0.40, 0.10)
    seed: int | None = 0
    mode: str = "soft"
    k: float = 2.0
    nu: float = 3.0
    q: float = 0.9
    alpha: float = 0.95
    beta: float = 2.0
    a_dirichlet: float = 1.0
    tau0: float = 0.1
    tau_step: float = 0.5
    max_depth: int = DEFAULT_MAX_DEPTH
    update_split_probs: bool = True
    pool_duplicates: bool = True

    def __post_init__(self):
        if self.mode not in ("soft", "hard"):
            raise ValueError(f"mode must be 'soft' or 'hard', got {self.mode!r}")
        if len(self.move_probs) != 4 or min(self.move_probs) < 0:
            raise ValueError("move_probs needs four non-negative entries")
        if abs(sum(self.move_probs) - 1.0) > 1e-9:
            raise ValueError("move probabilities must sum to 1")
        if self.move_probs[0] <= 0 or self.move_probs[1] <= 0:
            raise ValueError("grow and prune need positive probability")
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("need 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.n_trees is not None and self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 1 <= self.max_depth <= 20:
            raise ValueError("max_depth must lie in [1, 20]")

    @property
    def m(self) -> int:
        if self.n_trees is not None:
            return self.n_trees
        return 50 if self.mode == "soft" else 200

    @property
    def n_retained(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin


@dataclass
class Design:
    """Training cases on the internal scale: features in [0, 1], response in [-0.5, 0.5]."""

    X: np.ndarray
    y: np.ndarray
    w: np.ndarray
    splittable: np.ndarray
    feature_shift: np.ndarray
    feature_scale: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def scale_features(self, X) -> np.ndarray:
        return np.ascontiguousarray((np.asarray(X, dtype=float) - self.feature_shift) / self.feature_scale)


def _pool_duplicates(X, y, w):
    """Merge cases with identical (features, response), summing weights; first-seen order."""
    rows = np.column_stack([X, y])
    _, first, inverse = np.unique(rows, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    if first.size == X.shape[0]:
        return X, y, w
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    pooled = np.zeros(first.size)
    np.add.at(pooled, rank[inverse], w)
    keep = first[order]
    return X[keep], y[keep], pooled


def _coerce_cases(cases, y=None, weights=None):
    if y is None:
        X, y, weights = cases.features, cases.response, cases.weight
    else:
        X = cases
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    w = np.ones(y.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    if X.shape[0] != y.shape[0] or w.shape != y.shape:
        raise ValueError("features, response and weights disagree in length")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise ValueError("non-finite values in training cases")
    if np.any(w <= 0):
        raise ValueError("case weights must be positive")
    return X, y, w


def calibrate_hyperparams(y, weights=None, config: SamplerConfig | None = None) -> Priors:
    """Data-based prior calibration.

    The response is mapped affinely onto [-0.5, 0.5]; on that scale
    ``sigma_mu = 0.5 / (k * sqrt(m))`` and ``lam`` puts prior probability
    ``q`` on ``sigma`` falling below the weighted sample standard deviation.
    """
    config = config or SamplerConfig()
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if y.size < 2:
        raise DegenerateDataError("need at least two cases")
    lo, hi = float(y.min()), float(y.max())
    if not hi > lo:
        raise DegenerateDataError("response is constant; nothing to fit")
    rmap = AffineMap((hi + lo) / 2.0, hi - lo)
    ys = rmap.forward(y)
    sw = w.sum()
    mean = (w * ys).sum() / sw
    ss = (w * (ys - mean) ** 2).sum()
    var = ss / (sw - 1.0) if sw > 1.0 else ss / sw
    lam = var * chi2.ppf(1.0 - config.q, config.nu) / config.nu
    return Priors(
        sigma_mu=0.5 / (config.k * np.sqrt(config.m)),
        lam=lam,
        nu=config.nu,
        alpha=config.alpha,
        beta=config.beta,
        a=config.a_dirichlet,
        tau0=config.tau0,
        response_map=rmap,
    )


def prepare_design(X, y, w, priors: Priors, pool: bool = True) -> Design:
    if pool:
        X, y, w = _pool_duplicates(X, y, w)
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    splittable = span > 0
    scale = np.where(splittable, span, 1.0)
    return Design(
        X=np.ascontiguousarray((X - lo) / scale),
        y=np.ascontiguousarray(priors.response_map.forward(y)),
        w=np.ascontiguousarray(w, dtype=float),
        splittable=splittable,
        feature_shift=lo,
        feature_scale=scale,
    )


@dataclass
class ChainState:
    """Forest, noise scale, split probabilities and softness, in heap layout."""

    kind: np.ndarray
    var: np.ndarray
    cut: np.ndarray
    value: np.ndarray
    tau: np.ndarray
    sigma: float
    s: np.ndarray
    tree_fit: np.ndarray
    tau_nodes: np.ndarray = field(repr=False, default=None)
    # per-tree leaf matrices on the design the state was built for
    phis: TypedList | None = field(repr=False, default=None)

    def __post_init__(self):
        if self.tau_nodes is None:
            self.tau_nodes = np.repeat(self.tau[:, None], self.kind.shape[1], axis=1)

    def refresh(self, design: Design) -> None:
        """Recompute per-tree fits and cached leaf matrices for ``design``."""
        phis = TypedList()
        for j in range(self.m):
            leaves = K.leaf_indices(self.kind[j])
            phi = K.leaf_matrix(design.X, self.kind[j], self.var[j], self.cut[j],
                                self.tau_nodes[j], leaves)
            self.tree_fit[j] = phi @ self.value[j, leaves]
            phis.append(phi)
        self.phis = phis

    @classmethod
    def initial(cls, design: Design, priors: Priors, config: SamplerConfig) -> ChainState:
        m = config.m
        nn = K.n_nodes_for_depth(config.max_depth)
        kind = np.zeros((m, nn), np.int8)
        kind[:, 0] = K.LEAF
        value = np.zeros((m, nn))
        start = (design.w * design.y).sum() / design.w.sum() / m if design.n else 0.0
        value[:, 0] = start
        tau = np.full(m, HARD_TAU if config.mode == "hard" else priors.tau0)
        sd = np.sqrt(priors.lam * priors.nu / max(priors.nu - 2.0, 1.0))
        state = cls(
            kind=kind,
            var=np.zeros((m, nn), np.int32),
            cut=np.zeros((m, nn)),
            value=value,
            tau=tau,
            sigma=float(sd),
            s=np.full(design.d, 1.0 / design.d),
            tree_fit=np.zeros((m, design.n)),
        )
        state.refresh(design)
        return state

    @property
    def m(self) -> int:
        return self.kind.shape[0]

    def copy(self) -> ChainState:
        phis = None
        if self.phis is not None:
            phis = TypedList()
            for phi in self.phis:
                phis.append(phi.copy())
        return ChainState(self.kind.copy(), self.var.copy(), self.cut.copy(),
                          self.value.copy(), self.tau.copy(), self.sigma,
                          self.s.copy(), self.tree_fit.copy(), self.tau_nodes.copy(), phis)

    def tree(self, j: int) -> SoftTree:
        return SoftTree(self.kind[j].copy(), self.var[j].copy(), self.cut[j].copy(),
                        self.tau_nodes[j].copy(), self.value[j].copy())

    def forest(self) -> Forest:
        return Forest([self.tree(j) for j in range(self.m)], self.s.size)

    def fit(self) -> np.ndarray:
        return self.tree_fit.sum(axis=0)

    def split_counts(self) -> np.ndarray:
        mask = self.kind == K.BRANCH
        return np.bincount(self.var[mask], minlength=self.s.size).astype(float)


def log_tree_prior(tree: SoftTree, priors: Priors, s) -> float:
    """Log prior of a tree structure: depth-dependent split probabilities times split-variable mass.

    Cut points are uniform on the unit interval and contribute nothing.
    """
    md = tree.max_depth
    lp = 0.0
    logs = np.log(np.maximum(np.asarray(s, dtype=float), 1e-300))
    for i in np.flatnonzero(tree.kind != K.EMPTY):
        p = K.split_prob(K.node_depth(i), priors.alpha, priors.beta, md)
        if tree.kind[i] == K.BRANCH:
            lp += np.log(p) + logs[tree.var[i]]
        else:
            lp += np.log1p(-p)
    return float(lp)


class Proposal(NamedTuple):
    candidate: SoftTree | None
    log_q_ratio: float
    move: str


def propose_move(tree: SoftTree, s, priors: Priors, rng: np.random.Generator,
                 move_probs=SamplerConfig.move_probs, splittable=None) -> Proposal:
    """Propose a grow, prune, change or swap move.

    Returns the candidate (``None`` when the drawn move is impossible, which
    counts as a rejection) and ``log q(T*, T) - log q(T, T*)``.  New branches
    inherit the softness of the tree's root (all branches share one value).
    """
    s = np.asarray(s, dtype=float)
    splittable = np.ones(s.size, bool) if splittable is None else np.asarray(splittable, bool)
    ck = np.empty_like(tree.kind)
    cv = np.empty_like(tree.var)
    cc = np.empty_like(tree.cut)
    move, ok, log_q, _, _ = K.propose(
        tree.kind, tree.var, tree.cut, ck, cv, cc, np.cumsum(s),
        np.log(np.maximum(s, 1e-300)), splittable, np.cumsum(move_probs),
        priors.alpha, priors.beta, tree.max_depth, rng)
    if not ok:
        return Proposal(None, -np.inf, MOVES[move])
    tau = np.full_like(tree.tau, tree.tau[0])
    value = np.where(ck == K.LEAF, tree.value, 0.0)
    return Proposal(SoftTree(ck, cv, cc, tau, value), float(log_q), MOVES[move])


def mh_accept(tree: SoftTree, candidate: SoftTree | None, X, R, W, sigma: float,
              priors: Priors, m: int, s, log_q_ratio: float,
              rng: np.random.Generator) -> SoftTree:
    """Metropolis-Hastings step between ``tree`` and ``candidate`` using marginal likelihoods."""
    u = rng.random()
    if candidate is None:
        return tree
    ml_new = weighted_marginal_loglik(candidate, X, R, W, sigma, priors.sigma_mu, m)
    if not np.isfinite(ml_new):
        return tree
    ml_cur = weighted_marginal_loglik(tree, X, R, W, sigma, priors.sigma_mu, m)
    log_acc = (log_q_ratio + ml_new - ml_cur
               + log_tree_prior(candidate, priors, s) - log_tree_prior(tree, priors, s))
    return candidate if np.log(u) < log_acc else tree


def sample_sigma(residuals, weights, priors: Priors, rng: np.random.Generator) -> float:
    """Draw sigma given residuals.

    ``sigma^2 ~ InvGamma((nu + sum w) / 2, (nu * lam + sum w r^2) / 2)``; with
    no cases this is the prior ``nu * lam / chi2_nu``.
    """
    r = np.asarray(residuals, dtype=float)
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    return float(np.sqrt(K.sigma2_draw(float((w * r * r).sum()), float(w.sum()),
                                       priors.nu, priors.lam, rng)))


def update_split_probs(counts, a: float, rng: np.random.Generator) -> np.ndarray:
    """Draw split-variable probabilities from ``Dirichlet(a/d + counts)``."""
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    return K.dirichlet_draw(a / counts.size + counts, rng)


def _sweep_inplace(state: ChainState, design: Design, priors: Priors,
                   config: SamplerConfig, rng, stats) -> None:
    if state.phis is None or len(state.phis) != state.m or \
            (state.m and state.phis[0].shape[0] != design.n):
        state.refresh(design)
    state.sigma = K.sweep(
        design.X, design.y, design.w, state.kind, state.var, state.cut, state.value,
        state.tau_nodes, state.tau, state.tree_fit, state.phis, state.sigma, state.s,
        design.splittable, np.cumsum(config.move_probs), priors.alpha, priors.beta,
        config.max_depth, 1.0 / priors.sigma_mu**2, priors.nu, priors.lam, priors.a,
        priors.tau0, config.tau_step, config.mode == "soft", config.update_split_probs,
        rng, stats)


def gibbs_iteration(state: ChainState, design: Design, priors: Priors,
                    config: SamplerConfig, rng: np.random.Generator) -> ChainState:
    """One full sweep; returns a new state and leaves ``state`` untouched."""
    new = state.copy()
    _sweep_inplace(new, design, priors, config, rng, np.zeros((5, 2), np.int64))
    return new


@dataclass
class PosteriorDraws:
    """Retained forests in compressed form plus everything needed to predict.

    Tree ``t`` of retained draw ``i`` is stored at position ``i * m + t``;
    its active nodes are ``node[offsets[k]:offsets[k+1]]`` in heap order.
    """

    m: int
    n_nodes: int
    offsets: np.ndarray
    node: np.ndarray
    kind: np.ndarray
    var: np.ndarray
    cut: np.ndarray
    value: np.ndarray
    tau: np.ndarray
    sigma: np.ndarray
    split_probs: np.ndarray
    sigma_trace: np.ndarray
    feature_shift: np.ndarray
    feature_scale: np.ndarray
    response_map: AffineMap
    mode: str
    acceptance: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return (self.offsets.size - 1) // self.m

    @property
    def n_features(self) -> int:
        return self.feature_shift.size

    def _scaled(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None] if self.n_features == 1 else X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return np.ascontiguousarray((X - self.feature_shift) / self.feature_scale)

    def sample_f(self, X) -> np.ndarray:
        """Posterior draws of the regression function at X, shape (n_draws, n), original scale."""
        Xs = self._scaled(X)
        raw = K.predict_compressed(Xs, self.offsets, self.node, self.kind, self.var,
                                   self.cut, self.value, self.tau, self.n_nodes, self.m)
        return self.response_map.inverse(raw)

    def forest(self, i: int) -> Forest:
        """Forest of retained draw ``i`` on the internal feature scale."""
        trees = []
        for t in range(i * self.m, (i + 1) * self.m):
            tree = SoftTree.leaf(max_depth=int(np.log2(self.n_nodes + 1)) - 1)
            tree.kind[0] = K.EMPTY
            sl = slice(self.offsets[t], self.offsets[t + 1])
            idx = self.node[sl]
            tree.kind[idx] = self.kind[sl]
            tree.var[idx] = self.var[sl]
            tree.cut[idx] = self.cut[sl]
            tree.value[idx] = self.value[sl]
            tree.tau[:] = self.tau[t]
            trees.append(tree)
        return Forest(trees, self.n_features)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _DRAW_ARRAYS}


_DRAW_ARRAYS = ("offsets", "node", "kind", "var", "cut", "value", "tau", "sigma",
                "split_probs", "sigma_trace", "feature_shift", "feature_scale")


class _Recorder:
    def __init__(self, m):
        self.m = m
        self.parts = {k: [] for k in ("count", "node", "kind", "var", "cut", "value", "tau")}
        self.sigma = []
        self.s = []

    def add(self, state: ChainState, scale: float):
        mask = state.kind != K.EMPTY
        p = self.parts
        p["count"].append(mask.sum(axis=1))
        p["node"].append(np.nonzero(mask)[1].astype(np.int32))
        p["kind"].append(state.kind[mask])
        p["var"].append(state.var[mask])
        p["cut"].append(state.cut[mask])
        p["value"].append(state.value[mask])
        p["tau"].append(state.tau.copy())
        self.sigma.append(state.sigma * scale)
        self.s.append(state.s.copy())

    def arrays(self):
        p = self.parts
        counts = np.concatenate(p["count"]) if p["count"] else np.zeros(0, np.int64)
        offsets = np.zeros(counts.size + 1, np.int64)
        np.cumsum(counts, out=offsets[1:])

        def cat(key, dtype):
            return np.concatenate(p[key]).astype(dtype) if p[key] else np.zeros(0, dtype)

        return dict(
            offsets=offsets,
            node=cat("node", np.int32),
            kind=cat("kind", np.int8),
            var=cat("var", np.int32),
            cut=cat("cut", float),
            value=cat("value", float),
            tau=cat("tau", float),
            sigma=np.asarray(self.sigma, dtype=float),
            split_probs=np.asarray(self.s, dtype=float),
        )


def run_chain(design: Design, priors: Priors, config: SamplerConfig,
              rng: np.random.Generator, state: ChainState | None = None):
    """Run the sampler on a prepared design; returns (recorded arrays, final state, stats)."""
    state = ChainState.initial(design, priors, config) if state is None else state
    stats = np.zeros((5, 2), np.int64)
    rec = _Recorder(config.m)
    trace = np.empty(config.n_iter)
    scale = priors.response_map.scale
    for it in range(config.n_iter):
        _sweep_inplace(state, design, priors, config, rng, stats)
        trace[it] = state.sigma * scale
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0 \
                and len(rec.sigma) < config.n_retained:
            rec.add(state, scale)
    out = rec.arrays()
    out["sigma_trace"] = trace
    return out, state, stats


def fit(cases, y=None, weights=None, config: SamplerConfig | None = None) -> PosteriorDraws:
    """Fit the weighted sum-of-trees model.

    ``cases`` is either a case table (with ``features``, ``response`` and
    ``weight`` attributes) or a feature matrix accompanied by ``y`` and
    optional ``weights``.
    """
    config = config or SamplerConfig()
    X, y, w = _coerce_cases(cases, y, weights)
    n_raw = X.shape[0]
    if config.pool_duplicates:
        # pool before calibrating so replicated and weighted data agree bit for bit
        X, y, w = _pool_duplicates(X, y, w)
    priors = calibrate_hyperparams(y, w, config)
    design = prepare_design(X, y, w, priors, pool=False)
    rng = np.random.default_rng(config.seed)
    logger.debug("fitting %d cases (%d after pooling), m=%d, mode=%s",
                 n_raw, design.n, config.m, config.mode)
    arrays, _, stats = run_chain(design, priors, config, rng)
    acceptance = {mv: (int(stats[i, 1]), int(stats[i, 0])) for i, mv in enumerate(MOVES + ("softness",))}
    return PosteriorDraws(
        m=config.m,
        n_nodes=K.n_nodes_for_depth(config.max_depth),
        feature_shift=design.feature_shift,
        feature_scale=design.feature_scale,
        response_map=priors.response_map,
        mode=config.mode,
        acceptance=acceptance,
        **arrays,
    )


class PosteriorSummary(NamedTuple):
    mean: np.ndarray
    quantiles: np.ndarray
    levels: tuple


def predict(draws: PosteriorDraws, X, quantiles=(0.05, 0.5, 0.95), chunk: int = 2048) -> PosteriorSummary:
    """Posterior mean and quantile bands of f at each row of X (original response scale)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if draws.n_features == 1 else X[None, :]
    if X.shape[1] != draws.n_features:
        raise ValueError(f"expected {draws.n_features} features, got {X.shape[1]}")
    levels = tuple(float(q) for q in quantiles)
    mean = np.empty(X.shape[0])
    qs = np.empty((X.shape[0], len(levels)))
    for start in range(0, X.shape[0], chunk):
        sl = slice(start, start + chunk)
        f = draws.sample_f(X[sl])
        mean[sl] = f.mean(axis=0)
        if levels:
            qs[sl] = np.quantile(f, levels, axis=0).T
    return PosteriorSummary(mean, qs, levels)


def with_mode(config: SamplerConfig, mode: str) -> SamplerConfig:
    return replace(config, mode=mode)
