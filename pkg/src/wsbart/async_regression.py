"""Fitting asynchronous longitudinal data: designs, bandwidth and lag selection.

Bandwidth and lag are chosen by interpolation-based cross-validation: the
responses whose covariate can be linearly interpolated from very close
covariate observations serve as a pseudo test set, predicted by fits on
the remaining subjects.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .longitudinal import (
    DT,
    LAYOUTS,
    ST,
    AsyncDataset,
    CaseTable,
    DataError,
    KernelSpec,
    all_distances,
    bandwidth_for_count,
    build_pairs,
    default_bandwidth,
    linear_interp_align,
    locf_align,
)
from .sampler import PosteriorDraws, SamplerConfig, fit, predict

logger = logging.getLogger(__name__)

METHODS = ("WSB", "LOCF-S", "LOCF-B", "LI", "NWT", "WTSTD")
KERNEL_METHODS = frozenset({"WSB", "NWT", "WTSTD"})
HARD_METHODS = frozenset({"LOCF-B", "WTSTD"})

DEFAULT_CV_ITER = 1000
DEFAULT_CV_BURN = 200


def derive_seed(*keys) -> int:
    """Deterministic 32-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def parse_method(name: str) -> tuple[str, str]:
    """Split a label such as ``"wsb-dt"`` into ``("WSB", "DT")``."""
    tag = name.strip().upper()
    layout = ST
    for lay in LAYOUTS:
        if tag.endswith("-" + lay):
            tag, layout = tag[: -len(lay) - 1], lay
            break
    if tag not in METHODS:
        raise ValueError(f"unknown method {name!r}; expected one of {METHODS} (optionally -ST/-DT)")
    return tag, layout


@dataclass(frozen=True)
class BandwidthPolicy:
    """How the kernel bandwidth is chosen.

    ``kind`` is ``"default"`` (the closest sum-of-L_i pairs), ``"fixed"``
    (absolute ``value``), ``"fraction"`` (closest ``value`` share of all
    pairs) or ``"search"`` over ``grid``.  Search grids hold pair-inclusion
    fractions unless ``absolute`` is set.
    """

    kind: str = "default"
    value: float | None = None
    grid: tuple[float, ...] = ()
    absolute: bool = False

    def __post_init__(self):
        if self.kind not in ("default", "fixed", "fraction", "search"):
            raise ValueError(f"unknown bandwidth policy {self.kind!r}")
        if self.kind == "fixed" and not (self.value is not None and self.value > 0):
            raise ValueError("a fixed bandwidth must be positive")
        if self.kind == "fraction" and not (self.value is not None and 0 < self.value <= 1):
            raise ValueError("an inclusion fraction must lie in (0, 1]")
        if self.kind == "search":
            object.__setattr__(self, "grid", tuple(float(g) for g in self.grid))
            if not self.grid:
                raise ValueError("bandwidth search needs a nonempty grid")
            if any(not g > 0 for g in self.grid):
                raise ValueError("bandwidth grid entries must be positive")
            if not self.absolute and any(g > 1 for g in self.grid):
                raise ValueError("inclusion fractions must lie in (0, 1]")

    @classmethod
    def fixed(cls, h: float) -> BandwidthPolicy:
        return cls("fixed", float(h))

    @classmethod
    def fraction(cls, frac: float) -> BandwidthPolicy:
        return cls("fraction", float(frac))

    @classmethod
    def search(cls, grid, absolute: bool = False) -> BandwidthPolicy:
        return cls("search", grid=tuple(grid), absolute=absolute)


@dataclass(frozen=True)
class LagPolicy:
    kind: str = "none"
    value: float = 0.0
    grid: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("none", "fixed", "search"):
            raise ValueError(f"unknown lag policy {self.kind!r}")
        if not np.isfinite(self.value):
            raise ValueError("lag must be finite")
        if self.kind == "search":
            object.__setattr__(self, "grid", tuple(float(g) for g in self.grid))
            if not self.grid or not all(np.isfinite(self.grid)):
                raise ValueError("lag search needs a nonempty finite grid")

    @classmethod
    def fixed(cls, lag: float) -> LagPolicy:
        return cls("fixed", float(lag))

    @classmethod
    def search(cls, grid) -> LagPolicy:
        return cls("search", grid=tuple(grid))


@dataclass(frozen=True)
class RegressionSpec:
    """Everything needed to turn an asynchronous dataset into a fitted model.

    ``cv_sampler`` drives the cross-validation fits of bandwidth and lag
    searches; by default it is ``sampler`` with a shorter chain.
    """

    method: str = "WSB"
    layout: str = ST
    bandwidth: BandwidthPolicy = BandwidthPolicy()
    lag: LagPolicy = LagPolicy()
    sampler: SamplerConfig = SamplerConfig()
    cv_sampler: SamplerConfig | None = None
    pool_fraction: float = 0.084
    n_folds: int = 10
    n_groups: int = 5

    def __post_init__(self):
        method, layout = self.method.upper(), self.layout.upper()
        if method not in METHODS:
            method, layout = parse_method(self.method)
        if layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {LAYOUTS}")
        object.__setattr__(self, "method", method)
        object.__setattr__(self, "layout", layout)
        if not 0 < self.pool_fraction <= 1:
            raise ValueError("pool_fraction must lie in (0, 1]")
        if self.n_folds < 2:
            raise ValueError("need at least two folds")
        if self.n_groups < 1:
            raise ValueError("need at least one voting group")
        mode = "hard" if method in HARD_METHODS else "soft"
        if self.sampler.mode != mode:
            object.__setattr__(self, "sampler", replace(self.sampler, mode=mode))
        if self.cv_sampler is not None and self.cv_sampler.mode != mode:
            object.__setattr__(self, "cv_sampler", replace(self.cv_sampler, mode=mode))

    @classmethod
    def from_label(cls, label: str, **kwargs) -> RegressionSpec:
        method, layout = parse_method(label)
        return cls(method=method, layout=layout, **kwargs)

    @property
    def label(self) -> str:
        return f"{self.method}-{self.layout}" if self.method == "WSB" else self.method

    @property
    def uses_kernel(self) -> bool:
        return self.method in KERNEL_METHODS

    @property
    def mode(self) -> str:
        return self.sampler.mode

    @property
    def cv_config(self) -> SamplerConfig:
        if self.cv_sampler is not None:
            return self.cv_sampler
        n_iter = min(self.sampler.n_iter, DEFAULT_CV_ITER)
        burn = min(DEFAULT_CV_BURN, n_iter - 1)
        return replace(self.sampler, n_iter=n_iter, burn_in=burn, thin=1)


@dataclass
class BandwidthSearchReport:
    fractions: np.ndarray
    bandwidths: np.ndarray
    statistic: np.ndarray
    group_statistic: np.ndarray
    votes: np.ndarray
    chosen_index: int
    pool_size: int
    lag: float = 0.0
    folds: list = field(default_factory=list, repr=False)
    pool_subjects: np.ndarray = field(default=None, repr=False)
    pool_fold: np.ndarray = field(default=None, repr=False)

    @property
    def bandwidth(self) -> float:
        return float(self.bandwidths[self.chosen_index])

    @property
    def fraction(self) -> float:
        return float(self.fractions[self.chosen_index])


@dataclass
class LagSearchReport:
    lags: np.ndarray
    statistic: np.ndarray
    bandwidths: np.ndarray
    pool_sizes: np.ndarray
    chosen_index: int

    @property
    def lag(self) -> float:
        return float(self.lags[self.chosen_index])


def _lag_of(spec: RegressionSpec) -> float:
    return spec.lag.value if spec.lag.kind == "fixed" else 0.0


def build_design(dataset: AsyncDataset, spec: RegressionSpec, h: float | None = None,
                 lag: float | None = None) -> CaseTable:
    """Training cases for ``spec.method``; kernel methods need the bandwidth ``h``."""
    lag = _lag_of(spec) if lag is None else lag
    if spec.uses_kernel:
        if h is None:
            raise ValueError(f"{spec.method} needs a bandwidth")
        cases = build_pairs(dataset, KernelSpec(h, lag), spec.layout)
        if spec.method == "NWT":
            cases = cases.with_unit_weights()
    elif spec.method in ("LOCF-S", "LOCF-B"):
        cases = locf_align(dataset, spec.layout, lag)
    else:
        cases = linear_interp_align(dataset, spec.layout, lag)
    if len(cases) == 0:
        raise DataError(f"{spec.label} design is empty")
    return cases


def query_features(x, t, layout: str, lag: float = 0.0) -> np.ndarray:
    """Model inputs for synchronous queries ``(x, t)``; DT sets the covariate time to ``t - lag``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    t = np.asarray(t, dtype=float)
    cols = [x, t[:, None]]
    if layout == DT:
        cols.append((t - lag)[:, None])
    return np.hstack(cols)


def _fraction_to_h(distances, fraction):
    return bandwidth_for_count(distances, int(round(fraction * distances.size)))


def resolve_bandwidth(dataset: AsyncDataset, policy: BandwidthPolicy, lag: float = 0.0) -> float:
    """Absolute bandwidth for a non-search policy (search policies fall back to the default rule)."""
    if policy.kind == "fixed":
        return float(policy.value)
    if policy.kind == "fraction":
        return _fraction_to_h(all_distances(dataset, lag), policy.value)
    return default_bandwidth(dataset, lag)


def _folds(dataset: AsyncDataset, n_folds: int, seed: int) -> list[np.ndarray]:
    k = min(n_folds, dataset.n)
    perm = np.random.default_rng(derive_seed(seed, 0xF01D)).permutation(dataset.n)
    return [np.sort(f) for f in np.array_split(perm, k)]


@dataclass
class _Pool:
    features: np.ndarray
    response: np.ndarray
    distance: np.ndarray
    subject: np.ndarray


def _pool(dataset: AsyncDataset, spec: RegressionSpec, lag: float) -> _Pool:
    li = linear_interp_align(dataset, ST, lag)
    if len(li) == 0:
        raise DataError("no response can be interpolated; cross-validation pool is empty")
    d = max(1, int(round(spec.pool_fraction * len(li))))
    keep = np.argsort(li.distance, kind="stable")[:d]
    p = dataset.p
    feats = query_features(li.features[keep, :p], li.t[keep], spec.layout, lag)
    return _Pool(feats, li.response[keep], li.distance[keep], li.subject[keep])


def _cv_predictions(dataset, spec, h, lag, pool, folds, seed) -> np.ndarray:
    """Predict every pool case from a fit that excludes its subject's fold."""
    ids = np.array(dataset.subject_ids, dtype=object)
    pred = np.full(pool.response.size, np.nan)
    config = spec.cv_config
    for f, test_idx in enumerate(folds):
        in_fold = np.isin(pool.subject, ids[test_idx])
        if not in_fold.any():
            continue
        train = dataset.subset(np.setdiff1d(np.arange(dataset.n), test_idx))
        cases = build_design(train, spec, h, lag)
        assert not np.isin(cases.subject, ids[test_idx]).any()
        draws = fit(cases, config=replace(config, seed=derive_seed(seed, f)))
        pred[in_fold] = predict(draws, pool.features[in_fold], quantiles=()).mean
    return pred


def _seed_of(spec: RegressionSpec) -> int:
    return 0 if spec.sampler.seed is None else int(spec.sampler.seed)


def bandwidth_search(dataset: AsyncDataset, spec: RegressionSpec, grid=None,
                     absolute: bool | None = None, lag: float | None = None) -> BandwidthSearchReport:
    """Choose the bandwidth by interpolation cross-validation with distance-group voting.

    Parameters
    ----------
    dataset : AsyncDataset
        Training subjects.
    spec : RegressionSpec
        Method, layout, pool fraction, fold and group counts.
    grid : sequence of float, optional
        Candidate pair-inclusion fractions (or absolute bandwidths when
        ``absolute``).  Defaults to the grid of ``spec.bandwidth``.
    lag : float, optional
        Covariate lag used for pairing; defaults to the spec's fixed lag.

    Returns
    -------
    BandwidthSearchReport
        The pool is split into ``n_groups`` groups by interpolation distance;
        the nearest group's best bandwidth scores ``n_groups`` points, the
        next ``n_groups - 1`` and so on.  The highest total wins, ties going
        to the smaller bandwidth.
    """
    if grid is None:
        grid, absolute = spec.bandwidth.grid, spec.bandwidth.absolute
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("bandwidth grid is empty")
    if np.any(~(grid > 0)):
        raise ValueError("bandwidth grid entries must be positive")
    lag = _lag_of(spec) if lag is None else lag
    dist = all_distances(dataset, lag)
    if absolute:
        hs = grid.copy()
        fracs = np.array([np.count_nonzero(dist < h) / dist.size for h in hs])
    else:
        if np.any(grid > 1):
            raise ValueError("inclusion fractions must lie in (0, 1]")
        fracs = grid.copy()
        hs = np.array([_fraction_to_h(dist, g) for g in grid])

    seed = _seed_of(spec)
    pool = _pool(dataset, spec, lag)
    folds = _folds(dataset, spec.n_folds, seed)
    ids = np.array(dataset.subject_ids, dtype=object)
    fold_of = np.full(pool.response.size, -1)
    for f, idx in enumerate(folds):
        fold_of[np.isin(pool.subject, ids[idx])] = f

    n_groups = spec.n_groups if pool.response.size >= spec.n_groups else 1
    groups = np.array_split(np.arange(pool.response.size), n_groups)
    sq = np.empty((hs.size, pool.response.size))
    for g, h in enumerate(hs):
        if hs.size == 1:
            sq[g] = np.nan
            break
        pred = _cv_predictions(dataset, spec, h, lag, pool, folds, seed)
        sq[g] = (pred - pool.response) ** 2
        logger.info("bandwidth %.6g (%.1f%%): CV statistic %.6g", h, 100 * fracs[g], sq[g].mean())
    stat = sq.mean(axis=1)
    group_stat = np.array([sq[:, grp].mean(axis=1) for grp in groups])

    order = np.lexsort((np.arange(hs.size), hs))  # ascending h, stable
    votes = np.zeros(hs.size)
    if hs.size == 1:
        chosen = 0
    else:
        for rank, gs in enumerate(group_stat):
            best = order[np.argmin(gs[order])]
            votes[best] += n_groups - rank
        chosen = int(order[np.argmax(votes[order])])
    return BandwidthSearchReport(fracs, hs, stat, group_stat, votes, chosen, pool.response.size,
                                 lag, folds, pool.subject, fold_of)


def lag_search(dataset: AsyncDataset, spec: RegressionSpec, grid=None) -> LagSearchReport:
    """Choose the covariate lag minimizing the interpolation cross-validation statistic.

    For each candidate lag the pairing distance becomes ``|t - s - lag|``,
    the bandwidth is re-derived (a searched bandwidth policy uses the
    default rule here) and the pool interpolates the covariate at
    ``t - lag``.
    """
    grid = spec.lag.grid if grid is None else grid
    lags = np.asarray(grid, dtype=float)
    if lags.size == 0:
        raise ValueError("lag grid is empty")
    if not np.all(np.isfinite(lags)):
        raise ValueError("lag grid entries must be finite")
    seed = _seed_of(spec)
    folds = _folds(dataset, spec.n_folds, seed)
    stat = np.full(lags.size, np.nan)
    hs = np.full(lags.size, np.nan)
    sizes = np.zeros(lags.size, int)
    for i, lag in enumerate(lags):
        h = resolve_bandwidth(dataset, spec.bandwidth, lag) if spec.uses_kernel else None
        hs[i] = np.nan if h is None else h
        try:
            pool = _pool(dataset, spec, lag)
        except DataError:
            logger.warning("lag %.6g: no interpolable responses", lag)
            stat[i] = np.inf
            continue
        sizes[i] = pool.response.size
        if lags.size == 1:
            break
        pred = _cv_predictions(dataset, spec, h, lag, pool, folds, seed)
        stat[i] = np.mean((pred - pool.response) ** 2)
        logger.info("lag %.6g: CV statistic %.6g", lag, stat[i])
    chosen = 0 if lags.size == 1 else int(np.argmin(np.where(np.isnan(stat), np.inf, stat)))
    return LagSearchReport(lags, stat, hs, sizes, chosen)


@dataclass
class AsyncFit:
    """A fitted asynchronous model with the bandwidth and lag it used."""

    spec: RegressionSpec
    draws: PosteriorDraws
    bandwidth: float | None
    inclusion: float | None
    lag: float
    n_cases: int
    bandwidth_report: BandwidthSearchReport | None = None
    lag_report: LagSearchReport | None = None

    def features(self, x, t) -> np.ndarray:
        return query_features(x, t, self.spec.layout, self.lag)

    def predict(self, x, t, quantiles=(0.05, 0.5, 0.95)):
        """Posterior summary of f at synchronous queries (covariate value ``x`` at time ``t``)."""
        return predict(self.draws, self.features(x, t), quantiles=quantiles)

    def predict_mean(self, x, t) -> np.ndarray:
        return self.predict(x, t, quantiles=()).mean


def fit_async(dataset: AsyncDataset, spec: RegressionSpec) -> AsyncFit:
    """Resolve lag and bandwidth per the spec, build the design and run the sampler."""
    lag_report = bw_report = None
    if spec.lag.kind == "search":
        lag_report = lag_search(dataset, spec)
        lag = lag_report.lag
    else:
        lag = _lag_of(spec)
    h = inclusion = None
    if spec.uses_kernel:
        if spec.bandwidth.kind == "search":
            bw_report = bandwidth_search(dataset, spec, lag=lag)
            h = bw_report.bandwidth
        else:
            h = resolve_bandwidth(dataset, spec.bandwidth, lag)
        d = all_distances(dataset, lag)
        inclusion = float(np.count_nonzero(d < h) / d.size)
    cases = build_design(dataset, spec, h, lag)
    logger.info("%s: %d cases, h=%s, lag=%g", spec.label, len(cases), h, lag)
    draws = fit(cases, config=spec.sampler)
    return AsyncFit(spec, draws, h, inclusion, lag, len(cases), bw_report, lag_report)


class AsyncRegressor(RegressorMixin, BaseEstimator):
    """Scikit-learn style wrapper around :func:`fit_async`.

    ``fit`` takes an :class:`AsyncDataset`; ``predict`` takes synchronous
    query rows ``(x_1, ..., x_p, t)``.

    Parameters
    ----------
    method : str
        ``"WSB"``, ``"LOCF-S"``, ``"LOCF-B"``, ``"LI"``, ``"NWT"`` or ``"WTSTD"``.
    layout : {"ST", "DT"}
    bandwidth : "default", "search", float
        A float in (0, 1) with ``bandwidth_is_fraction`` is a pair-inclusion
        fraction; otherwise an absolute bandwidth.
    bandwidth_grid : sequence of float, optional
        Inclusion fractions searched when ``bandwidth="search"``.
    lag : float or "search"
    lag_grid : sequence of float, optional
    n_trees, n_iter, burn_in : int
        Sampler settings for the final fit.
    cv_iter, cv_burn_in : int
        Sampler settings for cross-validation fits.
    random_state : int
    """

    def __init__(self, method="WSB", layout="ST", bandwidth="default", bandwidth_grid=None,
                 bandwidth_is_fraction=False, pool_fraction=0.084, lag=0.0, lag_grid=None,
                 n_trees=None, n_iter=2500, burn_in=500, cv_iter=DEFAULT_CV_ITER,
                 cv_burn_in=DEFAULT_CV_BURN, n_folds=10, random_state=0):
        self.method = method
        self.layout = layout
        self.bandwidth = bandwidth
        self.bandwidth_grid = bandwidth_grid
        self.bandwidth_is_fraction = bandwidth_is_fraction
        self.pool_fraction = pool_fraction
        self.lag = lag
        self.lag_grid = lag_grid
        self.n_trees = n_trees
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.cv_iter = cv_iter
        self.cv_burn_in = cv_burn_in
        self.n_folds = n_folds
        self.random_state = random_state

    def _spec(self) -> RegressionSpec:
        if self.bandwidth == "default":
            bw = BandwidthPolicy()
        elif self.bandwidth == "search":
            bw = BandwidthPolicy.search(self.bandwidth_grid or (0.10, 0.134, 0.167, 0.20))
        elif self.bandwidth_is_fraction:
            bw = BandwidthPolicy.fraction(float(self.bandwidth))
        else:
            bw = BandwidthPolicy.fixed(float(self.bandwidth))
        if self.lag == "search":
            lag = LagPolicy.search(self.lag_grid or ())
        elif self.lag:
            lag = LagPolicy.fixed(float(self.lag))
        else:
            lag = LagPolicy()
        sampler = SamplerConfig(n_trees=self.n_trees, n_iter=self.n_iter, burn_in=self.burn_in,
                                seed=self.random_state)
        cv = replace(sampler, n_iter=self.cv_iter, burn_in=self.cv_burn_in)
        return RegressionSpec(self.method, self.layout, bw, lag, sampler, cv,
                              self.pool_fraction, self.n_folds)

    def fit(self, X: AsyncDataset, y=None):
        if not isinstance(X, AsyncDataset):
            raise TypeError("AsyncRegressor.fit expects an AsyncDataset")
        self.result_ = fit_async(X, self._spec())
        self.bandwidth_ = self.result_.bandwidth
        self.lag_ = self.result_.lag
        self.n_features_in_ = X.p + 1
        return self

    def _split(self, X):
        check_is_fitted(self, "result_")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected rows of {self.n_features_in_} values (covariates then time)")
        return X[:, :-1], X[:, -1]

    def predict(self, X):
        x, t = self._split(X)
        return self.result_.predict_mean(x, t)

    def predict_quantiles(self, X, quantiles=(0.05, 0.5, 0.95)):
        x, t = self._split(X)
        return self.result_.predict(x, t, quantiles=quantiles).quantiles
