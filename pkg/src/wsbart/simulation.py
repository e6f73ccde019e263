"""Synthetic asynchronous longitudinal data and multi-method experiments.

Observation counts are ``1 + Poisson(intensity)`` with uniform times on
(0, 1).  The covariate is a stationary Gaussian process with correlation
``exp(-|dt|)`` (optionally plus ``5 sin(10 pi t)``); the error is a Gaussian
process with covariance ``2 ** -|dt|``.  Responses follow
``Y(t) = alpha(t) + beta * X(t - lag) + eps(t)``.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .async_regression import RegressionSpec, derive_seed, fit_async
from .longitudinal import AsyncDataset, SubjectSeries

logger = logging.getLogger(__name__)

MAX_JITTER = 1e-6


class CholeskyError(np.linalg.LinAlgError):
    pass


def covariate_kernel(dt):
    return np.exp(-np.abs(dt))


def error_kernel(dt):
    return np.power(2.0, -np.abs(np.asarray(dt, dtype=float)))


@dataclass(frozen=True)
class ResponseFunction:
    name: str
    alpha: Callable[[np.ndarray], np.ndarray]
    beta: float
    lag: float = 0.0

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        return self.alpha(t) + self.beta * x


def _sin2pi(t):
    return np.sin(2 * np.pi * t)


RESPONSE_FUNCTIONS = {
    "f1": ResponseFunction("f1", _sin2pi, -2.0),
    "f2": ResponseFunction("f2", np.sqrt, -2.0),
    "f3": ResponseFunction("f3", lambda t: 0.4 * t + 0.5, -2.0),
    "f4": ResponseFunction("f4", _sin2pi, -20.0),
    "f5": ResponseFunction("f5", lambda t: 10 * np.sin(2 * np.pi * t), -20.0, 0.26),
}


def response_function(name: str, beta: float | None = None, lag: float | None = None) -> ResponseFunction:
    try:
        fn = RESPONSE_FUNCTIONS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown response function {name!r}; choose from {sorted(RESPONSE_FUNCTIONS)}") from None
    if beta is not None:
        fn = replace(fn, beta=float(beta))
    if lag is not None:
        fn = replace(fn, lag=float(lag))
    return fn


@dataclass(frozen=True)
class SimConfig:
    """Settings of one synthetic design.

    ``beta`` and ``lag`` default to the chosen function's own values.
    ``covariate_mode`` is ``"gp"`` or ``"gp+sin"`` (GP plus ``5 sin(10 pi t)``).
    """

    n_subjects: int = 300
    intensity: float = 5.0
    train_fraction: float = 0.7
    function: str = "f1"
    beta: float | None = None
    lag: float | None = None
    covariate_mode: str = "gp"
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 2:
            raise ValueError("need at least two subjects")
        if not self.intensity > 0:
            raise ValueError("intensity must be positive")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.covariate_mode not in ("gp", "gp+sin"):
            raise ValueError("covariate_mode must be 'gp' or 'gp+sin'")
        response_function(self.function)

    @property
    def response(self) -> ResponseFunction:
        return response_function(self.function, self.beta, self.lag)

    @property
    def n_train(self) -> int:
        return min(self.n_subjects - 1, max(1, int(round(self.train_fraction * self.n_subjects))))


def sample_times(intensity: float, rng: np.random.Generator) -> np.ndarray:
    """``1 + Poisson(intensity)`` sorted uniform times on (0, 1)."""
    if not intensity > 0:
        raise ValueError("intensity must be positive")
    n = 1 + rng.poisson(intensity)
    return np.sort(rng.random(n))


def sample_gp(times, cov_fn, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean Gaussian process draw with covariance ``cov_fn(|t_i - t_j|)``.

    Diagonal jitter starts at 1e-10 and grows tenfold up to 1e-6 if the
    Cholesky factorization fails.
    """
    t = np.asarray(times, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("times must be finite")
    C = cov_fn(np.abs(t[:, None] - t[None, :]))
    jitter = 1e-10
    while True:
        try:
            L = np.linalg.cholesky(C + jitter * np.eye(t.size))
            break
        except np.linalg.LinAlgError:
            jitter *= 10
            if jitter > MAX_JITTER * (1 + 1e-9):
                raise CholeskyError("covariance not positive definite even with maximal jitter") from None
    return L @ rng.standard_normal(t.size)


@dataclass
class TestSet:
    """Synchronous test observations; ``x`` is the covariate driving each response."""

    subject: np.ndarray
    t: np.ndarray
    x: np.ndarray
    f_true: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.t.size


@dataclass
class SimDataset:
    train: AsyncDataset
    test: TestSet
    truth: dict[str, np.ndarray]
    config: SimConfig


def generate_dataset(config: SimConfig, rng: np.random.Generator | None = None) -> SimDataset:
    """Draw a dataset and split subjects into asynchronous training and synchronous test sets.

    The covariate path of a subject is drawn jointly at its response times,
    covariate times and lagged response times, so every derived quantity
    comes from one coherent process.  ``truth`` records, per response, the
    split, the driving covariate, ``f`` and the error ``eps``.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    fn = config.response
    n = config.n_subjects
    train_set = set(rng.permutation(n)[: config.n_train].tolist())
    subjects = []
    test_parts = []
    truth = {k: [] for k in ("subject", "split", "t", "x", "alpha", "f", "eps", "y")}
    for i in range(n):
        sid = f"S{i:04d}"
        rt = sample_times(config.intensity, rng)
        ct = sample_times(config.intensity, rng)
        targets = rt - fn.lag
        grid = np.unique(np.concatenate([rt, ct, targets]))
        path = sample_gp(grid, covariate_kernel, rng)
        if config.covariate_mode == "gp+sin":
            path = path + 5 * np.sin(10 * np.pi * grid)
        xc = path[np.searchsorted(grid, ct)]
        xd = path[np.searchsorted(grid, targets)]
        eps = sample_gp(rt, error_kernel, rng)
        alpha = fn.alpha(rt)
        f = alpha + fn.beta * xd
        y = f + eps
        split = "train" if i in train_set else "test"
        for k, v in (("subject", [sid] * rt.size), ("split", [split] * rt.size), ("t", rt),
                     ("x", xd), ("alpha", alpha), ("f", f), ("eps", eps), ("y", y)):
            truth[k].extend(np.asarray(v).tolist())
        if split == "train":
            subjects.append(SubjectSeries(sid, rt, y, ct, xc[:, None]))
        else:
            test_parts.append((np.full(rt.size, sid, dtype=object), rt, xd, f, y))
    subj, t, x, f, y = (np.concatenate(c) for c in zip(*test_parts))
    test = TestSet(subj, t, x[:, None], f, y)
    truth_arr = {k: np.asarray(v, dtype=object if k in ("subject", "split") else float)
                 for k, v in truth.items()}
    return SimDataset(AsyncDataset(tuple(subjects), 1), test, truth_arr, config)


def rmse(predictions, truths) -> float:
    """Root-mean-square error of predictions against the noiseless truth."""
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truths, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("need at least one value")
    return float(np.sqrt(np.mean((p - t) ** 2)))


@dataclass(frozen=True)
class MethodSpec:
    label: str
    spec: RegressionSpec


def method_specs(labels: Sequence[str], **kwargs) -> list[MethodSpec]:
    specs = [RegressionSpec.from_label(lab, **kwargs) for lab in labels]
    return [MethodSpec(s.label, s) for s in specs]


REPORT_COLUMNS = ("replicate", "method", "rmse", "h_chosen", "lag_chosen", "seed", "error")


@dataclass
class ExperimentReport:
    rows: list[dict] = field(default_factory=list)
    config: SimConfig | None = None

    @property
    def methods(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r["method"] not in seen:
                seen.append(r["method"])
        return seen

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.rows if r["error"])

    def rmse(self, method: str) -> np.ndarray:
        return np.array([r["rmse"] for r in self.rows if r["method"] == method and not r["error"]])

    def column(self, method: str, key: str) -> list:
        return [r[key] for r in self.rows if r["method"] == method]

    def mean_rmse(self, method: str) -> float:
        v = self.rmse(method)
        return float(v.mean()) if v.size else math.nan

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])

    @classmethod
    def from_csv(cls, path) -> ExperimentReport:
        rows = []
        with Path(path).open(newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                rows.append(dict(
                    replicate=int(rec["replicate"]), method=rec["method"],
                    rmse=_num(rec["rmse"]), h_chosen=_num(rec["h_chosen"]),
                    lag_chosen=_num(rec["lag_chosen"]), seed=int(rec["seed"]),
                    error=rec["error"]))
        return cls(rows)


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return "" if v is None else v


def _num(s):
    return float(s) if s else math.nan


def _run_replicate(config: SimConfig, methods: Sequence[MethodSpec], root: int, r: int) -> list[dict]:
    seed = derive_seed(root, r)
    data = generate_dataset(replace(config, seed=seed))
    fit_seed = derive_seed(root, r, 1)
    rows = []
    for m in methods:
        spec = replace(m.spec, sampler=replace(m.spec.sampler, seed=fit_seed))
        row = dict(replicate=r, method=m.label, rmse=math.nan, h_chosen=math.nan,
                   lag_chosen=math.nan, seed=seed, error="")
        start = time.perf_counter()
        try:
            res = fit_async(data.train, spec)
            pred = res.predict_mean(data.test.x, data.test.t)
            row.update(rmse=rmse(pred, data.test.f_true),
                       h_chosen=math.nan if res.bandwidth is None else float(res.bandwidth),
                       lag_chosen=float(res.lag))
        except Exception as exc:  # recorded per cell
            logger.exception("replicate %d, %s failed", r, m.label)
            row["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        logger.info("replicate %d %s: rmse=%.4f (%.1fs)", r, m.label, row["rmse"],
                    time.perf_counter() - start)
        rows.append(row)
    return rows


def run_experiment(config: SimConfig, methods: Sequence[MethodSpec], replicates: int,
                   root_seed: int | None = None, n_jobs: int = 1) -> ExperimentReport:
    """Fit every method on each of ``replicates`` fresh datasets and score test RMSE.

    Replicate ``r`` draws its dataset from a seed derived from
    ``(root_seed, r)``; all methods in a replicate share that dataset and a
    common sampler seed.  A failing cell is recorded and the run continues.
    With ``n_jobs > 1`` replicates run in worker processes; the report is
    identical either way.
    """
    if replicates < 1:
        raise ValueError("need at least one replicate")
    root = config.seed if root_seed is None else root_seed
    methods = list(methods)
    report = ExperimentReport(config=config)
    if n_jobs > 1 and replicates > 1:
        with ProcessPoolExecutor(max_workers=min(n_jobs, replicates)) as pool:
            futures = [pool.submit(_run_replicate, config, methods, root, r) for r in range(replicates)]
            for fut in futures:
                report.rows.extend(fut.result())
    else:
        for r in range(replicates):
            report.rows.extend(_run_replicate(config, methods, root, r))
    return report
