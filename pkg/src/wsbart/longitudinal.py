"""Asynchronous longitudinal observations and their conversion to training cases.

Each subject has responses observed at times ``t_ij`` and covariates observed
at different times ``s_ik``.  A response/covariate pair becomes a training
case with weight ``(1 - ((t - s - lag) / h)^2)_+``; pairs outside the kernel
support are dropped.  Last-observation-carried-forward and linear
interpolation alignments are provided as synchronizing baselines.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ST = "ST"
DT = "DT"
LAYOUTS = (ST, DT)
BANDWIDTH_EPS = 1e-9


class DataError(ValueError):
    """Invalid longitudinal data or file contents."""


class CSVFormatError(DataError):
    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = f"{path}:" if path is not None else ""
        where += f"line {line}: " if line is not None else ""
        super().__init__(where + message)


def _frozen(a, dtype=float, ndim=1):
    a = np.array(a, dtype=dtype, ndmin=ndim, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SubjectSeries:
    """One subject's response and covariate observations.

    ``covariate_values`` has shape ``(M, p)``; all covariates share the
    covariate time grid.
    """

    subject_id: str
    response_times: np.ndarray
    response_values: np.ndarray
    covariate_times: np.ndarray
    covariate_values: np.ndarray

    def __post_init__(self):
        rt = _frozen(self.response_times)
        rv = _frozen(self.response_values)
        ct = _frozen(self.covariate_times)
        cv = np.array(self.covariate_values, dtype=float, copy=True)
        if cv.ndim == 1:
            cv = cv[:, None]
        cv.flags.writeable = False
        object.__setattr__(self, "subject_id", str(self.subject_id))
        object.__setattr__(self, "response_times", rt)
        object.__setattr__(self, "response_values", rv)
        object.__setattr__(self, "covariate_times", ct)
        object.__setattr__(self, "covariate_values", cv)
        sid = self.subject_id
        if rt.ndim != 1 or rt.shape != rv.shape:
            raise DataError(f"subject {sid}: response times and values differ in shape")
        if ct.ndim != 1 or cv.ndim != 2 or cv.shape[0] != ct.size:
            raise DataError(f"subject {sid}: covariate times and values differ in shape")
        if rt.size < 1 or ct.size < 1:
            raise DataError(f"subject {sid}: needs at least one response and one covariate")
        for name, arr in (("response_times", rt), ("covariate_times", ct),
                          ("response_values", rv), ("covariate_values", cv)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"subject {sid}: non-finite {name}")
        if np.any(np.diff(rt) <= 0):
            raise DataError(f"subject {sid}: response times must be strictly increasing")
        if np.any(np.diff(ct) <= 0):
            raise DataError(f"subject {sid}: covariate times must be strictly increasing")

    @property
    def n_responses(self) -> int:
        return self.response_times.size

    @property
    def n_covariates(self) -> int:
        return self.covariate_times.size

    @property
    def p(self) -> int:
        return self.covariate_values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SubjectSeries):
            return NotImplemented
        return (self.subject_id == other.subject_id
                and np.array_equal(self.response_times, other.response_times)
                and np.array_equal(self.response_values, other.response_values)
                and np.array_equal(self.covariate_times, other.covariate_times)
                and np.array_equal(self.covariate_values, other.covariate_values))

    __hash__ = None


@dataclass(frozen=True)
class AsyncDataset:
    subjects: tuple[SubjectSeries, ...]
    p: int = field(default=None)

    def __post_init__(self):
        subjects = tuple(self.subjects)
        object.__setattr__(self, "subjects", subjects)
        if not subjects:
            raise DataError("dataset has no subjects")
        p = subjects[0].p if self.p is None else self.p
        object.__setattr__(self, "p", p)
        ids = set()
        for s in subjects:
            if s.p != p:
                raise DataError(f"subject {s.subject_id} has {s.p} covariates, expected {p}")
            if s.subject_id in ids:
                raise DataError(f"duplicate subject id {s.subject_id!r}")
            ids.add(s.subject_id)

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def subject_ids(self) -> list[str]:
        return [s.subject_id for s in self.subjects]

    @property
    def n_responses(self) -> int:
        return sum(s.n_responses for s in self.subjects)

    @property
    def n_pairs(self) -> int:
        return sum(s.n_responses * s.n_covariates for s in self.subjects)

    def subset(self, indices) -> AsyncDataset:
        return AsyncDataset(tuple(self.subjects[i] for i in indices), self.p)

    def map_times(self, fn) -> AsyncDataset:
        return AsyncDataset(tuple(
            SubjectSeries(s.subject_id, fn(s.response_times), s.response_values,
                          fn(s.covariate_times), s.covariate_values)
            for s in self.subjects), self.p)

    def map_values(self, response=None, covariate=None) -> AsyncDataset:
        return AsyncDataset(tuple(
            SubjectSeries(s.subject_id, s.response_times,
                          s.response_values if response is None else response(s.response_values),
                          s.covariate_times,
                          s.covariate_values if covariate is None else covariate(s.covariate_values))
            for s in self.subjects), self.p)


@dataclass(frozen=True)
class KernelSpec:
    bandwidth: float
    lag: float = 0.0

    def __post_init__(self):
        if not (self.bandwidth > 0):
            raise DataError(f"bandwidth must be positive, got {self.bandwidth!r}")
        if not math.isfinite(self.lag):
            raise DataError("lag must be finite")


@dataclass(frozen=True)
class WeightedCase:
    features: np.ndarray
    response: float
    weight: float
    subject_id: str
    t: float
    s: float
    distance: float


@dataclass(frozen=True, eq=False)
class CaseTable:
    """Columnar collection of weighted training cases.

    ``features`` is ``(X, t)`` in the ST layout and ``(X, t, s)`` in the DT
    layout; ``s`` is the covariate time (interpolation target for aligned
    designs) and ``distance`` the pairing or interpolation distance.
    """

    features: np.ndarray
    response: np.ndarray
    weight: np.ndarray
    subject: np.ndarray
    t: np.ndarray
    s: np.ndarray
    distance: np.ndarray
    layout: str = ST

    def __len__(self) -> int:
        return self.response.size

    def __iter__(self) -> Iterator[WeightedCase]:
        for i in range(len(self)):
            yield WeightedCase(self.features[i], float(self.response[i]), float(self.weight[i]),
                               str(self.subject[i]), float(self.t[i]), float(self.s[i]),
                               float(self.distance[i]))

    def take(self, idx) -> CaseTable:
        idx = np.asarray(idx)
        return CaseTable(self.features[idx], self.response[idx], self.weight[idx],
                         self.subject[idx], self.t[idx], self.s[idx], self.distance[idx],
                         self.layout)

    def with_unit_weights(self) -> CaseTable:
        return CaseTable(self.features, self.response, np.ones_like(self.weight), self.subject,
                         self.t, self.s, self.distance, self.layout)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def feature_names(p: int, layout: str) -> list[str]:
    names = [f"x{k + 1}" for k in range(p)] + ["t"]
    if layout == DT:
        names.append("s")
    return names


def _check_layout(layout):
    if layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {LAYOUTS}, got {layout!r}")


def _design_features(x, t, s, layout):
    cols = [x, t[:, None]]
    if layout == DT:
        cols.append(s[:, None])
    return np.hstack(cols)


def _empty_table(p, layout):
    k = p + (2 if layout == DT else 1)
    z = np.zeros(0)
    return CaseTable(np.zeros((0, k)), z, z, np.zeros(0, dtype=object), z, z, z, layout)


def _concat(parts, p, layout):
    if not parts:
        return _empty_table(p, layout)
    x, y, w, sid, t, s, dist = (np.concatenate(c) for c in zip(*parts))
    return CaseTable(_design_features(x, t, s, layout), y, w, sid, t, s, dist, layout)


def kernel_weight(dt, h):
    """Truncated quadratic kernel ``max(0, 1 - (dt / h)^2)``."""
    if not h > 0:
        raise DataError(f"bandwidth must be positive, got {h!r}")
    u = np.asarray(dt, dtype=float) / h
    return np.maximum(0.0, 1.0 - u * u)[()]


def pair_distances(subject: SubjectSeries, lag: float = 0.0) -> np.ndarray:
    """``t_ij - s_ik - lag`` for every response j (rows) and covariate k (columns)."""
    return subject.response_times[:, None] - subject.covariate_times[None, :] - lag


def all_distances(dataset: AsyncDataset, lag: float = 0.0) -> np.ndarray:
    return np.concatenate([np.abs(pair_distances(s, lag)).ravel() for s in dataset.subjects])


def build_pairs(dataset: AsyncDataset, spec: KernelSpec, layout: str = ST) -> CaseTable:
    """All response/covariate pairs with positive kernel weight, subject by subject."""
    _check_layout(layout)
    parts = []
    for subj in dataset.subjects:
        dt = pair_distances(subj, spec.lag)
        w = kernel_weight(dt, spec.bandwidth)
        j, k = np.nonzero(w > 0)
        if j.size == 0:
            continue
        parts.append((subj.covariate_values[k], subj.response_values[j], w[j, k],
                      np.full(j.size, subj.subject_id, dtype=object),
                      subj.response_times[j], subj.covariate_times[k], np.abs(dt[j, k])))
    return _concat(parts, dataset.p, layout)


def bandwidth_for_count(distances, k: int) -> float:
    """Smallest bandwidth giving the ``k`` closest pairs positive weight.

    Pairs tied with the k-th distance are included too.  When the k-th
    distance is zero, the bandwidth is a tiny fraction of the smallest
    positive distance so only coincident pairs survive.
    """
    d = np.sort(np.abs(np.asarray(distances, dtype=float)))
    if d.size == 0:
        raise DataError("no pairs to choose a bandwidth from")
    k = int(min(max(k, 1), d.size))
    dk = d[k - 1]
    if dk > 0:
        return float(dk * (1.0 + BANDWIDTH_EPS))
    pos = d[d > 0]
    return float(BANDWIDTH_EPS * (pos[0] if pos.size else 1.0))


def bandwidth_for_fraction(dataset: AsyncDataset, fraction: float, lag: float = 0.0) -> float:
    """Bandwidth including the closest ``fraction`` of all response/covariate pairs."""
    if not 0 < fraction <= 1:
        raise DataError(f"inclusion fraction must lie in (0, 1], got {fraction!r}")
    d = all_distances(dataset, lag)
    return bandwidth_for_count(d, int(round(fraction * d.size)))


def default_bandwidth(dataset: AsyncDataset, lag: float = 0.0) -> float:
    """Bandwidth admitting as many pairs as there are responses (the LOCF sample size)."""
    if dataset is None or dataset.n == 0:
        raise DataError("empty dataset")
    return bandwidth_for_count(all_distances(dataset, lag), dataset.n_responses)


def inclusion_fraction(dataset: AsyncDataset, h: float, lag: float = 0.0) -> float:
    d = all_distances(dataset, lag)
    return float(np.count_nonzero(d < h) / d.size)


def locf_align(dataset: AsyncDataset, layout: str = ST, lag: float = 0.0) -> CaseTable:
    """Pair each response with the latest covariate observed at or before it (less ``lag``)."""
    _check_layout(layout)
    parts = []
    for subj in dataset.subjects:
        k = np.searchsorted(subj.covariate_times, subj.response_times - lag, side="right") - 1
        j = np.flatnonzero(k >= 0)
        if j.size == 0:
            continue
        k = k[j]
        t = subj.response_times[j]
        s = subj.covariate_times[k]
        parts.append((subj.covariate_values[k], subj.response_values[j], np.ones(j.size),
                      np.full(j.size, subj.subject_id, dtype=object), t, s, t - lag - s))
    return _concat(parts, dataset.p, layout)


def linear_interp_align(dataset: AsyncDataset, layout: str = ST, lag: float = 0.0) -> CaseTable:
    """Interpolate the covariate linearly at each response time (shifted back by ``lag``).

    Only responses whose target time is bracketed by covariate observations
    are kept.  ``distance`` holds the gap to the nearest covariate
    observation and ``s`` the interpolation target time.
    """
    _check_layout(layout)
    parts = []
    for subj in dataset.subjects:
        st = subj.covariate_times
        u = subj.response_times - lag
        ok = (u >= st[0]) & (u <= st[-1])
        j = np.flatnonzero(ok)
        if j.size == 0:
            continue
        u = u[j]
        hi = np.clip(np.searchsorted(st, u, side="left"), 0, st.size - 1)
        lo = np.where(st[hi] == u, hi, hi - 1)
        lo = np.clip(lo, 0, st.size - 1)
        span = st[hi] - st[lo]
        frac = np.where(span > 0, (u - st[lo]) / np.where(span > 0, span, 1.0), 0.0)
        xv = subj.covariate_values
        x = xv[lo] + frac[:, None] * (xv[hi] - xv[lo])
        dist = np.minimum(np.abs(u - st[lo]), np.abs(st[hi] - u))
        parts.append((x, subj.response_values[j], np.ones(j.size),
                      np.full(j.size, subj.subject_id, dtype=object),
                      subj.response_times[j], u, dist))
    return _concat(parts, dataset.p, layout)


HEADER_FIXED = ("subject_id", "kind", "time")


def load_csv(path) -> AsyncDataset:
    """Read a long-format file with header ``subject_id,kind,time,v1[,v2,...]``."""
    path = Path(path)
    rows: dict[str, dict[str, list]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CSVFormatError("empty file", 1, path) from None
        header = [h.strip() for h in header]
        if tuple(header[:3]) != HEADER_FIXED or len(header) < 4:
            raise CSVFormatError(
                "header must start with subject_id,kind,time and have value columns v1..vp", 1, path)
        p = len(header) - 3
        expected = [f"v{k + 1}" for k in range(p)]
        if header[3:] != expected:
            unknown = [h for h in header[3:] if h not in expected]
            raise CSVFormatError(f"unknown or misordered columns {unknown or header[3:]}", 1, path)
        last_time: dict[tuple[str, str], float] = {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise CSVFormatError(f"expected {len(header)} fields, got {len(rec)}", lineno, path)
            sid, kind, time = rec[0].strip(), rec[1].strip(), rec[2].strip()
            if not sid:
                raise CSVFormatError("missing subject_id", lineno, path)
            if kind not in ("response", "covariate"):
                raise CSVFormatError(f"kind must be 'response' or 'covariate', got {kind!r}", lineno, path)
            try:
                tval = float(time)
                vals = [float(c) if c.strip() else None for c in rec[3:]]
            except ValueError as exc:
                raise CSVFormatError(f"malformed number ({exc})", lineno, path) from None
            if not math.isfinite(tval):
                raise CSVFormatError("non-finite time", lineno, path)
            if kind == "response":
                if vals[0] is None or any(v is not None for v in vals[1:]):
                    raise CSVFormatError("response rows carry exactly one value in v1", lineno, path)
                vals = vals[:1]
            elif any(v is None for v in vals):
                raise CSVFormatError(f"covariate rows need all {p} values", lineno, path)
            if any(not math.isfinite(v) for v in vals):
                raise CSVFormatError("non-finite value", lineno, path)
            key = (sid, kind)
            if key in last_time and not tval > last_time[key]:
                raise CSVFormatError(
                    f"{kind} times for subject {sid} must be strictly increasing "
                    f"({tval!r} after {last_time[key]!r})", lineno, path)
            last_time[key] = tval
            entry = rows.setdefault(sid, {"response": [], "covariate": []})
            entry[kind].append((tval, vals))
    if not rows:
        raise CSVFormatError("no data rows", None, path)
    subjects = []
    for sid, entry in rows.items():
        if not entry["response"] or not entry["covariate"]:
            raise CSVFormatError(f"subject {sid} needs at least one response and one covariate row",
                                 None, path)
        rt = [r[0] for r in entry["response"]]
        rv = [r[1][0] for r in entry["response"]]
        ct = [r[0] for r in entry["covariate"]]
        cv = [r[1] for r in entry["covariate"]]
        subjects.append(SubjectSeries(sid, rt, rv, ct, np.array(cv).reshape(len(ct), p)))
    return AsyncDataset(tuple(subjects), p)


def save_csv(dataset: AsyncDataset, path) -> None:
    """Write ``dataset`` in long format; floats are written with full precision."""
    p = dataset.p
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(HEADER_FIXED) + [f"v{k + 1}" for k in range(p)])
        for s in dataset.subjects:
            for t, v in zip(s.response_times, s.response_values):
                w.writerow([s.subject_id, "response", repr(float(t)), repr(float(v))] + [""] * (p - 1))
            for t, row in zip(s.covariate_times, s.covariate_values):
                w.writerow([s.subject_id, "covariate", repr(float(t))] + [repr(float(v)) for v in row])


def synchronous_dataset(subject_ids: Sequence[str], times, responses, covariates) -> AsyncDataset:
    """Dataset whose covariates are observed exactly at the response times."""
    return AsyncDataset(tuple(
        SubjectSeries(sid, t, y, t, x) for sid, t, y, x in zip(subject_ids, times, responses, covariates)))
