"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Options may also come from an INI file given with ``--config``; keys in its
``[wsbart]`` section (or before any section) use the long option names with
dashes or underscores, and command-line flags take precedence.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .artifact import ArtifactError, load_model, save_model, schema_columns, schema_hash
from .async_regression import (
    AsyncFit,
    BandwidthPolicy,
    LagPolicy,
    RegressionSpec,
    bandwidth_search,
    fit_async,
    lag_search,
    parse_method,
)
from .boxplot import render_svg
from .longitudinal import AsyncDataset, DataError, load_csv, save_csv
from .sampler import DegenerateDataError, SamplerConfig, predict
from .simulation import CholeskyError, SimConfig, generate_dataset, method_specs, run_experiment

logger = logging.getLogger("wsbart")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
THREADS_ENV = "WSBART_THREADS"


class UsageError(Exception):
    pass


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _percent_list(text: str) -> list[float]:
    """Grid of inclusion percentages such as ``10,13.4,16.7,20`` (a trailing % is allowed)."""
    return _float_list(text.replace("%", ""))


def _add_common_fit(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", default="wsb-st",
                   help="wsb-st, wsb-dt, locf-s, locf-b, li, nwt or wtstd (layout suffix optional)")
    p.add_argument("--layout", choices=("ST", "DT"), default=None,
                   help="override the layout implied by --method")
    p.add_argument("--n-trees", type=int, default=None)
    p.add_argument("--n-iter", type=int, default=2500)
    p.add_argument("--burn-in", type=int, default=500)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--cv-iter", type=int, default=1000, help="chain length of cross-validation fits")
    p.add_argument("--cv-burn-in", type=int, default=200)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--groups", type=int, default=5, help="voting groups in bandwidth search")
    p.add_argument("--pool-fraction", type=float, default=8.4,
                   help="percentage of interpolated cases kept as the CV pool")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-transform", choices=("none", "response", "covariates", "both"),
                   default="none", help="natural-log transform before fitting")
    p.add_argument("--rescale-time", action="store_true",
                   help="map observation times linearly onto [0, 1]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wsbart", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, help="INI file of option defaults")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic train/test/truth dataset")
    p.add_argument("--fn", default="f1", help="response function f1..f5")
    p.add_argument("--n", type=int, default=300, help="number of subjects")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--lag", type=float, default=None)
    p.add_argument("--intensity", type=float, default=5.0)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--covariate-mode", choices=("gp", "gp+sin"), default="gp")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")

    p = sub.add_parser("fit", help="fit a model to a long-format CSV")
    p.add_argument("data", type=Path)
    _add_common_fit(p)
    p.add_argument("--bandwidth", default="default",
                   help="'default', 'search', an absolute value, or a percentage such as 20%%")
    p.add_argument("--grid", type=_percent_list, default=None,
                   help="bandwidth search grid in inclusion percent")
    p.add_argument("--lag", default="0", help="fixed lag or 'search'")
    p.add_argument("--lag-grid", type=_float_list, default=None)
    p.add_argument("--out", type=Path, default=Path("model.wsb"))
    p.add_argument("--report", type=Path, default=None, help="fit report JSON (default: <out>.json)")

    p = sub.add_parser("predict", help="predict from a saved model")
    p.add_argument("model", type=Path)
    p.add_argument("query", type=Path, nargs="?", default=None,
                   help="CSV with columns v1..vp,time (not needed with --sweep)")
    p.add_argument("--out", type=Path, default=None, help="output CSV (default: stdout)")
    p.add_argument("--quantiles", type=_float_list, default=[0.05, 0.5, 0.95])
    p.add_argument("--sweep", default=None, help="column to sweep for a marginal-effect curve")
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--range", type=_float_list, default=None, help="sweep range lo,hi")
    p.add_argument("--at", default="", help="fixed values of the other columns, e.g. v1=0.5,time=0.3")

    for name, what in (("search-bandwidth", "bandwidth"), ("search-lag", "lag")):
        p = sub.add_parser(name, help=f"cross-validated {what} search")
        p.add_argument("data", type=Path)
        _add_common_fit(p)
        if what == "bandwidth":
            p.add_argument("--grid", type=_percent_list, required=True,
                           help="inclusion percentages, e.g. 10,13.4,16.7,20")
            p.add_argument("--absolute", action="store_true", help="grid holds absolute bandwidths")
            p.add_argument("--lag", type=float, default=0.0)
        else:
            p.add_argument("--grid", type=_float_list, required=True, help="candidate lags")
            p.add_argument("--bandwidth", default="default",
                           help="'default', an absolute value or a percentage per lag")
        p.add_argument("--out", type=Path, default=None, help="report CSV (default: stdout)")

    p = sub.add_parser("experiment", help="simulation study with CSV and SVG output")
    p.add_argument("--fn", default="f4")
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--sim-lag", type=float, default=None, help="true lag of the generator")
    p.add_argument("--covariate-mode", choices=("gp", "gp+sin"), default="gp")
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--methods", default="wsb-st,locf-s,li")
    p.add_argument("--bandwidth", default="default")
    p.add_argument("--grid", type=_percent_list, default=None)
    p.add_argument("--lag", default="0")
    p.add_argument("--lag-grid", type=_float_list, default=None)
    p.add_argument("--n-trees", type=int, default=None)
    p.add_argument("--n-iter", type=int, default=2500)
    p.add_argument("--burn-in", type=int, default=500)
    p.add_argument("--cv-iter", type=int, default=1000)
    p.add_argument("--cv-burn-in", type=int, default=200)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--groups", type=int, default=5)
    p.add_argument("--pool-fraction", type=float, default=8.4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    return parser


def _config_defaults(path: Path) -> dict[str, str]:
    text = path.read_text(encoding="utf-8")
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text if text.lstrip().startswith("[") else "[wsbart]\n" + text)
    values = {}
    for section in cp.sections():
        for k, v in cp.items(section):
            values[k.replace("-", "_")] = v
    return values


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return parser.parse_args(argv)
    try:
        values = _config_defaults(known.config)
    except (OSError, configparser.Error) as exc:
        parser.error(f"cannot read config file: {exc}")
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for sp in subparsers.choices.values():
        defaults = {}
        for action in sp._actions:
            if action.dest not in values or action.dest in ("help", "data", "model", "query"):
                continue
            raw = values[action.dest]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[action.dest] = raw.strip().lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                try:
                    defaults[action.dest] = action.type(raw)
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    parser.error(f"config value {action.dest}={raw!r}: {exc}")
            else:
                defaults[action.dest] = raw
            if action.choices is not None and defaults[action.dest] not in action.choices:
                parser.error(f"config value {action.dest}={raw!r} not in {list(action.choices)}")
        sp.set_defaults(**defaults)
    return parser.parse_args(argv)


def _sampler(args) -> SamplerConfig:
    return SamplerConfig(n_trees=args.n_trees, n_iter=args.n_iter, burn_in=args.burn_in,
                         thin=getattr(args, "thin", 1), seed=args.seed)


def _bandwidth_policy(text: str, grid) -> BandwidthPolicy:
    text = str(text).strip().lower()
    if text == "default":
        return BandwidthPolicy()
    if text == "search":
        if not grid:
            raise UsageError("--bandwidth search needs --grid")
        return BandwidthPolicy.search([g / 100 for g in grid])
    try:
        if text.endswith("%"):
            return BandwidthPolicy.fraction(float(text[:-1]) / 100)
        return BandwidthPolicy.fixed(float(text))
    except ValueError as exc:
        raise UsageError(f"invalid bandwidth {text!r}: {exc}") from None


def _lag_policy(text: str, grid) -> LagPolicy:
    text = str(text).strip().lower()
    if text == "search":
        if not grid:
            raise UsageError("--lag search needs --lag-grid")
        return LagPolicy.search(grid)
    try:
        v = float(text)
    except ValueError:
        raise UsageError(f"invalid lag {text!r}") from None
    return LagPolicy.fixed(v) if v else LagPolicy()


def _spec(args, bandwidth: BandwidthPolicy, lag: LagPolicy) -> RegressionSpec:
    try:
        method, layout = parse_method(args.method)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    layout = getattr(args, "layout", None) or layout
    sampler = _sampler(args)
    cv = replace(sampler, n_iter=args.cv_iter, burn_in=args.cv_burn_in, thin=1)
    if not 0 < args.pool_fraction <= 100:
        raise UsageError("--pool-fraction must be a percentage in (0, 100]")
    return RegressionSpec(method, layout, bandwidth, lag, sampler, cv, args.pool_fraction / 100,
                          args.folds, args.groups)


def _transform(dataset: AsyncDataset, args) -> tuple[AsyncDataset, dict]:
    info = {"log": args.log_transform, "time": None}
    if args.log_transform != "none":
        def safe_log(v):
            if np.any(v <= 0):
                raise DataError("log transform needs positive values")
            return np.log(v)
        resp = safe_log if args.log_transform in ("response", "both") else None
        cov = safe_log if args.log_transform in ("covariates", "both") else None
        dataset = dataset.map_values(resp, cov)
    if args.rescale_time:
        times = np.concatenate([np.r_[s.response_times, s.covariate_times] for s in dataset.subjects])
        lo, hi = float(times.min()), float(times.max())
        span = hi - lo if hi > lo else 1.0
        dataset = dataset.map_times(lambda t: (t - lo) / span)
        info["time"] = [lo, span]
    return dataset, info


def _load(path: Path, args) -> tuple[AsyncDataset, dict]:
    return _transform(load_csv(path), args)


def _write_csv(rows, header, out: Path | None) -> None:
    fh = sys.stdout if out is None else out.open("w", newline="", encoding="utf-8")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if out is not None:
            fh.close()


def _r(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def cmd_simulate(args) -> int:
    cfg = SimConfig(n_subjects=args.n, intensity=args.intensity, train_fraction=args.train_fraction,
                    function=args.fn, beta=args.beta, lag=args.lag,
                    covariate_mode=args.covariate_mode, seed=args.seed)
    data = generate_dataset(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    save_csv(data.train, args.out / "train.csv")
    te = data.test
    _write_csv(([s, repr(float(t)), repr(float(x)), repr(float(f)), repr(float(y))]
                for s, t, x, f, y in zip(te.subject, te.t, te.x[:, 0], te.f_true, te.y)),
               ["subject_id", "time", "v1", "f_true", "y"], args.out / "test.csv")
    tr = data.truth
    fn = cfg.response
    _write_csv(([tr["subject"][i], tr["split"][i]] + [repr(float(tr[k][i])) for k in
                                                      ("t", "x", "alpha", "f", "eps", "y")]
                for i in range(tr["t"].size)),
               ["subject_id", "split", "time", "x_driving", "alpha", "f_true", "eps", "y"],
               args.out / "truth.csv")
    (args.out / "simulation.json").write_text(json.dumps(
        {"function": fn.name, "beta": fn.beta, "lag": fn.lag, "n_subjects": cfg.n_subjects,
         "intensity": cfg.intensity, "train_fraction": cfg.train_fraction,
         "covariate_mode": cfg.covariate_mode, "seed": cfg.seed}, sort_keys=True, indent=1) + "\n")
    print(f"wrote {data.train.n} training and {cfg.n_subjects - data.train.n} test subjects to {args.out}")
    return EXIT_OK


def _fit_report(res: AsyncFit, transforms: dict) -> dict:
    d = res.draws
    trace = d.sigma_trace
    rep = {
        "method": res.spec.label, "layout": res.spec.layout, "mode": res.spec.mode,
        "bandwidth": res.bandwidth,
        "inclusion_percent": None if res.inclusion is None else 100 * res.inclusion,
        "lag": res.lag, "n_cases": res.n_cases, "n_draws": d.n_draws, "n_trees": d.m,
        "sigma": {"mean": float(d.sigma.mean()), "sd": float(d.sigma.std()),
                  "q05": float(np.quantile(d.sigma, 0.05)), "q50": float(np.quantile(d.sigma, 0.5)),
                  "q95": float(np.quantile(d.sigma, 0.95)), "last": float(trace[-1])},
        "acceptance": {k: (a / n if n else None) for k, (a, n) in d.acceptance.items()},
        "transforms": transforms,
    }
    if res.bandwidth_report is not None:
        b = res.bandwidth_report
        rep["bandwidth_search"] = {"percent": (100 * b.fractions).tolist(), "bandwidth": b.bandwidths.tolist(),
                                   "statistic": b.statistic.tolist(), "votes": b.votes.tolist(),
                                   "pool_size": b.pool_size}
    if res.lag_report is not None:
        g = res.lag_report
        rep["lag_search"] = {"lag": g.lags.tolist(), "statistic": g.statistic.tolist()}
    return rep


def cmd_fit(args) -> int:
    dataset, transforms = _load(args.data, args)
    spec = _spec(args, _bandwidth_policy(args.bandwidth, args.grid), _lag_policy(args.lag, args.lag_grid))
    res = fit_async(dataset, spec)
    save_model(res, args.out, dataset.p, transforms)
    report = _fit_report(res, transforms)
    path = args.report or args.out.with_name(args.out.name + ".json")
    path.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    h = "n/a" if res.bandwidth is None else f"{res.bandwidth:.6g} ({report['inclusion_percent']:.2f}% of pairs)"
    print(f"{spec.label} [{spec.mode} trees]: bandwidth {h}, lag {res.lag:g}, {res.n_cases} cases")
    print(f"sigma posterior mean {report['sigma']['mean']:.6g}; model written to {args.out}")
    return EXIT_OK


def _parse_at(text: str) -> dict[str, float]:
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in part:
            raise UsageError(f"--at expects name=value pairs, got {part!r}")
        k, v = part.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise UsageError(f"--at value for {k!r} is not a number") from None
    return out


def _read_query(path: Path, columns: list[str], expected_hash: str) -> np.ndarray:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty query file") from None
        feats = [h for h in header if h == "time" or (h.startswith("v") and h[1:].isdigit())]
        feats.sort(key=lambda h: (h == "time", int(h[1:]) if h != "time" else 0))
        if schema_hash(feats) != expected_hash:
            raise DataError(f"{path}: query columns {feats} do not match the model schema {columns}")
        idx = [header.index(c) for c in columns]
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                rows.append([float(rec[i]) for i in idx])
            except (ValueError, IndexError):
                raise DataError(f"{path}: line {lineno}: malformed row") from None
    if not rows:
        raise DataError(f"{path}: no query rows")
    return np.array(rows)


def cmd_predict(args) -> int:
    res, header = load_model(args.model)
    columns = header["schema"]["columns"]
    if args.sweep is not None:
        if args.sweep not in columns:
            raise UsageError(f"--sweep must be one of {columns}")
        if args.points < 2:
            raise UsageError("--points must be at least 2")
        at = _parse_at(args.at)
        unknown = set(at) - set(columns)
        if unknown:
            raise UsageError(f"unknown --at columns {sorted(unknown)}")
        missing = [c for c in columns if c != args.sweep and c not in at]
        if missing:
            raise UsageError(f"--at must fix {missing}")
        if args.range is None or len(args.range) != 2:
            raise UsageError("--sweep needs --range lo,hi")
        grid = np.linspace(args.range[0], args.range[1], args.points)
        Q = np.column_stack([grid if c == args.sweep else np.full(grid.size, at[c]) for c in columns])
    else:
        if args.query is None:
            raise UsageError("a query CSV is required unless --sweep is given")
        Q = _read_query(args.query, columns, header["schema"]["hash"])
    x, t = _apply_query_transforms(Q[:, :-1], Q[:, -1], header["transforms"])
    summary = res.predict(x, t, quantiles=tuple(args.quantiles))
    qnames = [f"q{round(100 * q):02d}" if abs(100 * q - round(100 * q)) < 1e-9 else f"q{q!r}"
              for q in args.quantiles]
    rows = ([_r(v) for v in Q[i]] + [_r(summary.mean[i])] + [_r(v) for v in summary.quantiles[i]]
            for i in range(Q.shape[0]))
    _write_csv(rows, columns + ["mean"] + qnames, args.out)
    return EXIT_OK


def _apply_query_transforms(x, t, transforms: dict):
    if transforms.get("log") in ("covariates", "both"):
        if np.any(x <= 0):
            raise DataError("log-transformed model needs positive covariate values")
        x = np.log(x)
    if transforms.get("time"):
        lo, span = transforms["time"]
        t = (t - lo) / span
    return x, t


def cmd_search_bandwidth(args) -> int:
    dataset, _ = _load(args.data, args)
    grid = args.grid if args.absolute else [g / 100 for g in args.grid]
    spec = _spec(args, BandwidthPolicy.search(grid, absolute=args.absolute), LagPolicy())
    rep = bandwidth_search(dataset, spec, lag=args.lag)
    rows = []
    for i in range(rep.bandwidths.size):
        rows.append(["grid", _r(100 * rep.fractions[i]), _r(rep.bandwidths[i]), _r(rep.statistic[i]),
                     _r(rep.votes[i])] + [_r(v) for v in rep.group_statistic[:, i]])
    ng = rep.group_statistic.shape[0]
    rows.append(["choice", _r(100 * rep.fraction), _r(rep.bandwidth), _r(rep.statistic[rep.chosen_index]),
                 _r(rep.votes[rep.chosen_index])] + [""] * ng)
    _write_csv(rows, ["row", "percent", "bandwidth", "statistic", "votes"]
               + [f"group{g + 1}" for g in range(ng)], args.out)
    return EXIT_OK


def cmd_search_lag(args) -> int:
    dataset, _ = _load(args.data, args)
    spec = _spec(args, _bandwidth_policy(args.bandwidth, None), LagPolicy.search(args.grid))
    rep = lag_search(dataset, spec)
    rows = [["grid", _r(rep.lags[i]), _r(rep.bandwidths[i]), str(int(rep.pool_sizes[i])),
             _r(rep.statistic[i])] for i in range(rep.lags.size)]
    i = rep.chosen_index
    rows.append(["choice", _r(rep.lags[i]), _r(rep.bandwidths[i]), str(int(rep.pool_sizes[i])),
                 _r(rep.statistic[i])])
    _write_csv(rows, ["row", "lag", "bandwidth", "pool_size", "statistic"], args.out)
    return EXIT_OK


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def cmd_experiment(args) -> int:
    cfg = SimConfig(n_subjects=args.n, function=args.fn, beta=args.beta, lag=args.sim_lag,
                    covariate_mode=args.covariate_mode, seed=args.seed)
    labels = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not labels:
        raise UsageError("--methods is empty")
    args.method = labels[0]
    base = _spec(args, _bandwidth_policy(args.bandwidth, args.grid), _lag_policy(args.lag, args.lag_grid))
    try:
        methods = method_specs(labels, bandwidth=base.bandwidth, lag=base.lag, sampler=base.sampler,
                               cv_sampler=base.cv_sampler, pool_fraction=base.pool_fraction,
                               n_folds=base.n_folds, n_groups=base.n_groups)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = run_experiment(cfg, methods, args.replicates, root_seed=args.seed, n_jobs=_threads())
    args.out.mkdir(parents=True, exist_ok=True)
    tag = f"{cfg.function}_n{cfg.n_subjects}"
    report.to_csv(args.out / f"experiment_{tag}.csv")
    groups = {m: report.rmse(m).tolist() for m in report.methods}
    title = f"{cfg.function}, n={cfg.n_subjects}, {args.replicates} replicates"
    (args.out / f"boxplot_{tag}.svg").write_text(render_svg(groups, title=title), encoding="utf-8")
    for m in report.methods:
        print(f"{m:10s} mean RMSE {report.mean_rmse(m):.4f} over {report.rmse(m).size} replicates")
    if report.n_failed:
        print(f"{report.n_failed} cell(s) failed; see the error column", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "search-bandwidth": cmd_search_bandwidth,
    "search-lag": cmd_search_lag,
    "experiment": cmd_experiment,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"wsbart: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (np.linalg.LinAlgError, DegenerateDataError, CholeskyError, FloatingPointError) as exc:
        print(f"wsbart: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ArtifactError, OSError) as exc:
        print(f"wsbart: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"wsbart: invalid value: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
