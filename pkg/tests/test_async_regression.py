import numpy as np
import pytest

from wsbart.async_regression import (
    AsyncRegressor,
    BandwidthPolicy,
    LagPolicy,
    RegressionSpec,
    bandwidth_search,
    build_design,
    derive_seed,
    fit_async,
    lag_search,
    parse_method,
    query_features,
)
from wsbart.async_regression import _pool
from wsbart.longitudinal import (
    AsyncDataset,
    DataError,
    SubjectSeries,
    all_distances,
    default_bandwidth,
)
from wsbart.sampler import SamplerConfig
from wsbart.simulation import SimConfig, generate_dataset

FAST = SamplerConfig(n_trees=10, n_iter=60, burn_in=20, seed=3)


def sync_dataset(rng, n=30, p=1):
    subs = []
    for i in range(n):
        t = np.sort(rng.random(rng.integers(2, 6)))
        x = rng.standard_normal((t.size, p))
        y = np.sin(2 * np.pi * t) - 2 * x[:, 0] + 0.1 * rng.standard_normal(t.size)
        subs.append(SubjectSeries(f"s{i:02d}", t, y, t.copy(), x))
    return AsyncDataset(tuple(subs))


@pytest.fixture(scope="module")
def small_async():
    return generate_dataset(SimConfig(n_subjects=40, function="f1", seed=2)).train


class TestSpec:
    def test_parse_method(self):
        assert parse_method("wsb-dt") == ("WSB", "DT")
        assert parse_method("LOCF-B") == ("LOCF-B", "ST")
        with pytest.raises(ValueError):
            parse_method("knn")

    def test_mode_by_method(self):
        assert RegressionSpec("LOCF-B").mode == "hard"
        assert RegressionSpec("WTSTD").mode == "hard"
        assert RegressionSpec("WSB", sampler=SamplerConfig(mode="hard")).mode == "soft"

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            BandwidthPolicy.search([])
        with pytest.raises(ValueError):
            BandwidthPolicy.search([0.1, -0.2], absolute=True)
        with pytest.raises(ValueError):
            BandwidthPolicy.fixed(0.0)
        with pytest.raises(ValueError):
            LagPolicy.search([0.1, np.inf])
        with pytest.raises(ValueError):
            LagPolicy.search([])

    def test_cv_budget(self):
        spec = RegressionSpec(sampler=SamplerConfig(n_iter=2500, burn_in=500))
        assert (spec.cv_config.n_iter, spec.cv_config.burn_in) == (1000, 200)

    def test_derive_seed_stable(self):
        assert derive_seed(1, 2) == derive_seed(1, 2)
        assert derive_seed(1, 2) != derive_seed(2, 1)


class TestDesign:
    def test_layout_dimensions(self, small_async):
        h = default_bandwidth(small_async)
        st = build_design(small_async, RegressionSpec("WSB", "ST"), h)
        dt = build_design(small_async, RegressionSpec("WSB", "DT"), h)
        assert st.n_features == small_async.p + 1
        assert dt.n_features == small_async.p + 2

    def test_nwt_unit_weights(self, small_async):
        cases = build_design(small_async, RegressionSpec("NWT"), default_bandwidth(small_async))
        assert np.all(cases.weight == 1.0)

    def test_kernel_method_needs_h(self, small_async):
        with pytest.raises(ValueError):
            build_design(small_async, RegressionSpec("WSB"))

    def test_empty_design(self):
        ds = AsyncDataset((SubjectSeries("a", [0.1], [1.0], [0.5], [[1.0]]),))
        with pytest.raises(DataError):
            build_design(ds, RegressionSpec("LOCF-S"))

    def test_tiny_h_equals_locf_on_synchronous(self, rng):
        ds = sync_dataset(rng)
        wsb = build_design(ds, RegressionSpec("WSB"), 1e-9)
        locf = build_design(ds, RegressionSpec("LOCF-S"))
        np.testing.assert_array_equal(wsb.features, locf.features)
        np.testing.assert_array_equal(wsb.response, locf.response)
        np.testing.assert_array_equal(wsb.weight, locf.weight)

    def test_tiny_h_identical_fits(self, rng):
        ds = sync_dataset(rng)
        a = fit_async(ds, RegressionSpec("WSB", bandwidth=BandwidthPolicy.fixed(1e-9), sampler=FAST))
        b = fit_async(ds, RegressionSpec("LOCF-S", sampler=FAST))
        np.testing.assert_array_equal(a.draws.sigma_trace, b.draws.sigma_trace)
        np.testing.assert_array_equal(a.draws.value, b.draws.value)

    def test_query_features(self):
        q = query_features([1.0, 2.0], [0.5, 0.7], "DT", lag=0.2)
        np.testing.assert_allclose(q, [[1.0, 0.5, 0.3], [2.0, 0.7, 0.5]])
        assert query_features([1.0], [0.5], "ST").shape == (1, 2)


class TestFitAsync:
    def test_default_bandwidth(self, small_async):
        res = fit_async(small_async, RegressionSpec("WSB", sampler=FAST))
        assert res.bandwidth == default_bandwidth(small_async)
        d = all_distances(small_async)
        assert res.inclusion == np.count_nonzero(d < res.bandwidth) / d.size

    def test_locf_b_is_hard(self, small_async):
        res = fit_async(small_async, RegressionSpec("LOCF-B", sampler=FAST))
        assert res.draws.mode == "hard"
        assert np.all(res.draws.tau == 1e-8)
        assert res.bandwidth is None

    def test_fraction_policy(self, small_async):
        res = fit_async(small_async, RegressionSpec("WSB", bandwidth=BandwidthPolicy.fraction(0.2),
                                                    sampler=FAST))
        d = all_distances(small_async)
        assert res.inclusion == pytest.approx(round(0.2 * d.size) / d.size)

    def test_predictions_finite(self, small_async):
        res = fit_async(small_async, RegressionSpec("LI", sampler=FAST))
        out = res.predict(np.zeros(5), np.linspace(0.1, 0.9, 5))
        assert np.all(np.isfinite(out.mean)) and np.all(np.diff(out.quantiles, axis=1) >= 0)


class TestBandwidthSearch:
    def test_single_element_grid(self, small_async, monkeypatch):
        import wsbart.async_regression as ar

        def boom(*a, **k):
            raise AssertionError("no fits expected")

        monkeypatch.setattr(ar, "fit", boom)
        rep = bandwidth_search(small_async, RegressionSpec("WSB", sampler=FAST), grid=[0.134])
        assert rep.chosen_index == 0 and rep.fraction == 0.134

    def test_empty_grid(self, small_async):
        with pytest.raises(ValueError):
            bandwidth_search(small_async, RegressionSpec("WSB"), grid=[])

    def test_report_and_no_leakage(self, small_async):
        spec = RegressionSpec("WSB", sampler=FAST, cv_sampler=FAST, pool_fraction=0.2, n_folds=4)
        rep = bandwidth_search(small_async, spec, grid=[0.1, 0.2])
        assert rep.bandwidth in rep.bandwidths
        assert np.all(np.isfinite(rep.statistic))
        assert rep.votes.sum() == sum(range(1, 6))
        ids = np.array(small_async.subject_ids, dtype=object)
        # every pool case is scored by the unique fold that holds its subject out
        for f, idx in enumerate(rep.folds):
            held = np.isin(rep.pool_subjects, ids[idx])
            assert np.all(rep.pool_fold[held] == f)
        assert np.all(rep.pool_fold >= 0)

    def test_fits_never_see_scored_subjects(self, small_async, monkeypatch):
        import wsbart.async_regression as ar
        log = []
        real_build, real_predict = ar.build_design, ar.predict

        def build(dataset, *a, **k):
            log.append(["train", set(dataset.subject_ids)])
            return real_build(dataset, *a, **k)

        def pred(draws, X, **k):
            log[-1].append(X.copy())
            return real_predict(draws, X, **k)

        monkeypatch.setattr(ar, "build_design", build)
        monkeypatch.setattr(ar, "predict", pred)
        spec = RegressionSpec("WSB", sampler=FAST, cv_sampler=FAST, pool_fraction=0.3, n_folds=3)
        pool = _pool(small_async, spec, 0.0)
        owner = {tuple(f): s for f, s in zip(pool.features, pool.subject)}
        bandwidth_search(small_async, spec, grid=[0.1, 0.2])
        scored = 0
        for _, train, X in log:
            for row in X:
                assert owner[tuple(row)] not in train
                scored += 1
        assert scored == 2 * pool.response.size

    def test_votes_and_ties(self, small_async, monkeypatch):
        import wsbart.async_regression as ar

        def fake(dataset, spec, h, lag, pool, folds, seed):
            return pool.response + (1.0 if h > 0.05 else 0.0)  # smaller h predicts perfectly

        monkeypatch.setattr(ar, "_cv_predictions", fake)
        rep = bandwidth_search(small_async, RegressionSpec("WSB"), grid=[0.3, 0.05, 0.5], absolute=True)
        assert rep.bandwidth == 0.05
        assert rep.votes[1] == 15

        monkeypatch.setattr(ar, "_cv_predictions", lambda *a: a[4].response.copy())
        rep = bandwidth_search(small_async, RegressionSpec("WSB"), grid=[0.3, 0.05, 0.5], absolute=True)
        assert rep.bandwidth == 0.05  # all tied: smallest h

    def test_small_pool_single_group(self, rng, monkeypatch):
        import wsbart.async_regression as ar
        ds = sync_dataset(rng, n=3)
        monkeypatch.setattr(ar, "_cv_predictions", lambda *a: a[4].response + a[2])
        rep = bandwidth_search(ds, RegressionSpec("WSB", pool_fraction=0.3, n_folds=2),
                               grid=[0.2, 0.1], absolute=True)
        assert rep.pool_size < 5
        assert rep.group_statistic.shape[0] == 1
        assert rep.bandwidth == 0.1

    def test_monotone_pool(self, small_async):
        sizes = [len(_pool(small_async, RegressionSpec(pool_fraction=f), 0.0).response)
                 for f in (0.5, 0.2, 0.084, 0.01)]
        assert sizes == sorted(sizes, reverse=True)
        big = _pool(small_async, RegressionSpec(pool_fraction=0.5), 0.0)
        small = _pool(small_async, RegressionSpec(pool_fraction=0.2), 0.0)
        assert set(map(tuple, small.features)) <= set(map(tuple, big.features))


class TestLagSearch:
    def test_single_element(self, small_async):
        rep = lag_search(small_async, RegressionSpec("WSB", sampler=FAST), grid=[0.3])
        assert rep.lag == 0.3

    def test_empty_grid(self, small_async):
        with pytest.raises(ValueError):
            lag_search(small_async, RegressionSpec("WSB"), grid=[])

    def test_synchronous_no_lag_prefers_zero(self):
        data = generate_dataset(SimConfig(n_subjects=60, function="f4", seed=5))
        cv = SamplerConfig(n_trees=20, n_iter=200, burn_in=50, seed=1)
        spec = RegressionSpec("WSB", sampler=cv, cv_sampler=cv, n_folds=5, pool_fraction=0.2)
        rep = lag_search(data.train, spec, grid=[0.0, 0.5])
        assert rep.lag == 0.0
        assert rep.statistic[0] < rep.statistic[1]

    def test_fit_with_lag_search(self, small_async):
        spec = RegressionSpec("LI", lag=LagPolicy.search([0.0, 0.1]), sampler=FAST, cv_sampler=FAST,
                              n_folds=3, pool_fraction=0.3)
        res = fit_async(small_async, spec)
        assert res.lag in (0.0, 0.1)
        assert res.lag_report is not None


class TestRegressor:
    def test_fit_predict(self, small_async):
        est = AsyncRegressor(n_trees=10, n_iter=60, burn_in=20)
        est.fit(small_async)
        X = np.column_stack([np.zeros(4), np.linspace(0.1, 0.9, 4)])
        assert est.predict(X).shape == (4,)
        assert est.predict_quantiles(X).shape == (4, 3)
        assert est.bandwidth_ == default_bandwidth(small_async)
        with pytest.raises(ValueError):
            est.predict(np.zeros((2, 5)))

    def test_rejects_arrays(self):
        with pytest.raises(TypeError):
            AsyncRegressor().fit(np.zeros((3, 2)))

    def test_get_params_roundtrip(self):
        est = AsyncRegressor(method="NWT", lag=0.2)
        assert AsyncRegressor(**est.get_params()).get_params() == est.get_params()
