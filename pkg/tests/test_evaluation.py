import logging
import math

import numpy as np
import pytest
from scipy import stats

from hbmvis.dataset import Dataset, Observation, make_dataset
from hbmvis.errors import ConfigurationError, DegenerateTailError, MismatchError
from hbmvis.evaluation import (
    LooResult,
    compare_models,
    elpd_difference,
    exact_loo_oracle,
    fit_generalized_pareto,
    pairwise_differences,
    pointwise_loglik,
    prediction_error,
    psis_loo,
    psis_smooth,
    read_loo_csv,
    loo_to_csv,
    tail_length,
)
from hbmvis.model_spec import build_spec
from hbmvis.posterior import predict
from hbmvis.sampler import McmcConfig, PriorConfig, fit

from conftest import CYCLE_YEARS, simulate_lines


def trending(seed=0, units=("A", "B", "C"), slope=-4.0, years=range(2009, 2019)):
    rng = np.random.default_rng(seed)
    records = [(u, y, 500 + 10 * i + slope * (y - 2018) + 5 * rng.standard_normal())
               for i, u in enumerate(units) for y in years]
    return make_dataset(records)


class TestLoglik:
    def test_density_at_mode(self, small_grouped):
        spec = build_spec("country", small_grouped)
        d = fit(spec, small_grouped, McmcConfig(chains=1, iterations=20, warmup=5))
        ds1 = small_grouped.subset([0])
        # move the observation onto each draw's line with sigma 1
        d.draws[:, d.index["sigma"]] = 1.0
        line = predict(d, ds1.unit_labels[0], ds1.t[0])
        for s in range(d.n_draws):
            obs = Observation(ds1.observations[0].unit, ds1.observations[0].year, float(line[s]))
            ll = pointwise_loglik(d, Dataset((obs,), ds1.anchor_year, ds1.groupings))
            assert ll[s, 0] == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_matches_scipy(self, small_grouped):
        spec = build_spec("region", small_grouped)
        d = fit(spec, small_grouped, McmcConfig(chains=1, iterations=30, warmup=5, seed=4))
        ll = pointwise_loglik(d, small_grouped)
        mu = np.column_stack([predict(d, u, t) for u, t in zip(small_grouped.unit_labels, small_grouped.t)])
        ref = stats.norm.logpdf(small_grouped.y[None, :], mu, d["sigma"][:, None])
        np.testing.assert_allclose(ll, ref, rtol=0, atol=1e-12)
        assert ll.shape == (d.n_draws, len(small_grouped))

    def test_doubling_sigma(self):
        ds = make_dataset([("A", 2018, 503.0), ("A", 2015, 500.0)])
        spec = build_spec("nonpooled", ds)
        d = fit(spec, ds, McmcConfig(chains=1, iterations=5, warmup=0))
        d.draws[:, d.index["alpha[A]"]] = 500.0
        d.draws[:, d.index["gamma[A]"]] = 0.0
        d.draws[:, d.index["sigma"]] = 2.0
        l1 = pointwise_loglik(d, ds)[0, 0]
        d.draws[:, d.index["sigma"]] = 4.0
        l2 = pointwise_loglik(d, ds)[0, 0]
        assert l1 - l2 == pytest.approx(math.log(2) - 0.5 * (9 / 4 - 9 / 16))


class TestGeneralizedPareto:
    def test_heavy_tail(self):
        x = stats.genpareto.rvs(0.5, scale=1.0, size=2000, random_state=np.random.default_rng(0))
        k, sigma = fit_generalized_pareto(x, weak_prior=False)
        assert 0.4 <= k <= 0.6
        assert sigma == pytest.approx(1.0, rel=0.15)

    def test_exponential_tail(self):
        x = np.random.default_rng(1).exponential(size=2000)
        k, _ = fit_generalized_pareto(x, weak_prior=False)
        assert -0.1 <= k <= 0.1

    def test_bounded_tail(self):
        x = stats.genpareto.rvs(-0.3, size=4000, random_state=np.random.default_rng(2))
        k, _ = fit_generalized_pareto(x, weak_prior=False)
        assert -0.4 <= k <= -0.2

    def test_degenerate(self):
        with pytest.raises(DegenerateTailError):
            fit_generalized_pareto(np.full(20, 0.3))
        with pytest.raises(DegenerateTailError):
            fit_generalized_pareto([0.1, 0.2, 0.3])


class TestPsis:
    def test_tail_length(self):
        assert tail_length(4000) == 190
        assert tail_length(100) == 20

    def test_constant_loglik(self):
        ll = np.full((400, 3), -2.5)
        res = psis_loo(ll)
        np.testing.assert_allclose(res.pointwise, -2.5)
        assert np.all(res.pareto_k == 0)

    def test_smoothing_keeps_order_and_caps(self):
        lr = np.random.default_rng(3).standard_t(3, size=1000)
        lw, k = psis_smooth(lr)
        assert lw.max() <= 0.0
        order = np.argsort(lr)
        tail = order[-tail_length(1000):]
        assert np.all(np.diff(lw[tail]) >= -1e-12)
        assert np.isfinite(k)

    def test_shift_invariance(self):
        rng = np.random.default_rng(4)
        ll = rng.normal(-3, 1, size=(1000, 6))
        c = rng.normal(size=6)
        a, b = psis_loo(ll), psis_loo(ll + c)
        np.testing.assert_allclose(b.pointwise - a.pointwise, c, atol=1e-10)
        assert b.elpd_loo - a.elpd_loo == pytest.approx(c.sum(), abs=1e-9)

    def test_result_invariants(self):
        ll = np.random.default_rng(5).normal(-3, 0.5, size=(500, 10))
        res = psis_loo(ll)
        assert res.elpd_loo == pytest.approx(res.pointwise.sum())
        assert res.se == pytest.approx(math.sqrt(10 * np.var(res.pointwise, ddof=1)))

    def test_outlier_has_largest_k(self):
        ds = trending(6, units=("A", "B"))
        obs = list(ds.observations)
        o = obs[3]
        obs[3] = Observation(o.unit, o.year, o.value + 120.0)
        ds = Dataset(tuple(obs), ds.anchor_year)
        d = fit(build_spec("country", ds), ds, McmcConfig(chains=4, iterations=1000, warmup=500, seed=2))
        res = psis_loo(pointwise_loglik(d, ds))
        assert int(np.argmax(res.pareto_k)) == 3
        assert 3 in res.flagged

    def test_csv_roundtrip(self, tmp_path):
        ll = np.random.default_rng(7).normal(-3, 0.5, size=(200, 4))
        ds = make_dataset([("A", 2003 + 3 * i, 0.0) for i in range(4)])
        res = psis_loo(ll)
        p = tmp_path / "loo.csv"
        p.write_text(loo_to_csv(res, ds), encoding="utf-8")
        back = read_loo_csv(p)
        np.testing.assert_array_equal(back.pointwise, res.pointwise)
        assert back.elpd_loo == res.elpd_loo


class TestExactOracle:
    def test_single_observation(self):
        ds = make_dataset([("A", 2018, 480.0)])
        out = exact_loo_oracle("country", ds, McmcConfig(chains=1, iterations=200, warmup=50))
        assert out.shape == (1,) and np.isfinite(out[0])

    def test_duplicated_rows_agree(self):
        base = trending(1, units=("A",), years=range(2012, 2019))
        dup = Dataset(base.observations + (base.observations[2],), base.anchor_year)
        out = exact_loo_oracle("country", dup, McmcConfig(chains=2, iterations=1000, warmup=200, seed=3))
        assert out[2] == pytest.approx(out[-1], abs=0.1)

    def test_refuses_large_n(self):
        ds = make_dataset([(f"U{i}", 2018, 500.0) for i in range(51)])
        with pytest.raises(ConfigurationError):
            exact_loo_oracle("country", ds, McmcConfig())


class TestCompare:
    def _res(self, v):
        v = np.asarray(v, dtype=float)
        return LooResult(float(v.sum()), 0.0, v, np.zeros_like(v))

    def test_self_comparison(self):
        r = self._res([-1.0, -2.0, -3.0])
        assert elpd_difference(r, r) == (0.0, 0.0)

    def test_antisymmetry(self):
        rng = np.random.default_rng(8)
        a, b = self._res(rng.normal(size=20)), self._res(rng.normal(size=20))
        d_ab, se_ab = elpd_difference(a, b)
        d_ba, se_ba = elpd_difference(b, a)
        assert d_ab == -d_ba
        assert se_ab == se_ba

    def test_ranking(self):
        rows = compare_models({"m1": self._res([-3.0, -3.0]), "m2": self._res([-1.0, -2.0])})
        assert [r.model for r in rows] == ["m2", "m1"]
        assert rows[0].elpd_diff == 0.0
        assert rows[1].elpd_diff == pytest.approx(-3.0)
        assert len(pairwise_differences({"a": rows and self._res([1.0]), "b": self._res([2.0])})) == 1

    def test_mismatch(self):
        with pytest.raises(MismatchError):
            compare_models({"a": self._res([1.0]), "b": self._res([1.0, 2.0])})

    def test_true_model_beats_flat(self):
        ds = trending(9, slope=-5.0)
        spec = build_spec("nonpooled", ds)
        mc = McmcConfig(chains=2, iterations=1000, warmup=300, seed=4)
        flat = PriorConfig(S0=((1e4, 0.0), (0.0, 1e-10)))
        good = psis_loo(pointwise_loglik(fit(spec, ds, mc), ds))
        bad = psis_loo(pointwise_loglik(fit(spec, ds, mc, flat), ds))
        d, se = elpd_difference(good, bad)
        assert d > 2 * se


class TestPredictionError:
    def test_centred_when_observed_is_median(self, small_grouped):
        spec = build_spec("country", small_grouped)
        d = fit(spec, small_grouped, McmcConfig(chains=2, iterations=500, warmup=100, seed=5))
        med = float(np.median(predict(d, "U1", 4.0)))
        hold = make_dataset([("U1", 2022, med)])
        out = prediction_error(d, hold, rng=np.random.default_rng(0))
        err = out["U1"]
        assert abs(err.summary.median) < 0.1 * err.error_draws.std()
        assert err.summary.levels == [0.5, 0.8, 0.95]

    def test_unknown_units_skipped(self, small_grouped, caplog):
        spec = build_spec("country", small_grouped)
        d = fit(spec, small_grouped, McmcConfig(chains=1, iterations=20, warmup=5))
        hold = make_dataset([("U1", 2022, 480.0), ("NEW", 2022, 470.0)])
        with caplog.at_level(logging.WARNING):
            out = prediction_error(d, hold)
        assert list(out) == ["U1"]
        assert "NEW" in caplog.text
