import numpy as np
import pytest

from hbmvis.dataset import make_dataset
from hbmvis.diagnostics import diagnostics, ess, format_table, split_rhat
from hbmvis.errors import ConfigurationError
from hbmvis.model_spec import build_spec
from hbmvis.sampler import McmcConfig, fit


def rhat_by_hand(chains):
    halves = []
    for c in chains:
        h = len(c) // 2
        halves += [c[:h], c[-h:]]
    n = len(halves[0])
    means = [np.mean(h) for h in halves]
    W = np.mean([np.var(h, ddof=1) for h in halves])
    B = n * np.var(means, ddof=1)
    return np.sqrt(((n - 1) / n * W + B / n) / W)


def ar1(rng, phi, shape):
    out = np.empty(shape)
    out[:, 0] = rng.standard_normal(shape[0]) / np.sqrt(1 - phi**2)
    for i in range(1, shape[1]):
        out[:, i] = phi * out[:, i - 1] + rng.standard_normal(shape[0])
    return out


class TestSplitRhat:
    def test_iid_chains_near_one(self):
        x = np.random.default_rng(0).standard_normal((4, 1000))
        assert 0.99 <= split_rhat(x) <= 1.01

    def test_disjoint_means(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 500))
        x[2:] += 10
        assert split_rhat(x) > 2

    def test_constant_is_undefined(self):
        assert split_rhat(np.full((4, 100), 3.0)) is None

    def test_matches_hand_formula(self):
        x = np.random.default_rng(2).normal(size=(3, 101)).cumsum(axis=1)
        assert split_rhat(x) == pytest.approx(rhat_by_hand(x), rel=1e-12)

    def test_trend_within_chain_detected(self):
        x = np.tile(np.linspace(0, 5, 400), (4, 1)) + np.random.default_rng(3).standard_normal((4, 400))
        assert split_rhat(x) > 1.1


class TestEss:
    def test_iid_close_to_draw_count(self):
        x = np.random.default_rng(4).standard_normal((4, 1000))
        assert 3400 < ess(x) < 4600

    def test_ar1_matches_integrated_time(self):
        phi = 0.5
        x = ar1(np.random.default_rng(5), phi, (4, 5000))
        expected = x.size * (1 - phi) / (1 + phi)
        assert ess(x) == pytest.approx(expected, rel=0.15)

    def test_constant_is_undefined(self):
        assert ess(np.ones((2, 50))) is None


class TestTable:
    def test_rows_for_every_parameter(self, small_grouped):
        spec = build_spec("country", small_grouped)
        draws = fit(spec, small_grouped, McmcConfig(chains=2, iterations=100, warmup=50, seed=1))
        rows = diagnostics(draws)
        assert [r.parameter for r in rows] == list(draws.index.names)
        assert all(r.rhat is not None for r in rows)
        text = format_table(rows)
        assert text.startswith("parameter,rhat,ess,flag\n")
        assert len(text.splitlines()) == len(rows) + 1

    def test_single_chain_omits_rhat(self, small_grouped):
        spec = build_spec("country", small_grouped)
        draws = fit(spec, small_grouped, McmcConfig(chains=1, iterations=20, warmup=5))
        assert all(r.rhat is None and not r.flagged for r in diagnostics(draws))

    def test_too_few_draws(self):
        ds = make_dataset([("A", 2018, 500.0), ("A", 2015, 490.0)])
        draws = fit(build_spec("country", ds), ds, McmcConfig(chains=2, iterations=3, warmup=0))
        with pytest.raises(ConfigurationError):
            diagnostics(draws)
