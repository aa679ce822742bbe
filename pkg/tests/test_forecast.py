import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plnlc.forecast import equal_tailed_interval, forecast, future_year_labels, hpd_interval, write_forecast
from plnlc.sampler import SCALAR_COLUMNS, ChainStore, NoConsistentDrawsError, TimeStructure


def fixed_chain(n, alpha, beta, kappa, **scalars):
    M, N = len(alpha), len(kappa)
    sc = {k: np.full(n, 0.0) for k in SCALAR_COLUMNS}
    sc.update({k: np.full(n, float(v)) for k, v in scalars.items()})
    sc["z"] = sc["z"].astype(np.int64)
    return ChainStore(
        alpha=np.tile(alpha, (n, 1)),
        beta=np.tile(beta, (n, 1)),
        kappa=np.tile(kappa, (n, 1)),
        scalars=sc,
        age_labels=tuple(range(M)),
        year_labels=tuple(range(1995, 1995 + N)),
    )


class TestHpd:
    def test_symmetric_sample_earliest_window(self):
        assert hpd_interval([-2, -1, 0, 1, 2], 0.6) == (-2.0, 0.0)

    def test_skewed_sample(self):
        assert hpd_interval([0, 1, 2, 3, 10], 0.6) == (0.0, 2.0)

    def test_constant(self):
        assert hpd_interval([3.5] * 7, 0.9) == (3.5, 3.5)

    def test_order_free(self):
        assert hpd_interval([10, 3, 0, 2, 1], 0.6) == (0.0, 2.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            hpd_interval([], 0.9)

    @settings(max_examples=200, deadline=None)
    @given(
        x=st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=200),
        level=st.floats(0.05, 0.99),
    )
    def test_never_wider_than_equal_tailed(self, x, level):
        lo, hi = hpd_interval(x, level)
        elo, ehi = equal_tailed_interval(x, level)
        assert hi - lo <= (ehi - elo) * (1 + 1e-12) + 1e-9

    @settings(max_examples=200, deadline=None)
    @given(x=st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=200), level=st.floats(0.05, 0.99))
    def test_contains_required_count(self, x, level):
        lo, hi = hpd_interval(x, level)
        inside = np.sum((np.array(x) >= lo) & (np.array(x) <= hi))
        assert inside >= np.ceil(round(level * len(x), 9))


class TestForecast:
    def test_noiseless_recursion(self):
        alpha = np.array([-1.0, 1.0])
        beta = np.array([0.3, 0.7])
        kappa = np.array([5.0, 4.0, 3.5])
        chain = fixed_chain(4, alpha, beta, kappa, theta1=-0.4)
        res = forecast(chain, TimeStructure.RANDOM_WALK_DRIFT, 5, np.random.default_rng(0))
        h = np.arange(1, 6)
        expected = alpha[:, None] + beta[:, None] * (3.5 - 0.4 * h)[None, :]
        np.testing.assert_allclose(res.mean, expected, atol=1e-12)
        np.testing.assert_allclose(res.hpd_hi - res.hpd_lo, 0.0, atol=1e-12)

    def test_trend_enters_only_when_selected(self):
        chain = fixed_chain(3, [0.0, 0.0], [0.5, 0.5], [0.0, 0.0], theta1=0.0, theta2=0.1, z=1)
        res = forecast(chain, TimeStructure.DRIFT_PLUS_TREND, 2, np.random.default_rng(0))
        # t continues the fitted index: 3 then 4
        np.testing.assert_allclose(res.kappa_draws[0], [0.3, 0.7], atol=1e-12)
        with pytest.raises(NoConsistentDrawsError):
            forecast(chain, TimeStructure.RANDOM_WALK_DRIFT, 2, np.random.default_rng(0))

    def test_two_step_random_walk_moments(self):
        n = 1_000_000
        chain = fixed_chain(n, [0.0, 0.0], [0.5, 0.5], [1.0, 2.0], theta1=0.3, sigma2_omega=0.5, sigma2_eps=0.1)
        res = forecast(chain, TimeStructure.RANDOM_WALK_DRIFT, 2, np.random.default_rng(1))
        k2 = res.kappa_draws[:, 1]
        var = 2 * 0.5
        assert abs(k2.mean() - 2.6) < 3 * np.sqrt(var / n)
        assert abs(k2.var() - var) < 3 * var * np.sqrt(2 / n)

    def test_uncertainty_grows_with_horizon(self):
        rng = np.random.default_rng(2)
        n = 20_000
        chain = fixed_chain(n, [0.2, -0.2], [0.4, 0.6], [1.0, 0.5, 0.2], theta1=-0.3, sigma2_omega=0.05, sigma2_eps=0.01)
        chain.scalars["theta1"] = rng.normal(-0.3, 0.05, n)
        res = forecast(chain, TimeStructure.RANDOM_WALK_DRIFT, 12, np.random.default_rng(3))
        v = res.log_mu_draws.var(axis=0)
        assert np.all(np.diff(v, axis=1) > -3 * v[:, 1:] * np.sqrt(2 / n))

    def test_bad_horizon(self):
        chain = fixed_chain(2, [0.0, 0.0], [0.5, 0.5], [1.0, 2.0])
        with pytest.raises(ValueError):
            forecast(chain, TimeStructure.RANDOM_WALK_DRIFT, 0, np.random.default_rng(0))

    def test_year_labels(self):
        assert future_year_labels((1995, 2016), 23)[-1] == 2039
        assert future_year_labels(("a", "b"), 2) == ("t3", "t4")

    def test_written_table(self, tmp_path):
        chain = fixed_chain(5, [0.0, 0.0], [0.5, 0.5], [1.0, 2.0], sigma2_eps=0.01, sigma2_omega=0.01)
        res = forecast(chain, TimeStructure.RANDOM_WALK_DRIFT, 3, np.random.default_rng(0))
        path = tmp_path / "f.csv"
        write_forecast(res, path)
        rows = list(csv.DictReader(path.open()))
        assert len(rows) == 6
        assert list(rows[0]) == ["age", "year", "pred_mean_logmu", "hpd_lo", "hpd_hi"]
        assert rows[0]["year"] == "1997"
