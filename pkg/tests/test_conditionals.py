import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oracles import MaskOnly, alpha_beta_mode_bruteforce, make_dataset, make_state, spike_ratio_quadrature
from plnlc.conditionals import (
    ProposalTuner,
    alpha_beta_posterior,
    log_acceptance_ratio,
    spike_probability,
    theta1_conditional,
    theta2_slab_conditional,
    tune_proposals,
    update_alpha_beta,
    update_log_mu,
    update_sigma2_eps,
    update_sigma2_omega,
    update_spike,
    update_theta1,
    update_zeta,
)
from plnlc.model import Hyperparams, constrained_prior


def hp_for(M, **kw):
    return Hyperparams.default(M, mu_kappa0=0.0, sigma2_kappa0=1.0, **kw)


class TestLogMuStep:
    def test_identical_proposal_accepted(self):
        assert log_acceptance_ratio(-2.0, -2.0, 3.0, 10.0, -1.5, 0.3) == 0.0

    def test_exposure_penalty_without_deaths(self):
        assert log_acceptance_ratio(-4.0, -5.0, 0.0, 1e6, -4.5, 1.0) < 0.0

    def test_direct_density_ratio(self):
        def dens(lm):
            return stats.poisson.pmf(3, 10 * np.exp(lm)) * stats.norm.pdf(lm, -1.0, np.sqrt(0.25))

        phi = np.exp(log_acceptance_ratio(-0.8, -1.0, 3.0, 10.0, -1.0, 0.25))
        assert phi == pytest.approx(dens(-0.8) / dens(-1.0), abs=1e-12, rel=1e-12)

    def test_masked_cells_untouched(self):
        M, N = 3, 3
        mask = np.ones((M, N), bool)
        mask[0, 0] = False
        ds = make_dataset(M, N, mask=mask)
        state = make_state(M, N)
        before = state.log_mu.copy()
        tuner = ProposalTuner.initial((M, N), start=0.5)
        rng = np.random.default_rng(0)
        for _ in range(50):
            update_log_mu(state, ds, tuner, rng)
        assert state.log_mu[0, 0] == before[0, 0]
        assert tuner.attempt_counts[0, 0] == 0
        assert (state.log_mu[mask] != before[mask]).all()


class TestTuner:
    def _cycle(self, tuner, rate):
        tuner.attempt_counts[:] = 100
        tuner.accept_counts[:] = int(rate * 100)
        tune_proposals(tuner)

    def test_doubles_three_times(self):
        tuner = ProposalTuner.initial((1, 1))
        for _ in range(3):
            self._cycle(tuner, 0.6)
        assert tuner.sigma2_prop[0, 0] == pytest.approx(0.08)

    def test_in_band_unchanged_and_halving(self):
        tuner = ProposalTuner.initial((1, 2))
        tuner.attempt_counts[:] = 100
        tuner.accept_counts[:] = [30, 10]
        tune_proposals(tuner)
        np.testing.assert_allclose(tuner.sigma2_prop, [[0.01, 0.005]])
        assert (tuner.attempt_counts == 0).all()

    def test_stops_after_twenty_cycles(self):
        tuner = ProposalTuner.initial((1, 1))
        for _ in range(20):
            assert not tuner.done
            self._cycle(tuner, 0.9)
        assert tuner.done
        # the final cycle measures only, so the stored rate belongs to the stored variance
        assert tuner.sigma2_prop[0, 0] == pytest.approx(0.01 * 2**19)
        assert tuner.last_rates[0, 0] == pytest.approx(0.9)


class TestAlphaBeta:
    def test_no_data_gives_prior(self):
        M, N = 3, 4
        state = make_state(M, N)
        hidden = MaskOnly(np.zeros((M, N), bool))
        prior = constrained_prior(hp_for(M), state.sigma2_alpha, state.sigma2_beta)
        precision, rhs = alpha_beta_posterior(state, hidden, prior)
        np.testing.assert_allclose(precision, prior.precision, atol=1e-12)
        np.testing.assert_allclose(np.linalg.solve(precision, rhs), prior.mean, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("shape", [(2, 2), (3, 4), (5, 3)])
    def test_mean_matches_bruteforce(self, seed, shape):
        M, N = shape
        rng = np.random.default_rng(seed)
        state = make_state(M, N, rng=rng)
        state.sigma2_eps = 0.37  # deliberately not 1
        mask = rng.random((M, N)) < 0.8
        mask[:, 0] = True
        ds = make_dataset(M, N, mask=mask)
        prior = constrained_prior(hp_for(M), state.sigma2_alpha, state.sigma2_beta)
        precision, rhs = alpha_beta_posterior(state, ds, prior)
        mean = np.linalg.solve(precision, rhs)
        oracle = alpha_beta_mode_bruteforce(state, mask, prior.mean, prior.cov)
        np.testing.assert_allclose(mean, oracle, atol=1e-8)

    def test_draws_satisfy_constraints(self):
        M, N = 4, 5
        state = make_state(M, N)
        ds = make_dataset(M, N)
        prior = constrained_prior(hp_for(M), 1.0, 1.0)
        rng = np.random.default_rng(1)
        for _ in range(100):
            update_alpha_beta(state, ds, prior, rng)
            assert abs(state.alpha.sum()) < 1e-10
            assert abs(state.beta.sum() - 1) < 1e-10


class TestScales:
    def test_sigma2_omega_example(self):
        state = make_state(2, 2, kappa=np.array([1.0, 2.0]), kappa0=0.0, theta1=0.0)
        rng = np.random.default_rng(0)
        draws = np.empty(20_000)
        for i in range(draws.size):
            draws[i] = update_sigma2_omega(state, rng).sigma2_omega
        assert stats.kstest(draws, stats.invgamma(1, scale=1).cdf).pvalue > 0.01

    def test_zeta_from_prior_under_spike(self):
        state = make_state(2, 3, z=0, theta2=0.0)
        rng = np.random.default_rng(1)
        draws = np.array([update_zeta(state, hp_for(2), rng).zeta for _ in range(20_000)])
        assert stats.kstest(draws, stats.invgamma(0.1, scale=0.1).cdf).pvalue > 0.01

    def test_zero_residuals_flagged(self, caplog):
        M, N = 2, 3
        state = make_state(M, N)
        state.log_mu = state.fitted.copy()
        with caplog.at_level(logging.WARNING):
            update_sigma2_eps(state, make_dataset(M, N), np.random.default_rng(0))
        assert "zero sum of squares" in caplog.text
        assert state.sigma2_eps > 0


class TestTheta1:
    def test_closed_loop_mean_zero(self):
        state = make_state(2, 3, kappa=np.array([1.0, -1.0, 0.0]), kappa0=0.0)
        assert theta1_conditional(state)[0] == 0.0

    def test_four_years(self):
        state = make_state(2, 4, kappa=np.array([1.0, 3.0, 5.0, 8.0]), kappa0=0.0, sigma2_omega=1.0)
        assert theta1_conditional(state) == (2.0, 0.25)

    def test_matches_grid_normalization(self):
        state = make_state(2, 5, theta2=0.04, z=1, kappa0=0.3)
        grid = np.linspace(-6, 6, 200_001)
        t = np.arange(1, 6)
        inc = np.diff(np.concatenate([[state.kappa0], state.kappa]))
        logp = stats.norm.logpdf(
            inc[None, :] - grid[:, None] - state.theta2 * t[None, :], 0, np.sqrt(state.sigma2_omega)
        ).sum(axis=1)
        w = np.exp(logp - logp.max())
        w /= w.sum()
        mean, var = theta1_conditional(state)
        q = stats.norm.pdf(grid, mean, np.sqrt(var))
        q /= q.sum()
        assert 0.5 * np.abs(w - q).sum() < 1e-4

    def test_draw_distribution(self):
        state = make_state(2, 4, kappa=np.array([1.0, 3.0, 5.0, 8.0]), kappa0=0.0, sigma2_omega=1.0)
        rng = np.random.default_rng(3)
        draws = np.array([update_theta1(state, rng).theta1 for _ in range(20_000)])
        assert stats.kstest(draws, stats.norm(2.0, 0.5).cdf).pvalue > 0.01


class TestSpike:
    def test_prior_excludes_slab(self):
        state = make_state(2, 4, z=1, theta2=0.5)
        rng = np.random.default_rng(0)
        for _ in range(100):
            update_spike(state, hp_for(2, p0=0.0), rng)
            assert state.z == 0 and state.theta2 == 0.0

    def test_prior_excludes_spike(self):
        assert spike_probability(make_state(2, 4), 1.0) == 1.0

    def test_worked_example(self):
        state = make_state(2, 3, kappa=np.array([1.0, 2.0, 3.0]), kappa0=0.0, theta1=1.0, zeta=1.0, sigma2_omega=1.0)
        expected = 1 - 0.5 / (0.5 + 0.5 * np.sqrt(1 / 15))
        assert spike_probability(state, 0.5) == pytest.approx(expected, abs=1e-15)
        ratio = spike_ratio_quadrature(np.zeros(3), 1.0, 1.0)
        assert spike_probability(state, 0.5) == pytest.approx(ratio / (1 + ratio), abs=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), N=st.integers(2, 25), p0=st.floats(0.05, 0.95))
    def test_matches_quadrature(self, seed, N, p0):
        rng = np.random.default_rng(seed)
        state = make_state(2, N, rng=rng)
        state.kappa = state.kappa0 + np.cumsum(state.theta1 + rng.normal(0.02, 0.3, N) * np.arange(1, N + 1) ** 0.2)
        inc = np.diff(np.concatenate([[state.kappa0], state.kappa]))
        ratio = spike_ratio_quadrature(inc - state.theta1, state.sigma2_omega, state.zeta)
        expected = p0 * ratio / (p0 * ratio + 1 - p0)
        assert spike_probability(state, p0) == pytest.approx(expected, abs=1e-6)

    def test_extreme_evidence_stays_finite(self):
        state = make_state(2, 30, sigma2_omega=1e-6, zeta=1.0)
        state.kappa = np.cumsum(state.theta1 + 0.5 * np.arange(1, 31))
        assert spike_probability(state, 0.5) == 1.0
        state.kappa = np.cumsum(np.full(30, state.theta1))
        assert 0.0 <= spike_probability(state, 0.5) < 1e-3

    def test_slab_draws(self):
        state = make_state(2, 6, zeta=0.5, sigma2_omega=0.2)
        state.kappa = np.cumsum(state.theta1 + 0.3 * np.arange(1, 7))
        hp = hp_for(2, p0=1.0)
        mean, var = theta2_slab_conditional(state)
        rng = np.random.default_rng(4)
        draws = np.array([update_spike(state, hp, rng).theta2 for _ in range(20_000)])
        assert stats.kstest(draws, stats.norm(mean, np.sqrt(var)).cdf).pvalue > 0.01


def test_overdispersion_identity():
    # D | mu ~ Poisson(E mu), log mu ~ N(m, s2): Var D = E[D] (1 + E[D] (e^{s2} - 1))
    rng = np.random.default_rng(12)
    E, m, s2 = 50.0, np.log(0.1), 0.2
    n = 1_000_000
    D = rng.poisson(E * np.exp(m + np.sqrt(s2) * rng.standard_normal(n)))
    ed = E * np.exp(m + s2 / 2)
    var = ed * (1 + ed * (np.exp(s2) - 1))
    assert D.var() > D.mean()
    assert abs(D.mean() - ed) < 3 * np.sqrt(var / n)
    # SE of a sample variance from the fourth central moment
    c = D - D.mean()
    se = np.sqrt(((c**4).mean() - D.var() ** 2) / n)
    assert abs(D.var() - var) < 3 * se
