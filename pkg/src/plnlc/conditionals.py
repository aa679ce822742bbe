"""Gibbs and Metropolis updates for every parameter except kappa."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .dataset import MortalityDataset
from .model import (
    ConstrainedPrior,
    Hyperparams,
    NumericalError,
    ParamState,
    complete_constrained,
    constrained_prior,
)

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12


def make_rng(seed) -> np.random.Generator:
    """PCG64 stream; identical draws for identical seeds on every platform."""
    return np.random.Generator(np.random.PCG64(seed))


def draw_invgamma(rng: np.random.Generator, shape: float, rate: float) -> float:
    return rate / rng.standard_gamma(shape)


@dataclass
class ProposalTuner:
    """Per-cell random-walk variances for the log-rate Metropolis step.

    Acceptance is counted over cycles of ``cycle_length`` sweeps.  At the end
    of each of the first ``max_cycles - 1`` cycles a cell's variance is
    doubled if its acceptance rate exceeded 0.5 and halved if it fell below
    0.15.  The last cycle only measures, so ``last_rates`` always belongs to
    the variances in ``sigma2_prop``.
    """

    sigma2_prop: np.ndarray
    cycle_length: int = 100
    max_cycles: int = 20
    lower: float = 0.15
    upper: float = 0.5
    cycles_done: int = 0
    accept_counts: np.ndarray = field(default=None)
    attempt_counts: np.ndarray = field(default=None)
    last_rates: np.ndarray = field(default=None)

    def __post_init__(self):
        self.sigma2_prop = np.array(self.sigma2_prop, dtype=float)
        if np.any(~(self.sigma2_prop > 0)):
            raise ValueError("proposal variances must be positive")
        if self.accept_counts is None:
            self.accept_counts = np.zeros(self.sigma2_prop.shape, dtype=np.int64)
        if self.attempt_counts is None:
            self.attempt_counts = np.zeros(self.sigma2_prop.shape, dtype=np.int64)
        if self.last_rates is None:
            self.last_rates = np.full(self.sigma2_prop.shape, np.nan)

    @classmethod
    def initial(cls, shape, start: float = 0.01, **kw) -> "ProposalTuner":
        return cls(sigma2_prop=np.full(shape, start), **kw)

    @property
    def done(self) -> bool:
        return self.cycles_done >= self.max_cycles

    def rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.attempt_counts > 0, self.accept_counts / self.attempt_counts, np.nan)

    def reset_counts(self) -> None:
        self.accept_counts[:] = 0
        self.attempt_counts[:] = 0


def tune_proposals(tuner: ProposalTuner) -> ProposalTuner:
    """Close one tuning cycle: adjust variances outside the target band."""
    if tuner.done:
        return tuner
    rates = tuner.rates()
    tuner.last_rates = rates
    tuner.cycles_done += 1
    if not tuner.done:
        seen = tuner.attempt_counts > 0
        tuner.sigma2_prop[seen & (rates > tuner.upper)] *= 2.0
        tuner.sigma2_prop[seen & (rates < tuner.lower)] *= 0.5
    tuner.reset_counts()
    return tuner


def log_mu_kernel(log_mu, deaths, exposure, mean, sigma2_eps):
    """Log of the unnormalized full conditional of one log rate."""
    return deaths * log_mu - exposure * np.exp(log_mu) - (log_mu - mean) ** 2 / (2.0 * sigma2_eps)


def log_acceptance_ratio(proposed, current, deaths, exposure, mean, sigma2_eps):
    """log phi for a symmetric random-walk proposal (before the min with 0)."""
    step = proposed - current
    return (
        deaths * step
        - exposure * (np.exp(proposed) - np.exp(current))
        - step * (proposed + current - 2.0 * mean) / (2.0 * sigma2_eps)
    )


def update_log_mu(state: ParamState, ds: MortalityDataset, tuner: ProposalTuner, rng: np.random.Generator):
    """One Metropolis step for every observed log rate, in place.

    Cells are conditionally independent given alpha, beta, kappa and
    sigma2_eps, so all of them move in one vectorized step.  Unobserved
    cells are left untouched.
    """
    shape = state.log_mu.shape
    current = state.log_mu
    proposed = current + np.sqrt(tuner.sigma2_prop) * rng.standard_normal(shape)
    log_u = np.log(rng.random(shape))

    mask = ds.mask
    D = np.where(mask, ds.deaths, 0.0)
    E = np.where(mask, ds.exposures, 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        log_phi = log_acceptance_ratio(proposed, current, D, E, state.fitted, state.sigma2_eps)
    bad = mask & ~np.isfinite(log_phi)
    if np.any(bad):
        log.warning("non-finite acceptance ratio in %d cell(s); rejecting", int(bad.sum()))
    accept = mask & np.isfinite(log_phi) & (log_u < log_phi)

    state.log_mu = np.where(accept, proposed, current)
    tuner.accept_counts += accept
    tuner.attempt_counts += mask
    return state


def alpha_beta_posterior(state: ParamState, ds: MortalityDataset, prior: ConstrainedPrior):
    """Mean and precision of (alpha[:-1], beta[:-1]) given everything else."""
    mask = ds.mask.astype(float)
    y = np.where(ds.mask, state.log_mu, 0.0)
    k = state.kappa
    s2 = state.sigma2_eps
    M = mask.shape[0]
    m = M - 1

    n = mask.sum(axis=1)
    k1 = mask @ k
    k2 = mask @ (k * k)
    L = np.ones((m, m))
    A = np.diag(n[:m]) + n[-1] * L
    B = np.diag(k1[:m]) + k1[-1] * L
    C = np.diag(k2[:m]) + k2[-1] * L
    Sigma_d = np.block([[A, B], [B, C]]) / s2

    last = (k - y[-1]) * mask[-1]
    mu_d1 = (y[:m].sum(axis=1) + last.sum()) / s2
    mu_d2 = (y[:m] @ k + (k * last).sum()) / s2
    mu_d = np.concatenate([mu_d1, mu_d2])

    precision = Sigma_d + prior.precision
    rhs = mu_d + prior.precision @ prior.mean
    return precision, rhs


def update_alpha_beta(state: ParamState, ds: MortalityDataset, prior: ConstrainedPrior, rng: np.random.Generator):
    precision, rhs = alpha_beta_posterior(state, ds, prior)
    try:
        chol = linalg.cholesky(precision, lower=True)
    except linalg.LinAlgError:
        raise NumericalError(
            f"alpha/beta posterior precision is not positive definite "
            f"(sigma2_eps={state.sigma2_eps}, sigma2_alpha={state.sigma2_alpha}, "
            f"sigma2_beta={state.sigma2_beta})"
        ) from None
    mean = linalg.cho_solve((chol, True), rhs)
    draw = mean + linalg.solve_triangular(chol.T, rng.standard_normal(mean.size), lower=False)
    m = ds.n_ages - 1
    state.alpha, state.beta = complete_constrained(draw[:m], draw[m:])
    return state


def _quad_constrained(dev: np.ndarray) -> float:
    # dev^T (I - L/M)^{-1} dev with (I - L/M)^{-1} = I + J J^T
    return float(dev @ dev + dev.sum() ** 2)


def update_sigma2_alpha_beta(state: ParamState, hp: Hyperparams, prior_mean: np.ndarray, rng):
    """Draw sigma2_alpha then sigma2_beta.

    ``prior_mean`` is the constrained prior mean of (alpha[:-1], beta[:-1]);
    deviations are taken from it.
    """
    m = hp.n_ages - 1
    dev_a = state.alpha[:-1] - prior_mean[:m]
    dev_b = state.beta[:-1] - prior_mean[m:]
    state.sigma2_alpha = draw_invgamma(rng, hp.a_sa + m / 2.0, hp.b_sa + 0.5 * _quad_constrained(dev_a))
    state.sigma2_beta = draw_invgamma(rng, hp.a_sb + m / 2.0, hp.b_sb + 0.5 * _quad_constrained(dev_b))
    return state


def update_zeta(state: ParamState, hp: Hyperparams, rng):
    if state.z == 1:
        state.zeta = draw_invgamma(rng, hp.a_zeta + 0.5, hp.b_zeta + 0.5 * state.theta2**2)
    else:
        state.zeta = draw_invgamma(rng, hp.a_zeta, hp.b_zeta)
    return state


def _kappa_increments(state: ParamState) -> np.ndarray:
    prev = np.concatenate([[state.kappa0], state.kappa[:-1]])
    return state.kappa - prev


def _floored_invgamma(rng, shape, rate, name):
    if not np.isfinite(rate) or rate < 0:
        raise NumericalError(f"{name}: invalid inverse-gamma rate {rate}")
    if rate == 0.0:
        log.warning("%s: zero sum of squares, flooring at %g", name, VARIANCE_FLOOR)
        rng.standard_gamma(shape)
        return VARIANCE_FLOOR
    return max(draw_invgamma(rng, shape, rate), VARIANCE_FLOOR)


def update_sigma2_omega(state: ParamState, rng):
    N = state.kappa.size
    t = np.arange(1, N + 1)
    resid = _kappa_increments(state) - state.theta1 - state.theta2 * t
    state.sigma2_omega = _floored_invgamma(rng, N / 2.0, 0.5 * float(resid @ resid), "sigma2_omega")
    return state


def update_sigma2_eps(state: ParamState, ds: MortalityDataset, rng):
    resid = (state.log_mu - state.fitted)[ds.mask]
    state.sigma2_eps = _floored_invgamma(rng, resid.size / 2.0, 0.5 * float(resid @ resid), "sigma2_eps")
    return state


def update_scale_params(state: ParamState, ds: MortalityDataset, hp: Hyperparams, rng, prior_mean=None):
    """sigma2_alpha, sigma2_beta, zeta, sigma2_omega, sigma2_eps in that order."""
    if prior_mean is None:
        # the constrained prior mean does not depend on the variance scales
        prior_mean = constrained_prior(hp, 1.0, 1.0).mean
    update_sigma2_alpha_beta(state, hp, prior_mean, rng)
    update_zeta(state, hp, rng)
    update_sigma2_omega(state, rng)
    update_sigma2_eps(state, ds, rng)
    return state


def theta1_conditional(state: ParamState):
    """Mean and variance of theta1 given everything else."""
    N = state.kappa.size
    sum_t = N * (N + 1) / 2.0
    mean = (state.kappa[-1] - state.kappa0 - state.theta2 * sum_t) / N
    return mean, state.sigma2_omega / N


def update_theta1(state: ParamState, rng):
    mean, var = theta1_conditional(state)
    state.theta1 = mean + np.sqrt(var) * rng.standard_normal()
    return state


def _spike_stats(state: ParamState):
    N = state.kappa.size
    t = np.arange(1, N + 1)
    S = float(t @ (_kappa_increments(state) - state.theta1))
    sum_t2 = float(t @ t)
    return S, sum_t2


def spike_log_bayes_factor(state: ParamState) -> float:
    """log p(kappa | z=1) - log p(kappa | z=0), theta2 integrated out."""
    S, T2 = _spike_stats(state)
    s2, zeta = state.sigma2_omega, state.zeta
    denom = s2 + zeta * T2
    return 0.5 * (np.log(s2) - np.log(denom)) + S * S * zeta / (2.0 * s2 * denom)


def spike_probability(state: ParamState, p0: float) -> float:
    """Posterior probability that z = 1 (the slab), computed in log space."""
    if p0 <= 0.0:
        return 0.0
    if p0 >= 1.0:
        return 1.0
    log_slab = np.log(p0) + spike_log_bayes_factor(state)
    log_spike = np.log1p(-p0)
    p = float(np.exp(log_slab - np.logaddexp(log_slab, log_spike)))
    if np.isnan(p):
        raise NumericalError("spike probability is NaN")
    return p


def theta2_slab_conditional(state: ParamState):
    S, T2 = _spike_stats(state)
    denom = state.sigma2_omega + state.zeta * T2
    return state.zeta * S / denom, state.zeta * state.sigma2_omega / denom


def update_spike(state: ParamState, hp: Hyperparams, rng):
    """Draw z, then theta2 given z."""
    p = spike_probability(state, hp.p0)
    u = rng.random()
    state.z = int(u < p)
    if state.z:
        mean, var = theta2_slab_conditional(state)
        state.theta2 = mean + np.sqrt(var) * rng.standard_normal()
    else:
        state.theta2 = 0.0
    return state
