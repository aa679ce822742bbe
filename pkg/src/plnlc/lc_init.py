"""Classic Lee-Carter SVD fit, two-stage imputation, and chain start values."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import DatasetError, MortalityDataset
from .model import Hyperparams, NumericalError, ParamState, constrained_prior

log = logging.getLogger(__name__)


class DegenerateFitError(NumericalError):
    pass


class InitializationError(NumericalError):
    pass


@dataclass(frozen=True)
class LcFit:
    alpha: np.ndarray
    beta: np.ndarray
    kappa: np.ndarray
    residual_sd: float

    @property
    def fitted(self) -> np.ndarray:
        return self.alpha[:, None] + self.beta[:, None] * self.kappa[None, :]

    @property
    def drift(self) -> float:
        return float(self.kappa[-1] - self.kappa[0]) / (self.kappa.size - 1)


def transfer_constraint(alpha, beta, kappa, c):
    """(alpha, kappa) -> (alpha - c*beta, kappa + c); fitted rates unchanged when sum(beta)=1."""
    return alpha - c * beta, kappa + c


def linear_interpolate_impute(ds: MortalityDataset) -> MortalityDataset:
    """Fill missing deaths and exposures row by row by linear interpolation in time.

    Gaps before the first or after the last observed year take the nearest
    observed value.  Imputed deaths are rounded to integers.
    """
    mask = ds.mask
    if np.any(~mask.any(axis=1)):
        bad = [ds.age_labels[i] for i in np.flatnonzero(~mask.any(axis=1))]
        raise DatasetError(f"age rows with no observed cell cannot be interpolated: {bad}")
    if mask.all():
        return ds
    deaths = ds.deaths.copy()
    exposures = ds.exposures.copy()
    t = np.arange(ds.n_years, dtype=float)
    for x in range(ds.n_ages):
        obs = mask[x]
        if obs.all():
            continue
        gaps = ~obs
        deaths[x, gaps] = np.floor(np.interp(t[gaps], t[obs], deaths[x, obs]) + 0.5)
        exposures[x, gaps] = np.interp(t[gaps], t[obs], exposures[x, obs])
    return ds.with_values(deaths, exposures, mask=np.ones_like(mask), source_mask=ds.original_mask)


def empirical_log_rates(ds: MortalityDataset) -> np.ndarray:
    """log((D + 0.5) / E); finite for zero death counts."""
    return np.log((ds.deaths + 0.5) / ds.exposures)


def fit_lc_svd(log_rates: np.ndarray) -> LcFit:
    X = np.asarray(log_rates, dtype=float)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise ValueError("log rates must be a finite 2-d grid")
    alpha = X.mean(axis=1)
    U, s, Vt = np.linalg.svd(X - alpha[:, None], full_matrices=False)
    if s[0] <= 1e-12 * max(1.0, np.abs(X).max()):
        raise DegenerateFitError("centered log-rate matrix has no time variation")
    b = U[:, 0]
    k = s[0] * Vt[0]
    if b.sum() < 0:
        b, k = -b, -k
    scale = b.sum()
    if abs(scale) < 1e-12:
        raise DegenerateFitError("leading age loadings sum to zero; cannot normalize")
    beta = b / scale
    kappa = k * scale
    alpha, kappa = transfer_constraint(alpha, beta, kappa, alpha.sum())
    resid = X - (alpha[:, None] + beta[:, None] * kappa[None, :])
    return LcFit(alpha=alpha, beta=beta, kappa=kappa, residual_sd=float(np.sqrt(np.mean(resid**2))))


def svd_impute(ds: MortalityDataset, fit: LcFit) -> MortalityDataset:
    """Replace originally-missing deaths by round(E * exp(alpha + beta*kappa))."""
    if not ds.mask.all():
        raise DatasetError("svd_impute needs completed exposures (run linear_interpolate_impute first)")
    missing = ~ds.original_mask
    if not missing.any():
        return ds
    deaths = ds.deaths.copy()
    expected = np.exp(fit.fitted) * ds.exposures
    deaths[missing] = np.floor(np.minimum(expected, ds.exposures)[missing] + 0.5)
    return ds.with_values(deaths, ds.exposures, source_mask=ds.original_mask)


def two_stage_impute(ds: MortalityDataset):
    """Linear interpolation, then SVD refinement.  Returns (dataset, refit)."""
    linear = linear_interpolate_impute(ds)
    refined = svd_impute(linear, fit_lc_svd(empirical_log_rates(linear)))
    return refined, fit_lc_svd(empirical_log_rates(refined))


def kappa0_settings(fit: LcFit):
    """Prior mean and variance of kappa0 from an SVD kappa sequence."""
    steps = np.diff(fit.kappa)
    mu = float(fit.kappa[0] - fit.drift)
    var = float(np.var(steps, ddof=1)) if steps.size > 1 else float(steps[0] ** 2)
    return mu, max(var, 1e-8)


def default_hyperparams(ds: MortalityDataset, **overrides) -> Hyperparams:
    _, fit = two_stage_impute(ds)
    mu0, var0 = kappa0_settings(fit)
    kw = {"mu_kappa0": mu0, "sigma2_kappa0": var0}
    kw.update(overrides)
    return Hyperparams.default(ds.n_ages, **kw)


def state_from_fit(fit: LcFit, ds: MortalityDataset, hp: Hyperparams) -> ParamState:
    """Chain start at the SVD estimates."""
    M = ds.n_ages
    prior_mean = constrained_prior(hp, 1.0, 1.0).mean
    dev_a = fit.alpha[:-1] - prior_mean[: M - 1]
    dev_b = fit.beta[:-1] - prior_mean[M - 1 :]
    steps = np.diff(np.concatenate([[hp.mu_kappa0], fit.kappa]))
    log_mu = np.where(ds.mask, empirical_log_rates(ds), fit.fitted)
    return ParamState(
        alpha=fit.alpha.copy(),
        beta=fit.beta.copy(),
        kappa=fit.kappa.copy(),
        kappa0=float(hp.mu_kappa0),
        log_mu=log_mu,
        theta1=float(steps.mean()),
        theta2=0.0,
        z=0,
        zeta=hp.b_zeta / (hp.a_zeta + 1.0),
        sigma2_alpha=max(float(dev_a @ dev_a + dev_a.sum() ** 2) / (M - 1), 1e-6),
        sigma2_beta=max(float(dev_b @ dev_b + dev_b.sum() ** 2) / (M - 1), 1e-6),
        sigma2_eps=max(fit.residual_sd**2, 1e-6),
        sigma2_omega=max(float(np.var(steps)), 1e-6),
    )


def initial_values(ds: MortalityDataset, cfg, hp: Optional[Hyperparams] = None, rng=None) -> ParamState:
    """Start values for the main chain.

    1. linear interpolation of missing deaths and exposures,
    2. SVD fit and SVD-based re-imputation of the missing deaths,
    3. a pilot run of the full sampler on the completed table, started at
       the SVD estimates; its posterior means become the start values.
    """
    from .conditionals import make_rng
    from .sampler import posterior_mean_state, sample

    if hp is None:
        hp = default_hyperparams(ds)
    if rng is None:
        rng = make_rng(cfg.seed)
    completed, fit = two_stage_impute(ds)
    start = state_from_fit(fit, completed, hp)
    try:
        pilot = sample(
            completed,
            hp,
            start,
            n_iter=cfg.pilot_iter,
            n_burn=cfg.n_burn,
            tune_cycles=cfg.tune_cycles,
            tune_cycle_length=cfg.tune_cycle_length,
            rng=rng,
        )
    except NumericalError as exc:
        raise InitializationError(f"pilot chain diverged: {exc}") from exc
    state = posterior_mean_state(pilot)
    state.log_mu = np.where(ds.mask, state.log_mu, state.fitted)
    state.check()
    return state
