"""Forward filtering / backward sampling of the time index kappa.

Only the scalar kappa component of the state is carried.  The intercept and
time-covariate components of the textbook three-vector state are
deterministic, so they are folded into the transition mean
``theta1 + theta2 * t``.  Years with every cell observed use the batch
update; years with gaps are processed one age at a time, skipping the
missing ages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import MortalityDataset
from .model import Hyperparams, NumericalError, ParamState


@dataclass
class FilterMoments:
    """Filtered mean and variance of kappa; index 0 holds the kappa0 prior."""

    mean: np.ndarray
    var: np.ndarray

    @property
    def n_years(self) -> int:
        return self.mean.size - 1


def predict(mean_prev: float, var_prev: float, state: ParamState, t: int):
    return mean_prev + state.theta1 + state.theta2 * t, var_prev + state.sigma2_omega


def filter_year_complete(mean_prev: float, var_prev: float, y: np.ndarray, state: ParamState, t: int):
    """Condition kappa_t on all M log rates of year ``t`` (1-based).

    Uses the rank-one inverse of ``sigma2_eps I + R beta beta^T`` so the
    update is O(M).
    """
    m_pred, R = predict(mean_prev, var_prev, state, t)
    beta = state.beta
    s2 = state.sigma2_eps
    bb = float(beta @ beta)
    denom = s2 + R * bb
    if denom <= 0:
        raise NumericalError(f"degenerate complete-year update at t={t}")
    innovation = y - state.alpha - beta * m_pred
    gain = R * beta / denom
    mean = m_pred + float(gain @ innovation)
    var = R * s2 / denom
    return mean, var


def filter_year_sequential(
    mean_prev: float,
    var_prev: float,
    y: np.ndarray,
    mask_row: np.ndarray,
    state: ParamState,
    t: int,
    order=None,
):
    """Absorb the observed log rates of year ``t`` one age at a time.

    Missing ages contribute zero gain and leave the moments unchanged.
    ``order`` permits a different age scan; the default is ascending.
    """
    mean, var = predict(mean_prev, var_prev, state, t)
    s2 = state.sigma2_eps
    ages = range(len(mask_row)) if order is None else order
    for x in ages:
        if not mask_row[x]:
            continue
        b = state.beta[x]
        e = y[x] - state.alpha[x] - b * mean
        denom = b * b * var + s2
        if denom <= 0:
            raise NumericalError(f"degenerate sequential update at t={t}, age index {x}")
        k = b * var / denom
        mean = mean + k * e
        var = (1.0 - k * b) * var
    return mean, var


def forward_filter(state: ParamState, ds: MortalityDataset, hp: Hyperparams) -> FilterMoments:
    N = ds.n_years
    mean = np.empty(N + 1)
    var = np.empty(N + 1)
    mean[0], var[0] = hp.mu_kappa0, hp.sigma2_kappa0
    complete = ds.mask.all(axis=0)
    for t in range(1, N + 1):
        y = state.log_mu[:, t - 1]
        if complete[t - 1]:
            mean[t], var[t] = filter_year_complete(mean[t - 1], var[t - 1], y, state, t)
        else:
            mean[t], var[t] = filter_year_sequential(mean[t - 1], var[t - 1], y, ds.mask[:, t - 1], state, t)
    return FilterMoments(mean=mean, var=var)


def backward_step(mean_t: float, var_t: float, kappa_next: float, state: ParamState, t: int):
    """Moments of kappa_t given filtered moments at t and the drawn kappa_{t+1}."""
    drift = state.theta1 + state.theta2 * (t + 1)
    denom = var_t + state.sigma2_omega
    if denom <= 0:
        raise NumericalError(f"degenerate backward step at t={t}")
    gain = var_t / denom
    return mean_t + gain * (kappa_next - mean_t - drift), var_t - gain * var_t


def backward_sample(moments: FilterMoments, state: ParamState, rng: np.random.Generator):
    """Draw (kappa_1..kappa_N) and kappa_0 jointly from their conditional."""
    N = moments.n_years
    path = np.empty(N + 1)
    path[N] = moments.mean[N] + np.sqrt(max(moments.var[N], 0.0)) * rng.standard_normal()
    for t in range(N - 1, -1, -1):
        m, v = backward_step(moments.mean[t], moments.var[t], path[t + 1], state, t)
        path[t] = m + np.sqrt(max(v, 0.0)) * rng.standard_normal()
    return path[1:], float(path[0])


def update_kappa(state: ParamState, ds: MortalityDataset, hp: Hyperparams, rng: np.random.Generator):
    moments = forward_filter(state, ds, hp)
    state.kappa, state.kappa0 = backward_sample(moments, state, rng)
    return state
