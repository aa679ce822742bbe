"""Posterior predictive projection of log mortality rates, and HPD intervals."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sampler import ChainStore, TimeStructure, fmt, structure_draws


def hpd_interval(sample, level: float = 0.95):
    """Shortest interval spanning ceil(level * n) consecutive order statistics.

    Ties go to the lowest window.
    """
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    n = x.size
    k = _window_size(n, level)
    widths = x[k - 1 :] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def _window_size(n: int, level: float) -> int:
    if n == 0:
        raise ValueError("empty sample")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    # round first so that e.g. 0.6 * 5 counts as exactly 3
    return max(1, math.ceil(round(level * n, 9)))


def equal_tailed_interval(sample, level: float = 0.95):
    """Central window of the same ceil(level * n) order statistics the HPD uses."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    k = _window_size(x.size, level)
    i = (x.size - k) // 2
    return float(x[i]), float(x[i + k - 1])


def future_year_labels(year_labels, horizon: int):
    last = year_labels[-1]
    if isinstance(last, (int, np.integer)):
        return tuple(int(last) + h for h in range(1, horizon + 1))
    n = len(year_labels)
    return tuple(f"t{n + h}" for h in range(1, horizon + 1))


@dataclass
class ForecastResult:
    horizon: int
    age_labels: tuple
    year_labels: tuple
    kappa_draws: np.ndarray  # (n_draws, H)
    log_mu_draws: np.ndarray  # (n_draws, M, H)
    mean: np.ndarray  # (M, H)
    hpd_lo: np.ndarray
    hpd_hi: np.ndarray
    level: float = 0.95


def forecast(chain: ChainStore, structure: TimeStructure, horizon: int, rng: np.random.Generator, level: float = 0.95):
    """One predictive path per retained draw, H years past the last fitted year.

    The trend term theta2 * t is applied only under the drift-plus-trend
    structure, with t continuing the fitted years' 1..N index.
    """
    if horizon <= 0:
        raise ValueError("forecast horizon must be positive")
    sub = structure_draws(chain, structure)
    n = len(sub)
    N = sub.n_years
    M = sub.alpha.shape[1]
    theta1 = sub.scalars["theta1"]
    theta2 = sub.scalars["theta2"] if structure is TimeStructure.DRIFT_PLUS_TREND else np.zeros(n)
    sd_omega = np.sqrt(sub.scalars["sigma2_omega"])
    sd_eps = np.sqrt(sub.scalars["sigma2_eps"])

    kappa = np.empty((n, horizon))
    log_mu = np.empty((n, M, horizon))
    k = sub.kappa[:, -1].copy()
    for h in range(horizon):
        t = N + h + 1
        k = k + theta1 + theta2 * t + sd_omega * rng.standard_normal(n)
        kappa[:, h] = k
        log_mu[:, :, h] = sub.alpha + sub.beta * k[:, None] + sd_eps[:, None] * rng.standard_normal((n, M))

    lo = np.empty((M, horizon))
    hi = np.empty((M, horizon))
    for x in range(M):
        for h in range(horizon):
            lo[x, h], hi[x, h] = hpd_interval(log_mu[:, x, h], level)
    return ForecastResult(
        horizon=horizon,
        age_labels=sub.age_labels,
        year_labels=future_year_labels(sub.year_labels, horizon),
        kappa_draws=kappa,
        log_mu_draws=log_mu,
        mean=log_mu.mean(axis=0),
        hpd_lo=lo,
        hpd_hi=hi,
        level=level,
    )


def write_forecast(result: ForecastResult, path, draws_path=None) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["age", "year", "pred_mean_logmu", "hpd_lo", "hpd_hi"])
        for x, age in enumerate(result.age_labels):
            for h, year in enumerate(result.year_labels):
                w.writerow([age, year, fmt(result.mean[x, h]), fmt(result.hpd_lo[x, h]), fmt(result.hpd_hi[x, h])])
    if draws_path is not None:
        with Path(draws_path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["draw", "age", "year", "logmu"])
            for d in range(result.log_mu_draws.shape[0]):
                for x, age in enumerate(result.age_labels):
                    for h, year in enumerate(result.year_labels):
                        w.writerow([d + 1, age, year, fmt(result.log_mu_draws[d, x, h])])
