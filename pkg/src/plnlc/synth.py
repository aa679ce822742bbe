"""Synthetic age-by-year tables drawn from the model itself."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import MortalityDataset
from .sampler import fmt


class PatternError(ValueError):
    pass


@dataclass
class Truth:
    alpha: np.ndarray
    beta: np.ndarray
    kappa: np.ndarray  # includes any held-out future years
    kappa0: float
    theta1: float
    theta2: float
    sigma2_eps: float
    sigma2_omega: float
    log_mu: np.ndarray  # M x (N + n_future)
    n_years: int  # fitted years

    @property
    def future_log_mu(self) -> np.ndarray:
        return self.log_mu[:, self.n_years :]


def age_profile(n_ages: int):
    """Plausible log rates and loadings over ages 0..95."""
    a = np.linspace(0.0, 95.0, n_ages)
    log_rate = np.log(4e-3 * np.exp(-0.7 * a) + 2e-4 + 2.5e-5 * np.exp(0.095 * a))
    b = 1.6 - 1.2 * a / 95.0
    return a, log_rate, b / b.sum()


def census_years(n_years: int) -> np.ndarray:
    """Every fifth year from the first is fully observed."""
    return np.arange(n_years) % 5 == 0


def _parse_ranges(text: str, upper: int) -> np.ndarray:
    sel = np.zeros(upper, dtype=bool)
    for part in text.split(","):
        m = re.fullmatch(r"\s*(\d+)\s*(?:-\s*(\d+))?\s*", part)
        if not m:
            raise PatternError(f"bad range {part!r}")
        lo = int(m.group(1))
        hi = int(m.group(2) or lo)
        if not 1 <= lo <= hi <= upper:
            raise PatternError(f"range {part.strip()} outside 1..{upper}")
        sel[lo - 1 : hi] = True
    return sel


def missing_mask(pattern: str, n_ages: int, n_years: int, rng: np.random.Generator) -> np.ndarray:
    """Observedness mask for a pattern spec.

    ``none``
        everything observed.
    ``sporadic P``
        cells outside the census years go missing independently so that
        the overall missing fraction is P in expectation.
    ``block``
        census years complete; elsewhere the youngest 12% and oldest 25%
        of ages are missing.
    ``block rows=A-B,... cols=C-D,...``
        the listed (1-based, inclusive) age rows x year columns are missing.
    """
    text = pattern.strip().lower()
    mask = np.ones((n_ages, n_years), dtype=bool)
    census = census_years(n_years)
    if text in ("", "none"):
        return mask
    m = re.fullmatch(r"sporadic[\s:=]+([0-9.eE+-]+)", text)
    if m:
        p = float(m.group(1))
        share = (~census).sum() / n_years
        if not 0.0 <= p <= share:
            raise PatternError(f"sporadic fraction must lie in [0, {share:.3f}]")
        q = p / share if share else 0.0
        mask[:, ~census] = rng.random((n_ages, int((~census).sum()))) >= q
        return mask
    if text == "block":
        young = max(1, int(round(0.12 * n_ages)))
        old = max(1, int(round(0.25 * n_ages)))
        rows = np.zeros(n_ages, dtype=bool)
        rows[:young] = True
        rows[n_ages - old :] = True
        mask[np.ix_(rows, ~census)] = False
        return mask
    m = re.fullmatch(r"block\s+rows\s*=\s*([\d,\s-]+?)\s+cols\s*=\s*([\d,\s-]+)", text)
    if m:
        rows = _parse_ranges(m.group(1), n_ages)
        cols = _parse_ranges(m.group(2), n_years)
        mask[np.ix_(rows, cols)] = False
        return mask
    raise PatternError(f"unknown missingness pattern {pattern!r}")


def simulate(
    n_ages: int,
    n_years: int,
    *,
    theta1: Optional[float] = None,
    theta2: float = 0.0,
    sigma2_eps: float = 0.01,
    sigma2_omega: Optional[float] = None,
    exposure: float = 1e5,
    missing: str = "none",
    n_future: int = 0,
    first_year: int = 1,
    seed=0,
):
    """Draw a dataset (and held-out future log rates) from the model.

    Drift and random-walk variance default to about 1.5% and 1% per age
    per year, i.e. they scale with the number of ages.
    """
    rng = np.random.default_rng(seed)
    if theta1 is None:
        theta1 = -0.015 * n_ages
    if sigma2_omega is None:
        sigma2_omega = (0.01 * n_ages) ** 2
    ages, log_rate, beta = age_profile(n_ages)
    level = log_rate.sum()
    alpha = log_rate - beta * level
    alpha[-1] = -alpha[:-1].sum()
    beta[-1] = 1.0 - beta[:-1].sum()

    total = n_years + n_future
    t = np.arange(1, total + 1)
    kappa0 = float(level)
    kappa = kappa0 + np.cumsum(theta1 + theta2 * t + np.sqrt(sigma2_omega) * rng.standard_normal(total))
    log_mu = alpha[:, None] + beta[:, None] * kappa[None, :] + np.sqrt(sigma2_eps) * rng.standard_normal(
        (n_ages, total)
    )
    E = np.full((n_ages, n_years), float(exposure))
    D = np.minimum(rng.poisson(E * np.exp(log_mu[:, :n_years])), E).astype(float)
    mask = missing_mask(missing, n_ages, n_years, rng)
    labels = tuple(int(round(a)) for a in ages)
    if len(set(labels)) < n_ages:
        # finer than one year of age: fall back to plain indices
        labels = tuple(range(n_ages))
    ds = MortalityDataset(
        deaths=np.where(mask, D, np.nan),
        exposures=np.where(mask, E, np.nan),
        mask=mask,
        age_labels=labels,
        year_labels=tuple(range(first_year, first_year + n_years)),
    )
    truth = Truth(
        alpha=alpha,
        beta=beta,
        kappa=kappa,
        kappa0=kappa0,
        theta1=float(theta1),
        theta2=float(theta2),
        sigma2_eps=float(sigma2_eps),
        sigma2_omega=float(sigma2_omega),
        log_mu=log_mu,
        n_years=n_years,
    )
    return ds, truth


def write_truth(truth: Truth, ds: MortalityDataset, path) -> None:
    """Long-format ``parameter,age,year,value`` table of the generating values."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "age", "year", "value"])
        for i, age in enumerate(ds.age_labels):
            w.writerow(["alpha", age, "", fmt(truth.alpha[i])])
        for i, age in enumerate(ds.age_labels):
            w.writerow(["beta", age, "", fmt(truth.beta[i])])
        for j, year in enumerate(ds.year_labels):
            w.writerow(["kappa", "", year, fmt(truth.kappa[j])])
        for name in ("kappa0", "theta1", "theta2", "sigma2_eps", "sigma2_omega"):
            w.writerow([name, "", "", fmt(getattr(truth, name))])
        for i, age in enumerate(ds.age_labels):
            for j, year in enumerate(ds.year_labels):
                w.writerow(["log_mu", age, year, fmt(truth.log_mu[i, j])])
