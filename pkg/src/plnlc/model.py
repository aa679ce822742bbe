"""Parameter containers, priors, and the joint density of the extended
Poisson log-normal Lee-Carter model.

Observation and state equations::

    D[x,t] | mu ~ Poisson(E[x,t] * mu[x,t])
    log mu[x,t] = alpha[x] + beta[x] * kappa[t] + eps,     eps ~ N(0, sigma2_eps)
    kappa[t] = kappa[t-1] + theta1 + theta2 * t + omega,   omega ~ N(0, sigma2_omega)

with sum(alpha) = 0 and sum(beta) = 1 built into the prior of
(alpha[:-1], beta[:-1]).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import special, stats

from .dataset import MortalityDataset


class NumericalError(RuntimeError):
    """A sampler state became non-finite or a matrix lost definiteness."""


@dataclass(frozen=True)
class Hyperparams:
    mu_alpha: np.ndarray
    mu_beta: np.ndarray
    mu_kappa0: float
    sigma2_kappa0: float
    a_sa: float = 0.01
    b_sa: float = 0.01
    a_sb: float = 0.01
    b_sb: float = 0.01
    a_zeta: float = 0.1
    b_zeta: float = 0.1
    p0: float = 0.5

    def __post_init__(self):
        mu_a = np.asarray(self.mu_alpha, dtype=float)
        mu_b = np.asarray(self.mu_beta, dtype=float)
        if mu_a.shape != mu_b.shape or mu_a.ndim != 1 or mu_a.size < 2:
            raise ValueError("mu_alpha and mu_beta must be equal-length vectors, M >= 2")
        object.__setattr__(self, "mu_alpha", mu_a)
        object.__setattr__(self, "mu_beta", mu_b)
        for name in ("a_sa", "b_sa", "a_sb", "b_sb", "a_zeta", "b_zeta", "sigma2_kappa0"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        if not np.isfinite(self.mu_kappa0):
            raise ValueError("mu_kappa0 must be finite")
        # p0 = 0 or 1 is allowed as a degenerate prior that pins z.
        if not 0.0 <= self.p0 <= 1.0:
            raise ValueError(f"p0 must lie in [0, 1], got {self.p0}")

    @property
    def n_ages(self) -> int:
        return self.mu_alpha.size

    @classmethod
    def default(cls, n_ages: int, mu_kappa0: float, sigma2_kappa0: float, **overrides) -> "Hyperparams":
        """Zero age intercept means and flat 1/M loading means."""
        return cls(
            mu_alpha=np.zeros(n_ages),
            mu_beta=np.full(n_ages, 1.0 / n_ages),
            mu_kappa0=float(mu_kappa0),
            sigma2_kappa0=float(sigma2_kappa0),
            **overrides,
        )

    def replace(self, **changes) -> "Hyperparams":
        return replace(self, **changes)


@dataclass
class ParamState:
    """One full state of the Markov chain; owned and mutated by one chain."""

    alpha: np.ndarray
    beta: np.ndarray
    kappa: np.ndarray
    kappa0: float
    log_mu: np.ndarray
    theta1: float
    theta2: float
    z: int
    zeta: float
    sigma2_alpha: float
    sigma2_beta: float
    sigma2_eps: float
    sigma2_omega: float

    SCALARS = (
        "kappa0",
        "theta1",
        "theta2",
        "z",
        "zeta",
        "sigma2_alpha",
        "sigma2_beta",
        "sigma2_eps",
        "sigma2_omega",
    )
    VARIANCES = ("zeta", "sigma2_alpha", "sigma2_beta", "sigma2_eps", "sigma2_omega")

    def copy(self) -> "ParamState":
        return ParamState(
            alpha=self.alpha.copy(),
            beta=self.beta.copy(),
            kappa=self.kappa.copy(),
            log_mu=self.log_mu.copy(),
            **{k: getattr(self, k) for k in self.SCALARS},
        )

    @property
    def fitted(self) -> np.ndarray:
        """alpha[x] + beta[x] * kappa[t] as an M x N grid."""
        return self.alpha[:, None] + self.beta[:, None] * self.kappa[None, :]

    def check(self, tol: float = 1e-10) -> None:
        """Raise NumericalError if any invariant fails."""
        for name in ("alpha", "beta", "kappa"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericalError(f"non-finite {name}")
        for name in ("kappa0", "theta1", "theta2"):
            if not np.isfinite(getattr(self, name)):
                raise NumericalError(f"non-finite {name}")
        for name in self.VARIANCES:
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise NumericalError(f"{name} must be positive and finite, got {v}")
        if abs(self.alpha.sum()) > tol:
            raise NumericalError(f"sum(alpha) = {self.alpha.sum():.3e}, expected 0")
        if abs(self.beta.sum() - 1.0) > tol:
            raise NumericalError(f"sum(beta) = {self.beta.sum():.15g}, expected 1")
        if self.z not in (0, 1):
            raise NumericalError(f"z must be 0 or 1, got {self.z}")
        if self.z == 0 and self.theta2 != 0.0:
            raise NumericalError("z = 0 requires theta2 = 0")


@dataclass(frozen=True)
class ConstrainedPrior:
    """Normal prior on (alpha[:-1], beta[:-1]) after conditioning on the constraints.

    ``precision`` is the inverse of ``cov``, kept because the block structure
    gives it in closed form.
    """

    mean: np.ndarray
    cov: np.ndarray
    precision: np.ndarray = field(repr=False)


def constrained_prior(hp: Hyperparams, sigma2_alpha: float, sigma2_beta: float) -> ConstrainedPrior:
    M = hp.n_ages
    m = M - 1
    J = np.ones(m)
    zero = np.zeros(m)

    mu1 = np.concatenate([hp.mu_alpha[:-1], hp.mu_beta[:-1]])
    mu2 = np.array([hp.mu_alpha.sum(), hp.mu_beta.sum()])
    a = np.array([0.0, 1.0])
    S1 = np.column_stack(
        [np.concatenate([sigma2_alpha * J, zero]), np.concatenate([zero, sigma2_beta * J])]
    )
    S2_inv = np.diag([1.0 / (M * sigma2_alpha), 1.0 / (M * sigma2_beta)])
    S3 = np.diag(np.concatenate([np.full(m, sigma2_alpha), np.full(m, sigma2_beta)]))

    mean = mu1 - S1 @ S2_inv @ (mu2 - a)
    cov = S3 - S1 @ S2_inv @ S1.T
    cov = 0.5 * (cov + cov.T)

    # (I - L/M)^{-1} = I + L with L = J J^T
    inv_block = np.eye(m) + np.ones((m, m))
    precision = np.zeros((2 * m, 2 * m))
    precision[:m, :m] = inv_block / sigma2_alpha
    precision[m:, m:] = inv_block / sigma2_beta
    return ConstrainedPrior(mean=mean, cov=cov, precision=precision)


def complete_constrained(free_alpha: np.ndarray, free_beta: np.ndarray):
    """Append the last coordinates so that sum(alpha)=0 and sum(beta)=1."""
    alpha = np.append(free_alpha, -free_alpha.sum())
    beta = np.append(free_beta, 1.0 - free_beta.sum())
    return alpha, beta


def _invgamma_logpdf(x, a, b):
    return a * np.log(b) - special.gammaln(a) - (a + 1) * np.log(x) - b / x


def log_density_terms(state: ParamState, ds: MortalityDataset, hp: Hyperparams) -> dict:
    """Individual log-density contributions; see :func:`log_joint_density`."""
    mask = ds.mask
    M, N = ds.shape
    lm = state.log_mu[mask]
    D = ds.deaths[mask]
    E = ds.exposures[mask]
    fitted = state.fitted[mask]

    terms = {}
    terms["poisson"] = float(np.sum(stats.poisson.logpmf(D, E * np.exp(lm))))
    terms["log_mu"] = float(np.sum(stats.norm.logpdf(lm, fitted, np.sqrt(state.sigma2_eps))))

    t = np.arange(1, N + 1)
    prev = np.concatenate([[state.kappa0], state.kappa[:-1]])
    resid = state.kappa - prev - state.theta1 - state.theta2 * t
    terms["kappa"] = float(np.sum(stats.norm.logpdf(resid, 0.0, np.sqrt(state.sigma2_omega))))
    terms["kappa0"] = float(stats.norm.logpdf(state.kappa0, hp.mu_kappa0, np.sqrt(hp.sigma2_kappa0)))

    prior = constrained_prior(hp, state.sigma2_alpha, state.sigma2_beta)
    free = np.concatenate([state.alpha[:-1], state.beta[:-1]])
    terms["alpha_beta"] = float(stats.multivariate_normal.logpdf(free, prior.mean, prior.cov))
    terms["sigma2_alpha"] = float(_invgamma_logpdf(state.sigma2_alpha, hp.a_sa, hp.b_sa))
    terms["sigma2_beta"] = float(_invgamma_logpdf(state.sigma2_beta, hp.a_sb, hp.b_sb))
    terms["zeta"] = float(_invgamma_logpdf(state.zeta, hp.a_zeta, hp.b_zeta))
    with np.errstate(divide="ignore"):
        terms["z"] = float(np.log(hp.p0) if state.z == 1 else np.log1p(-hp.p0))
    # The spike is a point mass, contributing nothing when z = 0.
    terms["theta2"] = float(stats.norm.logpdf(state.theta2, 0.0, np.sqrt(state.zeta))) if state.z else 0.0
    terms["theta1"] = 0.0
    terms["sigma2_eps"] = -float(np.log(state.sigma2_eps))
    terms["sigma2_omega"] = -float(np.log(state.sigma2_omega))
    return terms


def log_joint_density(state: ParamState, ds: MortalityDataset, hp: Hyperparams) -> float:
    """Unnormalized log posterior; masked cells contribute nothing."""
    total = sum(log_density_terms(state, ds, hp).values())
    if not np.isfinite(total):
        raise NumericalError(f"log joint density is not finite ({total})")
    return float(total)
