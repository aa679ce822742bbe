"""Metropolis-within-Gibbs driver, chain storage, and time-structure selection."""

from __future__ import annotations

import csv
import enum
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import conditionals as cond
from .dataset import MortalityDataset
from .model import Hyperparams, NumericalError, ParamState, constrained_prior
from .state_space import backward_sample, forward_filter

log = logging.getLogger(__name__)

SCALAR_COLUMNS = ParamState.SCALARS


class TimeStructure(str, enum.Enum):
    RANDOM_WALK_DRIFT = "RandomWalkDrift"
    DRIFT_PLUS_TREND = "DriftPlusTrend"

    @property
    def z(self) -> int:
        return int(self is TimeStructure.DRIFT_PLUS_TREND)


@dataclass
class SamplerConfig:
    n_iter: int = 2000
    n_burn: int = 100
    tune_cycles: int = 20
    tune_cycle_length: int = 100
    pilot_iter: int = 500
    seed: int = 0
    thin: int = 1
    dump_filter_moments: bool = False

    def __post_init__(self):
        for name in ("n_iter", "tune_cycle_length", "pilot_iter", "thin"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("n_burn", "tune_cycles"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.n_iter % self.thin:
            raise ValueError("thin must divide n_iter")


@dataclass
class ChainStore:
    """Recorded (post burn-in, thinned) draws in columnar form."""

    alpha: np.ndarray
    beta: np.ndarray
    kappa: np.ndarray
    scalars: dict
    log_mu: Optional[np.ndarray] = None
    age_labels: tuple = ()
    year_labels: tuple = ()
    mask: Optional[np.ndarray] = None
    sigma2_prop: Optional[np.ndarray] = None
    tune_rates: Optional[np.ndarray] = None
    accept_rates: Optional[np.ndarray] = None
    filter_moments: Optional[list] = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.alpha.shape[0]

    @property
    def z_trace(self) -> np.ndarray:
        return self.scalars["z"]

    @property
    def n_years(self) -> int:
        return self.kappa.shape[1]

    def state(self, i: int) -> ParamState:
        kw = {k: self.scalars[k][i].item() for k in SCALAR_COLUMNS}
        kw["z"] = int(kw["z"])
        return ParamState(
            alpha=self.alpha[i].copy(),
            beta=self.beta[i].copy(),
            kappa=self.kappa[i].copy(),
            log_mu=None if self.log_mu is None else self.log_mu[i].copy(),
            **kw,
        )

    def subset(self, keep: np.ndarray) -> "ChainStore":
        return ChainStore(
            alpha=self.alpha[keep],
            beta=self.beta[keep],
            kappa=self.kappa[keep],
            scalars={k: v[keep] for k, v in self.scalars.items()},
            log_mu=None if self.log_mu is None else self.log_mu[keep],
            age_labels=self.age_labels,
            year_labels=self.year_labels,
            mask=self.mask,
            meta=dict(self.meta),
        )


def gibbs_sweep(
    state: ParamState,
    ds: MortalityDataset,
    hp: Hyperparams,
    tuner: cond.ProposalTuner,
    rng: np.random.Generator,
    prior_mean: np.ndarray,
):
    """One full scan in the fixed order

    log_mu, (alpha, beta), sigma2_alpha/beta, kappa, theta1, (z, theta2),
    zeta, sigma2_omega, sigma2_eps.

    Returns the filter moments of the kappa step.
    """
    cond.update_log_mu(state, ds, tuner, rng)
    prior = constrained_prior(hp, state.sigma2_alpha, state.sigma2_beta)
    cond.update_alpha_beta(state, ds, prior, rng)
    cond.update_sigma2_alpha_beta(state, hp, prior_mean, rng)
    moments = forward_filter(state, ds, hp)
    state.kappa, state.kappa0 = backward_sample(moments, state, rng)
    cond.update_theta1(state, rng)
    cond.update_spike(state, hp, rng)
    cond.update_zeta(state, hp, rng)
    cond.update_sigma2_omega(state, rng)
    cond.update_sigma2_eps(state, ds, rng)
    return moments


def _checked_sweep(it, state, ds, hp, tuner, rng, prior_mean):
    try:
        moments = gibbs_sweep(state, ds, hp, tuner, rng, prior_mean)
        state.check()
    except NumericalError as exc:
        raise NumericalError(f"iteration {it}: {exc}") from exc
    return moments


def sample(
    ds: MortalityDataset,
    hp: Hyperparams,
    init: ParamState,
    n_iter: int,
    n_burn: int = 100,
    tune_cycles: int = 20,
    tune_cycle_length: int = 100,
    thin: int = 1,
    rng: Optional[np.random.Generator] = None,
    dump_filter_moments: bool = False,
    tuner: Optional[cond.ProposalTuner] = None,
) -> ChainStore:
    """Tuning phase, burn-in, then ``n_iter`` recorded sweeps.

    Proposal variances are frozen once tuning ends.
    """
    if rng is None:
        rng = cond.make_rng(0)
    started = time.perf_counter()
    state = init.copy()
    state.check()
    M, N = ds.shape
    prior_mean = constrained_prior(hp, 1.0, 1.0).mean
    if tuner is None:
        tuner = cond.ProposalTuner.initial((M, N), 0.01, cycle_length=tune_cycle_length, max_cycles=tune_cycles)

    it = 0
    for _ in range(tune_cycles * tune_cycle_length):
        _checked_sweep(it, state, ds, hp, tuner, rng, prior_mean)
        it += 1
        if it % tune_cycle_length == 0:
            cond.tune_proposals(tuner)
    tuner.reset_counts()

    for _ in range(n_burn):
        _checked_sweep(it, state, ds, hp, tuner, rng, prior_mean)
        it += 1
    tuner.reset_counts()

    n_keep = n_iter // thin
    alpha = np.empty((n_keep, M))
    beta = np.empty((n_keep, M))
    kappa = np.empty((n_keep, N))
    log_mu = np.empty((n_keep, M, N))
    scalars = {k: np.empty(n_keep) for k in SCALAR_COLUMNS}
    dumps = [] if dump_filter_moments else None
    for i in range(n_iter):
        moments = _checked_sweep(it, state, ds, hp, tuner, rng, prior_mean)
        it += 1
        if (i + 1) % thin:
            continue
        j = (i + 1) // thin - 1
        alpha[j], beta[j], kappa[j], log_mu[j] = state.alpha, state.beta, state.kappa, state.log_mu
        for k in SCALAR_COLUMNS:
            scalars[k][j] = getattr(state, k)
        if dumps is not None:
            dumps.append((moments.mean.copy(), moments.var.copy()))
    scalars["z"] = scalars["z"].astype(np.int64)

    return ChainStore(
        alpha=alpha,
        beta=beta,
        kappa=kappa,
        scalars=scalars,
        log_mu=log_mu,
        age_labels=ds.age_labels,
        year_labels=ds.year_labels,
        mask=ds.mask,
        sigma2_prop=tuner.sigma2_prop.copy(),
        tune_rates=tuner.last_rates.copy(),
        accept_rates=tuner.rates(),
        filter_moments=dumps,
        meta={"sweeps": it, "seconds": time.perf_counter() - started},
    )


def posterior_mean_state(chain: ChainStore) -> ParamState:
    """Posterior means as a single state.

    z takes its majority value and theta2 the mean over draws agreeing with
    it.  zeta uses the median: its inverse-gamma prior has no finite mean
    for small shape parameters.
    """
    z = int(chain.z_trace.mean() > 0.5)
    agree = chain.z_trace == z
    sc = chain.scalars
    state = ParamState(
        alpha=chain.alpha.mean(axis=0),
        beta=chain.beta.mean(axis=0),
        kappa=chain.kappa.mean(axis=0),
        kappa0=float(sc["kappa0"].mean()),
        log_mu=chain.log_mu.mean(axis=0) if chain.log_mu is not None else None,
        theta1=float(sc["theta1"].mean()),
        theta2=float(sc["theta2"][agree].mean()) if z else 0.0,
        z=z,
        zeta=float(np.median(sc["zeta"])),
        sigma2_alpha=float(sc["sigma2_alpha"].mean()),
        sigma2_beta=float(sc["sigma2_beta"].mean()),
        sigma2_eps=float(sc["sigma2_eps"].mean()),
        sigma2_omega=float(sc["sigma2_omega"].mean()),
    )
    # Re-impose the constraints exactly after averaging.
    state.alpha[-1] = -state.alpha[:-1].sum()
    state.beta[-1] = 1.0 - state.beta[:-1].sum()
    return state


def chain_seeds(seed: int):
    """Independent seed sequences for the pilot and the main chain."""
    pilot, main = np.random.SeedSequence(seed).spawn(2)
    return pilot, main


def run_chain(ds: MortalityDataset, hp: Hyperparams, cfg: SamplerConfig, init: Optional[ParamState] = None) -> ChainStore:
    """Initialize (unless ``init`` is given) and run one seeded chain."""
    from .lc_init import initial_values

    pilot_seed, main_seed = chain_seeds(cfg.seed)
    if init is None:
        init = initial_values(ds, cfg, hp, rng=cond.make_rng(pilot_seed))
    chain = sample(
        ds,
        hp,
        init,
        n_iter=cfg.n_iter,
        n_burn=cfg.n_burn,
        tune_cycles=cfg.tune_cycles,
        tune_cycle_length=cfg.tune_cycle_length,
        thin=cfg.thin,
        rng=cond.make_rng(main_seed),
        dump_filter_moments=cfg.dump_filter_moments,
    )
    chain.meta["seed"] = cfg.seed
    return chain


def select_time_structure(chain) -> TimeStructure:
    """Trend model iff the mean of z is strictly above one half."""
    z = np.asarray(chain.z_trace if isinstance(chain, ChainStore) else chain, dtype=float)
    if z.size == 0:
        raise ValueError("empty z trace")
    return TimeStructure.DRIFT_PLUS_TREND if z.mean() > 0.5 else TimeStructure.RANDOM_WALK_DRIFT


class NoConsistentDrawsError(RuntimeError):
    pass


def structure_draws(chain: ChainStore, structure: TimeStructure) -> ChainStore:
    keep = chain.z_trace == structure.z
    if not keep.any():
        raise NoConsistentDrawsError(
            f"no recorded draws with z={structure.z}; run a longer chain"
        )
    return chain.subset(keep)


@dataclass(frozen=True)
class SummaryRow:
    parameter: str
    label: object
    mean: float
    hpd_lo: float
    hpd_hi: float


def summarize(chain: ChainStore, structure: TimeStructure, level: float = 0.95) -> list:
    """Posterior mean and HPD interval per coordinate, over structure-consistent draws."""
    from .forecast import hpd_interval

    sub = structure_draws(chain, structure)
    rows = []

    def add(name, label, values):
        lo, hi = hpd_interval(values, level) if values.size >= 2 else (values[0], values[0])
        rows.append(SummaryRow(name, label, float(values.mean()), float(lo), float(hi)))

    for name, labels in (("alpha", sub.age_labels), ("beta", sub.age_labels), ("kappa", sub.year_labels)):
        draws = getattr(sub, name)
        for i, lab in enumerate(labels):
            add(name, lab, draws[:, i])
    for name in SCALAR_COLUMNS:
        add(name, "", sub.scalars[name].astype(float))
    return rows


# ---------------------------------------------------------------------------
# delimited export


def fmt(x) -> str:
    return format(float(x), ".17g")


def write_chain(chain: ChainStore, outdir) -> None:
    """alpha.csv, beta.csv, kappa.csv and scalars.csv in ``outdir``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name, col, labels in (
        ("alpha", "age", chain.age_labels),
        ("beta", "age", chain.age_labels),
        ("kappa", "year", chain.year_labels),
    ):
        draws = getattr(chain, name)
        with (out / f"{name}.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["draw", col, "value"])
            for d in range(draws.shape[0]):
                for i, lab in enumerate(labels):
                    w.writerow([d + 1, lab, fmt(draws[d, i])])
    with (out / "scalars.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["draw", *SCALAR_COLUMNS])
        for d in range(len(chain)):
            w.writerow(
                [d + 1]
                + [str(int(chain.scalars[k][d])) if k == "z" else fmt(chain.scalars[k][d]) for k in SCALAR_COLUMNS]
            )


def write_acceptance(chain: ChainStore, path) -> None:
    """Final proposal variance and last tuning-cycle acceptance rate per observed cell."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["age", "year", "sigma2_prop", "accept_rate"])
        for i, age in enumerate(chain.age_labels):
            for j, year in enumerate(chain.year_labels):
                if chain.mask is not None and not chain.mask[i, j]:
                    continue
                rate = chain.tune_rates[i, j]
                if np.isnan(rate):
                    rate = chain.accept_rates[i, j]
                w.writerow([age, year, fmt(chain.sigma2_prop[i, j]), fmt(rate)])


def write_filter_moments(chain: ChainStore, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["draw", "t", "mean_k", "var_k"])
        for d, (mean, var) in enumerate(chain.filter_moments or []):
            for t in range(mean.size):
                w.writerow([d + 1, t, fmt(mean[t]), fmt(var[t])])


def write_summary(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "label", "mean", "hpd_lo", "hpd_hi"])
        for r in rows:
            w.writerow([r.parameter, r.label, fmt(r.mean), fmt(r.hpd_lo), fmt(r.hpd_hi)])


def _label(text: str):
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            return text


def _read_long(path, col):
    draws, labels, values = [], [], []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            draws.append(int(row["draw"]))
            labels.append(_label(row[col]))
            values.append(float(row["value"]))
    n = max(draws)
    k = len(values) // n
    if k * n != len(values):
        raise ValueError(f"{path}: ragged trace file")
    return np.array(values).reshape(n, k), tuple(labels[:k])


def read_chain(outdir) -> ChainStore:
    """Inverse of :func:`write_chain` (log rates are not exported)."""
    out = Path(outdir)
    alpha, ages = _read_long(out / "alpha.csv", "age")
    beta, _ = _read_long(out / "beta.csv", "age")
    kappa, years = _read_long(out / "kappa.csv", "year")
    cols = {k: [] for k in SCALAR_COLUMNS}
    with (out / "scalars.csv").open(newline="") as fh:
        for row in csv.DictReader(fh):
            for k in SCALAR_COLUMNS:
                cols[k].append(float(row[k]))
    scalars = {k: np.array(v) for k, v in cols.items()}
    scalars["z"] = scalars["z"].astype(np.int64)
    return ChainStore(alpha=alpha, beta=beta, kappa=kappa, scalars=scalars, age_labels=ages, year_labels=years)
