"""Command-line front end: ``plnlc {synth,impute,fit,forecast,diagnose} CONFIG``.

CONFIG is a flat ``key = value`` text file; ``#`` starts a comment.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .conditionals import make_rng
from .dataset import DatasetError, load_dataset, missing_fraction, write_dataset
from .diagnostics import trace_stats
from .forecast import forecast, write_forecast
from .lc_init import default_hyperparams, linear_interpolate_impute, two_stage_impute
from .model import NumericalError
from .sampler import (
    SCALAR_COLUMNS,
    SamplerConfig,
    TimeStructure,
    fmt,
    read_chain,
    run_chain,
    select_time_structure,
    summarize,
    write_acceptance,
    write_chain,
    write_filter_moments,
    write_summary,
)
from .synth import PatternError, simulate, write_truth

log = logging.getLogger("plnlc")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

HYPER_KEYS = ("a_sa", "b_sa", "a_sb", "b_sb", "a_zeta", "b_zeta", "p0", "mu_kappa0", "sigma2_kappa0")


class ConfigError(ValueError):
    pass


def read_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#",), inline_comment_prefixes=("#",), interpolation=None
    )
    parser.optionxform = str
    try:
        # one flat key per line: indentation carries no meaning here
        text = "\n".join(line.lstrip() for line in path.read_text(encoding="utf-8").splitlines())
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return {k.strip(): v.strip() for k, v in parser["run"].items()}


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    dataset: Optional[Path] = None
    output_dir: Path = Path("out")
    horizon: int = 23
    chains: int = 1
    raw_draws: bool = False
    level: float = 0.95
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    hyper: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    @classmethod
    def from_mapping(cls, kv: dict, base_dir: Path = Path(".")) -> "RunConfig":
        kv = {k: v for k, v in kv.items() if not k.startswith("result.")}
        sampler_types = {f.name: f.type for f in fields(SamplerConfig)}
        cfg = cls(base_dir=base_dir, output_dir=base_dir / "out")
        sampler_kw = {}
        try:
            for key, val in kv.items():
                if key == "dataset":
                    cfg.dataset = base_dir / val
                elif key == "output_dir":
                    cfg.output_dir = base_dir / val
                elif key in ("horizon", "chains"):
                    setattr(cfg, key, int(val))
                elif key == "raw_draws":
                    cfg.raw_draws = _bool(val)
                elif key == "level":
                    cfg.level = float(val)
                elif key in sampler_types:
                    sampler_kw[key] = _bool(val) if key == "dump_filter_moments" else int(val)
                elif key in HYPER_KEYS:
                    cfg.hyper[key] = float(val)
                else:
                    raise ConfigError(f"unknown config key {key!r}")
            cfg.sampler = SamplerConfig(**sampler_kw)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if cfg.horizon < 0:
            raise ConfigError("horizon must be >= 0")
        if cfg.chains < 1:
            raise ConfigError("chains must be >= 1")
        if not 0 < cfg.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_mapping(read_config(path), Path(path).resolve().parent)

    def echo(self, hp=None) -> list:
        """key = value lines that reproduce this run when read back."""
        s = self.sampler
        lines = [
            f"dataset = {self.dataset.resolve() if self.dataset else ''}",
            f"output_dir = {self.output_dir.resolve()}",
            f"horizon = {self.horizon}",
            f"chains = {self.chains}",
            f"raw_draws = {str(self.raw_draws).lower()}",
            f"level = {self.level!r}",
        ]
        lines += [f"{f.name} = {str(getattr(s, f.name)).lower()}" for f in fields(SamplerConfig)]
        for key in HYPER_KEYS:
            val = getattr(hp, key) if hp is not None else self.hyper.get(key)
            if val is not None:
                lines.append(f"{key} = {float(val)!r}")
        return lines


def _require_dataset(cfg: RunConfig):
    if cfg.dataset is None:
        raise ConfigError("config is missing 'dataset'")
    if not cfg.dataset.is_file():
        raise DatasetError(f"dataset file not found: {cfg.dataset}")
    return load_dataset(cfg.dataset)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(config_path) -> int:
    kv = read_config(config_path)
    base = Path(config_path).resolve().parent
    preset = kv.pop("preset", "").lower()
    params = {"n_ages": 100, "n_years": 22, "missing": "block", "first_year": 1995} if preset == "census_block" else {}
    if preset not in ("", "census_block"):
        raise ConfigError(f"unknown preset {preset!r}")
    out = base / kv.pop("dataset", "synthetic.csv")
    truth_path = base / kv.pop("truth", "truth.csv")
    ints = ("n_ages", "n_years", "first_year", "seed")
    floats = ("theta1", "theta2", "sigma2_eps", "sigma2_omega", "exposure")
    try:
        for key, val in kv.items():
            if key in ints:
                params[key] = int(val)
            elif key in floats:
                params[key] = float(val)
            elif key == "missing":
                params[key] = val
            else:
                raise ConfigError(f"unknown synth key {key!r}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for key in ("n_ages", "n_years"):
        if key not in params:
            raise ConfigError(f"synth config needs {key!r} (or preset = census_block)")
    try:
        ds, truth = simulate(**params)
    except PatternError as exc:
        raise ConfigError(str(exc)) from None
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, out)
    write_truth(truth, ds, truth_path)
    print(f"wrote {out} ({ds.n_ages} ages x {ds.n_years} years, missing fraction {missing_fraction(ds):.4f})")
    print(f"wrote {truth_path}")
    return EXIT_OK


def cmd_impute(config_path) -> int:
    cfg = RunConfig.load(config_path)
    ds = _require_dataset(cfg)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    write_dataset(linear_interpolate_impute(ds), cfg.output_dir / "imputed_linear.csv")
    completed, _ = two_stage_impute(ds)
    write_dataset(completed, cfg.output_dir / "imputed.csv")
    print(f"wrote {cfg.output_dir / 'imputed.csv'}")
    return EXIT_OK


def _fit_one(args):
    ds, hp, sampler_cfg, outdir, level = args
    chain = run_chain(ds, hp, sampler_cfg)
    structure = select_time_structure(chain)
    write_chain(chain, outdir)
    write_acceptance(chain, outdir / "acceptance.csv")
    write_summary(summarize(chain, structure, level), outdir / "summary.csv")
    if sampler_cfg.dump_filter_moments:
        write_filter_moments(chain, outdir / "filter_moments.csv")
    return structure, float(chain.z_trace.mean()), len(chain)


def _chain_seed(seed: int, k: int, i: int) -> int:
    if k == 1:
        return seed
    return int(np.random.SeedSequence(seed).spawn(k)[i].generate_state(1, np.uint64)[0] >> np.uint64(1))


def cmd_fit(config_path) -> int:
    cfg = RunConfig.load(config_path)
    ds = _require_dataset(cfg)
    try:
        hp = default_hyperparams(ds, **cfg.hyper)
    except ValueError as exc:
        raise ConfigError(f"hyperparameters: {exc}") from None
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)

    jobs = []
    for i in range(cfg.chains):
        sub = out if cfg.chains == 1 else out / f"chain_{i + 1}"
        sub.mkdir(parents=True, exist_ok=True)
        scfg = SamplerConfig(**{**cfg.sampler.__dict__, "seed": _chain_seed(cfg.sampler.seed, cfg.chains, i)})
        jobs.append((ds, hp, scfg, sub, cfg.level))
    if cfg.chains == 1:
        results = [_fit_one(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=cfg.chains) as pool:
            results = list(pool.map(_fit_one, jobs))

    lines = ["# plnlc fit manifest; reusable as a config file", f"# version {__version__}"]
    lines += cfg.echo(hp)
    for i, (structure, zbar, n) in enumerate(results):
        tag = "" if cfg.chains == 1 else f"chain_{i + 1}."
        lines += [
            f"result.{tag}seed = {jobs[i][2].seed}",
            f"result.{tag}selected_structure = {structure.value}",
            f"result.{tag}z_fraction = {zbar!r}",
            f"result.{tag}n_draws = {n}",
        ]
    lines.append(f"result.missing_fraction = {missing_fraction(ds)!r}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for i, (structure, zbar, n) in enumerate(results):
        print(f"chain {i + 1}: {n} draws, mean z = {zbar:.4f}, selected {structure.value}")
    return EXIT_OK


def _chain_dirs(out: Path, chains: int):
    return [out] if chains == 1 else [out / f"chain_{i + 1}" for i in range(chains)]


def _load_fit(d: Path):
    missing = [n for n in ("alpha.csv", "beta.csv", "kappa.csv", "scalars.csv") if not (d / n).is_file()]
    if missing:
        raise DatasetError(f"fit artifacts missing in {d}: {', '.join(missing)}")
    return read_chain(d)


def cmd_forecast(config_path) -> int:
    cfg = RunConfig.load(config_path)
    if cfg.horizon == 0:
        print("horizon = 0: nothing to forecast")
        return EXIT_OK
    for i, d in enumerate(_chain_dirs(cfg.output_dir, cfg.chains)):
        chain = _load_fit(d)
        structure = select_time_structure(chain)
        seed = np.random.SeedSequence(_chain_seed(cfg.sampler.seed, cfg.chains, i)).spawn(3)[2]
        result = forecast(chain, structure, cfg.horizon, make_rng(seed), level=cfg.level)
        write_forecast(result, d / "forecast.csv", d / "forecast_draws.csv" if cfg.raw_draws else None)
        print(f"wrote {d / 'forecast.csv'} ({len(result.year_labels)} years x {len(result.age_labels)} ages, {structure.value})")
    return EXIT_OK


def cmd_diagnose(config_path) -> int:
    cfg = RunConfig.load(config_path)
    for d in _chain_dirs(cfg.output_dir, cfg.chains):
        chain = _load_fit(d)
        with (d / "diagnostics.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "label", "mean", "sd", "lag1_autocorr", "ess"])

            def row(name, label, x):
                s = trace_stats(x)
                w.writerow([name, label, fmt(s["mean"]), fmt(s["sd"]), fmt(s["lag1"]), fmt(s["ess"])])

            for name, labels in (("alpha", chain.age_labels), ("beta", chain.age_labels), ("kappa", chain.year_labels)):
                draws = getattr(chain, name)
                for i, lab in enumerate(labels):
                    row(name, lab, draws[:, i])
            for name in SCALAR_COLUMNS:
                row(name, "", chain.scalars[name].astype(float))
        print(f"wrote {d / 'diagnostics.csv'}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "impute": cmd_impute,
    "fit": cmd_fit,
    "forecast": cmd_forecast,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plnlc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("config", help="key = value configuration file")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
