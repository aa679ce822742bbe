"""Age-by-year death/exposure tables with explicit missingness."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

HEADER = ("age", "year", "deaths", "exposure")


class DatasetError(ValueError):
    """Base class for dataset validation failures."""


class MalformedRowError(DatasetError):
    pass


class NegativeDeathsError(DatasetError):
    pass


class NonPositiveExposureError(DatasetError):
    pass


class DeathsExceedExposureError(DatasetError):
    pass


class HalfObservedCellError(DatasetError):
    pass


class TooSmallError(DatasetError):
    pass


class NoCompleteYearError(DatasetError):
    pass


@dataclass(frozen=True)
class MortalityDataset:
    """Death counts and exposures on an M x N (age x year) grid.

    Unobserved cells hold NaN in both ``deaths`` and ``exposures`` and a
    ``False`` entry in ``mask``.  Ages and years are addressed internally by
    position; ``age_labels`` and ``year_labels`` keep the original labels for
    output.  ``source_mask`` is set on imputed datasets and records which
    cells were observed before imputation.
    """

    deaths: np.ndarray
    exposures: np.ndarray
    mask: np.ndarray
    age_labels: tuple = ()
    year_labels: tuple = ()
    source_mask: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        deaths = np.array(self.deaths, dtype=float)
        exposures = np.array(self.exposures, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        if deaths.ndim != 2 or deaths.shape != exposures.shape or deaths.shape != mask.shape:
            raise MalformedRowError("deaths, exposures and mask must be equal-shape 2-d grids")
        M, N = deaths.shape
        if M < 2 or N < 2:
            raise TooSmallError(f"need at least 2 ages and 2 years, got {M}x{N}")

        d_obs = ~np.isnan(deaths)
        e_obs = ~np.isnan(exposures)
        if np.any(d_obs != e_obs) or np.any(mask & ~d_obs) or np.any(~mask & d_obs):
            raise HalfObservedCellError("every cell needs both deaths and exposure, or neither")
        d = deaths[mask]
        e = exposures[mask]
        if np.any(d < 0):
            raise NegativeDeathsError("negative death count")
        if np.any(d != np.round(d)) or not np.all(np.isfinite(d)):
            raise MalformedRowError("death counts must be integers")
        if np.any(~(e > 0)) or not np.all(np.isfinite(e)):
            raise NonPositiveExposureError("exposure must be positive on observed cells")
        if np.any(d > e):
            raise DeathsExceedExposureError("deaths exceed exposure")
        if not np.any(mask.all(axis=0)):
            raise NoCompleteYearError("at least one fully observed year is required")

        for a in (deaths, exposures, mask):
            a.setflags(write=False)
        object.__setattr__(self, "deaths", deaths)
        object.__setattr__(self, "exposures", exposures)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(
            self, "age_labels", tuple(self.age_labels) if self.age_labels else tuple(range(1, M + 1))
        )
        object.__setattr__(
            self, "year_labels", tuple(self.year_labels) if self.year_labels else tuple(range(1, N + 1))
        )
        if len(self.age_labels) != M or len(self.year_labels) != N:
            raise MalformedRowError("label count does not match grid shape")
        if self.source_mask is not None:
            src = np.array(self.source_mask, dtype=bool)
            src.setflags(write=False)
            object.__setattr__(self, "source_mask", src)

    @property
    def n_ages(self) -> int:
        return self.deaths.shape[0]

    @property
    def n_years(self) -> int:
        return self.deaths.shape[1]

    @property
    def shape(self) -> tuple:
        return self.deaths.shape

    @property
    def original_mask(self) -> np.ndarray:
        """Mask of cells observed in the raw data (before any imputation)."""
        return self.mask if self.source_mask is None else self.source_mask

    def with_values(self, deaths, exposures, mask=None, source_mask=None) -> "MortalityDataset":
        return MortalityDataset(
            deaths=deaths,
            exposures=exposures,
            mask=self.mask if mask is None else mask,
            age_labels=self.age_labels,
            year_labels=self.year_labels,
            source_mask=source_mask,
        )


def missing_fraction(ds: MortalityDataset) -> float:
    return float((~ds.mask).sum()) / ds.mask.size


def _parse_label(text: str):
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            return text


def _sort_labels(labels: Sequence):
    try:
        return sorted(labels)
    except TypeError:
        return sorted(labels, key=str)


def load_dataset(path) -> MortalityDataset:
    """Read a ``age,year,deaths,exposure`` table.

    Missing cells are either absent or have both value fields empty.
    """
    path = Path(path)
    rows = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRowError(f"{path}: empty file") from None
        if tuple(h.strip().lower() for h in header) != HEADER:
            raise MalformedRowError(f"{path}: expected header {','.join(HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise MalformedRowError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            age, year, d_txt, e_txt = (c.strip() for c in row)
            if not age or not year:
                raise MalformedRowError(f"{path}:{lineno}: empty age or year label")
            key = (_parse_label(age), _parse_label(year))
            if key in rows:
                raise MalformedRowError(f"{path}:{lineno}: duplicate cell {key}")
            if bool(d_txt) != bool(e_txt):
                raise HalfObservedCellError(f"{path}:{lineno}: only one of deaths/exposure given")
            if not d_txt:
                rows[key] = None
                continue
            try:
                d = float(d_txt)
                e = float(e_txt)
            except ValueError:
                raise MalformedRowError(f"{path}:{lineno}: non-numeric value") from None
            if d < 0:
                raise NegativeDeathsError(f"{path}:{lineno}: negative death count {d_txt}")
            if d != round(d):
                raise MalformedRowError(f"{path}:{lineno}: non-integer death count {d_txt}")
            if not e > 0:
                raise NonPositiveExposureError(f"{path}:{lineno}: nonpositive exposure {e_txt}")
            rows[key] = (d, e)

    ages = _sort_labels({k[0] for k in rows})
    years = _sort_labels({k[1] for k in rows})
    if len(ages) < 2 or len(years) < 2:
        raise TooSmallError(f"{path}: need at least 2 ages and 2 years")
    a_idx = {a: i for i, a in enumerate(ages)}
    y_idx = {y: j for j, y in enumerate(years)}
    deaths = np.full((len(ages), len(years)), np.nan)
    exposures = np.full_like(deaths, np.nan)
    for (a, y), val in rows.items():
        if val is not None:
            deaths[a_idx[a], y_idx[y]], exposures[a_idx[a], y_idx[y]] = val
    return MortalityDataset(
        deaths=deaths,
        exposures=exposures,
        mask=~np.isnan(deaths),
        age_labels=tuple(ages),
        year_labels=tuple(years),
    )


def write_dataset(ds: MortalityDataset, path) -> None:
    """Write ``ds`` in the load format; missing cells get empty fields."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for i, age in enumerate(ds.age_labels):
            for j, year in enumerate(ds.year_labels):
                if ds.mask[i, j]:
                    w.writerow([age, year, int(ds.deaths[i, j]), repr(float(ds.exposures[i, j]))])
                else:
                    w.writerow([age, year, "", ""])
