"""Long-format score data, grouping tables and time recentring."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from hbmvis.errors import (
    CoverageError,
    DuplicateObservationError,
    ParseError,
    SchemaError,
)

logger = logging.getLogger(__name__)

DEFAULT_ANCHOR_YEAR = 2018
YEAR_RANGE = (1995, 2035)
COMPOSITE_SEP = ":"


@dataclass(frozen=True)
class Observation:
    unit: str
    year: int
    value: float


@dataclass(frozen=True)
class GroupingTable:
    """Assignment of every unit to exactly one group label."""

    name: str
    assignment: Mapping[str, str]

    def __post_init__(self):
        object.__setattr__(self, "name", self.name.strip().lower())
        object.__setattr__(self, "assignment", dict(self.assignment))
        for unit, label in self.assignment.items():
            if not str(label).strip():
                raise SchemaError(f"grouping {self.name!r}: empty label for unit {unit!r}")

    def __getitem__(self, unit: str) -> str:
        return self.assignment[unit]

    def __eq__(self, other):
        if not isinstance(other, GroupingTable):
            return NotImplemented
        return self.name == other.name and dict(self.assignment) == dict(other.assignment)

    def __hash__(self):
        return hash((self.name, tuple(sorted(self.assignment.items()))))


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of observations plus grouping tables.

    ``t`` is ``year - anchor_year`` for every observation. Groupings are kept
    sorted by name so that attaching order does not matter.
    """

    observations: tuple[Observation, ...]
    anchor_year: int = DEFAULT_ANCHOR_YEAR
    groupings: tuple[GroupingTable, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        object.__setattr__(
            self, "groupings", tuple(sorted(self.groupings, key=lambda g: g.name))
        )

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def units(self) -> list[str]:
        """Units in order of first appearance."""
        return list(dict.fromkeys(o.unit for o in self.observations))

    @property
    def years(self) -> np.ndarray:
        return np.array([o.year for o in self.observations], dtype=int)

    @property
    def t(self) -> np.ndarray:
        return np.array(
            [o.year - self.anchor_year for o in self.observations], dtype=float
        )

    @property
    def y(self) -> np.ndarray:
        return np.array([o.value for o in self.observations], dtype=float)

    @property
    def unit_labels(self) -> list[str]:
        return [o.unit for o in self.observations]

    def grouping(self, name: str) -> GroupingTable:
        name = name.lower()
        for g in self.groupings:
            if g.name == name:
                return g
        raise KeyError(name)

    def has_grouping(self, name: str) -> bool:
        return any(g.name == name.lower() for g in self.groupings)

    def subset(self, keep: Iterable[int]) -> "Dataset":
        """Dataset restricted to the observation positions in ``keep``."""
        obs = [self.observations[i] for i in keep]
        return replace(self, observations=tuple(obs))

    def for_units(self, units: Iterable[str]) -> "Dataset":
        wanted = set(units)
        return replace(
            self, observations=tuple(o for o in self.observations if o.unit in wanted)
        )


def _check_obs(obs: Observation, row: int | None = None) -> None:
    where = f" (row {row})" if row is not None else ""
    lo, hi = YEAR_RANGE
    if not lo <= obs.year <= hi:
        raise ParseError(f"year {obs.year} outside {lo}-{hi}{where}")
    if not math.isfinite(obs.value):
        raise ParseError(f"non-finite value for {obs.unit}/{obs.year}{where}")


def make_dataset(
    records: Iterable[tuple[str, int, float]],
    anchor_year: int = DEFAULT_ANCHOR_YEAR,
) -> Dataset:
    """Build a Dataset from ``(unit, year, value)`` triples, rejecting duplicates."""
    seen: set[tuple[str, int]] = set()
    obs = []
    for unit, year, value in records:
        o = Observation(str(unit), int(year), float(value))
        _check_obs(o)
        key = (o.unit, o.year)
        if key in seen:
            raise DuplicateObservationError(f"duplicate observation {o.unit}/{o.year}")
        seen.add(key)
        obs.append(o)
    return Dataset(tuple(obs), anchor_year=anchor_year)


def load_observations(
    path: str | Path,
    columns: tuple[str, str, str] = ("country", "year", "math"),
    anchor_year: int = DEFAULT_ANCHOR_YEAR,
) -> Dataset:
    """Read a comma-delimited file with a header row into a Dataset.

    Parameters
    ----------
    path
        UTF-8 text file. Lines starting with ``#`` are ignored.
    columns
        Header names of the unit, year and value columns.

    Raises
    ------
    SchemaError
        A named column is missing from the header.
    ParseError
        A year or value fails to parse; the message carries the row number.
    DuplicateObservationError
        A ``(unit, year)`` pair occurs twice.
    """
    unit_col, year_col, value_col = columns
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        header = reader.fieldnames or []
        missing = [c for c in columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}; header is {header}")
        seen: set[tuple[str, int]] = set()
        obs = []
        # row 1 is the header
        for row_no, row in enumerate(reader, start=2):
            unit = (row[unit_col] or "").strip()
            try:
                year = int(str(row[year_col]).strip())
            except ValueError:
                raise ParseError(
                    f"{path}: row {row_no}: year {row[year_col]!r} is not an integer"
                ) from None
            try:
                value = float(str(row[value_col]).strip())
            except ValueError:
                raise ParseError(
                    f"{path}: row {row_no}: value {row[value_col]!r} is not numeric"
                ) from None
            o = Observation(unit, year, value)
            _check_obs(o, row_no)
            if (unit, year) in seen:
                raise DuplicateObservationError(
                    f"{path}: row {row_no}: duplicate observation {unit}/{year}"
                )
            seen.add((unit, year))
            obs.append(o)
    return Dataset(tuple(obs), anchor_year=anchor_year)


def load_grouping(path: str | Path, name: str) -> GroupingTable:
    """Read a ``country,group`` file into a GroupingTable."""
    assignment: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        header = reader.fieldnames or []
        for col in ("country", "group"):
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}; header is {header}")
        for row_no, row in enumerate(reader, start=2):
            unit = row["country"].strip()
            if unit in assignment:
                raise DuplicateObservationError(
                    f"{path}: row {row_no}: unit {unit} assigned twice"
                )
            assignment[unit] = row["group"].strip()
    return GroupingTable(name, assignment)


def recenter_time(ds: Dataset, anchor_year: int) -> Dataset:
    """Return ``ds`` with time measured as ``year - anchor_year``."""
    return replace(ds, anchor_year=int(anchor_year))


def derive_composite(
    first: GroupingTable, second: GroupingTable, name: str | None = None
) -> GroupingTable:
    """Cross two groupings into labels of the form ``"<first>:<second>"``."""
    name = name or f"{first.name}_{second.name}"
    units = [u for u in first.assignment if u in second.assignment]
    return GroupingTable(
        name, {u: f"{first[u]}{COMPOSITE_SEP}{second[u]}" for u in units}
    )


def attach_grouping(ds: Dataset, table: GroupingTable) -> Dataset:
    """Add ``table`` to the dataset, replacing any grouping of the same name.

    Raises
    ------
    CoverageError
        Some unit of ``ds`` has no label in ``table``.
    """
    missing = [u for u in ds.units if u not in table.assignment]
    if missing:
        raise CoverageError(
            f"grouping {table.name!r} has no label for unit(s): {', '.join(missing)}"
        )
    others = [g for g in ds.groupings if g.name != table.name]
    return replace(ds, groupings=tuple(others) + (table,))


def attach_composite(
    ds: Dataset, first: str, second: str, name: str | None = None
) -> Dataset:
    """Derive and attach the composite of two already-attached groupings."""
    table = derive_composite(ds.grouping(first), ds.grouping(second), name)
    return attach_grouping(ds, table)


@dataclass
class ValidationReport:
    single_observation_units: list[str] = field(default_factory=list)
    uncovered: dict[str, list[str]] = field(default_factory=dict)
    year_gaps: dict[str, list[int]] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not (self.single_observation_units or self.uncovered or self.year_gaps)

    def lines(self) -> list[str]:
        out = []
        if self.single_observation_units:
            out.append(
                "single-observation units (slope comes from the group): "
                + ", ".join(self.single_observation_units)
            )
        for name, units in self.uncovered.items():
            out.append(f"units missing from grouping {name!r}: " + ", ".join(units))
        for unit, years in self.year_gaps.items():
            out.append(f"{unit}: missing years " + ", ".join(map(str, years)))
        return out


def validate(
    ds: Dataset,
    expected_groupings: Iterable[GroupingTable] = (),
    cycle: int | None = None,
) -> ValidationReport:
    """Report data features that affect fitting; never raises.

    Year gaps are interior years missing from a unit's series, on the grid of
    the dataset's most common spacing (or ``cycle`` when given). Units with
    one observation are not checked for gaps.
    """
    report = ValidationReport()
    by_unit: dict[str, list[int]] = {}
    for o in ds.observations:
        by_unit.setdefault(o.unit, []).append(o.year)
    report.single_observation_units = [u for u, ys in by_unit.items() if len(ys) == 1]

    for table in list(ds.groupings) + list(expected_groupings):
        missing = [u for u in by_unit if u not in table.assignment]
        if missing:
            report.uncovered[table.name] = missing

    if cycle is None:
        diffs = []
        for ys in by_unit.values():
            diffs.extend(np.diff(sorted(ys)).tolist())
        cycle = int(np.bincount(diffs).argmax()) if diffs else 0
    if cycle > 0:
        for unit, ys in by_unit.items():
            ys = sorted(ys)
            if len(ys) < 2:
                continue
            expected = set(range(ys[0], ys[-1] + 1, cycle))
            gaps = sorted(expected - set(ys))
            if gaps:
                report.year_gaps[unit] = gaps
    return report
