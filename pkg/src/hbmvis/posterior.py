"""Quantities derived from draws: unit lines, offsets, intervals, predictions."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from hbmvis.dataset import Dataset
from hbmvis.errors import ConfigurationError, HbmError
from hbmvis.model_spec import UNIT_TERM, u_name

DEFAULT_LEVELS = (0.80, 0.95)
PREDICTION_LEVELS = (0.50, 0.80, 0.95)
GLOBAL = "global"


@dataclass(frozen=True)
class IntervalSummary:
    median: float
    intervals: tuple[tuple[float, float, float], ...]

    def interval(self, level: float) -> tuple[float, float]:
        for lv, lo, hi in self.intervals:
            if abs(lv - level) < 1e-12:
                return lo, hi
        raise KeyError(level)

    @property
    def levels(self) -> list[float]:
        return [lv for lv, _, _ in self.intervals]


def quantile_type7(x: np.ndarray, q) -> np.ndarray:
    """Sample quantiles by linear interpolation between order statistics."""
    return np.quantile(np.asarray(x, dtype=float), q, method="linear")


def summarize(x, levels: Sequence[float] = DEFAULT_LEVELS) -> IntervalSummary:
    """Median and central credible intervals of a draw vector.

    >>> s = summarize(np.arange(1.0, 101.0), [0.95])
    >>> s.median, s.interval(0.95)
    (50.5, (3.475, 97.525))
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("cannot summarise an empty draw vector")
    if x.size < 2:
        raise ValueError("need at least two draws")
    levels = sorted(float(lv) for lv in levels)
    if any(not 0 < lv < 1 for lv in levels):
        raise ValueError(f"levels must lie in (0, 1): {levels}")
    probs = [0.5]
    for lv in levels:
        probs += [(1 - lv) / 2, (1 + lv) / 2]
    qs = quantile_type7(x, probs)
    med = float(qs[0])
    intervals = tuple(
        (lv, float(qs[1 + 2 * i]), float(qs[2 + 2 * i])) for i, lv in enumerate(levels)
    )
    return IntervalSummary(med, intervals)


@dataclass
class UnitParamDraws:
    """Per-draw intercept and slope of every unit's line and its group line.

    ``hyper_*`` is keyed by parent-group level, or by ``"global"`` for the
    country model; it is empty for the non-pooled model.
    """

    intercept: dict[str, np.ndarray]
    slope: dict[str, np.ndarray]
    unit_group: dict[str, str] = field(default_factory=dict)
    hyper_intercept: dict[str, np.ndarray] = field(default_factory=dict)
    hyper_slope: dict[str, np.ndarray] = field(default_factory=dict)

    def hyper_of(self, unit: str) -> tuple[np.ndarray, np.ndarray] | None:
        g = self.unit_group.get(unit)
        if g is None:
            return None
        return self.hyper_intercept[g], self.hyper_slope[g]


def composite_unit_params(draws, spec=None, ds: Dataset | None = None) -> UnitParamDraws:
    """Sum global and group effects into each unit's line, draw by draw."""
    spec = spec or draws.spec
    if ds is not None:
        missing = [u for u in spec.units if u not in set(ds.units)]
        if missing:
            raise ConfigurationError(f"units not in dataset: {missing}")
    if not spec.is_pooled:
        return UnitParamDraws(
            intercept={c: draws[f"alpha[{c}]"].copy() for c in spec.units},
            slope={c: draws[f"gamma[{c}]"].copy() for c in spec.units},
        )
    b0, b1 = draws["beta0"], draws["beta1"]
    parent = spec.parent_term
    out = UnitParamDraws({}, {})
    if parent is None:
        out.hyper_intercept[GLOBAL] = b0.copy()
        out.hyper_slope[GLOBAL] = b1.copy()
    else:
        for lv in parent.levels:
            out.hyper_intercept[lv] = b0 + draws[u_name(parent.name, lv, "int")]
            out.hyper_slope[lv] = b1 + draws[u_name(parent.name, lv, "slope")]
    for c in spec.units:
        g = GLOBAL if parent is None else parent.level_of(c)
        out.unit_group[c] = g
        out.intercept[c] = out.hyper_intercept[g] + draws[u_name(UNIT_TERM, c, "int")]
        out.slope[c] = out.hyper_slope[g] + draws[u_name(UNIT_TERM, c, "slope")]
    return out


def offsets(draws, spec=None, term: str = UNIT_TERM) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Raw ``(u_int, u_slope)`` draws for every level of a group term."""
    spec = spec or draws.spec
    try:
        g = spec.term(term)
    except KeyError:
        raise ConfigurationError(
            f"model {spec.kind.value} has no group term {term!r}"
        ) from None
    return {
        lv: (draws[u_name(term, lv, "int")], draws[u_name(term, lv, "slope")])
        for lv in g.levels
    }


def predict(
    draws,
    unit: str,
    t: float,
    *,
    include_noise: bool = False,
    rng: np.random.Generator | None = None,
    params: UnitParamDraws | None = None,
) -> np.ndarray:
    """Draws of a unit's line at time ``t``, optionally with residual noise.

    With ``include_noise`` the result is the posterior predictive of a new
    observation; ``rng`` defaults to a generator seeded from the draws'
    metadata so repeated calls agree.
    """
    if unit not in draws.spec.units:
        raise HbmError(f"unit {unit!r} is not part of the fitted model")
    params = params or composite_unit_params(draws)
    mean = params.intercept[unit] + params.slope[unit] * t
    if not include_noise:
        return mean
    if rng is None:
        rng = np.random.default_rng(int(draws.meta.get("seed", 0)))
    return mean + draws["sigma"] * rng.standard_normal(mean.shape)


# ---------------------------------------------------------------------------
# Structured text output


SUMMARY_FIELDS = ["unit", "quantity", "model", "median", "level", "lower", "upper"]


def summary_records(
    draws, levels: Sequence[float] = DEFAULT_LEVELS
) -> list[dict]:
    """One record per (unit or group, quantity, level)."""
    params = composite_unit_params(draws)
    model = draws.spec.kind.value
    recs = []

    def emit(name, quantity, x):
        s = summarize(x, levels)
        for lv, lo, hi in s.intervals:
            recs.append(dict(unit=name, quantity=quantity, model=model,
                             median=s.median, level=lv, lower=lo, upper=hi))

    for c in draws.spec.units:
        emit(c, "intercept", params.intercept[c])
        emit(c, "slope", params.slope[c])
    for g in params.hyper_intercept:
        emit(g, "hyper_intercept", params.hyper_intercept[g])
        emit(g, "hyper_slope", params.hyper_slope[g])
    if draws.spec.is_pooled:
        for c, (ui, us) in offsets(draws).items():
            emit(c, "offset_intercept", ui)
            emit(c, "offset_slope", us)
    emit("*", "sigma", draws["sigma"])
    return recs


def records_to_csv(records: Iterable[dict], fields: Sequence[str], header_line: str = "") -> str:
    buf = io.StringIO()
    if header_line:
        buf.write(header_line + "\n")
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def read_summary_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        out = []
        for r in rows:
            for k in ("median", "level", "lower", "upper"):
                r[k] = float(r[k])
            out.append(r)
    return out


def summaries_from_records(records: Iterable[dict]) -> dict[tuple[str, str, str], IntervalSummary]:
    """Regroup flat records into ``{(model, unit, quantity): IntervalSummary}``."""
    grouped: dict[tuple[str, str, str], list] = {}
    medians = {}
    for r in records:
        key = (r["model"], r["unit"], r["quantity"])
        grouped.setdefault(key, []).append((float(r["level"]), float(r["lower"]), float(r["upper"])))
        medians[key] = float(r["median"])
    return {
        k: IntervalSummary(medians[k], tuple(sorted(v))) for k, v in grouped.items()
    }
