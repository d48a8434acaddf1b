"""Panel arrangement, ordering and axis ranges, computed before any drawing."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Sequence

from hbmvis.errors import ConfigurationError, CoverageError

logger = logging.getLogger(__name__)

PAD_FRACTION = 0.05
SCALE_POLICIES = ("global", "per_row", "free")
GROUP_PREFIX = "group:"

Range = tuple[float, float]


@dataclass(frozen=True)
class Panel:
    id: str
    kind: str  # "unit" or "group"
    row: int
    col: int
    x_range: Range
    y_range: Range
    strip_label: str
    strip_role: str | None = None
    label_role: str | None = None


@dataclass
class GridLayout:
    panels: list[Panel]
    rows: list[tuple[str, str | None]] = field(default_factory=list)
    scale_policy: str = "per_row"

    @property
    def n_rows(self) -> int:
        return max((p.row for p in self.panels), default=0)

    @property
    def n_cols(self) -> int:
        return max((p.col for p in self.panels), default=0)

    def row(self, r: int) -> list[Panel]:
        return sorted((p for p in self.panels if p.row == r), key=lambda p: p.col)

    def panel(self, pid: str) -> Panel:
        for p in self.panels:
            if p.id == pid:
                return p
        raise KeyError(pid)

    def check(self) -> None:
        cells = [(p.row, p.col) for p in self.panels]
        if len(set(cells)) != len(cells):
            raise ConfigurationError("two panels share a grid cell")
        for p in self.panels:
            for lo, hi in (p.x_range, p.y_range):
                if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                    raise ConfigurationError(f"panel {p.id} has an invalid range")


def trend_color(slope_median: float) -> str:
    """Colour role for a fitted trend: ``"negative"`` below zero, else ``"nonnegative"``."""
    if not math.isfinite(slope_median):
        raise ValueError("slope median must be finite")
    return "negative" if slope_median < 0 else "nonnegative"


def pad_range(lo: float, hi: float, fraction: float = PAD_FRACTION) -> Range:
    span = hi - lo
    if span <= 0:
        span = max(abs(lo), 1.0) * 0.1
        lo, hi = lo - span / 2, hi + span / 2
    pad = span * fraction
    return lo - pad, hi + pad


def _union(extents) -> Range | None:
    ext = [e for e in extents if e is not None]
    if not ext:
        return None
    return min(e[0] for e in ext), max(e[1] for e in ext)


def compute_scales(
    extents: Mapping[str, Range | None],
    rows: Mapping[str, int],
    policy: str = "per_row",
    fraction: float = PAD_FRACTION,
) -> dict[str, Range]:
    """Padded axis range for every panel under a scale policy.

    ``global`` shares one range, ``per_row`` shares within a row and
    ``free`` pads each panel's own extent. A panel without content falls
    back to its row's range, then to the global range.
    """
    if policy not in SCALE_POLICIES:
        raise ConfigurationError(f"unknown scale policy {policy!r}; choose from {SCALE_POLICIES}")
    for pid, e in extents.items():
        if e is not None and not (math.isfinite(e[0]) and math.isfinite(e[1])):
            raise ValueError(f"panel {pid} has a non-finite extent")
    overall = _union(extents.values()) or (0.0, 1.0)
    by_row: dict[int, list] = {}
    for pid, e in extents.items():
        by_row.setdefault(rows.get(pid, 0), []).append(e)
    row_union = {r: _union(es) for r, es in by_row.items()}

    out = {}
    for pid, e in extents.items():
        row_ext = row_union[rows.get(pid, 0)]
        if policy == "global":
            ext = overall
        elif policy == "per_row":
            ext = row_ext or overall
        else:
            ext = e
        if ext is None:
            logger.info("panel %s is empty; using its row's range", pid)
            ext = row_ext or overall
        out[pid] = pad_range(*ext, fraction)
    return out


def ragged_layout(
    unit_slopes: Mapping[str, float],
    unit_group: Mapping[str, str],
    group_slopes: Mapping[str, float],
    extents: Mapping[str, Range | None] | None = None,
    x_range: Range = (0.0, 1.0),
    policy: str = "per_row",
    group_role: Callable[[str], str | None] = lambda g: None,
    group_panels: bool = True,
) -> GridLayout:
    """One row per group, rows and units ordered by increasing slope.

    Each row starts with a group-summary panel (id ``"group:<label>"``)
    followed by the group's units. Ties are broken alphabetically.
    ``extents`` gives each panel's data-plus-fit y extent; the x range is
    shared by every panel.
    """
    missing = [u for u in unit_group if u not in unit_slopes]
    if missing:
        raise ConfigurationError(f"units without a slope estimate: {missing}")
    groups = sorted(set(unit_group.values()))
    missing = [g for g in groups if g not in group_slopes]
    if missing:
        raise ConfigurationError(f"groups without a slope estimate: {missing}")
    extents = dict(extents or {})

    row_order = sorted(groups, key=lambda g: (group_slopes[g], g))
    placed = []
    rows_meta = []
    for r, g in enumerate(row_order, start=1):
        role = group_role(g)
        rows_meta.append((g, role))
        members = sorted(
            (u for u, gg in unit_group.items() if gg == g),
            key=lambda u: (unit_slopes[u], u),
        )
        col = 1
        if group_panels:
            placed.append((GROUP_PREFIX + g, "group", r, col, g, role))
            col += 1
        for u in members:
            placed.append((u, "unit", r, col, u, role))
            col += 1

    row_of = {pid: r for pid, _, r, *_ in placed}
    y = compute_scales({pid: extents.get(pid) for pid in row_of}, row_of, policy)
    panels = [
        Panel(pid, kind, r, c, x_range, y[pid], label, role)
        for pid, kind, r, c, label, role in placed
    ]
    layout = GridLayout(panels, rows_meta, policy)
    layout.check()
    return layout


def wrap_layout(
    units: Sequence[str],
    ncol: int,
    extents: Mapping[str, Range | None] | None = None,
    x_range: Range = (0.0, 1.0),
    policy: str = "global",
) -> GridLayout:
    """Alphabetical facet wrap, the conventional one-panel-per-unit display."""
    units = sorted(units)
    extents = dict(extents or {})
    pos = {u: (i // ncol + 1, i % ncol + 1) for i, u in enumerate(units)}
    rows = {u: rc[0] for u, rc in pos.items()}
    y = compute_scales({u: extents.get(u) for u in units}, rows, policy)
    panels = [Panel(u, "unit", *pos[u], x_range, y[u], u) for u in units]
    return GridLayout(panels, [], policy)


# ---------------------------------------------------------------------------
# Geographic grid


@dataclass(frozen=True)
class GeoEntry:
    code: str
    name: str
    row: int
    col: int


@dataclass(frozen=True)
class GeoGridSpec:
    entries: tuple[GeoEntry, ...]

    def __post_init__(self):
        cells = [(e.row, e.col) for e in self.entries]
        if len(set(cells)) != len(cells):
            dup = sorted({c for c in cells if cells.count(c) > 1})
            raise ConfigurationError(f"geo grid cells used twice: {dup}")
        codes = [e.code for e in self.entries]
        if len(set(codes)) != len(codes):
            raise ConfigurationError("geo grid lists a unit twice")

    def __getitem__(self, code: str) -> GeoEntry:
        for e in self.entries:
            if e.code == code:
                return e
        raise KeyError(code)

    @property
    def codes(self) -> list[str]:
        return [e.code for e in self.entries]

    def names(self) -> dict[str, str]:
        return {e.code: e.name for e in self.entries}


def load_geo_spec(path: str | Path | None = None) -> GeoGridSpec:
    """Read a ``code,name,row,col`` file; without a path, the bundled Europe grid."""
    if path is None:
        text = resources.files("hbmvis.data").joinpath("europe_grid.csv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    reader = csv.DictReader(line for line in text.splitlines() if not line.startswith("#"))
    entries = tuple(
        GeoEntry(r["code"].strip(), r["name"].strip(), int(r["row"]), int(r["col"]))
        for r in reader
    )
    return GeoGridSpec(entries)


def geo_layout(
    spec: GeoGridSpec,
    units: Sequence[str],
    extents: Mapping[str, Range | None] | None = None,
    x_range: Range = (0.5, 5.5),
    strip_roles: Mapping[str, str] | None = None,
    label_roles: Mapping[str, str] | None = None,
) -> GridLayout:
    """Place unit panels at their map-like grid cells, each scaled freely.

    Raises
    ------
    CoverageError
        Some unit has no entry in ``spec``.
    """
    known = set(spec.codes)
    missing = [u for u in units if u not in known]
    if missing:
        raise CoverageError(f"units missing from geo grid: {', '.join(missing)}")
    extents = dict(extents or {})
    strip_roles = strip_roles or {}
    label_roles = label_roles or {}
    rows = {u: spec[u].row for u in units}
    y = compute_scales({u: extents.get(u) for u in units}, rows, "free")
    panels = [
        Panel(
            u, "unit", spec[u].row, spec[u].col, x_range, y[u], spec[u].name,
            strip_roles.get(u), label_roles.get(u),
        )
        for u in units
    ]
    layout = GridLayout(panels, [], "free")
    layout.check()
    return layout


def with_y_ranges(layout: GridLayout, ranges: Mapping[str, Range]) -> GridLayout:
    return replace(
        layout,
        panels=[replace(p, y_range=ranges.get(p.id, p.y_range)) for p in layout.panels],
    )
