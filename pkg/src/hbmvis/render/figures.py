"""Scene builders for the model-in-data-space, parameter-comparison, offset and
prediction-error displays."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from hbmvis.dataset import Dataset
from hbmvis.layout import GROUP_PREFIX, GridLayout, Panel, pad_range, trend_color
from hbmvis.posterior import IntervalSummary
from hbmvis.render.palette import Palette
from hbmvis.render.svg import (
    DEFAULT_SIZE,
    Circle,
    Group,
    Line,
    Polyline,
    Rect,
    Scene,
    Text,
    nice_ticks,
    tick_label,
)

MARGIN = (48.0, 40.0, 16.0, 24.0)  # left, top, right, bottom
GUTTER = 8.0
STRIP_H = 16.0
AXIS_LEFT = 34.0
AXIS_BOTTOM = 16.0
FONT = 9.0
TITLE_FONT = 14.0
# stroke width per interval level: thinner for wider intervals
LEVEL_WIDTH = {0.5: 5.0, 0.8: 3.0, 0.95: 1.2}
MODEL_OFFSET = 0.16


def _bar_width(level: float) -> float:
    return LEVEL_WIDTH.get(round(level, 6), max(1.0, 6.0 * (1 - level)))


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float


class PanelFrame:
    """Pixel geometry of one panel and the data-to-pixel mapping inside it."""

    def __init__(self, cell: Box, panel: Panel):
        self.panel = panel
        self.cell = cell
        self.plot = Box(
            cell.x + AXIS_LEFT,
            cell.y + STRIP_H,
            max(cell.w - AXIS_LEFT, 1.0),
            max(cell.h - STRIP_H - AXIS_BOTTOM, 1.0),
        )

    def px(self, x: float) -> float:
        lo, hi = self.panel.x_range
        return self.plot.x + (x - lo) / (hi - lo) * self.plot.w

    def py(self, y: float) -> float:
        lo, hi = self.panel.y_range
        return self.plot.y + self.plot.h - (y - lo) / (hi - lo) * self.plot.h

    def clip_line(self, intercept: float, slope: float):
        """End points of ``y = intercept + slope * x`` inside the panel, or None."""
        x0, x1 = self.panel.x_range
        y0, y1 = self.panel.y_range
        if slope != 0:
            xa, xb = sorted(((y0 - intercept) / slope, (y1 - intercept) / slope))
            x0, x1 = max(x0, xa), min(x1, xb)
        elif not y0 <= intercept <= y1:
            return None
        if x1 <= x0:
            return None
        return (self.px(x0), self.py(intercept + slope * x0)), (self.px(x1), self.py(intercept + slope * x1))


def grid_cells(layout: GridLayout, width: float, height: float, top_extra: float = 0.0) -> dict[str, Box]:
    left, top, right, bottom = MARGIN
    top += top_extra
    nr, nc = max(layout.n_rows, 1), max(layout.n_cols, 1)
    cw = (width - left - right - GUTTER * (nc - 1)) / nc
    ch = (height - top - bottom - GUTTER * (nr - 1)) / nr
    return {
        p.id: Box(left + (p.col - 1) * (cw + GUTTER), top + (p.row - 1) * (ch + GUTTER), cw, ch)
        for p in layout.panels
    }


def _label_stride(xs, labels, size: float) -> int:
    """Smallest k such that labelling every k-th tick leaves no overlap."""
    if len(xs) < 2:
        return 1
    width = max(len(lab) for lab in labels) * 0.6 * size + 4
    gap = min(b - a for a, b in zip(xs, xs[1:]))
    return max(1, math.ceil(width / gap)) if gap > 0 else len(xs)


def _panel_group(frame: PanelFrame, palette: Palette, x_ticks: bool = True, y_ticks: bool = True,
                 label_role: str | None = None, x_tick_values=None, x_tick_labels=None) -> Group:
    p = frame.panel
    g = Group(f"panel-{p.id}", f"panel {p.kind}")
    pl = frame.plot
    g.add(Rect(pl.x, pl.y, pl.w, pl.h, fill="panel", stroke="frame", stroke_width=0.8, cls="frame"))
    strip_fill = p.strip_role if palette.has(p.strip_role) else "strip"
    g.add(Rect(pl.x, frame.cell.y, pl.w, STRIP_H, fill=strip_fill, stroke="frame", stroke_width=0.8, cls="strip"))
    text_role = label_role or p.label_role
    g.add(Text(pl.x + pl.w / 2, frame.cell.y + STRIP_H - 4, p.strip_label,
               fill=text_role if palette.has(text_role) else "text", size=FONT, anchor="middle",
               weight="bold" if p.kind == "group" else "", cls="strip-label"))
    if y_ticks:
        for v in nice_ticks(*p.y_range, target=4):
            y = frame.py(v)
            g.add(Line(pl.x, y, pl.x + pl.w, y, "gridline", 0.5, cls="grid"))
            g.add(Text(pl.x - 3, y + 3, tick_label(v), fill="axis", size=FONT - 1, anchor="end", cls="tick"))
    if x_ticks:
        values = x_tick_values if x_tick_values is not None else nice_ticks(*p.x_range, target=4)
        labels = x_tick_labels or [tick_label(v) for v in values]
        xs = [frame.px(v) for v in values]
        keep = _label_stride(xs, labels, FONT - 1)
        for i, (x, lab) in enumerate(zip(xs, labels)):
            g.add(Line(x, pl.y + pl.h, x, pl.y + pl.h + 3, "axis", 0.6, cls="tick-mark"))
            if i % keep == 0:
                g.add(Text(x, pl.y + pl.h + 12, lab, fill="axis", size=FONT - 1, anchor="middle", cls="tick"))
    return g


def _title(scene: Scene, text: str) -> None:
    if text:
        scene.add(Text(MARGIN[0], MARGIN[1] - 16, text, size=TITLE_FONT, weight="bold", cls="figure-title"))


def _point_interval_vertical(g: Group, frame: PanelFrame, x: float, s: IntervalSummary,
                             role: str, cls: str, radius: float = 2.6) -> None:
    px = frame.px(x)
    for level, lo, hi in sorted(s.intervals, key=lambda t: -t[0]):
        g.add(Line(px, frame.py(lo), px, frame.py(hi), role, _bar_width(level), cls=f"interval {cls} level-{level:g}"))
    g.add(Circle(px, frame.py(s.median), radius, role, cls=f"median {cls}"))


def _point_interval_horizontal(g: Group, frame: PanelFrame, y: float, s: IntervalSummary,
                               role: str, cls: str, radius: float = 2.6) -> None:
    py = frame.py(y)
    for level, lo, hi in sorted(s.intervals, key=lambda t: -t[0]):
        g.add(Line(frame.px(lo), py, frame.px(hi), py, role, _bar_width(level), cls=f"interval {cls} level-{level:g}"))
    g.add(Circle(frame.px(s.median), py, radius, role, cls=f"median {cls}"))


# ---------------------------------------------------------------------------
# Model in data space


def render_data_space(
    layout: GridLayout,
    ds: Dataset,
    unit_lines: Mapping[str, tuple[float, float]],
    group_lines: Mapping[str, tuple[float, float]] | None = None,
    unit_group: Mapping[str, str] | None = None,
    palette: Palette | None = None,
    title: str = "",
    size: tuple[float, float] = DEFAULT_SIZE,
) -> Scene:
    """Observed points with each panel's posterior-median line.

    Lines are ``(intercept, slope)`` on the recentred time scale and are
    drawn in calendar years; their colour follows the sign of the slope.
    Group panels pool the points of the group's units and show the group
    line.
    """
    palette = palette or Palette()
    group_lines = group_lines or {}
    unit_group = unit_group or {}
    scene = Scene(size[0], size[1], palette=palette, title=title)
    _title(scene, title)
    cells = grid_cells(layout, *size)
    points: dict[str, list[tuple[int, float]]] = {}
    for o in ds.observations:
        points.setdefault(o.unit, []).append((o.year, o.value))
    anchor = ds.anchor_year

    for p in layout.panels:
        frame = PanelFrame(cells[p.id], p)
        g = _panel_group(frame, palette)
        if p.kind == "group":
            label = p.id[len(GROUP_PREFIX):]
            pts = [pt for u, gg in unit_group.items() if gg == label for pt in points.get(u, [])]
            line = group_lines.get(label)
            point_role = "point.pooled"
        else:
            pts = points.get(p.id, [])
            line = unit_lines.get(p.id)
            point_role = "point"
        for yr, val in sorted(pts):
            g.add(Circle(frame.px(yr), frame.py(val), 2.0, point_role, cls="obs"))
        if line is not None and pts:
            icpt, slope = line
            # y = icpt + slope * (year - anchor)
            ends = frame.clip_line(icpt - slope * anchor, slope)
            if ends:
                (x1, y1), (x2, y2) = ends
                g.add(Line(x1, y1, x2, y2, trend_color(slope), 1.6, cls=f"fit {trend_color(slope)}"))
        scene.add(g)
    return scene


def data_extent(values: Sequence[float]):
    values = list(values)
    return (min(values), max(values)) if values else None


# ---------------------------------------------------------------------------
# Multi-model parameter comparison


def render_param_compare(
    layout: GridLayout,
    unit_summaries: Mapping[int, Mapping[str, IntervalSummary]],
    hyper_summaries: Mapping[int, Mapping[str, IntervalSummary]],
    param: str = "intercept",
    palette: Palette | None = None,
    title: str = "",
    size: tuple[float, float] = DEFAULT_SIZE,
) -> Scene:
    """Per-unit point-intervals for models 1..5 with lighter hyper companions.

    ``unit_summaries[m][unit]`` summarises model ``m``'s estimate for the
    unit; ``hyper_summaries[m][unit]`` the group-level estimate the unit
    draws from (absent for the non-pooled model). Missing models leave
    their position empty.
    """
    palette = palette or Palette()
    scene = Scene(size[0], size[1], palette=palette, title=title or f"{param} by model")
    _title(scene, title)
    cells = grid_cells(layout, *size)
    models = sorted(unit_summaries)
    for p in layout.panels:
        frame = PanelFrame(cells[p.id], p)
        g = _panel_group(frame, palette, x_tick_values=[1, 2, 3, 4, 5],
                         x_tick_labels=["1", "2", "3", "4", "5"])
        connector = []
        for m in models:
            s = unit_summaries[m].get(p.id)
            if s is None:
                continue
            x_unit = m - MODEL_OFFSET if m > 1 else m
            connector.append((frame.px(x_unit), frame.py(s.median)))
            h = hyper_summaries.get(m, {}).get(p.id)
            if h is not None and m > 1:
                _point_interval_vertical(g, frame, m + MODEL_OFFSET, h, f"hyper.{m}", f"hyper model-{m}", 2.2)
            _point_interval_vertical(g, frame, x_unit, s, f"model.{m}", f"unit model-{m}")
        if len(connector) > 1:
            g.add(Polyline(connector, "connector", 0.8, dash="3,2", cls="connector"))
        scene.add(g)
    return scene


def compare_extents(unit_summaries, hyper_summaries, units) -> dict[str, tuple[float, float]]:
    """Vertical extent of everything drawn in each parameter-comparison panel."""
    out = {}
    for u in units:
        vals = []
        for table in list(unit_summaries.values()) + list(hyper_summaries.values()):
            s = table.get(u)
            if s is not None:
                vals += [s.median] + [v for _, lo, hi in s.intervals for v in (lo, hi)]
        out[u] = data_extent(vals)
    return out


# ---------------------------------------------------------------------------
# Offsets


def render_offset_plot(
    offsets: Mapping[str, IntervalSummary],
    names: Mapping[str, str] | None = None,
    palette: Palette | None = None,
    title: str = "",
    size: tuple[float, float] = (800, 1000),
) -> Scene:
    """One row per unit, sorted by median offset, around a zero reference line."""
    palette = palette or Palette()
    names = names or {}
    scene = Scene(size[0], size[1], palette=palette, title=title or "offsets")
    _title(scene, title)
    units = sorted(offsets, key=lambda u: (offsets[u].median, u))
    vals = [0.0] + [v for s in offsets.values() for _, lo, hi in s.intervals for v in (lo, hi)]
    vals += [s.median for s in offsets.values()]
    x_range = pad_range(min(vals), max(vals))
    n = max(len(units), 1)
    panel = Panel("offsets", "unit", 1, 1, x_range, (0.5, n + 0.5), "offset from global estimate")
    left, top, right, bottom = MARGIN
    cell = Box(left + 90, top, size[0] - left - right - 90, size[1] - top - bottom)
    frame = PanelFrame(cell, panel)
    g = _panel_group(frame, palette, y_ticks=False)
    zx = frame.px(0.0)
    g.add(Line(zx, frame.plot.y, zx, frame.plot.y + frame.plot.h, "reference", 1.0, dash="4,3", cls="reference"))
    for i, u in enumerate(units):
        row_y = n - i  # lowest median on the top row
        g.add(Text(frame.plot.x - 4, frame.py(row_y) + 3, names.get(u, u), size=FONT, anchor="end", cls="row-label"))
        _point_interval_horizontal(g, frame, row_y, offsets[u], "interval", "offset")
    scene.add(g)
    return scene


# ---------------------------------------------------------------------------
# Prediction errors


def render_prediction_error(
    errors: Mapping[str, IntervalSummary],
    unit_group: Mapping[str, str],
    names: Mapping[str, str] | None = None,
    palette: Palette | None = None,
    strip_role=lambda g: None,
    label_role=lambda g: None,
    title: str = "",
    size: tuple[float, float] = (900, 1100),
) -> Scene:
    """Error point-intervals in one block per group, ascending within a block.

    All blocks share the horizontal error scale and a zero reference line.
    """
    palette = palette or Palette()
    names = names or {}
    scene = Scene(size[0], size[1], palette=palette, title=title or "prediction error")
    _title(scene, title)
    groups = sorted({unit_group[u] for u in errors})
    blocks = {
        g: sorted((u for u in errors if unit_group[u] == g), key=lambda u: (errors[u].median, u))
        for g in groups
    }
    vals = [0.0] + [v for s in errors.values() for _, lo, hi in s.intervals for v in (lo, hi)]
    x_range = pad_range(min(vals), max(vals))

    left, top, right, bottom = MARGIN
    n_rows = sum(len(b) for b in blocks.values())
    avail = size[1] - top - bottom - len(groups) * (STRIP_H + AXIS_BOTTOM + GUTTER)
    row_h = avail / max(n_rows, 1)
    y = top
    for gname in groups:
        units = blocks[gname]
        h = STRIP_H + AXIS_BOTTOM + row_h * len(units)
        panel = Panel(
            GROUP_PREFIX + gname, "group", len(scene.elements), 1, x_range,
            (0.5, len(units) + 0.5), gname, strip_role(gname), label_role(gname),
        )
        frame = PanelFrame(Box(left + 90, y, size[0] - left - right - 90, h), panel)
        g = _panel_group(frame, palette, y_ticks=False)
        zx = frame.px(0.0)
        g.add(Line(zx, frame.plot.y, zx, frame.plot.y + frame.plot.h, "reference", 1.0, dash="4,3", cls="reference"))
        for i, u in enumerate(units):
            row_y = len(units) - i
            g.add(Text(frame.plot.x - 4, frame.py(row_y) + 3, names.get(u, u), size=FONT, anchor="end", cls="row-label"))
            _point_interval_horizontal(g, frame, row_y, errors[u], "interval", "error")
        scene.add(g)
        y += h + GUTTER
    return scene
