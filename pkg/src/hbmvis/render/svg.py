"""Scene primitives, tick selection and byte-deterministic SVG output."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union
from xml.sax.saxutils import escape, quoteattr

from hbmvis.render.palette import Palette

DEFAULT_SIZE = (1600, 1200)
_EPS = 1e-6


def fmt(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"non-finite coordinate {x}")
    s = f"{x:.3f}"
    return "0.000" if s == "-0.000" else s


@dataclass
class Rect:
    x: float
    y: float
    w: float
    h: float
    fill: str | None = None
    stroke: str | None = None
    stroke_width: float = 1.0
    cls: str = ""


@dataclass
class Line:
    x1: float
    y1: float
    x2: float
    y2: float
    stroke: str
    width: float = 1.0
    dash: str = ""
    cls: str = ""


@dataclass
class Polyline:
    points: list[tuple[float, float]]
    stroke: str
    width: float = 1.0
    dash: str = ""
    cls: str = ""


@dataclass
class Circle:
    cx: float
    cy: float
    r: float
    fill: str
    cls: str = ""


@dataclass
class Text:
    x: float
    y: float
    text: str
    fill: str = "text"
    size: float = 10.0
    anchor: str = "start"
    weight: str = ""
    cls: str = ""


@dataclass
class Group:
    id: str
    cls: str
    children: list["Element"] = field(default_factory=list)

    def add(self, *els: "Element") -> "Group":
        self.children.extend(els)
        return self


Element = Union[Rect, Line, Polyline, Circle, Text, Group]


@dataclass
class Scene:
    """Canvas size, palette and drawing-ordered elements."""

    width: float = DEFAULT_SIZE[0]
    height: float = DEFAULT_SIZE[1]
    elements: list[Element] = field(default_factory=list)
    palette: Palette = field(default_factory=Palette)
    title: str = ""
    meta: str = ""

    def add(self, *els: Element) -> "Scene":
        self.elements.extend(els)
        return self

    def walk(self, els: Sequence[Element] | None = None):
        for el in self.elements if els is None else els:
            yield el
            if isinstance(el, Group):
                yield from self.walk(el.children)


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    """Round tick positions inside ``[lo, hi]``.

    Steps are 1, 2, 2.5 or 5 times a power of ten; the step whose tick count
    is closest to ``target`` wins, the larger step on ties. Returns at least
    two ticks (the end points when the range is too narrow for any step).
    """
    if not hi > lo:
        raise ValueError("nice_ticks needs lo < hi")
    span = hi - lo
    raw = span / max(target - 1, 1)
    e = math.floor(math.log10(raw))
    best: tuple | None = None
    for exp in (e - 1, e, e + 1):
        for m in (1.0, 2.0, 2.5, 5.0):
            step = m * 10.0**exp
            first = math.ceil(lo / step - 1e-9)
            last = math.floor(hi / step + 1e-9)
            count = last - first + 1
            if count < 2:
                continue
            score = (abs(count - target), -step)
            if best is None or score < best[0]:
                best = (score, step, first, last)
    if best is None:
        return [lo, hi]
    _, step, first, last = best
    decimals = max(0, -math.floor(math.log10(step)) + (1 if step / 10 ** math.floor(math.log10(step)) == 2.5 else 0))
    return [round(i * step, decimals) for i in range(first, last + 1)]


def tick_label(v: float) -> str:
    if abs(v - round(v)) < 1e-9:
        return str(int(round(v)))
    return f"{v:.10g}"


def _dash(d: str) -> str:
    return f' stroke-dasharray="{d}"' if d else ""


def _cls(c: str) -> str:
    return f" class={quoteattr(c)}" if c else ""


class _Emitter:
    def __init__(self, scene: Scene):
        self.s = scene
        self.pal = scene.palette
        self.lines: list[str] = []

    def col(self, role: str | None) -> str:
        return "none" if role is None else self.pal.resolve(role)

    def inside(self, *pts):
        for x, y in pts:
            if not (-_EPS <= x <= self.s.width + _EPS and -_EPS <= y <= self.s.height + _EPS):
                raise ValueError(f"point ({x}, {y}) lies outside the canvas")

    def el(self, e: Element, depth: int) -> None:
        ind = "  " * depth
        if isinstance(e, Group):
            self.lines.append(f"{ind}<g id={quoteattr(e.id)}{_cls(e.cls)}>")
            for c in e.children:
                self.el(c, depth + 1)
            self.lines.append(f"{ind}</g>")
        elif isinstance(e, Rect):
            self.inside((e.x, e.y), (e.x + e.w, e.y + e.h))
            self.lines.append(
                f'{ind}<rect{_cls(e.cls)} x="{fmt(e.x)}" y="{fmt(e.y)}" width="{fmt(e.w)}" '
                f'height="{fmt(e.h)}" fill="{self.col(e.fill)}" stroke="{self.col(e.stroke)}" '
                f'stroke-width="{fmt(e.stroke_width)}"/>'
            )
        elif isinstance(e, Line):
            self.inside((e.x1, e.y1), (e.x2, e.y2))
            self.lines.append(
                f'{ind}<line{_cls(e.cls)} x1="{fmt(e.x1)}" y1="{fmt(e.y1)}" x2="{fmt(e.x2)}" '
                f'y2="{fmt(e.y2)}" stroke="{self.col(e.stroke)}" stroke-width="{fmt(e.width)}"'
                f"{_dash(e.dash)}/>"
            )
        elif isinstance(e, Polyline):
            self.inside(*e.points)
            pts = " ".join(f"{fmt(x)},{fmt(y)}" for x, y in e.points)
            self.lines.append(
                f'{ind}<polyline{_cls(e.cls)} points="{pts}" fill="none" '
                f'stroke="{self.col(e.stroke)}" stroke-width="{fmt(e.width)}"{_dash(e.dash)}/>'
            )
        elif isinstance(e, Circle):
            self.inside((e.cx, e.cy))
            self.lines.append(
                f'{ind}<circle{_cls(e.cls)} cx="{fmt(e.cx)}" cy="{fmt(e.cy)}" r="{fmt(e.r)}" '
                f'fill="{self.col(e.fill)}"/>'
            )
        elif isinstance(e, Text):
            self.inside((e.x, e.y))
            weight = f' font-weight="{e.weight}"' if e.weight else ""
            self.lines.append(
                f'{ind}<text{_cls(e.cls)} x="{fmt(e.x)}" y="{fmt(e.y)}" font-size="{fmt(e.size)}" '
                f'text-anchor="{e.anchor}" fill="{self.col(e.fill)}"{weight}>{escape(e.text)}</text>'
            )
        else:
            raise TypeError(f"unknown scene element {type(e).__name__}")


def emit_svg(scene: Scene) -> bytes:
    """Serialise a scene to SVG with fixed attribute order and 3-decimal numbers."""
    em = _Emitter(scene)
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{fmt(scene.width)}" '
        f'height="{fmt(scene.height)}" viewBox="0 0 {fmt(scene.width)} {fmt(scene.height)}" '
        f'font-family="Helvetica, Arial, sans-serif"'
    )
    out = ['<?xml version="1.0" encoding="UTF-8"?>']
    if scene.meta:
        out.append(f"<!-- {scene.meta.replace('--', '- -')} -->")
    if not scene.elements and not scene.title:
        out.append(head + "/>")
        return ("\n".join(out) + "\n").encode("utf-8")
    out.append(head + ">")
    if scene.title:
        out.append(f"  <title>{escape(scene.title)}</title>")
    for e in scene.elements:
        em.el(e, 1)
    out.extend(em.lines)
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode("utf-8")
