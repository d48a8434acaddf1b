"""Colour roles. Every colour in an emitted document resolves through a Palette."""

from __future__ import annotations

import csv
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

PALETTE_ENV = "HBMVIS_PALETTE"
_HEX = re.compile(r"^#[0-9A-Fa-f]{6}$")


def lighten(hex_color: str, amount: float = 0.5) -> str:
    """Blend a colour toward white; ``amount=0.5`` is the midpoint."""
    r, g, b = (int(hex_color[i:i + 2], 16) for i in (1, 3, 5))
    mix = [round(c + (255 - c) * amount) for c in (r, g, b)]
    return "#" + "".join(f"{c:02X}" for c in mix)


_BASE = {
    # trend direction
    "negative": "#EE2C2C",
    "nonnegative": "#0000FF",
    # region strips
    "region.western": "#90EE90",
    "region.northern": "#CDC1C5",
    "region.eastern": "#4682B4",
    "region.southern": "#EED5B7",
    # income label text
    "income.high": "#000000",
    "income.middle": "#FF00FF",
    # one colour per model
    "model.1": "#4D4D4D",
    "model.2": "#6A3D9A",
    "model.3": "#1F78B4",
    "model.4": "#A52A2A",
    "model.5": "#CD950C",
    # chart furniture
    "background": "#FFFFFF",
    "panel": "#FFFFFF",
    "frame": "#7F7F7F",
    "gridline": "#EBEBEB",
    "text": "#000000",
    "axis": "#4D4D4D",
    "strip": "#D9D9D9",
    "point": "#000000",
    "point.pooled": "#7F7F7F",
    "reference": "#7F7F7F",
    "connector": "#4D4D4D",
    "interval": "#000000",
}


def default_roles() -> dict[str, str]:
    roles = dict(_BASE)
    roles["positive"] = roles["nonnegative"]
    roles["hyper.2"] = "#B19CD9"
    roles["hyper.3"] = "#ADD8E6"
    roles["hyper.4"] = lighten(roles["model.4"])
    roles["hyper.5"] = lighten(roles["model.5"])
    return roles


@dataclass
class Palette:
    roles: dict[str, str] = field(default_factory=default_roles)

    def __post_init__(self):
        for role, hx in self.roles.items():
            if not _HEX.match(hx):
                raise ValueError(f"palette role {role!r}: {hx!r} is not a #RRGGBB colour")

    def resolve(self, role: str) -> str:
        try:
            return self.roles[role]
        except KeyError:
            raise KeyError(f"no colour for role {role!r}") from None

    def has(self, role: str | None) -> bool:
        return role is not None and role in self.roles

    def override(self, mapping: Mapping[str, str]) -> "Palette":
        roles = dict(self.roles)
        roles.update({k.strip(): v.strip() for k, v in mapping.items()})
        return Palette(roles)


def group_role(grouping: str, label: str) -> str:
    """Role name for a group label, e.g. ``("region", "Western")`` -> ``"region.western"``."""
    return f"{grouping}.{label.strip().lower()}"


def load_palette(path: str | Path | None = None) -> Palette:
    """Default palette, overridden by a ``role,hex`` file.

    Without ``path`` the file named by ``HBMVIS_PALETTE`` is used when set.
    """
    path = path or os.environ.get(PALETTE_ENV)
    pal = Palette()
    if not path:
        return pal
    with open(path, encoding="utf-8", newline="") as fh:
        rows = csv.reader(line for line in fh if line.strip() and not line.startswith("#"))
        mapping = {}
        for row in rows:
            if row[:2] == ["role", "hex"]:
                continue
            mapping[row[0]] = row[1]
    return pal.override(mapping)
