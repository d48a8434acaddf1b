import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hbmvis.errors import ConfigurationError, CoverageError
from hbmvis.layout import (
    GROUP_PREFIX,
    GeoEntry,
    GeoGridSpec,
    compute_scales,
    geo_layout,
    load_geo_spec,
    pad_range,
    ragged_layout,
    trend_color,
)


def unit_order(layout):
    return [[p.id for p in layout.row(r) if p.kind == "unit"] for r in range(1, layout.n_rows + 1)]


def group_order(layout):
    return [layout.row(r)[0].id[len(GROUP_PREFIX):] for r in range(1, layout.n_rows + 1)]


slopes_strategy = st.dictionaries(
    st.text("ABCDEFGHIJ", min_size=1, max_size=3),
    st.tuples(st.floats(-10, 10, allow_nan=False), st.sampled_from("wxyz")),
    min_size=1,
    max_size=25,
)


class TestTrendColor:
    @pytest.mark.parametrize("slope,role", [(-0.5, "negative"), (1.2, "nonnegative"), (0.0, "nonnegative")])
    def test_roles(self, slope, role):
        assert trend_color(slope) == role


class TestScales:
    def test_global(self):
        out = compute_scales({"a": (300, 550), "b": (400, 500)}, {"a": 1, "b": 2}, "global")
        assert out["a"] == out["b"] == pytest.approx((287.5, 562.5))

    def test_per_row(self):
        ext = {"a": (300, 550), "b": (400, 500), "c": (0, 10)}
        out = compute_scales(ext, {"a": 1, "b": 1, "c": 2}, "per_row")
        assert out["a"] == out["b"]
        assert out["a"] != out["c"]

    def test_free(self):
        out = compute_scales({"a": (0, 10), "b": (5, 6)}, {"a": 1, "b": 1}, "free")
        assert out["a"] == pytest.approx((-0.5, 10.5))
        assert out["b"] == pytest.approx((4.95, 6.05))

    def test_empty_panel_falls_back_to_row(self):
        out = compute_scales({"a": (0, 10), "b": None}, {"a": 1, "b": 1}, "free")
        assert out["b"] == out["a"]

    def test_degenerate_extent_is_widened(self):
        lo, hi = pad_range(5.0, 5.0)
        assert lo < 5.0 < hi

    def test_unknown_policy(self):
        with pytest.raises(ConfigurationError):
            compute_scales({"a": (0, 1)}, {"a": 1}, "loose")


class TestRagged:
    def test_row_lengths(self):
        sizes = (8, 12, 11, 9)
        unit_group, unit_slopes = {}, {}
        for g, n in enumerate(sizes):
            for i in range(n):
                unit_group[f"g{g}u{i}"] = f"G{g}"
                unit_slopes[f"g{g}u{i}"] = float(i)
        group_slopes = {f"G{g}": float(g) for g in range(4)}
        lay = ragged_layout(unit_slopes, unit_group, group_slopes)
        assert [len(lay.row(r)) for r in range(1, 5)] == [9, 13, 12, 10]
        assert all(lay.row(r)[0].kind == "group" and lay.row(r)[0].col == 1 for r in range(1, 5))

    def test_steepest_decline_first(self):
        slopes = {"FIN": -2.8, "SWE": -0.4, "NOR": 0.2, "ISL": -1.9}
        lay = ragged_layout(slopes, {u: "Northern" for u in slopes}, {"Northern": -1.0})
        assert unit_order(lay) == [["FIN", "ISL", "SWE", "NOR"]]

    def test_ties_alphabetical(self):
        lay = ragged_layout({"B": 1.0, "A": 1.0}, {"A": "g", "B": "g"}, {"g": 0.0})
        assert unit_order(lay) == [["A", "B"]]

    def test_missing_slope(self):
        with pytest.raises(ConfigurationError):
            ragged_layout({"A": 1.0}, {"A": "g", "B": "g"}, {"g": 0.0})

    @settings(max_examples=500, deadline=None)
    @given(slopes_strategy, st.dictionaries(st.sampled_from("wxyz"), st.floats(-5, 5, allow_nan=False),
                                            min_size=4, max_size=4))
    def test_ordering_law(self, data, gslopes):
        unit_slopes = {u: s for u, (s, _) in data.items()}
        unit_group = {u: g for u, (_, g) in data.items()}
        lay = ragged_layout(unit_slopes, unit_group, gslopes)
        rows = group_order(lay)
        keys = [(gslopes[g], g) for g in rows]
        assert keys == sorted(keys)
        for members in unit_order(lay):
            k = [(unit_slopes[u], u) for u in members]
            assert k == sorted(k)
        lay.check()

    @settings(max_examples=200, deadline=None)
    @given(slopes_strategy, st.floats(0.1, 100))
    def test_scaling_invariance(self, data, c):
        # distinct slopes so the alphabetical tie rule does not interfere
        unit_slopes = {u: float(i) + 0.5 * s / 10 for i, (u, (s, _)) in enumerate(sorted(data.items()))}
        unit_group = {u: g for u, (_, g) in data.items()}
        gs = {g: float(i) for i, g in enumerate("wxyz")}
        base = ragged_layout(unit_slopes, unit_group, gs)
        pos = ragged_layout({u: c * s for u, s in unit_slopes.items()}, unit_group,
                            {g: c * s for g, s in gs.items()})
        neg = ragged_layout({u: -c * s for u, s in unit_slopes.items()}, unit_group,
                            {g: -c * s for g, s in gs.items()})
        assert unit_order(pos) == unit_order(base)
        assert group_order(neg) == group_order(base)[::-1]
        assert unit_order(neg) == [row[::-1] for row in unit_order(base)[::-1]]

    @settings(max_examples=100, deadline=None)
    @given(slopes_strategy, st.data())
    def test_per_row_shares_range(self, data, draw):
        unit_slopes = {u: s for u, (s, _) in data.items()}
        unit_group = {u: g for u, (_, g) in data.items()}
        ext = {}
        for u in unit_slopes:
            lo = draw.draw(st.floats(0, 500))
            ext[u] = (lo, lo + draw.draw(st.floats(0, 100)))
        lay = ragged_layout(unit_slopes, unit_group, {g: 0.0 for g in "wxyz"}, ext)
        for r in range(1, lay.n_rows + 1):
            ranges = {p.y_range for p in lay.row(r)}
            assert len(ranges) == 1


class TestGeo:
    def test_bundled_grid(self):
        spec = load_geo_spec()
        assert len(spec.codes) == 40
        cells = [(e.row, e.col) for e in spec.entries]
        assert len(set(cells)) == 40
        assert spec["FIN"].name == "Finland"

    def test_pass_through(self):
        spec = GeoGridSpec((GeoEntry("X", "Ex", 2, 5), GeoEntry("Y", "Why", 1, 1)))
        lay = geo_layout(spec, ["X"], {"X": (0, 1)})
        p = lay.panel("X")
        assert (p.row, p.col) == (2, 5)
        assert p.strip_label == "Ex"

    def test_missing_unit_named(self):
        spec = GeoGridSpec((GeoEntry("X", "Ex", 1, 1),))
        with pytest.raises(CoverageError, match="QQQ"):
            geo_layout(spec, ["X", "QQQ"])

    def test_duplicate_cell_rejected(self):
        with pytest.raises(ConfigurationError):
            GeoGridSpec((GeoEntry("X", "Ex", 1, 1), GeoEntry("Y", "Why", 1, 1)))

    def test_free_scaling(self):
        spec = load_geo_spec()
        lay = geo_layout(spec, ["FIN", "SWE"], {"FIN": (400, 550), "SWE": (480, 510)})
        assert lay.panel("FIN").y_range != lay.panel("SWE").y_range
        assert lay.scale_policy == "free"
