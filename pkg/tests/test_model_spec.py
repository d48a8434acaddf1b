import pytest

from hbmvis.dataset import GroupingTable, attach_grouping, make_dataset
from hbmvis.errors import ConfigurationError
from hbmvis.model_spec import ModelKind, build_spec, parameter_index


def forty_units(n_regions=4):
    units = [f"C{i:02d}" for i in range(40)]
    ds = make_dataset([(u, 2018, 500.0) for u in units])
    region = {u: f"R{i % n_regions}" for i, u in enumerate(units)}
    return attach_grouping(ds, GroupingTable("region", region))


def enumerate_names(kind, units, levels):
    """Independent spelling of the canonical names, for counting."""
    if kind == "nonpooled":
        return [f"{p}[{u}]" for u in units for p in ("alpha", "gamma")] + ["sigma"]
    names = ["beta0", "beta1", "sigma"]
    for term, lvls in levels:
        for lv in lvls:
            names += [f"u[{term},{lv},int]", f"u[{term},{lv},slope]"]
        names += [f"Sigma[{term},{s}]" for s in ("ii", "is", "ss")]
    return names


class TestBuildSpec:
    def test_country(self):
        spec = build_spec("country", forty_units())
        assert [g.name for g in spec.group_terms] == ["country"]

    def test_region_terms_parent_first(self):
        spec = build_spec("region", forty_units())
        assert [g.name for g in spec.group_terms] == ["region", "country"]
        assert spec.parent_term.levels == ("R0", "R1", "R2", "R3")

    def test_nonpooled_has_no_terms(self):
        spec = build_spec(ModelKind.NONPOOLED, forty_units())
        assert spec.group_terms == ()
        assert not spec.is_pooled

    def test_missing_grouping(self):
        ds = make_dataset([("A", 2018, 1.0)])
        with pytest.raises(ConfigurationError, match="income"):
            build_spec("income", ds)

    def test_model_numbers(self):
        assert [k.number for k in ModelKind] == [1, 2, 3, 4, 5]


class TestParameterIndex:
    @pytest.mark.parametrize(
        "kind,expected", [("country", 86), ("nonpooled", 81), ("region", 97)]
    )
    def test_counts_by_enumeration(self, kind, expected):
        ds = forty_units()
        spec = build_spec(kind, ds)
        levels = [(g.name, g.levels) for g in spec.group_terms]
        names = enumerate_names(kind, spec.units, levels)
        idx = parameter_index(spec, ds)
        assert len(names) == expected
        assert list(idx.names) == names

    def test_count_formula(self):
        ds = forty_units(n_regions=3)
        spec = build_spec("region", ds)
        assert len(parameter_index(spec)) == 3 + sum(2 * len(g.levels) + 3 for g in spec.group_terms)

    def test_deterministic(self):
        a = parameter_index(build_spec("region", forty_units()))
        b = parameter_index(build_spec("region", forty_units()))
        assert a.names == b.names

    def test_names_unique(self):
        idx = parameter_index(build_spec("region", forty_units()))
        assert len(set(idx.names)) == len(idx)
