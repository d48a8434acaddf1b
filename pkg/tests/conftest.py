import numpy as np
import pytest

from hbmvis.dataset import GroupingTable, attach_composite, attach_grouping, make_dataset

CYCLE_YEARS = (2003, 2006, 2009, 2012, 2015, 2018)


def simulate_lines(rng, units, years, beta=(480.0, -1.0), Sigma=((400.0, 0.0), (0.0, 1.0)),
                   sigma=8.0, anchor=2018):
    """Records and true (intercept, slope) per unit from the country model."""
    Sigma = np.asarray(Sigma, dtype=float)
    u = rng.multivariate_normal(np.zeros(2), Sigma, size=len(units))
    truth = {}
    records = []
    for (a, b), unit in zip(u, units):
        icpt, slope = beta[0] + a, beta[1] + b
        truth[unit] = (icpt, slope)
        for yr in years:
            records.append((unit, yr, icpt + slope * (yr - anchor) + sigma * rng.standard_normal()))
    return records, truth


def with_groups(ds, region: dict, income: dict | None = None):
    ds = attach_grouping(ds, GroupingTable("region", region))
    if income is not None:
        ds = attach_grouping(ds, GroupingTable("income", income))
        ds = attach_composite(ds, "region", "income", "income_region")
    return ds


@pytest.fixture
def small_grouped():
    """Eight units in two regions and two income classes, six cycles each."""
    rng = np.random.default_rng(11)
    units = [f"U{i}" for i in range(8)]
    records, _ = simulate_lines(rng, units, CYCLE_YEARS)
    ds = make_dataset(records)
    region = {u: ("North" if i < 4 else "South") for i, u in enumerate(units)}
    income = {u: ("high" if i % 2 == 0 else "middle") for i, u in enumerate(units)}
    return with_groups(ds, region, income)


def write_europe_like(path, seed=0, single=("BLR", "BIH", "UKR"), holdout_path=None):
    """Synthetic scores for the 40 bundled grid units (not real survey data)."""
    from hbmvis.layout import load_geo_spec

    rng = np.random.default_rng(seed)
    codes = load_geo_spec().codes
    lines = ["country,year,math"]
    hold = ["country,year,math"]
    for code in codes:
        icpt = 480 + 25 * rng.standard_normal()
        slope = -0.8 + 1.0 * rng.standard_normal()
        years = (2018,) if code in single else CYCLE_YEARS
        for yr in years:
            lines.append(f"{code},{yr},{icpt + slope * (yr - 2018) + 6 * rng.standard_normal():.1f}")
        hold.append(f"{code},2022,{icpt + slope * 4 - 15 + 6 * rng.standard_normal():.1f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if holdout_path is not None:
        holdout_path.write_text("\n".join(hold) + "\n", encoding="utf-8")
    return codes


@pytest.fixture
def europe_files(tmp_path):
    data, hold = tmp_path / "scores.csv", tmp_path / "holdout.csv"
    write_europe_like(data, holdout_path=hold)
    return data, hold
