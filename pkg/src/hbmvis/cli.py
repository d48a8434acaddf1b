"""Command-line front end: fit, summarise, evaluate and plot."""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from hbmvis import __version__
from hbmvis.dataset import (
    DEFAULT_ANCHOR_YEAR,
    Dataset,
    GroupingTable,
    attach_composite,
    attach_grouping,
    load_grouping,
    load_observations,
    validate,
)
from hbmvis.diagnostics import diagnostics, format_table
from hbmvis.errors import ConfigurationError, HbmError
from hbmvis.evaluation import (
    compare_models,
    comparison_to_csv,
    loo_to_csv,
    pairwise_differences,
    pointwise_loglik,
    prediction_error,
    psis_loo,
    read_loo_csv,
)
from hbmvis.layout import (
    GROUP_PREFIX,
    geo_layout,
    load_geo_spec,
    pad_range,
    ragged_layout,
    wrap_layout,
)
from hbmvis.model_spec import ModelKind, build_spec
from hbmvis.posterior import (
    DEFAULT_LEVELS,
    PREDICTION_LEVELS,
    composite_unit_params,
    offsets,
    records_to_csv,
    summarize,
    summary_records,
    SUMMARY_FIELDS,
)
from hbmvis.render import (
    emit_svg,
    load_palette,
    render_data_space,
    render_offset_plot,
    render_param_compare,
    render_prediction_error,
)
from hbmvis.render.figures import compare_extents, data_extent
from hbmvis.render.palette import group_role
from hbmvis.sampler import McmcConfig, PosteriorDraws, fit, load_draws, meta_line, save_draws

logger = logging.getLogger("hbmvis")

BUNDLED_GROUPINGS = ("region", "income")


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _bundled_grouping(name: str) -> GroupingTable:
    with resources.as_file(resources.files("hbmvis.data").joinpath(f"{name}.csv")) as p:
        return load_grouping(p, name)


# ---------------------------------------------------------------------------
# Shared argument handling


def _levels(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}") from None


def _grouping_arg(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError("expected name=path")
    name, path = text.split("=", 1)
    return name.strip().lower(), path


def _add_data_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--data", required=required, help="observations: country,year,math")
    p.add_argument("--grouping", action="append", type=_grouping_arg, default=[],
                   metavar="NAME=PATH", help="grouping table country,group (repeatable)")
    p.add_argument("--no-default-groupings", action="store_true",
                   help="do not attach the bundled region/income tables")
    p.add_argument("--anchor-year", type=int, default=DEFAULT_ANCHOR_YEAR)


def _add_mcmc_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--seed", type=int, default=1)


def load_dataset(args) -> Dataset:
    """Observations plus groupings: explicit files first, bundled tables where they cover the data."""
    ds = load_observations(args.data, anchor_year=args.anchor_year)
    given = dict(args.grouping)
    for name, path in given.items():
        ds = attach_grouping(ds, load_grouping(path, name))
    if not args.no_default_groupings:
        for name in BUNDLED_GROUPINGS:
            if name in given:
                continue
            table = _bundled_grouping(name)
            if all(u in table.assignment for u in ds.units):
                ds = attach_grouping(ds, table)
            else:
                logger.info("bundled %s table does not cover the data; not attached", name)
    if ds.has_grouping("region") and ds.has_grouping("income") and not ds.has_grouping("income_region"):
        ds = attach_composite(ds, "region", "income", "income_region")
    return ds


def _input_meta(args, *paths) -> dict:
    out = {"seed": getattr(args, "seed", None)}
    for label, p in paths:
        if p:
            out[f"{label}_sha256"] = file_digest(p)
    return {k: v for k, v in out.items() if v is not None}


def _write(path, content: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(content, str):
        content = content.encode("utf-8")
    path.write_bytes(content)


def _svg(scene, meta: dict) -> bytes:
    scene.meta = meta_line("figure", meta)[2:]
    return emit_svg(scene)


def _names() -> dict[str, str]:
    try:
        return load_geo_spec().names()
    except Exception:  # bundled grid unreadable: fall back to codes
        return {}


# ---------------------------------------------------------------------------
# Roles for group labels


def strip_role(grouping: str, label: str) -> str | None:
    """Strip colour role: region labels (also the region part of a composite)."""
    if grouping in ("region", "income_region"):
        return group_role("region", label.split(":")[0])
    return None


def label_role(grouping: str, label: str) -> str | None:
    if grouping == "income":
        return group_role("income", label)
    if grouping == "income_region" and ":" in label:
        return group_role("income", label.split(":", 1)[1])
    return None


# ---------------------------------------------------------------------------
# Subcommands


def cmd_fit(args) -> int:
    ds = load_dataset(args)
    report = validate(ds)
    for line in report.lines():
        logger.info(line)
    spec = build_spec(args.model, ds)
    mc = McmcConfig(args.chains, args.iters, args.warmup, args.seed, args.thin)
    draws = fit(spec, ds, mc)
    draws.meta["data_file_sha256"] = file_digest(args.data)
    save_draws(draws, args.out)
    if mc.chains >= 2 and mc.draws_per_chain >= 4:
        rows = diagnostics(draws)
        flagged = [r.parameter for r in rows if r.flagged]
        if flagged:
            logger.warning("Rhat > 1.01 for %d parameter(s): %s", len(flagged), ", ".join(flagged[:10]))
        if args.diagnostics:
            _write(args.diagnostics, format_table(rows))
    print(f"wrote {draws.n_draws} draws x {len(draws.index)} parameters to {args.out}")
    return 0


def cmd_summarize(args) -> int:
    ds = load_dataset(args)
    draws = load_draws(args.draws, ds)
    recs = summary_records(draws, args.levels)
    header = meta_line("summary", {**draws.meta_header(), **_input_meta(args, ("draws", args.draws))})
    text = records_to_csv(recs, SUMMARY_FIELDS, header)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _loo_for(draws: PosteriorDraws, ds: Dataset):
    return psis_loo(pointwise_loglik(draws, ds))


def cmd_loo(args) -> int:
    ds = load_dataset(args)
    draws = load_draws(args.draws, ds)
    ds = Dataset(ds.observations, draws.anchor_year, ds.groupings)
    res = _loo_for(draws, ds)
    print(f"model {draws.spec.kind.value}: elpd_loo = {res.elpd_loo:.2f} (SE {res.se:.2f}); "
          f"{len(res.flagged)} observation(s) with Pareto k > 0.7")
    if args.out:
        header = meta_line("loo", {"model": draws.spec.kind.value, **_input_meta(args, ("draws", args.draws), ("data", args.data))})
        _write(args.out, loo_to_csv(res, ds, header))
    return 0


def cmd_compare(args) -> int:
    names = args.names.split(",") if args.names else [Path(p).stem for p in args.results]
    if len(names) != len(args.results):
        raise ConfigurationError("--names must list one name per result file")
    results = {n: read_loo_csv(p) for n, p in zip(names, args.results)}
    rows = compare_models(results)
    header = meta_line("compare", {f"in{i}_sha256": file_digest(p) for i, p in enumerate(args.results)})
    text = comparison_to_csv(rows, header)
    sys.stdout.write(text)
    for a, b, d, se in pairwise_differences(results):
        print(f"# {a} - {b}: {d:.2f} (SE {se:.2f})")
    if args.out:
        _write(args.out, text)
    return 0


def _prediction_records(errs, model: str) -> list[dict]:
    recs = []
    for u, pe in errs.items():
        for lv, lo, hi in pe.summary.intervals:
            recs.append(dict(unit=u, year=pe.year, model=model, observed=pe.observed,
                             median=pe.summary.median, level=lv, lower=lo, upper=hi))
    return recs


def cmd_predict(args) -> int:
    ds = load_dataset(args)
    draws = load_draws(args.draws, ds)
    holdout = load_observations(args.holdout, anchor_year=draws.anchor_year)
    errs = prediction_error(draws, holdout, args.levels)
    header = meta_line("prediction_error", {"model": draws.spec.kind.value, **_input_meta(
        args, ("draws", args.draws), ("holdout", args.holdout))})
    text = records_to_csv(
        _prediction_records(errs, draws.spec.kind.value),
        ["unit", "year", "model", "observed", "median", "level", "lower", "upper"], header)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# Figures


def data_space_scene(draws: PosteriorDraws, ds: Dataset, scales: str, palette, ncol: int = 8, title: str = ""):
    """Model-in-data-space figure: ragged rows by parent group, else a facet wrap."""
    params = composite_unit_params(draws)
    med = lambda x: float(np.median(x))  # noqa: E731
    unit_lines = {u: (med(params.intercept[u]), med(params.slope[u])) for u in draws.spec.units}
    group_lines = {g: (med(params.hyper_intercept[g]), med(params.hyper_slope[g])) for g in params.hyper_intercept}
    years = ds.years
    x_range = pad_range(float(years.min()), float(years.max()))
    anchor = draws.anchor_year

    def line_ext(line):
        a, b = line
        return [a + b * (x_range[0] - anchor), a + b * (x_range[1] - anchor)]

    by_unit: dict[str, list[float]] = {}
    for o in ds.observations:
        by_unit.setdefault(o.unit, []).append(o.value)
    extents = {u: data_extent(by_unit.get(u, []) + line_ext(unit_lines[u])) for u in draws.spec.units}

    parent = draws.spec.parent_term
    if parent is None:
        layout = wrap_layout(draws.spec.units, ncol, extents, x_range, policy="global" if scales == "per_row" else scales)
        unit_group = {}
    else:
        unit_group = dict(parent.unit_level)
        for g in parent.levels:
            vals = [v for u, gg in unit_group.items() if gg == g for v in by_unit.get(u, [])]
            extents[GROUP_PREFIX + g] = data_extent(vals + line_ext(group_lines[g]))
        layout = ragged_layout(
            {u: unit_lines[u][1] for u in draws.spec.units},
            unit_group,
            {g: group_lines[g][1] for g in parent.levels},
            extents, x_range, scales,
            group_role=lambda g: strip_role(parent.name, g),
        )
    return render_data_space(layout, ds, unit_lines, group_lines, unit_group, palette, title)


def compare_scene(all_draws: Sequence[PosteriorDraws], ds: Dataset, param: str, geo, palette, title: str = ""):
    unit_s: dict[int, dict] = {}
    hyper_s: dict[int, dict] = {}
    units = list(ds.units)
    for d in all_draws:
        m = d.spec.kind.number
        if m in unit_s:
            raise ConfigurationError(f"two draws files for model {d.spec.kind.value}")
        params = composite_unit_params(d)
        source = params.intercept if param == "intercept" else params.slope
        unit_s[m] = {u: summarize(source[u], DEFAULT_LEVELS) for u in d.spec.units}
        if d.spec.is_pooled:
            hyper = params.hyper_intercept if param == "intercept" else params.hyper_slope
            cache = {g: summarize(x, DEFAULT_LEVELS) for g, x in hyper.items()}
            hyper_s[m] = {u: cache[params.unit_group[u]] for u in d.spec.units}
    extents = compare_extents(unit_s, hyper_s, units)
    strips = {u: strip_role("region", ds.grouping("region")[u]) for u in units} if ds.has_grouping("region") else {}
    labels = {u: label_role("income", ds.grouping("income")[u]) for u in units} if ds.has_grouping("income") else {}
    layout = geo_layout(geo, units, extents, strip_roles=strips, label_roles=labels)
    return render_param_compare(layout, unit_s, hyper_s, param, palette, title)


def offsets_scene(draws: PosteriorDraws, palette, title: str = ""):
    offs = offsets(draws)
    summaries = {u: summarize(ui, [0.95]) for u, (ui, _) in offs.items()}
    return render_offset_plot(summaries, _names(), palette, title)


def prediction_error_scene(draws: PosteriorDraws, ds: Dataset, holdout: Dataset, levels, palette, title: str = ""):
    errs = prediction_error(draws, holdout, levels)
    grouping = "income_region" if ds.has_grouping("income_region") else None
    if grouping:
        unit_group = {u: ds.grouping(grouping)[u] for u in errs}
    else:
        unit_group = {u: "all" for u in errs}
    scene = render_prediction_error(
        {u: e.summary for u, e in errs.items()}, unit_group, _names(), palette,
        strip_role=lambda g: strip_role("income_region", g) if grouping else None,
        label_role=lambda g: label_role("income_region", g) if grouping else None,
        title=title,
    )
    return scene, errs


def cmd_plot(args) -> int:
    palette = load_palette(args.palette)
    ds = load_dataset(args)
    what = args.plot
    if what == "compare-params":
        all_draws = [load_draws(p, ds) for p in args.draws]
        geo = load_geo_spec(args.grid)
        scene = compare_scene(all_draws, ds, args.param, geo, palette, args.title)
        meta = _input_meta(args, *[(f"draws{i}", p) for i, p in enumerate(args.draws)])
    else:
        draws = load_draws(args.draws, ds)
        ds = Dataset(ds.observations, draws.anchor_year, ds.groupings)
        meta = {"model": draws.spec.kind.value, "seed": draws.meta.get("seed"),
                **_input_meta(args, ("draws", args.draws), ("data", args.data))}
        if what == "data-space":
            scene = data_space_scene(draws, ds, args.scales, palette, title=args.title)
        elif what == "offsets":
            scene = offsets_scene(draws, palette, args.title)
        else:
            holdout = load_observations(args.holdout, anchor_year=draws.anchor_year)
            scene, _ = prediction_error_scene(draws, ds, holdout, args.levels, palette, args.title)
            meta["holdout_sha256"] = file_digest(args.holdout)
    _write(args.out, _svg(scene, meta))
    print(f"wrote {args.out}")
    return 0


def cmd_reproduce(args) -> int:
    """Fit all five models and write the six figures plus the LOO comparison."""
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    palette = load_palette(args.palette)
    ds = load_dataset(args)
    for line in validate(ds).lines():
        print(f"# {line}")
    mc = McmcConfig(args.chains, args.iters, args.warmup, args.seed, args.thin)
    base_meta = {"seed": args.seed, "data_sha256": file_digest(args.data)}
    if args.holdout:
        base_meta["holdout_sha256"] = file_digest(args.holdout)

    fits: dict[int, PosteriorDraws] = {}
    for kind in ModelKind:
        spec = build_spec(kind, ds)
        d = fit(spec, ds, mc)
        d.meta["data_file_sha256"] = base_meta["data_sha256"]
        save_draws(d, out / f"draws_{kind.number}_{kind.value}.csv")
        fits[kind.number] = d
        print(f"fitted model {kind.number} ({kind.formula})")

    geo = load_geo_spec(args.grid)
    figures = {
        "fig1_country_fits.svg": data_space_scene(fits[2], ds, "global", palette, title="Country model fits"),
        "fig2_offsets.svg": offsets_scene(fits[2], palette, "Intercept offsets, country model"),
        "fig3_region_data_space.svg": data_space_scene(fits[3], ds, args.scales, palette, title="Region model fits"),
        "fig4_intercepts.svg": compare_scene(list(fits.values()), ds, "intercept", geo, palette, "Intercepts by model"),
        "fig5_slopes.svg": compare_scene(list(fits.values()), ds, "slope", geo, palette, "Slopes by model"),
    }
    if args.holdout:
        holdout = load_observations(args.holdout, anchor_year=ds.anchor_year)
        scene, errs = prediction_error_scene(fits[5], ds, holdout, PREDICTION_LEVELS, palette,
                                             "Observed minus predicted, income-region model")
        figures["fig6_prediction_error.svg"] = scene
        _write(out / "prediction_error.csv", records_to_csv(
            _prediction_records(errs, "income_region"),
            ["unit", "year", "model", "observed", "median", "level", "lower", "upper"],
            meta_line("prediction_error", base_meta)))
    else:
        print("# no hold-out file: prediction-error figure skipped")
    for name, scene in figures.items():
        _write(out / name, _svg(scene, base_meta))

    results = {}
    for m in (2, 3, 4, 5):
        res = _loo_for(fits[m], ds)
        results[f"model{m}_{fits[m].spec.kind.value}"] = res
        _write(out / f"loo_{m}.csv", loo_to_csv(res, ds, meta_line("loo", base_meta)))
    table = comparison_to_csv(compare_models(results), meta_line("compare", base_meta))
    _write(out / "loo_comparison.csv", table)
    sys.stdout.write(table)
    for a, b, d, se in pairwise_differences(results):
        print(f"# {a} - {b}: {d:.2f} (SE {se:.2f})")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hbmvis", description=__doc__)
    parser.add_argument("--version", action="version", version=f"hbmvis {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one model by Gibbs sampling")
    p.add_argument("--model", required=True, choices=[k.value for k in ModelKind])
    _add_data_args(p)
    _add_mcmc_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--diagnostics", help="also write split-Rhat/ESS table here")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summarize", help="medians and credible intervals")
    p.add_argument("--draws", required=True)
    _add_data_args(p)
    p.add_argument("--levels", type=_levels, default=list(DEFAULT_LEVELS))
    p.add_argument("--out")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("loo", help="PSIS-LOO for one draws file")
    p.add_argument("--draws", required=True)
    _add_data_args(p)
    p.add_argument("--model", choices=[k.value for k in ModelKind],
                   help="expected model kind (checked against the draws file)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_loo)

    p = sub.add_parser("compare", help="compare LOO result files")
    p.add_argument("results", nargs="+")
    p.add_argument("--names")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("predict", help="hold-out prediction errors")
    p.add_argument("--draws", required=True)
    _add_data_args(p)
    p.add_argument("--holdout", required=True)
    p.add_argument("--levels", type=_levels, default=list(PREDICTION_LEVELS))
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("plot", help="write an SVG figure")
    plots = p.add_subparsers(dest="plot", required=True)
    for name in ("data-space", "compare-params", "offsets", "prediction-error"):
        q = plots.add_parser(name)
        _add_data_args(q)
        q.add_argument("--out", required=True)
        q.add_argument("--palette")
        q.add_argument("--title", default="")
        if name == "compare-params":
            q.add_argument("--draws", nargs="+", required=True)
            q.add_argument("--param", choices=["intercept", "slope"], default="intercept")
            q.add_argument("--grid", help="geo grid code,name,row,col (default: bundled Europe)")
        else:
            q.add_argument("--draws", required=True)
        if name == "data-space":
            q.add_argument("--scales", choices=["global", "per_row", "free"], default="per_row")
        if name == "prediction-error":
            q.add_argument("--holdout", required=True)
            q.add_argument("--levels", type=_levels, default=list(PREDICTION_LEVELS))
        q.set_defaults(func=cmd_plot)

    p = sub.add_parser("reproduce", help="run the five-model case study end to end")
    _add_data_args(p)
    _add_mcmc_args(p)
    p.add_argument("--holdout")
    p.add_argument("--outdir", required=True)
    p.add_argument("--grid")
    p.add_argument("--palette")
    p.add_argument("--scales", choices=["global", "per_row", "free"], default="per_row")
    p.set_defaults(func=cmd_reproduce)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors (2) and --help/--version (0)
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if getattr(args, "model", None) and args.command == "loo":
            d = load_draws(args.draws, load_dataset(args))
            if d.spec.kind.value != args.model:
                raise ConfigurationError(f"draws file holds model {d.spec.kind.value}, not {args.model}")
        return args.func(args)
    except (HbmError, OSError, KeyError, ValueError) as exc:
        print(f"hbmvis: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
