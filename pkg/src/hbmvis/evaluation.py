"""Model comparison by Pareto-smoothed importance sampling LOO, and prediction errors."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from hbmvis.dataset import Dataset
from hbmvis.errors import ConfigurationError, DegenerateTailError, MismatchError
from hbmvis.model_spec import UNIT_TERM, build_spec, sigma_names, u_name
from hbmvis.sampler import McmcConfig, PriorConfig, fit
from hbmvis.posterior import (
    PREDICTION_LEVELS,
    IntervalSummary,
    composite_unit_params,
    summarize,
)

logger = logging.getLogger(__name__)

K_THRESHOLD = 0.7
EXACT_LOO_MAX_N = 50
MIN_TAIL = 5
_LOG_2PI = math.log(2 * math.pi)


@dataclass
class LooResult:
    elpd_loo: float
    se: float
    pointwise: np.ndarray
    pareto_k: np.ndarray

    @property
    def n(self) -> int:
        return len(self.pointwise)

    @property
    def flagged(self) -> np.ndarray:
        """Observation positions whose Pareto k exceeds 0.7."""
        return np.flatnonzero(self.pareto_k > K_THRESHOLD)


def _se(values: np.ndarray) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    return float(math.sqrt(n * np.var(values, ddof=1)))


def _loo_result(pointwise, pareto_k) -> LooResult:
    pointwise = np.asarray(pointwise, dtype=float)
    return LooResult(float(pointwise.sum()), _se(pointwise), pointwise, np.asarray(pareto_k, dtype=float))


# ---------------------------------------------------------------------------
# Log-likelihood


def line_params(draws, ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """(S, n) intercept and slope draws of the line each observation belongs to."""
    params = composite_unit_params(draws)
    units = ds.unit_labels
    missing = sorted(set(units) - set(params.intercept))
    if missing:
        raise ConfigurationError(f"observations for units outside the fit: {missing}")
    icpt = np.column_stack([params.intercept[u] for u in units]) if units else np.empty((draws.n_draws, 0))
    slope = np.column_stack([params.slope[u] for u in units]) if units else np.empty((draws.n_draws, 0))
    return icpt, slope


def normal_logpdf(y, mean, sd):
    z = (y - mean) / sd
    return -0.5 * _LOG_2PI - np.log(sd) - 0.5 * z * z


def pointwise_loglik(draws, ds: Dataset) -> np.ndarray:
    """Per-draw, per-observation Normal log density, shape (S, n)."""
    icpt, slope = line_params(draws, ds)
    mu = icpt + slope * ds.t[None, :]
    return normal_logpdf(ds.y[None, :], mu, draws["sigma"][:, None])


# ---------------------------------------------------------------------------
# Generalized Pareto tail fit


def fit_generalized_pareto(excesses, weak_prior: bool = True) -> tuple[float, float]:
    """Shape and scale of a generalized Pareto fit to positive tail excesses.

    Uses the profile-likelihood posterior-mean estimator of Zhang and
    Stephens: a grid over ``-k / sigma`` is weighted by its profile likelihood
    and the shape follows from the weighted average. With
    ``weak_prior`` the shape is pulled toward 0.5 by a prior worth ten
    observations, as is usual in importance-sampling tail smoothing.

    Raises
    ------
    DegenerateTailError
        Fewer than five excesses, or all excesses identical.
    """
    x = np.sort(np.asarray(excesses, dtype=float))
    n = len(x)
    if n < MIN_TAIL:
        raise DegenerateTailError(f"tail of {n} excesses is too small (need {MIN_TAIL})")
    if x[0] < 0 or x[-1] <= 0 or x[-1] - x[0] <= 1e-12 * x[-1]:
        raise DegenerateTailError("tail excesses are degenerate")
    m = 30 + int(math.sqrt(n))
    j = np.arange(1, m + 1)
    quartile = x[int(n / 4 + 0.5) - 1]
    if quartile <= 0:
        quartile = x[x > 0][0]
    # grid over b = -k/sigma; b <= 1/max(x) keeps log1p(-b x) defined
    b = 1.0 / x[-1] + (1.0 - np.sqrt(m / (j - 0.5))) / (3.0 * quartile)
    k_grid = np.log1p(-np.outer(b, x)).mean(axis=1)
    log_lik = n * (np.log(-b / k_grid) - k_grid - 1.0)
    w = np.exp(log_lik - logsumexp(log_lik))
    b_hat = float(np.sum(b * w))
    k = float(np.log1p(-b_hat * x).mean())
    sigma = -k / b_hat
    if weak_prior:
        k = (n * k + 10 * 0.5) / (n + 10)
    if not (math.isfinite(k) and math.isfinite(sigma) and sigma > 0):
        raise DegenerateTailError("generalized Pareto fit did not converge")
    return k, sigma


def _gpd_quantile(p, k, sigma):
    if abs(k) < 1e-10:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def tail_length(S: int) -> int:
    return min(math.ceil(0.2 * S), math.ceil(3 * math.sqrt(S)))


def psis_smooth(log_ratios: np.ndarray) -> tuple[np.ndarray, float]:
    """Pareto-smooth one vector of log importance ratios.

    Returns the smoothed (unnormalised) log weights and the tail shape k.
    When the tail cannot be fitted the raw ratios are returned; k is 0 for
    all-identical ratios and +inf otherwise.
    """
    lw = np.asarray(log_ratios, dtype=float)
    lw = lw - lw.max()
    S = len(lw)
    M = tail_length(S)
    if M >= S:
        M = S - 1
    order = np.argsort(lw, kind="stable")
    tail_idx = order[-M:]
    cutoff = lw[order[-M - 1]] if M < S else -np.inf
    excess = np.exp(lw[tail_idx]) - math.exp(cutoff)
    try:
        k, sigma = fit_generalized_pareto(excess)
    except DegenerateTailError:
        if np.ptp(lw) == 0:
            return lw, 0.0
        logger.warning("importance ratios have a degenerate tail; using raw weights")
        return lw, math.inf
    p = (np.arange(1, M + 1) - 0.5) / M
    smoothed = np.log(math.exp(cutoff) + _gpd_quantile(p, k, sigma))
    out = lw.copy()
    out[tail_idx] = smoothed
    # never exceed the largest raw ratio
    np.minimum(out, 0.0, out=out)
    return out, k


def psis_loo(loglik: np.ndarray) -> LooResult:
    """PSIS-LOO from an (S, n) log-likelihood matrix."""
    loglik = np.asarray(loglik, dtype=float)
    S, n = loglik.shape
    if S < 100:
        logger.warning("only %d draws; PSIS-LOO estimates will be noisy", S)
    if not np.all(np.isfinite(loglik)):
        raise ValueError("log-likelihood contains non-finite entries")
    elpd = np.empty(n)
    ks = np.empty(n)
    for i in range(n):
        lw, k = psis_smooth(-loglik[:, i])
        elpd[i] = logsumexp(lw + loglik[:, i]) - logsumexp(lw)
        ks[i] = k
    bad = np.flatnonzero(ks > K_THRESHOLD)
    if len(bad):
        logger.warning("Pareto k > %.1f for observation(s) %s", K_THRESHOLD, bad.tolist())
    return _loo_result(elpd, ks)


# ---------------------------------------------------------------------------
# Exact LOO by refitting


def _new_level_draws(rng, cov: np.ndarray) -> np.ndarray:
    """One offset per draw from Normal(0, cov_s); cov has shape (S, 2, 2)."""
    L = np.linalg.cholesky(cov)
    z = rng.standard_normal((cov.shape[0], 2, 1))
    return (L @ z)[..., 0]


def predictive_line(
    draws, unit: str, ds_full: Dataset, rng, prior: PriorConfig | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Line draws for ``unit``, drawing fresh offsets for levels the fit never saw.

    A unit missing from a non-pooled fit gets coefficients from ``prior``.
    """
    spec = draws.spec
    if not spec.is_pooled:
        if unit in spec.units:
            return draws[f"alpha[{unit}]"], draws[f"gamma[{unit}]"]
        prior = prior or PriorConfig()
        z = rng.multivariate_normal(prior.mean, prior.cov, size=draws.n_draws)
        return z[:, 0], z[:, 1]
    icpt = draws["beta0"].copy()
    slope = draws["beta1"].copy()
    for g in spec.group_terms:
        level = unit if g.name == UNIT_TERM else ds_full.grouping(g.name)[unit]
        if level in g.levels:
            icpt = icpt + draws[u_name(g.name, level, "int")]
            slope = slope + draws[u_name(g.name, level, "slope")]
        else:
            u = _new_level_draws(rng, draws.covariance(g.name))
            icpt = icpt + u[:, 0]
            slope = slope + u[:, 1]
    return icpt, slope


def exact_loo_oracle(kind, ds: Dataset, mc, prior=None) -> np.ndarray:
    """Pointwise elpd by refitting the model once per left-out observation.

    Only for small datasets (at most 50 observations).
    """
    prior = prior or PriorConfig()
    n = len(ds)
    if n > EXACT_LOO_MAX_N:
        raise ConfigurationError(
            f"exact LOO refits the model {n} times; refusing above {EXACT_LOO_MAX_N} observations"
        )
    out = np.empty(n)
    for i in range(n):
        keep = [j for j in range(n) if j != i]
        sub = ds.subset(keep)
        spec = build_spec(kind, sub)
        mc_i = McmcConfig(mc.chains, mc.iterations, mc.warmup, mc.seed + 7919 * (i + 1), mc.thin)
        draws = fit(spec, sub, mc_i, prior)
        rng = np.random.default_rng(mc_i.seed)
        obs = ds.observations[i]
        icpt, slope = predictive_line(draws, obs.unit, ds, rng, prior)
        t = obs.year - ds.anchor_year
        ll = normal_logpdf(obs.value, icpt + slope * t, draws["sigma"])
        out[i] = logsumexp(ll) - math.log(len(ll))
    return out


# ---------------------------------------------------------------------------
# Comparison


def elpd_difference(a: LooResult, b: LooResult) -> tuple[float, float]:
    """Difference ``elpd(a) - elpd(b)`` and its standard error."""
    if a.n != b.n:
        raise MismatchError(f"results cover different observation counts ({a.n} vs {b.n})")
    d = a.pointwise - b.pointwise
    return float(d.sum()), _se(d)


@dataclass(frozen=True)
class ComparisonRow:
    model: str
    elpd_loo: float
    se: float
    elpd_diff: float
    se_diff: float


def compare_models(results) -> list[ComparisonRow]:
    """Rank models by elpd; differences are relative to the best model.

    ``results`` maps model names to LooResult (or is a sequence of pairs).
    """
    items = list(results.items()) if hasattr(results, "items") else list(results)
    if not items:
        return []
    n0 = items[0][1].n
    for name, r in items:
        if r.n != n0:
            raise MismatchError(f"model {name} has {r.n} observations, expected {n0}")
    items.sort(key=lambda kv: (-kv[1].elpd_loo, kv[0]))
    best = items[0][1]
    rows = []
    for name, r in items:
        d, se = elpd_difference(r, best)
        rows.append(ComparisonRow(name, r.elpd_loo, r.se, d, se))
    return rows


def pairwise_differences(results) -> list[tuple[str, str, float, float]]:
    items = list(results.items()) if hasattr(results, "items") else list(results)
    out = []
    for i, (na, ra) in enumerate(items):
        for nb, rb in items[i + 1:]:
            d, se = elpd_difference(ra, rb)
            out.append((na, nb, d, se))
    return out


def loo_to_csv(result: LooResult, ds: Dataset, header_line: str = "") -> str:
    buf = io.StringIO()
    if header_line:
        buf.write(header_line + "\n")
    buf.write(f"# elpd_loo={result.elpd_loo!r} se={result.se!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["unit", "year", "elpd", "pareto_k"])
    for o, e, k in zip(ds.observations, result.pointwise, result.pareto_k):
        w.writerow([o.unit, o.year, repr(float(e)), repr(float(k))])
    return buf.getvalue()


def read_loo_csv(path) -> LooResult:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return _loo_result([float(r["elpd"]) for r in rows], [float(r["pareto_k"]) for r in rows])


def comparison_to_csv(rows: Sequence[ComparisonRow], header_line: str = "") -> str:
    buf = io.StringIO()
    if header_line:
        buf.write(header_line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "elpd_loo", "se", "elpd_diff", "se_diff"])
    for r in rows:
        w.writerow([r.model, f"{r.elpd_loo:.3f}", f"{r.se:.3f}", f"{r.elpd_diff:.3f}", f"{r.se_diff:.3f}"])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Hold-out prediction errors


@dataclass
class PredictionError:
    unit: str
    year: int
    observed: float
    error_draws: np.ndarray
    summary: IntervalSummary


def prediction_error(
    draws,
    holdout: Dataset,
    levels: Sequence[float] = PREDICTION_LEVELS,
    rng: np.random.Generator | None = None,
) -> dict[str, PredictionError]:
    """Observed minus posterior-predictive draws for each hold-out unit.

    Hold-out units unknown to the fit are skipped with a warning; fitted
    units absent from the hold-out are simply not reported.
    """
    params = composite_unit_params(draws)
    if rng is None:
        rng = np.random.default_rng(int(draws.meta.get("seed", 0)))
    unknown = sorted({o.unit for o in holdout.observations} - set(draws.spec.units))
    if unknown:
        logger.warning("hold-out units not in the fit, skipped: %s", ", ".join(unknown))
    out: dict[str, PredictionError] = {}
    for o in holdout.observations:
        if o.unit not in params.intercept:
            continue
        if o.unit in out:
            raise ConfigurationError(f"hold-out has several observations for {o.unit}")
        t = o.year - draws.anchor_year
        mean = params.intercept[o.unit] + params.slope[o.unit] * t
        pred = mean + draws["sigma"] * rng.standard_normal(mean.shape)
        err = o.value - pred
        out[o.unit] = PredictionError(o.unit, o.year, o.value, err, summarize(err, levels))
    return out


__all__ = [
    "LooResult",
    "PredictionError",
    "ComparisonRow",
    "pointwise_loglik",
    "fit_generalized_pareto",
    "psis_smooth",
    "psis_loo",
    "exact_loo_oracle",
    "compare_models",
    "elpd_difference",
    "prediction_error",
    "sigma_names",
]
