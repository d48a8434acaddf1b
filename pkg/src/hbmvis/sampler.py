"""Blocked Gibbs sampler for the five linear pooling structures.

All priors are conjugate, so every block is drawn exactly from its full
conditional:

* fixed effects ``(beta0, beta1)`` ~ Normal(m0, S0)
* per-level offsets ``u[g,k]`` ~ Normal(0, Sigma_g)
* ``Sigma_g`` ~ Inverse-Wishart(nu0, Psi0)
* residual variance ``sigma^2`` ~ Inverse-Gamma(a0, b0)

The non-pooled kind gives every unit its own ``(alpha, gamma)`` pair with
the fixed-effect prior and a single shared residual variance.

Random numbers come from NumPy's PCG64 bit generator. Chain ``c`` uses the
stream ``numpy.random.default_rng(seed + c)``, so a chain's draws do not
depend on how many other chains run or in which order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import stats

from hbmvis import __version__
from hbmvis.dataset import Dataset
from hbmvis.errors import ConfigurationError, NumericalError
from hbmvis.model_spec import (
    ModelKind,
    ModelSpec,
    ParameterIndex,
    build_spec,
    parameter_index,
    sigma_names,
    u_name,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 4
    iterations: int = 1000
    warmup: int = 1000
    seed: int = 1
    thin: int = 1

    def __post_init__(self):
        if self.chains < 1 or self.iterations < 1 or self.thin < 1 or self.warmup < 0:
            raise ConfigurationError(f"invalid MCMC settings: {self}")
        if self.iterations % self.thin:
            raise ConfigurationError("iterations must be a multiple of thin")

    @property
    def draws_per_chain(self) -> int:
        return self.iterations // self.thin


@dataclass(frozen=True)
class PriorConfig:
    m0: tuple[float, float] = (500.0, 0.0)
    S0: tuple[tuple[float, float], tuple[float, float]] = ((100.0**2, 0.0), (0.0, 10.0**2))
    a0: float = 2.0
    b0: float = 200.0
    nu0: float = 3.0
    Psi0: tuple[tuple[float, float], tuple[float, float]] = ((10.0**2, 0.0), (0.0, 1.0))

    def __post_init__(self):
        for name in ("S0", "Psi0"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (2, 2) or not np.allclose(m, m.T):
                raise ConfigurationError(f"{name} must be a symmetric 2x2 matrix")
            if np.any(np.linalg.eigvalsh(m) <= 0):
                raise ConfigurationError(f"{name} must be positive definite")
        if self.nu0 <= 1:
            raise ConfigurationError("nu0 must exceed dimension - 1 = 1")
        if self.a0 <= 0 or self.b0 <= 0:
            raise ConfigurationError("a0 and b0 must be positive")

    @property
    def mean(self) -> np.ndarray:
        return np.asarray(self.m0, dtype=float)

    @property
    def cov(self) -> np.ndarray:
        return np.asarray(self.S0, dtype=float)

    @property
    def scale(self) -> np.ndarray:
        return np.asarray(self.Psi0, dtype=float)

    def with_scale(self, factor: float, nu0: float | None = None) -> "PriorConfig":
        """Copy with ``Psi0`` multiplied by ``factor`` (and optionally a new ``nu0``)."""
        psi = (self.scale * factor).tolist()
        return PriorConfig(
            self.m0, self.S0, self.a0, self.b0,
            self.nu0 if nu0 is None else nu0, tuple(map(tuple, psi)),
        )


# ---------------------------------------------------------------------------
# Linear algebra helpers


def _cholesky(P: np.ndarray) -> np.ndarray:
    """Batched Cholesky with one jitter retry of ``1e-8 * trace * I``."""
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        tr = np.trace(P, axis1=-2, axis2=-1)[..., None, None]
        try:
            return np.linalg.cholesky(P + 1e-8 * tr * np.eye(P.shape[-1]))
        except np.linalg.LinAlgError:
            raise NumericalError("matrix not positive definite after jitter") from None


def draw_from_precision(rng, precision: np.ndarray, linear: np.ndarray) -> np.ndarray:
    """Draw x ~ Normal(precision^-1 @ linear, precision^-1), batched over leading axes."""
    L = _cholesky(precision)
    mean = np.linalg.solve(precision, linear[..., None])[..., 0]
    z = rng.standard_normal(linear.shape)
    # x = mean + L^-T z has covariance (L L^T)^-1
    Lt = np.swapaxes(L, -1, -2)
    return mean + np.linalg.solve(Lt, z[..., None])[..., 0]


def draw_inverse_wishart(rng, df: float, scale: np.ndarray) -> np.ndarray:
    _cholesky(scale)
    out = stats.invwishart.rvs(df=df, scale=scale, random_state=rng)
    return np.atleast_2d(out)


def draw_inverse_gamma(rng, shape: float, rate: float) -> float:
    return rate / rng.gamma(shape)


# ---------------------------------------------------------------------------
# Sampler state


@dataclass
class Design:
    """Per-observation arrays the full conditionals need."""

    y: np.ndarray
    X: np.ndarray
    level_idx: list[np.ndarray]
    n_levels: list[int]
    XtX_levels: list[np.ndarray]
    Z: np.ndarray | None = None
    ZtZ: np.ndarray | None = None

    @classmethod
    def build(cls, spec: ModelSpec, ds: Dataset) -> "Design":
        t = ds.t
        X = np.column_stack([np.ones_like(t), t])
        units = ds.unit_labels
        terms = spec.group_terms if spec.is_pooled else ()
        idx = [g.level_index(units) for g in terms]
        n_levels = [len(g.levels) for g in terms]
        if not spec.is_pooled:
            pos = {u: i for i, u in enumerate(spec.units)}
            idx = [np.array([pos[u] for u in units], dtype=int)]
            n_levels = [len(spec.units)]
        XtX = []
        outer = X[:, :, None] * X[:, None, :]
        for k_idx, K in zip(idx, n_levels):
            m = np.zeros((K, 2, 2))
            np.add.at(m, k_idx, outer)
            XtX.append(m)
        # joint design over (beta, u_1, ..., u_G): columns interleave int/slope per level
        blocks = [X]
        for k_idx, K in zip(idx, n_levels):
            Zg = np.zeros((len(t), 2 * K))
            rows = np.arange(len(t))
            Zg[rows, 2 * k_idx] = 1.0
            Zg[rows, 2 * k_idx + 1] = t
            blocks.append(Zg)
        Z = np.hstack(blocks) if spec.is_pooled else None
        return cls(ds.y, X, idx, n_levels, XtX, Z, None if Z is None else Z.T @ Z)

    @property
    def n(self) -> int:
        return len(self.y)


@dataclass
class GibbsState:
    beta: np.ndarray
    u: list[np.ndarray]
    Sigma: list[np.ndarray]
    sigma2: float
    contrib: list[np.ndarray] = field(default_factory=list)

    def refresh(self, design: Design) -> None:
        self.contrib = [
            np.einsum("ij,ij->i", u[idx], design.X)
            for u, idx in zip(self.u, design.level_idx)
        ]

    def random_part(self) -> np.ndarray | float:
        return sum(self.contrib) if self.contrib else 0.0


def _per_level_sums(design: Design, g: int, r: np.ndarray) -> np.ndarray:
    idx, K = design.level_idx[g], design.n_levels[g]
    return np.column_stack([
        np.bincount(idx, weights=r, minlength=K),
        np.bincount(idx, weights=r * design.X[:, 1], minlength=K),
    ])


def update_fixed_effects(rng, state: GibbsState, design: Design, prior: PriorConfig) -> np.ndarray:
    """Draw ``(beta0, beta1)`` given offsets and residual variance."""
    S0inv = np.linalg.inv(prior.cov)
    r = design.y - state.random_part()
    P = S0inv + design.X.T @ design.X / state.sigma2
    b = S0inv @ prior.mean + design.X.T @ r / state.sigma2
    state.beta = draw_from_precision(rng, P, b)
    return state.beta


def update_group_effects(rng, state: GibbsState, design: Design, g: int) -> np.ndarray:
    """Draw every level's ``(u_int, u_slope)`` for term ``g`` given everything else."""
    others = state.random_part() - state.contrib[g]
    r = design.y - design.X @ state.beta - others
    Sinv = np.linalg.inv(state.Sigma[g])
    P = Sinv[None] + design.XtX_levels[g] / state.sigma2
    b = _per_level_sums(design, g, r) / state.sigma2
    state.u[g] = draw_from_precision(rng, P, b)
    state.contrib[g] = np.einsum("ij,ij->i", state.u[g][design.level_idx[g]], design.X)
    return state.u[g]


def update_location_block(rng, state: GibbsState, design: Design, prior: PriorConfig) -> None:
    """Draw ``beta`` and all offsets jointly given covariances and residual variance.

    Drawing the global line together with the offsets removes the ridge
    along ``beta0 + u`` that slows one-block-at-a-time updates.
    """
    S0inv = np.linalg.inv(prior.cov)
    p = design.Z.shape[1]
    prior_prec = np.zeros((p, p))
    prior_prec[:2, :2] = S0inv
    start = 2
    for g, K in enumerate(design.n_levels):
        Sinv = np.linalg.inv(state.Sigma[g])
        prior_prec[start:start + 2 * K, start:start + 2 * K] = np.kron(np.eye(K), Sinv)
        start += 2 * K
    P = prior_prec + design.ZtZ / state.sigma2
    b = design.Z.T @ design.y / state.sigma2
    b[:2] += S0inv @ prior.mean
    theta = draw_from_precision(rng, P, b)
    state.beta = theta[:2]
    start = 2
    for g, K in enumerate(design.n_levels):
        state.u[g] = theta[start:start + 2 * K].reshape(K, 2)
        start += 2 * K
    state.refresh(design)


def update_group_covariance(rng, state: GibbsState, prior: PriorConfig, g: int) -> np.ndarray:
    """Draw ``Sigma_g`` ~ IW(nu0 + K, Psi0 + sum_k u_k u_k^T)."""
    u = state.u[g]
    scale = prior.scale + u.T @ u
    state.Sigma[g] = draw_inverse_wishart(rng, prior.nu0 + len(u), scale)
    return state.Sigma[g]


def update_residual_variance(rng, state: GibbsState, design: Design, prior: PriorConfig) -> float:
    """Draw ``sigma^2`` ~ IG(a0 + n/2, b0 + SSR/2)."""
    resid = design.y - design.X @ state.beta - state.random_part()
    ssr = float(resid @ resid)
    state.sigma2 = draw_inverse_gamma(rng, prior.a0 + design.n / 2, prior.b0 + ssr / 2)
    return state.sigma2


def update_unit_coefficients(rng, state: GibbsState, design: Design, prior: PriorConfig) -> np.ndarray:
    """Non-pooled kind: independent ``(alpha_c, gamma_c)`` per unit."""
    S0inv = np.linalg.inv(prior.cov)
    P = S0inv[None] + design.XtX_levels[0] / state.sigma2
    b = (S0inv @ prior.mean)[None] + _per_level_sums(design, 0, design.y) / state.sigma2
    state.u[0] = draw_from_precision(rng, P, b)
    state.contrib[0] = np.einsum("ij,ij->i", state.u[0][design.level_idx[0]], design.X)
    return state.u[0]


# ---------------------------------------------------------------------------
# Draws container


@dataclass
class PosteriorDraws:
    """Retained draws, one row per draw, columns named by ``index``."""

    draws: np.ndarray
    index: ParameterIndex
    chain: np.ndarray
    iteration: np.ndarray
    spec: ModelSpec
    anchor_year: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.shape != (len(self.chain), len(self.index)):
            raise ValueError(
                f"draw matrix shape {self.draws.shape} does not match "
                f"{len(self.chain)} draws x {len(self.index)} parameters"
            )

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def n_chains(self) -> int:
        return len(np.unique(self.chain))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.draws[:, self.index[name]]

    def by_chain(self, name: str) -> np.ndarray:
        """(chains, draws_per_chain) view of one parameter."""
        x = self[name]
        chains = np.unique(self.chain)
        return np.stack([x[self.chain == c] for c in chains])

    def covariance(self, term: str) -> np.ndarray:
        """(S, 2, 2) covariance draws for a group term."""
        ii, is_, ss = (self[n] for n in sigma_names(term))
        return np.stack([np.stack([ii, is_], -1), np.stack([is_, ss], -1)], -2)

    def meta_header(self) -> dict:
        keys = ("model", "anchor_year", "seed", "chains", "iterations", "warmup", "thin")
        return {k: self.meta[k] for k in keys if k in self.meta}

    def check(self) -> None:
        """Verify sigma > 0 and every covariance draw positive definite."""
        if "sigma" in self.index and not np.all(self["sigma"] > 0):
            raise NumericalError("non-positive sigma draw")
        for g in self.spec.group_terms:
            C = self.covariance(g.name)
            if not (np.all(C[:, 0, 0] > 0) and np.all(np.linalg.det(C) > 0)):
                raise NumericalError(f"non-PD covariance draw for {g.name}")


def _run_chain(chain, spec, design, mc, prior, fixed_sigma, fixed_Sigma):
    rng = np.random.default_rng(mc.seed + chain)
    n_terms = len(design.level_idx)
    y = design.y
    sigma2 = fixed_sigma**2 if fixed_sigma is not None else (
        float(np.var(y)) if design.n > 1 and np.var(y) > 0 else prior.b0 / (prior.a0 + 1)
    )
    state = GibbsState(
        # non-pooled lines live entirely in u; beta stays at zero
        beta=prior.mean.copy() if spec.is_pooled else np.zeros(2),
        u=[np.zeros((K, 2)) for K in design.n_levels],
        Sigma=[prior.scale.copy() for _ in range(n_terms)],
        sigma2=sigma2,
    )
    if fixed_Sigma is not None and spec.is_pooled:
        state.Sigma = [np.asarray(fixed_Sigma[g.name], dtype=float) for g in spec.group_terms]
    state.refresh(design)

    n_keep = mc.draws_per_chain
    width = 3 + sum(2 * K + 3 for K in design.n_levels) if spec.is_pooled else 2 * design.n_levels[0] + 1
    out = np.empty((n_keep, width))
    total = mc.warmup + mc.iterations
    kept = 0
    for it in range(total):
        if spec.is_pooled:
            update_location_block(rng, state, design, prior)
            if fixed_Sigma is None:
                for g in range(n_terms):
                    update_group_covariance(rng, state, prior, g)
        else:
            update_unit_coefficients(rng, state, design, prior)
        if fixed_sigma is None:
            update_residual_variance(rng, state, design, prior)

        post = it - mc.warmup
        if post >= 0 and (post + 1) % mc.thin == 0:
            out[kept] = _flatten(state, spec)
            kept += 1
    return out


def _flatten(state: GibbsState, spec: ModelSpec) -> np.ndarray:
    sigma = math.sqrt(state.sigma2)
    if not spec.is_pooled:
        return np.concatenate([state.u[0].ravel(), [sigma]])
    parts = [state.beta, [sigma]]
    for u, S in zip(state.u, state.Sigma):
        parts += [u.ravel(), [S[0, 0], S[0, 1], S[1, 1]]]
    return np.concatenate(parts)


def fit(
    spec: ModelSpec,
    ds: Dataset,
    mc: McmcConfig = McmcConfig(),
    prior: PriorConfig = PriorConfig(),
    *,
    fixed_sigma: float | None = None,
    fixed_Sigma: Mapping[str, np.ndarray] | None = None,
) -> PosteriorDraws:
    """Run ``mc.chains`` independent Gibbs chains and stack the retained draws.

    Parameters
    ----------
    spec, ds
        Model structure and the dataset it was resolved against. An empty
        dataset yields draws from the prior.
    fixed_sigma, fixed_Sigma
        Hold the residual sd and/or the group covariances at known values
        instead of sampling them (known-variance mode).
    """
    if tuple(ds.units) != spec.units:
        raise ConfigurationError("model spec was resolved against a different dataset")
    if fixed_Sigma is not None:
        missing = [g.name for g in spec.group_terms if g.name not in fixed_Sigma]
        if missing:
            raise ConfigurationError(f"fixed_Sigma lacks term(s) {missing}")
    design = Design.build(spec, ds)
    if design.n > 0 and np.ptp(design.X[:, 1]) == 0:
        logger.warning("all observations share one time point; slopes are prior-driven")

    blocks = [
        _run_chain(c, spec, design, mc, prior, fixed_sigma, fixed_Sigma)
        for c in range(mc.chains)
    ]
    n_keep = mc.draws_per_chain
    draws = PosteriorDraws(
        draws=np.vstack(blocks),
        index=parameter_index(spec),
        chain=np.repeat(np.arange(mc.chains), n_keep),
        iteration=np.tile(np.arange(1, n_keep + 1) * mc.thin, mc.chains),
        spec=spec,
        anchor_year=ds.anchor_year,
        meta={
            "model": spec.kind.value,
            "anchor_year": ds.anchor_year,
            "seed": mc.seed,
            "chains": mc.chains,
            "iterations": mc.iterations,
            "warmup": mc.warmup,
            "thin": mc.thin,
            "data_sha256": dataset_digest(ds),
        },
    )
    draws.check()
    return draws


# ---------------------------------------------------------------------------
# Persistence


def dataset_digest(ds: Dataset) -> str:
    h = hashlib.sha256()
    for o in ds.observations:
        h.update(f"{o.unit},{o.year},{o.value!r}\n".encode())
    for g in ds.groupings:
        for unit, label in sorted(g.assignment.items()):
            h.update(f"{g.name},{unit},{label}\n".encode())
    return h.hexdigest()[:16]


_INT_META = ("anchor_year", "seed", "chains", "iterations", "warmup", "thin")


def meta_line(kind: str, meta: Mapping) -> str:
    fields = " ".join(f"{k}={v}" for k, v in meta.items())
    return f"# hbmvis {__version__} {kind} {fields}".rstrip()


def parse_meta_line(line: str) -> dict:
    out = {}
    for tok in line.lstrip("#").split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            out[k] = v
    return out


def draws_to_csv(draws: PosteriorDraws) -> str:
    buf = io.StringIO()
    buf.write(meta_line("draws", draws.meta) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["chain", "iter", *draws.index.names])
    for c, it, row in zip(draws.chain, draws.iteration, draws.draws):
        w.writerow([int(c), int(it), *(repr(float(x)) for x in row)])
    return buf.getvalue()


def save_draws(draws: PosteriorDraws, path: str | Path) -> None:
    Path(path).write_text(draws_to_csv(draws), encoding="utf-8")


def load_draws(path: str | Path, ds: Dataset) -> PosteriorDraws:
    """Read a draws file; the model structure is rebuilt from ``ds``.

    The dataset must carry the groupings the model needs; its anchor year is
    taken from the file's metadata line.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        meta = parse_meta_line(first) if first.startswith("#") else {}
        if not first.startswith("#"):
            fh.seek(0)
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    if header[:2] != ["chain", "iter"]:
        raise ConfigurationError(f"{path}: not a draws file (header starts {header[:2]})")
    if "model" not in meta:
        raise ConfigurationError(f"{path}: metadata line lacks the model kind")
    anchor = int(meta.get("anchor_year", ds.anchor_year))
    ds = Dataset(ds.observations, anchor, ds.groupings)
    spec = build_spec(ModelKind(meta["model"]), ds)
    index = parameter_index(spec)
    if tuple(header[2:]) != index.names:
        raise ConfigurationError(
            f"{path}: parameter columns do not match model {spec.kind.value} on this dataset"
        )
    arr = np.array([[float(x) for x in r] for r in rows]) if rows else np.empty((0, 2 + len(index)))
    meta_typed = {k: int(v) if k in _INT_META else v for k, v in meta.items()}
    return PosteriorDraws(
        draws=arr[:, 2:],
        index=index,
        chain=arr[:, 0].astype(int),
        iteration=arr[:, 1].astype(int),
        spec=spec,
        anchor_year=anchor,
        meta=meta_typed,
    )


__all__ = [
    "McmcConfig",
    "PriorConfig",
    "PosteriorDraws",
    "GibbsState",
    "fit",
    "save_draws",
    "load_draws",
    "draws_to_csv",
    "update_fixed_effects",
    "update_group_effects",
    "update_group_covariance",
    "update_residual_variance",
    "u_name",
]
