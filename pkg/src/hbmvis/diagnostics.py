"""Split-Rhat and effective sample size for retained draws."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from hbmvis.errors import ConfigurationError

logger = logging.getLogger(__name__)

RHAT_THRESHOLD = 1.01


@dataclass(frozen=True)
class DiagnosticRow:
    parameter: str
    rhat: float | None
    ess: float | None

    @property
    def flagged(self) -> bool:
        return self.rhat is not None and self.rhat > RHAT_THRESHOLD


def _split(chains: np.ndarray) -> np.ndarray:
    n = chains.shape[1] // 2
    return np.concatenate([chains[:, :n], chains[:, -n:]], axis=0)


def split_rhat(chains: np.ndarray) -> float | None:
    """Classic potential scale reduction on half-chains.

    ``chains`` has shape (n_chains, n_draws). Returns None when the
    within-chain variance is zero (for example a constant parameter).
    """
    x = _split(np.asarray(chains, dtype=float))
    m, n = x.shape
    W = x.var(axis=1, ddof=1).mean()
    if not np.isfinite(W) or W <= 0:
        return None
    B = n * x.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = len(x)
    x = x - x.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n]
    return acov / n


def ess(chains: np.ndarray) -> float | None:
    """Effective sample size with Geyer's initial monotone sequence.

    Autocorrelations are combined across half-chains the same way as the
    Rhat variance estimate.
    """
    x = _split(np.asarray(chains, dtype=float))
    m, n = x.shape
    acov = np.stack([_autocovariance(c) for c in x])
    W = acov[:, 0].mean() * n / (n - 1)
    if not np.isfinite(W) or W <= 0:
        return None
    B = n * x.mean(axis=1).var(ddof=1) if m > 1 else 0.0
    var_plus = (n - 1) / n * W + B / n
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # pairs Gamma_k = rho_2k + rho_2k+1; stop at the first negative pair
    n_pairs = n // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    total = 0.0
    prev = np.inf
    for p in pairs:
        if p < 0:
            break
        p = min(p, prev)
        total += p
        prev = p
    tau = -1.0 + 2.0 * total
    tau = max(tau, 1.0 / np.log10(m * n)) if m * n > 1 else tau
    return float(m * n / tau)


def diagnostics(draws) -> list[DiagnosticRow]:
    """Split-Rhat and ESS for every parameter of a PosteriorDraws.

    Requires at least four retained draws per chain. With a single chain
    Rhat is omitted (reported as None) and a notice is logged.
    """
    per_chain = np.bincount(draws.chain)
    if per_chain.min() < 4:
        raise ConfigurationError("diagnostics need at least 4 retained draws per chain")
    single = draws.n_chains < 2
    if single:
        logger.info("single chain: split-Rhat omitted")
    rows = []
    for name in draws.index.names:
        c = draws.by_chain(name)
        rows.append(DiagnosticRow(name, None if single else split_rhat(c), ess(c)))
    return rows


def format_table(rows: list[DiagnosticRow]) -> str:
    lines = ["parameter,rhat,ess,flag"]
    for r in rows:
        rh = "n/a" if r.rhat is None else f"{r.rhat:.4f}"
        es = "n/a" if r.ess is None else f"{r.ess:.1f}"
        lines.append(f'"{r.parameter}",{rh},{es},{"*" if r.flagged else ""}')
    return "\n".join(lines) + "\n"
