"""Simulation of AR(m) snapshot series and descriptive diagnostics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ParameterSet, SnapshotSeries, pair_arrays
from .kernels import TransitionKernel, get_kernel

__all__ = [
    "SimConfig",
    "DiagnosticsTable",
    "transition_probs",
    "initial_lags",
    "simulate",
    "diagnostics",
    "persistence_chain",
    "stationary_distribution",
]


@dataclass
class SimConfig:
    """Simulation settings.  ``init`` is ``"empty"`` or ``("erdos-renyi", rho)``."""

    theta: ParameterSet
    n: int
    burn_in: int = 200
    seed: int = 0
    init: object = ("erdos-renyi", 0.1)
    eps: float = 1e-6

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        kind, rho = self.init_rule
        if kind not in ("empty", "erdos-renyi"):
            raise ValueError(f"unknown initial snapshot rule {kind!r}")
        if not 0.0 <= rho <= 1.0:
            raise ValueError("erdos-renyi density must lie in [0, 1]")
        get_kernel(self.theta.kernel_id).check_p(self.p)

    @property
    def p(self) -> int:
        return self.theta.index.p

    @property
    def kernel(self) -> TransitionKernel:
        return get_kernel(self.theta.kernel_id, eps=self.eps)

    @property
    def init_rule(self) -> tuple[str, float]:
        if isinstance(self.init, str):
            return ("empty", 0.0) if self.init == "empty" else (self.init, 0.1)
        kind, rho = self.init
        return str(kind).replace("_", "-"), float(rho)


def transition_probs(kernel: TransitionKernel, theta: ParameterSet, lags) -> np.ndarray:
    """Clipped ``gamma`` for every pair; ``lags[0]`` is the latest snapshot.

    Snapshots may carry leading batch dimensions, giving ``(..., n_pairs)``.
    """
    lags = [np.asarray(L) for L in lags]
    p = lags[0].shape[-1]
    rows, cols = pair_arrays(p)
    stats = kernel.pair_stats(lags)
    P = theta.values[theta.index.edge_scope]
    alpha, beta = kernel.alpha_beta_values(P, stats)
    lo, hi = kernel.eps, 1.0 - kernel.eps
    alpha = np.clip(alpha, lo, hi)
    beta = np.clip(beta, lo, hi)
    x = lags[0][..., rows, cols].astype(float)
    return np.clip(alpha + x * (1.0 - alpha - beta), lo, hi)


def _symmetric(upper: np.ndarray, p: int) -> np.ndarray:
    rows, cols = pair_arrays(p)
    X = np.zeros(upper.shape[:-1] + (p, p), dtype=np.uint8)
    X[..., rows, cols] = upper
    X[..., cols, rows] = upper
    return X


def initial_lags(cfg: SimConfig, rng: np.random.Generator) -> list[np.ndarray]:
    p = cfg.p
    kind, rho = cfg.init_rule
    n_pairs = p * (p - 1) // 2
    if kind == "empty" or rho == 0.0:
        X0 = np.zeros((p, p), dtype=np.uint8)
    else:
        X0 = _symmetric((rng.random(n_pairs) < rho).astype(np.uint8), p)
    return [X0.copy() for _ in range(cfg.kernel.order)]


def simulate(cfg: SimConfig) -> SnapshotSeries:
    """Draw ``burn_in + n`` snapshots and keep the last ``n``."""
    kernel = cfg.kernel
    rng = np.random.default_rng(cfg.seed)
    p = cfg.p
    lags = initial_lags(cfg, rng)
    out = np.empty((cfg.n, p, p), dtype=np.uint8)
    for t in range(cfg.burn_in + cfg.n):
        gam = transition_probs(kernel, cfg.theta, lags)
        X = _symmetric((rng.random(gam.shape) < gam).astype(np.uint8), p)
        lags = [X] + lags[:-1]
        if t >= cfg.burn_in:
            out[t - cfg.burn_in] = X
    return SnapshotSeries(out)


# ---------------------------------------------------------------- exact single-edge chain

def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Stationary row vector of a finite transition matrix by a linear solve."""
    P = np.asarray(P, dtype=float)
    k = P.shape[0]
    A = P.T - np.eye(k)
    A[-1, :] = 1.0
    rhs = np.zeros(k)
    rhs[-1] = 1.0
    return np.linalg.solve(A, rhs)


def persistence_chain(xi_prod: float, eta_prod: float, a: float, b: float, eps: float = 1e-6):
    """Transition matrix of ``Y_t = (X^t, X^{t-1}, X^{t-2})`` for one edge of the persistence kernel.

    State ``(x0, x1, x2)`` is encoded as ``4*x0 + 2*x1 + x2``.  Returns
    ``(P, marginal)`` where ``marginal`` is the stationary probability that the
    edge is present.
    """
    P = np.zeros((8, 8))
    for s in range(8):
        x0, x1, x2 = (s >> 2) & 1, (s >> 1) & 1, s & 1
        alpha = xi_prod * np.exp(-1.0 - a * ((1 - x1) + (1 - x1) * (1 - x2)))
        beta = eta_prod * np.exp(-1.0 - b * (x1 + x1 * x2))
        alpha = min(max(alpha, eps), 1 - eps)
        beta = min(max(beta, eps), 1 - eps)
        g = min(max(alpha + x0 * (1 - alpha - beta), eps), 1 - eps)
        P[s, 4 + 2 * x0 + x1] = g
        P[s, 2 * x0 + x1] = 1 - g
    pi = stationary_distribution(P)
    return P, float(pi[4:].sum())


# ---------------------------------------------------------------- diagnostics

@dataclass
class DiagnosticsTable:
    density: np.ndarray
    growth: np.ndarray
    dissolution: np.ndarray
    density_mean: np.ndarray
    growth_mean: np.ndarray
    dissolution_mean: np.ndarray
    u_table: dict = field(default_factory=dict)
    v_table: dict = field(default_factory=dict)

    def write_csv(self, directory) -> list[Path]:
        """One CSV per statistic; returns the written paths."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        written = []
        path = d / "densities.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "D", "D1", "D0", "D_mean", "D1_mean", "D0_mean"])
            for t in range(len(self.density)):
                w.writerow([t + 1, self.density[t], self.growth[t], self.dissolution[t],
                            self.density_mean[t], self.growth_mean[t], self.dissolution_mean[t]])
        written.append(path)
        for name, table in (("u_table.csv", self.u_table), ("v_table.csv", self.v_table)):
            path = d / name
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["count", "frequency", "size"])
                for ell in sorted(table):
                    w.writerow([ell, *table[ell]])
            written.append(path)
        return written


def _frequency_table(keys: np.ndarray, hits: np.ndarray) -> dict:
    if keys.size == 0:
        return {}
    size = np.bincount(keys)
    hit = np.bincount(keys, weights=hits.astype(float), minlength=size.size)
    return {int(l): (float(hit[l] / size[l]), int(size[l])) for l in np.flatnonzero(size)}


def diagnostics(series: SnapshotSeries) -> DiagnosticsTable:
    """Density summaries and common/disjoint-neighbour frequency tables.

    ``growth[0]`` and ``dissolution[0]`` are NaN (no previous snapshot); their
    running means average over ``t >= 2`` only.
    """
    if series.n < 2:
        raise ValueError("diagnostics need at least two snapshots")
    U = series.upper().astype(float)
    n, n_pairs = U.shape
    density = U.mean(axis=1)
    growth = np.full(n, np.nan)
    dissolution = np.full(n, np.nan)
    growth[1:] = ((1 - U[:-1]) * U[1:]).sum(1) / n_pairs
    dissolution[1:] = (U[:-1] * (1 - U[1:])).sum(1) / n_pairs
    steps = np.arange(1, n + 1)
    density_mean = np.cumsum(density) / steps
    growth_mean = np.full(n, np.nan)
    dissolution_mean = np.full(n, np.nan)
    growth_mean[1:] = np.cumsum(growth[1:]) / steps[:-1]
    dissolution_mean[1:] = np.cumsum(dissolution[1:]) / steps[:-1]

    X = series.data[:-1].astype(float)
    p = series.p
    rows, cols = pair_arrays(p)
    common = np.rint((X @ X)[:, rows, cols]).astype(np.int64)
    deg = X.sum(-1)
    prev = U[:-1]
    disjoint = np.rint(deg[:, rows] + deg[:, cols] - 2 * prev - 2 * common).astype(np.int64)
    nxt = U[1:]
    off = prev == 0
    on = prev == 1
    u_table = _frequency_table(common[off], nxt[off] == 1)
    v_table = _frequency_table(disjoint[on], nxt[on] == 0)
    return DiagnosticsTable(density, growth, dissolution, density_mean, growth_mean,
                            dissolution_mean, u_table, v_table)
