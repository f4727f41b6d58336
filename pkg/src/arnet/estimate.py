"""Initial partial-likelihood estimates and projection-refined estimates with confidence intervals.

Pipeline for one starting value: globals by projected BFGS with the locals
held at the start value, then each local by a 1-D search of its own partial
likelihood; optionally a moment iteration; then, per parameter, an l1
projection of the score, a two-stage projected-score search and a
normal-approximation interval.
"""
from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .core import ParameterSet, SnapshotSeries, pair_arrays
from .kernels import get_kernel
from .likelihood import GlobalProfile, ScoreCache, TransitionData
from .numopt import (OptimizerError, OptimizerSettings, maximize_box, minimize_1d, nearest_root,
                     L1Projection)

__all__ = [
    "DEFAULT_INIT_GRID",
    "DEFAULT_TAU_GRID",
    "DEFAULT_TAU_GRID_LOCAL",
    "METHODS",
    "EstimationError",
    "EstimationConfig",
    "StartFit",
    "InitialFit",
    "FitReport",
    "delta_n",
    "fit_initial",
    "fit_improved",
    "variance_estimate",
    "fit",
    "fit_all_starts",
    "rmae",
    "replicate",
    "summarize_replications",
    "resolve_threads",
]

log = logging.getLogger(__name__)

DEFAULT_INIT_GRID = tuple(round(0.5 + 0.05 * k, 2) for k in range(9))
DEFAULT_TAU_GRID = (0.25e-4, 0.5e-4, 1e-4, 2e-4)
DEFAULT_TAU_GRID_LOCAL = (4e-4, 8e-4, 1.6e-3, 3.2e-3)
METHODS = ("mle", "imom", "mle+imom-init")


class EstimationError(RuntimeError):
    """Raised when every starting value fails."""


def resolve_threads(threads: int | None = None) -> int:
    env = os.environ.get("ARNET_THREADS")
    if env:
        return max(1, int(env))
    if threads:
        return max(1, int(threads))
    return os.cpu_count() or 1


def delta_n(n: int, p: int) -> float:
    """Rate ``n^{-1/2} p^{5/2} log^{3/2}(np)``; the LP slack is a multiple of its square root."""
    return n ** -0.5 * p ** 2.5 * math.log(n * p) ** 1.5


@dataclass
class EstimationConfig:
    init_grid: tuple = DEFAULT_INIT_GRID
    r_tilde_local: float = 0.2
    r_check_local: float = 0.05
    r_tilde_global: float = 10.0
    r_check_global: float = 2.0
    tau_grid: tuple = DEFAULT_TAU_GRID
    tau_grid_local: tuple | None = DEFAULT_TAU_GRID_LOCAL
    level: float = 0.95
    method: str = "mle+imom-init"
    imom_tol: float = 1e-6
    imom_max_iter: int = 100
    imom_safeguard: bool = True
    polish_sweeps: int = 10
    polish_tol: float = 1e-6
    global_start: float = 1.0
    eps: float = 1e-6
    threads: int | None = None

    def __post_init__(self):
        self.init_grid = tuple(float(v) for v in self.init_grid)
        self.tau_grid = tuple(float(v) for v in self.tau_grid)
        if self.tau_grid_local is not None:
            self.tau_grid_local = tuple(float(v) for v in self.tau_grid_local)
            if not self.tau_grid_local or any(v < 0 for v in self.tau_grid_local):
                raise ValueError("tau_grid_local must be a non-empty list of non-negative multipliers")
        if not self.init_grid:
            raise ValueError("init_grid must not be empty")
        if any(v <= 0 for v in self.init_grid):
            raise ValueError("init_grid values must be positive")
        if not self.tau_grid or any(v < 0 for v in self.tau_grid):
            raise ValueError("tau_grid must be a non-empty list of non-negative multipliers")
        for name in ("r_tilde_local", "r_check_local", "r_tilde_global", "r_check_global"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.polish_sweeps < 0 or self.polish_tol < 0:
            raise ValueError("polish_sweeps and polish_tol must be non-negative")
        if self.imom_tol <= 0 or self.imom_max_iter < 1:
            raise ValueError("imom_tol must be positive and imom_max_iter at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "EstimationConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown estimation keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- 1-D views of the likelihood

def _local_side(index, l: int) -> str | None:
    """Whether local ``l`` scales formation (``alpha``) or dissolution (``beta``); None for globals."""
    kid = index.kernel_id
    if kid == "edgewise_ar":
        return "alpha" if l < index.n_pairs else "beta"
    G = len(index.global_set)
    if l < G:
        return None
    return "alpha" if l < G + index.p else "beta"


class _ScaledBernoulli:
    """Log-likelihood of transitions whose probability of change is ``x * c``.

    ``side="alpha"`` means ``gamma = x c`` (formation), ``"beta"`` means
    ``gamma = 1 - x c`` (persistence of an edge).
    """

    def __init__(self, c: np.ndarray, X: np.ndarray, side: str, eps: float):
        self.c, self.x, self.side = c, X, side
        self.lo, self.hi = eps, 1.0 - eps

    def _gamma(self, x):
        v = x * self.c
        clipped = (v < self.lo) | (v > self.hi)
        v = np.clip(v, self.lo, self.hi)
        return (v if self.side == "alpha" else 1.0 - v), clipped

    def loglik(self, x: float) -> float:
        gam, _ = self._gamma(x)
        X = self.x
        return float(np.sum(X * np.log(gam) + (1 - X) * np.log1p(-gam)))

    def score(self, x: float) -> float:
        """Derivative of :meth:`loglik`; clipped transitions contribute nothing."""
        gam, clipped = self._gamma(x)
        X = self.x
        d = np.where(clipped, 0.0, self.c * (X / gam - (1 - X) / (1 - gam)))
        return float(d.sum() if self.side == "alpha" else -d.sum())

    def mle(self, lo: float, hi: float) -> float:
        """Maximizer of :meth:`loglik` over ``[lo, hi]``.

        The log-likelihood is concave where no transition is clipped; Brent's
        method on the score finds the maximizer there.  Should an endpoint of
        ``[lo, hi]`` inside a clipped range do better, a bracketing search over
        the whole interval is used instead.
        """
        c = self.c[self.c > 0]
        a, b = lo, hi
        if c.size:
            a = min(max(lo, self.lo / c.min()), hi)
            b = max(min(hi, self.hi / c.max()), a)
        if self.score(a) <= 0:
            x = a
        elif self.score(b) >= 0:
            x = b
        else:
            x = float(brentq(self.score, a, b, xtol=1e-12 * max(1.0, b), rtol=8 * np.finfo(float).eps))
        best = self.loglik(x)
        if (a > lo and self.loglik(lo) > best) or (b < hi and self.loglik(hi) > best):
            x = minimize_1d(lambda z: -self.loglik(z), 0.5 * (lo + hi), 0.5 * (hi - lo), lo, hi)
        return x


class _LocalLine:
    """Partial likelihood and projected score of a local parameter, all else fixed.

    Locals enter their side of the kernel linearly, so on the affected
    transitions ``alpha`` (or ``beta``) is ``theta_l * c`` and the projected
    gradient is affine in ``theta_l``.
    """

    def __init__(self, data: TransitionData, values: np.ndarray, l: int):
        self.data, self.values, self.l = data, values, l
        self.side = _local_side(data.index, l)
        kernel = data.kernel
        P = data.n_pairs
        sel = data.selection(l)
        xp = data.x_prev[sel]
        hit = (xp == 0) if self.side == "alpha" else (xp == 1)
        self.aff, self.other = sel[hit], sel[~hit]
        self.ids = data.pidx[self.aff % P]
        P1 = values[self.ids]
        P1[self.ids == l] = 1.0
        self.P1 = P1
        self.stats = data.stats[self.aff]
        a1, b1 = kernel.alpha_beta_values(P1, self.stats)
        self.c = a1 if self.side == "alpha" else b1
        self.x = data.x[self.aff]
        self.t = self.aff // P
        self.T = data.n_steps
        self.norm = 1.0 / (self.T * data.pairs(l).size)
        self.line = _ScaledBernoulli(self.c, self.x, self.side, kernel.eps)
        self._gamma = self.line._gamma
        self.loglik = self.line.loglik
        self.score = self.line.score
        self.mle = self.line.mle

    def projector(self, phi: np.ndarray):
        kernel, data = self.data.kernel, self.data
        P0 = self.P1.copy()
        P0[self.ids == self.l] = 0.0
        _, _, da0, db0 = kernel.parts(P0, self.stats)
        _, _, da1, db1 = kernel.parts(self.P1, self.stats)
        d0, d1 = (da0, da1) if self.side == "alpha" else (db0, db1)
        ph = phi[self.ids]
        u0 = (d0 * ph).sum(1)
        u1 = (d1 * ph).sum(1) - u0
        if self.side == "beta":
            u0, u1 = -u0, -u1
        T = self.T
        if self.other.size:
            ev, ids = data.evaluate(self.values, self.other)
            gam = ev.gamma
            r = (data.x[self.other] - gam) / (gam * (1 - gam))
            const = np.bincount(self.other // data.n_pairs, r * (ev.grad * phi[ids]).sum(1), T)
        else:
            const = np.zeros(T)
        X, t = self.x, self.t

        def per_t(x):
            gam, clipped = self._gamma(x)
            r = (X - gam) / (gam * (1 - gam))
            contrib = np.where(clipped, 0.0, r * (x * u1 + u0))
            return const + np.bincount(t, contrib, T)

        return per_t


def _generic_projector(data: TransitionData, values: np.ndarray, l: int, phi: np.ndarray):
    sel = data.selection(l)
    T = data.n_steps
    X = data.x[sel]

    def per_t(x):
        v = values.copy()
        v[l] = x
        ev, ids = data.evaluate(v, sel)
        gam = ev.gamma
        r = (X - gam) / (gam * (1 - gam))
        return (r * (ev.grad * phi[ids]).sum(1)).reshape(T, -1).sum(1)

    return per_t


class _Projectors:
    """Builds projected-score functions for any coordinate at fixed nuisance values."""

    def __init__(self, data: TransitionData, values: np.ndarray):
        self.data = data
        self.values = np.asarray(values, dtype=float).copy()
        self._profile = None

    def __call__(self, l: int, phi: np.ndarray, line: _LocalLine | None = None):
        data = self.data
        if _local_side(data.index, l) is not None:
            return (line or _LocalLine(data, self.values, l)).projector(phi)
        if data.kernel.separable and data.kernel.n_globals:
            if self._profile is None:
                self._profile = GlobalProfile(data, self.values)
            return self._profile.projector(l, phi)
        return _generic_projector(data, self.values, l, phi)


# ---------------------------------------------------------------- initial estimator

@dataclass
class StartFit:
    start: float
    theta: ParameterSet | None
    loglik: float
    status: str
    error: str | None = None


@dataclass
class InitialFit:
    starts: list

    @property
    def best_index(self) -> int:
        ok = [k for k, s in enumerate(self.starts) if s.theta is not None]
        if not ok:
            raise EstimationError("the optimizer failed for every starting value")
        return max(ok, key=lambda k: self.starts[k].loglik)

    @property
    def best(self) -> StartFit:
        return self.starts[self.best_index]

    @property
    def theta(self) -> ParameterSet:
        return self.best.theta


def _as_data(kernel, series, eps) -> TransitionData:
    if isinstance(series, TransitionData):
        return series
    return TransitionData.from_series(get_kernel(kernel, eps=eps), series)


def _full_objective(data: TransitionData, l: int = 0):
    """Normalized full log-likelihood and gradient in all parameters (small models only)."""
    def f(v):
        c = ScoreCache(data, v, order=1)
        return c.partial_loglik(l), c.score(l)
    return f


def _fit_one_start(data: TransitionData, start: float, cfg: EstimationConfig) -> StartFit:
    kernel, index = data.kernel, data.index
    G = kernel.n_globals
    q = index.q
    values = np.full(q, float(start))
    status = "converged"
    if index.kernel_id == "global_ar":
        lo, hi = kernel.global_bounds
        values = np.clip(values, lo, hi)
        res = maximize_box(_full_objective(data), values, OptimizerSettings(lower=lo, upper=hi))
        values, status = res.x, res.status
    else:
        if G:
            lo, hi = kernel.global_bounds
            values[:G] = np.clip(cfg.global_start, lo, hi)
            prof = GlobalProfile(data, values)
            res = maximize_box(prof.loglik_grad, values[:G], OptimizerSettings(lower=lo, upper=hi))
            values[:G] = res.x
            status = res.status
        lo, hi = kernel.local_bounds
        base = values.copy()
        for l in range(G, q):
            values[l] = _LocalLine(data, base, l).mle(lo, hi)
    ll = data.loglik_sum(values)
    return StartFit(float(start), ParameterSet(values, index), ll, status)


def fit_initial(kernel, series, cfg: EstimationConfig | None = None) -> InitialFit:
    """Initial estimates from every value of the start grid."""
    cfg = cfg or EstimationConfig()
    data = _as_data(kernel, series, cfg.eps)
    starts = []
    for s in cfg.init_grid:
        try:
            starts.append(_fit_one_start(data, s, cfg))
        except (OptimizerError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.warning("start %.3g failed: %s", s, exc)
            starts.append(StartFit(s, None, -math.inf, "failed", str(exc)))
    out = InitialFit(starts)
    out.best_index  # raises if every start failed
    return out


# ---------------------------------------------------------------- refined estimator

@dataclass
class FitReport:
    """Estimates, projection directions, variances and intervals for one fit."""

    kernel: str
    p: int
    n: int
    names: list
    method: str
    theta_initial: list
    theta_pilot: list
    theta_check: list | None = None
    theta_hat: list | None = None
    tau: list | None = None
    tau_tilde: list | None = None
    phi: list | None = None
    lp_residual: list | None = None
    lp_status: list | None = None
    variance_ratio: list | None = None
    zeta: list | None = None
    se: list | None = None
    ci_lower: list | None = None
    ci_upper: list | None = None
    ci_available: list | None = None
    level: float = 0.95
    loglik: float = math.nan
    loglik_initial: float = math.nan
    clip_counts: dict = field(default_factory=dict)
    imom_iterations: int | None = None
    imom_converged: bool | None = None
    starts: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def estimate(self) -> np.ndarray:
        return np.asarray(self.theta_hat if self.theta_hat is not None else self.theta_pilot, dtype=float)

    def position(self, name: str) -> int:
        return self.names.index(name)

    def to_dict(self) -> dict:
        d = asdict(self)
        return _jsonable(d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _variance_ratio(per_t, x: float, lo: float, hi: float) -> float:
    """``sum_t (phi.g_t)^2 / (d/dx sum_t phi.g_t)^2`` with a central difference."""
    h = 1e-6 * max(1.0, abs(x))
    a, b = max(lo, x - h), min(hi, x + h)
    if b <= a:
        return math.inf
    deriv = (per_t(b).sum() - per_t(a).sum()) / (b - a)
    num = float(np.sum(per_t(x) ** 2))
    if deriv == 0 or not math.isfinite(deriv):
        return math.inf
    return num / deriv ** 2


def variance_estimate(l: int, theta_hat, phi, series, kernel=None, cache: ScoreCache | None = None) -> float:
    """``[(n-m)|S_l|]^{-1} sum (phi.d gamma)^2 / (gamma (1 - gamma))`` at ``theta_hat``."""
    values = theta_hat.values if isinstance(theta_hat, ParameterSet) else np.asarray(theta_hat, dtype=float)
    if cache is None:
        kid = kernel or (theta_hat.kernel_id if isinstance(theta_hat, ParameterSet) else None)
        data = series if isinstance(series, TransitionData) else TransitionData.from_series(kid, series)
        cache = ScoreCache(data, values, order=1)
    data = cache.data
    phi = np.asarray(phi, dtype=float)
    sel = data.selection(l)
    ids = data.pidx[sel % data.n_pairs]
    proj = (cache.grad[sel] * phi[ids]).sum(1)
    gam = cache.gamma[sel]
    return float(np.sum(proj ** 2 / (gam * (1 - gam))) / sel.size)


def _bounds_for(kernel, index, l):
    return kernel.local_bounds if _local_side(index, l) is not None else kernel.global_bounds


def _radii(cfg, index, l):
    if _local_side(index, l) is not None:
        return cfg.r_tilde_local, cfg.r_check_local
    return cfg.r_tilde_global, cfg.r_check_global


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def fit_improved(kernel, series, theta_tilde: ParameterSet, cfg: EstimationConfig | None = None,
                 targets=None) -> FitReport:
    """Projection-refined estimates ``theta_check`` and ``theta_hat`` with intervals.

    ``targets`` restricts refinement to a subset of parameter indices; the
    others keep their pilot values.
    """
    cfg = cfg or EstimationConfig()
    data = _as_data(kernel, series, cfg.eps)
    kernel, index = data.kernel, data.index
    q, T = index.q, data.n_steps
    n = T + kernel.order
    threads = resolve_threads(cfg.threads)
    timings = {}
    t0 = time.perf_counter()
    tilde = np.asarray(theta_tilde.values, dtype=float)
    targets = list(range(q)) if targets is None else [int(l) for l in targets]
    root_delta = math.sqrt(delta_n(n, index.p))

    cache = ScoreCache(data, tilde, order=2)
    timings["jacobian_cache"] = time.perf_counter() - t0
    proj_tilde = _Projectors(data, tilde)

    check = tilde.copy()
    phis = np.zeros((q, q))
    tau_sel = np.full(q, np.nan)
    tau_tilde_sel = np.full(q, np.nan)
    resid = np.full(q, np.nan)
    ratio_sel = np.full(q, np.nan)
    status = ["not refined"] * q
    flags: list = []

    def pass1(l):
        H = cache.score_jacobian(l)
        support = np.unique(data.pidx[data.pairs(l)])
        pos = int(np.searchsorted(support, l))
        Hs = H[np.ix_(support, support)]
        lo, hi = _bounds_for(kernel, index, l)
        r_tilde, _ = _radii(cfg, index, l)
        line = _LocalLine(data, tilde, l) if _local_side(index, l) is not None else None
        best = None
        statuses = []
        grid = cfg.tau_grid
        if line is not None and cfg.tau_grid_local is not None:
            grid = cfg.tau_grid_local
        projection = L1Projection(Hs, pos)
        for tt in grid:
            tau = tt * root_delta
            lp = projection.solve(tau)
            statuses.append(lp.status)
            if not lp.ok or not np.any(lp.x):
                continue
            phi = np.zeros(q)
            phi[support] = lp.x
            per_t = proj_tilde(l, phi, line)
            norm_l = 1.0 / (T * data.pairs(l).size)
            x_chk = nearest_root(lambda x: per_t(x).sum() * norm_l, tilde[l], r_tilde, lo, hi, slope=1)
            ratio = _variance_ratio(per_t, x_chk, lo, hi)
            if best is None or ratio < best[3]:
                best = (tt, tau, x_chk, ratio, lp.residual, phi)
        return l, best, statuses

    t1 = time.perf_counter()
    for l, best, statuses in _map(pass1, targets, threads):
        if best is None:
            status[l] = "lp failed" if "optimal" not in statuses else "zero projection"
            flags.append(f"{index.names[l]}: no usable projection for any tau; pilot value kept")
            continue
        tt, tau, x_chk, ratio, res_, phi = best
        check[l] = x_chk
        phis[l] = phi
        tau_sel[l], tau_tilde_sel[l], ratio_sel[l], resid[l] = tau, tt, ratio, res_
        status[l] = "optimal"
    timings["projection_and_check"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    hat = check.copy()
    deriv = np.full(q, np.nan)
    proj_check = _Projectors(data, check)
    refined = [l for l in targets if status[l] == "optimal"]

    def pass2(l):
        lo, hi = _bounds_for(kernel, index, l)
        _, r_check = _radii(cfg, index, l)
        per_t = proj_check(l, phis[l])
        norm_l = 1.0 / (T * data.pairs(l).size)
        x_hat = nearest_root(lambda x: per_t(x).sum() * norm_l, check[l], r_check, lo, hi, slope=1)
        h = 1e-6 * max(1.0, abs(x_hat))
        a, b = max(lo, x_hat - h), min(hi, x_hat + h)
        d = (per_t(b).sum() - per_t(a).sum()) * norm_l / (b - a) if b > a else 0.0
        return l, x_hat, d

    for l, x_hat, d in _map(pass2, refined, threads):
        hat[l] = x_hat
        deriv[l] = d
    timings["final"] = time.perf_counter() - t2

    t3 = time.perf_counter()
    final_cache = ScoreCache(data, hat, order=1)
    z = norm.ppf(0.5 + cfg.level / 2)
    zeta = np.full(q, np.nan)
    se = np.full(q, np.nan)
    lower = np.full(q, np.nan)
    upper = np.full(q, np.nan)
    avail = [False] * q
    for l in refined:
        zeta[l] = variance_estimate(l, hat, phis[l], data, cache=final_cache)
        S = data.pairs(l).size
        if zeta[l] > 0 and abs(deriv[l]) > 1e-12:
            se[l] = math.sqrt(zeta[l] / (n * S))
            lower[l], upper[l] = hat[l] - z * se[l], hat[l] + z * se[l]
            avail[l] = True
        else:
            flags.append(f"{index.names[l]}: interval unavailable")
    timings["variance"] = time.perf_counter() - t3
    timings["total_refine"] = time.perf_counter() - t0

    phi_sparse = [
        {index.names[k]: float(phis[l, k]) for k in np.flatnonzero(phis[l])} for l in range(q)
    ]
    return FitReport(
        kernel=index.kernel_id, p=index.p, n=n, names=list(index.names), method=cfg.method,
        theta_initial=tilde.tolist(), theta_pilot=tilde.tolist(), theta_check=check.tolist(),
        theta_hat=hat.tolist(), tau=tau_sel.tolist(), tau_tilde=tau_tilde_sel.tolist(), phi=phi_sparse,
        lp_residual=resid.tolist(), lp_status=status, variance_ratio=ratio_sel.tolist(),
        zeta=zeta.tolist(), se=se.tolist(), ci_lower=lower.tolist(), ci_upper=upper.tolist(),
        ci_available=avail, level=cfg.level, loglik=data.loglik_sum(hat),
        loglik_initial=data.loglik_sum(tilde),
        clip_counts={"pilot": cache.clip_count, "final": final_cache.clip_count},
        flags=flags, timings=timings,
    )


# ---------------------------------------------------------------- pipelines

def _imom_applicable(kernel) -> bool:
    return kernel.separable and kernel.order == 1 and kernel.n_globals > 0


def _node_incidence(data: TransitionData, prof: GlobalProfile):
    """For each node, the off/on transition rows it takes part in and the partner node."""
    rows, cols = pair_arrays(data.index.p)
    out = []
    for pair, n_rows in ((prof.pair_off, None), (prof.pair_on, None)):
        r, c = rows[pair], cols[pair]
        order = np.argsort(np.concatenate([r, c]), kind="stable")
        node = np.concatenate([r, c])[order]
        idx = np.concatenate([np.arange(pair.size), np.arange(pair.size)])[order]
        partner = np.concatenate([c, r])[order]
        bounds = np.searchsorted(node, np.arange(data.index.p + 1))
        out.append((idx, partner, bounds))
    return out


def polish(data: TransitionData, values: np.ndarray, sweeps: int, rtol: float = 1e-6):
    """Block coordinate ascent on the full log-likelihood: globals jointly, then each local in turn.

    Each local's partial likelihood is the only part of the full likelihood
    that depends on it, so every sweep is monotone.  Stops after ``sweeps``
    sweeps or when a sweep gains less than ``rtol * |loglik|``.  Returns the
    values and the number of sweeps performed.
    """
    kernel, index = data.kernel, data.index
    v = np.asarray(values, dtype=float).copy()
    if sweeps <= 0 or not kernel.separable or kernel.n_globals == 0:
        return v, 0
    G, p = kernel.n_globals, index.p
    glo, ghi = kernel.global_bounds
    llo, lhi = kernel.local_bounds
    v[:G] = np.clip(v[:G], glo, ghi)
    v[G:] = np.clip(v[G:], llo, lhi)
    ll = data.loglik_sum(v)
    prof = GlobalProfile(data, v)
    (idx_off, partner_off, bnd_off), (idx_on, partner_on, bnd_on) = _node_incidence(data, prof)
    done = 0
    for done in range(1, sweeps + 1):
        prof = GlobalProfile(data, v)
        v[:G] = maximize_box(prof.loglik_grad, v[:G], OptimizerSettings(lower=glo, upper=ghi)).x
        A, B = kernel.globals_shape(list(v[:G]), data.stats_unique)
        A_off, B_on = A[prof.inv_off], B[prof.inv_on]
        for side, base, idx, partner, bnd, shape, X in (
                ("alpha", G, idx_off, partner_off, bnd_off, A_off, prof.x_off),
                ("beta", G + p, idx_on, partner_on, bnd_on, B_on, 1 - prof.x_on)):
            for i in range(p):
                k = idx[bnd[i]:bnd[i + 1]]
                c = v[base + partner[bnd[i]:bnd[i + 1]]] * shape[k]
                # for dissolution the modelled event is the edge vanishing
                line = _ScaledBernoulli(c, X[k], "alpha", kernel.eps)
                v[base + i] = line.mle(llo, lhi)
        new = data.loglik_sum(v)
        gain, ll = new - ll, new
        if gain < rtol * abs(ll):
            break
    return v, done


def _pilot(data: TransitionData, start_fit: StartFit, cfg: EstimationConfig):
    """Moment-iteration pilot from an initial fit, or the initial fit itself.

    The iteration is run twice, once from the initial estimate and once from
    the constant start value, and the run ending at the higher full
    log-likelihood is kept.
    """
    from .imom import imom_fit

    if cfg.method == "mle" or not _imom_applicable(data.kernel):
        return start_fit.theta, None
    kernel = data.kernel
    G = kernel.n_globals
    best = None
    for origin, st in (("initial estimate", start_fit.theta), ("start value", start_fit.start)):
        res = imom_fit(kernel, data, st, tol=cfg.imom_tol, max_iter=cfg.imom_max_iter,
                       safeguard=cfg.imom_safeguard)
        vals = res.theta.values.copy()
        vals[G:] = np.clip(vals[G:], *kernel.local_bounds)
        vals[:G] = np.clip(vals[:G], *kernel.global_bounds)
        ll = data.loglik_sum(vals)
        if best is None or ll > best[0]:
            best = (ll, vals, res, origin)
    ll, vals, res, origin = best
    res.flags.append(f"moment iteration from the {origin} kept")
    if cfg.polish_sweeps:
        vals, k = polish(data, vals, cfg.polish_sweeps, cfg.polish_tol)
        res.flags.append(f"{k} coordinate-ascent sweep(s) applied to the moment estimate")
    return ParameterSet(vals, data.index), res


def _report_for_start(data: TransitionData, sf: StartFit, cfg: EstimationConfig, targets=None) -> FitReport:
    t0 = time.perf_counter()
    pilot, imom_res = _pilot(data, sf, cfg)
    t_imom = time.perf_counter() - t0
    flags = list(imom_res.flags) if imom_res is not None else []
    if cfg.method == "imom":
        if imom_res is None:
            flags.append("moment iteration not applicable to this kernel; initial estimate reported")
        index = data.index
        rep = FitReport(kernel=index.kernel_id, p=index.p, n=data.n_steps + data.kernel.order,
                        names=list(index.names), method=cfg.method, theta_initial=sf.theta.values.tolist(),
                        theta_pilot=pilot.values.tolist(), level=cfg.level,
                        loglik=data.loglik_sum(pilot.values), loglik_initial=sf.loglik)
    else:
        rep = fit_improved(data.kernel, data, pilot, cfg, targets=targets)
        rep.theta_initial = sf.theta.values.tolist()
        rep.loglik_initial = sf.loglik
    if imom_res is not None:
        rep.imom_iterations = imom_res.iterations
        rep.imom_converged = imom_res.converged
    rep.flags = flags + rep.flags
    rep.timings["imom"] = t_imom
    return rep


def fit(kernel, series, cfg: EstimationConfig | None = None, targets=None) -> FitReport:
    """Full pipeline on the best-likelihood start of the init grid."""
    cfg = cfg or EstimationConfig()
    data = _as_data(kernel, series, cfg.eps)
    t0 = time.perf_counter()
    init = fit_initial(data.kernel, data, cfg)
    t_init = time.perf_counter() - t0
    rep = _report_for_start(data, init.best, cfg, targets)
    rep.starts = [{"start": s.start, "loglik": s.loglik, "status": s.status} for s in init.starts]
    rep.timings["initial"] = t_init
    return rep


def fit_all_starts(kernel, series, cfg: EstimationConfig | None = None, targets=None) -> list:
    """One report per start of the init grid (used for error metrics averaged over starts)."""
    cfg = cfg or EstimationConfig()
    data = _as_data(kernel, series, cfg.eps)
    init = fit_initial(data.kernel, data, cfg)
    out = []
    for sf in init.starts:
        if sf.theta is None:
            out.append(None)
            continue
        rep = _report_for_start(data, sf, cfg, targets)
        rep.starts = [{"start": sf.start, "loglik": sf.loglik, "status": sf.status}]
        out.append(rep)
    return out


def rmae(estimates, truth, indices=None) -> float:
    """Relative mean absolute error averaged over estimates (e.g. over starts) and indices."""
    truth = np.asarray(truth, dtype=float)
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    if indices is not None:
        est = est[:, indices]
        truth = truth[indices]
    return float(np.mean(np.abs(est - truth) / np.abs(truth)))


# ---------------------------------------------------------------- replications

def _replication_worker(args):
    truth, n, cfg, seed, sim_kwargs, all_starts = args
    from .simulate import SimConfig, simulate

    series = simulate(SimConfig(truth, n=n, seed=seed, **sim_kwargs))
    worker_cfg = EstimationConfig(**{**cfg.to_dict(), "threads": 1})
    try:
        if all_starts:
            return fit_all_starts(truth.kernel_id, series, worker_cfg)
        return [fit(truth.kernel_id, series, worker_cfg)]
    except EstimationError:
        return []


def replicate(truth: ParameterSet, n: int, cfg: EstimationConfig | None = None, replications: int = 20,
              seed_base: int = 0, all_starts: bool = True, threads: int | None = None,
              **sim_kwargs) -> list:
    """Simulate and fit ``replications`` series; replication ``r`` uses seed ``seed_base + r``.

    Returns one list of reports per replication (one report per start with
    ``all_starts``, else the best start only).  Replications are spread over
    a process pool sized by ``threads``.
    """
    from concurrent.futures import ProcessPoolExecutor

    cfg = cfg or EstimationConfig()
    jobs = [(truth, n, cfg, seed_base + r, sim_kwargs, all_starts) for r in range(replications)]
    workers = min(resolve_threads(threads if threads is not None else cfg.threads), max(1, replications))
    if workers <= 1:
        return [_replication_worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_replication_worker, jobs))


def summarize_replications(results: list, truth: ParameterSet) -> dict:
    """rMAE of the initial and final estimates, interval coverage and length.

    rMAE is averaged over the reports of a replication (the starts of the
    init grid) and then over replications; node blocks are averaged over
    nodes.  Coverage and length are pooled over every report.
    """
    index = truth.index
    t = truth.values
    G = len(index.global_set)
    groups = {index.names[l]: [int(l)] for l in index.global_set}
    if index.kernel_id in ("degree_het", "persistence", "transitivity", "transitivity_ext"):
        groups["xi"] = list(range(G, G + index.p))
        groups["eta"] = list(range(G + index.p, G + 2 * index.p))
    stages = {"initial": "theta_initial", "pilot": "theta_pilot", "hat": "theta_hat"}
    out: dict = {"replications": len(results), "failed": sum(1 for r in results if not any(r)),
                 "rmae": {s: {} for s in stages}, "coverage": {}, "ci_length": {}}
    for stage, attr in stages.items():
        for name, idx in groups.items():
            per_rep = []
            for reps in results:
                ests = [getattr(r, attr) for r in reps if r is not None and getattr(r, attr) is not None]
                if ests:
                    per_rep.append(rmae(ests, t, idx))
            out["rmae"][stage][name] = float(np.mean(per_rep)) if per_rep else None
    for l in index.global_set:
        name = index.names[l]
        hits, lengths = [], []
        for reps in results:
            for r in reps:
                if r is None or not r.ci_available or not r.ci_available[l]:
                    continue
                hits.append(r.ci_lower[l] <= t[l] <= r.ci_upper[l])
                lengths.append(r.ci_upper[l] - r.ci_lower[l])
        out["coverage"][name] = float(np.mean(hits)) if hits else None
        out["ci_length"][name] = float(np.mean(lengths)) if lengths else None
    return out
