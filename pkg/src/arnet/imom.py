"""Iterative method of moments for kernels with separable local/global structure.

For ``alpha = xi_i xi_j f(globals)`` and ``beta = eta_i eta_j g(globals)`` the
procedure alternates (i) a likelihood step over the globals, (ii) moment
ratios for the pair products ``Xi_ij = xi_i xi_j`` and ``Gamma_ij = eta_i
eta_j`` and (iii) recovery of the node factors from the row sums of those
products through a strongly convex problem in log scale.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import ParameterSet, SnapshotSeries, pair_arrays
from .kernels import get_kernel
from .likelihood import GlobalProfile, TransitionData
from .numopt import OptimizerSettings, maximize_box

__all__ = ["ImomState", "ImomResult", "recover_locals", "moment_products", "imom_fit", "global_step"]

log = logging.getLogger(__name__)


def _objective(x, v):
    e = np.exp(x)
    S = e.sum()
    return 0.5 * (S * S - np.sum(e * e)) - x @ v


def recover_locals(v, x0=None, max_iter: int = 200, tol: float | None = None) -> np.ndarray:
    """Minimize ``sum_{i<j} exp(x_i + x_j) - x.v`` by damped Newton; returns ``x``.

    The minimizer satisfies ``sum_{j != i} exp(x_i + x_j) = v_i``, i.e. it
    inverts the map from node factors to row sums of their outer product.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 3:
        raise ValueError("need a vector with at least three entries")
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise ValueError("row sums must be strictly positive")
    tol = 1e-10 * max(1.0, float(np.max(np.abs(v)))) if tol is None else tol
    x = np.log(v / np.sqrt(v.sum())) if x0 is None else np.asarray(x0, dtype=float).copy()
    fx = _objective(x, v)
    for _ in range(max_iter):
        e = np.exp(x)
        S = e.sum()
        grad = e * (S - e) - v
        if np.max(np.abs(grad)) <= tol:
            return x
        H = np.outer(e, e)
        np.fill_diagonal(H, e * (S - e))
        try:
            d = -np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            d = -grad
        step = 1.0
        slope = grad @ d
        gmax = np.max(np.abs(grad))
        while True:
            x_new = x + step * d
            f_new = _objective(x_new, v)
            if np.isfinite(f_new) and f_new <= fx + 1e-4 * step * slope:
                break
            # near the optimum the decrease is below rounding in f; accept a smaller gradient instead
            e_new = np.exp(x_new)
            if np.isfinite(f_new) and np.max(np.abs(e_new * (e_new.sum() - e_new) - v)) < 0.5 * gmax:
                break
            step *= 0.5
            if step < 1e-16:
                break
        if step < 1e-16:
            # no descent possible at machine precision
            return x
        x, fx = x_new, f_new
    return x


@dataclass
class ImomState:
    iteration: int
    globals_: np.ndarray
    Xi: np.ndarray
    Gamma: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    change: float


@dataclass
class ImomResult:
    theta: ParameterSet
    iterations: int
    converged: bool
    flags: list = field(default_factory=list)
    history: list = field(default_factory=list)


def global_step(data: TransitionData, values: np.ndarray, settings: OptimizerSettings | None = None):
    """Maximize the full normalized log-likelihood over the global block of a node kernel."""
    kernel = data.kernel
    G = kernel.n_globals
    lo, hi = kernel.global_bounds
    st = settings or OptimizerSettings(lower=lo, upper=hi)
    prof = GlobalProfile(data, values)
    x0 = np.clip(values[:G], lo, hi)
    return maximize_box(prof.loglik_grad, x0, st)


def moment_products(data: TransitionData, values: np.ndarray):
    """Moment ratios ``Xi`` and ``Gamma`` as ``(p, p)`` symmetric arrays, plus undefined-entry masks."""
    kernel = data.kernel
    G = kernel.n_globals
    p = data.index.p
    T, P = data.n_steps, data.n_pairs
    g = [values[c] for c in range(G)]
    if data.stats_unique is not None:
        A, B = kernel.globals_shape(g, data.stats_unique)
        A, B = A[data.stats_inverse], B[data.stats_inverse]
    else:
        A, B = kernel.globals_shape(g, data.stats)
    x = data.x.reshape(T, P)
    xp = data.x_prev.reshape(T, P)
    A = A.reshape(T, P)
    B = B.reshape(T, P)
    num_xi = (x * (1 - xp)).sum(0)
    den_xi = (A * (1 - xp)).sum(0)
    num_eta = ((1 - x) * xp).sum(0)
    den_eta = (B * xp).sum(0)
    rows, cols = pair_arrays(p)
    out = []
    for num, den in ((num_xi, den_xi), (num_eta, den_eta)):
        undefined = den <= 0
        ratio = np.where(undefined, np.nan, num / np.where(undefined, 1.0, den))
        M = np.full((p, p), np.nan)
        M[rows, cols] = ratio
        M[cols, rows] = ratio
        np.fill_diagonal(M, 0.0)
        if undefined.any():
            # average of the two row means over defined entries
            off = ~np.eye(p, dtype=bool)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                row_mean = np.nanmean(np.where(off, M, np.nan), axis=1)
            row_mean = np.where(np.isfinite(row_mean), row_mean, 0.0)
            fill = 0.5 * (row_mean[rows] + row_mean[cols])
            ratio = np.where(undefined, fill, ratio)
            M[rows, cols] = ratio
            M[cols, rows] = ratio
        out.append((M, undefined))
    (Xi, und_xi), (Gamma, und_eta) = out
    return Xi, Gamma, und_xi, und_eta


def _recover(M: np.ndarray, floor: float, flags: list, label: str) -> np.ndarray:
    v = M.sum(1)
    bad = v <= 0
    if bad.any():
        flags.append(f"degenerate {label}: {int(bad.sum())} node(s) with zero moment row sum")
        v = np.where(bad, floor * floor * (M.shape[0] - 1), v)
    return np.exp(recover_locals(v))


def imom_fit(kernel, series, starts, tol: float = 1e-6, max_iter: int = 100,
             local_floor: float = 1e-8, safeguard: bool = True) -> ImomResult:
    """Iterate the three moment steps from ``starts`` until the max change is below ``tol``.

    ``starts`` is a :class:`ParameterSet` (globals give the optimizer's first
    guess) or a scalar used for every local parameter with globals at 1.

    With ``safeguard`` the full log-likelihood is tracked and the iteration
    stops at the first iterate that lowers it, returning the best iterate.
    The moment map is not an ascent method and, on finite samples, can drift
    along the weakly identified direction that trades global scale against
    local scale.
    """
    if isinstance(series, TransitionData):
        data = series
        kernel = data.kernel
    else:
        kernel = get_kernel(kernel)
        data = TransitionData.from_series(kernel, series)
    if not kernel.separable:
        raise ValueError(f"{kernel.kernel_id} has no separable local/global structure")
    if kernel.order != 1:
        raise ValueError("the moment iteration is defined for first-order kernels only")
    index = data.index
    G, p = kernel.n_globals, index.p
    if isinstance(starts, ParameterSet):
        values = starts.values.copy()
    else:
        values = np.ones(index.q)
        values[G:] = float(starts)
    values[:G] = np.clip(values[:G], *kernel.global_bounds)

    flags: list = []
    history: list = []
    converged = False
    it = 0
    best_ll = -np.inf
    best = values
    for it in range(1, max_iter + 1):
        res = global_step(data, values)
        new = values.copy()
        new[:G] = res.x
        Xi, Gamma, und_xi, und_eta = moment_products(data, new)
        if it == 1:
            if und_xi.any():
                flags.append(f"{int(und_xi.sum())} pair(s) never at risk of formation; ratio imputed")
            if und_eta.any():
                flags.append(f"{int(und_eta.sum())} pair(s) never at risk of dissolution; ratio imputed")
        step_flags: list = []
        new[G:G + p] = _recover(Xi, local_floor, step_flags, "formation")
        new[G + p:] = _recover(Gamma, local_floor, step_flags, "dissolution")
        for fl in step_flags:
            if fl not in flags:
                flags.append(fl)
        change = float(np.max(np.abs(new - values)))
        history.append(ImomState(it, new[:G].copy(), Xi, Gamma, new[G:G + p].copy(), new[G + p:].copy(), change))
        values = new
        if change < tol:
            converged = True
            break
        if safeguard:
            ll = data.loglik_sum(values)
            if ll < best_ll:
                flags.append(f"stopped at iteration {it}: log-likelihood decreased; best iterate returned")
                values = best
                break
            best_ll, best = ll, values
    else:
        log.warning("moment iteration stopped after %d iterations (change %.3g)", it, history[-1].change)
    return ImomResult(ParameterSet(values, index), it, converged, flags, history)
