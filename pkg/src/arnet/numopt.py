"""Optimization routines: projected quasi-Newton ascent, bounded 1-D search, dense LP."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import highspy
from scipy import sparse
from scipy.optimize import brentq, linprog

__all__ = [
    "OptimizerError",
    "OptimizerSettings",
    "MaximizeResult",
    "maximize_box",
    "minimize_1d",
    "nearest_root",
    "LpProblem",
    "LpResult",
    "solve_lp",
    "L1Projection",
    "solve_l1_projection",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class OptimizerError(RuntimeError):
    """Raised when an objective returns a non-finite value where one is required."""


@dataclass
class OptimizerSettings:
    max_iter: int = 200
    gtol: float = 1e-8
    shrink: float = 0.5
    armijo: float = 1e-4
    lower: np.ndarray | float = -np.inf
    upper: np.ndarray | float = np.inf
    max_backtracks: int = 60

    def __post_init__(self):
        if self.gtol <= 0 or self.armijo <= 0 or not 0 < self.shrink < 1:
            raise ValueError("optimizer tolerances must be positive and shrink in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


@dataclass
class MaximizeResult:
    x: np.ndarray
    fun: float
    status: str
    n_iter: int
    n_eval: int

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def __iter__(self):
        yield from (self.x, self.fun, self.status)


def maximize_box(f, x0, settings: OptimizerSettings | None = None) -> MaximizeResult:
    """Maximize ``f`` over a box by projected BFGS with Armijo backtracking.

    ``f(x)`` returns ``(value, gradient)``.  Coordinates sitting on a bound
    with the gradient pointing outward are frozen for the step.  Status is one
    of ``converged``, ``max_iter``, ``stalled`` (no further increase possible
    at machine precision).
    """
    st = settings or OptimizerSettings()
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    d_ = x.size
    lo = np.broadcast_to(np.asarray(st.lower, dtype=float), (d_,))
    hi = np.broadcast_to(np.asarray(st.upper, dtype=float), (d_,))
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError("x0 must lie inside the box")

    def call(z):
        val, grad = f(z)
        val = float(val)
        grad = np.atleast_1d(np.asarray(grad, dtype=float))
        if not math.isfinite(val) or not np.all(np.isfinite(grad)):
            raise OptimizerError(f"non-finite objective or gradient at {z!r}")
        return val, grad

    fx, g = call(x)
    n_eval = 1
    Hinv = np.eye(d_)
    first = True
    for it in range(st.max_iter):
        pg = x - np.clip(x + g, lo, hi)
        if np.max(np.abs(pg)) <= st.gtol:
            return MaximizeResult(x, fx, "converged", it, n_eval)
        active = ((x <= lo) & (g < 0)) | ((x >= hi) & (g > 0))
        free = ~active
        d = np.zeros(d_)
        d[free] = Hinv[np.ix_(free, free)] @ g[free]
        if g @ d <= 0:
            Hinv = np.eye(d_)
            d = np.where(free, g, 0.0)
        if first:
            # scale the first step so it moves at most a unit distance
            d = d / max(1.0, np.max(np.abs(d)))
        step = 1.0
        accepted = False
        for _ in range(st.max_backtracks):
            x_new = np.clip(x + step * d, lo, hi)
            f_new, g_new = call(x_new)
            n_eval += 1
            if f_new >= fx + st.armijo * (g @ (x_new - x)) and f_new >= fx:
                accepted = True
                break
            step *= st.shrink
        if not accepted:
            if np.allclose(Hinv, np.eye(d_)):
                return MaximizeResult(x, fx, "stalled", it, n_eval)
            Hinv = np.eye(d_)
            continue
        s = x_new - x
        y = -(g_new - g)
        sy = s @ y
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            if first:
                Hinv = np.eye(d_) * (sy / (y @ y))
            rho = 1.0 / sy
            V = np.eye(d_) - rho * np.outer(s, y)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
            first = False
        if f_new - fx <= 1e-15 * max(1.0, abs(fx)) and np.max(np.abs(s)) <= 1e-14 * max(1.0, np.max(np.abs(x))):
            x, fx, g = x_new, f_new, g_new
            return MaximizeResult(x, fx, "stalled", it + 1, n_eval)
        x, fx, g = x_new, f_new, g_new
    pg = x - np.clip(x + g, lo, hi)
    status = "converged" if np.max(np.abs(pg)) <= st.gtol else "max_iter"
    return MaximizeResult(x, fx, status, st.max_iter, n_eval)


def _golden(G, lo_, hi_, tol, better):
    c = hi_ - _GOLDEN * (hi_ - lo_)
    d = lo_ + _GOLDEN * (hi_ - lo_)
    fc, fd = G(c), G(d)
    while hi_ - lo_ > tol:
        if better(c, fc, d, fd):
            hi_, d, fd = d, c, fc
            c = hi_ - _GOLDEN * (hi_ - lo_)
            fc = G(c)
        else:
            lo_, c, fc = c, d, fd
            d = lo_ + _GOLDEN * (hi_ - lo_)
            fd = G(d)
        if c >= d:
            break
    cands = [0.5 * (lo_ + hi_), lo_, hi_]
    xs = np.array([lo_, 0.5 * (lo_ + hi_), hi_])
    if xs[2] - xs[0] > 0:
        ys = np.array([G(v) for v in xs])
        den = (xs[1] - xs[0]) * (ys[1] - ys[2]) - (xs[1] - xs[2]) * (ys[1] - ys[0])
        if den != 0:
            num = (xs[1] - xs[0]) ** 2 * (ys[1] - ys[2]) - (xs[1] - xs[2]) ** 2 * (ys[1] - ys[0])
            xp = xs[1] - 0.5 * num / den
            if lo_ <= xp <= hi_:
                cands.append(float(xp))
    return cands


def minimize_1d(g, center: float, radius: float, lower: float = -np.inf, upper: float = np.inf,
                xtol: float | None = None, n_scan: int = 33, rtol_tie: float = 1e-9) -> float:
    """Minimize a scalar function over ``[center - radius, center + radius]`` (intersected with bounds).

    The interval is first scanned on ``n_scan`` equispaced points; every
    bracketed local minimum is refined by golden-section search to width
    ``1e-10 * max(1, |center|)`` followed by one parabolic polish.  Minima
    whose values agree within ``rtol_tie`` times the largest scanned value
    count as ties, and ties go to the point closest to ``center``.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    a = max(center - radius, lower)
    b = min(center + radius, upper)
    if a > b:
        raise ValueError("search interval is empty")
    tol = xtol if xtol is not None else 1e-10 * max(1.0, abs(center))

    cache: dict[float, float] = {}

    def G(x):
        x = float(x)
        v = cache.get(x)
        if v is None:
            v = float(g(x))
            if not math.isfinite(v):
                raise OptimizerError(f"non-finite objective at x={x!r}")
            cache[x] = v
        return v

    def better(x1, v1, x2, v2):
        if v1 != v2:
            return v1 < v2
        return abs(x1 - center) <= abs(x2 - center)

    if b - a <= tol:
        return float(min((a, b), key=lambda x: (G(x), abs(x - center))))
    grid = np.linspace(a, b, max(3, int(n_scan)))
    if a <= center <= b:
        grid = np.unique(np.append(grid, center))
    vals = np.array([G(x) for x in grid])
    cands = [a, b]
    for k in range(len(grid)):
        left = vals[k - 1] if k > 0 else np.inf
        right = vals[k + 1] if k + 1 < len(grid) else np.inf
        if vals[k] <= left and vals[k] <= right:
            lo_ = grid[max(k - 1, 0)]
            hi_ = grid[min(k + 1, len(grid) - 1)]
            cands.extend(_golden(G, lo_, hi_, tol, better))
    cvals = np.array([G(x) for x in cands])
    best = float(cvals.min())
    slack = rtol_tie * max(float(np.max(np.abs(vals))), 1e-300)
    tied = [x for x, v in zip(cands, cvals) if v <= best + slack]
    return float(min(tied, key=lambda x: (abs(x - center), G(x))))


def nearest_root(f, center: float, radius: float, lower: float = -np.inf, upper: float = np.inf,
                 n_scan: int = 17, xtol: float | None = None, slope: int = 0) -> float:
    """Minimize ``f(x)**2`` over ``[center - radius, center + radius]`` (intersected with bounds).

    Sign changes of ``f`` on an ``n_scan``-point grid are refined by Brent's
    method; every root attains the minimum, so the root closest to ``center``
    is returned.  ``slope=+1`` (``-1``) prefers roots where ``f`` increases
    (decreases), falling back to any root.  Without a sign change this falls
    back to :func:`minimize_1d`.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    a = max(center - radius, lower)
    b = min(center + radius, upper)
    if a > b:
        raise ValueError("search interval is empty")
    tol = xtol if xtol is not None else 1e-10 * max(1.0, abs(center))
    grid = np.linspace(a, b, max(3, int(n_scan)))
    if a <= center <= b:
        grid = np.unique(np.append(grid, center))
    vals = np.array([float(f(x)) for x in grid])
    if not np.all(np.isfinite(vals)):
        raise OptimizerError("non-finite value while scanning for a root")
    roots, preferred = [], []
    for k in np.flatnonzero(vals == 0.0):
        roots.append(grid[k])
        lo, hi = vals[max(k - 1, 0)], vals[min(k + 1, vals.size - 1)]
        if slope and np.sign(hi - lo) == np.sign(slope):
            preferred.append(grid[k])
    for k in np.flatnonzero(vals[:-1] * vals[1:] < 0):
        r = brentq(f, grid[k], grid[k + 1], xtol=tol, rtol=4 * np.finfo(float).eps)
        roots.append(r)
        if slope and np.sign(vals[k + 1] - vals[k]) == np.sign(slope):
            preferred.append(r)
    roots = preferred or roots
    if roots:
        return float(min(roots, key=lambda x: abs(x - center)))
    return minimize_1d(lambda x: float(f(x)) ** 2, center, radius, lower, upper, xtol=xtol)


@dataclass
class LpProblem:
    """``min c.z  s.t.  A_ub z <= b_ub`` with optional nonnegativity per coordinate."""

    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    nonneg: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A_ub = np.atleast_2d(np.asarray(self.A_ub, dtype=float))
        self.b_ub = np.asarray(self.b_ub, dtype=float)
        if self.A_ub.shape != (self.b_ub.size, self.c.size):
            raise ValueError("LP dimensions are inconsistent")
        if self.nonneg is None:
            self.nonneg = np.ones(self.c.size, dtype=bool)


@dataclass
class LpResult:
    x: np.ndarray | None
    objective: float
    status: str
    residual: float = math.nan
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


_HIGHS_STATUS = {0: "optimal", 1: "iteration_limit", 2: "infeasible", 3: "unbounded", 4: "numerical"}


def solve_lp(problem: LpProblem, tol: float = 1e-10) -> LpResult:
    bounds = [(0, None) if nn else (None, None) for nn in problem.nonneg]
    res = linprog(problem.c, A_ub=problem.A_ub, b_ub=problem.b_ub, bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": tol, "dual_feasibility_tolerance": tol,
                           "presolve": True})
    status = _HIGHS_STATUS.get(res.status, "error")
    if status != "optimal":
        return LpResult(None, math.nan, status, info={"message": res.message})
    return LpResult(res.x, float(res.fun), status)


class L1Projection:
    """``argmin |u|_1  s.t.  |H^T u - e_l|_inf <= tau`` for a sequence of ``tau``.

    The LP ``min 1.(u+ + u-)`` over the band ``e_l - tau <= H^T (u+ - u-) <=
    e_l + tau`` is built once; changing ``tau`` only moves the row bounds, so
    later solves start from the previous optimal basis.
    """

    def __init__(self, H, l: int, tol: float = 1e-10):
        H = np.asarray(H, dtype=float)
        q = H.shape[0]
        if H.shape != (q, q):
            raise ValueError("H must be square")
        if not 0 <= l < q:
            raise ValueError("l out of range")
        self.q, self.l, self.Ht = q, l, H.T
        self.e = np.zeros(q)
        self.e[l] = 1.0
        A = sparse.csc_matrix(np.hstack([H.T, -H.T]))
        lp = highspy.HighsLp()
        lp.num_col_, lp.num_row_ = 2 * q, q
        lp.col_cost_ = np.ones(2 * q)
        lp.col_lower_ = np.zeros(2 * q)
        lp.col_upper_ = np.full(2 * q, highspy.kHighsInf)
        lp.row_lower_ = self.e.copy()
        lp.row_upper_ = self.e.copy()
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.num_col_, lp.a_matrix_.num_row_ = 2 * q, q
        lp.a_matrix_.start_ = A.indptr
        lp.a_matrix_.index_ = A.indices
        lp.a_matrix_.value_ = A.data
        self._h = highspy.Highs()
        self._h.setOptionValue("output_flag", False)
        self._h.setOptionValue("primal_feasibility_tolerance", tol)
        self._h.setOptionValue("dual_feasibility_tolerance", tol)
        self._h.passModel(lp)
        self._rows = np.arange(q, dtype=np.int32)

    def _run(self, band: float) -> LpResult:
        h = self._h
        h.changeRowsBounds(self.q, self._rows, self.e - band, self.e + band)
        h.run()
        model_status = h.getModelStatus()
        if model_status != highspy.HighsModelStatus.kOptimal:
            label = {highspy.HighsModelStatus.kInfeasible: "infeasible",
                     highspy.HighsModelStatus.kUnbounded: "unbounded",
                     highspy.HighsModelStatus.kIterationLimit: "iteration_limit"}.get(model_status, "numerical")
            return LpResult(None, math.nan, label, info={"message": h.modelStatusToString(model_status)})
        z = np.asarray(h.getSolution().col_value)
        u = z[:self.q] - z[self.q:]
        resid = float(np.max(np.abs(self.Ht @ u - self.e)))
        return LpResult(u, float(np.abs(u).sum()), "optimal", resid)

    def solve(self, tau: float, tol: float = 1e-8) -> LpResult:
        """Solve at ``tau``; a solution violating the band by more than ``tol`` is re-solved on a tighter band."""
        if tau < 0:
            raise ValueError("tau must be non-negative")
        margin = 0.0
        for attempt in range(3):
            out = self._run(max(tau - margin, 0.0))
            if not out.ok:
                return out
            out.info["attempts"] = attempt + 1
            if out.residual <= tau + tol:
                return out
            margin = max(2 * margin, 0.5 * tol, out.residual - tau)
        return out


def solve_l1_projection(H, l: int, tau: float, tol: float = 1e-8) -> LpResult:
    """``argmin |u|_1  s.t.  |H^T u - e_l|_inf <= tau``; the returned ``x`` is ``u`` itself."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return L1Projection(H, l).solve(tau, tol)
