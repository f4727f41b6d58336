"""Partial log-likelihoods, scores and score Jacobians.

Transitions are stored time-major: observation ``t * n_pairs + k`` is pair
``k`` moving from snapshot ``t + m - 1`` to ``t + m`` (0-based).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .core import ParameterIndex, ParameterSet, SnapshotSeries, build_index
from .kernels import GammaEval, TransitionKernel, evaluate, get_kernel

__all__ = [
    "TransitionData",
    "ScoreCache",
    "loglik_terms",
    "partial_loglik",
    "score",
    "score_jacobian",
]

_stamp = itertools.count(1)
_CHUNK = 8192


def loglik_terms(x, gam):
    return x * np.log(gam) + (1 - x) * np.log1p(-gam)


@dataclass
class TransitionData:
    """All transitions of a series under one kernel, with per-pair statistics."""

    kernel: TransitionKernel
    index: ParameterIndex
    x: np.ndarray
    x_prev: np.ndarray
    stats: np.ndarray
    n_steps: int
    stats_unique: np.ndarray | None = None
    stats_inverse: np.ndarray | None = None
    _selections: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_series(cls, kernel, series: SnapshotSeries, eps: float | None = None) -> "TransitionData":
        kernel = get_kernel(kernel) if eps is None else get_kernel(kernel, eps=eps)
        m = kernel.order
        if series.n <= m:
            raise ValueError(f"need more than {m} snapshots, got {series.n}")
        index = build_index(kernel.kernel_id, series.p)
        D = series.data
        U = series.upper().astype(float)
        lags = [D[m - 1 - j: series.n - 1 - j] for j in range(m)]
        stats = kernel.pair_stats(lags)
        T = series.n - m
        stats = stats.reshape(T * index.n_pairs, -1)
        uniq = inv = None
        if stats.shape[1]:
            # kernel statistics take few distinct values; shape functions are evaluated once per value
            uniq, inv = np.unique(stats, axis=0, return_inverse=True)
            inv = inv.reshape(-1)
        return cls(kernel, index, U[m:].ravel(), U[m - 1:-1].ravel(), stats, T, uniq, inv)

    @property
    def n_pairs(self) -> int:
        return self.index.n_pairs

    @property
    def n_obs(self) -> int:
        return self.x.size

    @property
    def pidx(self) -> np.ndarray:
        return self.index.edge_scope

    def pairs(self, l: int) -> np.ndarray:
        return self.index.param_scope[l]

    def selection(self, l: int) -> np.ndarray:
        """Observation indices of the transitions in ``S_l`` (time-major)."""
        sel = self._selections.get(l)
        if sel is None:
            K = self.pairs(l)
            sel = (np.arange(self.n_steps)[:, None] * self.n_pairs + K[None, :]).ravel()
            self._selections[l] = sel
        return sel

    def evaluate(self, values, sel=None, order: int = 1) -> tuple[GammaEval, np.ndarray]:
        """``gamma`` and derivatives on the selected observations, plus their parameter ids."""
        values = np.asarray(values, dtype=float)
        if sel is None:
            sel = slice(0, self.n_obs)
        if isinstance(sel, slice):
            start, stop, _ = sel.indices(self.n_obs)
            if start % self.n_pairs or stop % self.n_pairs:
                raise ValueError("slices must cover whole time steps")
            ids = np.tile(self.pidx, ((stop - start) // self.n_pairs, 1))
            stats, xp = self.stats[sel], self.x_prev[sel]
        else:
            ids = self.pidx[sel % self.n_pairs]
            stats, xp = self.stats[sel], self.x_prev[sel]
        return evaluate(self.kernel, values[ids], stats, xp, order=order), ids

    def loglik_sum(self, values, sel=None) -> float:
        values = np.asarray(values, dtype=float)
        if sel is None:
            P = values[self.pidx]
            stats, xp, x = self.stats, self.x_prev, self.x
            T = self.n_steps
            stats = stats.reshape(T, self.n_pairs, -1)
            xp = xp.reshape(T, self.n_pairs)
            x = x.reshape(T, self.n_pairs)
        else:
            P = values[self.pidx[sel % self.n_pairs]]
            stats, xp, x = self.stats[sel], self.x_prev[sel], self.x[sel]
        alpha, beta = self.kernel.alpha_beta_values(P, stats)
        lo, hi = self.kernel.eps, 1.0 - self.kernel.eps
        alpha = np.clip(alpha, lo, hi)
        beta = np.clip(beta, lo, hi)
        gam = np.clip(alpha + xp * (1 - alpha - beta), lo, hi)
        return float(loglik_terms(x, gam).sum())


class ScoreCache:
    """``gamma`` and its derivatives at one ``theta`` for every transition.

    Per-pair sums over time of the score and Jacobian contributions are kept,
    so each ``l`` only scatters the blocks of its own pairs.
    """

    def __init__(self, data: TransitionData, theta, order: int = 2):
        values = theta.values if isinstance(theta, ParameterSet) else np.asarray(theta, dtype=float)
        self.data = data
        self.values = values.copy()
        self.order = order
        self.stamp = next(_stamp)
        T, P = data.n_steps, data.n_pairs
        s = data.pidx.shape[1]
        self.gamma = np.empty(data.n_obs)
        self.grad = np.empty((data.n_obs, s))
        self.resid = np.empty(data.n_obs)
        self.pair_ll = np.zeros(P)
        self.pair_score = np.zeros((P, s))
        self.pair_jac = np.zeros((P, s, s)) if order >= 2 else None
        self.clip_count = 0
        # small time blocks keep the (obs, s, s) temporaries cache-sized
        step = max(1, _CHUNK // P)
        for t0 in range(0, T, step):
            t1 = min(T, t0 + step)
            r = slice(t0 * P, t1 * P)
            ev, _ = data.evaluate(values, r, order=order)
            gam, x = ev.gamma, data.x[r]
            v = gam * (1 - gam)
            resid = (x - gam) / v
            self.gamma[r] = gam
            self.grad[r] = ev.grad
            self.resid[r] = resid
            self.clip_count += int(ev.clipped.sum())
            nt = t1 - t0
            self.pair_ll += loglik_terms(x, gam).reshape(nt, P).sum(0)
            self.pair_score += (resid[:, None] * ev.grad).reshape(nt, P, s).sum(0)
            if order >= 2:
                w1 = -(1.0 / v + (x - gam) * (1 - 2 * gam) / v ** 2)
                blocks = np.einsum("n,na,nb->nab", w1, ev.grad, ev.grad)
                blocks += resid[:, None, None] * ev.hess
                self.pair_jac += blocks.reshape(nt, P, s, s).sum(0)

    def matches(self, values) -> bool:
        return np.array_equal(self.values, np.asarray(values, dtype=float))

    def _norm(self, K) -> float:
        return 1.0 / (self.data.n_steps * K.size)

    def partial_loglik(self, l: int) -> float:
        K = self.data.pairs(l)
        return float(self.pair_ll[K].sum() * self._norm(K))

    def score(self, l: int) -> np.ndarray:
        K = self.data.pairs(l)
        out = np.zeros(self.data.index.q)
        np.add.at(out, self.data.pidx[K], self.pair_score[K])
        return out * self._norm(K)

    def score_jacobian(self, l: int) -> np.ndarray:
        if self.pair_jac is None:
            raise ValueError("cache was built without second derivatives")
        K = self.data.pairs(l)
        ids = self.data.pidx[K]
        q = self.data.index.q
        out = np.zeros((q, q))
        np.add.at(out, (ids[:, :, None], ids[:, None, :]), self.pair_jac[K])
        return out * self._norm(K)


def _resolve(theta: ParameterSet, series, kernel=None) -> TransitionData:
    if isinstance(series, TransitionData):
        return series
    return TransitionData.from_series(kernel or theta.kernel_id, series)


def partial_loglik(l: int, theta: ParameterSet, series, kernel=None) -> float:
    """Normalized log-likelihood of the transitions in ``S_l``."""
    data = _resolve(theta, series, kernel)
    K = data.pairs(l)
    return data.loglik_sum(theta.values, data.selection(l)) / (data.n_steps * K.size)


def score(l: int, theta: ParameterSet, series, kernel=None) -> np.ndarray:
    """Gradient of :func:`partial_loglik` over all ``q`` parameters."""
    return ScoreCache(_resolve(theta, series, kernel), theta, order=1).score(l)


def score_jacobian(l: int, theta: ParameterSet, series, kernel=None) -> np.ndarray:
    """Jacobian of :func:`score` (``q x q``)."""
    return ScoreCache(_resolve(theta, series, kernel), theta, order=2).score_jacobian(l)


class GlobalProfile:
    """Full log-likelihood of a node kernel as a function of its globals, locals held fixed.

    Shape functions are evaluated on the distinct statistic rows and gathered,
    which keeps repeated evaluations cheap.
    """

    def __init__(self, data: TransitionData, values):
        kernel = data.kernel
        if kernel.n_globals == 0 or not kernel.separable:
            raise ValueError("profile needs a node kernel with global parameters")
        self.data = data
        self.kernel = kernel
        self.values = np.asarray(values, dtype=float).copy()
        G = kernel.n_globals
        self.G = G
        P = data.n_pairs
        Pv = self.values[data.pidx]
        pair = np.arange(data.n_obs) % P
        off = data.x_prev == 0
        self.rows_off = np.flatnonzero(off)
        self.rows_on = np.flatnonzero(~off)
        self.t_off = self.rows_off // P
        self.t_on = self.rows_on // P
        self.Xi = (Pv[:, G] * Pv[:, G + 1])[pair[self.rows_off]]
        self.Ga = (Pv[:, G + 2] * Pv[:, G + 3])[pair[self.rows_on]]
        self.inv_off = data.stats_inverse[self.rows_off]
        self.inv_on = data.stats_inverse[self.rows_on]
        self.x_off = data.x[self.rows_off]
        self.x_on = data.x[self.rows_on]
        self.pair_off = pair[self.rows_off]
        self.pair_on = pair[self.rows_on]
        self.norm = 1.0 / data.n_obs

    def _shapes(self, g):
        A, B, dA, dB = self.kernel.shape_grad(list(np.asarray(g, dtype=float)), self.data.stats_unique)
        return A, B, dA, dB

    def _probs(self, A, B):
        lo, hi = self.kernel.eps, 1 - self.kernel.eps
        alpha = self.Xi * A[self.inv_off]
        beta = self.Ga * B[self.inv_on]
        ca = (alpha < lo) | (alpha > hi)
        cb = (beta < lo) | (beta > hi)
        return np.clip(alpha, lo, hi), np.clip(beta, lo, hi), ca, cb

    def loglik(self, g) -> float:
        A, B, _, _ = self._shapes(g)
        alpha, beta, _, _ = self._probs(A, B)
        val = np.sum(self.x_off * np.log(alpha) + (1 - self.x_off) * np.log1p(-alpha))
        val += np.sum(self.x_on * np.log1p(-beta) + (1 - self.x_on) * np.log(beta))
        return float(val * self.norm)

    def loglik_grad(self, g):
        """Normalized full log-likelihood and its gradient over the globals."""
        A, B, dA, dB = self._shapes(g)
        alpha, beta, ca, cb = self._probs(A, B)
        xo, xn = self.x_off, self.x_on
        val = np.sum(xo * np.log(alpha) + (1 - xo) * np.log1p(-alpha))
        val += np.sum(xn * np.log1p(-beta) + (1 - xn) * np.log(beta))
        ra = np.where(ca, 0.0, (xo - alpha) / (alpha * (1 - alpha)) * self.Xi)
        rb = np.where(cb, 0.0, ((1 - xn) - beta) / (beta * (1 - beta)) * self.Ga)
        nU = dA.shape[0]
        grad = np.bincount(self.inv_off, ra, nU) @ dA + np.bincount(self.inv_on, rb, nU) @ dB
        return float(val * self.norm), grad * self.norm

    def projector(self, l: int, phi: np.ndarray):
        """Per-step projected scores ``phi . g_t`` (unnormalized sums) as a function of global ``l``."""
        G = self.G
        Pv = self.values[self.data.pidx]
        phi = np.asarray(phi, dtype=float)
        phG = phi[:G]
        pk = self.data.pidx
        # local-column part of phi . d(gamma), per pair
        psi_a = phi[pk[:, G]] * Pv[:, G + 1] + phi[pk[:, G + 1]] * Pv[:, G]
        psi_b = phi[pk[:, G + 2]] * Pv[:, G + 3] + phi[pk[:, G + 3]] * Pv[:, G + 2]
        psi_a = psi_a[self.pair_off]
        psi_b = psi_b[self.pair_on]
        T = self.data.n_steps
        base = self.values[:G].copy()

        def per_t(x):
            g = base.copy()
            g[l] = x
            A, B, dA, dB = self._shapes(g)
            alpha, beta, ca, cb = self._probs(A, B)
            pa = self.Xi * (dA @ phG)[self.inv_off] + A[self.inv_off] * psi_a
            pb = self.Ga * (dB @ phG)[self.inv_on] + B[self.inv_on] * psi_b
            ra = (self.x_off - alpha) / (alpha * (1 - alpha))
            gam_on = 1 - beta
            rb = (self.x_on - gam_on) / (gam_on * beta)
            ca_ = np.where(ca, 0.0, ra * pa)
            cb_ = np.where(cb, 0.0, -rb * pb)
            return np.bincount(self.t_off, ca_, T) + np.bincount(self.t_on, cb_, T)

        return per_t
