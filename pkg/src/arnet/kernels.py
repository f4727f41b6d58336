"""Transition kernels: formation/dissolution probabilities and their derivatives.

Every kernel works on flat batches of edge transitions.  For a batch of ``N``
transitions the caller supplies

* ``P``: ``(N, s)`` parameter values in the kernel's local column order
  (``ParameterIndex.edge_scope`` gives the matching global indices),
* ``stats``: ``(N, k)`` context statistics from :meth:`TransitionKernel.pair_stats`.

Node kernels use the column order ``globals..., xi_i, xi_j, eta_i, eta_j``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ParameterSet, build_index, normalize_kernel_id, pair_arrays

__all__ = [
    "TransitionKernel",
    "DegreeHeterogeneity",
    "Persistence",
    "Transitivity",
    "TransitivityExt",
    "GlobalAR",
    "EdgewiseAR",
    "get_kernel",
    "EdgeContext",
    "GammaEval",
    "uv_stats",
    "degree_stats",
    "edge_context",
    "alpha_beta",
    "gamma",
    "gamma_grad",
    "gamma_hess",
    "evaluate",
]

DEFAULT_EPS = 1e-6


# ---------------------------------------------------------------- statistics

def uv_stats(snapshot, i: int, j: int) -> tuple[float, float]:
    """Shared and disjoint neighbour fractions of the pair ``(i, j)``."""
    X = np.asarray(snapshot, dtype=float)
    p = X.shape[0]
    if i == j:
        raise ValueError("uv_stats needs two distinct nodes")
    mask = np.ones(p, dtype=bool)
    mask[[i, j]] = False
    xi, xj = X[i, mask], X[j, mask]
    return float(np.sum(xi * xj) / (p - 2)), float(np.sum(xi * (1 - xj) + (1 - xi) * xj) / (p - 2))


def degree_stats(snapshot, i: int, j: int) -> tuple[float, float, float]:
    """Normalized degrees of ``i`` and ``j`` and the average degree of the rest."""
    X = np.asarray(snapshot, dtype=float)
    p = X.shape[0]
    if p < 4:
        raise ValueError("degree statistics need p >= 4")
    if i == j:
        raise ValueError("degree_stats needs two distinct nodes")
    mask = np.ones(p, dtype=bool)
    mask[[i, j]] = False
    rest = X[np.ix_(mask, mask)]
    return (float(X[i].sum() / (p - 1)), float(X[j].sum() / (p - 1)),
            float(rest.sum() / ((p - 2) * (p - 3))))


def _uv_all(X: np.ndarray) -> np.ndarray:
    p = X.shape[-1]
    rows, cols = pair_arrays(p)
    XX = X @ X
    deg = X.sum(-1)
    common = XX[..., rows, cols]
    disjoint = deg[..., rows] + deg[..., cols] - 2.0 * X[..., rows, cols] - 2.0 * common
    return np.stack([common, disjoint], axis=-1) / (p - 2)


def _degree_all(X: np.ndarray) -> np.ndarray:
    p = X.shape[-1]
    rows, cols = pair_arrays(p)
    deg = X.sum(-1)
    total = deg.sum(-1)[..., None]
    rest = total - 2.0 * deg[..., rows] - 2.0 * deg[..., cols] + 2.0 * X[..., rows, cols]
    return np.stack([deg[..., rows] / (p - 1), deg[..., cols] / (p - 1), rest / ((p - 2) * (p - 3))], axis=-1)


def _softmax3(zA, zB):
    """Weights of the two non-baseline categories of a 3-way softmax with logits (0, zA, zB)."""
    top = np.maximum(0.0, np.maximum(zA, zB))
    e0, eA, eB = np.exp(-top), np.exp(zA - top), np.exp(zB - top)
    tot = e0 + eA + eB
    return eA / tot, eB / tot


def _softmax3_grad(pA, pB, cA, cB):
    """Gradients of the softmax weights when the logits are linear, zA = cA.g, zB = cB.g."""
    dA = (pA * (1 - pA))[:, None] * cA - (pA * pB)[:, None] * cB
    dB = -(pA * pB)[:, None] * cA + (pB * (1 - pB))[:, None] * cB
    return dA, dB


# ---------------------------------------------------------------- kernels

class TransitionKernel:
    """Base class.  Subclasses define the statistics and ``alpha``/``beta`` forms."""

    kernel_id: str = ""
    order: int = 1
    n_globals: int = 0
    n_stats: int = 0
    separable = False
    analytic_hessian = False
    global_bounds: tuple[float, float] = (0.0, 100.0)
    local_bounds: tuple[float, float] = (1e-3, 5.0)

    def __init__(self, eps: float = DEFAULT_EPS):
        if not 0 < eps <= 0.01:
            raise ValueError("clip eps must lie in (0, 0.01]")
        self.eps = float(eps)

    def __repr__(self):
        return f"{type(self).__name__}(eps={self.eps:g})"

    def index(self, p: int):
        return build_index(self.kernel_id, p)

    @property
    def n_local_cols(self) -> int:
        return self.n_globals + 4

    def check_p(self, p: int) -> None:
        if p < 3:
            raise ValueError("p must be at least 3")

    def pair_stats(self, lags) -> np.ndarray:
        """Statistics for every pair given lagged snapshots ``lags[0] = X_{t-1}, ...``.

        Arrays may carry leading batch dimensions; the result has shape
        ``(..., n_pairs, n_stats)``.
        """
        X = np.asarray(lags[0], dtype=float)
        return np.zeros(X.shape[:-2] + (X.shape[-1] * (X.shape[-1] - 1) // 2, 0))

    # node kernels: alpha = xi_i xi_j A(g, stats), beta = eta_i eta_j B(g, stats)
    def shape(self, g, stats):
        raise NotImplementedError

    def shape_grad(self, g, stats):
        raise NotImplementedError

    def alpha_beta_values(self, P, stats):
        G = self.n_globals
        g = [P[..., c] for c in range(G)]
        A, B = self.shape(g, stats)
        return P[..., G] * P[..., G + 1] * A, P[..., G + 2] * P[..., G + 3] * B

    def parts(self, P, stats):
        """Unclipped ``alpha, beta`` and their gradients over the local columns."""
        G = self.n_globals
        N = P.shape[0]
        g = [P[:, c] for c in range(G)]
        A, B, dA, dB = self.shape_grad(g, stats)
        xi_i, xi_j, eta_i, eta_j = P[:, G], P[:, G + 1], P[:, G + 2], P[:, G + 3]
        Xi, Ga = xi_i * xi_j, eta_i * eta_j
        da = np.zeros((N, G + 4))
        db = np.zeros((N, G + 4))
        da[:, :G] = Xi[:, None] * dA
        da[:, G] = xi_j * A
        da[:, G + 1] = xi_i * A
        db[:, :G] = Ga[:, None] * dB
        db[:, G + 2] = eta_j * B
        db[:, G + 3] = eta_i * B
        return Xi * A, Ga * B, da, db

    def parts_hess(self, P, stats):
        """Second derivatives of the unclipped ``alpha, beta`` by central differences."""
        N, s = P.shape
        d2a = np.empty((N, s, s))
        d2b = np.empty((N, s, s))
        for c in range(s):
            h = 1e-5 * np.maximum(1.0, np.abs(P[:, c]))
            Pp, Pm = P.copy(), P.copy()
            Pp[:, c] += h
            Pm[:, c] -= h
            _, _, dap, dbp = self.parts(Pp, stats)
            _, _, dam, dbm = self.parts(Pm, stats)
            d2a[:, :, c] = (dap - dam) / (2 * h[:, None])
            d2b[:, :, c] = (dbp - dbm) / (2 * h[:, None])
        d2a = 0.5 * (d2a + d2a.transpose(0, 2, 1))
        d2b = 0.5 * (d2b + d2b.transpose(0, 2, 1))
        return d2a, d2b

    def globals_shape(self, g, stats):
        """``(f~, g~)``: the global-only factors of a separable kernel."""
        return self.shape(g, stats)


class Transitivity(TransitionKernel):
    kernel_id = "transitivity"
    n_globals = 2
    n_stats = 2
    separable = True
    analytic_hessian = True
    global_bounds = (0.0, 200.0)

    def pair_stats(self, lags):
        return _uv_all(np.asarray(lags[0], dtype=float))

    def shape(self, g, stats):
        a, b = g
        return _softmax3(a * stats[..., 0], b * stats[..., 1])

    def shape_grad(self, g, stats):
        U, V = stats[:, 0], stats[:, 1]
        pA, pB = self.shape(g, stats)
        zero = np.zeros_like(U)
        cA = np.stack([U, zero], axis=1)
        cB = np.stack([zero, V], axis=1)
        dA, dB = _softmax3_grad(pA, pB, cA, cB)
        return pA, pB, dA, dB

    def parts_hess(self, P, stats):
        N = P.shape[0]
        a, b = P[:, 0], P[:, 1]
        xi_i, xi_j, eta_i, eta_j = P[:, 2], P[:, 3], P[:, 4], P[:, 5]
        U, V = stats[:, 0], stats[:, 1]
        pA, pB = _softmax3(a * U, b * V)
        A_a, A_b = U * pA * (1 - pA), -V * pA * pB
        B_a, B_b = -U * pA * pB, V * pB * (1 - pB)
        A_aa = U * U * pA * (1 - pA) * (1 - 2 * pA)
        A_ab = -U * V * pA * pB * (1 - 2 * pA)
        A_bb = -V * V * pA * pB * (1 - 2 * pB)
        B_aa = -U * U * pA * pB * (1 - 2 * pA)
        B_ab = -U * V * pA * pB * (1 - 2 * pB)
        B_bb = V * V * pB * (1 - pB) * (1 - 2 * pB)
        Xi, Ga = xi_i * xi_j, eta_i * eta_j

        d2a = np.zeros((N, 6, 6))
        d2a[:, 0, 0] = Xi * A_aa
        d2a[:, 0, 1] = d2a[:, 1, 0] = Xi * A_ab
        d2a[:, 1, 1] = Xi * A_bb
        d2a[:, 0, 2] = d2a[:, 2, 0] = xi_j * A_a
        d2a[:, 0, 3] = d2a[:, 3, 0] = xi_i * A_a
        d2a[:, 1, 2] = d2a[:, 2, 1] = xi_j * A_b
        d2a[:, 1, 3] = d2a[:, 3, 1] = xi_i * A_b
        d2a[:, 2, 3] = d2a[:, 3, 2] = pA

        d2b = np.zeros((N, 6, 6))
        d2b[:, 0, 0] = Ga * B_aa
        d2b[:, 0, 1] = d2b[:, 1, 0] = Ga * B_ab
        d2b[:, 1, 1] = Ga * B_bb
        d2b[:, 0, 4] = d2b[:, 4, 0] = eta_j * B_a
        d2b[:, 0, 5] = d2b[:, 5, 0] = eta_i * B_a
        d2b[:, 1, 4] = d2b[:, 4, 1] = eta_j * B_b
        d2b[:, 1, 5] = d2b[:, 5, 1] = eta_i * B_b
        d2b[:, 4, 5] = d2b[:, 5, 4] = pB
        return d2a, d2b


class TransitivityExt(TransitionKernel):
    """Transitivity with separate ``(a1, b1)`` for formation and ``(a2, b2)`` for dissolution.

    Ill-conditioned on sparse data: the dissolution globals are informed only
    by transitions out of existing edges.
    """

    kernel_id = "transitivity_ext"
    n_globals = 4
    n_stats = 2
    separable = True
    global_bounds = (0.0, 200.0)
    ill_conditioned_sparse = True

    def pair_stats(self, lags):
        return _uv_all(np.asarray(lags[0], dtype=float))

    def shape(self, g, stats):
        a1, b1, a2, b2 = g
        U, V = stats[..., 0], stats[..., 1]
        A, _ = _softmax3(a1 * U, b1 * V)
        _, B = _softmax3(a2 * U, b2 * V)
        return A, B

    def shape_grad(self, g, stats):
        a1, b1, a2, b2 = g
        U, V = stats[:, 0], stats[:, 1]
        zero = np.zeros_like(U)
        pA1, pB1 = _softmax3(a1 * U, b1 * V)
        pA2, pB2 = _softmax3(a2 * U, b2 * V)
        dA, _ = _softmax3_grad(pA1, pB1, np.stack([U, zero, zero, zero], 1), np.stack([zero, V, zero, zero], 1))
        _, dB = _softmax3_grad(pA2, pB2, np.stack([zero, zero, U, zero], 1), np.stack([zero, zero, zero, V], 1))
        return pA1, pB2, dA, dB


class DegreeHeterogeneity(TransitionKernel):
    kernel_id = "degree_het"
    n_globals = 4
    n_stats = 3
    separable = True

    def check_p(self, p):
        if p < 4:
            raise ValueError("the degree heterogeneity kernel needs p >= 4")

    def pair_stats(self, lags):
        X = np.asarray(lags[0], dtype=float)
        self.check_p(X.shape[-1])
        return _degree_all(X)

    def shape(self, g, stats):
        a0, a1, b0, b1 = g
        Di, Dj, Dm = stats[..., 0], stats[..., 1], stats[..., 2]
        S = Di + Dj
        return _softmax3(a0 * Dm + a1 * S, b0 * (1 - Dm) + b1 * (2 - S))

    def shape_grad(self, g, stats):
        Di, Dj, Dm = stats[:, 0], stats[:, 1], stats[:, 2]
        S = Di + Dj
        zero = np.zeros_like(S)
        pA, pB = self.shape(g, stats)
        cA = np.stack([Dm, S, zero, zero], axis=1)
        cB = np.stack([zero, zero, 1 - Dm, 2 - S], axis=1)
        dA, dB = _softmax3_grad(pA, pB, cA, cB)
        return pA, pB, dA, dB


class Persistence(TransitionKernel):
    """AR(3) kernel; statistics are the pair's own states at lags 2 and 3."""

    kernel_id = "persistence"
    order = 3
    n_globals = 2
    n_stats = 2
    separable = True
    global_bounds = (0.0, 50.0)

    def pair_stats(self, lags):
        if len(lags) < 3:
            raise ValueError("the persistence kernel needs three lagged snapshots")
        X2 = np.asarray(lags[1], dtype=float)
        X3 = np.asarray(lags[2], dtype=float)
        rows, cols = pair_arrays(X2.shape[-1])
        return np.stack([X2[..., rows, cols], X3[..., rows, cols]], axis=-1)

    @staticmethod
    def _counts(stats):
        x2, x3 = stats[..., 0], stats[..., 1]
        return (1 - x2) + (1 - x2) * (1 - x3), x2 + x2 * x3

    def shape(self, g, stats):
        a, b = g
        c, d = self._counts(stats)
        return np.exp(-1.0 - a * c), np.exp(-1.0 - b * d)

    def shape_grad(self, g, stats):
        A, B = self.shape(g, stats)
        c, d = self._counts(stats)
        zero = np.zeros_like(A)
        dA = np.stack([-c * A, zero], axis=1)
        dB = np.stack([zero, -d * B], axis=1)
        return A, B, dA, dB


class GlobalAR(TransitionKernel):
    """Independent edges sharing one formation and one dissolution probability."""

    kernel_id = "global_ar"
    n_globals = 2
    analytic_hessian = True

    @property
    def global_bounds(self):
        return (self.eps, 1.0 - self.eps)

    @property
    def n_local_cols(self):
        return 2

    def alpha_beta_values(self, P, stats):
        return P[..., 0] + 0.0 * stats.sum(-1), P[..., 1] + 0.0 * stats.sum(-1)

    def parts(self, P, stats):
        N = P.shape[0]
        da = np.zeros((N, 2))
        db = np.zeros((N, 2))
        da[:, 0] = 1.0
        db[:, 1] = 1.0
        return P[:, 0].copy(), P[:, 1].copy(), da, db

    def parts_hess(self, P, stats):
        N = P.shape[0]
        return np.zeros((N, 2, 2)), np.zeros((N, 2, 2))


class EdgewiseAR(GlobalAR):
    """Independent edges, each with its own formation and dissolution probability."""

    kernel_id = "edgewise_ar"
    n_globals = 0

    @property
    def local_bounds(self):
        return (self.eps, 1.0 - self.eps)


_KERNELS = {
    "degree_het": DegreeHeterogeneity,
    "persistence": Persistence,
    "transitivity": Transitivity,
    "transitivity_ext": TransitivityExt,
    "global_ar": GlobalAR,
    "edgewise_ar": EdgewiseAR,
}


def get_kernel(kernel_id, eps: float = DEFAULT_EPS) -> TransitionKernel:
    """Kernel instance for a string id (hyphens and underscores both accepted)."""
    if isinstance(kernel_id, TransitionKernel):
        return kernel_id
    return _KERNELS[normalize_kernel_id(kernel_id)](eps=eps)


# ---------------------------------------------------------------- batch evaluation

@dataclass
class GammaEval:
    """``gamma`` and its derivatives for a batch of transitions (local column order)."""

    gamma: np.ndarray
    grad: np.ndarray
    hess: np.ndarray | None
    clipped: np.ndarray


def evaluate(kernel: TransitionKernel, P, stats, x_prev, order: int = 1) -> GammaEval:
    """Clipped ``gamma = alpha + x_prev (1 - alpha - beta)`` with derivatives up to ``order``.

    Derivatives of a clipped ``alpha`` or ``beta`` are zero.
    """
    P = np.asarray(P, dtype=float)
    x = np.asarray(x_prev, dtype=float)
    lo, hi = kernel.eps, 1.0 - kernel.eps
    alpha, beta, da, db = kernel.parts(P, stats)
    a_clip = (alpha < lo) | (alpha > hi)
    b_clip = (beta < lo) | (beta > hi)
    alpha = np.clip(alpha, lo, hi)
    beta = np.clip(beta, lo, hi)
    gam = np.clip(alpha * (1 - x) + (1 - beta) * x, lo, hi)
    wa = np.where(a_clip, 0.0, 1 - x)
    wb = np.where(b_clip, 0.0, x)
    grad = wa[:, None] * da - wb[:, None] * db
    hess = None
    if order >= 2:
        d2a, d2b = kernel.parts_hess(P, stats)
        hess = wa[:, None, None] * d2a - wb[:, None, None] * d2b
    clipped = np.where(x > 0, b_clip, a_clip)
    return GammaEval(gam, grad, hess, clipped)


# ---------------------------------------------------------------- single-edge API

@dataclass(frozen=True)
class EdgeContext:
    """One edge's view of the lagged snapshots (0-based node ids)."""

    edge: tuple[int, int]
    kernel_id: str
    stats: np.ndarray
    x_prev: int


def edge_context(kernel, lags, i: int, j: int) -> EdgeContext:
    kernel = get_kernel(kernel)
    if i == j:
        raise ValueError("an edge needs two distinct nodes")
    i, j = min(i, j), max(i, j)
    lags = [np.asarray(L) for L in lags]
    if len(lags) < kernel.order:
        raise ValueError(f"{kernel.kernel_id} needs {kernel.order} lagged snapshots")
    p = lags[0].shape[-1]
    kernel.check_p(p)
    rows, cols = pair_arrays(p)
    k = int(np.flatnonzero((rows == i) & (cols == j))[0])
    stats = kernel.pair_stats(lags)[k]
    return EdgeContext((i, j), kernel.kernel_id, np.asarray(stats, dtype=float), int(lags[0][i, j]))


def _edge_setup(kernel, theta: ParameterSet, ctx: EdgeContext):
    kernel = get_kernel(kernel)
    if ctx.kernel_id != kernel.kernel_id or theta.kernel_id != kernel.kernel_id:
        raise ValueError("kernel, parameter set and context disagree on the kernel id")
    i, j = ctx.edge
    rows, cols = pair_arrays(theta.index.p)
    k = int(np.flatnonzero((rows == i) & (cols == j))[0])
    ids = theta.index.edge_scope[k]
    P = theta.values[ids][None, :]
    return kernel, ids, P, ctx.stats[None, :]


def alpha_beta(kernel, theta: ParameterSet, ctx: EdgeContext) -> tuple[float, float]:
    kernel, _, P, stats = _edge_setup(kernel, theta, ctx)
    alpha, beta, _, _ = kernel.parts(P, stats)
    lo, hi = kernel.eps, 1.0 - kernel.eps
    return float(np.clip(alpha[0], lo, hi)), float(np.clip(beta[0], lo, hi))


def gamma(alpha: float, beta: float, x_prev: int, eps: float = DEFAULT_EPS) -> float:
    val = alpha + x_prev * (1.0 - alpha - beta)
    return float(min(max(val, eps), 1.0 - eps))


def gamma_grad(kernel, theta: ParameterSet, ctx: EdgeContext, x_prev: int | None = None) -> dict[int, float]:
    """``d gamma / d theta_l`` for every ``l`` involved in the edge, keyed by parameter index."""
    kernel, ids, P, stats = _edge_setup(kernel, theta, ctx)
    x = ctx.x_prev if x_prev is None else x_prev
    ev = evaluate(kernel, P, stats, np.array([x]), order=1)
    out: dict[int, float] = {}
    for c, l in enumerate(ids):
        out[int(l)] = out.get(int(l), 0.0) + float(ev.grad[0, c])
    return out


def gamma_hess(kernel, theta: ParameterSet, ctx: EdgeContext, x_prev: int | None = None):
    """Second derivatives over the edge's parameters.

    Returns ``(ids, H)`` with ``H[a, b] = d^2 gamma / d theta_ids[a] d theta_ids[b]``.
    """
    kernel, ids, P, stats = _edge_setup(kernel, theta, ctx)
    x = ctx.x_prev if x_prev is None else x_prev
    ev = evaluate(kernel, P, stats, np.array([x]), order=2)
    uniq = np.unique(ids)
    pos = np.searchsorted(uniq, ids)
    H = np.zeros((len(uniq), len(uniq)))
    np.add.at(H, (pos[:, None], pos[None, :]), ev.hess[0])
    return uniq, H
