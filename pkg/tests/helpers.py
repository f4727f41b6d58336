"""Shared generators and finite-difference oracles for the test suite."""
import numpy as np

from arnet.core import ParameterSet, SnapshotSeries, build_index
from arnet.kernels import get_kernel
from arnet.likelihood import ScoreCache, TransitionData

DEPENDENT = ("degree_het", "persistence", "transitivity", "transitivity_ext")


def random_series(rng, p, n, rho=None):
    rho = rng.uniform(0.2, 0.8) if rho is None else rho
    up = (rng.random((n, p * (p - 1) // 2)) < rho).astype(np.uint8)
    return SnapshotSeries.from_upper(up, p)


def interior_theta(kid, p, rng):
    """Random parameters whose alpha and beta stay inside the clip bounds."""
    idx = build_index(kid, p)
    G = len(idx.global_set)
    vals = np.empty(idx.q)
    vals[:G] = rng.uniform(0.1, 3.0, G)
    vals[G:] = rng.uniform(0.3, 0.95, idx.q - G)
    return ParameterSet(vals, idx)


def derivative_errors(kid, rng, p=None):
    """Relative errors of the score and its Jacobian against central differences.

    One random ``(theta, series, l)`` draw; returns ``(score_err, jacobian_err)``
    as max-norm errors relative to the max-norm of the analytic quantity.
    """
    kernel = get_kernel(kid)
    p = p or int(rng.integers(4, 7))
    series = random_series(rng, p, kernel.order + int(rng.integers(2, 5)))
    theta = interior_theta(kid, p, rng)
    data = TransitionData.from_series(kid, series)
    l = int(rng.integers(theta.index.q))
    cache = ScoreCache(data, theta, order=2)
    s, J = cache.score(l), cache.score_jacobian(l)
    support = np.unique(data.pidx[data.pairs(l)])
    v = theta.values
    fd_s = np.zeros_like(s)
    fd_J = np.zeros_like(J)
    for k in support:
        h = 1e-6 * max(1.0, abs(v[k]))
        up, dn = v.copy(), v.copy()
        up[k] += h
        dn[k] -= h
        cu, cd = ScoreCache(data, up, order=1), ScoreCache(data, dn, order=1)
        fd_s[k] = (cu.partial_loglik(l) - cd.partial_loglik(l)) / (2 * h)
        h2 = 1e-5 * max(1.0, abs(v[k]))
        up[k], dn[k] = v[k] + h2, v[k] - h2
        fd_J[:, k] = (ScoreCache(data, up, order=1).score(l) - ScoreCache(data, dn, order=1).score(l)) / (2 * h2)
    s_err = np.max(np.abs(fd_s - s)) / max(np.max(np.abs(s)), 1e-12)
    j_err = np.max(np.abs(fd_J - J)) / max(np.max(np.abs(J)), 1e-12)
    return float(s_err), float(j_err)


def l1_projection_bruteforce(H, l, tau, tol=1e-9):
    """Vertex enumeration for ``min |u|_1 s.t. |H^T u - e_l|_inf <= tau``.

    The objective is linear on each orthant, so an optimum sits at a vertex of
    the arrangement formed by the band hyperplanes and the coordinate planes.
    Every ``q``-subset of those hyperplanes is solved and the best feasible
    point kept.
    """
    from itertools import combinations

    H = np.asarray(H, dtype=float)
    q = H.shape[0]
    e = np.zeros(q)
    e[l] = 1.0
    Ht = H.T
    planes = []
    for k in range(q):
        planes.append((Ht[k], e[k] + tau))
        planes.append((Ht[k], e[k] - tau))
        unit = np.zeros(q)
        unit[k] = 1.0
        planes.append((unit, 0.0))
    best = np.inf
    for combo in combinations(planes, q):
        A = np.array([c[0] for c in combo])
        b = np.array([c[1] for c in combo])
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        u = np.linalg.solve(A, b)
        if np.max(np.abs(Ht @ u - e)) <= tau + tol:
            best = min(best, float(np.abs(u).sum()))
    return best


def chain_mean_variance(P, f):
    """Long-run variance of ``sum_t f(Y_t) / sqrt(n)`` for an ergodic finite chain.

    Uses the fundamental matrix ``Z = (I - P + 1 pi^T)^{-1}``:
    ``sigma^2 = 2 pi (fc * Z fc) - pi fc^2`` with ``fc = f - pi f``.
    """
    from arnet.simulate import stationary_distribution

    P = np.asarray(P, dtype=float)
    f = np.asarray(f, dtype=float)
    pi = stationary_distribution(P)
    Z = np.linalg.inv(np.eye(P.shape[0]) - P + np.outer(np.ones(P.shape[0]), pi))
    fc = f - pi @ f
    return float(2 * pi @ (fc * (Z @ fc)) - pi @ (fc * fc))


def concordance_auc(scores, truth):
    """Pairwise-concordance estimate of the AUC with ties counted one half (``O(n^2)``)."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(truth).ravel().astype(bool)
    pos, neg = s[y], s[~y]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (pos.size * neg.size)
