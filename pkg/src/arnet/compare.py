"""Baseline models, information criteria, multi-step edge forecasts and ROC curves."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ParameterSet, SnapshotSeries, pair_arrays
from .kernels import get_kernel
from .likelihood import TransitionData
from .simulate import transition_probs

__all__ = [
    "MODELS",
    "BaselineFit",
    "RocCurve",
    "fit_baseline",
    "information_criteria",
    "forecast",
    "previous_edge_forecast",
    "roc",
    "compare_models",
]

MODELS = ("transitivity-ar", "global-ar", "edgewise-ar", "edgewise-mean", "degree-mean")
EPS = 1e-6


@dataclass
class BaselineFit:
    """A fitted comparison model.

    ``loglik`` is the total conditional log-likelihood of transitions
    ``t = m+1..n``; ``k`` the number of free parameters.
    """

    model: str
    params: dict
    loglik: float
    k: int
    n_obs: int
    flags: list = field(default_factory=list)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "fpr", "tpr"])
            for th, f, t in zip(self.thresholds, self.fpr, self.tpr):
                w.writerow([repr(float(th)), repr(float(f)), repr(float(t))])
        return path


def _bernoulli_ll(x: np.ndarray, prob: np.ndarray) -> float:
    prob = np.clip(prob, EPS, 1 - EPS)
    return float(np.sum(x * np.log(prob) + (1 - x) * np.log1p(-prob)))


def _frequencies(num: np.ndarray, den: np.ndarray, pooled: float):
    undefined = den <= 0
    rate = np.where(undefined, pooled, num / np.where(undefined, 1.0, den))
    return np.clip(rate, EPS, 1 - EPS), undefined


def _chain_ll(x: np.ndarray, xp: np.ndarray, alpha, beta) -> float:
    gam = np.clip(alpha + xp * (1 - alpha - beta), EPS, 1 - EPS)
    return _bernoulli_ll(x, gam)


def fit_baseline(model_id: str, series: SnapshotSeries, theta: ParameterSet | None = None) -> BaselineFit:
    """Fit one of :data:`MODELS` to ``series``.

    For ``transitivity-ar`` an already fitted ``theta`` may be supplied;
    otherwise the best initial estimate is polished by coordinate ascent.
    """
    model = model_id.replace("_", "-").lower()
    if model not in MODELS:
        raise ValueError(f"unknown model {model_id!r}; expected one of {MODELS}")
    p, n = series.p, series.n
    if n < 2:
        raise ValueError("at least two snapshots are needed")
    up = series.upper().astype(float)
    x, xp = up[1:], up[:-1]
    n_obs = x.size
    flags: list = []

    if model == "transitivity-ar":
        from .estimate import EstimationConfig, fit_initial, polish

        data = TransitionData.from_series("transitivity", series)
        if theta is None:
            best = fit_initial(data.kernel, data, EstimationConfig()).theta
            vals, _ = polish(data, best.values, EstimationConfig().polish_sweeps)
            theta = ParameterSet(vals, best.index)
        return BaselineFit(model, {"theta": theta}, data.loglik_sum(theta.values), theta.index.q, n_obs)

    if model == "global-ar":
        num_a, den_a = np.sum(x * (1 - xp)), np.sum(1 - xp)
        num_b, den_b = np.sum((1 - x) * xp), np.sum(xp)
        alpha, ua = _frequencies(np.array(num_a), np.array(den_a), 0.5)
        beta, ub = _frequencies(np.array(num_b), np.array(den_b), 0.5)
        if ua:
            flags.append("no pair at risk of formation; alpha set to 0.5")
        if ub:
            flags.append("no pair at risk of dissolution; beta set to 0.5")
        alpha, beta = float(alpha), float(beta)
        return BaselineFit(model, {"alpha": alpha, "beta": beta}, _chain_ll(x, xp, alpha, beta), 2, n_obs, flags)

    if model == "edgewise-ar":
        den_a, den_b = (1 - xp).sum(0), xp.sum(0)
        pooled_a = float(np.clip((x * (1 - xp)).sum() / max((1 - xp).sum(), 1.0), EPS, 1 - EPS))
        pooled_b = float(np.clip(((1 - x) * xp).sum() / max(xp.sum(), 1.0), EPS, 1 - EPS))
        alpha, ua = _frequencies((x * (1 - xp)).sum(0), den_a, pooled_a)
        beta, ub = _frequencies(((1 - x) * xp).sum(0), den_b, pooled_b)
        if ua.any():
            flags.append(f"{int(ua.sum())} pair(s) never at risk of formation; pooled rate imputed")
        if ub.any():
            flags.append(f"{int(ub.sum())} pair(s) never at risk of dissolution; pooled rate imputed")
        return BaselineFit(model, {"alpha": alpha, "beta": beta}, _chain_ll(x, xp, alpha, beta),
                           p * (p - 1), n_obs, flags)

    if model == "edgewise-mean":
        P = np.clip(up.mean(0), EPS, 1 - EPS)
        return BaselineFit(model, {"prob": P}, _bernoulli_ll(x, P), p * (p - 1) // 2, n_obs)

    # degree-mean: rank-one fit to the mean adjacency
    M = series.data.mean(0).astype(float)
    w, V = np.linalg.eigh(M)
    lam, u = w[-1], V[:, -1]
    if u.sum() < 0:
        u = -u
    nu = np.clip(math.sqrt(max(lam, 0.0)) * u, EPS, 1.0)
    rows, cols = pair_arrays(p)
    P = np.clip(nu[rows] * nu[cols], EPS, 1 - EPS)
    return BaselineFit(model, {"nu": nu, "prob": P}, _bernoulli_ll(x, P), p, n_obs)


def information_criteria(fit, series: SnapshotSeries | None = None) -> tuple[float, float]:
    """``(AIC, BIC)`` with ``AIC = 2k - 2L`` and ``BIC = k log N - 2L``.

    ``fit`` is a :class:`BaselineFit` or an estimation ``FitReport``; for the
    latter ``series`` fixes the number of observed transitions.
    """
    if isinstance(fit, BaselineFit):
        L, k, N = fit.loglik, fit.k, fit.n_obs
    else:
        if series is None:
            raise ValueError("series is required for a fit report")
        kernel = get_kernel(fit.kernel)
        L = float(fit.loglik)
        k = len(fit.names)
        N = (series.n - kernel.order) * series.p * (series.p - 1) // 2
    return 2 * k - 2 * L, k * math.log(N) - 2 * L


def _chain_forecast(x_last: np.ndarray, alpha, beta, n_step: int) -> np.ndarray:
    prob = x_last.astype(float)
    for _ in range(n_step):
        prob = alpha * (1 - prob) + (1 - beta) * prob
    return prob


def _to_matrix(upper: np.ndarray, p: int) -> np.ndarray:
    rows, cols = pair_arrays(p)
    M = np.zeros((p, p))
    M[rows, cols] = upper
    M[cols, rows] = upper
    return M


def _mc_forecast(theta: ParameterSet, series: SnapshotSeries, n_step: int, mc_paths: int, seed: int) -> np.ndarray:
    kernel = get_kernel(theta.kernel_id)
    m, p = kernel.order, series.p
    if series.n < m:
        raise ValueError(f"need at least {m} snapshots to condition on")
    rows, cols = pair_arrays(p)
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(mc_paths)]
    lags = [np.repeat(series.data[-1 - k][None].astype(np.uint8), mc_paths, axis=0) for k in range(m)]
    for _ in range(n_step):
        gam = transition_probs(kernel, theta, lags)
        draws = np.stack([rng.random(gam.shape[-1]) for rng in streams])
        up = (draws < gam).astype(np.uint8)
        X = np.zeros((mc_paths, p, p), dtype=np.uint8)
        X[:, rows, cols] = up
        X[:, cols, rows] = up
        lags = [X] + lags[:-1]
    return lags[0].mean(0)


def forecast(fit, series: SnapshotSeries, n_step: int, mc_paths: int = 200, seed: int = 0) -> np.ndarray:
    """``p x p`` matrix of edge probabilities ``n_step`` steps after the last snapshot.

    Independent-edge models use the exact two-state recursion or their static
    probabilities; dependent-edge models average ``mc_paths`` simulated
    continuations, one random stream per path.
    """
    if n_step < 1:
        raise ValueError("n_step must be at least 1")
    p = series.p
    if isinstance(fit, BaselineFit):
        if fit.model in ("global-ar", "edgewise-ar"):
            x_last = series.upper()[-1]
            return _to_matrix(_chain_forecast(x_last, fit.params["alpha"], fit.params["beta"], n_step), p)
        if fit.model in ("edgewise-mean", "degree-mean"):
            return _to_matrix(fit.params["prob"], p)
        theta = fit.params["theta"]
    elif isinstance(fit, ParameterSet):
        theta = fit
    else:
        from .core import build_index

        theta = ParameterSet(np.asarray(fit.estimate()), build_index(fit.kernel, fit.p))
    if theta.kernel_id in ("global_ar", "edgewise_ar"):
        kernel = get_kernel(theta.kernel_id)
        P = theta.values[theta.index.edge_scope]
        alpha, beta = kernel.alpha_beta_values(P, np.zeros((P.shape[0], 0)))
        return _to_matrix(_chain_forecast(series.upper()[-1], alpha, beta, n_step), p)
    return _mc_forecast(theta, series, n_step, mc_paths, seed)


def previous_edge_forecast(series: SnapshotSeries) -> np.ndarray:
    """Naive reference forecaster: the last observed snapshot."""
    return series.data[-1].astype(float)


def _flatten(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim == 2 and a.shape[0] == a.shape[1]:
        rows, cols = pair_arrays(a.shape[0])
        return a[rows, cols]
    return a.ravel()


def roc(scores, truth) -> RocCurve:
    """ROC curve by sweeping thresholds over the distinct scores; AUC by the trapezoid rule.

    Square matrices are reduced to their upper triangles.  Tied scores share
    one threshold.
    """
    s = _flatten(np.asarray(scores, dtype=float))
    y = _flatten(np.asarray(truth)).astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and truth must have matching shapes")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("truth must contain both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(fpr, tpr, thresholds, auc)


def compare_models(series: SnapshotSeries, models=MODELS, theta: ParameterSet | None = None) -> list[dict]:
    """Fit every model and tabulate log-likelihood, parameter count, AIC and BIC."""
    rows = []
    for model in models:
        fit = fit_baseline(model, series, theta if model == "transitivity-ar" else None)
        aic, bic = information_criteria(fit)
        rows.append({"model": fit.model, "loglik": fit.loglik, "k": fit.k, "aic": aic, "bic": bic,
                     "flags": fit.flags})
    return rows
