import math
from types import SimpleNamespace

import numpy as np
import pytest

from arnet.core import ParameterSet, SnapshotSeries
from arnet.estimate import (EstimationConfig, EstimationError, delta_n, fit, fit_all_starts, fit_initial,
                            replicate, rmae, summarize_replications, variance_estimate)
from arnet.numopt import solve_l1_projection
from arnet.likelihood import score_jacobian
from arnet.simulate import SimConfig, simulate

from helpers import random_series


@pytest.fixture(scope="module")
def small_fit():
    truth = ParameterSet.from_blocks("transitivity", 12, {"a": 3.0, "b": 3.0}, xi=0.8, eta=0.9)
    s = simulate(SimConfig(truth, n=40, seed=2))
    cfg = EstimationConfig(init_grid=(0.6, 0.8), threads=1)
    return truth, s, cfg, fit("transitivity", s, cfg)


# ---------------------------------------------------------------- configuration

@pytest.mark.parametrize("kwargs", [
    {"init_grid": ()}, {"init_grid": (0.5, -1.0)}, {"tau_grid": ()}, {"tau_grid": (-1.0,)},
    {"r_tilde_local": 0.0}, {"level": 1.0}, {"method": "bayes"}, {"polish_sweeps": -1},
    {"imom_max_iter": 0},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        EstimationConfig(**kwargs)


def test_config_dict_round_trip():
    cfg = EstimationConfig(init_grid=(0.7,), level=0.9)
    assert EstimationConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        EstimationConfig.from_dict({"radius": 1})


def test_delta_n_formula():
    n, p = 100, 50
    assert delta_n(n, p) == pytest.approx(n ** -0.5 * p ** 2.5 * math.log(n * p) ** 1.5)


# ---------------------------------------------------------------- initial estimator

def test_global_ar_initial_is_closed_form_mle():
    s = random_series(np.random.default_rng(6), 8, 15, rho=0.3)
    init = fit_initial("global_ar", s, EstimationConfig(init_grid=(0.5,), method="mle"))
    up = s.upper().astype(float)
    x, xp = up[1:], up[:-1]
    a = (x * (1 - xp)).sum() / (1 - xp).sum()
    b = ((1 - x) * xp).sum() / xp.sum()
    assert np.allclose(init.theta.values, [a, b], atol=1e-6)


def test_too_short_series_raises():
    s = SnapshotSeries.from_upper(np.zeros((1, 10), dtype=np.uint8), 5)
    with pytest.raises((ValueError, EstimationError)):
        fit("transitivity", s, EstimationConfig(init_grid=(0.5,)))


# ---------------------------------------------------------------- refined estimator

def test_fit_report_complete(small_fit):
    truth, _, _, rep = small_fit
    q = truth.index.q
    for field in ("theta_initial", "theta_pilot", "theta_check", "theta_hat", "tau", "se", "ci_lower",
                  "ci_upper", "ci_available", "lp_residual"):
        assert len(getattr(rep, field)) == q
    assert all(rep.ci_available)
    lo, hi, est = map(np.asarray, (rep.ci_lower, rep.ci_upper, rep.theta_hat))
    assert np.all(lo <= est) and np.all(est <= hi)
    assert np.all(np.asarray(rep.se) > 0)
    z = 1.959963984540054
    assert np.allclose(hi - est, z * np.asarray(rep.se), rtol=1e-9)


def test_lp_residual_audit(small_fit):
    _, _, _, rep = small_fit
    for l, (res, tau, st) in enumerate(zip(rep.lp_residual, rep.tau, rep.lp_status)):
        if st == "optimal":
            assert res <= tau + 1e-8


def test_search_balls(small_fit):
    truth, _, cfg, rep = small_fit
    G = len(truth.index.global_set)
    pilot, check, hat = (np.asarray(v) for v in (rep.theta_pilot, rep.theta_check, rep.theta_hat))
    r_tilde = np.where(np.arange(truth.index.q) < G, cfg.r_tilde_global, cfg.r_tilde_local)
    r_check = np.where(np.arange(truth.index.q) < G, cfg.r_check_global, cfg.r_check_local)
    assert np.all(np.abs(check - pilot) <= r_tilde + 1e-12)
    assert np.all(np.abs(hat - check) <= r_check + 1e-12)


def test_tau_from_grid(small_fit):
    truth, s, cfg, rep = small_fit
    root = math.sqrt(delta_n(s.n, s.p))
    G = len(truth.index.global_set)
    for l, t in enumerate(rep.tau):
        grid = cfg.tau_grid if l < G else cfg.tau_grid_local
        assert any(math.isclose(t, g * root, rel_tol=1e-12) for g in grid)


def test_phi_solves_lp_at_reported_tau(small_fit):
    truth, s, _, rep = small_fit
    pilot = ParameterSet(np.asarray(rep.theta_pilot), truth.index)
    l = 0
    H = score_jacobian(l, pilot, s)
    res = solve_l1_projection(H, l, rep.tau[l])
    dense = np.zeros(truth.index.q)
    for name, v in rep.phi[l].items():
        dense[truth.index.position(name)] = v
    assert np.allclose(res.x, dense, atol=1e-7)


def test_report_serializes(small_fit):
    import json
    _, _, _, rep = small_fit
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["kernel"] == "transitivity" and len(d["theta_hat"]) == len(d["names"])


def test_imom_method_has_no_refined_fields():
    truth = ParameterSet.from_blocks("transitivity", 10, {"a": 3.0, "b": 3.0}, xi=0.8, eta=0.9)
    s = simulate(SimConfig(truth, n=30, seed=1))
    rep = fit("transitivity", s, EstimationConfig(init_grid=(0.7,), method="imom", threads=1))
    assert rep.theta_hat is None and rep.ci_lower is None
    assert rep.imom_iterations is not None


def test_all_starts_one_report_per_start():
    truth = ParameterSet.from_blocks("transitivity", 8, {"a": 2.0, "b": 2.0}, xi=0.8, eta=0.9)
    s = simulate(SimConfig(truth, n=25, seed=3))
    reps = fit_all_starts("transitivity", s, EstimationConfig(init_grid=(0.6, 0.9), threads=1))
    assert [r.starts[0]["start"] for r in reps] == [0.6, 0.9]


def test_refinement_improves_globals_over_initial():
    truth = ParameterSet.from_blocks("transitivity", 20, {"a": 10.0, "b": 10.0}, xi=0.8, eta=0.9)
    cfg = EstimationConfig(init_grid=(0.7,), threads=1)
    init_err, hat_err = [], []
    for seed in range(3):
        rep = fit("transitivity", simulate(SimConfig(truth, n=60, seed=seed)), cfg)
        init_err.append(rmae(rep.theta_initial, truth.values, [0, 1]))
        hat_err.append(rmae(rep.theta_hat, truth.values, [0, 1]))
    assert np.mean(hat_err) < np.mean(init_err)


# ---------------------------------------------------------------- variance

def test_variance_zero_projection():
    theta = ParameterSet.from_blocks("transitivity", 5, {"a": 1.0, "b": 1.0}, xi=0.7, eta=0.7)
    s = random_series(np.random.default_rng(0), 5, 5)
    assert variance_estimate(0, theta, np.zeros(theta.index.q), s) == 0.0


def test_variance_constant_half():
    theta = ParameterSet.from_blocks("global_ar", 5, alpha=0.5, beta=0.5)
    s = random_series(np.random.default_rng(1), 5, 6)
    c = 0.37
    # phi.dgamma = c(1 - x) + c x = c for every observation
    assert variance_estimate(0, theta, [c, -c], s) == pytest.approx(4 * c * c, rel=1e-12)


def test_variance_positive_for_nonzero_gradient():
    theta = ParameterSet.from_blocks("global_ar", 5, alpha=0.3, beta=0.2)
    s = random_series(np.random.default_rng(2), 5, 6)
    assert variance_estimate(0, theta, [1.0, 0.0], s) > 0


# ---------------------------------------------------------------- evaluation utilities

def test_rmae():
    assert rmae([1.1, 1.8], [1.0, 2.0]) == pytest.approx(0.1)
    assert rmae([[1.1, 2.0], [0.9, 2.0]], [1.0, 2.0], [0]) == pytest.approx(0.1)


def test_summarize_replications_by_hand():
    truth = ParameterSet.from_blocks("transitivity", 3, {"a": 2.0, "b": 4.0}, xi=1.0, eta=1.0)
    q = truth.index.q

    def rep(a, lo, hi):
        v = [a, 4.0] + [1.0] * 6
        return SimpleNamespace(theta_initial=v, theta_pilot=v, theta_hat=v, ci_available=[True] * q,
                               ci_lower=[lo] * q, ci_upper=[hi] * q)

    results = [[rep(2.2, 1.0, 3.0), rep(2.4, 2.5, 3.0)], [rep(1.0, 0.0, 5.0)], []]
    out = summarize_replications(results, truth)
    assert out["replications"] == 3 and out["failed"] == 1
    # replication means 0.15 and 0.5
    assert out["rmae"]["hat"]["a"] == pytest.approx(0.325)
    assert out["rmae"]["hat"]["xi"] == 0.0
    assert out["coverage"]["a"] == pytest.approx(2 / 3)
    assert out["coverage"]["b"] == pytest.approx(1 / 3)
    assert out["ci_length"]["a"] == pytest.approx((2.0 + 0.5 + 5.0) / 3)


def test_replicate_is_seeded():
    truth = ParameterSet.from_blocks("transitivity", 8, {"a": 2.0, "b": 2.0}, xi=0.8, eta=0.9)
    cfg = EstimationConfig(init_grid=(0.8,))
    r1 = replicate(truth, 20, cfg, replications=2, all_starts=False, threads=1)
    r2 = replicate(truth, 20, cfg, replications=2, all_starts=False, threads=1)
    assert len(r1) == 2 and all(len(r) == 1 for r in r1)
    assert [r[0].theta_hat for r in r1] == [r[0].theta_hat for r in r2]
    assert r1[0][0].theta_hat != r1[1][0].theta_hat
