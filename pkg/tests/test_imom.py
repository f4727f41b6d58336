import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arnet.core import ParameterSet, SnapshotSeries
from arnet.estimate import rmae
from arnet.imom import _objective, imom_fit, moment_products, recover_locals
from arnet.kernels import get_kernel
from arnet.likelihood import TransitionData
from arnet.simulate import SimConfig, simulate


def forward(xi):
    xi = np.asarray(xi, dtype=float)
    return xi * (xi.sum() - xi)


def test_recover_flat():
    assert np.allclose(recover_locals([2.0, 2.0, 2.0]), 0, atol=1e-9)


def test_recover_hand_example():
    assert np.allclose(recover_locals([4.0, 3.0, 3.0]), [math.log(2), 0, 0], atol=1e-10)


def test_recover_unique_from_two_starts():
    rng = np.random.default_rng(0)
    v = forward(rng.uniform(0.2, 2.5, 7))
    x1 = recover_locals(v, x0=rng.normal(size=7))
    x2 = recover_locals(v, x0=rng.normal(size=7) - 1)
    assert np.max(np.abs(x1 - x2)) < 1e-8


def test_recover_gradient_tolerance():
    v = forward([0.3, 1.7, 2.9, 0.8])
    x = recover_locals(v)
    e = np.exp(x)
    assert np.max(np.abs(e * (e.sum() - e) - v)) <= 1e-10 * max(1.0, np.max(v))


@pytest.mark.parametrize("v", [[1.0, 0.0, 2.0], [1.0, -1.0, 2.0], [1.0, 2.0]])
def test_recover_rejects_bad_input(v):
    with pytest.raises(ValueError):
        recover_locals(v)


def test_recover_objective_decreases():
    v = forward([0.2, 2.7, 1.1, 0.5, 3.0])
    seen = []
    for it in range(1, 30):
        x = recover_locals(v, x0=np.full(5, 1.5), max_iter=it)
        seen.append(_objective(x, v))
    assert all(b <= a + 1e-12 for a, b in zip(seen, seen[1:]))


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 12), st.integers(0, 2**32 - 1))
def test_recover_inverts_forward_map(p, seed):
    xi = np.random.default_rng(seed).uniform(0.1, 3.0, p)
    assert np.max(np.abs(np.exp(recover_locals(forward(xi))) - xi)) < 1e-8


def test_moment_hand_count(monkeypatch):
    # one edge alternating 0,1,0,1,0: two formations over two at-risk steps
    up = np.zeros((5, 3), dtype=np.uint8)
    up[[1, 3], 0] = 1
    s = SnapshotSeries.from_upper(up, 3)
    data = TransitionData.from_series("transitivity", s)
    kernel = type(data.kernel)
    monkeypatch.setattr(kernel, "globals_shape", lambda self, g, stats: (np.ones(len(stats)), np.ones(len(stats))))
    Xi, Gamma, und_xi, und_eta = moment_products(data, np.ones(data.index.q))
    assert Xi[0, 1] == Xi[1, 0] == 1.0
    assert np.all(np.diag(Xi) == 0) and np.all(Xi >= 0)
    assert Gamma[0, 1] == 1.0  # two dissolutions over two at-risk edges
    assert not und_xi.any()


def test_all_empty_series_is_degenerate():
    s = SnapshotSeries.from_upper(np.zeros((6, 10), dtype=np.uint8), 5)
    res = imom_fit("transitivity", s, 0.5, max_iter=3)
    Xi = res.history[0].Xi
    assert np.all(Xi == 0)
    assert any("degenerate formation" in f for f in res.flags)
    assert any("never at risk of dissolution" in f for f in res.flags)
    assert np.all(res.theta.xi < 1e-6)


def test_imom_requires_separable_first_order():
    s = SnapshotSeries.from_upper(np.zeros((6, 3), dtype=np.uint8), 3)
    with pytest.raises(ValueError):
        imom_fit("persistence", s, 0.5)


def test_imom_quality_and_fixed_point():
    truth = ParameterSet.from_blocks("transitivity", 50, {"a": 10.0, "b": 10.0}, xi=0.8, eta=0.9)
    s = simulate(SimConfig(truth, n=200, seed=5))
    res = imom_fit("transitivity", s, 0.5, safeguard=False, tol=1e-8, max_iter=300)
    est = res.theta.values
    G = 2
    assert rmae(est[G:], truth.values[G:]) < 0.15
    assert rmae(est[:G], truth.values[:G]) < 0.15
    if res.converged:
        again = imom_fit("transitivity", s, res.theta, safeguard=False, tol=1e-8, max_iter=1)
        assert again.history[0].change < 1e-6
