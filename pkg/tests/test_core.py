import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from arnet.core import (ParameterSet, SeriesFormatError, SnapshotSeries, build_index, load_series,
                        pair_arrays, save_series)
from arnet.simulate import SimConfig, simulate


def _series_from_upper(upper, p):
    return SnapshotSeries.from_upper(np.asarray(upper, dtype=np.uint8), p)


@st.composite
def series_strategy(draw, max_p=7, max_n=5):
    p = draw(st.integers(3, max_p))
    n = draw(st.integers(1, max_n))
    upper = draw(arrays(np.uint8, (n, p * (p - 1) // 2), elements=st.integers(0, 1)))
    return _series_from_upper(upper, p)


def test_matrix_text_single_edge(tmp_path):
    f = tmp_path / "s.txt"
    f.write_text("p=3 n=1\n0 1 0\n1 0 0\n0 0 0\n")
    s = load_series(f)
    assert s.n == 1 and s.p == 3
    assert s.data[0, 0, 1] == s.data[0, 1, 0] == 1
    assert s.data.sum() == 2


def test_edge_csv_two_snapshots(tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("# p=3 n=2\nt,i,j\n1,1,2\n")
    s = load_series(f)
    assert s.data[0, 0, 1] == 1 and s.data[0].sum() == 2
    assert s.data[1].sum() == 0


def test_edge_csv_self_loop_is_index_error(tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("# p=3 n=2\nt,i,j\n1,2,2\n")
    with pytest.raises(SeriesFormatError) as err:
        load_series(f)
    assert err.value.kind == "index"


@pytest.mark.parametrize("text,kind", [
    ("p=3 n=1\n0 1\n1 0 0\n0 0 0\n", "dimension"),
    ("p=3 n=1\n0 2 0\n1 0 0\n0 0 0\n", "value"),
    ("hello\n", "parse"),
    ("p=3 n=2\n0 1 0\n1 0 0\n0 0 0\n", "dimension"),
])
def test_matrix_text_errors(tmp_path, text, kind):
    f = tmp_path / "bad.txt"
    f.write_text(text)
    with pytest.raises(SeriesFormatError) as err:
        load_series(f, format="matrix-text")
    assert err.value.kind == kind


def test_edge_csv_out_of_range(tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("# p=3 n=2\nt,i,j\n3,1,2\n")
    with pytest.raises(SeriesFormatError) as err:
        load_series(f)
    assert err.value.kind == "index"


def test_load_mirrors_upper_triangle(tmp_path):
    f = tmp_path / "s.txt"
    f.write_text("p=3 n=1\n1 1 0\n0 0 1\n0 0 0\n")
    s = load_series(f)
    assert np.array_equal(s.data[0], s.data[0].T)
    assert not np.any(np.diagonal(s.data[0]))


@pytest.mark.parametrize("fmt", ["matrix-text", "edge-csv"])
@pytest.mark.parametrize("fill", [0, 1])
def test_constant_series_round_trip(tmp_path, fmt, fill):
    p, n = 3, 2
    up = np.full((n, p * (p - 1) // 2), fill, dtype=np.uint8)
    s = _series_from_upper(up, p)
    save_series(s, tmp_path / "x", format=fmt)
    assert load_series(tmp_path / "x") == s


@pytest.mark.parametrize("fmt", ["matrix-text", "edge-csv"])
def test_simulated_round_trip(tmp_path, fmt):
    theta = ParameterSet.from_blocks("transitivity", 8, {"a": 2.0, "b": 1.0}, xi=0.8, eta=0.7)
    s = simulate(SimConfig(theta, n=6, seed=11))
    save_series(s, tmp_path / "x", format=fmt)
    assert load_series(tmp_path / "x", format=fmt) == s


@settings(max_examples=40, deadline=None)
@given(series_strategy(), st.sampled_from(["matrix-text", "edge-csv"]))
def test_round_trip_property(tmp_path_factory, s, fmt):
    path = tmp_path_factory.mktemp("rt") / "s"
    save_series(s, path, format=fmt)
    back = load_series(path)
    assert back == s
    assert np.array_equal(back.data, back.data.transpose(0, 2, 1))


def test_series_rejects_asymmetric_and_loops():
    a = np.zeros((1, 3, 3), dtype=np.uint8)
    a[0, 0, 1] = 1
    with pytest.raises(ValueError):
        SnapshotSeries(a)
    b = np.zeros((1, 3, 3), dtype=np.uint8)
    b[0, 1, 1] = 1
    with pytest.raises(ValueError):
        SnapshotSeries(b)


def test_index_transitivity_p4():
    idx = build_index("transitivity", 4)
    assert idx.q == 10 and len(idx.global_set) == 2
    assert idx.param_scope[idx.position("xi_1")].size == 3
    assert idx.param_scope[idx.position("a")].size == 6


def test_index_degree_het_and_persistence():
    idx = build_index("degree_het", 4)
    assert idx.q == 12 and len(idx.global_set) == 4
    idx = build_index("persistence", 3)
    assert idx.q == 8
    assert len(set(idx.edge_scope[0].tolist())) == 6


def test_index_unknown_kernel():
    with pytest.raises(ValueError):
        build_index("nope", 5)


@pytest.mark.parametrize("kid", ["degree_het", "persistence", "transitivity", "transitivity_ext",
                                 "global_ar", "edgewise_ar"])
@pytest.mark.parametrize("p", [4, 7, 10])
def test_dual_index_consistency(kid, p):
    idx = build_index(kid, p)
    members = [set(s.tolist()) for s in idx.param_scope]
    for k in range(idx.n_pairs):
        involved = set(idx.edge_scope[k].tolist())
        for l in range(idx.q):
            assert (k in members[l]) == (l in involved)
    for l in idx.global_set:
        assert idx.param_scope[l].size == idx.n_pairs


@pytest.mark.parametrize("kid", ["degree_het", "persistence", "transitivity"])
def test_local_scope_sizes(kid):
    p = 9
    idx = build_index(kid, p)
    G = len(idx.global_set)
    s1, s2 = idx.param_scope[G], idx.param_scope[G + 1]
    assert s1.size == p - 1
    assert np.intersect1d(s1, s2).size == 1
    bound = 8 if kid == "degree_het" else 6
    assert max(len(set(r.tolist())) for r in idx.edge_scope) == bound


def test_parameter_set_validation():
    with pytest.raises(ValueError):
        ParameterSet.from_blocks("transitivity", 4, {"a": 1.0}, xi=1, eta=1)
    with pytest.raises(ValueError):
        ParameterSet.from_blocks("transitivity", 4, {"a": -1.0, "b": 1.0}, xi=1, eta=1)
    theta = ParameterSet.from_blocks("transitivity", 4, {"a": 1.0, "b": 2.0}, xi=[1, 2, 3, 4], eta=0.5)
    assert theta.values.size == 2 + 2 * 4
    assert theta["b"] == 2.0
    assert np.allclose(theta.xi, [1, 2, 3, 4])


def test_pair_order_is_upper_triangle():
    rows, cols = pair_arrays(4)
    assert list(zip(rows.tolist(), cols.tolist())) == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
