import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudlet_stgnn.graph import (GraphInputError, build_adjacency, build_graph, cheb_basis, check_adjacency,
                                  haversine_km, load_distances, load_sensors, pairwise_haversine,
                                  save_sensors, scaled_laplacian)

lat = st.floats(-90, 90, allow_nan=False)
lon = st.floats(-180, 180, allow_nan=False)


def test_haversine_identity_and_half_circumference():
    assert haversine_km((0, 0), (0, 0)) == 0.0
    assert haversine_km((0, 0), (0, 180)) == pytest.approx(math.pi * 6371.0, rel=1e-12)
    assert haversine_km((0, 0), (0, 180)) == pytest.approx(20015.1, abs=0.05)


@given(lat, lon, lat, lon)
def test_haversine_symmetric_nonnegative(a1, o1, a2, o2):
    d = haversine_km((a1, o1), (a2, o2))
    assert d >= 0
    assert d == pytest.approx(haversine_km((a2, o2), (a1, o1)), abs=1e-9)


@pytest.mark.parametrize("bad", [(91, 0), (0, 181), (-90.5, 3)])
def test_haversine_range(bad):
    with pytest.raises(GraphInputError):
        haversine_km(bad, (0, 0))


def test_pairwise_matches_scalar(rng):
    pts = np.column_stack([rng.uniform(33, 35, 8), rng.uniform(-119, -117, 8)])
    d = pairwise_haversine(pts)
    for i in range(8):
        for j in range(8):
            assert d[i, j] == pytest.approx(haversine_km(pts[i], pts[j]), abs=1e-9)


def test_adjacency_scalar_oracle():
    W = build_adjacency(np.array([[0.0, 1.0], [1.0, 0.0]]), sigma2=1.0, epsilon=0.1)
    assert W[0, 1] == pytest.approx(math.exp(-1.0), rel=1e-15)
    assert W[0, 0] == 0.0


def test_adjacency_zero_distance_gives_one():
    W = build_adjacency(np.zeros((3, 3)), sigma2=2.0)
    assert np.all(W[~np.eye(3, dtype=bool)] == 1.0)


def test_adjacency_threshold_boundary():
    eps = 0.1
    # exp(-d^2) = eps - 1e-9 sits just under the threshold
    d = math.sqrt(-math.log(eps - 1e-9))
    W = build_adjacency(np.array([[0.0, d], [d, 0.0]]), sigma2=1.0, epsilon=eps)
    assert W[0, 1] == 0.0
    d_in = math.sqrt(-math.log(eps + 1e-9))
    W = build_adjacency(np.array([[0.0, d_in], [d_in, 0.0]]), sigma2=1.0, epsilon=eps)
    assert W[0, 1] > 0


def test_adjacency_rejects_asymmetric():
    with pytest.raises(GraphInputError):
        build_adjacency(np.array([[0.0, 1.0], [2.0, 0.0]]))


@given(st.lists(st.floats(0, 50), min_size=3, max_size=12))
def test_adjacency_monotone_in_distance(ds):
    n = len(ds) + 1
    dist = np.zeros((n, n))
    dist[0, 1:] = ds
    dist[1:, 0] = ds
    W = build_adjacency(dist, sigma2=100.0, epsilon=0.0)
    order = np.argsort(ds)
    assert np.all(np.diff(W[0, 1:][order]) <= 0)


def test_adjacency_deterministic(rng):
    pts = rng.uniform(0, 10, (15, 2))
    g1 = build_graph([str(i) for i in range(15)], pts, planar=True)
    g2 = build_graph([str(i) for i in range(15)], pts, planar=True)
    assert np.array_equal(g1.W, g2.W)
    check_adjacency(g1.W)


def test_laplacian_one_node():
    lap = scaled_laplacian(np.zeros((1, 1)))
    assert lap.lambda_max == pytest.approx(1.0)
    assert lap.L_tilde == pytest.approx(np.array([[1.0]]))


def test_laplacian_two_nodes_hand_eigen():
    lap = scaled_laplacian(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert lap.lambda_max == pytest.approx(2.0, rel=1e-8)
    assert np.allclose(lap.L_tilde, [[0.0, -1.0], [-1.0, 0.0]], atol=1e-8)


def test_isolated_node_identity_row():
    W = np.zeros((3, 3))
    W[0, 1] = W[1, 0] = 0.5
    lap = scaled_laplacian(W, lambda_max=2.0)
    # L row for node 2 is the identity row; rescaled: (2/2)*1 - 1 = 0
    assert np.allclose(lap.L_tilde[2], [0.0, 0.0, 0.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 25), st.integers(0, 10_000))
def test_scaled_spectrum_bounded(n, seed):
    r = np.random.default_rng(seed)
    g = build_graph([str(i) for i in range(n)], r.uniform(0, 20, (n, 2)), planar=True)
    lap = scaled_laplacian(g.W)
    assert np.array_equal(lap.L_tilde, lap.L_tilde.T)
    eig = np.linalg.eigvalsh(lap.L_tilde)
    assert eig.min() >= -1 - 1e-6 and eig.max() <= 1 + 1e-6


def test_cheb_basis_small_orders(rng):
    L = rng.normal(size=(4, 4))
    L = (L + L.T) / 2
    assert np.array_equal(cheb_basis(L, 1)[0], np.eye(4))
    b2 = cheb_basis(L, 2)
    assert len(b2) == 2 and np.array_equal(b2[1], L)
    with pytest.raises(GraphInputError):
        cheb_basis(L, 0)


def test_cheb_basis_scalar_polynomials():
    T = cheb_basis(np.diag([-1.0, 0.0, 1.0]), 3)
    assert np.array_equal(T[2], np.diag([1.0, -1.0, 1.0]))
    x = np.linspace(-1, 1, 7)
    T = cheb_basis(np.diag(x), 5)
    for k in range(5):
        assert np.allclose(np.diag(T[k]), np.cos(k * np.arccos(x)), atol=1e-12)


def test_cheb_recursion_residual_zero(rng):
    L = rng.normal(size=(5, 5))
    L = (L + L.T) / 2
    T = cheb_basis(L, 5)
    for k in range(2, 5):
        assert np.array_equal(T[k], 2.0 * L @ T[k - 1] - T[k - 2])


def test_sensor_and_distance_files(tmp_path):
    ids = ["a", "b", "c"]
    coords = np.array([[34.0, -118.0], [34.01, -118.0], [34.0, -118.02]])
    save_sensors(tmp_path / "s.csv", ids, coords)
    ids2, coords2, planar = load_sensors(tmp_path / "s.csv")
    assert ids2 == ids and not planar and np.array_equal(coords2, coords)
    (tmp_path / "d.csv").write_text("from_id,to_id,dist_km\na,b,1.5\nb,a,1.2\nb,c,3\n")
    d = load_distances(tmp_path / "d.csv", ids)
    assert d[0, 1] == d[1, 0] == 1.2
    assert d[1, 2] == 3.0 and np.isinf(d[0, 2])
    W = build_adjacency(d, sigma2=4.0)
    assert W[0, 2] == 0.0


def test_bad_sensor_header(tmp_path):
    (tmp_path / "s.csv").write_text("id,a,b\n")
    with pytest.raises(GraphInputError):
        load_sensors(tmp_path / "s.csv")
