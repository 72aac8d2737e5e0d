import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudlet_stgnn.graph import build_graph
from cloudlet_stgnn.model import ModelConfig
from cloudlet_stgnn.partition import (ExchangeEntry, UncoveredSensorError, assign_sensors, build_partition,
                                      cloudlet_links, compute_halos, extract_subgraph, receptive_hops,
                                      save_partition, suggest_cloudlets)
from helpers import halo_consistency_error, random_partition_case

PATH_W = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)


def _planar_graph(pts):
    return build_graph([f"n{i}" for i in range(len(pts))], np.asarray(pts, float), planar=True)


def test_single_cloudlet_owns_all(rng):
    pts = rng.uniform(0, 5, (10, 2))
    owner = assign_sensors(pts, [[2.5, 2.5]], 8.0, planar=True)
    assert not owner.any()


def test_tie_goes_to_lower_index():
    cl = np.array([[9, 9], [9, 8], [-1, 0], [9, 7], [9, 6], [1, 0]], float)
    owner = assign_sensors(np.array([[0.0, 0.0]]), cl, 5.0, planar=True)
    assert owner[0] == 2


def test_uncovered_sensor_error_lists_ids():
    cl = np.array([[0.0, 0.0], [20.0, 0.0]])
    pts = np.array([[1.0, 0.0], [0.0, 8.001]])
    with pytest.raises(UncoveredSensorError, match="s1") as exc:
        assign_sensors(pts, cl, 8.0, sensor_ids=["s0", "s1"], planar=True)
    assert exc.value.sensor_ids == ["s1"]
    assign_sensors(np.array([[0.0, 8.0]]), cl, 8.0, planar=True)


@pytest.mark.parametrize("blocks,K,override,expected", [(2, 3, None, 4), (1, 2, None, 1), (2, 3, 2, 2)])
def test_receptive_hops(blocks, K, override, expected):
    cfg = ModelConfig(st_blocks=blocks, cheb_K=K, hops_override=override)
    assert receptive_hops(cfg) == expected


def test_path_graph_halos_and_plan():
    # nodes 1-2-3 are indices 0-1-2; A owns {1}, B owns {2, 3}
    owned, halo, plan = compute_halos(np.array([0, 1, 1]), PATH_W, hops=1)
    assert owned == ((0,), (1, 2))
    assert halo == ((1,), (0,))
    assert set(plan) == {ExchangeEntry(1, 0, (1,)), ExchangeEntry(0, 1, (0,))}


def test_zero_hops_empty():
    _, halo, plan = compute_halos(np.array([0, 1, 1]), PATH_W, hops=0)
    assert halo == ((), ()) and plan == ()


def test_complete_graph_halo_is_complement():
    n = 7
    W = np.ones((n, n)) - np.eye(n)
    owner = np.array([0, 1, 0, 1, 1, 0, 1])
    owned, halo, _ = compute_halos(owner, W, hops=1)
    for c in range(2):
        assert set(halo[c]) == set(range(n)) - set(owned[c])


def test_cloudlet_links_by_range():
    cl = np.array([[0, 0], [5, 0], [20, 0]], float)
    assert cloudlet_links(cl, 8.0, planar=True) == ((0, 1),)


def test_extract_subgraph_identity_and_singleton(rng):
    g = _planar_graph(rng.uniform(0, 10, (8, 2)))
    sub = extract_subgraph(g, range(8), 3)
    assert np.array_equal(sub.W, g.W)
    assert sub.index_map == {i: i for i in range(8)}
    one = extract_subgraph(g, [5], 3)
    assert one.W.shape == (1, 1) and one.W[0, 0] == 0
    with pytest.raises(ValueError):
        extract_subgraph(g, [], 3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_halo_consistency(seed):
    assert max(halo_consistency_error(seed)) < 1e-5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_partition_invariants(seed):
    _, g, part = random_partition_case(seed)
    assert sum(len(o) for o in part.owned) == g.n
    assert part.duplication_factor >= 1.0
    for c in range(part.n_cloudlets):
        assert not set(part.owned[c]) & set(part.halo[c])
    # every halo node is delivered exactly once, from its owner
    for c in range(part.n_cloudlets):
        got = sorted(v for e in part.plan if e.dst == c for v in e.node_ids)
        assert got == list(part.halo[c])
        assert all(part.owner[v] == e.src for e in part.plan if e.dst == c for v in e.node_ids)
    if part.n_cloudlets == 1:
        assert part.duplication_factor == 1.0


def test_duplication_grows_with_hops(rng):
    g = _planar_graph(rng.uniform(0, 15, (25, 2)))
    cl = np.array([[3, 3], [12, 3], [7, 12]], float)
    prev = 0
    for hops in range(0, 5):
        d = build_partition(g, cl, 100.0, hops).duplication_factor
        assert d >= prev
        prev = d
    assert build_partition(g, cl, 100.0, 0).duplication_factor == 1.0


def test_plan_serialization_deterministic(tmp_path, rng):
    g = _planar_graph(rng.uniform(0, 10, (15, 2)))
    cl = suggest_cloudlets(g.coords, 3, planar=True)
    for d in ("a", "b"):
        save_partition(tmp_path / d, g, build_partition(g, cl, 50.0, 2))
    for f in ("partition.csv", "plan.csv", "cloudlets.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    head = (tmp_path / "a" / "plan.csv").read_text().splitlines()[0]
    assert head == "src,dst,node_id"


def test_suggest_cloudlets_covers_within_range(rng):
    pts = rng.uniform(0, 30, (40, 2))
    cl = suggest_cloudlets(pts, 7, comm_range_km=8.0, planar=True)
    assign_sensors(pts, cl, 8.0, planar=True)
