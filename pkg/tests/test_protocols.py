import numpy as np
import pytest

from cloudlet_stgnn import accounting as acc
from cloudlet_stgnn.data import make_windows, synth_generate
from cloudlet_stgnn.graph import build_graph
from cloudlet_stgnn.metrics import aggregate_weighted
from cloudlet_stgnn.model import TINY_CONFIG, average_params, param_bytes
from cloudlet_stgnn.partition import build_partition
from cloudlet_stgnn.protocols import (GossipBuffer, RunConfig, _centre_holder, _cloudlet_holders, evaluate,
                                      gossip_peer, run_centralized, run_gossip, run_serverfree_fl, run_setup,
                                      run_traditional_fl, train_local)

# star layout: hub cloudlet at the origin, three leaves 5 km out and 8.7 km
# from each other; with a 6 km range only hub-leaf links exist
STAR = np.array([[0.0, 0.0], [5.0, 0.0], [-2.5, 4.33], [-2.5, -4.33]])


def _cfg(setup, **kw):
    kw.setdefault("epochs", 2)
    kw.setdefault("model", TINY_CONFIG)
    return RunConfig(setup=setup, **kw)


@pytest.fixture(scope="module")
def star():
    r = np.random.default_rng(0)
    pts = np.vstack([c + r.uniform(-1.5, 1.5, (4, 2)) for c in STAR])
    graph = build_graph([f"s{i}" for i in range(len(pts))], pts, planar=True)
    _, series = synth_generate(len(pts), 700, 5)
    data = make_windows(series, 3)
    part = build_partition(graph, STAR, 6.0, hops=4)
    return graph, data, part


def test_star_topology_degrees(star):
    _, _, part = star
    assert part.degrees() == [3, 1, 1, 1]


def _model_bytes(result):
    return [result.comm.total(acc.SEND_CATEGORIES, epoch=e) for e in range(1, result.config.epochs + 1)]


def test_ledgers_match_closed_forms(star):
    graph, data, part = star
    n_cl = part.n_cloudlets
    for setup in acc.SETUPS:
        res = run_setup(data, graph, part, _cfg(setup))
        pb = param_bytes(res.param_count)
        expected = acc.model_bytes_per_epoch(setup, n_cl, pb, part.degrees())
        assert _model_bytes(res) == [expected] * 2
        feat = acc.feature_bytes_per_epoch(setup, part, data.train_timesteps, graph.n)[1]
        assert res.comm.total("node_feature") == 2 * feat
        if setup == "serverfree_fl":
            assert expected == 6 * pb
            assert res.flops.total("aggregation", epoch=1) == acc.aggregation_flops(
                setup, n_cl, res.param_count, degrees=part.degrees())
        if setup == "traditional_fl":
            assert res.comm.total("model_down") == 2 * n_cl * pb
        if setup == "centralized":
            assert res.comm.total(["model_up", "model_down"]) == 0
        if setup == "gossip":
            assert res.flops.total("aggregation", epoch=1) == 0
        n_train = len(data.indices("train"))
        counts = [graph.n] if setup == "centralized" else [len(part.local_nodes(c)) for c in range(n_cl)]
        assert res.flops.total("training", epoch=2) == acc.training_flops_per_epoch(TINY_CONFIG, n_train, counts)


def test_run_is_deterministic_and_thread_independent(star):
    graph, data, part = star
    for setup in ("traditional_fl", "serverfree_fl", "gossip"):
        a = run_setup(data, graph, part, _cfg(setup, threads=1))
        b = run_setup(data, graph, part, _cfg(setup, threads=3))
        assert a.val_losses == b.val_losses
        assert a.comm.entries == b.comm.entries and a.flops.entries == b.flops.entries
        assert a.checkpoints.keys() == b.checkpoints.keys()
        for k in a.checkpoints:
            assert np.array_equal(a.checkpoints[k], b.checkpoints[k])


def test_single_cloudlet_fl_equals_centralized(star):
    graph, data, _ = star
    one = build_partition(graph, [[0.0, 0.0]], 50.0, hops=4)
    cen = run_centralized(data, graph, _cfg("centralized", epochs=3))
    fl = run_traditional_fl(data, graph, one, _cfg("traditional_fl", epochs=3))
    assert np.max(np.abs(cen.val_curve() - fl.val_curve())) < 1e-6
    assert np.array_equal(cen.checkpoints["center"], fl.checkpoints["server"])


def test_fedavg_weights_direct_sum(star):
    graph, data, part = star
    cfg = _cfg("traditional_fl", epochs=1)
    res = run_traditional_fl(data, graph, part, cfg)
    holders = _cloudlet_holders(graph, part, cfg)
    start = _centre_holder(graph, cfg).params.flatten()
    trained, weights = [], []
    for h in holders:
        h.load(start)
        train_local(h, data, 0, cfg)
        trained.append(h.params.flatten().astype(np.float64))
        weights.append(len(h.owned))
    direct = sum(w * v for w, v in zip(weights, trained)) / sum(weights)
    assert np.max(np.abs(res.checkpoints["server"] - direct)) < 1e-6


def test_two_cloudlets_end_identical():
    r = np.random.default_rng(3)
    cl = np.array([[0.0, 0.0], [4.0, 0.0]])
    pts = np.vstack([c + r.uniform(-1.5, 1.5, (4, 2)) for c in cl])
    graph = build_graph([f"s{i}" for i in range(8)], pts, planar=True)
    data = make_windows(synth_generate(8, 600, 1)[1], 3)
    part = build_partition(graph, cl, 6.0, hops=4)
    res = run_serverfree_fl(data, graph, part, _cfg("serverfree_fl", epochs=1))
    assert np.array_equal(res.checkpoints["0"], res.checkpoints["1"])


def test_serverfree_without_links_warns(star):
    graph, data, _ = star
    far = build_partition(graph, STAR, 6.0, hops=4)
    lonely = type(far)(far.cloudlet_coords, far.comm_range_km, far.owner, far.owned, far.halo, far.plan, (), 4)
    with pytest.warns(RuntimeWarning, match="isolation"):
        res = run_serverfree_fl(data, graph, lonely, _cfg("serverfree_fl", epochs=1))
    assert res.comm.total("model_up") == 0


def test_gossip_buffer_fifo_and_average():
    buf = GossipBuffer()
    assert buf.aggregate() is None
    u, v, w = np.full(3, 1.0), np.full(3, 3.0), np.full(3, 7.0)
    buf.push(u)
    assert np.array_equal(buf.aggregate(), u)
    buf.push(v)
    assert np.array_equal(buf.aggregate(), (u + v) / 2)
    buf.push(w)
    assert len(buf) == 2
    assert np.array_equal(buf.aggregate(), (v + w) / 2)
    assert np.array_equal(buf.take(), (v + w) / 2)
    assert buf.take() is None and len(buf) == 2
    buf.push(u)
    assert np.array_equal(buf.take(), (w + u) / 2)


def test_gossip_peer_reproducible(star):
    graph, _, part = star
    cfg = _cfg("gossip")
    holders = _cloudlet_holders(graph, part, cfg)
    labels = [h.label for h in holders]
    seq = [gossip_peer(cfg, holders[0], labels, e) for e in range(30)]
    assert seq == [gossip_peer(cfg, holders[0], labels, e) for e in range(30)]
    assert holders[0].label not in seq
    other = [gossip_peer(_cfg("gossip", gossip_seed=99), holders[0], labels, e) for e in range(30)]
    assert seq != other


def test_gossip_aggregation_flops_follow_buffers(star):
    graph, data, part = star
    res = run_gossip(data, graph, part, _cfg("gossip", epochs=3))
    P = res.param_count
    for e in (2, 3):
        per = [f.flops for f in res.flops.entries if f.epoch == e and f.category == "aggregation"]
        assert all(x in (2 * P, 4 * P) for x in per)


def test_centralized_contract(star):
    graph, data, _ = star
    res = run_centralized(data, graph, _cfg("centralized", epochs=1))
    assert len(res.val_curve()) == 1
    with pytest.raises(ValueError):
        _cfg("centralized", epochs=0)


def test_evaluate_global_equals_pooled_cloudlets(star):
    graph, data, part = star
    cfg = _cfg("centralized")
    center = _centre_holder(graph, cfg)
    reports = evaluate([center], data, cfg, part)
    glob, per = reports[0], reports[1:]
    assert [r.scope for r in per] == [f"cloudlet{c}" for c in range(part.n_cloudlets)]
    agg = aggregate_weighted(per, [len(o) for o in part.owned])
    assert abs(agg.mae - glob.mae) < 1e-9
    assert abs(agg.rmse - glob.rmse) < 1e-9
    assert abs(agg.wmape - glob.wmape) < 1e-9


def test_identical_cloudlet_models_match_single_model(star):
    graph, data, part = star
    cfg = _cfg("gossip")
    single = evaluate([_centre_holder(graph, cfg)], data, cfg)[0]
    pooled = evaluate(_cloudlet_holders(graph, part, cfg), data, cfg, part)[0]
    assert pooled.mae == pytest.approx(single.mae, abs=1e-4)
    assert pooled.wmape == pytest.approx(single.wmape, abs=1e-4)


def test_averaging_conservation():
    a = np.arange(6, dtype=np.float32)
    b = a.copy()
    b[0] = 100
    assert np.array_equal(average_params([a, b])[1:], a[1:])
