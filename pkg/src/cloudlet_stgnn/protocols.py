"""The four training setups as epoch-synchronous simulations over cloudlets.

Every holder (the center, or one cloudlet) owns its parameters, Adam state
and random streams. Streams are derived from ``(seed, holder, epoch, local
epoch)`` so results do not depend on how many threads run the holders.
Messages are delivered and models merged at the epoch barrier in cloudlet
order.
"""
from __future__ import annotations

import csv
import json
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import accounting as acc
from .data import WindowedDataset
from .graph import SensorGraph, cheb_basis, scaled_laplacian
from .metrics import DENOMINATORS, MetricReport, aggregate_weighted, report
from .model import (ModelConfig, ModelParams, NodePlan, OptimizerState, adam_step, average_params,
                    forward, init_optimizer, init_params, loss_and_grads, node_plan, param_bytes,
                    steplr_epoch)
from .partition import CloudletPartition, cloudlet_subgraphs

SETUPS = acc.SETUPS
GOSSIP_BUFFER_SIZE = 2


@dataclass(frozen=True)
class RunConfig:
    setup: str = "centralized"
    epochs: int = 40
    batch_size: int = 32
    horizon: int = 3  # steps ahead
    lr: float = 1e-4
    step_size: int = 5
    gamma: float = 0.7
    weight_decay: float = 1e-5
    local_epochs: int = 1
    init_seed: int = 0
    shuffle_seed: int = 1
    gossip_seed: int = 2
    dropout_seed: int = 3
    mask_zeros: bool = False
    wmape_denominator: str = "predicted"
    threads: int = 1
    eval_batch: int = 32
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.setup not in SETUPS:
            raise ValueError(f"setup must be one of {SETUPS}, got {self.setup!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        for name in ("batch_size", "horizon", "local_epochs", "threads", "eval_batch", "step_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.wmape_denominator not in DENOMINATORS:
            raise ValueError(f"wmape_denominator must be one of {DENOMINATORS}")


class GossipBuffer:
    """FIFO of received flat models; the oldest is evicted when full.

    ``fresh`` is set by a delivery and cleared by :meth:`take`, so a holder
    only merges when something new has arrived since its last merge.
    """

    def __init__(self, capacity: int = GOSSIP_BUFFER_SIZE):
        self._items: deque[np.ndarray] = deque(maxlen=capacity)
        self.fresh = False

    def push(self, flat: np.ndarray) -> None:
        self._items.append(flat)
        self.fresh = True

    def take(self) -> np.ndarray | None:
        """Aggregate if a model arrived since the last take, else None."""
        if not self.fresh:
            return None
        self.fresh = False
        return self.aggregate()

    def __len__(self) -> int:
        return len(self._items)

    def contents(self) -> list[np.ndarray]:
        return list(self._items)

    def aggregate(self) -> np.ndarray | None:
        """Uniform average of the buffer, or None when empty."""
        if not self._items:
            return None
        return average_params(self.contents())


@dataclass
class RunResult:
    setup: str
    horizon: int
    config: RunConfig
    val_losses: list[tuple[int, str, float]]
    train_losses: list[tuple[int, str, float]]
    metrics: list[MetricReport]
    comm: acc.CommLedger
    flops: acc.FlopLedger
    checkpoints: dict[str, np.ndarray]
    param_count: int
    elapsed_s: float = 0.0

    def val_curve(self, holder: str = "global") -> np.ndarray:
        return np.array([loss for _, h, loss in self.val_losses if h == holder])

    def metric(self, scope: str = "global") -> MetricReport:
        for m in self.metrics:
            if m.scope == scope:
                return m
        raise KeyError(scope)


@dataclass
class Holder:
    """One model owner: the center or a cloudlet."""

    label: str
    seed_id: int
    nodes: np.ndarray  # global indices in local order
    owned: np.ndarray  # global indices of nodes this holder predicts
    plan: NodePlan
    params: ModelParams
    opt: OptimizerState

    def load(self, flat: np.ndarray) -> None:
        self.params.load_flat(flat)


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def _make_holder(label, seed_id, nodes, owned_local, basis, cfg: RunConfig, params: ModelParams) -> Holder:
    nodes = np.asarray(nodes, dtype=np.int64)
    owned_local = np.asarray(owned_local, dtype=np.int64)
    out = None if len(owned_local) == len(nodes) else owned_local
    plan = node_plan(basis, cfg.model.st_blocks, out, dtype=params.dtype)
    opt = init_optimizer(params, lr=cfg.lr, step_size=cfg.step_size, gamma=cfg.gamma,
                         weight_decay=cfg.weight_decay)
    return Holder(label, seed_id, nodes, nodes[owned_local], plan, params, opt)


def full_basis(graph: SensorGraph, K: int) -> np.ndarray:
    return np.stack(cheb_basis(scaled_laplacian(graph.W).L_tilde, K))


def _centre_holder(graph, cfg) -> Holder:
    params = init_params(cfg.model, cfg.init_seed)
    n = graph.n
    return _make_holder("center", 0, np.arange(n), np.arange(n), full_basis(graph, cfg.model.cheb_K), cfg, params)


def _cloudlet_holders(graph, partition, cfg) -> list[Holder]:
    subs = cloudlet_subgraphs(graph, partition, cfg.model.cheb_K)
    init = init_params(cfg.model, cfg.init_seed)
    holders = []
    for c, sg in enumerate(subs):
        if sg is None:
            continue
        holders.append(_make_holder(str(c), c, sg.nodes, np.arange(sg.n_owned), sg.basis, cfg, init.copy()))
    return holders


# -- local work ---------------------------------------------------------------

def _batch(data: WindowedDataset, holder: Holder, idx, mask_zeros: bool):
    x = data.inputs(idx)[:, :, holder.nodes]
    y = data.targets(idx)[:, holder.owned]
    mask = data.raw_targets(idx)[:, holder.owned] != 0 if mask_zeros else None
    return x, y, mask


def train_local(holder: Holder, data: WindowedDataset, epoch: int, cfg: RunConfig) -> float:
    """Local epochs over the training split; returns the mean batch loss.
    ``epoch`` counts from 0 and drives the learning-rate schedule."""
    steplr_epoch(holder.opt, epoch)
    train_idx = data.indices("train")
    losses = []
    for le in range(cfg.local_epochs):
        order = _rng(cfg.shuffle_seed, holder.seed_id, epoch, le).permutation(train_idx)
        drop = _rng(cfg.dropout_seed, holder.seed_id, epoch, le)
        for start in range(0, len(order), cfg.batch_size):
            x, y, mask = _batch(data, holder, order[start:start + cfg.batch_size], cfg.mask_zeros)
            if mask is not None and not mask.any():
                continue
            loss, grads = loss_and_grads(holder.params, x, y, None, mask, train=True, rng=drop,
                                         plan=holder.plan)
            adam_step(holder.params, grads, holder.opt)
            losses.append(loss)
    return float(np.mean(losses)) if losses else float("nan")


def predict(holder: Holder, data: WindowedDataset, idx, eval_batch: int = 32) -> np.ndarray:
    """Normalized eval-mode predictions (len(idx), |owned|)."""
    idx = np.asarray(idx)
    out = [forward(holder.params, data.inputs(idx[s:s + eval_batch])[:, :, holder.nodes], None,
                   plan=holder.plan)
           for s in range(0, len(idx), eval_batch)]
    return np.concatenate(out, axis=0)


def _abs_error(holder, data, part, cfg) -> tuple[float, int]:
    idx = data.indices(part)
    pred = predict(holder, data, idx, cfg.eval_batch).astype(np.float64)
    err = np.abs(pred - data.targets(idx)[:, holder.owned])
    if cfg.mask_zeros:
        keep = data.raw_targets(idx)[:, holder.owned] != 0
        return float(err[keep].sum()), int(keep.sum())
    return float(err.sum()), err.size


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _record_validation(holders, data, epoch, cfg, val_losses, per_holder: bool) -> None:
    stats = _map(lambda h: _abs_error(h, data, "val", cfg), holders, cfg.threads)
    if per_holder:
        for h, (s, n) in zip(holders, stats):
            val_losses.append((epoch, h.label, s / n if n else float("nan")))
    total, count = sum(s for s, _ in stats), sum(n for _, n in stats)
    val_losses.append((epoch, "global", total / count if count else float("nan")))


def _record_features(comm, epoch, setup, partition, data, n) -> None:
    per, _ = acc.feature_bytes_per_epoch(setup, partition, data.train_timesteps, n)
    for (src, dst), nbytes in per.items():
        if nbytes > 0:
            comm.record(epoch, src, dst, "node_feature", nbytes)


def _record_training(flops, epoch, holders, data, cfg) -> None:
    n_train = len(data.indices("train"))
    for h in holders:
        flops.record(epoch, h.label, "training",
                     acc.training_flops(cfg.model, len(h.nodes), n_train, cfg.local_epochs))


# -- evaluation ---------------------------------------------------------------

def _metric_report(holder, data, idx, cfg, scope, cols=None) -> MetricReport:
    pred = predict(holder, data, idx, cfg.eval_batch)
    owned = holder.owned
    if cols is not None:
        pred, owned = pred[:, cols], owned[cols]
    truth = data.raw_targets(idx)[:, owned]
    pred_raw = data.normalizer.invert(pred)
    mask = truth != 0 if cfg.mask_zeros else None
    return report(truth, pred_raw, scope=scope, horizon=cfg.horizon, mask=mask,
                  denominator=cfg.wmape_denominator)


def evaluate(holders: Sequence[Holder], data: WindowedDataset, cfg: RunConfig,
             partition: CloudletPartition | None = None, part: str = "test") -> list[MetricReport]:
    """Global report first, then one per cloudlet.

    A single global holder is scored on every node and, when a partition
    is given, on each cloudlet's owned nodes. Per-cloudlet holders are
    scored on their owned nodes and pooled into the global figure.
    """
    idx = data.indices(part)
    if len(idx) == 0:
        raise ValueError(f"{part} split is empty")
    if len(holders) == 1 and len(holders[0].owned) == data.n_nodes:
        h = holders[0]
        reports = [_metric_report(h, data, idx, cfg, "global")]
        if partition is not None:
            for c in range(partition.n_cloudlets):
                if partition.owned[c]:
                    reports.append(_metric_report(h, data, idx, cfg, f"cloudlet{c}", list(partition.owned[c])))
        return reports
    per = _map(lambda h: _metric_report(h, data, idx, cfg, f"cloudlet{h.label}"), holders, cfg.threads)
    glob = aggregate_weighted(per, [len(h.owned) for h in holders])
    return [glob] + per


# -- setups -------------------------------------------------------------------

def _finish(setup, cfg, val_losses, train_losses, holders, data, partition, comm, flops, checkpoints,
            param_count, t0) -> RunResult:
    metrics = evaluate(holders, data, cfg, partition)
    return RunResult(setup, cfg.horizon, cfg, val_losses, train_losses, metrics, comm, flops, checkpoints,
                     param_count, time.perf_counter() - t0)


def _check_data(data: WindowedDataset, cfg: RunConfig) -> None:
    if data.horizon_steps != cfg.horizon:
        raise ValueError(f"dataset horizon {data.horizon_steps} != config horizon {cfg.horizon}")


def run_centralized(data: WindowedDataset, graph: SensorGraph, cfg: RunConfig,
                    partition: CloudletPartition | None = None) -> RunResult:
    """One model on the full graph; sensors stream to the center."""
    _check_data(data, cfg)
    t0 = time.perf_counter()
    comm, flops = acc.CommLedger(), acc.FlopLedger()
    center = _centre_holder(graph, cfg)
    val_losses, train_losses = [], []
    for e in range(1, cfg.epochs + 1):
        train_losses.append((e, "center", train_local(center, data, e - 1, cfg)))
        _record_training(flops, e, [center], data, cfg)
        _record_features(comm, e, "centralized", None, data, graph.n)
        _record_validation([center], data, e, cfg, val_losses, per_holder=False)
    return _finish("centralized", cfg, val_losses, train_losses, [center], data, partition, comm, flops,
                   {"center": center.params.flatten()}, center.params.param_count, t0)


def run_traditional_fl(data: WindowedDataset, graph: SensorGraph, partition: CloudletPartition,
                       cfg: RunConfig) -> RunResult:
    """FedAvg with one local epoch per round, weighted by owned-sample counts."""
    _check_data(data, cfg)
    t0 = time.perf_counter()
    comm, flops = acc.CommLedger(), acc.FlopLedger()
    holders = _cloudlet_holders(graph, partition, cfg)
    server = _centre_holder(graph, cfg)
    server.label = "server"
    global_flat = server.params.flatten()
    P = server.params.param_count
    nbytes = param_bytes(P)
    n_train = len(data.indices("train"))
    weights = [len(h.owned) * n_train for h in holders]
    val_losses, train_losses = [], []
    for e in range(1, cfg.epochs + 1):
        def work(h, flat=global_flat):
            h.load(flat)
            return train_local(h, data, e - 1, cfg)
        losses = _map(work, holders, cfg.threads)
        for h, loss in zip(holders, losses):
            train_losses.append((e, h.label, loss))
            comm.record(e, h.label, "server", "model_up", nbytes)
        _record_training(flops, e, holders, data, cfg)
        global_flat = average_params([h.params.flatten() for h in holders], weights)
        flops.record(e, "server", "aggregation", acc.aggregation_event_flops(len(holders), P))
        for h in holders:
            comm.record(e, "server", h.label, "model_down", nbytes)
        _record_features(comm, e, "traditional_fl", partition, data, graph.n)
        server.load(global_flat)
        _record_validation([server], data, e, cfg, val_losses, per_holder=False)
    for h in holders:
        h.load(global_flat)
    return _finish("traditional_fl", cfg, val_losses, train_losses, [server], data, partition, comm, flops,
                   {"server": global_flat}, P, t0)


def _warn(msg: str) -> None:
    import warnings
    warnings.warn(msg, RuntimeWarning, stacklevel=3)


def run_serverfree_fl(data: WindowedDataset, graph: SensorGraph, partition: CloudletPartition,
                      cfg: RunConfig) -> RunResult:
    """Train, send to every in-range neighbour, average own with received."""
    _check_data(data, cfg)
    t0 = time.perf_counter()
    comm, flops = acc.CommLedger(), acc.FlopLedger()
    holders = _cloudlet_holders(graph, partition, cfg)
    by_label = {h.label: h for h in holders}
    neighbours = {h.label: [str(v) for v in partition.neighbours(int(h.label)) if str(v) in by_label]
                  for h in holders}
    if not any(neighbours.values()):
        _warn("no cloudlet is within range of another; server-free cloudlets train in isolation")
    P = holders[0].params.param_count
    nbytes = param_bytes(P)
    val_losses, train_losses = [], []
    for e in range(1, cfg.epochs + 1):
        losses = _map(lambda h: train_local(h, data, e - 1, cfg), holders, cfg.threads)
        trained = {h.label: h.params.flatten() for h in holders}
        inbox: dict[str, list[np.ndarray]] = {h.label: [] for h in holders}
        for h, loss in zip(holders, losses):
            train_losses.append((e, h.label, loss))
            for nb in neighbours[h.label]:
                comm.record(e, h.label, nb, "model_up", nbytes)
                inbox[nb].append(trained[h.label])
        _record_training(flops, e, holders, data, cfg)
        for h in holders:
            group = [trained[h.label]] + inbox[h.label]
            h.load(average_params(group))
            flops.record(e, h.label, "aggregation", acc.aggregation_event_flops(len(group), P))
        _record_features(comm, e, "serverfree_fl", partition, data, graph.n)
        _record_validation(holders, data, e, cfg, val_losses, per_holder=True)
    return _finish("serverfree_fl", cfg, val_losses, train_losses, holders, data, partition, comm, flops,
                   {h.label: h.params.flatten() for h in holders}, P, t0)


def gossip_peer(cfg: RunConfig, sender: Holder, labels: Sequence[str], epoch: int) -> str:
    """Uniformly random other cloudlet, reproducible per (gossip seed, sender, epoch)."""
    others = [lab for lab in labels if lab != sender.label]
    return others[int(_rng(cfg.gossip_seed, sender.seed_id, epoch).integers(len(others)))]


def run_gossip(data: WindowedDataset, graph: SensorGraph, partition: CloudletPartition,
               cfg: RunConfig) -> RunResult:
    """Merge the buffer when a model arrived, train, push to a random peer."""
    _check_data(data, cfg)
    t0 = time.perf_counter()
    comm, flops = acc.CommLedger(), acc.FlopLedger()
    holders = _cloudlet_holders(graph, partition, cfg)
    if len(holders) < 2:
        raise ValueError("gossip needs at least two cloudlets that own sensors")
    labels = [h.label for h in holders]
    buffers = {lab: GossipBuffer() for lab in labels}
    P = holders[0].params.param_count
    nbytes = param_bytes(P)
    val_losses, train_losses = [], []
    for e in range(1, cfg.epochs + 1):
        for h in holders:
            merged = buffers[h.label].take()
            if merged is not None:
                h.load(merged)
                flops.record(e, h.label, "aggregation",
                             acc.aggregation_event_flops(len(buffers[h.label]), P))
        losses = _map(lambda h: train_local(h, data, e - 1, cfg), holders, cfg.threads)
        deliveries = []
        for h, loss in zip(holders, losses):
            train_losses.append((e, h.label, loss))
            peer = gossip_peer(cfg, h, labels, e - 1)
            comm.record(e, h.label, peer, "model_up", nbytes)
            deliveries.append((peer, h.params.flatten()))
        for peer, flat in deliveries:
            buffers[peer].push(flat)
        _record_training(flops, e, holders, data, cfg)
        _record_features(comm, e, "gossip", partition, data, graph.n)
        _record_validation(holders, data, e, cfg, val_losses, per_holder=True)
    return _finish("gossip", cfg, val_losses, train_losses, holders, data, partition, comm, flops,
                   {h.label: h.params.flatten() for h in holders}, P, t0)


def run_setup(data: WindowedDataset, graph: SensorGraph, partition: CloudletPartition | None,
              cfg: RunConfig) -> RunResult:
    if cfg.setup == "centralized":
        return run_centralized(data, graph, cfg, partition)
    if partition is None:
        raise ValueError(f"{cfg.setup} needs a partition")
    runner = {"traditional_fl": run_traditional_fl, "serverfree_fl": run_serverfree_fl,
              "gossip": run_gossip}[cfg.setup]
    return runner(data, graph, partition, cfg)


# -- serialization ------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_val_loss_csv(path: str | Path, results: Sequence[RunResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["horizon", "epoch", "holder", "loss"])
        for r in results:
            for epoch, holder, loss in r.val_losses:
                w.writerow([r.horizon, epoch, holder, _fmt(loss)])


METRIC_COLUMNS = ("setup", "horizon", "scope", "MAE", "RMSE", "WMAPE")


def write_metrics_csv(path: str | Path, results: Sequence[RunResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in results:
            for m in r.metrics:
                w.writerow([r.setup, r.horizon, m.scope, _fmt(m.mae), _fmt(m.rmse), _fmt(m.wmape)])


def write_ledger_csv(path: str | Path, results: Sequence[RunResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["horizon", "epoch", "src", "dst", "category", "bytes", "flops"])
        for r in results:
            for e in r.comm.entries:
                w.writerow([r.horizon, e.epoch, e.src, e.dst, e.category, e.bytes, 0])
            for e in r.flops.entries:
                w.writerow([r.horizon, e.epoch, e.holder, "", e.category, 0, e.flops])


def result_document(results: Sequence[RunResult], resolved_config: dict) -> dict:
    """JSON-ready summary; ``created`` is the only field that varies between
    identical reruns."""
    runs = []
    for r in results:
        row = acc.overhead_row(r.setup, r.comm, r.flops, r.config.epochs)
        runs.append({
            "setup": r.setup,
            "horizon": r.horizon,
            "param_count": r.param_count,
            "param_bytes": param_bytes(r.param_count),
            "val_losses": [[e, h, loss] for e, h, loss in r.val_losses],
            "train_losses": [[e, h, loss] for e, h, loss in r.train_losses],
            "metrics": [asdict(m) for m in r.metrics],
            "overheads": asdict(row),
            "comm_totals": {c: r.comm.total(c) for c in acc.COMM_CATEGORIES},
            "flop_totals": {c: r.flops.total(c) for c in acc.FLOP_CATEGORIES},
        })
    return {"config": resolved_config, "runs": runs,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")}


def write_result_json(path: str | Path, results: Sequence[RunResult], resolved_config: dict) -> None:
    Path(path).write_text(json.dumps(result_document(results, resolved_config), indent=2, sort_keys=True) + "\n")
