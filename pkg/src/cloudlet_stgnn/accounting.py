"""Communication and compute bookkeeping.

Ledgers record what a simulated run actually sent and computed; the
closed-form functions predict the same totals from the topology alone so
the two can be checked against each other.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterable, Sequence

from .model import ModelConfig
from .partition import CloudletPartition

BYTES_PER_VALUE = 4
MB = 1e6
COMM_CATEGORIES = ("model_up", "model_down", "node_feature")
FLOP_CATEGORIES = ("training", "aggregation")
SETUPS = ("centralized", "traditional_fl", "serverfree_fl", "gossip")
# categories that count toward the per-epoch model-transfer figure; broadcasts
# from the FL server are ledgered as model_down and reported apart
SEND_CATEGORIES = ("model_up",)


def _check_setup(setup: str) -> None:
    if setup not in SETUPS:
        raise ValueError(f"unknown setup {setup!r}; expected one of {SETUPS}")


@dataclass(frozen=True)
class CommEntry:
    epoch: int
    src: str
    dst: str
    category: str
    bytes: int


@dataclass(frozen=True)
class FlopEntry:
    epoch: int
    holder: str
    category: str
    flops: int


class _Ledger:
    def __init__(self):
        self._lock = threading.Lock()
        self._entries: list = []

    def _append(self, entry) -> None:
        with self._lock:
            self._entries.append(entry)

    @property
    def entries(self) -> tuple:
        with self._lock:
            return tuple(self._entries)

    def __len__(self) -> int:
        return len(self.entries)


class CommLedger(_Ledger):
    def record(self, epoch: int, src, dst, category: str, nbytes: int) -> CommEntry:
        if category not in COMM_CATEGORIES:
            raise ValueError(f"unknown communication category {category!r}")
        if nbytes <= 0:
            raise ValueError("ledger entries must carry a positive byte count")
        entry = CommEntry(int(epoch), str(src), str(dst), category, int(nbytes))
        self._append(entry)
        return entry

    def total(self, category: str | Iterable[str] | None = None, epoch: int | None = None) -> int:
        cats = {category} if isinstance(category, str) else (set(category) if category else None)
        return sum(e.bytes for e in self.entries
                   if (cats is None or e.category in cats) and (epoch is None or e.epoch == epoch))


class FlopLedger(_Ledger):
    def record(self, epoch: int, holder, category: str, flops: int) -> FlopEntry:
        if category not in FLOP_CATEGORIES:
            raise ValueError(f"unknown flop category {category!r}")
        if flops < 0:
            raise ValueError("flop counts cannot be negative")
        entry = FlopEntry(int(epoch), str(holder), category, int(flops))
        self._append(entry)
        return entry

    def total(self, category: str | None = None, epoch: int | None = None) -> int:
        return sum(e.flops for e in self.entries
                   if (category is None or e.category == category) and (epoch is None or e.epoch == epoch))


# -- closed forms -------------------------------------------------------------

def feature_bytes_per_epoch(setup: str, partition: CloudletPartition | None,
                            train_timesteps: int, n_nodes: int | None = None) -> tuple[dict, int]:
    """Node-feature traffic for one epoch: ({(src, dst): bytes}, total).

    Centralized: every sensor streams its training rows to the center once.
    Distributed: every exchange-plan entry ships its nodes' streams.
    """
    _check_setup(setup)
    if setup == "centralized":
        n = n_nodes if n_nodes is not None else partition.n_nodes
        total = n * train_timesteps * BYTES_PER_VALUE
        return {("sensors", "center"): total}, total
    if partition is None:
        raise ValueError("distributed setups need a partition")
    per = {}
    for e in partition.plan:
        per[(str(e.src), str(e.dst))] = len(e.node_ids) * train_timesteps * BYTES_PER_VALUE
    return per, sum(per.values())


def active_cloudlets(partition: CloudletPartition) -> list[int]:
    """Cloudlets that own at least one sensor; the others never train."""
    return [c for c in range(partition.n_cloudlets) if partition.owned[c]]


def active_degrees(partition: CloudletPartition) -> dict[int, int]:
    active = set(active_cloudlets(partition))
    return {c: sum(1 for v in partition.neighbours(c) if v in active) for c in sorted(active)}


def model_bytes_per_epoch(setup: str, n_cloudlets: int, param_bytes: int,
                          degrees: Sequence[int] | None = None) -> int:
    """Model sends per epoch (uploads to a server or peer-to-peer pushes)."""
    _check_setup(setup)
    if setup == "centralized":
        return 0
    if setup in ("traditional_fl", "gossip"):
        return n_cloudlets * param_bytes
    if degrees is None:
        raise ValueError("server-free accounting needs cloudlet degrees")
    if len(degrees) != n_cloudlets:
        raise ValueError("one degree per cloudlet required")
    return sum(degrees) * param_bytes


def model_down_bytes_per_epoch(setup: str, n_cloudlets: int, param_bytes: int) -> int:
    _check_setup(setup)
    return n_cloudlets * param_bytes if setup == "traditional_fl" else 0


def serverfree_upper_bound(n_cloudlets: int, param_bytes: int) -> int:
    return n_cloudlets * (n_cloudlets - 1) * param_bytes


def forward_macs(config: ModelConfig, n_nodes: int) -> int:
    """Multiply-adds of one forward pass for one sample on ``n_nodes`` nodes,
    with the graph product costed as dense (K-1) n x n matrix products."""
    n = n_nodes
    kt, K = config.temporal_kernel, config.cheb_K
    c_t, c_s, c_o = config.channels
    c_in = config.in_channels
    t = config.input_window
    macs = 0
    for _ in range(config.st_blocks):
        t -= kt - 1
        macs += t * n * kt * c_in * 2 * c_t
        macs += t * n * K * c_t * c_s + t * (K - 1) * n * n * c_s
        t -= kt - 1
        macs += t * n * kt * c_s * c_o
        c_in = c_o
    macs += n * t * c_in * config.head_channels + n * config.head_channels
    return macs


def training_flops(config: ModelConfig, n_nodes: int, n_samples: int, local_epochs: int = 1) -> int:
    """Two flops per multiply-add; backward costs twice the forward."""
    return 2 * 3 * forward_macs(config, n_nodes) * n_samples * local_epochs


def training_flops_per_epoch(config: ModelConfig, n_train_samples: int, node_counts: Sequence[int],
                             local_epochs: int = 1) -> int:
    """Summed over holders; ``node_counts`` lists |owned ∪ halo| per cloudlet,
    or just [n] for a centralized run."""
    return sum(training_flops(config, m, n_train_samples, local_epochs) for m in node_counts)


def aggregation_event_flops(m: int, param_count: int) -> int:
    """Weighted average of m vectors of length P."""
    return 2 * m * param_count


def aggregation_flops(setup: str, n_cloudlets: int, param_count: int,
                      degrees: Sequence[int] | None = None,
                      buffer_sizes: Sequence[int] | None = None) -> int:
    _check_setup(setup)
    if setup == "centralized":
        return 0
    if setup == "traditional_fl":
        return aggregation_event_flops(n_cloudlets, param_count)
    if setup == "serverfree_fl":
        if degrees is None:
            raise ValueError("server-free accounting needs cloudlet degrees")
        return sum(aggregation_event_flops(d + 1, param_count) for d in degrees)
    if buffer_sizes is None:
        raise ValueError("gossip accounting needs the buffer sizes at aggregation time")
    return sum(aggregation_event_flops(m, param_count) for m in buffer_sizes)


# -- summaries ----------------------------------------------------------------

@dataclass(frozen=True)
class OverheadRow:
    setup: str
    model_mb_per_epoch: float
    model_down_mb_per_epoch: float
    training_flops_per_epoch: float
    aggregation_flops_per_epoch: float
    feature_mb_per_epoch: float


def overhead_row(setup: str, comm: CommLedger, flops: FlopLedger, epochs: int) -> OverheadRow:
    """Per-epoch averages of a run's ledgers."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    return OverheadRow(
        setup,
        comm.total(SEND_CATEGORIES) / MB / epochs,
        comm.total("model_down") / MB / epochs,
        flops.total("training") / epochs,
        flops.total("aggregation") / epochs,
        comm.total("node_feature") / MB / epochs,
    )


OVERHEAD_COLUMNS = ("setup", "model_mb_per_epoch", "model_down_mb_per_epoch", "training_flops_per_epoch",
                    "aggregation_flops_per_epoch", "feature_mb_per_epoch")
