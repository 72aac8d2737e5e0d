"""Cloudlet placement, sensor ownership, receptive-field halos and the
inter-cloudlet node-feature exchange plan."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import SensorGraph, cheb_basis, pairwise_euclidean, pairwise_haversine, scaled_laplacian
from .model import ModelConfig


class UncoveredSensorError(ValueError):
    def __init__(self, sensor_ids: Sequence[str], comm_range_km: float):
        self.sensor_ids = list(sensor_ids)
        super().__init__(
            f"uncovered sensor(s) beyond {comm_range_km} km of every cloudlet: "
            + ", ".join(self.sensor_ids))


@dataclass(frozen=True)
class ExchangeEntry:
    src: int
    dst: int
    node_ids: tuple[int, ...]

    @property
    def floats_per_timestep(self) -> int:
        return len(self.node_ids)


@dataclass(frozen=True)
class CloudletPartition:
    cloudlet_coords: np.ndarray
    comm_range_km: float
    owner: np.ndarray  # sensor index -> cloudlet index
    owned: tuple[tuple[int, ...], ...]
    halo: tuple[tuple[int, ...], ...]
    plan: tuple[ExchangeEntry, ...]
    cloudlet_adjacency: tuple[tuple[int, int], ...]
    hops: int

    @property
    def n_cloudlets(self) -> int:
        return len(self.owned)

    @property
    def n_nodes(self) -> int:
        return len(self.owner)

    def local_nodes(self, c: int) -> tuple[int, ...]:
        """Owned then halo nodes, each sorted; the subgraph node order."""
        return self.owned[c] + self.halo[c]

    def neighbours(self, c: int) -> list[int]:
        out = [b for a, b in self.cloudlet_adjacency if a == c]
        out += [a for a, b in self.cloudlet_adjacency if b == c]
        return sorted(out)

    def degrees(self) -> list[int]:
        return [len(self.neighbours(c)) for c in range(self.n_cloudlets)]

    @property
    def duplication_factor(self) -> float:
        return sum(len(self.local_nodes(c)) for c in range(self.n_cloudlets)) / self.n_nodes


def _distances(a: np.ndarray, b: np.ndarray, planar: bool) -> np.ndarray:
    both = np.vstack([a, b])
    d = pairwise_euclidean(both) if planar else pairwise_haversine(both)
    return d[: len(a), len(a):]


def assign_sensors(sensor_coords: np.ndarray, cloudlet_coords: np.ndarray, comm_range_km: float,
                   sensor_ids: Sequence[str] | None = None, planar: bool = False,
                   tie_tol: float = 1e-9) -> np.ndarray:
    """Nearest in-range cloudlet per sensor; near-ties go to the lower index."""
    cloudlet_coords = np.atleast_2d(np.asarray(cloudlet_coords, dtype=np.float64))
    if len(cloudlet_coords) == 0:
        raise ValueError("at least one cloudlet is required")
    if not comm_range_km > 0:
        raise ValueError("comm_range_km must be positive")
    d = _distances(np.asarray(sensor_coords, dtype=np.float64), cloudlet_coords, planar)
    owner = np.empty(len(d), dtype=np.int64)
    uncovered = []
    for i, row in enumerate(d):
        best = row.min()
        if best > comm_range_km:
            uncovered.append(sensor_ids[i] if sensor_ids is not None else str(i))
            continue
        owner[i] = int(np.flatnonzero(row <= best + tie_tol)[0])
    if uncovered:
        raise UncoveredSensorError(uncovered, comm_range_km)
    return owner


def cloudlet_links(cloudlet_coords: np.ndarray, comm_range_km: float,
                   planar: bool = False) -> tuple[tuple[int, int], ...]:
    coords = np.atleast_2d(np.asarray(cloudlet_coords, dtype=np.float64))
    d = pairwise_euclidean(coords) if planar else pairwise_haversine(coords)
    m = len(coords)
    return tuple((a, b) for a in range(m) for b in range(a + 1, m) if d[a, b] <= comm_range_km)


def receptive_hops(config: ModelConfig) -> int:
    """Graph reach of the network: each block's order-(K-1) filter adds K-1 hops."""
    if config.hops_override is not None:
        return int(config.hops_override)
    return config.st_blocks * (config.cheb_K - 1)


def _bfs_reach(adj: list[np.ndarray], start: Sequence[int], hops: int) -> set[int]:
    seen = set(start)
    frontier = list(start)
    for _ in range(hops):
        nxt = []
        for u in frontier:
            for v in adj[u]:
                v = int(v)
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
        if not frontier:
            break
    return seen


def compute_halos(owner: np.ndarray, W: np.ndarray, hops: int, n_cloudlets: int | None = None):
    """Halo node sets per cloudlet and the exchange plan (src, dst, nodes)."""
    owner = np.asarray(owner)
    n_cl = int(owner.max()) + 1 if owner.size else 0
    if n_cloudlets is not None:
        n_cl = max(n_cl, n_cloudlets)
    adj = [np.flatnonzero(row) for row in (np.asarray(W) != 0)]
    owned = [tuple(int(i) for i in np.flatnonzero(owner == c)) for c in range(n_cl)]
    halos = []
    for c in range(n_cl):
        reach = _bfs_reach(adj, owned[c], hops) if hops > 0 else set(owned[c])
        halos.append(tuple(sorted(reach - set(owned[c]))))
    plan = []
    for dst in range(n_cl):
        by_src: dict[int, list[int]] = {}
        for v in halos[dst]:
            by_src.setdefault(int(owner[v]), []).append(v)
        for src, nodes in by_src.items():
            plan.append(ExchangeEntry(src, dst, tuple(sorted(nodes))))
    plan.sort(key=lambda e: (e.src, e.dst, e.node_ids))
    return tuple(owned), tuple(halos), tuple(plan)


def build_partition(graph: SensorGraph, cloudlet_coords: np.ndarray, comm_range_km: float,
                    hops: int) -> CloudletPartition:
    cloudlet_coords = np.atleast_2d(np.asarray(cloudlet_coords, dtype=np.float64))
    owner = assign_sensors(graph.coords, cloudlet_coords, comm_range_km, graph.sensor_ids, graph.planar)
    # a cloudlet that owns no sensor keeps its index and never trains
    owned, halo, plan = compute_halos(owner, graph.W, hops, len(cloudlet_coords))
    links = cloudlet_links(cloudlet_coords, comm_range_km, graph.planar)
    return CloudletPartition(cloudlet_coords, float(comm_range_km), owner, owned, halo, plan, links, hops)


def suggest_cloudlets(coords: np.ndarray, k: int, comm_range_km: float | None = None,
                      seed: int = 0, restarts: int = 50, planar: bool = False) -> np.ndarray:
    """Advisory k-means placement. Among restarts, keeps the layout with the
    smallest worst-case sensor-to-nearest-cloudlet distance."""
    coords = np.asarray(coords, dtype=np.float64)
    rng = np.random.default_rng(seed)
    best, best_radius = None, np.inf
    for _ in range(restarts):
        centers = coords[rng.choice(len(coords), size=k, replace=False)].copy()
        for _ in range(100):
            d = ((coords[:, None, :] - centers[None]) ** 2).sum(-1)
            lab = d.argmin(1)
            new = np.array([coords[lab == j].mean(0) if np.any(lab == j) else centers[j] for j in range(k)])
            if np.allclose(new, centers):
                break
            centers = new
        radius = _distances(coords, centers, planar).min(axis=1).max()
        if radius < best_radius:
            best, best_radius = centers, radius
    if comm_range_km is not None and best_radius > comm_range_km:
        best = _minimax_refine(coords, best, comm_range_km, planar)
    return best


def _minimax_refine(coords, centers, comm_range_km, planar, iters=500):
    """Nudge the nearest cloudlet toward the worst-covered sensor."""
    centers = centers.copy()
    for _ in range(iters):
        d = _distances(coords, centers, planar)
        worst = int(d.min(axis=1).argmax())
        if d[worst].min() <= comm_range_km:
            break
        j = int(d[worst].argmin())
        centers[j] += 0.1 * (coords[worst] - centers[j])
    return centers


@dataclass(frozen=True)
class Subgraph:
    nodes: tuple[int, ...]
    W: np.ndarray
    basis: np.ndarray  # (K, m, m)
    n_owned: int

    @property
    def index_map(self) -> dict[int, int]:
        return {g: i for i, g in enumerate(self.nodes)}


def extract_subgraph(graph: SensorGraph, nodes: Sequence[int], K: int, *, lambda_max: float | None = None,
                     degrees: np.ndarray | None = None, n_owned: int | None = None) -> Subgraph:
    """Principal submatrix of W on ``nodes`` with a Chebyshev basis built from
    full-graph degrees and ``lambda_max`` so that owned-node outputs match a
    full-graph forward."""
    nodes = tuple(int(v) for v in nodes)
    if not nodes:
        raise ValueError("cannot extract an empty subgraph")
    idx = np.asarray(nodes)
    if degrees is None:
        degrees = graph.W.sum(axis=1)
    if lambda_max is None:
        lambda_max = scaled_laplacian(graph.W).lambda_max
    W_sub = graph.W[np.ix_(idx, idx)]
    lap = scaled_laplacian(W_sub, lambda_max=lambda_max, degrees=np.asarray(degrees)[idx])
    basis = np.stack(cheb_basis(lap.L_tilde, K))
    return Subgraph(nodes, W_sub, basis, len(nodes) if n_owned is None else n_owned)


def cloudlet_subgraphs(graph: SensorGraph, partition: CloudletPartition, K: int) -> list[Subgraph | None]:
    full = scaled_laplacian(graph.W)
    out = []
    for c in range(partition.n_cloudlets):
        if not partition.owned[c]:
            out.append(None)
            continue
        out.append(extract_subgraph(graph, partition.local_nodes(c), K, lambda_max=full.lambda_max,
                                    degrees=full.degrees, n_owned=len(partition.owned[c])))
    return out


# -- CSV ----------------------------------------------------------------------

def save_partition(directory: str | Path, graph: SensorGraph, partition: CloudletPartition) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "partition.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sensor_id", "cloudlet_id"])
        for sid, c in zip(graph.sensor_ids, partition.owner):
            w.writerow([sid, int(c)])
    with open(directory / "plan.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "node_id"])
        for e in partition.plan:
            for v in e.node_ids:
                w.writerow([e.src, e.dst, graph.sensor_ids[v]])
    with open(directory / "cloudlets.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cloudlet_id", "x_km" if graph.planar else "lat", "y_km" if graph.planar else "lon"])
        for c, (a, b) in enumerate(partition.cloudlet_coords):
            w.writerow([c, repr(float(a)), repr(float(b))])
