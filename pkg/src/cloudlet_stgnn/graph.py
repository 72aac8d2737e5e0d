"""Spatial graph construction: distances, Gaussian-kernel adjacency, scaled
Laplacian and the Chebyshev polynomial basis used by the spatial filters."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0


class GraphInputError(ValueError):
    pass


@dataclass(frozen=True)
class SensorGraph:
    """Sensors with coordinates, pairwise distances (km) and edge weights.

    ``coords`` holds (lat, lon) degrees when ``planar`` is False, otherwise
    (x_km, y_km).
    """

    sensor_ids: tuple[str, ...]
    coords: np.ndarray
    dist: np.ndarray
    W: np.ndarray
    planar: bool = False

    @property
    def n(self) -> int:
        return len(self.sensor_ids)

    def check(self) -> None:
        check_distance_matrix(self.dist)
        check_adjacency(self.W)


@dataclass(frozen=True)
class ScaledLaplacian:
    L_tilde: np.ndarray
    lambda_max: float
    degrees: np.ndarray = field(repr=False)


def haversine_km(a: Sequence[float], b: Sequence[float]) -> float:
    """Great-circle distance between two (lat, lon) points in degrees."""
    for lat, lon in (a, b):
        if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
            raise GraphInputError(f"coordinate out of range: ({lat}, {lon})")
    if tuple(a) == tuple(b):
        return 0.0
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def pairwise_haversine(coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise GraphInputError("coords must be an (n, 2) array")
    lat, lon = coords[:, 0], coords[:, 1]
    if np.any(np.abs(lat) > 90) or np.any(np.abs(lon) > 180):
        raise GraphInputError("coordinate out of range")
    phi = np.radians(lat)
    lam = np.radians(lon)
    dphi = phi[:, None] - phi[None, :]
    dlam = lam[:, None] - lam[None, :]
    h = np.sin(dphi / 2) ** 2 + np.cos(phi)[:, None] * np.cos(phi)[None, :] * np.sin(dlam / 2) ** 2
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def pairwise_euclidean(coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    diff = coords[:, None, :] - coords[None, :, :]
    d = np.sqrt((diff ** 2).sum(-1))
    np.fill_diagonal(d, 0.0)
    return d


def check_distance_matrix(dist: np.ndarray) -> None:
    dist = np.asarray(dist)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise GraphInputError(f"distance matrix must be square, got {dist.shape}")
    if np.any(np.isnan(dist)):
        raise GraphInputError("distance matrix contains NaN")
    if not np.array_equal(dist, dist.T):
        raise GraphInputError("distance matrix is not symmetric")
    if np.any(np.diag(dist) != 0):
        raise GraphInputError("distance matrix has a nonzero diagonal")
    if np.any(dist < 0):
        raise GraphInputError("distance matrix has negative entries")


def check_adjacency(W: np.ndarray) -> None:
    if not np.array_equal(W, W.T):
        raise GraphInputError("adjacency is not symmetric")
    if np.any(np.diag(W) != 0):
        raise GraphInputError("adjacency has self loops")
    if np.any(W < 0) or np.any(W > 1):
        raise GraphInputError("adjacency weights outside [0, 1]")


def default_sigma2(dist: np.ndarray) -> float:
    """Variance of all finite off-diagonal distances."""
    n = dist.shape[0]
    off = dist[~np.eye(n, dtype=bool)]
    off = off[np.isfinite(off)]
    if off.size == 0:
        return 1.0
    var = float(off.var())
    return var if var > 0 else 1.0


def build_adjacency(dist: np.ndarray, sigma2: float | None = None, epsilon: float = 0.1) -> np.ndarray:
    """Thresholded Gaussian kernel ``exp(-d^2 / sigma2)``; weights below
    ``epsilon`` and the diagonal are zeroed. Infinite distances give 0."""
    dist = np.asarray(dist, dtype=np.float64)
    check_distance_matrix(dist)
    if sigma2 is None:
        sigma2 = default_sigma2(dist)
    if not sigma2 > 0:
        raise GraphInputError("sigma2 must be positive")
    if not 0.0 <= epsilon < 1.0:
        raise GraphInputError("epsilon must lie in [0, 1)")
    with np.errstate(over="ignore"):
        W = np.exp(-(dist ** 2) / sigma2)
    W[W < epsilon] = 0.0
    np.fill_diagonal(W, 0.0)
    return W


def _power_iteration(L: np.ndarray, max_iter: int = 200, tol: float = 1e-9, block: int = 4) -> float:
    """Largest eigenvalue of a normalized Laplacian, biased upward.

    Simultaneous power iteration on a small block with a Rayleigh-Ritz step,
    so one unlucky start vector nearly orthogonal to the top eigenvector does
    not stall convergence. The Ritz value never exceeds the true eigenvalue,
    so the final residual norm is added as an a-posteriori margin; 2 is the
    hard ceiling for this Laplacian.
    """
    n = L.shape[0]
    Q = np.random.default_rng(0).standard_normal((n, min(block, n)))
    Q, _ = np.linalg.qr(Q)
    lam, top = 0.0, Q[:, 0]
    for _ in range(max_iter):
        Z = L @ Q
        if not np.any(Z):
            return 0.0
        Q, _ = np.linalg.qr(Z)
        ritz, vecs = np.linalg.eigh(Q.T @ L @ Q)
        new, top = float(ritz[-1]), Q @ vecs[:, -1]
        done = lam != 0.0 and abs(new - lam) <= tol * abs(new)
        lam = new
        if done:
            break
    residual = float(np.linalg.norm(L @ top - lam * top))
    return min(lam + residual, 2.0)


def normalized_laplacian(W: np.ndarray, degrees: np.ndarray | None = None) -> np.ndarray:
    """``I - D^-1/2 W D^-1/2``; ``degrees`` may come from a larger graph.
    Isolated nodes get an identity row."""
    if degrees is None:
        degrees = W.sum(axis=1)
    inv_sqrt = np.zeros_like(degrees, dtype=np.float64)
    pos = degrees > 0
    inv_sqrt[pos] = 1.0 / np.sqrt(degrees[pos])
    return np.eye(W.shape[0]) - inv_sqrt[:, None] * W * inv_sqrt[None, :]


def scaled_laplacian(W: np.ndarray, lambda_max: float | None = None,
                     degrees: np.ndarray | None = None) -> ScaledLaplacian:
    """``(2 / lambda_max) L - I`` with L the symmetric normalized Laplacian.

    Passing ``lambda_max`` and ``degrees`` from the full graph makes the
    operator on a subgraph the exact principal submatrix of the full one.
    """
    W = np.asarray(W, dtype=np.float64)
    check_adjacency(W)
    if degrees is None:
        degrees = W.sum(axis=1)
    L = normalized_laplacian(W, degrees)
    if lambda_max is None:
        lambda_max = _power_iteration(L)
    if lambda_max <= 0:
        lambda_max = 1.0
    L_tilde = (2.0 / lambda_max) * L - np.eye(W.shape[0])
    L_tilde = 0.5 * (L_tilde + L_tilde.T)
    return ScaledLaplacian(L_tilde=L_tilde, lambda_max=float(lambda_max), degrees=np.asarray(degrees))


def cheb_basis(L_tilde: np.ndarray, K: int) -> list[np.ndarray]:
    if K < 1:
        raise GraphInputError("Chebyshev order count K must be >= 1")
    n = L_tilde.shape[0]
    basis = [np.eye(n)]
    if K > 1:
        basis.append(np.array(L_tilde, dtype=np.float64, copy=True))
    for _ in range(2, K):
        basis.append(2.0 * L_tilde @ basis[-1] - basis[-2])
    return basis


def build_graph(sensor_ids: Sequence[str], coords: np.ndarray, *, planar: bool = False,
                dist: np.ndarray | None = None, sigma2: float | None = None,
                epsilon: float = 0.1) -> SensorGraph:
    coords = np.asarray(coords, dtype=np.float64)
    if dist is None:
        dist = pairwise_euclidean(coords) if planar else pairwise_haversine(coords)
    W = build_adjacency(dist, sigma2, epsilon)
    return SensorGraph(tuple(str(s) for s in sensor_ids), coords, dist, W, planar)


# -- CSV ----------------------------------------------------------------------

def load_sensors(path: str | Path) -> tuple[list[str], np.ndarray, bool]:
    """Read ``sensor_id,lat,lon`` (or ``sensor_id,x_km,y_km``)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise GraphInputError(f"{path}: empty sensor file")
    header = [h.strip() for h in rows[0]]
    if header == ["sensor_id", "lat", "lon"]:
        planar = False
    elif header == ["sensor_id", "x_km", "y_km"]:
        planar = True
    else:
        raise GraphInputError(f"{path}: unexpected header {header}")
    ids, coords = [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise GraphInputError(f"{path}:{i}: expected 3 columns, got {len(row)}")
        try:
            coords.append((float(row[1]), float(row[2])))
        except ValueError as exc:
            raise GraphInputError(f"{path}:{i}: {exc}") from None
        ids.append(row[0].strip())
    arr = np.array(coords, dtype=np.float64).reshape(-1, 2)
    if not planar and (np.any(np.abs(arr[:, 0]) > 90) or np.any(np.abs(arr[:, 1]) > 180)):
        raise GraphInputError(f"{path}: coordinate out of range")
    return ids, arr, planar


def save_sensors(path: str | Path, sensor_ids: Sequence[str], coords: np.ndarray,
                 planar: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sensor_id", "x_km", "y_km"] if planar else ["sensor_id", "lat", "lon"])
        for sid, (a, b) in zip(sensor_ids, coords):
            w.writerow([sid, repr(float(a)), repr(float(b))])


def load_distances(path: str | Path, sensor_ids: Sequence[str]) -> np.ndarray:
    """Edge list ``from_id,to_id,dist_km``; absent pairs are infinitely far.
    Asymmetric entries are symmetrized by taking the shorter leg."""
    index = {s: i for i, s in enumerate(sensor_ids)}
    n = len(sensor_ids)
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0.0)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["from_id", "to_id", "dist_km"]:
            raise GraphInputError(f"{path}: expected header from_id,to_id,dist_km")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise GraphInputError(f"{path}:{lineno}: expected 3 columns")
            a, b = row[0].strip(), row[1].strip()
            if a not in index or b not in index:
                raise GraphInputError(f"{path}:{lineno}: unknown sensor id")
            try:
                d = float(row[2])
            except ValueError:
                raise GraphInputError(f"{path}:{lineno}: non-numeric distance {row[2]!r}") from None
            if d < 0:
                raise GraphInputError(f"{path}:{lineno}: negative distance")
            i, j = index[a], index[b]
            if i != j:
                dist[i, j] = min(dist[i, j], d)
    dist = np.minimum(dist, dist.T)
    return dist
