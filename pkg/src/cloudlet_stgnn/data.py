"""Speed series ingestion, z-score normalization, sliding windows and the
synthetic desk-scale traffic generator."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import SensorGraph, build_graph

INPUT_WINDOW = 12
SPLIT_RATIOS = (0.70, 0.15, 0.15)
DAY_STEPS = 288


class SeriesParseError(ValueError):
    pass


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class SpeedSeries:
    values: np.ndarray  # (T, n) miles/hour
    sensor_ids: tuple[str, ...]
    interval_minutes: int = 5

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


def load_series(path: str | Path, interval_minutes: int = 5) -> SpeedSeries:
    """Parse a speed CSV: header row of sensor ids, then one row per step."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise SeriesParseError(f"{path}: empty file")
    ids = [h.strip() for h in rows[0]]
    width = len(ids)
    values = np.empty((len(rows) - 1, width), dtype=np.float64)
    for r, row in enumerate(rows[1:]):
        if len(row) != width:
            raise SeriesParseError(f"{path}: row {r + 2} has {len(row)} cells, expected {width}")
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise SeriesParseError(f"{path}: row {r + 2}, column {c + 1}: non-numeric {cell!r}") from None
            if not math.isfinite(v):
                raise SeriesParseError(f"{path}: row {r + 2}, column {c + 1}: non-finite {cell!r}")
            if v < 0:
                raise SeriesParseError(f"{path}: row {r + 2}, column {c + 1}: negative speed")
            values[r, c] = v
    return SpeedSeries(values, tuple(ids), interval_minutes)


def save_series(path: str | Path, series: SpeedSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(series.sensor_ids)
        for row in series.values:
            w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class Normalizer:
    mean: float
    std: float

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def fit_normalizer(train_values: np.ndarray) -> Normalizer:
    """Population mean and std over a training slice."""
    arr = np.asarray(train_values, dtype=np.float64)
    if arr.size == 0:
        raise DatasetError("cannot fit a normalizer on an empty slice")
    std = float(arr.std())
    if not std > 0:
        raise DatasetError("training slice is constant (std = 0)")
    return Normalizer(float(arr.mean()), std)


@dataclass(frozen=True)
class Split:
    train: range
    val: range
    test: range


def split_samples(n_samples: int, ratios: Sequence[float] = SPLIT_RATIOS) -> Split:
    n_train = int(round(n_samples * ratios[0]))
    n_val = int(round(n_samples * ratios[1]))
    n_test = n_samples - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise DatasetError(f"{n_samples} samples are too few for a 3-way split")
    return Split(range(0, n_train), range(n_train, n_train + n_val),
                 range(n_train + n_val, n_samples))


def count_samples(T: int, horizon_steps: int, window: int = INPUT_WINDOW) -> int:
    """Windows available before splitting: ``T - window - horizon_steps + 1``."""
    if horizon_steps < 1:
        raise DatasetError("horizon_steps must be >= 1")
    if T < window + horizon_steps:
        raise DatasetError(f"series too short: T={T}, need at least {window + horizon_steps} steps")
    return T - window - horizon_steps + 1


def sample_rows(s: int, horizon_steps: int, window: int = INPUT_WINDOW) -> tuple[range, int]:
    """Input rows and target row of sample ``s``."""
    return range(s, s + window), s + window - 1 + horizon_steps


class WindowedDataset:
    """Direct single-step forecasting samples over a normalized series.

    Sample ``s`` takes rows ``s .. s+11`` as input and row ``s+11+h`` as its
    target. The normalizer is fit on the rows feeding the training samples
    only.
    """

    def __init__(self, series: SpeedSeries, horizon_steps: int, window: int = INPUT_WINDOW,
                 dtype=np.float32):
        self.n_samples = count_samples(series.T, horizon_steps, window)
        self.series = series
        self.window = window
        self.horizon_steps = horizon_steps
        self.split = split_samples(self.n_samples)
        self.fit_rows = range(0, self.target_row(self.split.train[-1]) + 1)
        if self.fit_rows[-1] >= self.target_row(self.split.val[0]):
            raise AssertionError("normalizer rows overlap validation targets")
        self.normalizer = fit_normalizer(series.values[self.fit_rows.start:self.fit_rows.stop])
        self.dtype = dtype
        self.z = self.normalizer.apply(series.values).astype(dtype)
        self._windows = np.lib.stride_tricks.sliding_window_view(self.z, window, axis=0)

    def target_row(self, s: int) -> int:
        return sample_rows(s, self.horizon_steps, self.window)[1]

    @property
    def n_nodes(self) -> int:
        return self.series.n

    @property
    def train_timesteps(self) -> int:
        """Raw rows a sensor streams for one pass over the training split."""
        return len(self.fit_rows)

    def inputs(self, idx) -> np.ndarray:
        """(B, window, n) normalized inputs for sample indices ``idx``."""
        idx = np.asarray(idx)
        return np.ascontiguousarray(np.swapaxes(self._windows[idx], -1, -2))

    def targets(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        return self.z[idx + self.window - 1 + self.horizon_steps]

    def raw_targets(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        return self.series.values[idx + self.window - 1 + self.horizon_steps]

    def indices(self, part: str) -> np.ndarray:
        return np.asarray(getattr(self.split, part))


def make_windows(series: SpeedSeries, horizon_steps: int, dtype=np.float32) -> WindowedDataset:
    return WindowedDataset(series, horizon_steps, dtype=dtype)


# -- synthetic data -----------------------------------------------------------

def _box_to_latlon(xy_km: np.ndarray, origin=(34.05, -118.25)) -> np.ndarray:
    lat0, lon0 = origin
    km_per_deg_lat = math.pi * 6371.0 / 180.0
    km_per_deg_lon = km_per_deg_lat * math.cos(math.radians(lat0))
    return np.column_stack([lat0 + xy_km[:, 1] / km_per_deg_lat,
                            lon0 + xy_km[:, 0] / km_per_deg_lon])


def synth_generate(n: int, T: int, seed: int, *, box_km: float = 30.0, base: float = 60.0,
                   daily_amplitude: float = 8.0, spatial_amplitude: float = 4.0,
                   noise: float = 1.5, noise_ar: float = 0.9, sigma2: float | None = None,
                   epsilon: float = 0.1) -> tuple[SensorGraph, SpeedSeries]:
    """Synthetic sensor field and speeds.

    speed = base + daily sinusoid + a per-sensor daily harmonic smoothed over
    the graph + AR(1) noise diffused over the graph. With ``noise=0`` the
    series has period 288 exactly.
    """
    if n < 2:
        raise DatasetError("synthetic generator needs n >= 2")
    if T < 300:
        raise DatasetError("synthetic generator needs T >= 300")
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0.0, box_km, size=(n, 2))
    coords = _box_to_latlon(xy)
    ids = [f"s{i:03d}" for i in range(n)]
    graph = build_graph(ids, coords, sigma2=sigma2, epsilon=epsilon)

    # row-stochastic diffusion operator with self weight
    A = graph.W + np.eye(n)
    P = A / A.sum(axis=1, keepdims=True)

    t = np.arange(T)
    # evening-peak phase shared by all sensors
    phase_day = 2 * math.pi * t / DAY_STEPS
    daily = -daily_amplitude * np.cos(phase_day)[:, None] * np.ones((1, n))

    amp = rng.uniform(0.5, 1.0, size=n)
    phi = rng.uniform(0, 2 * math.pi, size=n)
    local = amp[None, :] * np.sin(2 * phase_day[:, None] + phi[None, :])
    spatial = spatial_amplitude * (local @ P.T)

    values = base + daily + spatial
    if noise > 0:
        eps = rng.standard_normal((T, n))
        ar = np.empty((T, n))
        scale = math.sqrt(1 - noise_ar ** 2)
        ar[0] = eps[0]
        for k in range(1, T):
            ar[k] = noise_ar * ar[k - 1] + scale * eps[k]
        diffused = ar @ P.T
        diffused /= diffused.std(axis=0, keepdims=True)
        values = values + noise * diffused
    values = np.maximum(values, 0.0)
    return graph, SpeedSeries(values, tuple(ids), 5)
