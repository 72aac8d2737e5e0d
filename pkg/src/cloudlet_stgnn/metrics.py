"""Forecast error metrics on de-normalized speeds and their pooled
aggregation across cloudlets."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DENOMINATORS = ("predicted", "truth")


class MetricError(ValueError):
    pass


def _pair(x, x_hat, mask=None):
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise MetricError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x, x_hat = x[mask], x_hat[mask]
    x, x_hat = x.ravel(), x_hat.ravel()
    if x.size == 0:
        raise MetricError("metrics need at least one value")
    return x, x_hat


def mae(x, x_hat, mask=None) -> float:
    x, x_hat = _pair(x, x_hat, mask)
    return float(np.abs(x - x_hat).mean())


def rmse(x, x_hat, mask=None) -> float:
    x, x_hat = _pair(x, x_hat, mask)
    return float(math.sqrt(((x - x_hat) ** 2).mean()))


def wmape(x, x_hat, mask=None, denominator: str = "predicted") -> float:
    """Percent. ``x`` is the truth, ``x_hat`` the prediction. The default
    divides by the sum of predictions; ``denominator="truth"`` gives the
    conventional form."""
    x, x_hat = _pair(x, x_hat, mask)
    denom = _denominator_sum(x, x_hat, denominator)
    return float(np.abs(x - x_hat).sum() / denom * 100.0)


def _denominator_sum(x, x_hat, denominator):
    if denominator not in DENOMINATORS:
        raise MetricError(f"wmape denominator must be one of {DENOMINATORS}, got {denominator!r}")
    denom = float((x_hat if denominator == "predicted" else x).sum())
    if denom == 0.0:
        raise MetricError("wmape denominator sums to zero")
    return denom


@dataclass(frozen=True)
class MetricReport:
    """Errors for one scope plus the sums needed to pool reports exactly."""

    scope: str
    horizon: int
    mae: float
    rmse: float
    wmape: float
    n_values: int
    n_nodes: int
    n_samples: int
    abs_err_sum: float
    sq_err_sum: float
    denom_sum: float
    denominator: str = "predicted"

    def __post_init__(self):
        if self.mae > self.rmse * (1 + 1e-12) + 1e-12:
            raise MetricError(f"MAE {self.mae} exceeds RMSE {self.rmse}")
        if self.wmape < 0:
            raise MetricError("negative WMAPE")


def report(x, x_hat, *, scope: str = "global", horizon: int = 0, mask=None,
           denominator: str = "predicted") -> MetricReport:
    """x, x_hat: (samples, nodes) in miles/hour."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.ndim != 2:
        raise MetricError("report expects (samples, nodes) arrays")
    n_samples, n_nodes = x.shape
    xv, hv = _pair(x, x_hat, mask)
    err = xv - hv
    abs_sum = float(np.abs(err).sum())
    sq_sum = float((err ** 2).sum())
    denom = _denominator_sum(xv, hv, denominator)
    n = xv.size
    return MetricReport(scope, horizon, abs_sum / n, math.sqrt(sq_sum / n), abs_sum / denom * 100.0,
                        n, n_nodes, n_samples, abs_sum, sq_sum, denom, denominator)


def aggregate_weighted(reports: Sequence[MetricReport], node_counts: Sequence[int],
                       scope: str = "global") -> MetricReport:
    """Combine per-cloudlet reports into one.

    Each report contributes in proportion to the values it covers, which is
    its node count times its sample count when nothing is masked. The
    result therefore equals the metrics of the pooled predictions.
    """
    if len(reports) != len(node_counts):
        raise MetricError(f"{len(reports)} reports but {len(node_counts)} node counts")
    if not reports:
        raise MetricError("nothing to aggregate")
    for r, c in zip(reports, node_counts):
        if c <= 0:
            raise MetricError(f"cloudlet scope {r.scope!r} has non-positive node count {c}")
        if c != r.n_nodes:
            raise MetricError(f"node count {c} disagrees with report {r.scope!r} ({r.n_nodes})")
    horizons = {r.horizon for r in reports}
    denoms = {r.denominator for r in reports}
    if len(horizons) != 1 or len(denoms) != 1:
        raise MetricError("reports mix horizons or WMAPE denominators")
    n = sum(r.n_values for r in reports)
    abs_sum = sum(r.abs_err_sum for r in reports)
    sq_sum = sum(r.sq_err_sum for r in reports)
    denom = sum(r.denom_sum for r in reports)
    if denom == 0.0:
        raise MetricError("wmape denominator sums to zero")
    return MetricReport(scope, horizons.pop(), abs_sum / n, math.sqrt(sq_sum / n), abs_sum / denom * 100.0,
                        n, sum(node_counts), max(r.n_samples for r in reports), abs_sum, sq_sum, denom,
                        denoms.pop())
