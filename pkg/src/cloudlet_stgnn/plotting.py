"""Static figures for ``report``: validation loss per epoch and per-cloudlet
WMAPE. Rendered off-screen to PNG."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SETUP_ORDER = ("centralized", "traditional_fl", "serverfree_fl", "gossip")


def _ordered(keys):
    known = [k for k in SETUP_ORDER if k in keys]
    return known + sorted(k for k in keys if k not in SETUP_ORDER)


def plot_val_loss(curves: Mapping[int, Mapping[str, Sequence[float]]], path: str | Path) -> Path:
    """curves: horizon -> setup -> per-epoch validation loss (normalized MAE)."""
    horizons = sorted(curves)
    fig, axes = plt.subplots(1, len(horizons), figsize=(4.2 * len(horizons), 3.4), squeeze=False)
    for ax, h in zip(axes[0], horizons):
        for setup in _ordered(curves[h]):
            ys = curves[h][setup]
            ax.plot(range(1, len(ys) + 1), ys, label=setup, linewidth=1.4)
        ax.set_title(f"horizon {h} steps")
        ax.set_xlabel("epoch")
        ax.set_ylabel("validation MAE (normalized)")
        ax.grid(alpha=0.3)
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_cloudlet_wmape(values: Mapping[str, Mapping[str, float]], horizon: int, path: str | Path) -> Path:
    """values: setup -> cloudlet scope -> WMAPE percent."""
    setups = _ordered(values)
    scopes = sorted({s for v in values.values() for s in v}, key=lambda s: (len(s), s))
    fig, ax = plt.subplots(figsize=(max(5.0, 0.9 * len(scopes) + 2), 3.6))
    width = 0.8 / max(1, len(setups))
    for i, setup in enumerate(setups):
        xs = [j + i * width for j in range(len(scopes))]
        ax.bar(xs, [values[setup].get(s, float("nan")) for s in scopes], width=width, label=setup)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(scopes))])
    ax.set_xticklabels([s.replace("cloudlet", "c") for s in scopes])
    ax.set_ylabel("WMAPE (%)")
    ax.set_title(f"per-cloudlet WMAPE, horizon {horizon} steps")
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
