"""Command-line entry point: ``cloudlet-stgnn {synth,partition,run,report,account}``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from . import accounting as acc
from .config import ConfigError, ExperimentConfig, config_hash, dump_resolved, load_config, resolved_dict
from .data import DatasetError, SeriesParseError, SpeedSeries, WindowedDataset, load_series, save_series, \
    synth_generate
from .graph import GraphInputError, SensorGraph, build_graph, load_distances, load_sensors, save_sensors
from .model import init_params, param_bytes, save_checkpoint
from .partition import (CloudletPartition, UncoveredSensorError, build_partition, receptive_hops,
                        save_partition, suggest_cloudlets)
from .plotting import plot_cloudlet_wmape, plot_val_loss
from .protocols import (METRIC_COLUMNS, run_setup, write_ledger_csv, write_metrics_csv, write_result_json,
                        write_val_loss_csv)


# -- shared construction ------------------------------------------------------

def build_inputs(cfg: ExperimentConfig) -> tuple[SensorGraph, SpeedSeries]:
    ds, gr = cfg.dataset, cfg.graph
    if ds.synth is not None:
        s = ds.synth
        return synth_generate(s.n, s.T, s.seed, box_km=s.box_km, base=s.base, daily_amplitude=s.daily_amplitude,
                              spatial_amplitude=s.spatial_amplitude, noise=s.noise, noise_ar=s.noise_ar,
                              sigma2=gr.sigma2, epsilon=gr.epsilon)
    ids, coords, planar = load_sensors(ds.paths.sensors)
    dist = load_distances(ds.paths.distances, ids) if ds.paths.distances else None
    graph = build_graph(ids, coords, planar=planar, dist=dist, sigma2=gr.sigma2, epsilon=gr.epsilon)
    series = load_series(ds.paths.speeds, ds.interval_minutes)
    if list(series.sensor_ids) != list(ids):
        if sorted(series.sensor_ids) != sorted(ids):
            raise DatasetError("speed columns and sensor file list different sensor ids")
        order = [series.sensor_ids.index(i) for i in ids]
        series = SpeedSeries(series.values[:, order], tuple(ids), series.interval_minutes)
    return graph, series


def build_cloudlets(cfg: ExperimentConfig, graph: SensorGraph) -> np.ndarray:
    p = cfg.partition
    if p.cloudlets is not None:
        return np.asarray(p.cloudlets, dtype=np.float64)
    return suggest_cloudlets(graph.coords, p.n_cloudlets, p.comm_range_km, seed=p.placement_seed,
                             planar=graph.planar)


def build_partition_for(cfg: ExperimentConfig, graph: SensorGraph) -> CloudletPartition:
    hops = receptive_hops(cfg.model_config())
    return build_partition(graph, build_cloudlets(cfg, graph), cfg.partition.comm_range_km, hops)


def run_dir_for(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir) / f"run-{config_hash(cfg)}"


def _emit_csv(rows: Sequence[Sequence], out=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow(row)
    text = buf.getvalue()
    (out or sys.stdout).write(text)
    return text


# -- subcommands --------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    if cfg.dataset.synth is None:
        raise ConfigError("dataset.synth", "the synth command needs a synth section")
    graph, series = build_inputs(cfg)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / f"synth-{config_hash(cfg)}"
    out.mkdir(parents=True, exist_ok=True)
    save_series(out / "speeds.csv", series)
    save_sensors(out / "sensors.csv", graph.sensor_ids, graph.coords, graph.planar)
    print(f"wrote {out / 'speeds.csv'} ({series.T} steps x {series.n} sensors)")
    print(f"wrote {out / 'sensors.csv'}")
    return 0


def cmd_partition(args) -> int:
    cfg = load_config(args.config)
    graph, _ = build_inputs(cfg)
    part = build_partition_for(cfg, graph)
    out = Path(args.out) if args.out else run_dir_for(cfg) / "partition"
    save_partition(out, graph, part)
    rows = [["cloudlet", "owned", "halo", "degree"]]
    for c in range(part.n_cloudlets):
        rows.append([c, len(part.owned[c]), len(part.halo[c]), len(part.neighbours(c))])
    _emit_csv(rows)
    print(f"# hops={part.hops} duplication_factor={part.duplication_factor!r} files={out}")
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    graph, series = build_inputs(cfg)
    setup = cfg.training.setup
    try:
        part = build_partition_for(cfg, graph)
    except UncoveredSensorError:
        if setup != "centralized":
            raise
        part = None
        warnings.warn("sensors not covered by any cloudlet; per-cloudlet metrics skipped")
    out = run_dir_for(cfg)
    out.mkdir(parents=True, exist_ok=True)
    dump_resolved(cfg, out / "config.yaml")
    if part is not None:
        save_partition(out / "partition", graph, part)
    results = []
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    for h in cfg.horizons:
        rc = cfg.run_config(h)
        data = WindowedDataset(series, h)
        r = run_setup(data, graph, part, rc)
        results.append(r)
        for holder, flat in r.checkpoints.items():
            save_checkpoint(ckpt_dir / f"h{h}_{holder}.bin", flat)
        g = r.metric("global")
        print(f"# {setup} horizon={h}: MAE={g.mae:.4f} RMSE={g.rmse:.4f} WMAPE={g.wmape:.3f}% "
              f"({r.elapsed_s:.1f}s)", file=sys.stderr)
    write_val_loss_csv(out / "val_loss.csv", results)
    write_metrics_csv(out / "metrics.csv", results)
    write_ledger_csv(out / "ledger.csv", results)
    write_result_json(out / "result.json", results, resolved_dict(cfg))
    print(out)
    return 0


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _load_run(run_dir: Path) -> dict:
    doc = json.loads((run_dir / "result.json").read_text())
    if not doc["runs"]:
        raise DatasetError(f"{run_dir}: no runs recorded")
    return {"dir": run_dir, "doc": doc, "setup": doc["runs"][0]["setup"],
            "metrics": _read_csv(run_dir / "metrics.csv"), "val": _read_csv(run_dir / "val_loss.csv")}


def cmd_report(args) -> int:
    runs = [_load_run(Path(d)) for d in args.runs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # values are copied as text so the table matches each metrics.csv exactly
    rows = [list(METRIC_COLUMNS)]
    for run in runs:
        for m in run["metrics"]:
            if m["scope"] == "global":
                rows.append([m[c] for c in METRIC_COLUMNS])
    with open(out / "comparison.csv", "w", newline="") as fh:
        _emit_csv(rows, fh)
    _emit_csv(rows)

    overhead = [["horizon", *acc.OVERHEAD_COLUMNS]]
    for run in runs:
        for r in run["doc"]["runs"]:
            o = r["overheads"]
            overhead.append([r["horizon"], *(o[c] for c in acc.OVERHEAD_COLUMNS)])
    with open(out / "overheads.csv", "w", newline="") as fh:
        _emit_csv(overhead, fh)

    curves: dict[int, dict[str, list[float]]] = {}
    for run in runs:
        for row in run["val"]:
            if row["holder"] == "global":
                curves.setdefault(int(row["horizon"]), {}).setdefault(run["setup"], []).append(float(row["loss"]))
    figs = [plot_val_loss(curves, out / "val_loss.png")]
    by_h: dict[int, dict[str, dict[str, float]]] = {}
    for run in runs:
        for m in run["metrics"]:
            if m["scope"].startswith("cloudlet"):
                by_h.setdefault(int(m["horizon"]), {}).setdefault(run["setup"], {})[m["scope"]] = float(m["WMAPE"])
    for h, values in sorted(by_h.items()):
        figs.append(plot_cloudlet_wmape(values, h, out / f"cloudlet_wmape_h{h}.png"))
    print(f"# wrote {out / 'comparison.csv'}, {out / 'overheads.csv'}, " + ", ".join(str(f) for f in figs),
          file=sys.stderr)
    return 0


def closed_form_rows(cfg: ExperimentConfig, graph: SensorGraph, part: CloudletPartition,
                     n_train: int, train_timesteps: int) -> list[list]:
    """Per-epoch overheads predicted from topology. Gossip aggregation is
    shown at steady state, with every buffer full."""
    mc = cfg.model_config()
    P = init_params(mc, 0).param_count
    pb = param_bytes(P)
    active = acc.active_cloudlets(part)
    degs = list(acc.active_degrees(part).values())
    m = len(active)
    local = [len(part.local_nodes(c)) for c in active]
    le = cfg.training.local_epochs
    rows = [list(acc.OVERHEAD_COLUMNS)]
    for setup in acc.SETUPS:
        central = setup == "centralized"
        train = acc.training_flops_per_epoch(mc, n_train, [graph.n] if central else local, le)
        if setup == "gossip":
            agg = acc.aggregation_flops(setup, m, P, buffer_sizes=[2] * m)
        else:
            agg = acc.aggregation_flops(setup, m, P, degrees=degs)
        _, feat = acc.feature_bytes_per_epoch(setup, part, train_timesteps, graph.n)
        rows.append([setup, acc.model_bytes_per_epoch(setup, m, pb, degs) / acc.MB,
                     acc.model_down_bytes_per_epoch(setup, m, pb) / acc.MB, train, agg, feat / acc.MB])
    return rows


def cmd_account(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        graph, series = build_inputs(cfg)
        part = build_partition_for(cfg, graph)
        data = WindowedDataset(series, cfg.horizons[0])
        rows = closed_form_rows(cfg, graph, part, len(data.indices("train")), data.train_timesteps)
        _emit_csv(rows)
        print(f"# param_count={init_params(cfg.model_config(), 0).param_count} "
              f"duplication_factor={part.duplication_factor!r}")
        return 0
    if not args.runs:
        raise ConfigError("", "account needs --config or at least one run directory")
    rows = [["horizon", *acc.OVERHEAD_COLUMNS]]
    for d in args.runs:
        doc = json.loads((Path(d) / "result.json").read_text())
        for r in doc["runs"]:
            rows.append([r["horizon"], *(r["overheads"][c] for c in acc.OVERHEAD_COLUMNS)])
    _emit_csv(rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cloudlet-stgnn",
                                description="Simulate ST-GCN training across edge cloudlets.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", help="write the synthetic dataset described by a config")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)
    s = sub.add_parser("partition", help="assign sensors to cloudlets and write the exchange plan")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_partition)
    s = sub.add_parser("run", help="train and evaluate the configured setup for every horizon")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_run)
    s = sub.add_parser("report", help="compare run directories; writes tables and figures")
    s.add_argument("runs", nargs="+")
    s.add_argument("--out", default="report")
    s.set_defaults(func=cmd_report)
    s = sub.add_parser("account", help="per-epoch overheads from a config (closed form) or from runs")
    s.add_argument("runs", nargs="*")
    s.add_argument("--config")
    s.set_defaults(func=cmd_account)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except UncoveredSensorError as exc:
        print(str(exc), file=sys.stderr)
        return 3
    except (SeriesParseError, GraphInputError, DatasetError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
