"""Probe streams and metric aggregation.

The simulator emits primitive probe rows (one measurement each); aggregation
turns them into per-replicate statistics per movement/section plus a pooled
summary across replicates (statistics over the per-run means, the way the
replicate box plots are built).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .config import NetworkConfig

PROBE_HEADER = ["run_id", "seed", "entity_id", "kind", "section", "value_s", "t"]
METRIC_HEADER = ["run_id", "seed", "movement", "section", "statistic", "value", "window"]

SIDE_MOVEMENTS = tuple(
    f"{x}_{side}_{turn}" for x in "AB" for side in ("NB", "SB") for turn in ("TH", "LT")
)


@dataclass
class MetricsRow:
    run_id: str
    seed: int
    movement: str
    section: str
    statistic: str
    value: float
    window: str


def write_probes(path: str, runs: list[tuple[str, int, list[tuple]]]) -> None:
    """Merged probe CSV; rows stay in simulation order within each run."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PROBE_HEADER)
        for run_id, seed, rows in runs:
            for kind, section, entity, value, t in rows:
                w.writerow([run_id, seed, entity, kind, section,
                            f"{value:.4f}", f"{t:.1f}"])


def write_metrics(path: str, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_HEADER)
        for r in rows:
            w.writerow([r.run_id, r.seed, r.movement, r.section, r.statistic,
                        f"{r.value:.4f}", r.window])


def _stats(run_id: str, seed: int, movement: str, section: str,
           values: list[float], window: str) -> list[MetricsRow]:
    arr = np.asarray(values)
    out = [MetricsRow(run_id, seed, movement, section, "count", float(arr.size), window)]
    if arr.size:
        q1, med, q3 = np.percentile(arr, [25, 50, 75])
        out += [
            MetricsRow(run_id, seed, movement, section, "mean", float(arr.mean()), window),
            MetricsRow(run_id, seed, movement, section, "median", float(med), window),
            MetricsRow(run_id, seed, movement, section, "q1", float(q1), window),
            MetricsRow(run_id, seed, movement, section, "q3", float(q3), window),
        ]
    return out


def aggregate_run(run_id: str, seed: int, probes: list[tuple],
                  cfg: NetworkConfig, warmup: float,
                  checkin_window: float = 300.0) -> list[MetricsRow]:
    """Per-replicate metrics: OD-movement delay (entry after warmup), bus
    section travel times, side-street delay inside the post-check-in window,
    and side-street queue maxima."""
    ff_offset = cfg.vehicle_length  # side-street vehicles spawn at this position
    v0 = cfg.desired_speed_fps
    delays: dict[tuple[str, str], list[float]] = {}
    bus_tt: dict[str, list[float]] = {}
    bus_delay: dict[str, list[float]] = {}
    checkins: dict[str, list[float]] = {"A": [], "B": []}
    queue_rows: list[MetricsRow] = []
    veh_rows: list[tuple[str, str, float, float]] = []
    for kind, section, entity, value, t in probes:
        if kind == "veh_delay":
            x, movement = section.split(":", 1)
            veh_rows.append((x, movement, value, t))
            if t >= warmup:
                delays.setdefault((movement, x), []).append(value)
        elif kind == "bus_tt":
            if t >= warmup:
                bus_tt.setdefault(section, []).append(value)
        elif kind == "bus_delay":
            if t >= warmup:
                bus_delay.setdefault(section, []).append(value)
        elif kind == "checkin":
            checkins[section].append(t)
        elif kind == "queue_max":
            x, movement = section.split(":", 1)
            queue_rows.append(MetricsRow(run_id, seed, movement, x, "max", value, "all"))
        elif kind == "unfinished":
            x, movement = section.split(":", 1)
            queue_rows.append(MetricsRow(run_id, seed, movement, x, "unfinished",
                                         value, "all"))
    rows: list[MetricsRow] = []
    for (movement, x) in sorted(delays):
        rows += _stats(run_id, seed, movement, x, delays[(movement, x)], "all")
    for section in ("Inter A_EB", "Inter B_EB", "Inter A&B_EB"):
        rows += _stats(run_id, seed, "BUS", section, bus_tt.get(section, []), "all")
    for section in sorted(bus_delay):
        rows += _stats(run_id, seed, "BUS_DELAY", section, bus_delay[section], "all")
    # side-street movements crossing within the window after each check-in
    windowed: dict[tuple[str, str], list[float]] = {}
    for x, movement, value, entry_t in veh_rows:
        if movement not in SIDE_MOVEMENTS or entry_t < warmup:
            continue
        ff_time = (cfg.approach_length - ff_offset) / v0
        crossing_t = entry_t + value + ff_time
        for t_ci in checkins[x]:
            if t_ci <= crossing_t <= t_ci + checkin_window:
                windowed.setdefault((movement, x), []).append(value)
                break
    for (movement, x) in sorted(windowed):
        rows += _stats(run_id, seed, movement, x, windowed[(movement, x)], "checkin300")
    rows += queue_rows
    return rows


def summarize(rows: list[MetricsRow]) -> list[MetricsRow]:
    """Pooled summary: statistics over the per-run means (and maxima)."""
    pools: dict[tuple[str, str, str], list[float]] = {}
    for r in rows:
        if r.statistic in ("mean", "max"):
            pools.setdefault((r.movement, r.section, r.window), []).append(r.value)
    out: list[MetricsRow] = []
    for (movement, section, window) in sorted(pools):
        vals = pools[(movement, section, window)]
        out += _stats("ALL", -1, movement, section, vals, window)
    return out


def mean_of(rows: list[MetricsRow], movement: str, section: str,
            window: str = "all") -> float | None:
    """Pooled mean-of-run-means for one movement/section, None if absent."""
    vals = [r.value for r in rows
            if r.movement == movement and r.section == section
            and r.window == window and r.statistic == "mean"]
    if not vals:
        return None
    return float(np.mean(vals))


def read_metrics(path: str) -> list[MetricsRow]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            out.append(MetricsRow(rec["run_id"], int(rec["seed"]), rec["movement"],
                                  rec["section"], rec["statistic"],
                                  float(rec["value"]), rec["window"]))
    return out


def write_curve(path: str, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
