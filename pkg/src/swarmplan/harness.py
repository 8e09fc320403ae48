"""Experiment harness: evaluation cells, sweeps, training curves, CSV emission.

Every output is fully determined by (config, seed list, thread count): episode
seeds are derived from the base seed with stable SeedSequence-style entropy,
results are aggregated in episode order, and floats are formatted with a fixed
conversion, so reruns produce byte-identical CSVs.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .policies import make_policy
from .world import (
    SimParams,
    discounted_coverage,
    run_episode,
    sample_initial,
    write_trace_jsonl,
)

__all__ = [
    "EpisodeResult",
    "run_cell",
    "simulate_command",
    "sweep_command",
    "rolling_mean",
    "write_csv",
    "summarize",
    "training_curves_csv",
]


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def rolling_mean(values, window: int = 9):
    """Centered rolling mean, truncated at the edges (constants stay constant)."""
    values = np.asarray(values, float)
    half = window // 2
    out = np.empty_like(values)
    for i in range(len(values)):
        lo = max(0, i - half)
        hi = min(len(values), i + half + 1)
        out[i] = values[lo:hi].mean()
    return out


@dataclass(frozen=True)
class EpisodeResult:
    seed_key: tuple
    discounted_coverage: float
    mean_coverage: float
    coverage_curve: np.ndarray
    collisions_step_pair: float
    collisions_events: int
    near_collisions_step_pair: float
    near_collisions_events: int


def _run_one(policy_name: str, params: SimParams, seed_key, checkpoint,
             trace_path=None) -> EpisodeResult:
    policy = make_policy(policy_name, params, checkpoint=checkpoint)
    state, goals = sample_initial(params, list(seed_key))
    trace = run_episode(policy, state, goals, params,
                        record_positions=trace_path is not None)
    if trace_path is not None:
        write_trace_jsonl(trace, trace_path)
    return EpisodeResult(
        seed_key=tuple(seed_key),
        discounted_coverage=discounted_coverage(trace, params),
        mean_coverage=float(trace.coverage.mean()),
        coverage_curve=trace.coverage,
        collisions_step_pair=trace.collisions_step_pair_total,
        collisions_events=trace.collision_events,
        near_collisions_step_pair=trace.near_collisions_step_pair_total,
        near_collisions_events=trace.near_collision_events,
    )


def _worker(args):
    return _run_one(*args)


def run_cell(policy_name: str, params: SimParams, base_seed: int, episodes: int,
             threads: int = 1, checkpoint=None, trace_dir=None) -> list[EpisodeResult]:
    """Run `episodes` seeded episodes of one policy; results in episode order."""
    jobs = []
    for i in range(episodes):
        trace_path = (os.path.join(trace_dir, f"episode{i:03d}.jsonl")
                      if trace_dir else None)
        jobs.append((policy_name, params, (base_seed, i), checkpoint, trace_path))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_worker, jobs))
    return [_run_one(*job) for job in jobs]


def summarize(policy_name: str, results: list[EpisodeResult]) -> dict:
    dc = np.array([r.discounted_coverage for r in results])
    return {
        "policy": policy_name,
        "episodes": len(results),
        "discounted_coverage_mean": float(dc.mean()),
        "discounted_coverage_std": float(dc.std()),
        "coverage_mean": float(np.mean([r.mean_coverage for r in results])),
        "collisions_step_pair_mean": float(
            np.mean([r.collisions_step_pair for r in results])),
        "collisions_events_mean": float(
            np.mean([r.collisions_events for r in results])),
        "near_collisions_step_pair_mean": float(
            np.mean([r.near_collisions_step_pair for r in results])),
        "near_collisions_events_mean": float(
            np.mean([r.near_collisions_events for r in results])),
    }


_SUMMARY_HEADER = [
    "policy", "episodes", "discounted_coverage_mean", "discounted_coverage_std",
    "coverage_mean", "collisions_step_pair_mean", "collisions_events_mean",
    "near_collisions_step_pair_mean", "near_collisions_events_mean",
]


def simulate_command(policy_names: list[str], params: SimParams, base_seed: int,
                     episodes: int, out_dir: str, threads: int = 1,
                     checkpoint=None, write_traces: bool = True) -> list[dict]:
    """Evaluate policies; emit JSONL traces, summary.csv, coverage_vs_time.csv."""
    os.makedirs(out_dir, exist_ok=True)
    summaries = []
    curve_columns = {}
    for name in policy_names:
        safe = name.replace(":", "_").replace("/", "_")
        trace_dir = None
        if write_traces:
            trace_dir = os.path.join(out_dir, f"traces_{safe}")
            os.makedirs(trace_dir, exist_ok=True)
        results = run_cell(name, params, base_seed, episodes, threads=threads,
                           checkpoint=checkpoint, trace_dir=trace_dir)
        summaries.append(summarize(name, results))
        curves = np.stack([r.coverage_curve for r in results])
        curve_columns[name] = (curves.mean(axis=0), curves.std(axis=0))

    write_csv(os.path.join(out_dir, "summary.csv"), _SUMMARY_HEADER,
              [[s[h] for h in _SUMMARY_HEADER] for s in summaries])

    steps = np.arange(params.horizon_steps + 1)
    header = ["step"]
    for name in policy_names:
        header += [f"{name}_mean", f"{name}_std"]
    rows = []
    for t in steps:
        row = [int(t)]
        for name in policy_names:
            mean, std = curve_columns[name]
            row += [float(mean[t]), float(std[t])]
        rows.append(row)
    write_csv(os.path.join(out_dir, "coverage_vs_time.csv"), header, rows)
    return summaries


def sweep_command(policy_name: str, n_values: list[int], densities: list[float],
                  base_seed: int, episodes: int, out_dir: str, threads: int = 1,
                  checkpoint=None, sim_overrides: dict | None = None) -> dict:
    """Grid over N x rho; emits discounted-coverage and collisions-per-100-agent
    matrices (both counting conventions) as CSV plus heatmap SVGs."""
    from .plotting import heatmap_svg

    os.makedirs(out_dir, exist_ok=True)
    sim_overrides = sim_overrides or {}
    cov = np.zeros((len(densities), len(n_values)))
    per100_pairs = np.zeros_like(cov)
    per100_events = np.zeros_like(cov)
    for i, rho in enumerate(densities):
        for j, n in enumerate(n_values):
            params = SimParams.from_density(n, rho, **sim_overrides)
            results = run_cell(policy_name, params, base_seed + 1000 * i + j,
                               episodes, threads=threads, checkpoint=checkpoint)
            s = summarize(policy_name, results)
            cov[i, j] = s["discounted_coverage_mean"]
            per100_pairs[i, j] = s["collisions_step_pair_mean"] * 100.0 / n
            per100_events[i, j] = s["collisions_events_mean"] * 100.0 / n

    header = ["rho"] + [f"N={n}" for n in n_values]
    for fname, mat in [
        ("coverage_matrix.csv", cov),
        ("collisions_per100_step_pair.csv", per100_pairs),
        ("collisions_per100_events.csv", per100_events),
    ]:
        rows = [[densities[i]] + list(mat[i]) for i in range(len(densities))]
        write_csv(os.path.join(out_dir, fname), header, rows)

    for fname, mat, title in [
        ("coverage_heatmap.svg", cov, "Discounted coverage"),
        ("collisions_heatmap.svg", per100_events, "Collision events per 100 agents"),
    ]:
        svg = heatmap_svg(mat.tolist(), [str(r) for r in densities],
                          [str(n) for n in n_values], "N", "rho", title)
        with open(os.path.join(out_dir, fname), "w") as fh:
            fh.write(svg)
    return {"coverage": cov, "per100_step_pair": per100_pairs,
            "per100_events": per100_events}


def training_curves_csv(metrics: list[dict], out_path, window: int = 9,
                        per_agent_divisor: float = 1.0) -> None:
    """Coverage and collisions-per-agent learning curves, rolling-window smoothed.

    `per_agent_divisor` is typically N*T so the collision curve reads as mean
    collisions per agent per step.
    """
    if not metrics:
        raise ValueError("no metrics to write")
    epochs = [m["epoch"] for m in metrics]
    coll_raw = [m["collisions_step_pair"] / per_agent_divisor for m in metrics]
    cov = rolling_mean([m["coverage"] for m in metrics], window)
    coll = rolling_mean(coll_raw, window)
    header = ["epoch", "coverage_smoothed", "collisions_per_agent_smoothed",
              "coverage_raw", "collisions_per_agent_raw"]
    rows = [
        [int(e), float(cov[i]), float(coll[i]),
         float(metrics[i]["coverage"]), float(coll_raw[i])]
        for i, e in enumerate(epochs)
    ]
    write_csv(out_path, header, rows)
