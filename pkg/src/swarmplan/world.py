"""Swarm world model: parameters, state, initial-condition sampling, dynamics, metrics.

States are plain values and every operation is a pure function, so episodes can
run in parallel as long as each one owns its RNG stream.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SimParams",
    "WorldState",
    "GoalSet",
    "EpisodeTrace",
    "SamplingError",
    "sample_initial",
    "clamp_controls",
    "step",
    "coverage",
    "collision_counts",
    "near_collision_counts",
    "collision_pairs",
    "discounted_coverage",
    "run_episode",
    "write_trace_jsonl",
]


class SamplingError(RuntimeError):
    """Raised when rejection sampling cannot place all entities (over-dense config)."""


@dataclass(frozen=True)
class SimParams:
    """Simulation constants for one scenario.

    Defaults follow the standard evaluation scenario: 100 agents in a 10 m
    square, radius 0.05 m, coverage threshold 0.2 m, 0.5 m/s speed limit,
    0.1 s steps over a 20 s horizon, 3-nearest-neighbor communication and a
    0.99 coverage discount.
    """

    n_agents: int = 100
    width: float = 10.0
    agent_radius: float = 0.05
    coverage_radius: float = 0.2
    max_speed: float = 0.5
    dt: float = 0.1
    horizon_steps: int = 200
    k_neighbors: int = 3
    gamma: float = 0.99
    near_collision_factor: float = 4.0

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if self.width <= 0:
            raise ValueError("width must be positive")
        if self.agent_radius <= 0:
            raise ValueError("agent_radius must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not (0 < self.gamma <= 1):
            raise ValueError("gamma must be in (0, 1]")
        if self.k_neighbors < 0:
            raise ValueError("k_neighbors must be >= 0")
        if self.max_speed <= 0:
            raise ValueError("max_speed must be positive")

    @classmethod
    def from_density(cls, n_agents: int, density: float, **kwargs) -> "SimParams":
        """Scenario with width derived from agent count and density rho = N / w^2."""
        if density <= 0:
            raise ValueError("density must be positive")
        return cls(n_agents=n_agents, width=math.sqrt(n_agents / density), **kwargs)


@dataclass(frozen=True)
class WorldState:
    positions: np.ndarray      # (N, 2) meters
    last_controls: np.ndarray  # (N, 2) meters/second, zero at t=0
    step_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, np.float64))
        object.__setattr__(
            self, "last_controls", np.asarray(self.last_controls, np.float64)
        )
        if self.positions.shape != self.last_controls.shape:
            raise ValueError("positions and last_controls shapes differ")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("non-finite positions")
        if not np.all(np.isfinite(self.last_controls)):
            raise ValueError("non-finite controls")


@dataclass(frozen=True)
class GoalSet:
    positions: np.ndarray  # (N, 2) meters, fixed over an episode

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, np.float64))
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("non-finite goal positions")


@dataclass
class EpisodeTrace:
    """Per-step records of one rollout; all arrays have length horizon_steps + 1."""

    coverage: np.ndarray                   # (T+1,)
    collision_counts: np.ndarray           # (T+1, N) per-agent counts p_i(t)
    near_collision_counts: np.ndarray      # (T+1, N)
    collision_events_cum: np.ndarray       # (T+1,) deduplicated contact events so far
    near_collision_events_cum: np.ndarray  # (T+1,)
    controls: np.ndarray | None = None     # (T, N, 2) when recorded
    positions: np.ndarray | None = None    # (T+1, N, 2) when recorded

    @property
    def collision_events(self) -> int:
        """Pairs entering the 2R zone, counted once per contiguous contact."""
        return int(self.collision_events_cum[-1])

    @property
    def near_collision_events(self) -> int:
        return int(self.near_collision_events_cum[-1])

    @property
    def collisions_step_pair_total(self) -> float:
        """Literal double-counted total: sum over agents and steps of p_i(t)."""
        return float(self.collision_counts.sum())

    @property
    def near_collisions_step_pair_total(self) -> float:
        return float(self.near_collision_counts.sum())


def _sample_separated(rng: np.random.Generator, n: int, width: float,
                      min_dist: float, max_resamples: int, label: str) -> np.ndarray:
    pts = np.empty((n, 2))
    min_sq = min_dist * min_dist
    for i in range(n):
        for _ in range(max_resamples):
            p = rng.uniform(0.0, width, size=2)
            if i == 0:
                pts[0] = p
                break
            d = pts[:i] - p
            if np.min(np.einsum("ij,ij->i", d, d)) >= min_sq:
                pts[i] = p
                break
        else:
            raise SamplingError(
                f"could not place {label} {i} after {max_resamples} resamples; "
                "configuration too dense"
            )
    return pts


_MAX_RESAMPLES = 10_000


def sample_initial(params: SimParams, seed) -> tuple[WorldState, GoalSet]:
    """Uniform initial agents and goals with pairwise within-set separation >= 2R.

    Agent-goal cross distances are unconstrained. Deterministic given the seed.
    """
    n, w, r = params.n_agents, params.width, params.agent_radius
    if 2 * n * math.pi * r * r > 0.5 * w * w:
        raise SamplingError(
            f"infeasible packing: 2*{n}*pi*{r}^2 > 0.5*{w}^2; reduce density"
        )
    rng = np.random.default_rng(seed)
    agents = _sample_separated(rng, n, w, 2 * r, _MAX_RESAMPLES, "agent")
    goals = _sample_separated(rng, n, w, 2 * r, _MAX_RESAMPLES, "goal")
    state = WorldState(agents, np.zeros((n, 2)), step_index=0)
    return state, GoalSet(goals)


def clamp_controls(raw, params: SimParams) -> np.ndarray:
    """Rescale any row with speed above max_speed back onto the speed limit."""
    raw = np.asarray(raw, np.float64)
    if not np.all(np.isfinite(raw)):
        raise ValueError("non-finite control input")
    norms = np.linalg.norm(raw, axis=-1, keepdims=True)
    scale = np.where(norms > params.max_speed, params.max_speed / np.maximum(norms, 1e-300), 1.0)
    return raw * scale


def step(state: WorldState, controls, params: SimParams) -> WorldState:
    """Euler step: x' = x + dt*u. Controls must already satisfy the speed limit."""
    controls = np.asarray(controls, np.float64)
    if controls.shape != state.positions.shape:
        raise ValueError(
            f"controls shape {controls.shape} != positions shape {state.positions.shape}"
        )
    return WorldState(
        positions=state.positions + params.dt * controls,
        last_controls=controls,
        step_index=state.step_index + 1,
    )


def coverage(state: WorldState, goals: GoalSet, params: SimParams) -> float:
    """Fraction of goals with some agent strictly within the coverage radius."""
    diff = goals.positions[:, None, :] - state.positions[None, :, :]
    dist_sq = np.einsum("ijk,ijk->ij", diff, diff)
    min_d = np.sqrt(dist_sq.min(axis=1))
    return float(np.mean(min_d < params.coverage_radius))


def _pair_within(state: WorldState, threshold: float) -> np.ndarray:
    x = state.positions
    diff = x[:, None, :] - x[None, :, :]
    dist_sq = np.einsum("ijk,ijk->ij", diff, diff)
    within = dist_sq < threshold * threshold
    np.fill_diagonal(within, False)
    return within


def collision_counts(state: WorldState, params: SimParams) -> np.ndarray:
    """p_i = number of other agents strictly within 2R of agent i."""
    return _pair_within(state, 2 * params.agent_radius).sum(axis=1).astype(np.int64)


def near_collision_counts(state: WorldState, params: SimParams) -> np.ndarray:
    """Same as collision_counts with the near threshold (default 4R)."""
    thr = params.near_collision_factor * params.agent_radius
    return _pair_within(state, thr).sum(axis=1).astype(np.int64)


def collision_pairs(state: WorldState, params: SimParams, near: bool = False) -> np.ndarray:
    """Boolean upper-triangle-symmetric matrix of pairs currently in contact."""
    factor = params.near_collision_factor if near else 2.0
    return _pair_within(state, factor * params.agent_radius)


def discounted_coverage(trace: EpisodeTrace, params: SimParams) -> float:
    """Normalized gamma-weighted average of coverage over t = 0..T."""
    t = np.arange(len(trace.coverage))
    weights = params.gamma ** t
    return float(np.sum(weights * trace.coverage) / np.sum(weights))


def run_episode(policy, state: WorldState, goals: GoalSet, params: SimParams,
                record_positions: bool = False) -> EpisodeTrace:
    """Roll one episode under `policy(state, goals) -> raw controls`.

    The policy may expose `reset(state, goals)` for per-episode precomputation
    (CAPT plans, exploration RNG re-seeding). Raw controls are clamped to the
    speed limit before integration.
    """
    if hasattr(policy, "reset"):
        policy.reset(state, goals)
    T, n = params.horizon_steps, params.n_agents

    cov = np.empty(T + 1)
    coll = np.empty((T + 1, n), np.int64)
    near = np.empty((T + 1, n), np.int64)
    controls_log = np.empty((T, n, 2)) if record_positions else None
    positions_log = np.empty((T + 1, n, 2)) if record_positions else None

    coll_events_cum = np.empty(T + 1, np.int64)
    near_events_cum = np.empty(T + 1, np.int64)
    prev_coll = collision_pairs(state, params, near=False)
    prev_near = collision_pairs(state, params, near=True)
    coll_events = int(np.triu(prev_coll, 1).sum())
    near_events = int(np.triu(prev_near, 1).sum())
    coll_events_cum[0] = coll_events
    near_events_cum[0] = near_events

    cov[0] = coverage(state, goals, params)
    coll[0] = prev_coll.sum(axis=1)
    near[0] = prev_near.sum(axis=1)
    if record_positions:
        positions_log[0] = state.positions

    for t in range(T):
        u = clamp_controls(policy(state, goals), params)
        state = step(state, u, params)
        cur_coll = collision_pairs(state, params, near=False)
        cur_near = collision_pairs(state, params, near=True)
        # A pair counts as a new event only when it was out of contact last step.
        coll_events += int(np.triu(cur_coll & ~prev_coll, 1).sum())
        near_events += int(np.triu(cur_near & ~prev_near, 1).sum())
        prev_coll, prev_near = cur_coll, cur_near
        coll_events_cum[t + 1] = coll_events
        near_events_cum[t + 1] = near_events

        cov[t + 1] = coverage(state, goals, params)
        coll[t + 1] = cur_coll.sum(axis=1)
        near[t + 1] = cur_near.sum(axis=1)
        if record_positions:
            controls_log[t] = u
            positions_log[t + 1] = state.positions

    return EpisodeTrace(
        coverage=cov,
        collision_counts=coll,
        near_collision_counts=near,
        collision_events_cum=coll_events_cum,
        near_collision_events_cum=near_events_cum,
        controls=controls_log,
        positions=positions_log,
    )


def write_trace_jsonl(trace: EpisodeTrace, path) -> None:
    """One line-delimited JSON record per step (positions must be recorded)."""
    if trace.positions is None:
        raise ValueError("trace was recorded without positions; pass record_positions=True")
    T = len(trace.coverage) - 1
    with open(path, "w") as fh:
        for t in range(T + 1):
            rec = {
                "step": t,
                "positions": trace.positions[t].tolist(),
                "controls": (trace.controls[t - 1].tolist() if t > 0
                             else np.zeros_like(trace.positions[0]).tolist()),
                "coverage": trace.coverage[t],
                "collisions_step_pair": int(trace.collision_counts[t].sum()),
                "collisions_events": int(trace.collision_events_cum[t]),
                "near_collisions": int(trace.near_collision_counts[t].sum()),
            }
            fh.write(json.dumps(rec) + "\n")
