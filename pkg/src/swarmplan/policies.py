"""Executable policies: centralized LSAP, CAPT, decentralized d-hop, GNN.

A policy is a callable `(state, goals) -> raw controls (N, 2)`; an optional
`reset(state, goals)` hook runs at episode start. All emitted controls satisfy
the speed limit, with no-overshoot scaling near goals so agents land exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gnn
from .assignment import Assignment, capt_assignment, hungarian, lsap_assignment
from .comm import build_observations, d_hop_view, knn_graph
from .world import GoalSet, SimParams, WorldState

__all__ = [
    "CaptPlan",
    "capt_plan",
    "LsapPolicy",
    "CaptPolicy",
    "DHopPolicy",
    "GnnPolicy",
    "make_policy",
    "goal_seek_controls",
]

_SNAP = 1e-12


def goal_seek_controls(positions, targets, params: SimParams) -> np.ndarray:
    """Max-speed controls toward per-agent targets, scaled to avoid overshoot."""
    delta = np.asarray(targets, float) - np.asarray(positions, float)
    dist = np.linalg.norm(delta, axis=-1, keepdims=True)
    speed = np.minimum(params.max_speed, dist / params.dt)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(dist > _SNAP, delta / np.maximum(dist, _SNAP) * speed, 0.0)
    return u


class LsapPolicy:
    """Re-solves the linear-distance assignment every step; heads to the result."""

    def __init__(self, params: SimParams):
        self.params = params
        self.last_assignment: Assignment | None = None

    def __call__(self, state: WorldState, goals: GoalSet) -> np.ndarray:
        self.last_assignment = lsap_assignment(state.positions, goals.positions)
        targets = goals.positions[self.last_assignment.goal_of]
        return goal_seek_controls(state.positions, targets, self.params)


@dataclass
class CaptPlan:
    """Constant-velocity simultaneous-arrival plan from the squared-cost assignment."""

    assignment: Assignment
    start_positions: np.ndarray
    arrival_time: float        # seconds; 0 when all agents start on their goals
    velocities: np.ndarray     # (N, 2); zero after arrival_time


def capt_plan(state: WorldState, goals: GoalSet, params: SimParams) -> CaptPlan:
    assignment = capt_assignment(state.positions, goals.positions)
    targets = goals.positions[assignment.goal_of]
    delta = targets - state.positions
    dist = np.linalg.norm(delta, axis=-1)
    t_f = float(dist.max() / params.max_speed)
    if t_f <= 0:
        velocities = np.zeros_like(delta)
    else:
        velocities = delta / t_f
    return CaptPlan(assignment, state.positions.copy(), t_f, velocities)


class CaptPolicy:
    """Plans once at t=0, then follows the constant-velocity trajectories."""

    def __init__(self, params: SimParams):
        self.params = params
        self.plan: CaptPlan | None = None

    def reset(self, state: WorldState, goals: GoalSet):
        self.plan = capt_plan(state, goals, self.params)

    def __call__(self, state: WorldState, goals: GoalSet) -> np.ndarray:
        if self.plan is None:
            self.reset(state, goals)
        plan = self.plan
        if state.step_index * self.params.dt >= plan.arrival_time:
            return np.zeros_like(state.positions)
        # cap the final partial step so every agent stops exactly on its goal
        targets = goals.positions[plan.assignment.goal_of]
        remaining = targets - state.positions
        full = plan.velocities * self.params.dt
        full_norm = np.linalg.norm(full, axis=-1, keepdims=True)
        rem_norm = np.linalg.norm(remaining, axis=-1, keepdims=True)
        u = np.where(rem_norm < full_norm, remaining / self.params.dt, plan.velocities)
        return u


class DHopPolicy:
    """Decentralized baseline: each agent solves the LSAP on its d-hop view.

    d=0 is the greedy rule (head to the nearest observed goal). For d>=1 the
    local agent-goal cost matrix is padded to square with a large sentinel; an
    agent whose local assignment lands on a sentinel column holds position.

    Goal knowledge propagates one exchange behind agent knowledge (goal_hops =
    d-1): a d-hop policy has performed d-1 exchanges, so with d=1 each agent
    knows its neighbors' positions but only its own observed goals.
    """

    def __init__(self, d: int, params: SimParams):
        if d < 0:
            raise ValueError("d must be >= 0")
        self.d = d
        self.params = params
        self.sentinel = 10.0 * params.width

    def __call__(self, state: WorldState, goals: GoalSet) -> np.ndarray:
        params = self.params
        n = state.positions.shape[0]
        if self.d == 0:
            diff = goals.positions[None, :, :] - state.positions[:, None, :]
            dist = np.linalg.norm(diff, axis=-1)
            nearest = dist.argmin(axis=1)
            return goal_seek_controls(state.positions, goals.positions[nearest], params)

        graph = knn_graph(state.positions, params.k_neighbors)
        controls = np.zeros((n, 2))
        for ego in range(n):
            view = d_hop_view(graph, state, goals, params, self.d, ego,
                              goal_hops=self.d - 1)
            na, ng = len(view.agent_ids), len(view.goal_ids)
            size = max(na, ng)
            cost = np.full((size, size), self.sentinel)
            diff = view.agent_positions[:, None, :] - view.goal_positions[None, :, :]
            cost[:na, :ng] = np.linalg.norm(diff, axis=-1)
            sol = hungarian(cost)
            ego_row = int(np.searchsorted(view.agent_ids, ego))
            j = sol.goal_of[ego_row]
            if j < ng:
                target = goals.positions[view.goal_ids[j]]
                controls[ego] = goal_seek_controls(
                    state.positions[ego:ego + 1], target[None], params
                )[0]
        return controls


class GnnPolicy:
    """Wraps trained GNN parameters as an executable policy."""

    def __init__(self, params: dict, config: gnn.GnnConfig, sim_params: SimParams):
        self.net_params = params
        self.config = config
        self.params = sim_params

    @classmethod
    def from_checkpoint(cls, path, sim_params: SimParams) -> "GnnPolicy":
        net_params, config = gnn.load_checkpoint(path)
        return cls(net_params, config, sim_params)

    def __call__(self, state: WorldState, goals: GoalSet) -> np.ndarray:
        obs = build_observations(state, goals, self.params)
        graph = knn_graph(state.positions, self.params.k_neighbors)
        u, _ = gnn.gnn_forward(self.net_params, obs, graph.adjacency, self.config)
        return u


def make_policy(name: str, params: SimParams, checkpoint=None):
    """Build a policy from a CLI-style name: lsap, capt, dhop:<d>, gnn[:<ckpt>]."""
    low = name.strip().lower()
    if low == "lsap":
        return LsapPolicy(params)
    if low == "capt":
        return CaptPolicy(params)
    if low.startswith("dhop"):
        _, _, arg = low.partition(":")
        return DHopPolicy(int(arg) if arg else 0, params)
    if low.startswith("gnn"):
        _, _, arg = low.partition(":")
        path = arg or checkpoint
        if not path:
            raise ValueError("gnn policy requires a checkpoint path (gnn:<path>)")
        return GnnPolicy.from_checkpoint(path, params)
    raise ValueError(f"unknown policy {name!r}")
