"""k-nearest-neighbor communication graph, local observations, d-hop views."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .world import GoalSet, SimParams, WorldState

__all__ = [
    "CommGraph",
    "DHopView",
    "knn_graph",
    "build_observations",
    "observation_dim",
    "d_hop_view",
]


@dataclass(frozen=True)
class CommGraph:
    """Row i of `adjacency` marks the min(k, N-1) nearest agents to agent i."""

    adjacency: np.ndarray  # (N, N) float 0/1, zero diagonal, generally asymmetric
    k: int


@dataclass(frozen=True)
class DHopView:
    """What one agent knows after d-1 exchanges: agents and goals, ego-relative."""

    ego: int
    agent_ids: np.ndarray        # includes ego, ascending
    agent_positions: np.ndarray  # (len(agent_ids), 2) relative to ego
    goal_ids: np.ndarray         # deduplicated, ascending
    goal_positions: np.ndarray   # (len(goal_ids), 2) relative to ego


def _nearest_indices(dist_row: np.ndarray, self_idx: int | None, k: int) -> np.ndarray:
    """Indices of the k smallest distances, excluding self, ties to smaller index."""
    d = dist_row.copy()
    if self_idx is not None:
        d[self_idx] = np.inf
    order = np.argsort(d, kind="stable")
    m = min(k, (d < np.inf).sum())
    return order[:m]


def _pairwise_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def knn_graph(positions, k: int) -> CommGraph:
    """Directed kNN adjacency: S[i, j] = 1 iff j is among the k nearest to i."""
    x = np.asarray(positions, np.float64)
    n = x.shape[0]
    adj = np.zeros((n, n))
    if k > 0 and n > 1:
        dist = _pairwise_dist(x, x)
        np.fill_diagonal(dist, np.inf)
        m = min(k, n - 1)
        # stable argsort keeps index order among exact distance ties
        nearest = np.argsort(dist, axis=1, kind="stable")[:, :m]
        adj[np.arange(n)[:, None], nearest] = 1.0
    return CommGraph(adjacency=adj, k=k)


def build_observations(state: WorldState, goals: GoalSet, params: SimParams) -> np.ndarray:
    """Per-agent rows [own last control | k nearest agents rel | k nearest goals rel].

    Neighbor and goal blocks are sorted by ascending distance (index breaks
    ties) and zero-padded when fewer than k entities exist.
    """
    x = state.positions
    n = x.shape[0]
    k = params.k_neighbors
    obs = np.zeros((n, 2 * (1 + 2 * k)))
    obs[:, :2] = state.last_controls

    if k == 0:
        return obs
    agent_dist = _pairwise_dist(x, x)
    goal_dist = _pairwise_dist(x, goals.positions)
    for i in range(n):
        nbrs = _nearest_indices(agent_dist[i], i, k)
        block = (x[nbrs] - x[i]).ravel()
        obs[i, 2:2 + block.size] = block
        gidx = _nearest_indices(goal_dist[i], None, k)
        gblock = (goals.positions[gidx] - x[i]).ravel()
        obs[i, 2 + 2 * k:2 + 2 * k + gblock.size] = gblock
    return obs


def observation_dim(k_neighbors: int) -> int:
    return 2 * (1 + 2 * k_neighbors)


def d_hop_view(graph: CommGraph, state: WorldState, goals: GoalSet,
               params: SimParams, d: int, ego: int,
               goal_hops: int | None = None) -> DHopView:
    """All agents within d hops of ego (following kNN edges outward from ego),
    and the union of the k-nearest-goal observations of agents within
    `goal_hops` hops (default d, i.e. every agent in the view contributes).

    `goal_hops=d-1` gives the stricter reading where goal knowledge needs an
    exchange to propagate: with d=1 the ego knows only its own observed goals.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if goal_hops is None:
        goal_hops = d
    adj = graph.adjacency
    n = adj.shape[0]
    hop = np.full(n, -1, np.int64)
    hop[ego] = 0
    frontier = np.zeros(n, bool)
    frontier[ego] = True
    for level in range(1, d + 1):
        nxt = (adj[frontier].sum(axis=0) > 0) & (hop < 0)
        if not nxt.any():
            break
        hop[nxt] = level
        frontier = nxt

    agent_ids = np.flatnonzero(hop >= 0)
    contributors = np.flatnonzero((hop >= 0) & (hop <= goal_hops))
    goal_dist = _pairwise_dist(state.positions[contributors], goals.positions)
    goal_known = np.zeros(goals.positions.shape[0], bool)
    for row in range(len(contributors)):
        gidx = _nearest_indices(goal_dist[row], None, params.k_neighbors)
        goal_known[gidx] = True
    goal_ids = np.flatnonzero(goal_known)

    origin = state.positions[ego]
    return DHopView(
        ego=ego,
        agent_ids=agent_ids,
        agent_positions=state.positions[agent_ids] - origin,
        goal_ids=goal_ids,
        goal_positions=goals.positions[goal_ids] - origin,
    )
