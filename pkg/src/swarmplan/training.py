"""Imitation learning against the centralized assignment expert and TD3 fine-tuning.

Includes the replay buffers, the AdamW optimizer, the per-agent reward, and the
episode-collection loops. Per-agent rewards/values share one set of network
parameters; critics are always evaluated on the whole graph so message passing
is preserved.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import gnn
from .assignment import lsap_assignment
from .comm import build_observations, knn_graph, observation_dim
from .policies import GnnPolicy, goal_seek_controls
from .world import (
    GoalSet,
    SimParams,
    WorldState,
    clamp_controls,
    collision_counts,
    discounted_coverage,
    run_episode,
    sample_initial,
    step,
)

__all__ = [
    "IlSample",
    "RlTransition",
    "ReplayBuffer",
    "AdamW",
    "Td3Config",
    "IlConfig",
    "reward",
    "collect_il_episode",
    "il_train",
    "td3_train",
    "evaluate_policy",
]


@dataclass(frozen=True)
class IlSample:
    O: np.ndarray       # (N, obs_dim)
    S: np.ndarray       # (N, N)
    U_star: np.ndarray  # (N, 2) expert controls for the visited state


@dataclass(frozen=True)
class RlTransition:
    O: np.ndarray
    S: np.ndarray
    U: np.ndarray
    R: np.ndarray       # (N,) per-agent rewards
    O_next: np.ndarray
    S_next: np.ndarray
    done: bool
    U_star: np.ndarray | None = None  # expert controls at the visited state


class ReplayBuffer:
    """Bounded FIFO ring with uniform without-replacement batch sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items = []
        self._next = 0

    def __len__(self):
        return len(self._items)

    def add(self, item):
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
            self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator):
        n = len(self._items)
        if n == 0:
            raise ValueError("cannot sample from an empty buffer")
        k = min(batch_size, n)
        idx = rng.choice(n, size=k, replace=False)
        return [self._items[i] for i in idx]


class AdamW:
    """Decoupled-weight-decay Adam over a dict of parameter arrays."""

    def __init__(self, lr=5e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-8):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict) -> None:
        """In-place update: p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)."""
        b1, b2 = self.betas
        self.t += 1
        bc1 = 1 - b1 ** self.t
        bc2 = 1 - b2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"grad shape mismatch for {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                            + self.weight_decay * p)


@dataclass(frozen=True)
class Td3Config:
    """TD3 fine-tuning hyperparameters; defaults follow the reference protocol."""

    tau: float = 0.005
    policy_delay: int = 2
    target_noise_sigma: float = 0.2    # fraction of u_max
    target_noise_clip: float = 0.5     # fraction of u_max
    exploration_sigma: float = 0.1     # fraction of u_max
    rl_gamma: float = 0.99
    alpha: float = 30.0                # collision penalty weight
    beta: float = 0.1                  # reward length scale, meters
    actor_freeze_epochs: int = 100
    lr_interp_epochs: int = 50
    total_epochs: int = 500
    critic_lr_start: float = 1e-4
    critic_lr_end: float = 5e-5
    actor_lr_end: float = 1e-5
    batch_size: int = 512
    buffer_capacity: int = 100_000
    episodes_per_epoch: int = 100
    steps_per_epoch: int | None = None  # default: episode samples / batch, rounded up
    eval_episodes: int = 10
    # Behavior-cloning anchor (TD3+BC style). 0 disables it; > 0 adds
    # bc_weight * MSE(u_pi, u_ref) to the actor loss, with the Q term
    # normalized by mean |Q1| so the two terms stay comparable. bc_mode
    # selects the reference: "pretrained" anchors to the actor the fine-tune
    # started from; "expert" anchors to the centralized expert's controls at
    # the visited states (demonstration-regularized TD3).
    bc_weight: float = 0.0
    q_scale: float = 1.0
    bc_mode: str = "pretrained"
    # Early-stopping rule for best.ckpt: among post-freeze epochs whose eval
    # collision step-pair total is at most (1 - target_reduction) times the
    # freeze-phase mean, keep the one with the highest discounted coverage.
    target_reduction: float = 0.5

    def __post_init__(self):
        if not (0 < self.tau <= 1):
            raise ValueError("tau must be in (0, 1]")
        if self.bc_mode not in ("pretrained", "expert"):
            raise ValueError("bc_mode must be 'pretrained' or 'expert'")

    def learning_rates(self, epoch: int) -> tuple[float, float]:
        """(actor_lr, critic_lr) under the freeze-then-interpolate schedule."""
        if epoch < self.actor_freeze_epochs:
            return 0.0, self.critic_lr_start
        frac = min(1.0, (epoch - self.actor_freeze_epochs) / max(1, self.lr_interp_epochs))
        actor = frac * self.actor_lr_end
        critic = self.critic_lr_start + frac * (self.critic_lr_end - self.critic_lr_start)
        return actor, critic


@dataclass(frozen=True)
class IlConfig:
    epochs: int = 161
    episodes_per_epoch: int = 100
    batch_size: int = 512
    lr: float = 5e-4
    lr_end: float | None = None        # cosine-decay floor; None keeps lr constant
    weight_decay: float = 1e-8
    buffer_capacity: int = 100_000
    mix_ratio: float = 0.5             # probability of applying the expert control
    steps_per_epoch: int | None = None
    eval_episodes: int = 10
    save_checkpoints: bool = True


def reward(state: WorldState, goals: GoalSet, params: SimParams,
           alpha: float = 30.0, beta: float = 0.1) -> np.ndarray:
    """r_i = exp(-d_i^2 / beta^2) - alpha * p_i with d_i from the current
    linear-distance assignment (centralized; training-time only)."""
    assignment = lsap_assignment(state.positions, goals.positions)
    targets = goals.positions[assignment.goal_of]
    d = np.linalg.norm(targets - state.positions, axis=-1)
    p = collision_counts(state, params)
    return np.exp(-(d * d) / (beta * beta)) - alpha * p


def _expert_controls(state: WorldState, goals: GoalSet, params: SimParams) -> np.ndarray:
    assignment = lsap_assignment(state.positions, goals.positions)
    targets = goals.positions[assignment.goal_of]
    return goal_seek_controls(state.positions, targets, params)


def collect_il_episode(actor, mix_ratio: float, params: SimParams, seed,
                       buffer: ReplayBuffer) -> int:
    """Roll one episode; store (O, S, U_expert) for every visited state.

    The applied control is the expert's with probability mix_ratio (per-step
    coin flip), else the actor's. `actor=None` forces pure expert rollouts.
    Returns the number of stored samples.
    """
    if not (0 <= mix_ratio <= 1):
        raise ValueError("mix_ratio must be in [0, 1]")
    rng = np.random.default_rng(seed)
    state, goals = sample_initial(params, rng.integers(2**63))
    stored = 0
    for _ in range(params.horizon_steps):
        obs = build_observations(state, goals, params)
        adj = knn_graph(state.positions, params.k_neighbors).adjacency
        u_star = _expert_controls(state, goals, params)
        buffer.add(IlSample(obs, adj, u_star))
        stored += 1
        use_expert = actor is None or rng.random() < mix_ratio
        if use_expert:
            u = u_star
        else:
            u, _ = gnn.gnn_forward(actor.params, obs, adj, actor.config)
        state = step(state, clamp_controls(u, params), params)
    return stored


@dataclass
class _Net:
    """Parameter/config bundle used by the training loops."""

    params: dict
    config: gnn.GnnConfig

    def copy(self) -> "_Net":
        return _Net({k: v.copy() for k, v in self.params.items()}, self.config)


def _batch_forward(net: _Net, samples, extra_u=None):
    O = np.stack([s.O for s in samples])
    S = np.stack([s.S for s in samples])
    if extra_u is not None:
        O = np.concatenate([O, extra_u], axis=-1)
    return gnn.gnn_forward(net.params, O, S, net.config)


def evaluate_policy(actor: _Net, params: SimParams, seeds) -> dict:
    """Mean episode metrics of the deterministic actor over the given seeds."""
    pol = GnnPolicy(actor.params, actor.config, params)
    covs, dcovs, steppair, events, near = [], [], [], [], []
    for seed in seeds:
        state, goals = sample_initial(params, seed)
        tr = run_episode(pol, state, goals, params)
        covs.append(float(tr.coverage.mean()))
        dcovs.append(discounted_coverage(tr, params))
        steppair.append(tr.collisions_step_pair_total)
        events.append(tr.collision_events)
        near.append(tr.near_collisions_step_pair_total)
    return {
        "coverage": float(np.mean(covs)),
        "discounted_coverage": float(np.mean(dcovs)),
        "collisions_step_pair": float(np.mean(steppair)),
        "collisions_events": float(np.mean(events)),
        "near_collisions": float(np.mean(near)),
    }


def _write_metrics_row(path, row: dict, write_header: bool):
    mode = "w" if write_header else "a"
    with open(path, mode, newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row))
        if write_header:
            writer.writeheader()
        writer.writerow(row)


def il_train(sim_params: SimParams, net_config: gnn.GnnConfig, cfg: IlConfig,
             seed, run_dir, initial_params: dict | None = None) -> tuple[dict, list[dict]]:
    """Imitation learning: collect mixed rollouts, minimize batch-mean squared
    control error against the expert. Returns (params, per-epoch metrics)."""
    os.makedirs(run_dir, exist_ok=True)
    os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w") as fh:
        json.dump({"sim": sim_params.__dict__, "net": net_config.to_dict(),
                   "il": cfg.__dict__, "seed": int(seed)}, fh, indent=2, sort_keys=True)

    rng = np.random.default_rng([seed, 0xD5])
    params = initial_params or gnn.init_params(net_config, [seed, 0x11])
    actor = _Net(params, net_config)
    opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
    buffer = ReplayBuffer(cfg.buffer_capacity)

    metrics = []
    metrics_path = os.path.join(run_dir, "metrics.csv")
    best_dcov = -np.inf
    for epoch in range(cfg.epochs):
        if cfg.lr_end is not None and cfg.epochs > 1:
            frac = epoch / (cfg.epochs - 1)
            opt.lr = cfg.lr_end + 0.5 * (cfg.lr - cfg.lr_end) * (1 + math.cos(math.pi * frac))
        fresh = 0
        for _ in range(cfg.episodes_per_epoch):
            fresh += collect_il_episode(actor, cfg.mix_ratio, sim_params,
                                        rng.integers(2**63), buffer)
        n_steps = cfg.steps_per_epoch or math.ceil(fresh / cfg.batch_size)

        losses = []
        for _ in range(n_steps):
            samples = buffer.sample(cfg.batch_size, rng)
            U, tape = _batch_forward(actor, samples)
            U_star = np.stack([s.U_star for s in samples])
            diff = U - U_star
            b, n = diff.shape[0], diff.shape[1]
            loss = float(np.sum(diff * diff) / (b * n))
            if not np.isfinite(loss):
                raise FloatingPointError(f"IL loss diverged at epoch {epoch}")
            grads, _ = gnn.gnn_backward(tape, 2.0 * diff / (b * n))
            opt.step(actor.params, grads)
            losses.append(loss)

        eval_seeds = [[seed, 0xE7A1, epoch, i] for i in range(cfg.eval_episodes)]
        stats = evaluate_policy(actor, sim_params, eval_seeds)
        row = {"epoch": epoch, "loss": float(np.mean(losses)), **stats}
        metrics.append(row)
        _write_metrics_row(metrics_path, row, write_header=(epoch == 0))
        if cfg.save_checkpoints:
            gnn.save_checkpoint(actor.params, net_config,
                                os.path.join(run_dir, "checkpoints", f"epoch{epoch:04d}.ckpt"))
        if stats["discounted_coverage"] > best_dcov:
            best_dcov = stats["discounted_coverage"]
            gnn.save_checkpoint(actor.params, net_config,
                                os.path.join(run_dir, "best.ckpt"))
    gnn.save_checkpoint(actor.params, net_config, os.path.join(run_dir, "final.ckpt"))
    return actor.params, metrics


def _polyak(target: dict, source: dict, tau: float):
    for name in target:
        target[name] *= 1 - tau
        target[name] += tau * source[name]


def _clip_rows(u: np.ndarray, max_norm: float) -> np.ndarray:
    norms = np.linalg.norm(u, axis=-1, keepdims=True)
    scale = np.where(norms > max_norm, max_norm / np.maximum(norms, 1e-300), 1.0)
    return u * scale


def _critic_config(actor_config: gnn.GnnConfig) -> gnn.GnnConfig:
    """Critic GNN: per-node input [o_i, u_i], per-node scalar output, no squash."""
    return replace(actor_config,
                   input_dim=actor_config.input_dim + actor_config.output_dim,
                   output_dim=1, action_squash=False)


def collect_rl_episode(actor: _Net, params: SimParams, td3: Td3Config, seed,
                       buffer: ReplayBuffer) -> None:
    """Roll one exploration episode (actor + clipped Gaussian noise) and store
    per-step transitions. Time-limit truncation keeps done=False (bootstraps)."""
    rng = np.random.default_rng(seed)
    state, goals = sample_initial(params, rng.integers(2**63))
    obs = build_observations(state, goals, params)
    adj = knn_graph(state.positions, params.k_neighbors).adjacency
    sigma = td3.exploration_sigma * params.max_speed
    for _ in range(params.horizon_steps):
        u, _ = gnn.gnn_forward(actor.params, obs, adj, actor.config)
        u_star = _expert_controls(state, goals, params)
        u = _clip_rows(u + rng.normal(0.0, sigma, size=u.shape), params.max_speed)
        next_state = step(state, clamp_controls(u, params), params)
        r = reward(next_state, goals, params, td3.alpha, td3.beta)
        next_obs = build_observations(next_state, goals, params)
        next_adj = knn_graph(next_state.positions, params.k_neighbors).adjacency
        buffer.add(RlTransition(obs, adj, u, r, next_obs, next_adj, done=False,
                                U_star=u_star))
        state, obs, adj = next_state, next_obs, next_adj


def td3_train(sim_params: SimParams, actor_params: dict, actor_config: gnn.GnnConfig,
              td3: Td3Config, seed, run_dir) -> tuple[dict, list[dict]]:
    """TD3 fine-tuning of a pretrained actor. Returns (params, per-epoch metrics)."""
    os.makedirs(run_dir, exist_ok=True)
    os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w") as fh:
        json.dump({"sim": sim_params.__dict__, "net": actor_config.to_dict(),
                   "td3": td3.__dict__, "seed": int(seed)}, fh, indent=2, sort_keys=True)

    rng = np.random.default_rng([seed, 0x7D3])
    actor = _Net({k: v.copy() for k, v in actor_params.items()}, actor_config)
    actor_target = actor.copy()
    # frozen copy of the pretrained actor, used as the BC anchor when enabled
    actor_ref = (actor.copy()
                 if td3.bc_weight > 0 and td3.bc_mode == "pretrained" else None)
    critic_cfg = _critic_config(actor_config)
    critics = [_Net(gnn.init_params(critic_cfg, [seed, 0xC1 + i]), critic_cfg)
               for i in range(2)]
    critic_targets = [c.copy() for c in critics]

    actor_opt = AdamW(lr=0.0, weight_decay=1e-8)
    critic_opts = [AdamW(lr=td3.critic_lr_start, weight_decay=1e-8) for _ in critics]
    buffer = ReplayBuffer(td3.buffer_capacity)

    u_max = sim_params.max_speed
    metrics = []
    metrics_path = os.path.join(run_dir, "metrics.csv")
    update_counter = 0
    freeze_sp = []          # eval collision totals while the actor is frozen
    best_dcov = -1.0
    for epoch in range(td3.total_epochs):
        actor_lr, critic_lr = td3.learning_rates(epoch)
        actor_opt.lr = actor_lr
        for co in critic_opts:
            co.lr = critic_lr

        for _ in range(td3.episodes_per_epoch):
            collect_rl_episode(actor, sim_params, td3, rng.integers(2**63), buffer)
        fresh = td3.episodes_per_epoch * sim_params.horizon_steps
        n_steps = td3.steps_per_epoch or math.ceil(fresh / td3.batch_size)

        q_means, critic_losses = [], []
        for _ in range(n_steps):
            batch = buffer.sample(td3.batch_size, rng)
            O = np.stack([t.O for t in batch])
            S = np.stack([t.S for t in batch])
            U = np.stack([t.U for t in batch])
            R = np.stack([t.R for t in batch])
            O2 = np.stack([t.O_next for t in batch])
            S2 = np.stack([t.S_next for t in batch])
            not_done = np.array([0.0 if t.done else 1.0 for t in batch])[:, None]

            # target action with clipped smoothing noise, kept inside the speed limit
            u2, _ = gnn.gnn_forward(actor_target.params, O2, S2, actor_target.config)
            noise = rng.normal(0.0, td3.target_noise_sigma * u_max, size=u2.shape)
            noise = np.clip(noise, -td3.target_noise_clip * u_max,
                            td3.target_noise_clip * u_max)
            u2 = _clip_rows(u2 + noise, u_max)

            q_next = []
            for ct in critic_targets:
                qn, _ = gnn.gnn_forward(
                    ct.params, np.concatenate([O2, u2], axis=-1), S2, ct.config)
                q_next.append(qn[..., 0])
            y = R + td3.rl_gamma * not_done * np.minimum(*q_next)

            b, n = y.shape
            for critic, opt in zip(critics, critic_opts):
                q, tape = gnn.gnn_forward(
                    critic.params, np.concatenate([O, U], axis=-1), S, critic.config)
                td_err = q[..., 0] - y
                loss = float(np.sum(td_err * td_err) / (b * n))
                if not np.isfinite(loss) or abs(loss) > 1e12:
                    raise FloatingPointError(f"critic diverged at epoch {epoch}")
                grads, _ = gnn.gnn_backward(tape, (2.0 * td_err / (b * n))[..., None])
                opt.step(critic.params, grads)
                critic_losses.append(loss)

            update_counter += 1
            if update_counter % td3.policy_delay == 0:
                # actor ascends mean_i Q1; gradient flows through the critic's
                # action input slice back into the actor
                u_pi, actor_tape = gnn.gnn_forward(actor.params, O, S, actor.config)
                q1, critic_tape = gnn.gnn_forward(
                    critics[0].params, np.concatenate([O, u_pi], axis=-1), S,
                    critics[0].config)
                q_means.append(float(q1.mean()))
                if td3.bc_weight <= 0:
                    dq = -np.ones_like(q1) / (b * n)   # minimize -mean(Q1)
                    _, d_input = gnn.gnn_backward(critic_tape, dq)
                    du = d_input[..., actor.config.input_dim:]
                else:
                    # TD3+BC: minimize -lam*mean(Q1) + bc_weight*MSE(u, u_ref),
                    # with lam normalizing the Q term by its batch magnitude
                    lam = td3.q_scale / (float(np.abs(q1).mean()) + 1e-8)
                    dq = -lam * np.ones_like(q1) / (b * n)
                    _, d_input = gnn.gnn_backward(critic_tape, dq)
                    du = d_input[..., actor.config.input_dim:]
                    if td3.bc_mode == "expert":
                        u_ref = np.stack([t.U_star for t in batch])
                    else:
                        u_ref, _ = gnn.gnn_forward(actor_ref.params, O, S,
                                                   actor_ref.config)
                    du = du + 2.0 * td3.bc_weight * (u_pi - u_ref) / (b * n)
                actor_grads, _ = gnn.gnn_backward(actor_tape, du)
                if actor_opt.lr > 0:
                    actor_opt.step(actor.params, actor_grads)
                _polyak(actor_target.params, actor.params, td3.tau)
                for ct, c in zip(critic_targets, critics):
                    _polyak(ct.params, c.params, td3.tau)

        eval_seeds = [[seed, 0xE7A2, epoch, i] for i in range(td3.eval_episodes)]
        stats = evaluate_policy(actor, sim_params, eval_seeds)
        if actor_lr == 0.0:
            freeze_sp.append(stats["collisions_step_pair"])
        else:
            sp_bar = ((1.0 - td3.target_reduction) * float(np.mean(freeze_sp))
                      if freeze_sp else float("inf"))
            if (stats["collisions_step_pair"] <= sp_bar
                    and stats["discounted_coverage"] > best_dcov):
                best_dcov = stats["discounted_coverage"]
                gnn.save_checkpoint(actor.params, actor_config,
                                    os.path.join(run_dir, "best.ckpt"))
        row = {
            "epoch": epoch,
            "actor_lr": actor_lr,
            "critic_lr": critic_lr,
            "critic_loss": float(np.mean(critic_losses)) if critic_losses else 0.0,
            "q_mean": float(np.mean(q_means)) if q_means else 0.0,
            **stats,
        }
        metrics.append(row)
        _write_metrics_row(metrics_path, row, write_header=(epoch == 0))
        gnn.save_checkpoint(actor.params, actor_config,
                            os.path.join(run_dir, "checkpoints", f"actor{epoch:04d}.ckpt"))
        gnn.save_checkpoint(critics[0].params, critic_cfg,
                            os.path.join(run_dir, "checkpoints", f"critic{epoch:04d}.ckpt"))
    gnn.save_checkpoint(actor.params, actor_config, os.path.join(run_dir, "final.ckpt"))
    if best_dcov < 0:  # no epoch met the reduction target; fall back to final
        gnn.save_checkpoint(actor.params, actor_config,
                            os.path.join(run_dir, "best.ckpt"))
    return actor.params, metrics
