"""TD3 fine-tuning of a pretrained policy: the reward's collision penalty
pushes the actor to trade a little coverage for far fewer collisions.

This is a scaled-down run; the acceptance-grade desk configuration lives in
tests/test_acceptance.py. It first trains a quick imitation policy to have
something to fine-tune.

Run: python3 demos/05_rl_finetune.py   (writes demos/out/rl/)
"""

import os

from swarmplan.comm import observation_dim
from swarmplan.gnn import GnnConfig, load_checkpoint
from swarmplan.training import IlConfig, Td3Config, il_train, td3_train

base = os.path.join(os.path.dirname(__file__), "out", "rl")
from swarmplan.world import SimParams

params = SimParams.from_density(10, 1.0)
net = GnnConfig(input_dim=observation_dim(params.k_neighbors), output_dim=2,
                num_layers=2, taps=3, features=32, mlp_hidden=64, mlp_depth=2,
                squash_scale=params.max_speed)

print("pretraining with imitation (5 epochs)...")
il_cfg = IlConfig(epochs=5, episodes_per_epoch=6, steps_per_epoch=30,
                  batch_size=256, lr=1.5e-3, eval_episodes=5,
                  save_checkpoints=False)
il_train(params, net, il_cfg, seed=0, run_dir=os.path.join(base, "il"))
actor_params, actor_cfg = load_checkpoint(os.path.join(base, "il", "best.ckpt"))

print("fine-tuning with TD3 (12 epochs: critics warm up frozen, then the "
      "actor learns)...")
# Small-scale recipe: a short RL horizon makes the critic a collision
# avoidance regression, wide exploration lets it see braking/veering
# actions, and the behavior-cloning tether to the pretrained actor keeps
# the collision penalty from collapsing the policy into freezing in place.
td3 = Td3Config(total_epochs=12, actor_freeze_epochs=4, lr_interp_epochs=4,
                episodes_per_epoch=4, steps_per_epoch=20, batch_size=256,
                eval_episodes=5, actor_lr_end=4e-5, rl_gamma=0.5,
                exploration_sigma=0.3, bc_weight=6.0, q_scale=1.2)
_, metrics = td3_train(params, actor_params, actor_cfg, td3, seed=0,
                       run_dir=os.path.join(base, "td3"))
for m in metrics:
    print(f"  epoch {m['epoch']:2d}  actor_lr {m['actor_lr']:.1e}  "
          f"critic_loss {m['critic_loss']:.4f}  "
          f"dcov {m['discounted_coverage']:.3f}  "
          f"collision step-pairs {m['collisions_step_pair']:.0f}")

first, last = metrics[0], metrics[-1]
print(f"\ncollision step-pairs {first['collisions_step_pair']:.0f} -> "
      f"{last['collisions_step_pair']:.0f}, "
      f"discounted coverage {first['discounted_coverage']:.3f} -> "
      f"{last['discounted_coverage']:.3f}")
