"""The GNN's reverse-mode gradients are written by hand. This demo verifies
them against central finite differences on a small random network, the same
check the test suite runs.

Run: python3 demos/03_gnn_gradient_check.py
"""

import numpy as np

from swarmplan.gnn import GnnConfig, gnn_backward, gnn_forward, init_params

cfg = GnnConfig(input_dim=3, output_dim=2, num_layers=2, taps=2, features=8,
                mlp_hidden=8, mlp_depth=2, nonlinearity="tanh",
                action_squash=True, squash_scale=0.5)
params = init_params(cfg, seed=0)
rng = np.random.default_rng(1)
n = 4
O = rng.normal(size=(n, cfg.input_dim))
S = (rng.uniform(size=(n, n)) < 0.5).astype(float)
W = rng.normal(size=(n, cfg.output_dim))  # loss = sum(W * U)

U, tape = gnn_forward(params, O, S, cfg)
grads, dO = gnn_backward(tape, W)


def loss(p, o):
    u, _ = gnn_forward(p, o, S, cfg)
    return float(np.sum(W * u))


eps = 1e-6
worst = 0.0
for name, val in params.items():
    num = np.zeros_like(val)
    flat, nflat = val.ravel(), num.ravel()
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        hi = loss(params, O)
        flat[j] = orig - eps
        lo = loss(params, O)
        flat[j] = orig
        nflat[j] = (hi - lo) / (2 * eps)
    scale = max(np.abs(grads[name]).max(), np.abs(num).max(), 1e-8)
    err = np.abs(grads[name] - num).max() / scale
    worst = max(worst, err)
    print(f"{name:22s} max rel err {err:.2e}")

num_dO = np.zeros_like(O)
flat, nflat = O.ravel(), num_dO.ravel()
for j in range(flat.size):
    orig = flat[j]
    flat[j] = orig + eps
    hi = loss(params, O)
    flat[j] = orig - eps
    lo = loss(params, O)
    flat[j] = orig
    nflat[j] = (hi - lo) / (2 * eps)
scale = max(np.abs(dO).max(), np.abs(num_dO).max(), 1e-8)
err = np.abs(dO - num_dO).max() / scale
worst = max(worst, err)
print(f"{'input O':22s} max rel err {err:.2e}")
print(f"\nworst relative error: {worst:.2e} (tolerance 1e-4)")
