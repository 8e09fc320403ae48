"""swarmplan: unlabeled multi-robot motion planning.

Swarm simulator, optimal-assignment baselines (linear and squared-cost),
decentralized d-hop baselines, a graph-neural-network policy with built-in
gradients, imitation learning from the centralized assignment expert, and TD3
fine-tuning, plus a reproducible experiment harness.
"""

from .assignment import (
    Assignment,
    brute_force_assignment,
    capt_assignment,
    hungarian,
    lsap_assignment,
)
from .comm import CommGraph, DHopView, build_observations, d_hop_view, knn_graph
from .gnn import (
    GnnConfig,
    gnn_backward,
    gnn_forward,
    graph_conv_forward,
    init_params,
    residual_mlp_forward,
    load_checkpoint,
    save_checkpoint,
)
from .policies import CaptPolicy, DHopPolicy, GnnPolicy, LsapPolicy, make_policy
from .world import (
    EpisodeTrace,
    GoalSet,
    SimParams,
    WorldState,
    clamp_controls,
    collision_counts,
    coverage,
    discounted_coverage,
    near_collision_counts,
    run_episode,
    sample_initial,
    step,
)

__version__ = "0.1.0"
