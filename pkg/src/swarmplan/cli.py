"""Command-line entry point: simulate, train-il, train-rl, sweep, plot.

Configuration is a TOML file with [sim], [policy], [train], [rl] sections;
every hyperparameter has a named key whose default matches the reference
evaluation protocol. Command-line flags override config values.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .world import SimParams

_SIM_KEYS = {
    "n_agents", "width", "agent_radius", "coverage_radius", "max_speed",
    "dt", "horizon_steps", "k_neighbors", "gamma", "near_collision_factor",
}


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _sim_params(cfg: dict) -> SimParams:
    sim = dict(cfg.get("sim", {}))
    density = sim.pop("density", None)
    unknown = set(sim) - _SIM_KEYS
    if unknown:
        raise SystemExit(f"unknown [sim] keys: {sorted(unknown)}")
    if density is not None:
        n = sim.pop("n_agents", 100)
        return SimParams.from_density(n, density, **sim)
    return SimParams(**sim)


def _add_common(p):
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--threads", type=int, default=1)


def _cmd_simulate(args):
    from .harness import simulate_command

    cfg = _load_config(args.config)
    params = _sim_params(cfg)
    policy_cfg = cfg.get("policy", {})
    policies = args.policy or policy_cfg.get("names") or [policy_cfg.get("name", "lsap")]
    if isinstance(policies, str):
        policies = [policies]
    episodes = args.episodes or cfg.get("episodes", 50)
    summaries = simulate_command(
        policies, params, args.seed, episodes, args.out,
        threads=args.threads, checkpoint=args.checkpoint or policy_cfg.get("checkpoint"),
        write_traces=not args.no_traces,
    )
    for s in summaries:
        print(f"{s['policy']}: discounted coverage "
              f"{s['discounted_coverage_mean']:.4f} +- {s['discounted_coverage_std']:.4f}, "
              f"collisions step-pair {s['collisions_step_pair_mean']:.2f}, "
              f"events {s['collisions_events_mean']:.2f}")


def _net_config(cfg: dict, params: SimParams):
    from .comm import observation_dim
    from .gnn import GnnConfig

    train = cfg.get("train", {})
    return GnnConfig(
        input_dim=observation_dim(params.k_neighbors),
        output_dim=2,
        num_layers=train.get("num_layers", 5),
        taps=train.get("taps", 3),
        features=train.get("features", 128),
        mlp_hidden=train.get("mlp_hidden", 256),
        mlp_depth=train.get("mlp_depth", 3),
        nonlinearity=train.get("nonlinearity", "leaky_relu"),
        action_squash=True,
        squash_scale=params.max_speed,
    )


def _cmd_train_il(args):
    from .harness import training_curves_csv
    from .training import IlConfig, il_train

    cfg = _load_config(args.config)
    params = _sim_params(cfg)
    net_config = _net_config(cfg, params)
    train = cfg.get("train", {})
    il_keys = {f.name for f in dataclasses.fields(IlConfig)}
    il_cfg = IlConfig(**{k: v for k, v in train.items() if k in il_keys})
    if args.episodes:
        il_cfg = dataclasses.replace(il_cfg, episodes_per_epoch=args.episodes)
    _, metrics = il_train(params, net_config, il_cfg, args.seed, args.out)
    training_curves_csv(
        metrics, f"{args.out}/curves.csv",
        per_agent_divisor=params.n_agents * (params.horizon_steps + 1))
    print(f"IL training finished: final coverage {metrics[-1]['coverage']:.4f}, "
          f"checkpoint {args.out}/final.ckpt")


def _cmd_train_rl(args):
    from .gnn import load_checkpoint
    from .harness import training_curves_csv
    from .training import Td3Config, td3_train

    cfg = _load_config(args.config)
    params = _sim_params(cfg)
    rl = {**cfg.get("train", {}), **cfg.get("rl", {})}
    td3_keys = {f.name for f in dataclasses.fields(Td3Config)}
    td3 = Td3Config(**{k: v for k, v in rl.items() if k in td3_keys})
    actor_params, actor_config = load_checkpoint(args.checkpoint)
    _, metrics = td3_train(params, actor_params, actor_config, td3, args.seed, args.out)
    training_curves_csv(
        metrics, f"{args.out}/curves.csv",
        per_agent_divisor=params.n_agents * (params.horizon_steps + 1))
    print(f"RL fine-tuning finished: final coverage {metrics[-1]['coverage']:.4f}, "
          f"checkpoint {args.out}/final.ckpt")


def _cmd_sweep(args):
    from .harness import sweep_command

    cfg = _load_config(args.config)
    sweep = cfg.get("sweep", {})
    n_values = args.agents or sweep.get("n_values", [20, 50, 100, 200, 500])
    densities = args.densities or sweep.get("densities", [0.2, 0.5, 1.0, 2.0, 5.0])
    sim_overrides = {k: v for k, v in cfg.get("sim", {}).items()
                     if k in _SIM_KEYS - {"n_agents", "width"}}
    policy = args.policy[0] if args.policy else cfg.get("policy", {}).get("name", "lsap")
    episodes = args.episodes or cfg.get("episodes", 50)
    sweep_command(policy, list(n_values), list(densities), args.seed, episodes,
                  args.out, threads=args.threads, checkpoint=args.checkpoint,
                  sim_overrides=sim_overrides)
    print(f"sweep written to {args.out}")


def _cmd_plot(args):
    from .plotting import heatmap_svg, line_chart_svg

    with open(args.csv, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise SystemExit("CSV has no data rows")
    header, data = rows[0], rows[1:]
    if args.kind == "lines":
        x = [float(r[0]) for r in data]
        series = []
        col = 1
        while col < len(header):
            label = header[col].removesuffix("_mean")
            mean = [float(r[col]) for r in data]
            std = None
            if col + 1 < len(header) and header[col + 1].endswith("_std"):
                std = [float(r[col + 1]) for r in data]
                col += 1
            series.append({"label": label, "x": x, "mean": mean, "std": std})
            col += 1
        svg = line_chart_svg(series, header[0], args.ylabel, title=args.title)
    else:
        row_labels = [r[0] for r in data]
        values = [[float(v) for v in r[1:]] for r in data]
        svg = heatmap_svg(values, row_labels, header[1:], args.xlabel,
                          header[0], title=args.title)
    with open(args.out, "w") as fh:
        fh.write(svg)
    print(f"wrote {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmplan",
        description="Unlabeled multi-robot motion planning experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="evaluate policies over seeded episodes")
    _add_common(p)
    p.add_argument("--policy", action="append",
                   help="policy name (lsap, capt, dhop:<d>, gnn:<ckpt>); repeatable")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--no-traces", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train-il", help="imitation learning from the expert")
    _add_common(p)
    p.add_argument("--episodes", type=int, default=None,
                   help="episodes collected per epoch")
    p.set_defaults(func=_cmd_train_il)

    p = sub.add_parser("train-rl", help="TD3 fine-tuning of a pretrained actor")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="pretrained actor checkpoint")
    p.set_defaults(func=_cmd_train_rl)

    p = sub.add_parser("sweep", help="grid over agent count and density")
    _add_common(p)
    p.add_argument("--policy", action="append")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--agents", type=int, nargs="+", default=None)
    p.add_argument("--densities", type=float, nargs="+", default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("plot", help="render a CSV as a deterministic SVG")
    p.add_argument("csv")
    p.add_argument("--kind", choices=["lines", "heatmap"], default="lines")
    p.add_argument("--out", required=True)
    p.add_argument("--title", default="")
    p.add_argument("--xlabel", default="")
    p.add_argument("--ylabel", default="")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    result = args.func(args)
    return 0 if result is None else result


if __name__ == "__main__":
    sys.exit(main())
