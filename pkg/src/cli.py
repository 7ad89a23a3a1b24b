"""Command-line interface: oracles, environment inspection, training and evaluation."""

import argparse
import json
import logging
from pathlib import Path

import numpy as np
import uvicorn

from .api import app
from .config import PORT, TrainConfig
from .constants import DEFAULT_PERMUTATIONS, GRID_EVAL_EPISODES, GRID_MARBLES
from .ensemble import load_ensemble, train_ensemble, train_meta
from .evaluation import (
    NOVEL_COLORS,
    RISKY_COLORS,
    ensemble_disagreement,
    ensemble_stats_grids,
    eval_grid,
    eval_triangle,
    load_grid_policies,
    load_triangle_policies,
    mean_std_grids,
    risk_neutral_baseline_grid,
)
from .gridworld import reset_grid
from .learner import train
from .oracles import FIGURE_CASES, Agent, table1_choices, table1_rows
from .render import FORMATS, emit
from .risk_shaper import RiskMDP, solve_tabular
from .urns import Mode, Palette, Partition, sample_task

logger = logging.getLogger(__name__)

TRIANGLES = {"risky": RISKY_COLORS, "novel": NOVEL_COLORS}


def _print_json(payload) -> None:
    print(json.dumps(payload, indent=2))


def cmd_oracle_table1(args: argparse.Namespace) -> None:
    width = max(len(agent.value) for agent in Agent) + 2
    print("agent".ljust(width) + "".join(case.ljust(13) for case in FIGURE_CASES))
    for agent, row in zip(Agent, table1_choices()):
        print(agent.value.ljust(width) + "".join(choice.value.ljust(13) for choice in row))
    print()
    _print_json(table1_rows())


def cmd_env_sample(args: argparse.Namespace) -> None:
    rng = np.random.default_rng(args.seed)
    if args.env == "grid":
        state, _ = reset_grid(rng, Partition(args.partition), args.num_marbles)
        _print_json(
            {
                "partition": args.partition,
                "agent": list(state.agent),
                "horizon": state.horizon,
                "marbles": [{"position": list(pos), "color": color.value} for pos, color in sorted(state.marbles.items())],
            }
        )
        return
    task = sample_task(Partition(args.partition), Mode(args.mode), rng, testing=args.testing)
    _print_json(task.to_dict())


def cmd_risk_solve(args: argparse.Namespace) -> None:
    solution = solve_tabular(RiskMDP.load(args.mdp, beta=args.beta))
    _print_json(solution.to_dict())


def _train_config(args: argparse.Namespace) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.paper_scale:
        cfg = cfg.paper_scale()
    overrides = {
        name: value
        for name, value in (
            ("beta", args.beta),
            ("blue_reward", args.blue_reward),
            ("max_learner_steps", args.max_learner_steps),
        )
        if value is not None
    }
    if args.deterministic:
        overrides["deterministic"] = True
    return cfg.replace(**overrides)


def cmd_train(args: argparse.Namespace) -> None:
    cfg = _train_config(args)
    out = Path(args.out)

    if args.mode == "ensemble":
        seeds = args.seed if len(args.seed) > 1 else [args.seed[0] * 1000 + k for k in range(cfg.ensemble_size)]
        train_ensemble(cfg, seeds, out)
        return

    ensemble = None
    if args.mode == "meta":
        if args.ensemble_dir is None:
            raise ValueError("--ensemble-dir is required for --mode meta")
        ensemble = load_ensemble(args.ensemble_dir)

    for seed in args.seed:
        run_dir = out / f"seed_{seed}" if len(args.seed) > 1 else out
        if ensemble is not None:
            result = train_meta(ensemble, cfg, seed, run_dir)
        else:
            result = train(args.mode, cfg, seed, run_dir)
        logger.info(f"Seed {seed} finished after {result.learner_steps} learner steps")


def cmd_eval_triangle(args: argparse.Namespace) -> None:
    policies, metadata = load_triangle_policies(args.checkpoints, Mode(args.mode), args.stack, args.ensemble_dir)
    palette = Palette(blue=args.blue, yellow=args.yellow)
    partition = Partition.AMB_NOVEL if args.triangle == "novel" else Partition.RISKY
    report = eval_triangle(
        policies,
        Mode(args.mode),
        TRIANGLES[args.triangle],
        args.permutations,
        palette,
        partition,
        args.eval_seed,
        metadata,
    )
    emit(report, args.out, args.formats, stem=f"triangle_{args.mode}_{args.stack}")


def cmd_eval_grid(args: argparse.Namespace) -> None:
    policies = load_grid_policies(args.checkpoints, args.ensemble_dir)
    report = eval_grid(policies, episodes=args.episodes, seed=args.eval_seed, num_marbles=args.num_marbles)
    emit(report, args.out, args.formats, stem="grid_pickups")


def cmd_eval_baseline(args: argparse.Namespace) -> None:
    palette = Palette(blue=args.blue, yellow=args.yellow)
    colors = TRIANGLES[args.triangle]
    metadata = {"palette": {"blue": palette.blue, "yellow": palette.yellow}, "triangle": args.triangle}
    emit(risk_neutral_baseline_grid(palette, colors), args.out, args.formats, "baseline", metadata)
    mean, std = mean_std_grids(palette, colors)
    for grid, stem in ((mean, "reward_mean"), (std, "reward_std")):
        emit(grid, args.out, args.formats, stem, metadata)


def cmd_eval_ensemble(args: argparse.Namespace) -> None:
    ens = load_ensemble(args.ensemble_dir)
    disagreement = {p.value: ensemble_disagreement(ens, p, seed=args.eval_seed) for p in Partition}
    stats = ensemble_stats_grids(ens, permutations=args.permutations, seed=args.eval_seed)
    emit(stats, args.out, args.formats, "ensemble", {"disagreement": disagreement})
    logger.info(
        f"Ensemble disagreement {disagreement}; "
        f"std vs yellow count spearman {stats.spearman:.3f} (p={stats.p_value:.3g})"
    )


def cmd_serve(args: argparse.Namespace) -> None:
    uvicorn.run(app, host=args.host, port=args.port)


def _add_output_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", required=True, help="Output directory")
    parser.add_argument("--formats", nargs="+", choices=FORMATS, default=list(FORMATS))


def _add_palette_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--triangle", choices=sorted(TRIANGLES), default="risky")
    parser.add_argument("--blue", type=float, default=-1.0, help="Blue marble reward")
    parser.add_argument("--yellow", type=float, default=0.0, help="Yellow marble reward")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rameta", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True)

    oracle = commands.add_parser("oracle", help="Analytic choice oracles").add_subparsers(dest="oracle", required=True)
    oracle.add_parser("table1", help="Choices of every idealized agent on box pairs a-d").set_defaults(
        handler=cmd_oracle_table1
    )

    env = commands.add_parser("env", help="Inspect environments").add_subparsers(dest="env_command", required=True)
    sample = env.add_parser("sample", help="Dump one sampled task as JSON")
    sample.add_argument("--env", choices=("urn", "grid"), default="urn")
    sample.add_argument("--partition", choices=[p.value for p in Partition], default=Partition.RISKY.value)
    sample.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.DESCRIBED.value)
    sample.add_argument("--seed", type=int, default=0)
    sample.add_argument("--testing", action="store_true", help="Sample from the test-time distribution")
    sample.add_argument("--num-marbles", type=int, default=GRID_MARBLES)
    sample.set_defaults(handler=cmd_env_sample)

    risk = commands.add_parser("risk", help="Risk-sensitive planning").add_subparsers(dest="risk", required=True)
    solve = risk.add_parser("solve-tabular", help="Value iteration with the free-energy backup")
    solve.add_argument("--mdp", required=True, help="JSON file with transitions, rewards and discount")
    solve.add_argument("--beta", type=float, default=None)
    solve.set_defaults(handler=cmd_risk_solve)

    training = commands.add_parser("train", help="Train agents")
    training.add_argument("--mode", choices=("baseline", "risk", "ensemble", "meta"), required=True)
    training.add_argument("--config", help="Key-value run config file")
    training.add_argument("--seed", type=int, nargs="+", default=[0])
    training.add_argument("--out", required=True)
    training.add_argument("--ensemble-dir", help="Trained ensemble (meta mode)")
    training.add_argument("--paper-scale", action="store_true", help="Width 128, 1M learner steps, 20 ensemble members")
    training.add_argument("--deterministic", action="store_true", help="Single-threaded reproducible run")
    training.add_argument("--beta", type=float)
    training.add_argument("--blue-reward", type=float)
    training.add_argument("--max-learner-steps", type=int)
    training.set_defaults(handler=cmd_train)

    evaluation = commands.add_parser("eval", help="Evaluate agents").add_subparsers(dest="eval", required=True)
    triangle = evaluation.add_parser("triangle", help="Choice rates over all 66 urn compositions")
    triangle.add_argument("--mode", choices=[m.value for m in Mode], required=True)
    triangle.add_argument("--stack", choices=("plain", "meta"), default="plain")
    triangle.add_argument("--checkpoints", required=True)
    triangle.add_argument("--ensemble-dir")
    triangle.add_argument("--permutations", type=int, default=DEFAULT_PERMUTATIONS)
    triangle.add_argument("--eval-seed", type=int, default=0)
    _add_palette_args(triangle)
    _add_output_args(triangle)
    triangle.set_defaults(handler=cmd_eval_triangle)

    grid = evaluation.add_parser("grid", help="Gridworld pickup fractions with gray marbles")
    grid.add_argument("--checkpoints", required=True)
    grid.add_argument("--ensemble-dir", required=True)
    grid.add_argument("--episodes", type=int, default=GRID_EVAL_EPISODES)
    grid.add_argument("--num-marbles", type=int, default=GRID_MARBLES)
    grid.add_argument("--eval-seed", type=int, default=0)
    _add_output_args(grid)
    grid.set_defaults(handler=cmd_eval_grid)

    baseline = evaluation.add_parser("baseline", help="Risk-neutral choices and reward moments")
    _add_palette_args(baseline)
    _add_output_args(baseline)
    baseline.set_defaults(handler=cmd_eval_baseline)

    ensemble = evaluation.add_parser("ensemble", help="Ensemble mean/std maps and disagreement per partition")
    ensemble.add_argument("--ensemble-dir", required=True)
    ensemble.add_argument("--permutations", type=int, default=DEFAULT_PERMUTATIONS)
    ensemble.add_argument("--eval-seed", type=int, default=0)
    _add_output_args(ensemble)
    ensemble.set_defaults(handler=cmd_eval_ensemble)

    serve = commands.add_parser("serve", help="Run the HTTP API")
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=PORT)
    serve.set_defaults(handler=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    try:
        args.handler(args)
    except (ValueError, FileNotFoundError) as e:
        logger.error(f"{e}")
        return 1
    return 0
