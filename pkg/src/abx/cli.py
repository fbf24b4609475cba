"""Command-line entry point.

    abx coverage --methods random,rnd,ab_rnd --runs 100 --seed 7 --out out/
    abx goal --runs 100 --jobs 4
    abx entropy --episodes 50
    abx demo
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from abx.agent import Agent
from abx.config import load_config
from abx.errors import ConfigurationError, UsageError
from abx.gridworld import ACTION_NAMES, GridWorld
from abx.harness import (
    goal_table, run_coverage, run_entropy, run_goal, write_coverage, write_entropy, write_goal,
)

SUBCOMMANDS = ("coverage", "goal", "entropy", "demo")


@dataclass
class CliInvocation:
    subcommand: str
    config_path: Optional[str] = None
    overrides: list = field(default_factory=list)
    out_dir: str = "out"
    base_seed: Optional[int] = None
    runs: Optional[int] = None
    jobs: Optional[int] = None


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _override(text: str) -> str:
    if "=" not in text or not text.split("=", 1)[0].strip():
        raise argparse.ArgumentTypeError(f"override must look like key=value, got {text!r}")
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abx", description="Action-balance exploration grid experiments.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", dest="config_path", help="key=value config file")
    parser.add_argument("--set", dest="overrides", action="append", type=_override, default=[],
                        metavar="KEY=VALUE", help="config override, repeatable")
    parser.add_argument("--methods", help="comma-separated methods (random, rnd, ab, ab_rnd)")
    parser.add_argument("--endpoints", help="goal endpoints as 'x,y;x,y;...'")
    parser.add_argument("--runs", type=_positive)
    parser.add_argument("--episodes", type=_positive)
    parser.add_argument("--seed", dest="base_seed", type=int)
    parser.add_argument("--jobs", type=_positive, help="max concurrent runs (default: CPU count)")
    parser.add_argument("--out", dest="out_dir", help="output directory (default: $ABX_OUT_DIR or ./out)")
    return parser


def parse_invocation(argv: Sequence[str] | None = None) -> CliInvocation:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.methods:
        overrides.append(f"experiment.methods={args.methods}")
    if args.endpoints:
        overrides.append(f"experiment.endpoints={args.endpoints}")
    if args.episodes:
        overrides.append(f"experiment.episodes={args.episodes}")
    if args.runs:
        overrides.append(f"experiment.runs={args.runs}")
    if args.base_seed is not None:
        overrides.append(f"experiment.base_seed={args.base_seed}")
    out_dir = args.out_dir or os.environ.get("ABX_OUT_DIR") or "out"
    return CliInvocation(args.subcommand, args.config_path, overrides, out_dir,
                         args.base_seed, args.runs, args.jobs)


def _jobs(inv: CliInvocation, runs: int) -> int:
    jobs = inv.jobs or os.cpu_count() or 1
    return max(1, min(jobs, runs))


def _demo(inv: CliInvocation) -> int:
    _, env_cfg, agent_cfg = load_config(inv.config_path, inv.overrides, "coverage")
    seed = inv.base_seed or 0
    env = GridWorld(replace(env_cfg, goal=None))
    env.reset()
    agent = Agent(replace(agent_cfg, method="action_balance_rnd", seed=seed), env.config)
    print("episode\tstep\tx\ty\taction\tbehavior_prob\tbonus_vector\tr_prime")
    for episode in range(5):
        rollout = agent.collect_rollout(env, max_steps=env.config.max_episode_len)
        for t, tr in enumerate(rollout):
            bonus = agent.balancer.bonus_vector(
                np.array([tr.state[0] / env.config.width, tr.state[1] / env.config.height]))
            vec = ",".join(f"{b:.4g}" for b in bonus.values)
            print(f"{episode}\t{t}\t{tr.state[0]}\t{tr.state[1]}\t{ACTION_NAMES[tr.action]}\t"
                  f"{tr.behavior_prob:.4f}\t{vec}\t{tr.reward:.4f}")
        report = agent.update(rollout)
        print(f"# episode {episode}: l_t={report.total_loss:.5f} "
              f"mean_bonus_entropy={report.mean_bonus_entropy:.4f}")
    return 0


def run(inv: CliInvocation) -> int:
    try:
        if inv.subcommand == "demo":
            return _demo(inv)
        spec, env_cfg, agent_cfg = load_config(inv.config_path, inv.overrides, inv.subcommand)
        out = Path(inv.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        jobs = _jobs(inv, spec.runs)
        if spec.kind == "coverage":
            results = run_coverage(spec, env_cfg, agent_cfg, jobs)
            write_coverage(out, results, env_cfg.num_states)
            for m, res in results.items():
                cells = np.mean([r.unique_cells for r in res.runs])
                print(f"{m}: final R_s={res.curve.coverage[-1]:.4f} "
                      f"({cells:.1f} cells) over {len(res.runs)} runs")
            return 0
        if spec.kind == "goal":
            results = run_goal(spec, env_cfg, agent_cfg, jobs)
            write_goal(out, results, spec.methods, spec.endpoints)
            censored = 0
            for row in goal_table(results, spec.methods, spec.endpoints):
                if row[1] == "average":
                    print(f"{row[0]}: mean steps to endpoint {row[3]:.1f} "
                          f"(median {row[4]:.1f}, censored {row[7]})")
                    censored += row[7]
            if censored and not spec.allow_censored:
                print(f"error: {censored} runs hit the step cap", file=sys.stderr)
                return 3
            return 0
        curves = run_entropy(spec, env_cfg, agent_cfg, jobs)
        write_entropy(out, curves)
        for emb, curve in curves.items():
            print(f"{emb}: bonus entropy {curve[0]:.4f} -> {curve[-1]:.4f} over {len(curve)} updates")
        return 0
    except (ConfigurationError, UsageError) as exc:
        print(f"abx {inv.subcommand}: {exc}", file=sys.stderr)
        return 2


def main(argv: Sequence[str] | None = None) -> int:
    return run(parse_invocation(argv))


if __name__ == "__main__":
    sys.exit(main())
