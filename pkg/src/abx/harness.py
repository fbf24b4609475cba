"""Seeded grid-world experiments: state coverage, goal reaching and
bonus-vector entropy, with CSV outputs.

Runs are independent (run i uses seed base_seed + i) and are the unit of
parallelism; results are gathered in submission order so outputs do not
depend on how many worker processes were used.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from abx.agent import Agent, AgentConfig, UPDATE_COLUMNS, UpdateReport, canonical_method
from abx.errors import ConfigurationError, UsageError
from abx.gridworld import EnvConfig, GridPos, GridWorld

log = logging.getLogger(__name__)

EXPERIMENTS = ("coverage", "goal", "entropy")
DEFAULT_ENDPOINTS = (GridPos(0, 20), GridPos(20, 0), GridPos(10, 20), GridPos(16, 16), GridPos(20, 10))
HEATMAP_STEPS = (1000, 2000, 3000, 4000)
ENTROPY_EMBEDDINGS = ("one_hot", "one_hot+channel")


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str = "coverage"
    methods: tuple = ("random", "rnd", "action_balance_rnd")
    runs: int = 100
    episodes: int = 100
    record_every: int = 10
    endpoints: tuple = DEFAULT_ENDPOINTS
    base_seed: int = 0
    step_cap: int = 100_000
    heatmap_steps: tuple = HEATMAP_STEPS
    embeddings: tuple = ENTROPY_EMBEDDINGS
    allow_censored: bool = True
    log_updates: bool = True

    def __post_init__(self):
        if self.kind not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}")
        object.__setattr__(self, "methods", tuple(canonical_method(m) for m in self.methods))
        object.__setattr__(self, "endpoints", tuple(GridPos(*e) for e in self.endpoints))
        for name in ("runs", "episodes", "record_every", "step_cap"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if not self.methods and self.kind != "entropy":
            raise ConfigurationError("at least one method is required")
        if self.kind == "goal" and not self.endpoints:
            raise ConfigurationError("goal experiments need at least one endpoint")


# -- metrics -----------------------------------------------------------------

@dataclass
class CoverageCurve:
    step_checkpoints: np.ndarray
    coverage: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if len(self.step_checkpoints) != len(self.coverage):
            raise UsageError("checkpoints and coverage differ in length")


@dataclass
class HeatmapGrid:
    counts: np.ndarray  # (height, width)
    steps: int


@dataclass
class Summary:
    n: int
    mean: float
    median: float
    q1: float
    q3: float


def aggregate(values: Iterable[float]) -> Summary:
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise UsageError("cannot summarize an empty sample")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return Summary(int(v.size), float(v.mean()), float(med), float(q1), float(q3))


def relative_increase(curve: CoverageCurve, baseline: CoverageCurve) -> list[Optional[float]]:
    """(curve - baseline) / baseline per checkpoint; None where the baseline is 0."""
    if not np.array_equal(curve.step_checkpoints, baseline.step_checkpoints):
        raise UsageError("curves are recorded at different checkpoints")
    return [None if b == 0 else float((c - b) / b)
            for c, b in zip(curve.coverage.tolist(), baseline.coverage.tolist())]


def first_crossing(rel: Sequence[Optional[float]], checkpoints) -> Optional[int]:
    """Earliest checkpoint at which the relative increase is above zero."""
    for r, step in zip(rel, checkpoints):
        if r is not None and r > 0:
            return int(step)
    return None


def mean_curve(checkpoints: np.ndarray, runs: Sequence[np.ndarray]) -> CoverageCurve:
    stack = np.stack(runs)
    return CoverageCurve(np.asarray(checkpoints), stack.mean(axis=0), stack.std(axis=0))


# -- single runs (module level so worker processes can pickle them) ----------

@dataclass
class CoverageRun:
    method: str
    seed: int
    checkpoints: np.ndarray
    coverage: np.ndarray
    unique_cells: int
    heatmaps: list
    updates: list = field(default_factory=list)


@dataclass
class GoalRun:
    method: str
    endpoint: GridPos
    seed: int
    steps: int
    censored: bool
    updates: list = field(default_factory=list)


@dataclass
class EntropyRun:
    embedding: str
    seed: int
    entropies: list


def coverage_run(method: str, seed: int, env_config: EnvConfig, agent_config: AgentConfig,
                 spec: ExperimentSpec) -> CoverageRun:
    if env_config.goal is not None:
        raise ConfigurationError("coverage runs use a grid without a goal")
    cfg = env_config
    env = GridWorld(cfg)
    start = env.reset()
    agent = Agent(replace(agent_config, method=method, seed=seed), cfg)
    total = spec.episodes * cfg.max_episode_len
    every = spec.record_every
    heat_at = set(s for s in spec.heatmap_steps if s <= total)

    width = cfg.width
    visited = bytearray(cfg.num_states)
    visited[start.y * width + start.x] = 1
    unique = 1
    heat = np.zeros(cfg.num_states, dtype=np.int64)
    checkpoints, coverage, heatmaps, updates = [], [], [], []
    steps = 0
    while steps < total:
        rollout = agent.collect_rollout(env, max_steps=min(agent.config.rollout_len, total - steps))
        for tr in rollout:
            steps += 1
            i = tr.next_state[1] * width + tr.next_state[0]
            heat[i] += 1
            if not visited[i]:
                visited[i] = 1
                unique += 1
            if steps % every == 0:
                checkpoints.append(steps)
                coverage.append(unique / cfg.num_states)
            if steps in heat_at:
                heatmaps.append(HeatmapGrid(heat.reshape(cfg.height, width).copy(), steps))
        updates.append(agent.update(rollout))
    return CoverageRun(method, seed, np.array(checkpoints), np.array(coverage), unique, heatmaps,
                       updates if spec.log_updates else [])


def goal_run(method: str, endpoint: GridPos, seed: int, env_config: EnvConfig,
             agent_config: AgentConfig, spec: ExperimentSpec) -> GoalRun:
    """Total environment steps, across auto-resetting episodes, until the agent
    first stands on the endpoint."""
    cfg = replace(env_config, goal=GridPos(*endpoint))
    env = GridWorld(cfg)
    env.reset()
    agent = Agent(replace(agent_config, method=method, seed=seed), cfg)
    steps, updates = 0, []
    while steps < spec.step_cap:
        budget = min(agent.config.rollout_len, spec.step_cap - steps)
        rollout = agent.collect_rollout(env, max_steps=budget, stop_on_goal=True)
        steps += len(rollout)
        if rollout[-1].reached_goal:
            return GoalRun(method, cfg.goal, seed, steps, False, updates)
        report = agent.update(rollout)
        if spec.log_updates:
            updates.append(report)
    return GoalRun(method, cfg.goal, seed, steps, True, updates)


def entropy_run(embedding: str, seed: int, env_config: EnvConfig, agent_config: AgentConfig,
                spec: ExperimentSpec) -> EntropyRun:
    env = GridWorld(replace(env_config, goal=None))
    env.reset()
    agent = Agent(replace(agent_config, method="action_balance_rnd", seed=seed, embedding=embedding),
                  env.config)
    entropies = []
    for _ in range(spec.episodes):
        report = agent.update(agent.collect_rollout(env))
        entropies.append(report.mean_bonus_entropy)
    return EntropyRun(embedding, seed, entropies)


def _call(task):
    fn, args = task
    return fn(*args)


def execute(tasks: list, jobs: int = 1) -> list:
    """Run (fn, args) tasks, serially or in a process pool; results keep task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [_call(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(_call, tasks))


# -- experiments ---------------------------------------------------------------

@dataclass
class CoverageResult:
    curve: CoverageCurve
    heatmaps: list  # HeatmapGrid with counts averaged over runs
    runs: list


@dataclass
class GoalResult:
    endpoint: GridPos
    steps: list
    censored: list
    summary: Summary
    runs: list


def run_coverage(spec: ExperimentSpec, env_config: EnvConfig, agent_config: AgentConfig,
                 jobs: int = 1) -> dict[str, CoverageResult]:
    if spec.kind != "coverage":
        raise ConfigurationError(f"run_coverage got a {spec.kind!r} spec")
    if env_config.goal is not None:
        raise ConfigurationError("coverage experiments use a grid without a goal")
    tasks = [(coverage_run, (m, spec.base_seed + i, env_config, agent_config, spec))
             for m in spec.methods for i in range(spec.runs)]
    records = execute(tasks, jobs)
    out = {}
    for j, m in enumerate(spec.methods):
        runs = records[j * spec.runs:(j + 1) * spec.runs]
        curve = mean_curve(runs[0].checkpoints, [r.coverage for r in runs])
        heatmaps = []
        for h, grid in enumerate(runs[0].heatmaps):
            mean = np.mean([r.heatmaps[h].counts for r in runs], axis=0)
            heatmaps.append(HeatmapGrid(mean, grid.steps))
        out[m] = CoverageResult(curve, heatmaps, runs)
    return out


def run_goal(spec: ExperimentSpec, env_config: EnvConfig, agent_config: AgentConfig,
             jobs: int = 1) -> dict[tuple[str, GridPos], GoalResult]:
    if spec.kind != "goal":
        raise ConfigurationError(f"run_goal got a {spec.kind!r} spec")
    for e in spec.endpoints:
        if not env_config.contains(e):
            raise ConfigurationError(f"endpoint {tuple(e)} lies outside the grid")
    tasks = [(goal_run, (m, e, spec.base_seed + i, env_config, agent_config, spec))
             for m in spec.methods for e in spec.endpoints for i in range(spec.runs)]
    records = execute(tasks, jobs)
    out = {}
    pos = 0
    for m in spec.methods:
        for e in spec.endpoints:
            runs = records[pos:pos + spec.runs]
            pos += spec.runs
            steps = [r.steps for r in runs]
            out[(m, e)] = GoalResult(e, steps, [r.censored for r in runs], aggregate(steps), runs)
    return out


def run_entropy(spec: ExperimentSpec, env_config: EnvConfig, agent_config: AgentConfig,
                jobs: int = 1) -> dict[str, np.ndarray]:
    """Mean bonus entropy per update (averaged over runs) for each embedding."""
    if spec.kind != "entropy":
        raise ConfigurationError(f"run_entropy got a {spec.kind!r} spec")
    tasks = [(entropy_run, (emb, spec.base_seed + i, env_config, agent_config, spec))
             for emb in spec.embeddings for i in range(spec.runs)]
    records = execute(tasks, jobs)
    out = {}
    for j, emb in enumerate(spec.embeddings):
        runs = records[j * spec.runs:(j + 1) * spec.runs]
        out[emb] = np.mean([r.entropies for r in runs], axis=0)
    return out


# -- output ------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write through a temporary file and rename so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])
    os.replace(tmp, path)
    return path


def write_updates(path, updates: Sequence[UpdateReport]) -> Path:
    return write_csv(path, UPDATE_COLUMNS, ([i, *u.row()] for i, u in enumerate(updates)))


def write_heatmap(path, grid: HeatmapGrid) -> Path:
    h, w = grid.counts.shape
    return write_csv(path, ["y"] + [f"x{x}" for x in range(w)],
                     ([y, *grid.counts[y].tolist()] for y in range(h)))


def write_coverage(out_dir, results: dict[str, CoverageResult], num_states: int) -> Path:
    root = Path(out_dir) / "coverage"
    baseline = results.get("random")
    crossings = {}
    summary = []
    for m, res in results.items():
        c = res.curve
        mdir = root / m
        write_csv(mdir / "curve.csv", ["checkpoint", "mean_R_s", "std_R_s"],
                  zip(c.step_checkpoints.tolist(), c.coverage.tolist(), c.std.tolist()))
        for grid in res.heatmaps:
            write_heatmap(mdir / f"heatmap_{grid.steps}.csv", grid)
        for r in res.runs:
            if r.updates:
                write_updates(mdir / "runs" / str(r.seed) / "updates.csv", r.updates)
        rel_final = None
        if baseline is not None:
            rel = relative_increase(c, baseline.curve)
            write_csv(mdir / "relative_increase.csv", ["checkpoint", "relative_increase"],
                      zip(c.step_checkpoints.tolist(), rel))
            crossings[m] = first_crossing(rel, c.step_checkpoints)
            rel_final = rel[-1]
        cells = [r.unique_cells for r in res.runs]
        summary.append([m, len(res.runs), float(c.coverage[-1]), float(c.std[-1]),
                        float(np.mean(cells)), rel_final, crossings.get(m)])
    write_csv(root / "summary.csv",
              ["method", "runs", "final_mean_R_s", "final_std_R_s", "final_mean_unique_cells",
               "final_relative_increase", "first_crossing_step"], summary)
    if "rnd" in crossings and "action_balance_rnd" in crossings:
        a, b = crossings["rnd"], crossings["action_balance_rnd"]
        ratio = None if a is None or b is None or b == 0 else a / b
        write_csv(root / "crossing.csv", ["rnd_first_crossing", "action_balance_rnd_first_crossing",
                                          "speedup"], [[a, b, ratio]])
    return root


def goal_table(results: dict[tuple[str, GridPos], GoalResult], methods: Sequence[str],
               endpoints: Sequence[GridPos]) -> list[list]:
    """Rows (method, endpoint, n, mean, median, q1, q3, censored): one per endpoint
    plus an 'average' row per method (mean of endpoint means, pooled quantiles)."""
    rows = []
    for m in methods:
        pooled, means, censored = [], [], 0
        for e in endpoints:
            r = results[(m, e)]
            s = r.summary
            rows.append([m, f"({e.x}, {e.y})", s.n, s.mean, s.median, s.q1, s.q3, sum(r.censored)])
            pooled.extend(r.steps)
            means.append(s.mean)
            censored += sum(r.censored)
        s = aggregate(pooled)
        rows.append([m, "average", s.n, float(np.mean(means)), s.median, s.q1, s.q3, censored])
    return rows


GOAL_COLUMNS = ["method", "endpoint", "runs", "mean", "median", "q1", "q3", "censored"]


def write_goal(out_dir, results, methods, endpoints) -> Path:
    root = Path(out_dir) / "goal"
    for (m, e), r in results.items():
        write_csv(root / m / f"goal_{e.x}_{e.y}.csv", ["run", "steps", "censored"],
                  ([i, s, int(c)] for i, (s, c) in enumerate(zip(r.steps, r.censored))))
        for run in r.runs:
            if run.updates:
                write_updates(root / m / "runs" / f"{e.x}_{e.y}_{run.seed}" / "updates.csv", run.updates)
    write_csv(root / "summary.csv", GOAL_COLUMNS, goal_table(results, methods, endpoints))
    return root


def write_entropy(out_dir, curves: dict[str, np.ndarray]) -> Path:
    root = Path(out_dir) / "entropy"
    rows = []
    for emb, curve in curves.items():
        write_csv(root / emb / "entropy.csv", ["update_index", "mean_entropy"], enumerate(curve.tolist()))
        rows.append([emb, len(curve), float(curve[0]), float(curve[-1]), float(np.mean(curve))])
    write_csv(root / "summary.csv", ["embedding", "updates", "first", "last", "mean"], rows)
    return root
