"""Flat ``key=value`` experiment configuration.

One pair per line, ``#`` starts a comment. Keys are grouped by prefix::

    grid.width = 40
    grid.start = 0,0
    experiment.runs = 100
    experiment.endpoints = 0,20; 20,0
    agent.distill_lr = 0.01

Command-line overrides use the same syntax and are applied after the file.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Sequence

from abx.agent import AgentConfig
from abx.errors import ConfigurationError
from abx.gridworld import EnvConfig, GridPos
from abx.harness import ExperimentSpec

GRID_KEYS = {"width": int, "height": int, "start": "pos", "max_episode_len": int, "goal": "pos"}
EXPERIMENT_KEYS = {
    "methods": "list", "runs": int, "episodes": int, "record_every": int, "endpoints": "poslist",
    "base_seed": int, "step_cap": int, "heatmap_steps": "intlist", "embeddings": "list",
    "allow_censored": bool, "log_updates": bool,
}
AGENT_KEYS = {f.name: f.type for f in dataclasses.fields(AgentConfig) if f.name not in ("method", "seed")}


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _pos(text: str) -> GridPos:
    parts = [p for p in text.replace("(", "").replace(")", "").replace(":", ",").split(",") if p.strip()]
    if len(parts) != 2:
        raise ValueError(f"expected 'x,y', got {text!r}")
    return GridPos(int(parts[0]), int(parts[1]))


def parse_value(kind, text: str):
    text = text.strip()
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    if kind in (bool, "bool"):
        return _bool(text)
    if kind in (str, "str"):
        return text
    if kind == "pos":
        return None if text.lower() in ("", "none") else _pos(text)
    if kind == "list":
        return tuple(p.strip() for p in text.split(",") if p.strip())
    if kind == "intlist":
        return tuple(int(p) for p in text.split(",") if p.strip())
    if kind == "poslist":
        return tuple(_pos(p) for p in text.split(";") if p.strip())
    raise ValueError(f"unsupported value kind {kind!r}")


def parse_lines(lines: Sequence[str], source: str = "<overrides>") -> dict[str, str]:
    pairs = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{n}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = (value, f"{source}:{n}")
    return pairs


def load_config(path=None, overrides: Sequence[str] = (), kind: str = "coverage",
                ) -> tuple[ExperimentSpec, EnvConfig, AgentConfig]:
    """Defaults, then the file (if any), then overrides."""
    pairs = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file not found: {p}")
        pairs.update(parse_lines(p.read_text().splitlines(), str(p)))
    pairs.update(parse_lines(list(overrides), "<overrides>"))

    grid, exp, agent = {}, {}, {}
    tables = {"grid": (GRID_KEYS, grid), "experiment": (EXPERIMENT_KEYS, exp), "agent": (AGENT_KEYS, agent)}
    for key, (text, where) in pairs.items():
        group, _, name = key.partition(".")
        if group not in tables or name not in tables[group][0]:
            raise ConfigurationError(f"{where}: unknown key {key!r}")
        keys, target = tables[group]
        try:
            target[name] = parse_value(keys[name], text)
        except ValueError as exc:
            raise ConfigurationError(f"{where}: cannot parse {key}: {exc}") from None

    try:
        env = EnvConfig(**grid)
        spec = ExperimentSpec(kind=kind, **exp)
        agent_cfg = AgentConfig(**agent)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None
    return spec, env, agent_cfg
