import pytest

from abx.cli import main, parse_invocation, run
from abx.config import load_config
from abx.errors import ConfigurationError
from abx.gridworld import GridPos
from abx.harness import DEFAULT_ENDPOINTS

SMALL = ["--set", "grid.width=8", "--set", "grid.height=8", "--set", "grid.max_episode_len=20",
         "--set", "agent.rollout_len=20", "--episodes", "3"]


def test_parse_coverage_invocation(tmp_path):
    inv = parse_invocation(["coverage", "--methods", "random,rnd,ab_rnd", "--runs", "100",
                            "--seed", "7", "--out", str(tmp_path)])
    spec, env, agent = load_config(inv.config_path, inv.overrides, inv.subcommand)
    assert spec.methods == ("random", "rnd", "action_balance_rnd")
    assert spec.runs == 100 and spec.base_seed == 7 and inv.out_dir == str(tmp_path)


def test_goal_defaults_to_table_endpoints():
    inv = parse_invocation(["goal"])
    spec, _, _ = load_config(None, inv.overrides, "goal")
    assert spec.endpoints == DEFAULT_ENDPOINTS
    assert DEFAULT_ENDPOINTS == (GridPos(0, 20), GridPos(20, 0), GridPos(10, 20), GridPos(16, 16),
                                 GridPos(20, 10))


@pytest.mark.parametrize("argv", [["coverage", "--runs", "0"], ["coverage", "--bogus"],
                                  ["coverage", "--set", "noequals"], ["fly"]])
def test_usage_errors_exit_nonzero(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        parse_invocation(argv)
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_out_dir_env_fallback(monkeypatch):
    monkeypatch.setenv("ABX_OUT_DIR", "/tmp/abx-env-out")
    assert parse_invocation(["coverage"]).out_dir == "/tmp/abx-env-out"


def test_config_defaults_and_file(tmp_path):
    spec, env, agent = load_config(None, [], "coverage")
    assert (env.width, env.height, env.max_episode_len) == (40, 40, 200)
    assert (spec.runs, spec.episodes, spec.record_every) == (100, 100, 10)
    empty = tmp_path / "empty.cfg"
    empty.write_text("")
    assert load_config(empty, [], "coverage") == (spec, env, agent)
    cfg = tmp_path / "a.cfg"
    cfg.write_text("# comment\ngrid.width = 20  # trailing\nagent.gamma=0.9\nexperiment.endpoints=1,2;3,4\n")
    spec, env, agent = load_config(cfg, ["agent.gamma=0.5"], "goal")
    assert (env.width, env.height) == (20, 40)
    assert agent.gamma == 0.5
    assert spec.endpoints == (GridPos(1, 2), GridPos(3, 4))


def test_config_errors_name_the_line(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("grid.width=40\ngrid.colour=red\n")
    with pytest.raises(ConfigurationError, match="bad.cfg:2"):
        load_config(cfg, [], "coverage")
    cfg.write_text("agent.gamma=lots\n")
    with pytest.raises(ConfigurationError, match="bad.cfg:1"):
        load_config(cfg, [], "coverage")
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.cfg", [], "coverage")


def test_run_coverage_twice_is_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["coverage", "--runs", "2", "--seed", "3", "--jobs", "1",
                     "--out", str(tmp_path / name), *SMALL]) == 0
    out = capsys.readouterr().out
    assert "random" in out and "action_balance_rnd" in out
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_jobs_do_not_change_outputs(tmp_path):
    for jobs in ("1", "4"):
        assert main(["goal", "--runs", "4", "--jobs", jobs, "--methods", "random,rnd",
                     "--endpoints", "0,5;5,0", "--out", str(tmp_path / jobs), *SMALL]) == 0
    files = sorted(p.relative_to(tmp_path / "1") for p in (tmp_path / "1").rglob("*.csv"))
    for f in files:
        assert (tmp_path / "1" / f).read_bytes() == (tmp_path / "4" / f).read_bytes()


def test_censoring_controls_exit_status(tmp_path):
    args = ["goal", "--runs", "1", "--methods", "random", "--endpoints", "7,7",
            "--set", "experiment.step_cap=5", "--out", str(tmp_path), *SMALL]
    assert main(args) == 0
    assert main(args + ["--set", "experiment.allow_censored=false"]) != 0


def test_module_errors_give_nonzero_exit(tmp_path, capsys):
    assert main(["goal", "--endpoints", "99,99", "--out", str(tmp_path)]) != 0
    assert "outside the grid" in capsys.readouterr().err


def test_entropy_and_demo(tmp_path, capsys):
    assert main(["entropy", "--runs", "1", "--out", str(tmp_path), *SMALL]) == 0
    assert (tmp_path / "entropy" / "one_hot+channel" / "entropy.csv").exists()
    assert run(parse_invocation(["demo", *SMALL])) == 0
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if l and l[0].isdigit()]
    assert len(lines) == 5 * 20
