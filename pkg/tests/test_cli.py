"""CLI tests: exit codes, config validation, artifacts, determinism.

Everything drives main() in-process with configs written to tmp dirs;
the filesystem is the only observable, as for a real user.
"""

import json

import numpy as np
import pytest

from actionraid.agents import QuadraticQAgent, save_weights
from actionraid.cli import main
from actionraid.envs import QuadActuator

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def write_config(path, **overrides):
    cfg = {"version": 1, "env": "quad"}
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def quad_weights(tmp_path_factory):
    env = QuadActuator()
    agent = QuadraticQAgent(env.state_dim, env.action_dim, np.random.default_rng(1))
    path = tmp_path_factory.mktemp("weights") / "quad.weights"
    save_weights(agent, path)
    return path


def sweep_config(tmp_path, quad_weights, **extra):
    cfg = {
        "agent": {"weights": str(quad_weights)},
        "n_episodes": 2,
        "base_seed": 5,
        "grid": {
            "kinds": ["none", "random", "mas", "las"],
            "budget_fractions": [0.1],
            "horizons": [2],
        },
    }
    cfg.update(extra)
    return write_config(tmp_path / "cfg.json", **cfg)


class TestConfigErrors:
    def test_missing_config_file(self, tmp_path):
        assert main(["sweep", "--config", str(tmp_path / "nope.json")]) == 2

    def test_malformed_json(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert main(["sweep", "--config", str(p)]) == 2
        assert "ConfigError" in capsys.readouterr().err

    def test_unknown_key_rejected(self, tmp_path):
        p = write_config(tmp_path / "c.json", extra_knob=1)
        assert main(["sweep", "--config", str(p)]) == 2

    def test_unknown_env_rejected(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"version": 1, "env": "walker"}))
        assert main(["sweep", "--config", str(p)]) == 2

    def test_missing_weights_file(self, tmp_path):
        p = write_config(tmp_path / "c.json", agent={"weights": "missing.weights"})
        assert main(["sweep", "--config", str(p), "--out", str(tmp_path / "o")]) == 2

    def test_agent_section_required(self, tmp_path):
        p = write_config(tmp_path / "c.json")
        assert main(["sweep", "--config", str(p), "--out", str(tmp_path / "o")]) == 2

    def test_attack_needs_budget_fraction(self, tmp_path, quad_weights):
        p = write_config(
            tmp_path / "c.json",
            agent={"weights": str(quad_weights)},
            attack={"kind": "mas"},
        )
        assert main(["attack", "--config", str(p), "--out", str(tmp_path / "o")]) == 2

    def test_report_needs_existing_dir(self, tmp_path):
        assert main(["report", "--out", str(tmp_path / "missing")]) == 2

    def test_report_needs_episodes_csv(self, tmp_path):
        assert main(["report", "--out", str(tmp_path)]) == 2

    def test_fit_q_rejected_for_gaussian(self, tmp_path):
        p = write_config(
            tmp_path / "c.json",
            agent={
                "kind": "gaussian",
                "train": {"algo": "cem", "iterations": 0, "seed": 1,
                          "threshold": -1e9, "population": 4, "eval_episodes": 1},
                "fit_q": {"seed": 2},
            },
        )
        assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


class TestTrainCommand:
    def test_unreachable_threshold_exits_3_and_writes_log(self, tmp_path, capsys):
        p = write_config(
            tmp_path / "c.json",
            agent={
                "kind": "quadratic_q",
                "init_seed": 1,
                "train": {"algo": "cem", "iterations": 2, "seed": 2,
                          "threshold": 1e9, "population": 4, "eval_episodes": 1},
            },
        )
        out = tmp_path / "o"
        assert main(["train", "--config", str(p), "--out", str(out)]) == 3
        assert "TrainingFailedError" in capsys.readouterr().err
        log = (out / "training_log.csv").read_text().splitlines()
        assert log[0] == "iteration,mean_reward,std_reward"
        assert len(log) == 3

    def test_zero_iteration_train_with_fit_writes_everything(self, tmp_path):
        p = write_config(
            tmp_path / "c.json",
            agent={
                "kind": "quadratic_q",
                "init_seed": 1,
                "train": {"algo": "cem", "iterations": 0, "seed": 2,
                          "threshold": -1e9},
                "fit_q": {"seed": 3, "rollouts": 2, "epochs": 2},
            },
        )
        out = tmp_path / "o"
        assert main(["train", "--config", str(p), "--out", str(out)]) == 0
        assert (out / "agent.weights").exists()
        assert (out / "training_log.csv").exists()
        fit_log = (out / "fit_q_log.csv").read_text().splitlines()
        assert fit_log[0] == "epoch,mse"
        assert len(fit_log) == 3


class TestSweepCommand:
    def test_writes_episode_step_and_summary(self, tmp_path, quad_weights):
        cfg = sweep_config(tmp_path, quad_weights)
        out = tmp_path / "out"
        assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        episodes = (out / "episodes.csv").read_text().splitlines()
        assert episodes[0] == "seed,kind,p,q,B,H,cum_reward,length"
        # 4 cells (none, random, mas, las) x 2 episodes
        assert len(episodes) == 1 + 4 * 2
        summary = json.loads((out / "summary.json").read_text())
        assert summary["n_episodes"] == 2 and summary["base_seed"] == 5
        assert len(summary["cells"]) == 4

    def test_rerun_and_jobs_are_byte_identical(self, tmp_path, quad_weights):
        cfg = sweep_config(tmp_path, quad_weights)
        outs = [tmp_path / f"out{i}" for i in range(3)]
        assert main(["sweep", "--config", str(cfg), "--out", str(outs[0])]) == 0
        assert main(["sweep", "--config", str(cfg), "--out", str(outs[1])]) == 0
        assert main(["sweep", "--config", str(cfg), "--out", str(outs[2]),
                     "--jobs", "4"]) == 0
        for name in ("episodes.csv", "steps.csv", "summary.json"):
            ref = (outs[0] / name).read_bytes()
            assert (outs[1] / name).read_bytes() == ref
            assert (outs[2] / name).read_bytes() == ref

    def test_seed_override_changes_episode_seeds(self, tmp_path, quad_weights):
        cfg = sweep_config(tmp_path, quad_weights)
        out = tmp_path / "out"
        assert main(["sweep", "--config", str(cfg), "--out", str(out),
                     "--seed", "77"]) == 0
        rows = (out / "episodes.csv").read_text().splitlines()[1:]
        assert {r.split(",")[0] for r in rows} == {"77", "78"}

    def test_packaged_weights_prefix(self, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            env="lander",
            agent={"weights": "pkg:lander_q.weights"},
            n_episodes=1,
            grid={"kinds": ["none"], "budget_fractions": [0.1], "horizons": [2]},
        )
        out = tmp_path / "out"
        assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "episodes.csv").exists()

    def test_weights_resolve_relative_to_config(self, tmp_path, quad_weights):
        local = tmp_path / "local.weights"
        local.write_bytes(quad_weights.read_bytes())
        cfg = write_config(
            tmp_path / "c.json",
            agent={"weights": "local.weights"},
            n_episodes=1,
            grid={"kinds": ["none"], "budget_fractions": [0.1], "horizons": [2]},
        )
        out = tmp_path / "out"
        assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0


class TestReportPath:
    def run_sweep(self, tmp_path, quad_weights, flag=False, name="out"):
        cfg = sweep_config(tmp_path, quad_weights)
        out = tmp_path / name
        argv = ["sweep", "--config", str(cfg), "--out", str(out)]
        if flag:
            argv.append("--report")
        assert main(argv) == 0
        return out

    def test_report_emits_tables_and_figures(self, tmp_path, quad_weights):
        out = self.run_sweep(tmp_path, quad_weights)
        assert main(["report", "--out", str(out)]) == 0
        for name in ("dims.csv", "traces.csv", "ablation.csv", "las_vs_mas.csv"):
            assert (out / name).exists(), name
        for name in ("rewards.png", "dims.png", "traces.png", "ablation.png"):
            assert (out / name).read_bytes()[:8] == PNG_MAGIC, name

    def test_sweep_report_flag_matches_split_invocation(self, tmp_path, quad_weights):
        single = self.run_sweep(tmp_path, quad_weights, flag=True, name="single")
        split = self.run_sweep(tmp_path, quad_weights, flag=False, name="split")
        assert main(["report", "--out", str(split)]) == 0
        names = [
            "episodes.csv", "steps.csv", "summary.json", "dims.csv", "traces.csv",
            "ablation.csv", "las_vs_mas.csv", "rewards.png", "dims.png",
            "traces.png", "ablation.png",
        ]
        for name in names:
            assert (single / name).read_bytes() == (split / name).read_bytes(), name

    def test_report_rerun_is_idempotent(self, tmp_path, quad_weights):
        out = self.run_sweep(tmp_path, quad_weights)
        assert main(["report", "--out", str(out)]) == 0
        before = {p.name: p.read_bytes() for p in out.iterdir()}
        assert main(["report", "--out", str(out)]) == 0
        after = {p.name: p.read_bytes() for p in out.iterdir()}
        assert before == after

    def test_report_without_nominal_skips_ablation(self, tmp_path, quad_weights):
        cfg = sweep_config(
            tmp_path, quad_weights,
            grid={"kinds": ["random"], "budget_fractions": [0.1], "horizons": [2]},
        )
        out = tmp_path / "out"
        assert main(["sweep", "--config", str(cfg), "--out", str(out), "--report"]) == 0
        assert (out / "dims.csv").exists()
        assert not (out / "ablation.csv").exists()


class TestAttackCommand:
    def test_single_cell_outputs(self, tmp_path, quad_weights):
        cfg = write_config(
            tmp_path / "c.json",
            agent={"weights": str(quad_weights)},
            n_episodes=2,
            attack={"kind": "las", "p": 2, "q": 1, "budget_fraction": 0.1,
                    "horizon": 3},
        )
        out = tmp_path / "out"
        assert main(["attack", "--config", str(cfg), "--out", str(out)]) == 0
        rows = (out / "episodes.csv").read_text().splitlines()
        assert len(rows) == 3
        assert all(r.split(",")[1] == "las" for r in rows[1:])
        assert not (out / "summary.json").exists()

    def test_log_env_var_tolerates_bogus_level(self, tmp_path, quad_weights, monkeypatch):
        monkeypatch.setenv("ACTIONRAID_LOG", "NOISY")
        cfg = write_config(
            tmp_path / "c.json",
            agent={"weights": str(quad_weights)},
            n_episodes=1,
            attack={"kind": "none"},
        )
        assert main(["attack", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
