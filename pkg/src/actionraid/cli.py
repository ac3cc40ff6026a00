"""Command-line entry point: train, attack, sweep, report.

Run configs are JSON documents validated against RUN_CONFIG_SCHEMA
before any work starts; unknown keys are rejected. All randomness
flows from seeds in the config (or the --seed override), never from
the clock or OS entropy, so every command is reproducible.

Exit codes: 0 success, 2 config or usage error, 3 runtime or training
failure. stderr carries the error class name followed by the message.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import figures, reporting
from .agents import AGENT_KINDS, load_weights, new_agent, packaged_weights_path, save_weights
from .attacks import ATTACK_KINDS, GRAD_METHODS
from .envs import ENV_REGISTRY, make_env
from .errors import ActionRaidError, ConfigError, FormatError, InvalidInputError, TrainingFailedError
from .harness import (
    DEFAULT_EPISODES,
    DEFAULT_FRACTIONS,
    DEFAULT_HORIZONS,
    GridSpec,
    ablation_table,
    agent_id,
    delta_trace_report,
    dimension_report,
    episode_views,
    group_views,
    run_sweep,
)
from .projections import NormOrder
from .training import fit_q, train

logger = logging.getLogger("actionraid.cli")

_NORM = {"enum": [1, 2]}
_SEED = {"type": "integer", "minimum": 0}

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "env"],
    "properties": {
        "version": {"const": 1},
        "env": {"enum": sorted(ENV_REGISTRY)},
        "base_seed": _SEED,
        "n_episodes": {"type": "integer", "minimum": 1},
        "jobs": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
        "agent": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": sorted(AGENT_KINDS)},
                "weights": {"type": "string"},
                "init_seed": _SEED,
                "train": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["algo", "iterations", "seed"],
                    "properties": {
                        "algo": {"enum": ["cem", "vpg"]},
                        "iterations": {"type": "integer", "minimum": 0},
                        "seed": _SEED,
                        "threshold": {"type": "number"},
                        "population": {"type": "integer", "minimum": 2},
                        "elite_frac": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                        "eval_episodes": {"type": "integer", "minimum": 1},
                        "noise0": {"type": "number", "minimum": 0},
                        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                        "rollouts": {"type": "integer", "minimum": 1},
                    },
                },
                "fit_q": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["seed"],
                    "properties": {
                        "seed": _SEED,
                        "rollouts": {"type": "integer", "minimum": 1},
                        "noise_std": {"type": "number", "exclusiveMinimum": 0},
                        "epochs": {"type": "integer", "minimum": 1},
                        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                        "batch_size": {"type": "integer", "minimum": 1},
                        "discount": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                        "curvature_target": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
        },
        "attack": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": list(ATTACK_KINDS)},
                "p": _NORM,
                "q": _NORM,
                "budget_fraction": {"type": "number", "minimum": 0},
                "horizon": {"type": "integer", "minimum": 1},
                "pgd_steps": {"type": "integer", "minimum": 1},
                "grad_method": {"enum": list(GRAD_METHODS)},
                "attack_seed": _SEED,
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kinds": {
                    "type": "array",
                    "items": {"enum": list(ATTACK_KINDS)},
                    "minItems": 1,
                },
                "budget_fractions": {
                    "type": "array",
                    "items": {"type": "number", "minimum": 0},
                    "minItems": 1,
                },
                "horizons": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "minItems": 1,
                },
                "norm_pairs": {
                    "type": "array",
                    "items": {"type": "array", "items": _NORM, "minItems": 2, "maxItems": 2},
                    "minItems": 1,
                },
                "pgd_steps": {"type": "integer", "minimum": 1},
                "grad_method": {"enum": list(GRAD_METHODS)},
                "attack_seed": _SEED,
            },
        },
    },
}


def _setup_logging() -> None:
    level_name = os.environ.get("ACTIONRAID_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s"
    )


def load_config(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {path}: {exc}")
    try:
        jsonschema.validate(cfg, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config schema violation at {where}: {exc.message}")
    cfg["_dir"] = path.resolve().parent
    return cfg


def _resolve_out(cfg: dict, args) -> Path:
    out = args.out if args.out is not None else cfg.get("out")
    if out is None:
        raise ConfigError("no output directory: pass --out or set 'out' in the config")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_weights_path(spec: str, config_dir: Path):
    if spec.startswith("pkg:"):
        return packaged_weights_path(spec[len("pkg:"):])
    p = Path(spec)
    return p if p.is_absolute() else config_dir / p


def _build_agent(cfg: dict, env, out: Path):
    """Load weights if given, otherwise train per the inline spec."""
    agent_cfg = cfg.get("agent")
    if not agent_cfg:
        raise ConfigError("config needs an 'agent' section")
    if "weights" in agent_cfg:
        path = _resolve_weights_path(agent_cfg["weights"], cfg["_dir"])
        if not Path(str(path)).exists():
            raise ConfigError(f"weight file not found: {path}")
        agent = load_weights(path)
        logger.info("loaded %s agent from %s", agent.kind, path)
    elif "train" in agent_cfg:
        agent, _log = _train_agent(cfg, env, out)
    else:
        raise ConfigError("agent section needs 'weights' or 'train'")
    if "fit_q" in agent_cfg:
        _fit_agent(agent_cfg["fit_q"], env, agent, out)
    return agent


def _train_agent(cfg: dict, env, out: Path):
    agent_cfg = cfg["agent"]
    if "kind" not in agent_cfg:
        raise ConfigError("agent.kind is required for training")
    tr = agent_cfg["train"]
    agent = new_agent(
        agent_cfg["kind"], env.state_dim, env.action_dim,
        np.random.default_rng(agent_cfg.get("init_seed", 0)),
    )
    kwargs = {
        k: tr[k]
        for k in ("threshold", "population", "elite_frac", "eval_episodes",
                  "noise0", "learning_rate", "rollouts")
        if k in tr
    }
    log_path = out / "training_log.csv"
    try:
        agent, log = train(agent, env, algo=tr["algo"], iterations=tr["iterations"],
                           rng=np.random.default_rng(tr["seed"]), **kwargs)
    except TrainingFailedError as exc:
        exc.log.write_csv(log_path)
        logger.error("training failed; log at %s", log_path)
        raise
    log.write_csv(log_path)
    logger.info("trained %s agent, holdout mean %.3f", agent.kind, log.holdout_mean)
    return agent, log


def _fit_agent(fit_cfg: dict, env, agent, out: Path) -> None:
    if agent.kind != "quadratic_q":
        raise ConfigError("agent.fit_q needs a quadratic_q agent")
    kwargs = {
        k: fit_cfg[k]
        for k in ("rollouts", "noise_std", "epochs", "learning_rate",
                  "batch_size", "discount", "curvature_target")
        if k in fit_cfg
    }
    mses = fit_q(agent, env, np.random.default_rng(fit_cfg["seed"]), **kwargs)
    path = out / "fit_q_log.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mse"])
        for i, mse in enumerate(mses):
            writer.writerow([i, repr(float(mse))])
    print(f"wrote {path}")
    logger.info("fit quadratic critic, final mse %.4f", mses[-1])


def _grid_from_config(cfg: dict) -> GridSpec:
    g = cfg.get("grid", {})
    pairs = tuple(
        (NormOrder(p), NormOrder(q)) for p, q in g.get("norm_pairs", [[2, 2]])
    )
    return GridSpec(
        kinds=tuple(g.get("kinds", ATTACK_KINDS)),
        budget_fractions=tuple(g.get("budget_fractions", DEFAULT_FRACTIONS)),
        horizons=tuple(g.get("horizons", DEFAULT_HORIZONS)),
        norm_pairs=pairs,
        pgd_steps=g.get("pgd_steps", 10),
        grad_method=g.get("grad_method", "analytic"),
        attack_seed=g.get("attack_seed", 0),
    )


def _grid_from_attack_section(cfg: dict) -> GridSpec:
    a = cfg.get("attack")
    if not a:
        raise ConfigError("config needs an 'attack' section for the attack command")
    kind = a["kind"]
    p = NormOrder(a.get("p", 2))
    q = NormOrder(a.get("q", 2))
    fraction = a.get("budget_fraction")
    if kind != "none" and fraction is None:
        raise ConfigError(f"attack.budget_fraction is required for kind {kind!r}")
    return GridSpec(
        kinds=(kind,),
        budget_fractions=(float(fraction or 0.0),),
        horizons=(a.get("horizon", 1),),
        norm_pairs=((p, q),),
        pgd_steps=a.get("pgd_steps", 10),
        grad_method=a.get("grad_method", "analytic"),
        attack_seed=a.get("attack_seed", 0),
    )


def _run_and_write(cfg: dict, args, grid: GridSpec, out: Path, write_summary: bool) -> None:
    env = make_env(cfg["env"])
    agent = _build_agent(cfg, env, out)
    base_seed = args.seed if args.seed is not None else cfg.get("base_seed", 1000)
    n_episodes = cfg.get("n_episodes", DEFAULT_EPISODES)
    jobs = args.jobs if args.jobs is not None else cfg.get("jobs", 1)
    sweep = run_sweep(env, agent, grid, n_episodes=n_episodes,
                      base_seed=base_seed, jobs=jobs)
    views = episode_views(sweep)
    reporting.write_episodes_csv(out / "episodes.csv", views)
    reporting.write_steps_csv(out / "steps.csv", views)
    print(f"wrote {out / 'episodes.csv'}")
    print(f"wrote {out / 'steps.csv'}")
    if write_summary:
        reporting.write_summary_json(out / "summary.json", sweep.env_name, sweep.agent_id,
                                     sweep.n_episodes, sweep.base_seed, views)
        print(f"wrote {out / 'summary.json'}")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = _resolve_out(cfg, args)
    agent_cfg = cfg.get("agent")
    if not agent_cfg or "train" not in agent_cfg:
        raise ConfigError("train command needs an agent.train section")
    env = make_env(cfg["env"])
    agent, _log = _train_agent(cfg, env, out)
    if "fit_q" in agent_cfg:
        _fit_agent(agent_cfg["fit_q"], env, agent, out)
    weights_path = out / "agent.weights"
    save_weights(agent, weights_path)
    print(f"wrote {weights_path}")
    print(f"wrote {out / 'training_log.csv'}")
    return 0


def cmd_attack(args) -> int:
    cfg = load_config(args.config)
    out = _resolve_out(cfg, args)
    _run_and_write(cfg, args, _grid_from_attack_section(cfg), out, write_summary=False)
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    out = _resolve_out(cfg, args)
    _run_and_write(cfg, args, _grid_from_config(cfg), out, write_summary=True)
    if args.report:
        render_report(out)
    return 0


def render_report(out: Path) -> None:
    """Derive every report artifact from episodes.csv plus steps.csv.

    Both the report command and sweep --report go through this exact
    function on the freshly written files, so split and single-shot
    runs produce identical bytes.
    """
    views = reporting.read_views(out / "episodes.csv", out / "steps.csv")
    dim_rows = dimension_report(views)
    reporting.write_dims_csv(out / "dims.csv", dim_rows)
    print(f"wrote {out / 'dims.csv'}")
    trace_rows = delta_trace_report(views)
    reporting.write_traces_csv(out / "traces.csv", trace_rows)
    print(f"wrote {out / 'traces.csv'}")

    figures.reward_boxplot(views, out / "rewards.png")
    figures.dimension_bars(dim_rows, out / "dims.png")
    figures.delta_traces(trace_rows, out / "traces.png")
    print(f"wrote {out / 'rewards.png'}")
    print(f"wrote {out / 'dims.png'}")
    print(f"wrote {out / 'traces.png'}")

    pairs = [(cell, [v.cum_reward for v in vs]) for cell, vs in group_views(views)]
    if any(cell.kind == "none" for cell, _ in pairs):
        tables = ablation_table(pairs)
        reporting.write_ablation_csvs(out / "ablation.csv", out / "las_vs_mas.csv", tables)
        figures.ablation_lines(tables["las_minus_mas"], out / "ablation.png")
        print(f"wrote {out / 'ablation.csv'}")
        print(f"wrote {out / 'las_vs_mas.csv'}")
        print(f"wrote {out / 'ablation.png'}")
    else:
        logger.info("no nominal cell in results; skipping ablation tables")


def cmd_report(args) -> int:
    if args.out is None:
        raise ConfigError("report needs --out pointing at a results directory")
    out = Path(args.out)
    if not out.is_dir():
        raise ConfigError(f"results directory not found: {out}")
    render_report(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="actionraid",
        description="Budgeted attacks on continuous-control action streams.",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    specs = [
        ("train", "train an agent per the config's agent.train section", cmd_train),
        ("attack", "run one attack cell and write episode/step CSVs", cmd_attack),
        ("sweep", "run the full attack grid and write CSVs plus summary", cmd_sweep),
        ("report", "derive tables and figures from sweep CSVs", cmd_report),
    ]
    for name, help_text, fn in specs:
        sp = sub.add_parser(name, help=help_text)
        if name != "report":
            sp.add_argument("--config", required=True, help="JSON run config")
        sp.add_argument("--out", default=None, help="output directory")
        if name in ("attack", "sweep"):
            sp.add_argument("--jobs", type=int, default=None,
                            help="parallel episode workers (deterministic merge)")
            sp.add_argument("--seed", type=int, default=None,
                            help="override the config base_seed")
        if name == "sweep":
            sp.add_argument("--report", action="store_true",
                            help="also render report tables and figures")
        sp.set_defaults(fn=fn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        return args.fn(args)
    except TrainingFailedError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, InvalidInputError, FormatError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ActionRaidError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
