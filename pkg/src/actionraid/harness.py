"""Seeded episode execution, attack sweeps, and report tables.

The harness turns (env, agent, attack config) triples into fully
deterministic EpisodeRecords, runs grids of attack cells with paired
episode seeds, and reduces the results into the tables behind the
reward box plots, the per-dimension attack decomposition, and the
per-step perturbation traces.
"""

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .agents import Agent, new_agent
from .attacks import (
    ATTACK_KINDS,
    GRAD_METHODS,
    AttackConfig,
    LasController,
    mas_attack_step,
    random_attack_step,
)
from .envs import Env, make_env
from .errors import InvalidInputError
from .projections import NormOrder, norm_lp

DEFAULT_EPISODES = 30
DEFAULT_FRACTIONS = (0.05, 0.10, 0.20)
DEFAULT_HORIZONS = (5, 10)

STATE_DIGEST_CHARS = 16


@dataclass(frozen=True)
class StepLog:
    """One executed step: what the agent wanted, what the attack did."""

    state_digest: str
    nominal_action: np.ndarray
    delta: np.ndarray
    perturbed_action: np.ndarray
    delta_norm: float
    reward: float


@dataclass(frozen=True)
class EpisodeRecord:
    """Full deterministic record of one episode under one attack config.

    ``cumulative_reward`` is the left-to-right IEEE sum of the step
    rewards; ``per_dimension_attack`` holds sum_t |delta'_{t,i}| per
    action dimension, computed as np.sum over the stacked |deltas|.
    """

    seed: int
    cfg: AttackConfig
    steps: tuple
    cumulative_reward: float
    per_dimension_attack: np.ndarray
    length: int

    def total_attack_mass(self) -> float:
        """Total applied l1 mass, defined as the sum of the per-dimension column."""
        return float(np.sum(self.per_dimension_attack))

    def deltas(self) -> np.ndarray:
        return np.stack([s.delta for s in self.steps])

    def delta_norms(self) -> np.ndarray:
        return np.array([s.delta_norm for s in self.steps])

    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps])


def _state_digest(state: np.ndarray) -> str:
    return hashlib.sha256(state.tobytes()).hexdigest()[:STATE_DIGEST_CHARS]


def run_episode(env: Env, agent: Agent, cfg: AttackConfig, seed: int) -> EpisodeRecord:
    """Run one full episode under the configured attack.

    All randomness derives from default_rng([cfg.seed, seed]), so the
    same (cfg, seed) pair always reproduces the identical record.
    kind='none' executes the nominal trajectory with zero deltas.
    """
    if agent.state_dim != env.state_dim or agent.action_dim != env.action_dim:
        raise InvalidInputError("agent and environment dimensions do not match")
    env.reset(seed)
    rng = np.random.default_rng([cfg.seed, seed])
    controller = LasController(agent, cfg) if cfg.kind == "las" else None

    steps = []
    total = 0.0
    while not env.done:
        state = env.state
        digest = _state_digest(state)
        if cfg.kind == "las":
            delta, nominal, result = controller.attack_step(env, rng)
        else:
            nominal = agent.act(state, mode="mean")
            if cfg.kind == "none":
                delta = np.zeros(env.action_dim)
            elif cfg.kind == "random":
                delta = random_attack_step(env.action_dim, cfg, rng)
            else:
                delta = mas_attack_step(agent, state, cfg, rng)
            result = env.step(nominal + delta)
        steps.append(
            StepLog(
                state_digest=digest,
                nominal_action=nominal,
                delta=delta,
                perturbed_action=nominal + delta,
                delta_norm=float(norm_lp(delta, cfg.spatial_norm)),
                reward=float(result.reward),
            )
        )
        total += float(result.reward)

    deltas = np.stack([s.delta for s in steps])
    per_dim = np.sum(np.abs(deltas), axis=0)
    return EpisodeRecord(
        seed=int(seed),
        cfg=cfg,
        steps=tuple(steps),
        cumulative_reward=total,
        per_dimension_attack=per_dim,
        length=len(steps),
    )


@dataclass(frozen=True)
class Cell:
    """One grid cell: attack kind, norms, budget, horizon.

    ``budget`` is the window budget B for kind='las' and the per-step
    budget b otherwise (0 for kind='none'); ``horizon`` is 1 for every
    kind but 'las'.
    """

    kind: str
    spatial: NormOrder
    temporal: NormOrder
    budget: float
    horizon: int

    def attack_config(self, action_range: float, attack_seed: int = 0,
                      pgd_steps: int = 10, grad_method: str = "analytic") -> AttackConfig:
        step_budget = 0.0 if self.kind in ("none", "las") else self.budget
        window_budget = self.budget if self.kind == "las" else 0.0
        return AttackConfig(
            kind=self.kind,
            spatial_norm=self.spatial,
            temporal_norm=self.temporal,
            step_budget=step_budget,
            window_budget=window_budget,
            horizon=self.horizon,
            pgd_steps=pgd_steps,
            grad_method=grad_method,
            seed=attack_seed,
            action_range=action_range,
        )


@dataclass(frozen=True)
class GridSpec:
    """Cartesian sweep specification.

    Budgets are per-step-equivalent fractions of the action range:
    every attack cell at fraction f uses b = f * range per step, and
    LAS cells use the window budget B = b * H, so the b = B / H pairing
    between MAS and LAS cells holds by construction.
    """

    kinds: tuple = ATTACK_KINDS
    budget_fractions: tuple = DEFAULT_FRACTIONS
    horizons: tuple = DEFAULT_HORIZONS
    norm_pairs: tuple = ((NormOrder.L2, NormOrder.L2),)
    pgd_steps: int = 10
    grad_method: str = "analytic"
    attack_seed: int = 0

    def __post_init__(self):
        if len(self.kinds) == 0:
            raise InvalidInputError("grid needs at least one attack kind")
        if len(set(self.kinds)) != len(self.kinds):
            raise InvalidInputError("duplicate attack kinds in grid")
        for kind in self.kinds:
            if kind not in ATTACK_KINDS:
                raise InvalidInputError(f"unknown attack kind {kind!r}")
        for f in self.budget_fractions:
            if f < 0:
                raise InvalidInputError("budget fractions must be >= 0")
        for h in self.horizons:
            if int(h) < 1:
                raise InvalidInputError("horizons must be >= 1")
        for pair in self.norm_pairs:
            if len(pair) != 2 or not all(isinstance(n, NormOrder) for n in pair):
                raise InvalidInputError("norm_pairs must be (spatial, temporal) NormOrder pairs")
        if self.grad_method not in GRAD_METHODS:
            raise InvalidInputError(f"unknown gradient method {self.grad_method!r}")
        if self.pgd_steps < 1:
            raise InvalidInputError("pgd_steps must be >= 1")
        needs_norms = any(k != "none" for k in self.kinds)
        if needs_norms and (len(self.budget_fractions) == 0 or len(self.norm_pairs) == 0):
            raise InvalidInputError("attack kinds need budget_fractions and norm_pairs")
        if "las" in self.kinds and len(self.horizons) == 0:
            raise InvalidInputError("las cells need horizons")

    def spatial_norms(self) -> tuple:
        seen = []
        for p, _q in self.norm_pairs:
            if p not in seen:
                seen.append(p)
        return tuple(seen)

    def cells(self, action_range: float) -> list:
        """Expand the grid into a canonically ordered cell list.

        Order: kinds as given; per-step kinds vary (spatial norm, then
        fraction); las varies (norm pair, then fraction, then horizon).
        """
        out = []
        for kind in self.kinds:
            if kind == "none":
                out.append(Cell("none", NormOrder.L2, NormOrder.L2, 0.0, 1))
            elif kind in ("random", "mas"):
                for p in self.spatial_norms():
                    for f in self.budget_fractions:
                        out.append(Cell(kind, p, p, f * action_range, 1))
            else:
                for p, q in self.norm_pairs:
                    for f in self.budget_fractions:
                        for h in self.horizons:
                            out.append(Cell("las", p, q, f * action_range * int(h), int(h)))
        return out


@dataclass(frozen=True)
class SweepResult:
    """Records for every cell, n_episodes each, in canonical cell order."""

    env_name: str
    agent_id: str
    n_episodes: int
    base_seed: int
    cells: tuple
    records: tuple  # tuple of per-cell tuples, parallel to cells

    def rewards(self, cell_index: int) -> np.ndarray:
        return np.array([r.cumulative_reward for r in self.records[cell_index]])

    def reward_pairs(self) -> list:
        return [(cell, self.rewards(i)) for i, cell in enumerate(self.cells)]


def agent_id(agent: Agent) -> str:
    """Stable identifier: kind plus a digest of the parameter vector."""
    digest = hashlib.sha256(np.ascontiguousarray(agent.get_params()).tobytes())
    return f"{agent.kind}:{digest.hexdigest()[:12]}"


def _run_episode_task(args):
    env_name, agent_kind, state_dim, action_dim, params, cfg, seed = args
    env = make_env(env_name)
    agent = new_agent(agent_kind, state_dim, action_dim, np.random.default_rng(0))
    agent.set_params(params)
    return run_episode(env, agent, cfg, seed)


def run_sweep(env: Env, agent: Agent, grid: GridSpec, n_episodes: int = DEFAULT_EPISODES,
              base_seed: int = 0, jobs: int = 1) -> SweepResult:
    """Run the whole grid with episode seeds base_seed + i.

    Every cell sees the same seed list, so nominal, random, MAS, and
    LAS rewards are paired per episode index.  With jobs > 1 episodes
    run in worker processes; tasks are mapped in canonical (cell,
    episode) order and collected order-preserving, so the result is
    byte-identical to a serial run.
    """
    if n_episodes < 1:
        raise InvalidInputError("n_episodes must be >= 1")
    if jobs < 1:
        raise InvalidInputError("jobs must be >= 1")
    cells = grid.cells(env.action_range)
    cfgs = [
        cell.attack_config(env.action_range, grid.attack_seed, grid.pgd_steps, grid.grad_method)
        for cell in cells
    ]
    params = agent.get_params()
    tasks = [
        (env.name, agent.kind, agent.state_dim, agent.action_dim, params, cfg, base_seed + i)
        for cfg in cfgs
        for i in range(n_episodes)
    ]
    if jobs == 1:
        flat = [_run_episode_task(t) for t in tasks]
    else:
        chunk = max(1, len(tasks) // (4 * jobs))
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            flat = list(pool.map(_run_episode_task, tasks, chunksize=chunk))
    grouped = tuple(
        tuple(flat[c * n_episodes:(c + 1) * n_episodes]) for c in range(len(cells))
    )
    return SweepResult(
        env_name=env.name,
        agent_id=agent_id(agent),
        n_episodes=int(n_episodes),
        base_seed=int(base_seed),
        cells=tuple(cells),
        records=grouped,
    )


@dataclass(frozen=True)
class EpisodeView:
    """Flat per-episode view used by every report table.

    Built either from in-memory records (episode_views) or parsed back
    from episodes.csv/steps.csv; float64 repr round-trips exactly, so
    both routes produce bit-identical arrays.
    """

    episode: int
    seed: int
    kind: str
    spatial: NormOrder
    temporal: NormOrder
    budget: float
    horizon: int
    cum_reward: float
    length: int
    deltas: np.ndarray       # (length, action_dim)
    delta_norms: np.ndarray  # (length,)
    rewards: np.ndarray      # (length,)


def episode_views(sweep: SweepResult) -> list:
    """Flatten a sweep in canonical order; episode ids are row indices."""
    views = []
    idx = 0
    for cell, recs in zip(sweep.cells, sweep.records):
        for rec in recs:
            views.append(
                EpisodeView(
                    episode=idx,
                    seed=rec.seed,
                    kind=cell.kind,
                    spatial=cell.spatial,
                    temporal=cell.temporal,
                    budget=cell.budget,
                    horizon=cell.horizon,
                    cum_reward=rec.cumulative_reward,
                    length=rec.length,
                    deltas=rec.deltas(),
                    delta_norms=rec.delta_norms(),
                    rewards=rec.rewards(),
                )
            )
            idx += 1
    return views


def cell_stats(rewards) -> dict:
    """Documented aggregate: mean, linear-interpolation quartiles, extremes."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise InvalidInputError("cell has no rewards")
    q1, med, q3 = (float(np.percentile(r, p, method="linear")) for p in (25, 50, 75))
    return {
        "n": int(r.size),
        "mean": float(np.mean(r)),
        "median": med,
        "q1": q1,
        "q3": q3,
        "min": float(np.min(r)),
        "max": float(np.max(r)),
    }


def _cell_key(cell_or_view) -> tuple:
    c = cell_or_view
    return (c.kind, int(c.spatial), int(c.temporal), float(c.budget), int(c.horizon))


def group_views(views) -> list:
    """Group episode views into (Cell, views) pairs, first-seen order."""
    order = []
    groups = {}
    for v in views:
        key = _cell_key(v)
        if key not in groups:
            order.append(key)
            groups[key] = (Cell(v.kind, v.spatial, v.temporal, v.budget, v.horizon), [])
        groups[key][1].append(v)
    return [groups[k] for k in order]


def ablation_table(pairs) -> dict:
    """Reward reductions per attack cell plus LAS minus MAS per (B, H).

    ``pairs`` is a list of (Cell, cumulative-reward sequence) as
    produced by SweepResult.reward_pairs.  Raises InvalidInputError
    when no nominal (kind='none') cell is present.
    """
    nominal = [rs for cell, rs in pairs if cell.kind == "none"]
    if not nominal:
        raise InvalidInputError("ablation needs a nominal (kind='none') cell")
    nominal_mean = float(np.mean(np.asarray(nominal[0], dtype=np.float64)))

    means = {}
    reductions = []
    for cell, rs in pairs:
        mean = float(np.mean(np.asarray(rs, dtype=np.float64)))
        means[_cell_key(cell)] = mean
        if cell.kind == "none":
            continue
        reductions.append(
            {
                "kind": cell.kind,
                "p": int(cell.spatial),
                "q": int(cell.temporal),
                "B": float(cell.budget),
                "H": int(cell.horizon),
                "mean_reward": mean,
                "nominal_mean": nominal_mean,
                "reduction": mean - nominal_mean,
            }
        )

    las_minus_mas = []
    mas_cells = [(cell, means[_cell_key(cell)]) for cell, _ in pairs if cell.kind == "mas"]
    for cell, _rs in pairs:
        if cell.kind != "las":
            continue
        b = cell.budget / cell.horizon
        match = [
            (mc, mean) for mc, mean in mas_cells
            if mc.spatial == cell.spatial and abs(mc.budget - b) <= 1e-9 * max(1.0, b)
        ]
        if not match:
            continue
        mas_mean = match[0][1]
        las_mean = means[_cell_key(cell)]
        las_minus_mas.append(
            {
                "p": int(cell.spatial),
                "q": int(cell.temporal),
                "B": float(cell.budget),
                "H": int(cell.horizon),
                "b": float(b),
                "las_mean": las_mean,
                "mas_mean": mas_mean,
                "difference": las_mean - mas_mean,
            }
        )
    return {"reductions": reductions, "las_minus_mas": las_minus_mas}


def dimension_report(views) -> list:
    """Per-episode per-dimension attack mass, one row per episode.

    The total column is defined as the sum over the per-dimension
    columns, so the decomposition always adds up exactly.
    """
    rows = []
    for v in views:
        per_dim = np.sum(np.abs(v.deltas), axis=0)
        row = {
            "episode": int(v.episode),
            "kind": v.kind,
            "p": int(v.spatial),
            "q": int(v.temporal),
            "B": float(v.budget),
            "H": int(v.horizon),
        }
        for i, mass in enumerate(per_dim):
            row[f"d{i}"] = float(mass)
        row["total"] = float(np.sum(per_dim))
        rows.append(row)
    return rows


def delta_trace_report(views) -> list:
    """Per-step applied perturbation norms, one row per (episode, t)."""
    rows = []
    for v in views:
        for t, dn in enumerate(v.delta_norms):
            rows.append(
                {
                    "episode": int(v.episode),
                    "kind": v.kind,
                    "q": int(v.temporal),
                    "t": int(t),
                    "delta_norm": float(dn),
                }
            )
    return rows


def gini(values) -> float:
    """Gini coefficient of a nonnegative sequence (0 = uniform, 1 = one spike)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise InvalidInputError("gini needs a non-empty sequence")
    if np.any(v < 0):
        raise InvalidInputError("gini needs nonnegative values")
    total = float(np.sum(v))
    if total == 0.0:
        return 0.0
    s = np.sort(v)
    n = s.size
    ranks = np.arange(1, n + 1, dtype=np.float64)
    return float(2.0 * np.sum(ranks * s) / (n * total) - (n + 1.0) / n)
