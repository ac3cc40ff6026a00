"""Action-stream attacks on continuous-control agents.

Three attack kinds against a nominal agent, all budgeted in norm balls:

* ``mas``: at every step, gradient descent on the agent's own surrogate
  reward finds the most damaging action offset, which is then projected
  onto the spatial norm ball of radius ``step_budget``.
* ``las``: a planner rolls a synchronized copy of the environment
  forward ``horizon`` steps, collects the unconstrained per-step
  offsets, projects the whole sequence onto the mixed
  spatial/temporal ball of radius ``window_budget``, and applies only
  the first column.  A controller replans every step (receding
  horizon), subtracts the spent spatial norm from the remaining window
  budget, and resets budget and horizon when the window closes.
* ``random``: a direction drawn uniformly on the spatial-norm sphere,
  scaled to the per-step budget.

The gradient descent runs from a tiny random offset off the nominal
action because both surrogates are stationary exactly there; it tracks
the best iterate starting from the nominal action itself, so a flat
surrogate yields an exactly zero offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .agents import Agent, surrogate_gradient
from .envs import Env, restore_from_snapshot
from .errors import InvalidInputError
from .projections import NormOrder, norm_lp, project_lp_ball, project_sequence

ATTACK_KINDS = ("none", "random", "mas", "las")
GRAD_METHODS = ("analytic", "sampled")

# PGD defaults, expressed as fractions of the action range.
ETA_FRACTION = 0.05
OFFSET_FRACTION = 1e-3
LINE_SEARCH_HALVINGS = 10


@dataclass(frozen=True)
class AttackConfig:
    """Everything an attack needs beyond the agent and environment.

    ``step_budget`` bounds each step's spatial norm (mas/random);
    ``window_budget`` and ``horizon`` bound whole windows (las).  For
    cross-kind comparisons use step_budget = window_budget / horizon.
    ``eta`` defaults to ETA_FRACTION * action_range when left None.
    ``rollout_with_attack`` advances the planner's environment copy with
    the perturbed instead of the nominal actions (sensitivity study).
    """

    kind: str = "none"
    spatial_norm: NormOrder = NormOrder.L2
    temporal_norm: NormOrder = NormOrder.L2
    step_budget: float = 0.0
    window_budget: float = 0.0
    horizon: int = 1
    eta: float | None = None
    pgd_steps: int = 10
    grad_method: str = "analytic"
    n_samples: int = 50
    sigma: float = 0.05
    seed: int = 0
    action_range: float = 2.0
    rollout_with_attack: bool = False

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise InvalidInputError(f"unknown attack kind {self.kind!r}")
        if not isinstance(self.spatial_norm, NormOrder) or not isinstance(
            self.temporal_norm, NormOrder
        ):
            raise InvalidInputError("norm orders must be NormOrder values")
        if self.step_budget < 0 or self.window_budget < 0:
            raise InvalidInputError("budgets must be >= 0")
        if self.horizon < 1:
            raise InvalidInputError("horizon must be >= 1")
        if self.eta is not None and self.eta <= 0:
            raise InvalidInputError("eta must be > 0")
        if self.pgd_steps < 1:
            raise InvalidInputError("pgd_steps must be >= 1")
        if self.grad_method not in GRAD_METHODS:
            raise InvalidInputError(f"unknown gradient method {self.grad_method!r}")
        if self.action_range <= 0:
            raise InvalidInputError("action_range must be > 0")

    @property
    def resolved_eta(self) -> float:
        return self.eta if self.eta is not None else ETA_FRACTION * self.action_range


def _gradient(agent: Agent, state, action, cfg: AttackConfig, rng) -> np.ndarray:
    return surrogate_gradient(
        agent, state, action, method=cfg.grad_method,
        n_samples=cfg.n_samples, sigma=cfg.sigma, rng=rng,
    )


def pgd_unconstrained_delta(agent: Agent, state, cfg: AttackConfig,
                            rng: np.random.Generator) -> np.ndarray:
    """Offset from the nominal action that minimizes the surrogate reward.

    Plain gradient descent with per-iteration backtracking: a step that
    would increase the surrogate is retried with halved length up to
    LINE_SEARCH_HALVINGS times and skipped if it never helps.  Returns
    the best iterate relative to the nominal action, which stays exactly
    zero when the surrogate is flat.
    """
    nominal = agent.act(state, mode="mean")
    m = nominal.size
    direction = rng.standard_normal(m)
    scale = float(np.linalg.norm(direction))
    if scale == 0.0:
        direction = np.zeros(m)
        direction[0] = 1.0
        scale = 1.0
    current = nominal + (OFFSET_FRACTION * cfg.action_range) * direction / scale

    best = nominal
    best_value = agent.surrogate_reward(state, nominal)
    value = agent.surrogate_reward(state, current)
    if value < best_value:
        best, best_value = current, value

    eta0 = cfg.resolved_eta
    for _ in range(cfg.pgd_steps):
        grad = _gradient(agent, state, current, cfg, rng)
        eta = eta0
        for _ in range(LINE_SEARCH_HALVINGS + 1):
            candidate = current - eta * grad
            cand_value = agent.surrogate_reward(state, candidate)
            if cand_value <= value:
                current, value = candidate, cand_value
                break
            eta *= 0.5
        if value < best_value:
            best, best_value = current, value
    return best - nominal


def mas_attack_step(agent: Agent, state, cfg: AttackConfig,
                    rng: np.random.Generator) -> np.ndarray:
    """Per-step greedy perturbation, projected onto the spatial ball."""
    if cfg.kind != "mas":
        raise InvalidInputError(f"mas_attack_step needs kind='mas', got {cfg.kind!r}")
    if cfg.step_budget == 0.0:
        return np.zeros(agent.action_dim)
    delta = pgd_unconstrained_delta(agent, state, cfg, rng)
    return project_lp_ball(delta, cfg.spatial_norm, cfg.step_budget)


@dataclass(frozen=True)
class PlannedAttack:
    """Projected perturbation plan for the remaining window.

    ``deltas`` has one column per planned step; ``per_step_budgets`` are
    the realized post-projection spatial column norms and
    ``pre_projection_norms`` the unconstrained ones (diagnostics).
    """

    deltas: np.ndarray
    per_step_budgets: np.ndarray
    pre_projection_norms: np.ndarray

    @property
    def length(self) -> int:
        return self.deltas.shape[1]

    def first_delta(self) -> np.ndarray:
        if self.length == 0:
            return np.zeros(self.deltas.shape[0])
        return self.deltas[:, 0].copy()


def las_plan(agent: Agent, env_snapshot: bytes, remaining_budget: float,
             remaining_horizon: int, cfg: AttackConfig,
             rng: np.random.Generator) -> PlannedAttack:
    """Virtual roll-out + sequence projection over the remaining window.

    Restores the snapshot into a private environment copy, walks it
    forward up to ``remaining_horizon`` steps (with the nominal actions
    unless cfg.rollout_with_attack), collecting one unconstrained
    offset per step, then projects the collected matrix onto the mixed
    ball of radius ``remaining_budget``.  Ends early if the copy
    reports done, shortening the plan.
    """
    if cfg.kind != "las":
        raise InvalidInputError(f"las_plan needs kind='las', got {cfg.kind!r}")
    if remaining_horizon < 1:
        raise InvalidInputError("remaining_horizon must be >= 1")
    if remaining_budget < 0:
        raise InvalidInputError("remaining_budget must be >= 0")
    env_adv = restore_from_snapshot(env_snapshot)

    m = agent.action_dim
    columns = []
    state = env_adv.state
    for _ in range(remaining_horizon):
        if env_adv.done:
            break
        nominal = agent.act(state, mode="mean")
        delta = pgd_unconstrained_delta(agent, state, cfg, rng)
        columns.append(delta)
        action = nominal + delta if cfg.rollout_with_attack else nominal
        state = env_adv.step(action).state

    if not columns:
        empty = np.zeros((m, 0))
        return PlannedAttack(empty, np.zeros(0), np.zeros(0))

    raw = np.stack(columns, axis=1)
    pre_norms = np.array([norm_lp(raw[:, k], cfg.spatial_norm) for k in range(raw.shape[1])])
    projected = project_sequence(raw, cfg.spatial_norm, cfg.temporal_norm, remaining_budget)
    budgets = np.array(
        [norm_lp(projected[:, k], cfg.spatial_norm) for k in range(projected.shape[1])]
    )
    return PlannedAttack(projected, budgets, pre_norms)


@dataclass
class LasController:
    """Receding-horizon attack state for one episode.

    Replans from a fresh snapshot every step, applies only the first
    planned perturbation, subtracts its spatial norm from the remaining
    window budget, and reopens the window (full budget and horizon)
    after ``horizon`` steps.
    """

    agent: Agent
    cfg: AttackConfig
    remaining_budget: float = field(init=False)
    remaining_horizon: int = field(init=False)

    def __post_init__(self):
        if self.cfg.kind != "las":
            raise InvalidInputError(f"LasController needs kind='las', got {self.cfg.kind!r}")
        self.remaining_budget = float(self.cfg.window_budget)
        self.remaining_horizon = int(self.cfg.horizon)

    def plan_and_delta(self, env: Env, rng: np.random.Generator):
        """Plan for the current true state; return (delta, plan or None)."""
        if self.remaining_budget <= 0.0:
            return np.zeros(self.agent.action_dim), None
        plan = las_plan(self.agent, env.snapshot(), self.remaining_budget,
                        self.remaining_horizon, self.cfg, rng)
        return plan.first_delta(), plan

    def commit(self, delta: np.ndarray) -> None:
        """Account for an applied perturbation and advance the window."""
        spent = norm_lp(delta, self.cfg.spatial_norm) if np.any(delta) else 0.0
        self.remaining_budget = max(0.0, self.remaining_budget - spent)
        self.remaining_horizon -= 1
        if self.remaining_horizon == 0:
            self.remaining_budget = float(self.cfg.window_budget)
            self.remaining_horizon = int(self.cfg.horizon)

    def attack_step(self, env: Env, rng: np.random.Generator):
        """One full controller step on the true environment.

        Returns (applied delta, nominal action, StepResult).
        """
        delta, _plan = self.plan_and_delta(env, rng)
        nominal = self.agent.act(env.state, mode="mean")
        result = env.step(nominal + delta)
        self.commit(delta)
        return delta, nominal, result


def random_attack_step(action_dim: int, cfg: AttackConfig,
                       rng: np.random.Generator) -> np.ndarray:
    """Budget-sized draw uniform on the spatial-norm unit sphere.

    l2 uses a normalized Gaussian; l1 scales a uniform simplex point
    (normalized exponentials) by random signs.  Either way the spatial
    norm equals the step budget exactly.
    """
    if cfg.kind != "random":
        raise InvalidInputError(f"random_attack_step needs kind='random', got {cfg.kind!r}")
    if cfg.step_budget == 0.0:
        return np.zeros(action_dim)
    if cfg.spatial_norm == NormOrder.L2:
        vec = rng.standard_normal(action_dim)
        n = float(np.linalg.norm(vec))
        while n == 0.0:
            vec = rng.standard_normal(action_dim)
            n = float(np.linalg.norm(vec))
        unit = vec / n
    else:
        mags = rng.exponential(1.0, size=action_dim)
        while mags.sum() == 0.0:
            mags = rng.exponential(1.0, size=action_dim)
        signs = np.where(rng.random(action_dim) < 0.5, -1.0, 1.0)
        unit = signs * mags / mags.sum()
    return cfg.step_budget * unit
