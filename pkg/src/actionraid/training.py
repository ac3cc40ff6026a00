"""Desk-scale trainers for the nominal agents.

Two algorithms over the agent's trainable (action-network) parameters:

* ``cem``: cross-entropy method - sample a population around a running
  parameter mean, keep the elite fraction, refit mean/std, and add an
  exploration noise floor that decays linearly to zero over the
  iteration budget.  Every candidate in an iteration is scored on the
  same freshly drawn seeds (common random numbers).
* ``vpg``: REINFORCE with a mean-return baseline and a fixed Gaussian
  exploration std, backpropagated through the action network by hand.

After each iteration the current parameters are scored on a fixed block
of held-out seeds; training stops as soon as the held-out mean exceeds
the threshold and raises TrainingFailedError (carrying the full log) if
the budget runs out first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .agents import CHOL_DIAG_BIAS, Agent, GaussianPolicyAgent, QuadraticQAgent
from .envs import Env
from .errors import InvalidInputError, TrainingFailedError

# Held-out evaluation seeds live far above anything the harness or the
# trainers draw for episode seeds, so nothing trains on them.
HOLDOUT_SEED_BASE = 10_000_000
HOLDOUT_EPISODES = 30

VPG_EXPLORATION_STD = 0.2


@dataclass
class TrainingLog:
    algo: str
    threshold: float
    entries: list = field(default_factory=list)  # (iteration, mean, std)
    holdout_mean: float = float("nan")
    reached: bool = False

    def record(self, iteration: int, rewards) -> None:
        rewards = np.asarray(rewards, dtype=np.float64)
        self.entries.append((int(iteration), float(rewards.mean()), float(rewards.std())))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("iteration,mean_reward,std_reward\n")
            for iteration, mean, std in self.entries:
                fh.write(f"{iteration},{repr(mean)},{repr(std)}\n")


def run_plain_episode(env: Env, agent: Agent, seed: int,
                      explore_rng: np.random.Generator | None = None) -> float:
    """One unattacked episode; sampled actions when an explore rng is given."""
    state = env.reset(seed)
    total = 0.0
    while True:
        if explore_rng is None:
            action = agent.act(state, mode="mean")
        else:
            action = agent.act(state, mode="mean") + VPG_EXPLORATION_STD * explore_rng.standard_normal(agent.action_dim)
        result = env.step(action)
        total += result.reward
        state = result.state
        if result.done:
            return total


def evaluate_agent(agent: Agent, env: Env, seeds) -> np.ndarray:
    return np.array([run_plain_episode(env, agent, int(s)) for s in seeds])


def holdout_mean(agent: Agent, env: Env) -> float:
    seeds = range(HOLDOUT_SEED_BASE, HOLDOUT_SEED_BASE + HOLDOUT_EPISODES)
    return float(evaluate_agent(agent, env, seeds).mean())


def train(agent: Agent, env: Env, algo: str = "cem", iterations: int = 200,
          rng: np.random.Generator | None = None, threshold: float | None = None,
          population: int = 64, elite_frac: float = 0.125, eval_episodes: int = 3,
          noise0: float = 0.3, learning_rate: float = 0.05, rollouts: int = 16):
    """Train the agent in place; returns (agent, TrainingLog).

    iterations == 0 returns the agent untouched without any threshold
    check.  Otherwise the held-out mean must exceed the threshold
    (default: the environment's documented solvable threshold) before
    the budget runs out, else TrainingFailedError carrying the log.
    """
    if agent.action_dim != env.action_dim or agent.state_dim != env.state_dim:
        raise InvalidInputError("agent and environment dimensions do not match")
    if algo not in ("cem", "vpg"):
        raise InvalidInputError(f"unknown training algo {algo!r}")
    if iterations < 0:
        raise InvalidInputError("iterations must be >= 0")
    if rng is None:
        rng = np.random.default_rng(0)
    if threshold is None:
        threshold = env.solvable_threshold

    log = TrainingLog(algo=algo, threshold=float(threshold))
    if iterations == 0:
        return agent, log

    if algo == "cem":
        _train_cem(agent, env, iterations, rng, threshold, population,
                   elite_frac, eval_episodes, noise0, log)
    else:
        _train_vpg(agent, env, iterations, rng, threshold, learning_rate,
                   rollouts, log)

    if not log.reached:
        raise TrainingFailedError(
            f"held-out mean {log.holdout_mean:.3f} never exceeded threshold "
            f"{threshold:.3f} within {iterations} iterations",
            log=log,
        )
    return agent, log


def _check_holdout(agent: Agent, env: Env, flat, sl, best, log) -> bool:
    flat[sl] = best
    agent.set_params(flat)
    log.holdout_mean = holdout_mean(agent, env)
    if log.holdout_mean > log.threshold:
        log.reached = True
        return True
    return False


def _train_cem(agent, env, iterations, rng, threshold, population, elite_frac,
               eval_episodes, noise0, log):
    flat = agent.get_params()
    sl = agent.trainable_slice
    theta = flat[sl].copy()
    std = np.full(theta.size, 0.5)
    n_elite = max(1, int(round(population * elite_frac)))

    for it in range(iterations):
        seeds = rng.integers(0, 2**31, size=eval_episodes)
        noise = noise0 * max(0.0, 1.0 - it / iterations)
        samples = theta + (std + noise) * rng.standard_normal((population, theta.size))
        fitness = np.empty(population)
        for i in range(population):
            flat[sl] = samples[i]
            agent.set_params(flat)
            fitness[i] = evaluate_agent(agent, env, seeds).mean()
        log.record(it, fitness)
        elite = samples[np.argsort(fitness)[-n_elite:]]
        theta = elite.mean(axis=0)
        std = elite.std(axis=0)
        if _check_holdout(agent, env, flat, sl, theta, log):
            return
    _check_holdout(agent, env, flat, sl, theta, log)


def _train_vpg(agent, env, iterations, rng, threshold, learning_rate, rollouts, log):
    flat = agent.get_params()
    sl = agent.trainable_slice
    net = agent.mean_net if isinstance(agent, GaussianPolicyAgent) else agent.mu_net
    var = VPG_EXPLORATION_STD**2

    for it in range(iterations):
        returns = np.empty(rollouts)
        grads = np.zeros((rollouts, net.n_params))
        for i in range(rollouts):
            seed = int(rng.integers(0, 2**31))
            state = env.reset(seed)
            steps = []
            total = 0.0
            while True:
                raw, acts = net.forward_cached(state)
                mean = np.tanh(raw)
                action = mean + VPG_EXPLORATION_STD * rng.standard_normal(agent.action_dim)
                steps.append((acts, mean, action - mean))
                result = env.step(action)
                total += result.reward
                state = result.state
                if result.done:
                    break
            returns[i] = total
            for acts, mean, noise in steps:
                # chain the policy's tanh squash into the log-density grad
                grads[i] += net.backprop(acts, (1.0 - mean * mean) * noise / var)
        log.record(it, returns)
        advantage = returns - returns.mean()
        advantage /= max(float(advantage.std()), 1e-8)
        update = (grads * advantage[:, None]).mean(axis=0)
        # clip to unit norm so one noisy batch cannot destroy the policy
        update /= max(1.0, float(np.linalg.norm(update)))
        flat[sl] = flat[sl] + learning_rate * update
        agent.set_params(flat)
        if _check_holdout(agent, env, flat, sl, flat[sl], log):
            return
    _check_holdout(agent, env, flat, sl, flat[sl], log)


# Per-episode multipliers on the fit-stage exploration noise: the fit has
# to see near-policy actions and far-off-policy ones, because the
# curvature it learns is later queried at perturbation magnitudes ranging
# from a single step budget to a whole look-ahead window.
QFIT_NOISE_SCALES = (0.5, 1.0, 2.0)


def collect_q_dataset(agent: Agent, env: Env, rng: np.random.Generator,
                      rollouts: int, noise_std: float, discount: float):
    """Noisy on-policy rollouts with discounted return-to-go targets.

    Returns (states, actions, targets) arrays.  Actions are recorded in
    command space (before the env clamp), the same space attacks add
    their deltas in.
    """
    states, actions, targets = [], [], []
    for k in range(rollouts):
        scale = noise_std * QFIT_NOISE_SCALES[k % len(QFIT_NOISE_SCALES)]
        seed = int(rng.integers(0, 2**31))
        state = env.reset(seed)
        ep_states, ep_actions, ep_rewards = [], [], []
        while not env.done:
            action = agent.act(state) + scale * rng.standard_normal(agent.action_dim)
            result = env.step(action)
            ep_states.append(state)
            ep_actions.append(action)
            ep_rewards.append(result.reward)
            state = result.state
        rtg = 0.0
        for s, a, r in zip(reversed(ep_states), reversed(ep_actions), reversed(ep_rewards)):
            rtg = r + discount * rtg
            states.append(s)
            actions.append(a)
            targets.append(rtg)
    return np.array(states), np.array(actions), np.array(targets)


def fit_q(agent: QuadraticQAgent, env: Env, rng: np.random.Generator | None = None,
          rollouts: int = 24, noise_std: float = 0.25, epochs: int = 40,
          learning_rate: float = 0.01, batch_size: int = 64,
          discount: float = 0.9, curvature_target: float | None = None) -> list:
    """Fit the value and curvature nets of a quadratic-Q agent.

    Supervised regression of Q(s, a) = V(s) - d' P(s) d onto discounted
    return-to-go targets from noisy rollouts of the frozen policy.  The
    policy net stays untouched, so the agent acts identically after the
    fit; only its self-model of how much off-policy actions cost gets
    informed.  Targets are standardized before fitting - attacks consume
    Q only through gradients and value comparisons, both invariant to a
    positive affine rescale, so the fit can run at unit scale regardless
    of the env's reward magnitudes.

    The default discount is deliberately short.  It is a credit window
    for the fit, not the env's objective: with a long window every
    pre-terminal state's target carries the terminal reward, curvature
    gets smeared over states whose actions never caused it, and the
    fitted sensitivity profile flattens out.

    After the regression the curvature net is rescaled so the median top
    eigenvalue of P(s) over the fit states equals ``curvature_target``
    (default 8 / action_range).  A single step of a return contributes
    little of the return variance, so the fitted quadratic is honest but
    shallow; gradient descent with a step size tied to the action range
    moves by a factor (1 + 2 * eta * lambda) per iteration and never
    leaves the offset-sized init when lambda is tiny.  Rescaling P by a
    positive constant changes neither gradient directions nor any
    constrained minimizer, it only makes the default iteration budget
    sufficient to traverse the ball at sensitive states while leaving
    insensitive ones with small unconstrained offsets.

    Returns the per-epoch mean squared errors (standardized units).
    """
    if not isinstance(agent, QuadraticQAgent):
        raise InvalidInputError("fit_q needs a quadratic_q agent")
    if rollouts < 1 or epochs < 1 or batch_size < 1:
        raise InvalidInputError("rollouts, epochs and batch_size must be positive")
    if not 0.0 < discount <= 1.0:
        raise InvalidInputError(f"discount must be in (0, 1], got {discount}")
    if rng is None:
        rng = np.random.default_rng()

    states, actions, targets = collect_q_dataset(
        agent, env, rng, rollouts, noise_std, discount
    )
    targets = (targets - targets.mean()) / max(float(targets.std()), 1e-8)

    m = agent.action_dim
    tril = agent._tril
    diag_positions = tril[0] == tril[1]
    diag = np.arange(m)
    n = targets.size
    mses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        sq_sum = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            grad_v = np.zeros(agent.v_net.n_params)
            grad_c = np.zeros(agent.chol_net.n_params)
            for j in idx:
                s, a, g = states[j], actions[j], targets[j]
                value, v_acts = agent.v_net.forward_cached(s)
                raw, c_acts = agent.chol_net.forward_cached(s)
                chol = np.zeros((m, m))
                chol[tril] = raw
                chol[diag, diag] = np.exp(chol[diag, diag] + CHOL_DIAG_BIAS)
                d = a - np.tanh(agent.mu_net.forward(s))
                ld = chol.T @ d
                err = (value[0] - ld @ ld) - g
                sq_sum += err * err
                grad_v += agent.v_net.backprop(v_acts, np.array([err]))
                # d(d'LL'd)/dL = 2 d d' L = 2 outer(d, L'd); the penalty
                # enters Q negated, hence the sign
                grad_chol = -2.0 * err * np.outer(d, ld)
                raw_grad = grad_chol[tril]
                raw_grad[diag_positions] *= chol[diag, diag]
                grad_c += agent.chol_net.backprop(c_acts, raw_grad)
            grad_v /= idx.size
            grad_c /= idx.size
            # joint norm clip, same guard as the policy trainer
            joint = max(1.0, float(np.sqrt(grad_v @ grad_v + grad_c @ grad_c)))
            agent.v_net.set_params(
                agent.v_net.get_params() - learning_rate * grad_v / joint
            )
            agent.chol_net.set_params(
                agent.chol_net.get_params() - learning_rate * grad_c / joint
            )
        mses.append(sq_sum / n)

    if curvature_target is None:
        curvature_target = 8.0 / env.action_range
    _calibrate_curvature(agent, states, curvature_target)
    return mses


def _calibrate_curvature(agent: QuadraticQAgent, states, target: float) -> None:
    """Rescale chol_net's output layer so median lambda_max(P(s)) = target."""
    top = np.empty(len(states))
    for i, s in enumerate(states):
        top[i] = float(np.linalg.eigvalsh(agent.curvature(s))[-1])
    median = float(np.median(top))
    if median <= 0.0:
        raise TrainingFailedError("fitted curvature collapsed to zero")
    # P scales as the square of the factor, and the diagonal lives behind
    # an exp, so scale off-diagonal rows linearly and shift diagonal
    # biases by log(c)
    c = np.sqrt(target / median)
    diag_rows = agent._tril[0] == agent._tril[1]
    agent.chol_net.weights[-1][~diag_rows] *= c
    agent.chol_net.biases[-1][~diag_rows] *= c
    agent.chol_net.biases[-1][diag_rows] += np.log(c)
