"""Nominal agents and their differentiable action-space surrogates.

Two agent families cover the policy-based and value-based cases:

* ``GaussianPolicyAgent``: a tanh MLP mean with per-dimension log-std.
  Its surrogate reward is the policy log-density over actions.
* ``QuadraticQAgent``: Q(s, a) = V(s) - (a - mu(s))^T P(s) (a - mu(s))
  with P(s) = L(s) L(s)^T built from a state-conditioned Cholesky
  factor whose diagonal is exponentiated, so P is positive definite
  everywhere and the greedy action is mu(s) in closed form.

Both surrogates are concave in the action and stationary at the nominal
action, and both expose exact analytic action-gradients next to a
sampled least-squares estimator.

Weight file layout (little-endian):

    magic    4 bytes   b"ARAG"
    version  uint16    currently 1
    kind     12 bytes  ascii agent kind, NUL padded
    dims     4 uint32  state_dim, action_dim, hidden width, hidden layers
    count    uint64    flat parameter count
    params   count float64
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, InvalidInputError

WEIGHTS_MAGIC = b"ARAG"
WEIGHTS_VERSION = 1

HIDDEN_WIDTH = 32
HIDDEN_LAYERS = 2

# Initial per-dimension log standard deviation of the Gaussian policy.
GAUSSIAN_INIT_LOG_STD = -1.6
# Added to the raw Cholesky diagonal before exponentiation; at a fresh
# random init this puts the curvature P near exp(2.0) * I, sharp enough
# that gradient steps on the surrogate amplify quickly.
CHOL_DIAG_BIAS = 1.0


class MLP:
    """Fixed-shape tanh MLP on flat float64 parameter vectors."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 hidden: int = HIDDEN_WIDTH, layers: int = HIDDEN_LAYERS,
                 out_scale: float = 1.0):
        sizes = [in_dim] + [hidden] * layers + [out_dim]
        self.sizes = sizes
        self.weights = []
        self.biases = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            if i == len(sizes) - 2:
                w = w * out_scale
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_params(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise InvalidInputError(
                f"parameter vector has {flat.shape}, expected ({self.n_params},)"
            )
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = flat[pos : pos + b.size].copy()
            pos += b.size

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(w @ h + b)
        return self.weights[-1] @ h + self.biases[-1]

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping layer activations for backprop."""
        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(w @ h + b)
            acts.append(h)
        out = self.weights[-1] @ h + self.biases[-1]
        return out, acts

    def backprop(self, acts, dout: np.ndarray) -> np.ndarray:
        """Gradient of dout . output w.r.t. the flat parameters."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = dout
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = np.outer(delta, acts[i])
            grads_b[i] = delta
            if i > 0:
                delta = (self.weights[i].T @ delta) * (1.0 - acts[i] ** 2)
        parts = []
        for gw, gb in zip(grads_w, grads_b):
            parts.append(gw.ravel())
            parts.append(gb)
        return np.concatenate(parts)


def _check_state(agent, state) -> np.ndarray:
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (agent.state_dim,):
        raise InvalidInputError(
            f"state shape {state.shape} does not match ({agent.state_dim},)"
        )
    if not np.all(np.isfinite(state)):
        raise InvalidInputError("state contains non-finite entries")
    return state


def _check_action(agent, action) -> np.ndarray:
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (agent.action_dim,):
        raise InvalidInputError(
            f"action shape {action.shape} does not match ({agent.action_dim},)"
        )
    if not np.all(np.isfinite(action)):
        raise InvalidInputError("action contains non-finite entries")
    return action


class Agent:
    """Common agent surface: act, surrogate reward/gradient, flat params."""

    kind: str = ""

    def __init__(self, state_dim: int, action_dim: int):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)

    def act(self, state, mode: str = "mean", rng: np.random.Generator | None = None):
        raise NotImplementedError

    def surrogate_reward(self, state, action) -> float:
        raise NotImplementedError

    def surrogate_gradient(self, state, action) -> np.ndarray:
        """Exact analytic gradient of surrogate_reward w.r.t. the action."""
        raise NotImplementedError

    def get_params(self) -> np.ndarray:
        raise NotImplementedError

    def set_params(self, flat) -> None:
        raise NotImplementedError

    @property
    def trainable_slice(self) -> slice:
        """Slice of the flat parameter vector that training searches over
        (the action network; value/curvature heads do not move actions)."""
        raise NotImplementedError


class GaussianPolicyAgent(Agent):
    kind = "gaussian"

    def __init__(self, state_dim: int, action_dim: int, rng: np.random.Generator):
        super().__init__(state_dim, action_dim)
        self.mean_net = MLP(state_dim, action_dim, rng, out_scale=0.1)
        self.log_std = np.full(action_dim, GAUSSIAN_INIT_LOG_STD)

    def act(self, state, mode: str = "mean", rng: np.random.Generator | None = None):
        state = _check_state(self, state)
        # tanh keeps the mean inside the (-1, 1) action box; an unbounded
        # policy would saturate the env clamp and blind additive attacks
        mean = np.tanh(self.mean_net.forward(state))
        if mode == "mean":
            return mean
        if mode == "sample":
            if rng is None:
                raise InvalidInputError("sample mode requires an rng")
            return mean + np.exp(self.log_std) * rng.standard_normal(self.action_dim)
        raise InvalidInputError(f"unknown act mode {mode!r}")

    def surrogate_reward(self, state, action) -> float:
        state = _check_state(self, state)
        action = _check_action(self, action)
        mean = np.tanh(self.mean_net.forward(state))
        z = (action - mean) / np.exp(self.log_std)
        return float(
            -0.5 * np.sum(z * z)
            - np.sum(self.log_std)
            - 0.5 * self.action_dim * np.log(2.0 * np.pi)
        )

    def surrogate_gradient(self, state, action) -> np.ndarray:
        state = _check_state(self, state)
        action = _check_action(self, action)
        mean = np.tanh(self.mean_net.forward(state))
        return -(action - mean) / np.exp(2.0 * self.log_std)

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.mean_net.get_params(), self.log_std])

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        n = self.mean_net.n_params
        if flat.shape != (n + self.action_dim,):
            raise InvalidInputError("parameter vector has the wrong length")
        self.mean_net.set_params(flat[:n])
        self.log_std = flat[n:].copy()

    @property
    def trainable_slice(self) -> slice:
        return slice(0, self.mean_net.n_params)


class QuadraticQAgent(Agent):
    kind = "quadratic_q"

    def __init__(self, state_dim: int, action_dim: int, rng: np.random.Generator):
        super().__init__(state_dim, action_dim)
        m = action_dim
        self.mu_net = MLP(state_dim, m, rng, out_scale=0.1)
        self.v_net = MLP(state_dim, 1, rng, out_scale=0.1)
        self.chol_net = MLP(state_dim, m * (m + 1) // 2, rng)
        self._tril = np.tril_indices(m)

    def curvature(self, state) -> np.ndarray:
        """P(s): symmetric positive definite m x m curvature matrix."""
        state = _check_state(self, state)
        raw = self.chol_net.forward(state)
        m = self.action_dim
        chol = np.zeros((m, m))
        chol[self._tril] = raw
        diag = np.arange(m)
        chol[diag, diag] = np.exp(chol[diag, diag] + CHOL_DIAG_BIAS)
        return chol @ chol.T

    def act(self, state, mode: str = "mean", rng: np.random.Generator | None = None):
        state = _check_state(self, state)
        if mode not in ("mean", "sample"):
            raise InvalidInputError(f"unknown act mode {mode!r}")
        # tanh(mu(s)) is the argmax of the concave quadratic and stays
        # inside the (-1, 1) action box, keeping additive deltas effective
        return np.tanh(self.mu_net.forward(state))

    def surrogate_reward(self, state, action) -> float:
        state = _check_state(self, state)
        action = _check_action(self, action)
        d = action - np.tanh(self.mu_net.forward(state))
        value = self.v_net.forward(state)[0]
        return float(value - d @ self.curvature(state) @ d)

    def surrogate_gradient(self, state, action) -> np.ndarray:
        state = _check_state(self, state)
        action = _check_action(self, action)
        d = action - np.tanh(self.mu_net.forward(state))
        return -2.0 * (self.curvature(state) @ d)

    def get_params(self) -> np.ndarray:
        return np.concatenate(
            [self.mu_net.get_params(), self.v_net.get_params(), self.chol_net.get_params()]
        )

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        sizes = [self.mu_net.n_params, self.v_net.n_params, self.chol_net.n_params]
        if flat.shape != (sum(sizes),):
            raise InvalidInputError("parameter vector has the wrong length")
        a, b = sizes[0], sizes[0] + sizes[1]
        self.mu_net.set_params(flat[:a])
        self.v_net.set_params(flat[a:b])
        self.chol_net.set_params(flat[b:])

    @property
    def trainable_slice(self) -> slice:
        return slice(0, self.mu_net.n_params)


AGENT_KINDS = {
    GaussianPolicyAgent.kind: GaussianPolicyAgent,
    QuadraticQAgent.kind: QuadraticQAgent,
}


def new_agent(kind: str, state_dim: int, action_dim: int, rng: np.random.Generator) -> Agent:
    try:
        cls = AGENT_KINDS[kind]
    except KeyError:
        raise InvalidInputError(
            f"unknown agent kind {kind!r}; choose from {sorted(AGENT_KINDS)}"
        )
    return cls(state_dim, action_dim, rng)


def surrogate_gradient(agent: Agent, state, action, method: str = "analytic",
                       n_samples: int = 50, sigma: float = 0.05,
                       rng: np.random.Generator | None = None) -> np.ndarray:
    """Action-gradient of the agent's surrogate reward.

    ``analytic`` returns the closed form.  ``sampled`` probes the
    surrogate at ``action + sigma * xi`` for standard normal ``xi`` and
    returns the slope of the least-squares linear fit, which needs at
    least 2 * action_dim probes to be well posed.
    """
    if method == "analytic":
        return agent.surrogate_gradient(state, action)
    if method != "sampled":
        raise InvalidInputError(f"unknown gradient method {method!r}")
    m = agent.action_dim
    if n_samples < 2 * m:
        raise InvalidInputError(f"sampled gradient needs n_samples >= {2 * m}, got {n_samples}")
    if sigma <= 0:
        raise InvalidInputError("sampled gradient needs sigma > 0")
    if rng is None:
        raise InvalidInputError("sampled gradient requires an rng")
    action = _check_action(agent, action)
    offsets = sigma * rng.standard_normal((n_samples, m))
    values = np.array([
        agent.surrogate_reward(state, action + off) for off in offsets
    ])
    design = np.hstack([np.ones((n_samples, 1)), offsets])
    coef, *_ = np.linalg.lstsq(design, values, rcond=None)
    return coef[1:]


def save_weights(agent: Agent, path) -> None:
    params = agent.get_params()
    head = struct.pack(
        "<4sH12sIIIIQ",
        WEIGHTS_MAGIC,
        WEIGHTS_VERSION,
        agent.kind.encode("ascii").ljust(12, b"\x00"),
        agent.state_dim,
        agent.action_dim,
        HIDDEN_WIDTH,
        HIDDEN_LAYERS,
        params.size,
    )
    with open(path, "wb") as fh:
        fh.write(head + params.astype("<f8").tobytes())


def load_weights(path) -> Agent:
    with open(path, "rb") as fh:
        blob = fh.read()
    head_size = struct.calcsize("<4sH12sIIIIQ")
    if len(blob) < head_size:
        raise FormatError("weight file too short")
    magic, version, raw_kind, state_dim, action_dim, hidden, layers, count = (
        struct.unpack_from("<4sH12sIIIIQ", blob, 0)
    )
    if magic != WEIGHTS_MAGIC:
        raise FormatError(f"bad weight-file magic {magic!r}")
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported weight-file version {version}")
    kind = raw_kind.rstrip(b"\x00").decode("ascii")
    if kind not in AGENT_KINDS:
        raise FormatError(f"unknown agent kind {kind!r} in weight file")
    if (hidden, layers) != (HIDDEN_WIDTH, HIDDEN_LAYERS):
        raise FormatError(
            f"weight file architecture {hidden}x{layers} does not match "
            f"{HIDDEN_WIDTH}x{HIDDEN_LAYERS}"
        )
    if len(blob) != head_size + 8 * count:
        raise FormatError(f"weight file length {len(blob)} does not match header")
    agent = new_agent(kind, state_dim, action_dim, np.random.default_rng(0))
    params = np.frombuffer(blob, dtype="<f8", count=count, offset=head_size).copy()
    if params.size != agent.get_params().size:
        raise FormatError("parameter count does not match the declared dimensions")
    agent.set_params(params)
    return agent


def packaged_weights_path(filename: str):
    """Path of a weight file shipped inside the package's data directory."""
    from importlib import resources

    return resources.files("actionraid").joinpath("data", filename)
