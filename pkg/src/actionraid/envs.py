"""Deterministic, seedable, snapshot-able continuous-control environments.

Two desk-scale environments stand in for the usual physics suites: a
2-action planar lander and a 4-action two-leg crawler.  Both integrate
explicit Euler at a fixed dt, draw randomness only at reset, and expose
their full mutable state as the observation vector, which keeps
snapshots small and bit-exact.

Snapshot byte layout (little-endian):

    magic    4 bytes   b"ARES"
    version  uint16    currently 1
    name     8 bytes   ascii environment name, NUL padded
    steps    uint64    step counter within the episode
    done     uint8     0 or 1
    n        uint32    state vector length
    state    n float64
    rng      16 bytes PCG64 state + 16 bytes increment
             + uint8 has_uint32 + uint32 uinteger

Restoring a snapshot and replaying the same actions reproduces the
original (state, reward, done) stream exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidInputError, ProtocolError

SNAPSHOT_MAGIC = b"ARES"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class StepResult:
    state: np.ndarray
    reward: float
    done: bool


# Versioned physics/reward constants. Golden-value tests pin these; any
# change must bump the version and refresh the goldens.
LANDER_CONSTANTS = {
    "version": 2,
    "gravity": 3.0,
    "thrust_up": 7.0,
    "thrust_side": 4.0,
    "dt": 0.05,
    "fuel_init": 14.0,
    "burn_rate": 2.0,
    "fuel_cost": 0.05,
    "effort_cost": 0.1,
    "pad_half_width": 2.0,
    "max_landing_speed": 1.5,
    "speed_excess_penalty": 20.0,
    "off_pad_penalty": 30.0,
    "x_limit": 12.0,
    "y_limit": 25.0,
    "max_steps": 300,
    "land_reward": 100.0,
    "crash_penalty": 100.0,
    "reward_cap": 110.0,
    "solvable_threshold": 0.0,
}

QUAD_CONSTANTS = {
    "version": 1,
    "dt": 0.05,
    "torque_gain": 8.0,
    "spring_k": 4.0,
    "joint_damping": 1.0,
    "angle_limit": 1.2,
    "omega_limit": 6.0,
    "contact_threshold": 1.8,
    "push_gain": 0.8,
    "friction": 1.2,
    "progress_weight": 6.0,
    "torque_cost": 0.01,
    "max_steps": 400,
    "reward_cap": 10.0,
    "solvable_threshold": 1.0,
}


def _check_seed(seed) -> int:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool) or seed < 0:
        raise InvalidInputError(f"seed must be a nonnegative integer, got {seed!r}")
    return int(seed)


def _pack_rng(rng: np.random.Generator) -> bytes:
    st = rng.bit_generator.state
    inner = st["state"]
    return (
        int(inner["state"]).to_bytes(16, "little")
        + int(inner["inc"]).to_bytes(16, "little")
        + struct.pack("<BI", int(st["has_uint32"]), int(st["uinteger"]))
    )


def _unpack_rng(buf: bytes) -> np.random.Generator:
    state = int.from_bytes(buf[0:16], "little")
    inc = int.from_bytes(buf[16:32], "little")
    has_uint32, uinteger = struct.unpack_from("<BI", buf, 32)
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": state, "inc": inc},
        "has_uint32": int(has_uint32),
        "uinteger": int(uinteger),
    }
    return gen


class Env:
    """Base class: deterministic episodic environment with byte snapshots."""

    name: str = ""
    state_dim: int = 0
    action_dim: int = 0
    action_low: float = -1.0
    action_high: float = 1.0
    max_steps: int = 0
    reward_cap: float = 0.0
    solvable_threshold: float = 0.0

    def __init__(self):
        self._state = np.zeros(self.state_dim, dtype=np.float64)
        self._steps = 0
        self._done = True
        self._rng = np.random.Generator(np.random.PCG64(0))
        self.reset(0)

    @property
    def action_range(self) -> float:
        return self.action_high - self.action_low

    @property
    def state(self) -> np.ndarray:
        return self._state.copy()

    @property
    def done(self) -> bool:
        return self._done

    def reset(self, seed: int) -> np.ndarray:
        self._rng = np.random.Generator(np.random.PCG64(_check_seed(seed)))
        self._state = self._initial_state(self._rng)
        self._steps = 0
        self._done = False
        return self._state.copy()

    def step(self, action) -> StepResult:
        if self._done:
            raise ProtocolError("step called on a finished episode; reset first")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.action_dim,):
            raise InvalidInputError(
                f"action shape {action.shape} does not match ({self.action_dim},)"
            )
        if not np.all(np.isfinite(action)):
            raise InvalidInputError("action contains non-finite entries")
        clamped = np.clip(action, self.action_low, self.action_high)
        reward, terminal = self._advance(clamped)
        self._steps += 1
        if terminal or self._steps >= self.max_steps:
            self._done = True
        return StepResult(self._state.copy(), float(reward), self._done)

    def snapshot(self) -> bytes:
        head = struct.pack(
            "<4sH8sQBI",
            SNAPSHOT_MAGIC,
            SNAPSHOT_VERSION,
            self.name.encode("ascii").ljust(8, b"\x00"),
            self._steps,
            int(self._done),
            self._state.size,
        )
        body = self._state.astype("<f8").tobytes()
        return head + body + _pack_rng(self._rng)

    def restore(self, snap: bytes) -> None:
        name, steps, done, state, rng = _parse_snapshot(snap)
        if name != self.name:
            raise InvalidInputError(
                f"snapshot is for environment {name!r}, not {self.name!r}"
            )
        if state.size != self.state_dim:
            raise FormatError(
                f"snapshot state length {state.size} != state_dim {self.state_dim}"
            )
        self._state = state
        self._steps = steps
        self._done = done
        self._rng = rng

    def clone(self) -> "Env":
        twin = type(self)()
        twin.restore(self.snapshot())
        return twin

    # subclass hooks
    def _initial_state(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _advance(self, action: np.ndarray) -> tuple[float, bool]:
        """Mutate self._state in place; return (reward, terminal)."""
        raise NotImplementedError


def _parse_snapshot(snap: bytes):
    head_size = struct.calcsize("<4sH8sQBI")
    if not isinstance(snap, (bytes, bytearray)) or len(snap) < head_size:
        raise FormatError("snapshot too short")
    magic, version, raw_name, steps, done, n = struct.unpack_from("<4sH8sQBI", snap, 0)
    if magic != SNAPSHOT_MAGIC:
        raise FormatError(f"bad snapshot magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise FormatError(f"unsupported snapshot version {version}")
    rng_size = 16 + 16 + struct.calcsize("<BI")
    expected = head_size + 8 * n + rng_size
    if len(snap) != expected:
        raise FormatError(f"snapshot length {len(snap)} != expected {expected}")
    state = np.frombuffer(snap, dtype="<f8", count=n, offset=head_size).copy()
    rng = _unpack_rng(snap[head_size + 8 * n :])
    name = raw_name.rstrip(b"\x00").decode("ascii")
    return name, steps, bool(done), state, rng


class LanderLite(Env):
    """Planar point-mass lander with fuel.

    State [x, y, vx, vy, fuel]; actions (vertical thrust in [-1, 1],
    lateral thrust in [-1, 1]).  Vertical command only acts when
    positive (the engine cannot push down); thrust dies entirely when
    fuel runs out.  Touching the ground ends the episode: +100 for a
    slow touchdown on the pad (|x| within the pad half-width, speed at
    most the landing limit), otherwise a crash penalty graded by how
    much the impact exceeded the speed limit and missed the pad, capped
    at 100.  Drifting past the side or top limits costs the full
    penalty.  Each step pays a fuel cost proportional to commanded
    thrust, a quadratic actuation-effort cost, and earns a
    potential-based shaping term that rewards closing the distance to
    the pad center.  Fuel is tight: wasteful thrust profiles run dry
    before touchdown and free-fall in.
    """

    name = "lander"
    state_dim = 5
    action_dim = 2
    max_steps = LANDER_CONSTANTS["max_steps"]
    reward_cap = LANDER_CONSTANTS["reward_cap"]
    solvable_threshold = LANDER_CONSTANTS["solvable_threshold"]
    constants = LANDER_CONSTANTS

    def _initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return np.array(
            [
                rng.uniform(-2.0, 2.0),
                rng.uniform(7.0, 9.0),
                rng.uniform(-0.5, 0.5),
                rng.uniform(-0.5, 0.0),
                LANDER_CONSTANTS["fuel_init"],
            ],
            dtype=np.float64,
        )

    def _advance(self, action: np.ndarray) -> tuple[float, bool]:
        c = LANDER_CONSTANTS
        x, y, vx, vy, fuel = self._state
        up = max(action[0], 0.0)
        lat = action[1]

        if fuel > 0.0:
            ax = c["thrust_side"] * lat
            ay = c["thrust_up"] * up - c["gravity"]
            effort = up + abs(lat)
            fuel = max(0.0, fuel - c["burn_rate"] * effort * c["dt"])
            # quadratic effort term makes full-deflection (bang-bang)
            # actuation strictly costlier than an interior throttle
            cost = c["fuel_cost"] * effort + c["effort_cost"] * (up * up + lat * lat)
        else:
            ax = 0.0
            ay = -c["gravity"]
            cost = 0.0

        dist_before = float(np.hypot(x, y))
        vx += ax * c["dt"]
        vy += ay * c["dt"]
        x += vx * c["dt"]
        y += vy * c["dt"]

        reward = -cost
        terminal = False
        if y <= 0.0:
            y = 0.0
            terminal = True
            speed = float(np.hypot(vx, vy))
            speed_excess = max(0.0, speed - c["max_landing_speed"])
            off_pad = max(0.0, abs(x) - c["pad_half_width"])
            if speed_excess == 0.0 and off_pad == 0.0:
                reward += c["land_reward"]
            else:
                # graded crash: harder or farther impacts hurt more
                reward -= min(
                    c["crash_penalty"],
                    c["speed_excess_penalty"] * speed_excess
                    + c["off_pad_penalty"] * off_pad,
                )
        elif abs(x) > c["x_limit"] or y > c["y_limit"]:
            terminal = True
            reward -= c["crash_penalty"]

        reward += dist_before - float(np.hypot(x, y))
        self._state = np.array([x, y, vx, vy, fuel], dtype=np.float64)
        return reward, terminal


class QuadActuator(Env):
    """Planar two-leg crawler driven by four joint torques.

    State [x, v, hip1, knee1, hip2, knee2, w_hip1, w_knee1, w_hip2,
    w_knee2]; actions are the four joint torques in [-1, 1].  Each joint
    is a damped torsional spring; angles saturate at a hard limit which
    zeroes the joint velocity.  A leg is in ground contact while it is
    near straight (cos(hip) + cos(knee) above the contact threshold),
    and a backswinging hip in contact propels the body forward against
    friction.  Reward is weighted forward progress minus a torque cost;
    episodes end only at the step cap.
    """

    name = "quad"
    state_dim = 10
    action_dim = 4
    max_steps = QUAD_CONSTANTS["max_steps"]
    reward_cap = QUAD_CONSTANTS["reward_cap"]
    solvable_threshold = QUAD_CONSTANTS["solvable_threshold"]
    constants = QUAD_CONSTANTS

    def _initial_state(self, rng: np.random.Generator) -> np.ndarray:
        state = np.zeros(10, dtype=np.float64)
        state[2:6] = rng.uniform(-0.1, 0.1, size=4)
        state[6:10] = rng.uniform(-0.1, 0.1, size=4)
        return state

    def _advance(self, action: np.ndarray) -> tuple[float, bool]:
        c = QUAD_CONSTANTS
        x, v = self._state[0], self._state[1]
        theta = self._state[2:6].copy()
        omega = self._state[6:10].copy()

        accel = c["torque_gain"] * action - c["spring_k"] * theta - c["joint_damping"] * omega
        omega = omega + accel * c["dt"]
        np.clip(omega, -c["omega_limit"], c["omega_limit"], out=omega)
        theta = theta + omega * c["dt"]
        hit = np.abs(theta) > c["angle_limit"]
        theta[hit] = np.sign(theta[hit]) * c["angle_limit"]
        omega[hit] = 0.0

        push = 0.0
        for hip, knee in ((0, 1), (2, 3)):
            straightness = np.cos(theta[hip]) + np.cos(theta[knee])
            if straightness >= c["contact_threshold"]:
                push += c["push_gain"] * max(omega[hip], 0.0)
        v = v + (push - c["friction"] * v) * c["dt"]
        new_x = x + v * c["dt"]

        reward = c["progress_weight"] * (new_x - x) - c["torque_cost"] * float(
            np.sum(np.abs(action))
        )
        self._state = np.concatenate(([new_x, v], theta, omega))
        return reward, False


ENV_REGISTRY = {LanderLite.name: LanderLite, QuadActuator.name: QuadActuator}


def make_env(name: str) -> Env:
    try:
        cls = ENV_REGISTRY[name]
    except KeyError:
        raise InvalidInputError(
            f"unknown environment {name!r}; choose from {sorted(ENV_REGISTRY)}"
        )
    return cls()


def restore_from_snapshot(snap: bytes) -> Env:
    """Build a fresh environment of the snapshotted type and load it."""
    name = _parse_snapshot(snap)[0]
    env = make_env(name)
    env.restore(snap)
    return env


def lander_heuristic(state) -> np.ndarray:
    """Hand-tuned PD landing controller; establishes LanderLite is solvable."""
    c = LANDER_CONSTANTS
    x, y, vx, vy, _fuel = state
    hover = c["gravity"] / c["thrust_up"]
    target_vy = -min(1.4, max(0.2, 0.35 * y))
    up = hover + 0.8 * (target_vy - vy)
    lat = (-0.8 * x - 2.0 * vx) / c["thrust_side"]
    return np.clip([up, lat], -1.0, 1.0)


def quad_heuristic(state, t: int) -> np.ndarray:
    """Square-wave gait for QuadActuator: alternate hip pushes, knees lift
    during recovery to break contact."""
    period = 40
    first_half = (t % period) < period // 2
    if first_half:
        return np.array([1.0, -0.2, -1.0, 0.8])
    return np.array([-1.0, 0.8, 1.0, -0.2])
