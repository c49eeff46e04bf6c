"""Classic-control tasks with sparsified rewards.

All four tasks take continuous actions and emit -1 per timestep except where
noted:

* ``mountaincar``: reaching ``x >= 0.45`` gives +100 and ends the episode.  H = 200.
* ``cartpole_swingup``: +cos(theta) while ``cos(theta) >= 0.5``; leaving the rail
  gives -200 and ends the episode.  H = 500.
* ``acrobot``: the episode ends (reward 0) once the tip height reaches 1.9
  (height measured in link lengths, range [-2, 2]).  H = 500.
* ``pendulum``: +cos(theta) while ``cos(theta) >= 0.9``; pole mass 1.75.  H = 100.

Rewards are computed on the post-transition state.  Mountaincar and
cartpole integrate with semi-implicit Euler, pendulum and acrobot with RK4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, InvalidArgument

__all__ = [
    "EnvSpec",
    "StepResult",
    "ClassicControlEnv",
    "MountainCar",
    "CartpoleSwingup",
    "Acrobot",
    "Pendulum",
    "ENV_IDS",
    "make",
]


@dataclass(frozen=True)
class EnvSpec:
    id: str
    obs_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    horizon: int
    # Nominal observation ranges; used only to scale policy inputs.
    obs_low: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    obs_high: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def clip_action(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.float64).reshape(self.action_dim)
        return np.clip(a, self.action_low, self.action_high)


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    extrinsic_reward: float
    terminal: bool
    truncated: bool
    success: bool = False


def _rk4(f, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _wrap(angle: float) -> float:
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


class ClassicControlEnv:
    """Stateful single-episode simulator; subclasses provide the physics."""

    spec: EnvSpec

    def __init__(self) -> None:
        self.np_random = np.random.default_rng()
        self._state: np.ndarray | None = None
        self._t = 0
        self._done = True

    # -- subclass hooks -------------------------------------------------
    def _initial_state(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _transition(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _observe(self, state: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _reward(self, state: np.ndarray) -> tuple[float, bool, bool]:
        """(reward, terminal, success) for the post-transition state."""
        raise NotImplementedError

    # -- public API -----------------------------------------------------
    @property
    def state(self) -> np.ndarray:
        if self._state is None:
            raise ContractViolation("environment has not been reset")
        return self._state.copy()

    @property
    def t(self) -> int:
        return self._t

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.np_random = np.random.default_rng(seed)
        self._state = self._initial_state(self.np_random)
        self._t = 0
        self._done = False
        return self._observe(self._state)

    def set_state(self, state, t: int = 0) -> np.ndarray:
        """Place the simulator in an explicit physical state (testing, surfaces)."""
        self._state = np.array(state, dtype=np.float64)
        self._t = t
        self._done = False
        return self._observe(self._state)

    def observe(self, state) -> np.ndarray:
        return self._observe(np.asarray(state, dtype=np.float64))

    def reward(self, state) -> tuple[float, bool, bool]:
        """``(reward, terminal, success)`` for arriving in ``state``."""
        return self._reward(np.asarray(state, dtype=np.float64))

    def step(self, action) -> StepResult:
        if self._done or self._state is None:
            raise ContractViolation("step() called on a finished or unreset episode")
        a = self.spec.clip_action(action)
        self._state = self._transition(self._state, a)
        self._t += 1
        reward, terminal, success = self._reward(self._state)
        truncated = (not terminal) and self._t >= self.spec.horizon
        self._done = terminal or truncated
        return StepResult(self._observe(self._state), float(reward), terminal, truncated, success)


class MountainCar(ClassicControlEnv):
    """Continuous-action mountain car; state ``(position, velocity)``."""

    min_position = -1.2
    max_position = 0.6
    max_speed = 0.07
    goal_position = 0.45
    power = 0.0015
    gravity = 0.0025

    spec = EnvSpec(
        id="mountaincar", obs_dim=2, action_dim=1,
        action_low=np.array([-1.0]), action_high=np.array([1.0]), horizon=200,
        obs_low=np.array([-1.2, -0.07]), obs_high=np.array([0.6, 0.07]),
    )

    def _initial_state(self, rng):
        return np.array([rng.uniform(-0.6, -0.4), 0.0])

    def _transition(self, state, action):
        x, v = float(state[0]), float(state[1])
        v += float(action[0]) * self.power - self.gravity * math.cos(3.0 * x)
        v = min(max(v, -self.max_speed), self.max_speed)
        x += v
        x = min(max(x, self.min_position), self.max_position)
        if x == self.min_position and v < 0.0:
            v = 0.0
        return np.array([x, v])

    def _observe(self, state):
        return state.copy()

    def _reward(self, state):
        if state[0] >= self.goal_position:
            return 100.0, True, True
        return -1.0, False, False

    @classmethod
    def energy(cls, state) -> float:
        """Kinetic plus potential energy per unit mass (unforced motion conserves it)."""
        x, v = state[0], state[1]
        return 0.5 * v * v + cls.gravity * math.sin(3.0 * x) / 3.0


class Pendulum(ClassicControlEnv):
    """Torque-limited pendulum; state ``(theta, theta_dot)`` with theta = 0 upright."""

    max_speed = 8.0
    max_torque = 2.0
    dt = 0.05
    g = 10.0
    m = 1.75
    length = 1.0

    spec = EnvSpec(
        id="pendulum", obs_dim=3, action_dim=1,
        action_low=np.array([-2.0]), action_high=np.array([2.0]), horizon=100,
        obs_low=np.array([-1.0, -1.0, -8.0]), obs_high=np.array([1.0, 1.0, 8.0]),
    )

    def _initial_state(self, rng):
        return np.array([rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0)])

    def _derivs(self, y, u):
        return np.array([
            y[1],
            3.0 * self.g / (2.0 * self.length) * math.sin(y[0])
            + 3.0 / (self.m * self.length ** 2) * u,
        ])

    def _transition(self, state, action):
        u = float(action[0])
        th, thdot = _rk4(lambda y: self._derivs(y, u), state, self.dt)
        thdot = min(max(thdot, -self.max_speed), self.max_speed)
        return np.array([_wrap(th), thdot])

    def _observe(self, state):
        return np.array([math.cos(state[0]), math.sin(state[0]), state[1]])

    def _reward(self, state):
        c = math.cos(state[0])
        if c >= 0.9:
            return c, False, True
        return -1.0, False, False

    @classmethod
    def energy(cls, state) -> float:
        return 0.5 * state[1] ** 2 + 1.5 * cls.g / cls.length * math.cos(state[0])


class CartpoleSwingup(ClassicControlEnv):
    """Cart-pole starting with the pole hanging down; state ``(x, x_dot, theta, theta_dot)``."""

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    length = 0.5  # half pole length
    force_mag = 10.0
    tau = 0.02
    x_threshold = 2.4

    spec = EnvSpec(
        id="cartpole_swingup", obs_dim=5, action_dim=1,
        action_low=np.array([-1.0]), action_high=np.array([1.0]), horizon=500,
        obs_low=np.array([-2.4, -5.0, -1.0, -1.0, -10.0]),
        obs_high=np.array([2.4, 5.0, 1.0, 1.0, 10.0]),
    )

    def _initial_state(self, rng):
        noise = rng.uniform(-0.05, 0.05, size=4)
        return np.array([0.0, 0.0, math.pi, 0.0]) + noise

    def _transition(self, state, action):
        x, x_dot, th, th_dot = (float(s) for s in state)
        force = self.force_mag * float(action[0])
        total_mass = self.masscart + self.masspole
        pml = self.masspole * self.length
        cos, sin = math.cos(th), math.sin(th)
        temp = (force + pml * th_dot * th_dot * sin) / total_mass
        th_acc = (self.gravity * sin - cos * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * cos * cos / total_mass)
        )
        x_acc = temp - pml * th_acc * cos / total_mass
        x_dot += self.tau * x_acc
        x += self.tau * x_dot
        th_dot += self.tau * th_acc
        th += self.tau * th_dot
        return np.array([x, x_dot, _wrap(th), th_dot])

    def _observe(self, state):
        return np.array([state[0], state[1], math.cos(state[2]), math.sin(state[2]), state[3]])

    def _reward(self, state):
        if abs(state[0]) >= self.x_threshold:
            return -200.0, True, False
        c = math.cos(state[2])
        if c >= 0.5:
            return c, False, True
        return -1.0, False, False


class Acrobot(ClassicControlEnv):
    """Two-link underactuated arm with torque on the middle joint.

    State ``(theta1, theta2, dtheta1, dtheta2)``; both angles zero means
    hanging straight down.
    """

    dt = 0.2
    link_length_1 = 1.0
    link_mass_1 = 1.0
    link_mass_2 = 1.0
    link_com_1 = 0.5
    link_com_2 = 0.5
    link_moi = 1.0
    max_vel_1 = 4.0 * math.pi
    max_vel_2 = 9.0 * math.pi
    success_height = 1.9

    spec = EnvSpec(
        id="acrobot", obs_dim=6, action_dim=1,
        action_low=np.array([-1.0]), action_high=np.array([1.0]), horizon=500,
        obs_low=np.array([-1.0, -1.0, -1.0, -1.0, -4.0 * math.pi, -9.0 * math.pi]),
        obs_high=np.array([1.0, 1.0, 1.0, 1.0, 4.0 * math.pi, 9.0 * math.pi]),
    )

    def _initial_state(self, rng):
        return rng.uniform(-0.1, 0.1, size=4)

    def _derivs(self, s, torque):
        m1, m2 = self.link_mass_1, self.link_mass_2
        l1 = self.link_length_1
        lc1, lc2 = self.link_com_1, self.link_com_2
        I1 = I2 = self.link_moi
        g = 9.8
        th1, th2, dth1, dth2 = s
        d1 = m1 * lc1 ** 2 + m2 * (l1 ** 2 + lc2 ** 2 + 2 * l1 * lc2 * math.cos(th2)) + I1 + I2
        d2 = m2 * (lc2 ** 2 + l1 * lc2 * math.cos(th2)) + I2
        phi2 = m2 * lc2 * g * math.cos(th1 + th2 - math.pi / 2.0)
        phi1 = (
            -m2 * l1 * lc2 * dth2 ** 2 * math.sin(th2)
            - 2 * m2 * l1 * lc2 * dth2 * dth1 * math.sin(th2)
            + (m1 * lc1 + m2 * l1) * g * math.cos(th1 - math.pi / 2.0)
            + phi2
        )
        ddth2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dth1 ** 2 * math.sin(th2) - phi2) / (
            m2 * lc2 ** 2 + I2 - d2 ** 2 / d1
        )
        ddth1 = -(d2 * ddth2 + phi1) / d1
        return np.array([dth1, dth2, ddth1, ddth2])

    def _transition(self, state, action):
        torque = float(action[0])
        s = _rk4(lambda y: self._derivs(y, torque), state, self.dt)
        return np.array([
            _wrap(s[0]),
            _wrap(s[1]),
            min(max(s[2], -self.max_vel_1), self.max_vel_1),
            min(max(s[3], -self.max_vel_2), self.max_vel_2),
        ])

    def _observe(self, state):
        th1, th2 = state[0], state[1]
        return np.array([math.cos(th1), math.sin(th1), math.cos(th2), math.sin(th2), state[2], state[3]])

    @staticmethod
    def tip_height(state) -> float:
        return -math.cos(state[0]) - math.cos(state[0] + state[1])

    def _reward(self, state):
        if self.tip_height(state) >= self.success_height:
            return 0.0, True, True
        return -1.0, False, False


_REGISTRY: dict[str, type[ClassicControlEnv]] = {
    "mountaincar": MountainCar,
    "cartpole_swingup": CartpoleSwingup,
    "acrobot": Acrobot,
    "pendulum": Pendulum,
}
ENV_IDS = tuple(_REGISTRY)


def make(env_id: str) -> ClassicControlEnv:
    try:
        return _REGISTRY[env_id]()
    except KeyError:
        raise InvalidArgument(f"unknown environment {env_id!r}; choose from {ENV_IDS}") from None


def get_spec(env_id: str) -> EnvSpec:
    if env_id not in _REGISTRY:
        raise InvalidArgument(f"unknown environment {env_id!r}; choose from {ENV_IDS}")
    return _REGISTRY[env_id].spec
