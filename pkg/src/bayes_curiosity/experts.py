"""Hand-written controllers used to generate demonstrations.

Each expert maps an observation to an (unclipped) action.  They only need
to produce trajectories that cover the task-relevant part of the state
space; none of them is optimal.
"""

from __future__ import annotations

import math

import numpy as np

from .envs import CartpoleSwingup, Pendulum
from .errors import InvalidArgument


def mountaincar_expert(obs: np.ndarray) -> np.ndarray:
    """Bang-bang energy pumping: push in the direction of motion."""
    return np.array([1.0 if obs[1] >= 0.0 else -1.0])


def pendulum_expert(obs: np.ndarray) -> np.ndarray:
    """Energy-shaping swing-up, PD balance near upright."""
    cos, sin, thdot = obs
    theta = math.atan2(sin, cos)
    if cos > 0.85:
        u = -(12.0 * theta + 2.0 * thdot)
    else:
        target = Pendulum.energy((0.0, 0.0))
        energy = Pendulum.energy((theta, thdot))
        u = 2.0 * (target - energy) * thdot
        if abs(thdot) < 1e-3:
            u = Pendulum.max_torque
    return np.array([u])


def cartpole_swingup_expert(obs: np.ndarray) -> np.ndarray:
    """Energy swing-up with cart centering, linear balance near upright."""
    x, x_dot, cos, sin, th_dot = obs
    theta = math.atan2(sin, cos)
    if cos > 0.8:
        force = x + 1.5 * x_dot + 25.0 * theta + 4.0 * th_dot
    elif abs(th_dot) < 0.1 and cos < -0.95:
        force = 3.0  # kick out of the hanging rest state
    else:
        mp, length, g = CartpoleSwingup.masspole, CartpoleSwingup.length, CartpoleSwingup.gravity
        # pole energy relative to the upright rest state
        energy = 0.5 * mp * (4.0 / 3.0) * length ** 2 * th_dot ** 2 + mp * g * length * (cos - 1.0)
        pump = min(max(30.0 * energy * th_dot * cos, -10.0), 10.0)
        force = pump - 3.0 * x - 3.0 * x_dot
    return np.array([force / CartpoleSwingup.force_mag])


def acrobot_expert(obs: np.ndarray) -> np.ndarray:
    """Pump energy by torquing the elbow along its own swing direction."""
    return np.array([math.copysign(1.0, obs[5])])


EXPERTS = {
    "mountaincar": mountaincar_expert,
    "pendulum": pendulum_expert,
    "cartpole_swingup": cartpole_swingup_expert,
    "acrobot": acrobot_expert,
}


def get_expert(env_id: str):
    try:
        return EXPERTS[env_id]
    except KeyError:
        raise InvalidArgument(f"no scripted expert for environment {env_id!r}") from None


__all__ = ["EXPERTS", "get_expert"]
