"""Cart-pole balancing with the classic-control constants and Euler steps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tiles import TileCoder

GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
HALF_POLE_LENGTH = 0.5
FORCE_MAG = 10.0
TIMESTEP = 0.02
ANGLE_LIMIT = 12 * 2 * math.pi / 360
POSITION_LIMIT = 2.4
MAX_STEPS = 1000
GAMMA = 0.99

LEFT = 0
RIGHT = 1

# (cart position, cart velocity, pole angle, pole angular velocity)
OBS_LOW = np.array([-POSITION_LIMIT, -3.0, -ANGLE_LIMIT, -3.5])
OBS_HIGH = np.array([POSITION_LIMIT, 3.0, ANGLE_LIMIT, 3.5])


def physics_constants() -> dict:
    return {
        "gravity": GRAVITY,
        "mass_cart": MASS_CART,
        "mass_pole": MASS_POLE,
        "half_pole_length": HALF_POLE_LENGTH,
        "force_mag": FORCE_MAG,
        "timestep": TIMESTEP,
        "angle_limit": ANGLE_LIMIT,
        "position_limit": POSITION_LIMIT,
        "max_steps": MAX_STEPS,
    }


def cartpole_dynamics(state, action):
    """One Euler step; returns ``(next_state, fell)``."""
    x, x_dot, theta, theta_dot = state
    force = FORCE_MAG if action == RIGHT else -FORCE_MAG
    cos, sin = math.cos(theta), math.sin(theta)
    total_mass = MASS_CART + MASS_POLE
    pole_mass_length = MASS_POLE * HALF_POLE_LENGTH
    temp = (force + pole_mass_length * theta_dot**2 * sin) / total_mass
    theta_acc = (GRAVITY * sin - cos * temp) / (
        HALF_POLE_LENGTH * (4.0 / 3.0 - MASS_POLE * cos**2 / total_mass)
    )
    x_acc = temp - pole_mass_length * theta_acc * cos / total_mass
    nxt = (
        x + TIMESTEP * x_dot,
        x_dot + TIMESTEP * x_acc,
        theta + TIMESTEP * theta_dot,
        theta_dot + TIMESTEP * theta_acc,
    )
    fell = abs(nxt[0]) > POSITION_LIMIT or abs(nxt[2]) > ANGLE_LIMIT
    return nxt, fell


class EpisodeOver(RuntimeError):
    pass


class CartPole:
    """Episodic cart-pole; reward +1 per step, at most ``MAX_STEPS`` steps."""

    n_actions = 2
    discount = GAMMA

    def __init__(self, max_steps: int = MAX_STEPS):
        self.max_steps = max_steps
        self.state = None
        self.t = 0
        self.done = True

    def reset(self, rng: np.random.Generator, state=None):
        self.state = tuple(rng.uniform(-0.05, 0.05, size=4)) if state is None else tuple(state)
        self.t = 0
        self.done = False
        return np.array(self.state)

    def step(self, action):
        """Returns ``(observation, reward, terminated, truncated)``.

        ``terminated`` means the pole fell or the cart left the track;
        ``truncated`` means the step cap was hit.
        """
        if self.done:
            raise EpisodeOver("episode has ended; call reset()")
        self.state, fell = cartpole_dynamics(self.state, action)
        self.t += 1
        truncated = not fell and self.t >= self.max_steps
        self.done = fell or truncated
        return np.array(self.state), 1.0, fell, truncated


def cartpole_step(env: CartPole, action):
    """``(next_state, reward, done)`` with ``done`` covering both fall and cap."""
    obs, reward, terminated, truncated = env.step(action)
    return obs, reward, terminated or truncated


@dataclass
class TileCodedFeatures:
    """State-action features: the state's tiles offset by ``action * size``."""

    coder: TileCoder
    n_actions: int = 2

    @property
    def n_features(self) -> int:
        return self.coder.size * self.n_actions

    def active(self, observation) -> np.ndarray:
        return np.asarray(self.coder(observation), dtype=np.int64)

    def __call__(self, observation) -> np.ndarray:
        idx = self.active(observation)
        phi = np.zeros((self.n_actions, self.n_features))
        for a in range(self.n_actions):
            phi[a, idx + a * self.coder.size] = 1.0
        return phi


def cartpole_features(n_tilings: int = 8, tiles_per_dim: int = 4, size: int = 1024):
    return TileCodedFeatures(TileCoder(OBS_LOW, OBS_HIGH, n_tilings, tiles_per_dim, size))
