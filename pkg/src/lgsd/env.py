"""Planar toy environments: a point mass and an arm that pushes an object.

States are flat float64 vectors so the learners can consume them directly:
``PointMass2D`` uses ``[x, y]``, ``Pusher`` uses ``[arm_x, arm_y, obj_x, obj_y]``.
Both environments step batches of states at once; a batch row is one episode.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class EnvConfig:
    name: str = "point"
    bound: float = 1.0
    dt: float = 0.05
    v_max: float = 1.0
    contact_radius: float = 0.06
    push_gain: float = 1.0
    episode_length: int = 100
    init_distance: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.name not in ENVIRONMENTS:
            raise ValueError(f"unknown environment {self.name!r}; choose from {sorted(ENVIRONMENTS)}")
        for field in ("bound", "dt", "v_max", "contact_radius", "push_gain", "init_distance"):
            if not getattr(self, field) > 0:
                raise ValueError(f"{field} must be positive")
        if self.episode_length < 1:
            raise ValueError("episode_length must be >= 1")
        if self.name == "pusher" and self.init_distance > self.bound:
            raise ValueError("init_distance must fit inside the arena")

    def to_dict(self) -> dict:
        return asdict(self)


def _check_action(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise ValueError("action contains non-finite values")
    return np.clip(u, -1.0, 1.0)


class PointMass2D:
    state_dim = 2
    action_dim = 2
    position_slice = slice(0, 2)

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig(name="point")

    def reset(self, seed: int | None = None) -> np.ndarray:
        return np.zeros(2)

    def reset_batch(self, seeds) -> np.ndarray:
        return np.zeros((len(seeds), 2))

    def step(self, state, action) -> np.ndarray:
        c = self.config
        u = _check_action(action)
        state = np.asarray(state, dtype=np.float64)
        return np.clip(state + c.dt * c.v_max * u, -c.bound, c.bound)

    def position(self, states) -> np.ndarray:
        """Agent position, the coordinates that coverage and goals refer to."""
        return np.asarray(states)[..., 0:2]


class Pusher:
    state_dim = 4
    action_dim = 2
    position_slice = slice(2, 4)

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig(name="pusher")

    def reset(self, seed: int | None = None) -> np.ndarray:
        angle = np.random.default_rng(seed).uniform(0.0, 2.0 * np.pi)
        d = self.config.init_distance
        return np.array([d * np.cos(angle), d * np.sin(angle), 0.0, 0.0])

    def reset_batch(self, seeds) -> np.ndarray:
        return np.stack([self.reset(s) for s in seeds])

    def step(self, state, action) -> np.ndarray:
        """Move the arm, then transfer its displacement to the object on contact.

        The object receives ``push_gain`` times the component of the arm
        displacement along the contact normal ``(obj - arm') / |obj - arm'|``.
        Only pushing transfers motion: a negative component is dropped.
        """
        c = self.config
        u = _check_action(action)
        state = np.asarray(state, dtype=np.float64)
        single = state.ndim == 1
        s = state[None, :] if single else state
        u = u[None, :] if u.ndim == 1 else u
        arm, obj = s[:, 0:2], s[:, 2:4]
        arm_new = np.clip(arm + c.dt * c.v_max * u, -c.bound, c.bound)
        gap = obj - arm_new
        dist = np.linalg.norm(gap, axis=1)
        contact = dist < c.contact_radius
        normal = np.divide(gap, dist[:, None], out=np.zeros_like(gap), where=dist[:, None] > 0)
        along = np.maximum(np.sum((arm_new - arm) * normal, axis=1), 0.0)
        push = np.where(contact[:, None], c.push_gain * along[:, None] * normal, 0.0)
        obj_new = np.clip(obj + push, -c.bound, c.bound)
        out = np.concatenate([arm_new, obj_new], axis=1)
        return out[0] if single else out

    def position(self, states) -> np.ndarray:
        """Object position: what coverage, moved distance and goals measure."""
        return np.asarray(states)[..., 2:4]


ENVIRONMENTS = {"point": PointMass2D, "pusher": Pusher}


def make_env(config: EnvConfig):
    return ENVIRONMENTS[config.name](config)
