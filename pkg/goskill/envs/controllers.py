"""Scripted behaviour policies used to generate mixed-quality offline data."""
from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Dict, Optional, Type

import numpy as np

from goskill.errors import ConfigError

from .point_nav import ACTION_DIM, POS, VEL, EnvState, PointNavSuite


class BaseController(ABC):
    """Maps an environment state to a 2D action in [-1, 1]."""

    quality = "base"

    def __init__(self, suite: PointNavSuite) -> None:
        self.suite = suite

    @abstractmethod
    def act(self, state: EnvState, rng: np.random.Generator) -> np.ndarray:
        """Return the action for ``state``."""

    def episode_limit(self, rng: np.random.Generator) -> int:
        """Number of steps this controller records before stopping."""
        return self.suite.horizon


class ExpertController(BaseController):
    """Velocity-tracking P-controller toward the current waypoint."""

    quality = "expert"

    def __init__(self, suite: PointNavSuite, max_speed: float = 0.8, gain: float = 1.5) -> None:
        super().__init__(suite)
        self.max_speed = max_speed
        self.gain = gain

    def act(self, state: EnvState, rng: np.random.Generator) -> np.ndarray:
        target = self.suite.current_target(state)
        obs = state.observation
        if target is None:
            return np.zeros(ACTION_DIM)
        offset = target - obs[POS]
        dist = float(np.linalg.norm(offset))
        desired = np.zeros(ACTION_DIM) if dist == 0.0 else offset / dist * min(self.max_speed, self.gain * dist)
        cfg = self.suite.config
        # invert v' = damping * (v + a * dt) for the desired velocity
        action = (desired / cfg.damping - obs[VEL]) / cfg.dt
        return np.clip(action, -1.0, 1.0)


class MediumController(ExpertController):
    """Expert plus Gaussian action noise; some episodes stop early."""

    quality = "medium"

    def __init__(self, suite: PointNavSuite, noise: float = 0.3, truncation: float = 0.3) -> None:
        super().__init__(suite)
        self.noise = noise
        self.truncation = truncation

    def act(self, state: EnvState, rng: np.random.Generator) -> np.ndarray:
        action = super().act(state, rng) + rng.normal(0.0, self.noise, size=ACTION_DIM)
        return np.clip(action, -1.0, 1.0)

    def episode_limit(self, rng: np.random.Generator) -> int:
        horizon = self.suite.horizon
        if rng.random() < self.truncation and horizon > 4:
            return int(rng.integers(max(1, horizon // 5), max(2, horizon // 2)))
        return horizon


class RandomController(BaseController):
    quality = "random"

    def act(self, state: EnvState, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=ACTION_DIM)


CONTROLLERS: Dict[str, Type[BaseController]] = {
    "expert": ExpertController,
    "medium": MediumController,
    "random": RandomController,
}

# generation order within each task; the sub-optimal preset keeps a prefix
GENERATION_ORDER = ("random", "medium", "expert")


def build_controller(
    quality: str,
    suite: PointNavSuite,
    noise: Optional[float] = None,
    truncation: Optional[float] = None,
) -> BaseController:
    if quality not in CONTROLLERS:
        raise ConfigError(f"unknown controller '{quality}', expected one of {sorted(CONTROLLERS)}")
    if quality == "medium":
        kwargs = {}
        if noise is not None:
            kwargs["noise"] = noise
        if truncation is not None:
            kwargs["truncation"] = truncation
        return MediumController(suite, **kwargs)
    return CONTROLLERS[quality](suite)


__all__ = [
    "BaseController",
    "ExpertController",
    "MediumController",
    "RandomController",
    "CONTROLLERS",
    "GENERATION_ORDER",
    "build_controller",
]
