"""Toy 2-D point-mass environment: drive position and velocity to the origin.

State is (position, velocity) in [-1, 1]^2, action is a scalar in [-1, 1].
Cost is quadratic in position and action, so rewards are always <= 0 and the
fixed point (0, 0) with zero action is free. Episodes are truncated at a
fixed horizon; there are no terminal states.
"""

from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger(__name__)

STATE_DIM = 2
ACTION_DIM = 1
HORIZON = 200

_POSITION_STEP = 0.05
_VELOCITY_STEP = 0.1
_ACTION_COST = 0.1


def toy_env_step(state: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """Pure transition: next state, reward, and always-False terminal flag.

    Out-of-range actions are clamped (and logged at debug level). The reward
    charges the pre-transition position and the applied action.
    """
    x = float(state[0])
    v = float(state[1])
    a = float(np.asarray(action).reshape(-1)[0])
    if a < -1.0 or a > 1.0:
        logger.debug("action %.4f outside [-1, 1], clamped", a)
        a = min(1.0, max(-1.0, a))
    reward = -(x * x + _ACTION_COST * a * a)
    next_x = min(1.0, max(-1.0, x + _POSITION_STEP * v))
    next_v = min(1.0, max(-1.0, v + _VELOCITY_STEP * a))
    return np.array([next_x, next_v]), reward, False


class ToyEnv:
    """Stateful wrapper adding episode resets and horizon truncation."""

    state_dim = STATE_DIM
    action_dim = ACTION_DIM

    def __init__(self, horizon: int = HORIZON):
        self.horizon = horizon
        self._state = np.zeros(STATE_DIM)
        self._t = 0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._state = rng.uniform(-1.0, 1.0, size=STATE_DIM)
        self._t = 0
        return self._state.copy()

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
        """Advance one step; the flag reports horizon truncation."""
        next_state, reward, _ = toy_env_step(self._state, action)
        self._state = next_state
        self._t += 1
        return next_state.copy(), reward, self._t >= self.horizon
