"""Tabular ensemble of Q tables with indicator-gated updates.

Each member i moves toward a shared target only when its 0/1 indicator fires:
Q_i(s, a) += lr * I_i * (target - Q_i(s, a)). This is the discrete mirror of
the network training rule, used by the variance experiments.
"""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError


class TabularEnsemble:
    def __init__(
        self,
        n_members: int,
        n_states: int,
        n_actions: int,
        learning_rate: float,
        update_probs: np.ndarray | float = 1.0,
    ):
        if n_members < 1 or n_states < 1 or n_actions < 1:
            raise ValidationError("ensemble dimensions must be positive")
        if not 0.0 < learning_rate <= 1.0:
            raise ValidationError(f"learning_rate must be in (0, 1], got {learning_rate}")
        self.q = np.zeros((n_members, n_states, n_actions))
        self.learning_rate = learning_rate
        probs = np.broadcast_to(np.asarray(update_probs, dtype=np.float64), (n_members,)).copy()
        if probs.min() < 0.0 or probs.max() > 1.0:
            raise ValidationError(f"update_probs must lie in [0, 1], got {probs}")
        self.update_probs = probs

    @property
    def n_members(self) -> int:
        return self.q.shape[0]

    def sample_indicators(self, rng: np.random.Generator) -> np.ndarray:
        return (rng.random(self.n_members) < self.update_probs).astype(np.float64)

    def step(self, state: int, action: int, target: float, indicators: np.ndarray) -> None:
        """Indicator-gated move of every member's (state, action) entry."""
        ind = np.asarray(indicators, dtype=np.float64)
        if ind.shape != (self.n_members,):
            raise ValidationError(f"indicators must have shape ({self.n_members},)")
        if not np.all((ind == 0.0) | (ind == 1.0)):
            raise ValidationError("indicators must be 0 or 1")
        cell = self.q[:, state, action]
        cell += self.learning_rate * ind * (target - cell)

    def min_value(self, state: int, action: int, members: np.ndarray) -> float:
        idx = np.asarray(members, dtype=np.intp)
        if idx.size == 0:
            raise ValidationError("members must be non-empty")
        return float(self.q[idx, state, action].min())
