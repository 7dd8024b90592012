"""Training configuration with strict validation."""

from __future__ import annotations

from dataclasses import dataclass, fields

from ..errors import ConfigError

SELECTION_MODES = ("dns", "random_k", "all")


@dataclass
class RedqConfig:
    """Hyperparameters of one ensemble-critic training run.

    Desk-scale defaults: small hidden layers, short exploration, modest batch.
    """

    n_critics: int = 10
    subset_size: int = 5          # critics trained per update round (k)
    target_subset_size: int = 2   # critics min-reduced in the target (M)
    updates_per_step: int = 1     # critic update rounds per env step (G)
    discount: float = 0.99
    polyak: float = 0.995
    entropy_alpha: float = 0.05
    critic_lr: float = 1e-3
    policy_lr: float = 1e-3
    batch_size: int = 64
    selection: str = "dns"
    hidden_sizes: tuple[int, ...] = (32, 32)
    activation: str = "relu"
    buffer_capacity: int = 100_000
    exploration_steps: int = 1000

    def __post_init__(self) -> None:
        if self.n_critics < 2:
            raise ConfigError(f"n_critics must be >= 2, got {self.n_critics}")
        if not 1 <= self.subset_size <= self.n_critics:
            raise ConfigError(
                f"subset_size must be in [1, {self.n_critics}], got {self.subset_size}"
            )
        if not 1 <= self.target_subset_size <= self.n_critics:
            raise ConfigError(
                f"target_subset_size must be in [1, {self.n_critics}], "
                f"got {self.target_subset_size}"
            )
        if self.updates_per_step < 1:
            raise ConfigError(f"updates_per_step must be >= 1, got {self.updates_per_step}")
        if not 0.0 < self.discount < 1.0:
            raise ConfigError(f"discount must be in (0, 1), got {self.discount}")
        if not 0.0 < self.polyak < 1.0:
            raise ConfigError(f"polyak must be in (0, 1), got {self.polyak}")
        if self.entropy_alpha < 0.0:
            raise ConfigError(f"entropy_alpha must be >= 0, got {self.entropy_alpha}")
        if self.critic_lr <= 0 or self.policy_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.selection not in SELECTION_MODES:
            raise ConfigError(
                f"selection must be one of {SELECTION_MODES}, got {self.selection!r}"
            )
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ConfigError(f"hidden_sizes must be positive, got {self.hidden_sizes}")
        if self.buffer_capacity < self.batch_size:
            raise ConfigError("buffer_capacity must be >= batch_size")
        if self.exploration_steps < self.batch_size:
            raise ConfigError("exploration_steps must be >= batch_size so updates have data")

    @classmethod
    def from_dict(cls, payload: dict) -> "RedqConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown redq config keys: {sorted(unknown)}")
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
