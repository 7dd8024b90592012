"""Training loop: ensemble critics with a shared bootstrap target, selectable
per-round critic subsets, and per-run metrics with exact compute accounting.

Per environment step: one (possibly exploratory) action, then
``updates_per_step`` critic rounds (each samples its own batch, selects its
own subset, and moves only the selected targets), then one policy update on
the round's last batch. Identical (config, seed) pairs reproduce metrics
byte-for-byte.

Ledger attribution: everything the critic-training pipeline computes
(Q-value fetches, target-network and target-policy forwards, critic
backwards) charges the critic ledger; the policy update (its net, plus the
full-ensemble forward/backward used for dQ/da) and action selection charge
the policy ledger. Diagnostic forwards at metric cadence charge neither.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError, ValidationError
from ..kernel import build_similarity, mean_pairwise_similarity
from ..nn import Adam, FlopLedger
from ..rng import make_rng
from .agent import (
    SquashedGaussianPolicy,
    compute_target,
    critic_gradient_step,
    make_critic_ensemble,
    policy_update,
    select_critics,
    target_polyak,
)
from .config import RedqConfig
from .env import ToyEnv
from .replay import ReplayBuffer

METRICS_COLUMNS_FIXED = [
    "step",
    "episode_return",
    "cross_critic_q_std",
    "mean_pairwise_cka",
    "fwd_flops",
    "bwd_flops",
    "selected_indices",
]


@dataclass
class MetricsRow:
    step: int
    episode_return: float
    mean_q: np.ndarray
    cross_critic_q_std: float
    mean_pairwise_cka: float
    fwd_flops: int
    bwd_flops: int
    selected: tuple[int, ...] | None


@dataclass
class RunResult:
    cfg: RedqConfig
    seed: int
    total_steps: int
    cadence: int
    rows: list[MetricsRow]
    episode_returns: list[float]
    critic_ledger: FlopLedger
    policy_ledger: FlopLedger
    dpp_fallbacks: int = 0
    final_return: float = field(default=float("nan"))

    def __post_init__(self) -> None:
        if self.episode_returns:
            tail = max(1, len(self.episode_returns) // 4)
            self.final_return = float(np.mean(self.episode_returns[-tail:]))


def train_run(
    cfg: RedqConfig,
    seed: int,
    total_steps: int,
    cadence: int = 100,
    env: ToyEnv | None = None,
) -> RunResult:
    """Run one seed to completion and return its metrics."""
    if total_steps < 1:
        raise ValidationError(f"total_steps must be >= 1, got {total_steps}")
    if cadence < 1:
        raise ValidationError(f"cadence must be >= 1, got {cadence}")
    env = env or ToyEnv()
    rng = make_rng(seed)
    policy = SquashedGaussianPolicy(
        env.state_dim, env.action_dim, cfg.hidden_sizes, cfg.activation, rng
    )
    critic_net, target_net = make_critic_ensemble(cfg, env.state_dim, env.action_dim, rng)
    policy_opt = Adam(policy.net, lr=cfg.policy_lr)
    critic_opt = Adam(critic_net, lr=cfg.critic_lr)
    buffer = ReplayBuffer(cfg.buffer_capacity, env.state_dim, env.action_dim)
    critic_ledger = FlopLedger()
    policy_ledger = FlopLedger()

    state = env.reset(rng)
    episode_return = 0.0
    episode_returns: list[float] = []
    rows: list[MetricsRow] = []
    last_selected: tuple[int, ...] | None = None
    stats = {"dpp_fallbacks": 0}

    for step in range(1, total_steps + 1):
        if step <= cfg.exploration_steps:
            action = rng.uniform(-1.0, 1.0, size=env.action_dim)
        else:
            action = policy.act(state, rng, policy_ledger)
        next_state, reward, truncated = env.step(action)
        buffer.add(state, action, reward, next_state, 0.0)
        episode_return += reward
        state = next_state
        if truncated:
            episode_returns.append(episode_return)
            episode_return = 0.0
            state = env.reset(rng)

        if step > cfg.exploration_steps:
            batch = None
            for _ in range(cfg.updates_per_step):
                batch = buffer.sample(rng, cfg.batch_size)
                sa = np.concatenate([batch.states, batch.actions], axis=1)
                if cfg.selection == "random_k":
                    chosen = select_critics(None, cfg, rng)
                    q_chosen = critic_net.forward(sa, critic_ledger, members=chosen)[..., 0]
                    from_full_cache = False
                else:
                    # one full fetch serves both similarity and the loss
                    q_all = critic_net.forward(sa, critic_ledger)[..., 0]
                    chosen = select_critics(q_all, cfg, rng, stats)
                    q_chosen = q_all[chosen]
                    from_full_cache = True
                mset = np.sort(rng.choice(cfg.n_critics, cfg.target_subset_size, replace=False))
                y = compute_target(
                    batch,
                    target_net,
                    policy,
                    mset,
                    cfg.discount,
                    cfg.entropy_alpha,
                    rng,
                    critic_ledger,
                )
                critic_gradient_step(
                    critic_net, critic_opt, chosen, q_chosen, y, critic_ledger, from_full_cache
                )
                target_polyak(critic_net, target_net, chosen, cfg.polyak)
                last_selected = tuple(int(i) for i in chosen)
            policy_update(
                policy,
                policy_opt,
                critic_net,
                batch.states,
                cfg.entropy_alpha,
                rng,
                policy_ledger,
            )

        if step % cadence == 0:
            rows.append(
                _metrics_row(
                    step,
                    rng,
                    buffer,
                    critic_net,
                    cfg,
                    episode_returns,
                    episode_return,
                    critic_ledger,
                    policy_ledger,
                    last_selected,
                )
            )

    return RunResult(
        cfg=cfg,
        seed=seed,
        total_steps=total_steps,
        cadence=cadence,
        rows=rows,
        episode_returns=episode_returns,
        critic_ledger=critic_ledger,
        policy_ledger=policy_ledger,
        dpp_fallbacks=stats["dpp_fallbacks"],
    )


def _metrics_row(
    step,
    rng,
    buffer,
    critic_net,
    cfg,
    episode_returns,
    running_return,
    critic_ledger,
    policy_ledger,
    last_selected,
) -> MetricsRow:
    batch = buffer.sample(rng, cfg.batch_size)
    sa = np.concatenate([batch.states, batch.actions], axis=1)
    q = critic_net.forward(sa)[..., 0]  # diagnostic forward, uncharged
    mean_q = q.mean(axis=1)
    cross_std = float(np.std(mean_q))
    sim = build_similarity(q)
    mean_cka = mean_pairwise_similarity(sim)
    ep = episode_returns[-1] if episode_returns else running_return
    row = MetricsRow(
        step=step,
        episode_return=float(ep),
        mean_q=mean_q,
        cross_critic_q_std=cross_std,
        mean_pairwise_cka=mean_cka,
        fwd_flops=critic_ledger.forward_flops + policy_ledger.forward_flops,
        bwd_flops=critic_ledger.backward_flops + policy_ledger.backward_flops,
        selected=last_selected,
    )
    for name, value in (("episode_return", row.episode_return),
                        ("cross_critic_q_std", cross_std),
                        ("mean_pairwise_cka", mean_cka)):
        if not np.isfinite(value):
            raise NumericError(f"non-finite metric {name}={value} at step {step}")
    if not np.all(np.isfinite(mean_q)):
        raise NumericError(f"non-finite critic Q at step {step}: {mean_q}")
    return row


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def metrics_csv(result: RunResult) -> str:
    """Render a run's metrics as CSV text (9 significant digits)."""
    n = result.cfg.n_critics
    header = (
        ["step", "episode_return"]
        + [f"mean_q_{i}" for i in range(n)]
        + ["cross_critic_q_std", "mean_pairwise_cka", "fwd_flops", "bwd_flops", "selected_indices"]
    )
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    for row in result.rows:
        selected = ";".join(str(i) for i in row.selected) if row.selected is not None else ""
        cells = (
            [str(row.step), _fmt(row.episode_return)]
            + [_fmt(v) for v in row.mean_q]
            + [
                _fmt(row.cross_critic_q_std),
                _fmt(row.mean_pairwise_cka),
                str(row.fwd_flops),
                str(row.bwd_flops),
                selected,
            ]
        )
        out.write(",".join(cells) + "\n")
    return out.getvalue()
