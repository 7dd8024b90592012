"""Actor and critic machinery: squashed-Gaussian policy, ensemble critics,
target computation, selection strategies, and gradient steps.

The critic ensemble is one stacked Mlp; the selection strategy decides which
members receive gradients each round. DNS selection builds the CKA similarity
matrix of the members' Q-values, repairs it to PSD, and draws a size-k
determinantal sample; rank failures fall back to a uniform k-subset.
"""

from __future__ import annotations

import logging

import numpy as np

from ..dpp import KDppSampler
from ..errors import InsufficientRankError, NumericError, ValidationError
from ..kernel import build_similarity
from ..linalg import eigh
from ..nn import LOG_STD_MAX, LOG_STD_MIN, Adam, FlopLedger, Mlp
from .config import RedqConfig
from .replay import Batch

logger = logging.getLogger(__name__)

_LOG_2PI = float(np.log(2.0 * np.pi))
_TANH_EPS = 1e-6


class SquashedGaussianPolicy:
    """tanh-squashed Gaussian with state-dependent mean and log-std heads."""

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        hidden_sizes: tuple[int, ...],
        activation: str,
        rng: np.random.Generator,
    ):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.net = Mlp((state_dim, *hidden_sizes, 2 * action_dim), activation, rng=rng)

    def _heads(self, out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        mean = out[..., : self.action_dim]
        raw_log_std = out[..., self.action_dim :]
        log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
        return mean, raw_log_std, log_std

    def act(
        self,
        state: np.ndarray,
        rng: np.random.Generator,
        ledger: FlopLedger | None = None,
        deterministic: bool = False,
    ) -> np.ndarray:
        out = self.net.forward(state, ledger)
        mean, _, log_std = self._heads(out)
        if deterministic:
            return np.tanh(mean)
        noise = rng.standard_normal(self.action_dim)
        return np.tanh(mean + np.exp(log_std) * noise)

    def sample(
        self,
        states: np.ndarray,
        noise: np.ndarray,
        ledger: FlopLedger | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Reparameterized batch sample: actions and their log-probabilities."""
        out = self.net.forward(states, ledger)
        mean, _, log_std = self._heads(out)
        pre_squash = mean + np.exp(log_std) * noise
        actions = np.tanh(pre_squash)
        log_probs = (
            np.sum(-0.5 * noise * noise - log_std - 0.5 * _LOG_2PI, axis=1)
            - np.sum(np.log(1.0 - actions * actions + _TANH_EPS), axis=1)
        )
        return actions, log_probs


def make_critic_ensemble(
    cfg: RedqConfig, state_dim: int, action_dim: int, rng: np.random.Generator
) -> tuple[Mlp, Mlp]:
    """Stacked critic net plus an identical target copy."""
    net = Mlp(
        (state_dim + action_dim, *cfg.hidden_sizes, 1),
        cfg.activation,
        n_stack=cfg.n_critics,
        rng=rng,
    )
    return net, net.clone()


def select_critics(
    q_values: np.ndarray | None,
    cfg: RedqConfig,
    rng: np.random.Generator,
    stats: dict | None = None,
) -> np.ndarray:
    """Indices of the critics to train this round, per the selection mode.

    dns: similarity matrix -> PSD repair -> size-k determinantal draw, with a
    logged uniform fallback when the repaired kernel has rank < k. A passed
    ``stats`` dict gets its "dpp_fallbacks" entry bumped on fallback.
    """
    n, k = cfg.n_critics, cfg.subset_size
    if cfg.selection == "all":
        return np.arange(n, dtype=np.intp)
    if cfg.selection == "random_k":
        return np.sort(rng.choice(n, size=k, replace=False)).astype(np.intp)
    if q_values is None:
        raise ValidationError("dns selection needs the members' Q-values")
    similarity = build_similarity(q_values)
    lam, vec = eigh(similarity)
    clipped = np.maximum(lam, 0.0)  # PSD repair in the eigenbasis
    try:
        sampler = KDppSampler(clipped, vec, k)
        return np.array(sampler.sample(rng), dtype=np.intp)
    except InsufficientRankError as exc:
        logger.warning("determinantal selection failed (%s); uniform fallback", exc)
        if stats is not None:
            stats["dpp_fallbacks"] = stats.get("dpp_fallbacks", 0) + 1
        return np.sort(rng.choice(n, size=k, replace=False)).astype(np.intp)


def compute_target(
    batch: Batch,
    target_net: Mlp,
    policy: SquashedGaussianPolicy,
    mset: np.ndarray,
    discount: float,
    entropy_alpha: float,
    rng: np.random.Generator,
    ledger: FlopLedger | None = None,
) -> np.ndarray:
    """Shared bootstrap target: min over the mset target critics at s', with
    the entropy bonus of a fresh policy action."""
    mset = np.asarray(mset, dtype=np.intp)
    if mset.size == 0:
        raise ValidationError("target subset must be non-empty")
    noise = rng.standard_normal((batch.next_states.shape[0], policy.action_dim))
    next_actions, next_log_probs = policy.sample(batch.next_states, noise, ledger)
    sa = np.concatenate([batch.next_states, next_actions], axis=1)
    q_next = target_net.forward(sa, ledger, members=mset)[..., 0]
    target_value = q_next.min(axis=0) - entropy_alpha * next_log_probs
    return batch.rewards + discount * (1.0 - batch.dones) * target_value


def critic_gradient_step(
    net: Mlp,
    opt: Adam,
    chosen: np.ndarray,
    q_chosen: np.ndarray,
    y: np.ndarray,
    ledger: FlopLedger | None,
    from_full_cache: bool,
) -> np.ndarray:
    """MSE step toward the shared target for the chosen members.

    ``q_chosen`` is (k, batch) and must come from this net's most recent
    forward; ``from_full_cache`` says whether that forward ran the full stack
    (Q-values fetched once for similarity and reused for the loss).
    """
    batch_size = q_chosen.shape[1]
    residual = q_chosen - y[None, :]
    losses = np.mean(residual * residual, axis=1)
    if not np.all(np.isfinite(losses)):
        raise NumericError(f"non-finite critic loss: {losses}")
    upstream = (2.0 / batch_size) * residual[..., None]
    members = chosen if (from_full_cache and chosen.size < net.n_stack) else None
    grads = net.backward(upstream, ledger, members=members)
    opt.step(grads)
    return losses


def target_polyak(net: Mlp, target_net: Mlp, chosen: np.ndarray, polyak: float) -> None:
    """Exponential averaging of the chosen members' parameters into targets."""
    idx = np.asarray(chosen, dtype=np.intp)
    for tw, w in zip(target_net.weights, net.weights):
        tw[idx] = polyak * tw[idx] + (1.0 - polyak) * w[idx]
    for tb, b in zip(target_net.biases, net.biases):
        tb[idx] = polyak * tb[idx] + (1.0 - polyak) * b[idx]


def policy_update(
    policy: SquashedGaussianPolicy,
    policy_opt: Adam,
    critic_net: Mlp,
    states: np.ndarray,
    entropy_alpha: float,
    rng: np.random.Generator,
    ledger: FlopLedger | None = None,
) -> float:
    """One ascent step on mean-over-all-critics Q minus the entropy penalty.

    All ensemble members contribute regardless of which were trained this
    round. Returns the (minimized) loss value.
    """
    batch_size = states.shape[0]
    action_dim = policy.action_dim
    noise = rng.standard_normal((batch_size, action_dim))
    loss, grad_out = policy_loss_and_output_grad(
        policy, critic_net, states, noise, entropy_alpha, ledger
    )
    if not np.isfinite(loss):
        raise NumericError(f"non-finite policy loss {loss}")
    grads = policy.net.backward(grad_out, ledger)
    policy_opt.step(grads)
    return loss


def policy_loss_and_output_grad(
    policy: SquashedGaussianPolicy,
    critic_net: Mlp,
    states: np.ndarray,
    noise: np.ndarray,
    entropy_alpha: float,
    ledger: FlopLedger | None = None,
) -> tuple[float, np.ndarray]:
    """Policy loss plus its gradient w.r.t. the policy net's raw output.

    Split out so gradient-check tests can evaluate the loss with fixed noise.
    The caller backpropagates ``grad_out`` through the policy net; the critic
    backward here only harvests dQ/da (weight gradients are discarded).
    """
    batch_size, action_dim = noise.shape
    n_members = critic_net.n_stack
    out = policy.net.forward(states, ledger)
    mean, raw_log_std, log_std = policy._heads(out)
    std = np.exp(log_std)
    pre_squash = mean + std * noise
    actions = np.tanh(pre_squash)
    one_minus_a2 = 1.0 - actions * actions
    log_probs = (
        np.sum(-0.5 * noise * noise - log_std - 0.5 * _LOG_2PI, axis=1)
        - np.sum(np.log(one_minus_a2 + _TANH_EPS), axis=1)
    )

    sa = np.concatenate([states, actions], axis=1)
    q = critic_net.forward(sa, ledger)[..., 0]  # (n_members, batch)
    loss = float(np.mean(entropy_alpha * log_probs - q.mean(axis=0)))

    # dQ-part of dloss/d(s,a); upstream is -1/(N*B) per member per example
    upstream = np.full((n_members, batch_size, 1), -1.0 / (n_members * batch_size))
    dq_sa = critic_net.backward(upstream, ledger).input
    dloss_da = dq_sa[:, policy.state_dim :]
    # entropy route: d(-log(1 - a^2 + eps))/du = 2 a (1 - a^2) / (1 - a^2 + eps)
    dloss_du = (
        dloss_da * one_minus_a2
        + (entropy_alpha / batch_size) * 2.0 * actions * one_minus_a2 / (one_minus_a2 + _TANH_EPS)
    )
    dloss_dmean = dloss_du
    clip_mask = (raw_log_std > LOG_STD_MIN) & (raw_log_std < LOG_STD_MAX)
    dloss_dlogstd = (dloss_du * noise * std - entropy_alpha / batch_size) * clip_mask
    grad_out = np.concatenate([dloss_dmean, dloss_dlogstd], axis=1)
    return loss, grad_out
