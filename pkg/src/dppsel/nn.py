"""Minimal fully-connected networks with reverse-mode gradients, a
bias-corrected adaptive-moment optimizer, and exact FLOP accounting.

An ``Mlp`` optionally holds a stack of identically shaped networks
(``n_stack`` > 1), stored as (n_stack, fan_in, fan_out) weight arrays so a
whole ensemble forwards/backwards in one set of matmuls. Hidden layers use
the configured activation; the output layer is affine.

FLOP convention (documented, ratio-exact rather than profiler-exact):
one multiply-add counts 2 FLOPs; activations and their derivative masks
count 1 FLOP per element, the output layer included. Per example that is
``2*fan_in*fan_out + 2*fan_out`` forward and ``4*fan_in*fan_out + fan_out``
backward per layer, scaled by batch size and by the number of stack members
actually computed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ValidationError

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0

_ACTIVATIONS = ("relu", "tanh")


class FlopLedger:
    """Monotone counters of forward/backward floating-point operations."""

    __slots__ = ("forward_flops", "backward_flops")

    def __init__(self) -> None:
        self.forward_flops = 0
        self.backward_flops = 0

    def add_forward(self, n: int) -> None:
        self.forward_flops += int(n)

    def add_backward(self, n: int) -> None:
        self.backward_flops += int(n)

    @property
    def total(self) -> int:
        return self.forward_flops + self.backward_flops

    def snapshot(self) -> tuple[int, int]:
        return self.forward_flops, self.backward_flops


@dataclass
class GradBundle:
    """Per-parameter gradients matching an Mlp's shapes, plus the input grad."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray
    members: np.ndarray | None = None

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.weights) and all(
            np.all(np.isfinite(g)) for g in self.biases
        )


class Mlp:
    """Stack of fully-connected networks sharing one architecture."""

    def __init__(
        self,
        layer_sizes: tuple[int, ...],
        activation: str = "relu",
        n_stack: int = 1,
        rng: np.random.Generator | None = None,
    ):
        if len(layer_sizes) < 2:
            raise ValidationError(f"need at least input and output sizes, got {layer_sizes}")
        if any(s < 1 for s in layer_sizes):
            raise ValidationError(f"layer sizes must be positive, got {layer_sizes}")
        if activation not in _ACTIVATIONS:
            raise ValidationError(f"activation must be one of {_ACTIVATIONS}, got {activation!r}")
        if n_stack < 1:
            raise ValidationError(f"n_stack must be >= 1, got {n_stack}")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.activation = activation
        self.n_stack = n_stack
        rng = rng or np.random.default_rng(0)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(n_stack, fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=(n_stack, fan_out)))
        self.fwd_flops_per_example = sum(
            2 * i * o + 2 * o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:])
        )
        self.bwd_flops_per_example = sum(
            4 * i * o + o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:])
        )
        self._cache: dict | None = None

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def clone(self) -> "Mlp":
        """Independent deep copy (used for target networks)."""
        twin = Mlp.__new__(Mlp)
        twin.layer_sizes = self.layer_sizes
        twin.activation = self.activation
        twin.n_stack = self.n_stack
        twin.weights = [w.copy() for w in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        twin.fwd_flops_per_example = self.fwd_flops_per_example
        twin.bwd_flops_per_example = self.bwd_flops_per_example
        twin._cache = None
        return twin

    def _act(self, z: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            return np.maximum(z, 0.0)
        return np.tanh(z)

    def _act_grad(self, z: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            return (z > 0.0).astype(np.float64)
        t = np.tanh(z)
        return 1.0 - t * t

    def forward(
        self,
        x: np.ndarray,
        ledger: FlopLedger | None = None,
        members: np.ndarray | None = None,
    ) -> np.ndarray:
        """Run the stack (or the ``members`` subset) and cache for backward.

        ``x`` may be a single vector (fan_in,), a shared batch (batch, fan_in),
        or per-member batches (n_active, batch, fan_in).
        """
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim == 1:
            mode = "vector"
            x3 = arr[None, None, :]
        elif arr.ndim == 2:
            mode = "batch"
            x3 = arr[None, :, :]
        elif arr.ndim == 3:
            mode = "stacked"
            x3 = arr
        else:
            raise ValidationError(f"input must be 1-D, 2-D or 3-D, got shape {arr.shape}")
        if x3.shape[-1] != self.layer_sizes[0]:
            raise ValidationError(
                f"input width {x3.shape[-1]} != first layer size {self.layer_sizes[0]}"
            )
        if members is not None:
            members = np.asarray(members, dtype=np.intp)
            weights = [w[members] for w in self.weights]
            biases = [b[members] for b in self.biases]
        else:
            weights = self.weights
            biases = self.biases
        n_active = weights[0].shape[0]
        if mode == "stacked" and x3.shape[0] != n_active:
            raise ValidationError(
                f"stacked input has {x3.shape[0]} members but {n_active} are active"
            )

        batch = x3.shape[1]
        zs: list[np.ndarray] = []
        inputs: list[np.ndarray] = [x3]
        h = x3
        last = self.n_layers - 1
        for l, (w, b) in enumerate(zip(weights, biases)):
            z = np.matmul(h, w) + b[:, None, :]
            zs.append(z)
            h = z if l == last else self._act(z)
            if l != last:
                inputs.append(h)
        if ledger is not None:
            ledger.add_forward(n_active * batch * self.fwd_flops_per_example)
        self._cache = {
            "mode": mode,
            "inputs": inputs,
            "zs": zs,
            "weights": weights,
            "members": members,
            "n_active": n_active,
            "batch": batch,
        }
        plain = members is None and self.n_stack == 1
        if mode == "vector" and plain:
            return h[0, 0]
        if mode == "batch" and plain:
            return h[0]
        return h

    def backward(
        self,
        grad_out: np.ndarray,
        ledger: FlopLedger | None = None,
        members: np.ndarray | None = None,
    ) -> GradBundle:
        """Reverse-mode gradients through the most recent forward.

        ``grad_out`` is the loss gradient w.r.t. the forward output, in the
        same shape the forward returned. Passing ``members`` restricts
        differentiation to a subset of a cached full-stack forward (the
        ledger is charged for that subset only).
        """
        if self._cache is None:
            raise RuntimeError("backward called with no cached forward pass")
        cache = self._cache
        g = np.asarray(grad_out, dtype=np.float64)
        if g.ndim == 1:
            g3 = g[None, None, :]
        elif g.ndim == 2:
            g3 = g[None, :, :]
        else:
            g3 = g

        inputs = cache["inputs"]
        zs = cache["zs"]
        weights = cache["weights"]
        if members is not None:
            if cache["members"] is not None:
                raise ValidationError("cannot re-slice a forward that already used members")
            members = np.asarray(members, dtype=np.intp)
            weights = [w[members] for w in weights]
            zs = [z[members] for z in zs]
            inputs = [h if h.shape[0] == 1 else h[members] for h in inputs]
            if g3.shape[0] == self.n_stack:
                g3 = g3[members]
        else:
            members = cache["members"]
        n_active = weights[0].shape[0]
        batch = cache["batch"]
        if g3.shape[0] == 1 and n_active > 1:
            g3 = np.broadcast_to(g3, (n_active,) + g3.shape[1:])

        w_grads: list[np.ndarray] = [None] * self.n_layers  # type: ignore[list-item]
        b_grads: list[np.ndarray] = [None] * self.n_layers  # type: ignore[list-item]
        delta = g3
        for l in range(self.n_layers - 1, -1, -1):
            if l != self.n_layers - 1:
                delta = delta * self._act_grad(zs[l])
            h_in = inputs[l]
            w_grads[l] = np.matmul(h_in.transpose(0, 2, 1), delta)
            b_grads[l] = delta.sum(axis=1)
            delta = np.matmul(delta, weights[l].transpose(0, 2, 1))
        if ledger is not None:
            ledger.add_backward(n_active * batch * self.bwd_flops_per_example)

        input_grad = delta
        if cache["mode"] == "vector":
            input_grad = input_grad.sum(axis=0)[0]
        elif cache["mode"] == "batch":
            input_grad = input_grad.sum(axis=0)
        return GradBundle(weights=w_grads, biases=b_grads, input=input_grad, members=members)


@dataclass
class Adam:
    """Bias-corrected adaptive-moment optimizer for one Mlp (stack-aware).

    Each stack member keeps its own step counter, so members updated on
    different rounds get the correct bias correction.
    """

    net: Mlp
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m_w: list[np.ndarray] = field(init=False)
    v_w: list[np.ndarray] = field(init=False)
    m_b: list[np.ndarray] = field(init=False)
    v_b: list[np.ndarray] = field(init=False)
    t: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.m_w = [np.zeros_like(w) for w in self.net.weights]
        self.v_w = [np.zeros_like(w) for w in self.net.weights]
        self.m_b = [np.zeros_like(b) for b in self.net.biases]
        self.v_b = [np.zeros_like(b) for b in self.net.biases]
        self.t = np.zeros(self.net.n_stack, dtype=np.int64)

    def step(self, grads: GradBundle) -> None:
        """Apply one update; raises (and applies nothing) on non-finite grads."""
        if not grads.all_finite():
            raise NumericError("non-finite gradient: optimizer step skipped")
        idx = grads.members if grads.members is not None else slice(None)
        self.t[idx] += 1
        t = self.t[idx]
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for l in range(self.net.n_layers):
            for param, grad, m, v, bshape in (
                (self.net.weights[l], grads.weights[l], self.m_w[l], self.v_w[l], (-1, 1, 1)),
                (self.net.biases[l], grads.biases[l], self.m_b[l], self.v_b[l], (-1, 1)),
            ):
                m[idx] = self.beta1 * m[idx] + (1.0 - self.beta1) * grad
                v[idx] = self.beta2 * v[idx] + (1.0 - self.beta2) * grad * grad
                m_hat = m[idx] / bc1.reshape(bshape)
                v_hat = v[idx] / bc2.reshape(bshape)
                param[idx] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def finite_difference_grads(
    loss_fn, net: Mlp, h: float = 1e-4
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Central-difference gradients of ``loss_fn()`` w.r.t. every parameter.

    Test oracle: O(P) loss evaluations, double precision.
    """
    w_grads = []
    b_grads = []
    for params, grads_out in ((net.weights, w_grads), (net.biases, b_grads)):
        for p in params:
            g = np.zeros_like(p)
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_fn()
                flat[i] = orig - h
                down = loss_fn()
                flat[i] = orig
                gflat[i] = (up - down) / (2.0 * h)
            grads_out.append(g)
    return w_grads, b_grads
