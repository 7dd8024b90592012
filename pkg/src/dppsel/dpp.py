"""Exact fixed-size determinantal sampling from an L-ensemble kernel.

A subset x of {0..N-1} with |x| = k is drawn with probability
det(L_x) / e_k(eigenvalues of L). Sampling is the standard two-phase
algorithm: phase 1 picks k eigenvector indices through the elementary
symmetric polynomial recursion; phase 2 runs projection-DPP sampling with
modified Gram-Schmidt orthogonalization. Brute-force enumerators over all
subsets serve as distribution oracles at small N.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import InsufficientRankError, NumericError, ValidationError
from .linalg import check_symmetric, eigh, principal_minor_det

EIGENVALUE_CLAMP = 1e-12
PSD_VALIDATION_FLOOR = -1e-8
NORMALIZER_FLOOR = 1e-300
_MASS_UNDERFLOW = 1e-14
_ENUM_CAP = 12


def elementary_symmetric(eigenvalues: np.ndarray, k_max: int) -> np.ndarray:
    """Table e of shape (k_max+1, N+1) with e[l, m] = e_l(lambda_1..lambda_m).

    Built by the recursion e[l, m] = e[l, m-1] + lambda_m * e[l-1, m-1];
    e[k, N] equals the sum of det(L_x) over all size-k subsets when the
    input is the spectrum of L.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    n = lam.shape[0]
    if k_max < 0 or k_max > n:
        raise ValidationError(f"k_max must be in [0, {n}], got {k_max}")
    table = np.zeros((k_max + 1, n + 1))
    table[0, :] = 1.0
    for l in range(1, k_max + 1):
        for m in range(1, n + 1):
            table[l, m] = table[l, m - 1] + lam[m - 1] * table[l - 1, m - 1]
    return table


class KDppSampler:
    """Size-k determinantal sampler built once per kernel, drawn many times.

    The decomposition and polynomial tables are immutable after construction
    and safe to share; each draw consumes its own Generator.
    """

    def __init__(self, eigenvalues: np.ndarray, eigenvectors: np.ndarray, k: int):
        lam = np.asarray(eigenvalues, dtype=np.float64).copy()
        lam[lam < EIGENVALUE_CLAMP] = 0.0
        n = lam.shape[0]
        if k < 1:
            raise ValidationError(f"subset size must be >= 1, got k={k}")
        rank = int(np.count_nonzero(lam))
        if k > rank:
            raise InsufficientRankError(
                f"insufficient kernel rank: requested k={k}, kernel rank {rank} (N={n})"
            )
        table = elementary_symmetric(lam, k)
        if table[k, n] <= NORMALIZER_FLOOR:
            raise InsufficientRankError(
                f"insufficient kernel rank: normalizer e_{k} = {table[k, n]:.3e}"
            )
        self.n_items = n
        self.k = k
        self.eigenvalues = lam
        self.eigenvectors = np.asarray(eigenvectors, dtype=np.float64)
        self.esp_table = table

    @classmethod
    def from_kernel(cls, kernel: np.ndarray, k: int) -> "KDppSampler":
        sym = check_symmetric(kernel, "L")
        lam, vec = eigh(sym)
        if float(lam[0]) < PSD_VALIDATION_FLOOR:
            raise ValidationError(
                f"kernel is not positive semi-definite (min eigenvalue {lam[0]:.3e}); "
                "project it with nearest_psd first"
            )
        return cls(lam, vec, k)

    def _select_eigenvectors(self, rng: np.random.Generator) -> list[int]:
        table = self.esp_table
        lam = self.eigenvalues
        chosen: list[int] = []
        remaining = self.k
        for m in range(self.n_items, 0, -1):
            if remaining == 0:
                break
            if m == remaining:
                take = True  # all leftover indices are forced
            else:
                prob = lam[m - 1] * table[remaining - 1, m - 1] / table[remaining, m]
                take = rng.random() < prob
            if take:
                chosen.append(m - 1)
                remaining -= 1
        if len(chosen) != self.k:
            raise NumericError(
                f"phase 1 selected {len(chosen)} eigenvectors instead of {self.k}"
            )
        return chosen

    def sample(self, rng: np.random.Generator) -> tuple[int, ...]:
        """Draw one size-k index set."""
        vecs = self.eigenvectors[:, self._select_eigenvectors(rng)].copy()
        items: list[int] = []
        for remaining in range(self.k, 0, -1):
            mass = np.sum(vecs * vecs, axis=1)
            if float(mass.max()) < _MASS_UNDERFLOW:
                raise NumericError(
                    "projection sampling underflow: all residual coordinate masses "
                    f"below {_MASS_UNDERFLOW}"
                )
            cdf = np.cumsum(mass)
            item = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            item = min(item, self.n_items - 1)
            items.append(item)
            if remaining == 1:
                break
            # pivot on the column with the largest component at the chosen
            # coordinate, eliminate that coordinate, then re-orthonormalize
            pivot = int(np.argmax(np.abs(vecs[item, :])))
            if abs(vecs[item, pivot]) < _MASS_UNDERFLOW:
                raise NumericError("projection sampling underflow at pivot")
            col = vecs[:, pivot] / vecs[item, pivot]
            vecs = vecs - np.outer(col, vecs[item, :])
            vecs = np.delete(vecs, pivot, axis=1)
            for c in range(vecs.shape[1]):
                for prior in range(c):
                    vecs[:, c] -= (vecs[:, prior] @ vecs[:, c]) * vecs[:, prior]
                norm = float(np.linalg.norm(vecs[:, c]))
                if norm < _MASS_UNDERFLOW:
                    raise NumericError("projection sampling underflow in Gram-Schmidt")
                vecs[:, c] /= norm
        return tuple(sorted(items))


def kdpp_sample(kernel: np.ndarray, k: int, rng: np.random.Generator) -> tuple[int, ...]:
    """One-shot draw: build the sampler for ``kernel`` and sample once."""
    return KDppSampler.from_kernel(kernel, k).sample(rng)


def kdpp_prob_bruteforce(kernel: np.ndarray, k: int) -> dict[tuple[int, ...], float]:
    """Exact size-k subset probabilities by enumerating all principal minors."""
    sym = check_symmetric(kernel, "L")
    n = sym.shape[0]
    if n > _ENUM_CAP:
        raise ValidationError(f"enumeration capped at N={_ENUM_CAP}, got N={n}")
    if not 1 <= k <= n:
        raise ValidationError(f"k must be in [1, {n}], got {k}")
    minors = {
        subset: principal_minor_det(sym, subset)
        for subset in itertools.combinations(range(n), k)
    }
    total = math.fsum(minors.values())
    if total <= NORMALIZER_FLOOR:
        raise InsufficientRankError(f"insufficient kernel rank: minor sum {total:.3e}")
    return {subset: val / total for subset, val in minors.items()}


def lensemble_prob_bruteforce(kernel: np.ndarray) -> dict[tuple[int, ...], float]:
    """Subset probabilities of the unconstrained L-ensemble, empty set included.

    P(x) = det(L_x) / sum_S det(L_S); the normalizer is cross-checked against
    det(I + L), which must agree to 1e-8 relative.
    """
    sym = check_symmetric(kernel, "L")
    n = sym.shape[0]
    if n > _ENUM_CAP:
        raise ValidationError(f"enumeration capped at N={_ENUM_CAP}, got N={n}")
    minors = {
        subset: principal_minor_det(sym, subset)
        for r in range(n + 1)
        for subset in itertools.combinations(range(n), r)
    }
    total = math.fsum(minors.values())
    direct = principal_minor_det(np.eye(n) + sym, range(n))
    if abs(total - direct) > 1e-8 * max(1.0, abs(direct)):
        raise NumericError(
            f"normalizer mismatch: subset sum {total!r} vs det(I+L) {direct!r}"
        )
    return {subset: val / total for subset, val in minors.items()}
