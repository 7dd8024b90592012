"""Dense symmetric linear algebra.

Everything here operates on plain float64 ``numpy`` arrays. Symmetric inputs
are validated at the boundary; all functions are pure and deterministic for a
fixed input.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterable, NamedTuple

import numpy as np

from .errors import NumericError, ValidationError

SYMMETRY_RTOL = 1e-12
PSD_EIG_FLOOR = -1e-10

_JACOBI_MAX_SWEEPS = 30
_JACOBI_OFF_TOL = 1e-12


class EigenDecomp(NamedTuple):
    """Spectral factorization S = V diag(eigenvalues) V^T.

    eigenvalues are ascending; eigenvectors are the orthonormal columns of V.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def check_symmetric(matrix: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate a square symmetric float matrix and return a float64 copy."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValidationError(f"{name} must be square 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValidationError(f"{name} must have dimension >= 1")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    tol = SYMMETRY_RTOL * np.maximum(1.0, np.abs(arr))
    if not np.all(np.abs(arr - arr.T) <= tol):
        worst = float(np.abs(arr - arr.T).max())
        raise ValidationError(f"{name} is not symmetric (max |A - A^T| = {worst:.3e})")
    return arr.copy()


def _round_robin_rounds(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Partition all index pairs of {0..n-1} into rounds of disjoint pairs.

    Circle-method tournament schedule: each unordered pair appears in exactly
    one of the n-1 (or n, for odd n) rounds, and the pairs within a round
    share no index.
    """
    slots = list(range(n))
    if n % 2 == 1:
        slots.append(-1)  # bye
    m = len(slots)
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            x, y = slots[i], slots[m - 1 - i]
            if x >= 0 and y >= 0:
                ps.append(min(x, y))
                qs.append(max(x, y))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        slots = [slots[0], slots[-1]] + slots[1:-1]
    return rounds


def eigh(matrix: np.ndarray) -> EigenDecomp:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps visit every off-diagonal pair once, in a fixed round-robin order;
    the disjoint rotations of one round commute exactly, so each round is
    applied as a single block rotation. Capped at 30 sweeps; convergence is
    declared when the largest off-diagonal magnitude drops below 1e-12
    relative to the input scale. Deterministic for a fixed input.
    """
    a = check_symmetric(matrix)
    a = 0.5 * (a + a.T)  # fold sub-tolerance asymmetry
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return EigenDecomp(a[0, 0].reshape(1), v)

    scale = max(1.0, float(np.abs(a).max()))
    off_tol = _JACOBI_OFF_TOL * scale
    skip = off_tol * 1e-2
    rounds = _round_robin_rounds(n)
    converged = False
    for _ in range(_JACOBI_MAX_SWEEPS):
        off = float(np.abs(a - np.diag(np.diag(a))).max())
        if off <= off_tol:
            converged = True
            break
        for pp, qq in rounds:
            apq = a[pp, qq]
            active = np.abs(apq) > skip
            if not active.any():
                continue
            apq_safe = np.where(active, apq, 1.0)
            tau = (a[qq, qq] - a[pp, pp]) / (2.0 * apq_safe)
            root = np.sqrt(1.0 + tau * tau)
            t = np.where(tau >= 0.0, 1.0, -1.0) / (np.abs(tau) + root)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            c = np.where(active, c, 1.0)
            s = np.where(active, s, 0.0)
            g = np.eye(n)
            g[pp, pp] = c
            g[qq, qq] = c
            g[pp, qq] = s
            g[qq, pp] = -s
            a = g.T @ a @ g
            v = v @ g
            hit_p = pp[active]
            hit_q = qq[active]
            a[hit_p, hit_q] = 0.0
            a[hit_q, hit_p] = 0.0
    if not converged:
        off = float(np.abs(a - np.diag(np.diag(a))).max())
        if off > off_tol:
            raise NumericError(
                f"Jacobi sweeps did not converge: off-diagonal residual {off:.3e} "
                f"after {_JACOBI_MAX_SWEEPS} sweeps (tolerance {off_tol:.3e})"
            )

    lam = np.diag(a).copy()
    order = np.argsort(lam, kind="stable")
    return EigenDecomp(lam[order], v[:, order])


def nearest_psd(matrix: np.ndarray) -> np.ndarray:
    """Project a symmetric matrix onto the PSD cone (Frobenius-nearest).

    Computed as V diag(max(lambda, 0)) V^T from the spectral factorization;
    inputs whose minimum eigenvalue is already >= -1e-10 are returned
    unchanged (up to symmetrization), which makes the projection idempotent.
    """
    sym = check_symmetric(matrix)
    lam, vec = eigh(sym)
    if float(lam[0]) >= PSD_EIG_FLOOR:
        return 0.5 * (sym + sym.T)
    clipped = np.maximum(lam, 0.0)
    out = (vec * clipped) @ vec.T
    return 0.5 * (out + out.T)


def _det_closed_form(a: np.ndarray) -> float:
    n = a.shape[0]
    if n == 1:
        return float(a[0, 0])
    if n == 2:
        return float(a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0])
    return float(
        a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
        - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
        + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0])
    )


def det(matrix: np.ndarray) -> float:
    """Determinant of a square matrix: closed forms to 3x3, then LU.

    LU uses partial pivoting; an exactly singular pivot column yields 0.
    """
    a = np.array(matrix, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"determinant needs a square matrix, got {a.shape}")
    n = a.shape[0]
    if n == 0:
        return 1.0
    if n <= 3:
        return _det_closed_form(a)
    sign = 1.0
    for col in range(n - 1):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if a[piv, col] == 0.0:
            return 0.0
        if piv != col:
            a[[col, piv], :] = a[[piv, col], :]
            sign = -sign
        factors = a[col + 1 :, col] / a[col, col]
        a[col + 1 :, col:] -= np.outer(factors, a[col, col:])
    return float(sign * np.prod(np.diag(a)))


def principal_minor_det(matrix: np.ndarray, idx: Iterable[int]) -> float:
    """det of the principal submatrix indexed by ``idx`` (empty set -> 1)."""
    sym = check_symmetric(matrix)
    indices = [int(i) for i in idx]
    n = sym.shape[0]
    if len(set(indices)) != len(indices):
        raise ValidationError(f"duplicate indices in {indices}")
    if any(i < 0 or i >= n for i in indices):
        raise ValidationError(f"index out of range for n={n}: {indices}")
    if not indices:
        return 1.0
    indices = sorted(indices)
    return det(sym[np.ix_(indices, indices)])


def det_sum_identity_check(diag_matrix: np.ndarray, matrix: np.ndarray) -> tuple[float, float]:
    """Evaluate both sides of det(D + M) = sum_S det(M_S) * prod_{i not in S} D_ii.

    D must be diagonal. The right side enumerates all 2^n index subsets, so n
    is capped at 12. Intended as a property-test oracle, not a production path.
    """
    d = np.asarray(diag_matrix, dtype=np.float64)
    m = check_symmetric(matrix, "M")
    if d.ndim == 1:
        d = np.diag(d)
    if d.shape != m.shape:
        raise ValidationError(f"shape mismatch: D {d.shape} vs M {m.shape}")
    if np.any(d - np.diag(np.diag(d)) != 0.0):
        raise ValidationError("D must be exactly diagonal")
    n = d.shape[0]
    if n > 12:
        raise ValidationError(f"subset enumeration capped at n=12, got n={n}")

    lhs = det(d + m)
    diag = np.diag(d)
    rhs_terms = []
    for r in range(n + 1):
        for subset in itertools.combinations(range(n), r):
            rest = [i for i in range(n) if i not in subset]
            term = principal_minor_det(m, subset) * float(np.prod(diag[rest]))
            rhs_terms.append(term)
    rhs = math.fsum(rhs_terms)
    return lhs, rhs
