"""Representation-similarity kernels: HSIC, CKA, and the pairwise similarity
matrix over ensemble Q-value vectors.

Activation matrices are (n_examples, n_features) float arrays; 1-D inputs are
treated as a single feature column. The degenerate case of a constant
representation (self-HSIC below 1e-12) gets CKA 0 by convention.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ValidationError
from .linalg import check_symmetric

DEGENERATE_HSIC_TOL = 1e-12
_CLIP_SLACK = 1e-12


def _as_activations(data: np.ndarray, name: str = "activations") -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise ValidationError(f"{name} needs at least 2 examples (centering degenerates at n=1)")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def gram(activations: np.ndarray, kind: str = "linear", sigma: float | None = None) -> np.ndarray:
    """Gram matrix of the rows of ``activations``.

    kind "linear" gives A_ij = x_i . x_j; "rbf" gives exp(-|x_i - x_j|^2 / (2 sigma^2)).
    """
    x = _as_activations(activations)
    if kind == "linear":
        out = x @ x.T
    elif kind == "rbf":
        if sigma is None or sigma <= 0:
            raise ValidationError(f"rbf kernel needs sigma > 0, got {sigma}")
        sq = np.sum(x * x, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
        np.maximum(d2, 0.0, out=d2)
        out = np.exp(-d2 / (2.0 * sigma * sigma))
    else:
        raise ValidationError(f"unknown kernel kind {kind!r}")
    return 0.5 * (out + out.T)


def _center(a: np.ndarray) -> np.ndarray:
    # H A H without materializing H
    row_mean = a.mean(axis=1, keepdims=True)
    col_mean = a.mean(axis=0, keepdims=True)
    return a - row_mean - col_mean + a.mean()


def hsic(a: np.ndarray, b: np.ndarray) -> float:
    """Empirical HSIC of two n x n kernel matrices: Tr(A H B H) / (n-1)^2."""
    a = check_symmetric(a, "A")
    b = check_symmetric(b, "B")
    if a.shape != b.shape:
        raise ValidationError(f"kernel size mismatch: {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n < 2:
        raise ValidationError("HSIC needs n >= 2")
    return float(np.sum(_center(a) * b) / (n - 1) ** 2)


def cka(x: np.ndarray, y: np.ndarray, kind: str = "linear", sigma: float | None = None) -> float:
    """Centered kernel alignment between two activation matrices.

    Returns HSIC(A, B) / sqrt(HSIC(A, A) HSIC(B, B)); 0 if either
    self-similarity is degenerate. The linear kernel uses the feature-space
    identity |Xc^T Yc|_F^2 / (|Xc^T Xc|_F |Yc^T Yc|_F) when both widths are
    below the example count (same value, O(n p^2) instead of O(n^2 p)).
    """
    xa = _as_activations(x, "X")
    ya = _as_activations(y, "Y")
    if xa.shape[0] != ya.shape[0]:
        raise ValidationError(f"example-count mismatch: {xa.shape[0]} vs {ya.shape[0]}")
    n = xa.shape[0]
    if kind == "linear" and xa.shape[1] < n and ya.shape[1] < n:
        xc = xa - xa.mean(axis=0)
        yc = ya - ya.mean(axis=0)
        cross = float(np.sum((yc.T @ xc) ** 2))
        self_x = float(np.linalg.norm(xc.T @ xc))
        self_y = float(np.linalg.norm(yc.T @ yc))
        # HSIC(A, A) = (|Xc^T Xc|_F / (n-1))^2 for the linear kernel
        if (self_x / (n - 1)) ** 2 < DEGENERATE_HSIC_TOL or (self_y / (n - 1)) ** 2 < DEGENERATE_HSIC_TOL:
            return 0.0
        return cross / (self_x * self_y)
    ga = gram(xa, kind, sigma)
    gb = gram(ya, kind, sigma)
    self_a = hsic(ga, ga)
    self_b = hsic(gb, gb)
    if self_a < DEGENERATE_HSIC_TOL or self_b < DEGENERATE_HSIC_TOL:
        return 0.0
    return hsic(ga, gb) / np.sqrt(self_a * self_b)


def build_similarity(q_values: np.ndarray) -> np.ndarray:
    """N x N matrix of pairwise linear CKA between per-member Q-value vectors.

    ``q_values`` is (n_members, batch). Each pair is computed once (i < j) and
    mirrored; the diagonal is forced to 1 exactly; off-diagonals are clipped
    into [0, 1]. Members with a constant Q vector get 0 against everything.
    """
    q = np.asarray(q_values, dtype=np.float64)
    if q.ndim != 2:
        raise ValidationError(f"q_values must be (n_members, batch), got shape {q.shape}")
    n_members, batch = q.shape
    if n_members < 2:
        raise ValidationError("need at least 2 ensemble members")
    if batch < 2:
        raise ValidationError("need a batch of at least 2 Q-values per member")
    if not np.all(np.isfinite(q)):
        raise ValidationError("q_values contain non-finite entries")

    # scalar representations: linear CKA reduces to squared Pearson correlation
    qc = q - q.mean(axis=1, keepdims=True)
    cross = qc @ qc.T
    norms = np.diag(cross).copy()
    degenerate = (norms / (batch - 1)) ** 2 < DEGENERATE_HSIC_TOL

    sim = np.zeros((n_members, n_members))
    safe = np.where(degenerate, 1.0, norms)
    upper = np.triu_indices(n_members, k=1)
    vals = cross[upper] ** 2 / (safe[upper[0]] * safe[upper[1]])
    vals[degenerate[upper[0]] | degenerate[upper[1]]] = 0.0
    if vals.size and (vals.min() < -_CLIP_SLACK or vals.max() > 1.0 + 1e-9):
        raise NumericError(f"CKA value escaped [0, 1]: range [{vals.min()}, {vals.max()}]")
    np.clip(vals, 0.0, 1.0, out=vals)
    sim[upper] = vals
    sim = sim + sim.T
    np.fill_diagonal(sim, 1.0)
    return sim


def mean_pairwise_similarity(similarity: np.ndarray) -> float:
    """Mean of the strict upper triangle of a similarity matrix."""
    n = similarity.shape[0]
    if n < 2:
        raise ValidationError("need at least 2 members")
    iu = np.triu_indices(n, k=1)
    return float(similarity[iu].mean())
