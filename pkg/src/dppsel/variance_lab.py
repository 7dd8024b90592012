"""Closed-form and Monte-Carlo study of indicator-gated uniform mixtures.

The model: X ~ U(a, b) is a member's pre-update value, Y ~ Bernoulli(p) says
whether the member was updated this round, and Z = X + c Y (d - X) is its
post-update value (step factor c toward a shared target d). Members share X
marginals independently; their indicators may be coupled through the pairwise
joint probability P(Y_i = Y_j = 1) = p_joint.

Exact results implemented here (and cross-checked by MC):
  mean    E[Z]  = (1 - c p)(a + b)/2 + c d p
  second  E[Z^2] = (1 - 2 c p + p c^2)(a^2 + a b + b^2)/3
                   + c d p ((a + b)(1 - c) + c d)
  pair    Cov(Z_i, Z_j) = (c (d - mu_X))^2 (p_joint - p^2),  mu_X = (a + b)/2
so for two members Var((Z_i + Z_j)/2) = Var(Z)/2 + phi (p_joint - p^2) with
phi = (c (d - mu_X))^2 / 2. The /4 variant of phi is also reported in
experiment output so the two conventions can be told apart empirically.

The CDF of min(Z_i, Z_j) uses the exact mixture joint over the four
indicator outcomes; it reduces to the independent product form when
p_joint = p^2.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .dpp import KDppSampler
from .errors import ValidationError

_DEFAULT_MIN_GRID = 100_000


@dataclass
class VarianceModel:
    """Parameters of the indicator-gated mixture; see module docstring.

    a < d < b bound the uniform support and the shared target; c in (0, 1)
    is the update step factor; p_marginal / p_joint set the indicator law.
    """

    a: float
    b: float
    c: float
    d: float
    p_marginal: float
    p_joint: float
    n_members: int = 2

    def __post_init__(self) -> None:
        if not self.a < self.b:
            raise ValidationError(f"need a < b, got a={self.a}, b={self.b}")
        if not self.a < self.d < self.b:
            raise ValidationError(f"target d must lie inside (a, b), got d={self.d}")
        if not 0.0 < self.c < 1.0:
            raise ValidationError(f"step factor c must be in (0, 1), got c={self.c}")
        p, pj = self.p_marginal, self.p_joint
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"p_marginal must be in [0, 1], got {p}")
        lo = max(0.0, 2.0 * p - 1.0)
        if not lo - 1e-12 <= pj <= p + 1e-12:
            raise ValidationError(
                f"p_joint={pj} violates the Frechet bounds [{lo}, {p}] for p={p}"
            )
        if self.n_members < 2:
            raise ValidationError(f"need at least 2 members, got {self.n_members}")

    @property
    def mu_x(self) -> float:
        return 0.5 * (self.a + self.b)


def z_mean(model: VarianceModel) -> float:
    """E[Z] in closed form."""
    return (1.0 - model.c * model.p_marginal) * model.mu_x + model.c * model.d * model.p_marginal


def z_second_moment(model: VarianceModel) -> float:
    a, b, c, d, p = model.a, model.b, model.c, model.d, model.p_marginal
    quad = (a * a + a * b + b * b) / 3.0
    return (1.0 - 2.0 * c * p + p * c * c) * quad + c * d * p * ((a + b) * (1.0 - c) + c * d)


def z_variance(model: VarianceModel) -> float:
    """Var(Z) in closed form."""
    m = z_mean(model)
    return z_second_moment(model) - m * m


def pair_covariance(model: VarianceModel) -> float:
    """Cov(Z_i, Z_j) for one coupled pair: (c (d - mu_X))^2 (p_joint - p^2)."""
    coef = (model.c * (model.d - model.mu_x)) ** 2
    return coef * (model.p_joint - model.p_marginal**2)


def avg_variance_closed_form(model: VarianceModel) -> float:
    """Var of the two-member average: Var(Z)/2 + Cov/2."""
    return 0.5 * z_variance(model) + 0.5 * pair_covariance(model)


def _uniform_cdf(z: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return np.clip((z - lo) / (hi - lo), 0.0, 1.0)


def _mixture_pieces(model: VarianceModel, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """CDFs of the not-updated and updated branches of Z at the points z."""
    f0 = _uniform_cdf(z, model.a, model.b)
    lo1 = model.c * model.d + model.a * (1.0 - model.c)
    hi1 = model.c * model.d + model.b * (1.0 - model.c)
    f1 = _uniform_cdf(z, lo1, hi1)
    return f0, f1


def z_cdf(model: VarianceModel, z) -> np.ndarray | float:
    """CDF of a single member's Z: mixture of two uniform branches."""
    arr = np.asarray(z, dtype=np.float64)
    f0, f1 = _mixture_pieces(model, arr)
    p = model.p_marginal
    out = (1.0 - p) * f0 + p * f1
    return float(out) if np.isscalar(z) else out


def z_min_cdf(model: VarianceModel, z) -> np.ndarray | float:
    """CDF of min(Z_i, Z_j): 2 F_Z(z) - P(Z_i <= z, Z_j <= z).

    The pair joint sums the four indicator outcomes exactly:
    p_joint F1^2 + 2 (p - p_joint) F0 F1 + (1 - 2p + p_joint) F0^2.
    """
    arr = np.asarray(z, dtype=np.float64)
    f0, f1 = _mixture_pieces(model, arr)
    p, pj = model.p_marginal, model.p_joint
    marginal = (1.0 - p) * f0 + p * f1
    joint = pj * f1 * f1 + 2.0 * (p - pj) * f0 * f1 + (1.0 - 2.0 * p + pj) * f0 * f0
    out = 2.0 * marginal - joint
    return float(out) if np.isscalar(z) else out


def min_moments_from_cdf(
    model: VarianceModel, n_grid: int = _DEFAULT_MIN_GRID
) -> tuple[float, float]:
    """Mean and variance of min(Z_i, Z_j) by Stieltjes integration of its CDF."""
    grid = np.linspace(model.a, model.b, n_grid + 1)
    cdf = z_min_cdf(model, grid)
    weights = np.diff(cdf)
    mids = 0.5 * (grid[:-1] + grid[1:])
    mean = float(np.sum(mids * weights))
    second = float(np.sum(mids * mids * weights))
    return mean, second - mean * mean


@dataclass
class Independent:
    """Members update independently with the model's marginal probability."""


@dataclass
class NegativelyCoupled:
    """Bivariate Bernoulli pair with a specified joint probability.

    ``p_joint`` None means: use the model's own p_joint. Only defined for
    two members.
    """

    p_joint: float | None = None


@dataclass
class KdppDriven:
    """Indicators from repeated size-k determinantal draws over the members."""

    kernel: np.ndarray
    k: int


Coupling = Independent | NegativelyCoupled | KdppDriven


def sample_indicators(
    model: VarianceModel,
    coupling: Coupling,
    n_draws: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, dict]:
    """(n_draws, n_members) 0/1 indicator matrix plus empirical coupling info."""
    m = model.n_members
    if isinstance(coupling, Independent):
        ind = (rng.random((n_draws, m)) < model.p_marginal).astype(np.float64)
    elif isinstance(coupling, NegativelyCoupled):
        if m != 2:
            raise ValidationError("the bivariate Bernoulli construction needs exactly 2 members")
        p = model.p_marginal
        pj = model.p_joint if coupling.p_joint is None else float(coupling.p_joint)
        lo = max(0.0, 2.0 * p - 1.0)
        if not lo - 1e-12 <= pj <= p + 1e-12:
            raise ValidationError(f"p_joint={pj} outside Frechet bounds [{lo}, {p}]")
        u = rng.random(n_draws)
        both = u < pj
        only_i = (u >= pj) & (u < p)
        only_j = (u >= p) & (u < 2.0 * p - pj)
        ind = np.zeros((n_draws, 2))
        ind[:, 0] = both | only_i
        ind[:, 1] = both | only_j
    elif isinstance(coupling, KdppDriven):
        kernel = np.asarray(coupling.kernel, dtype=np.float64)
        if kernel.shape != (m, m):
            raise ValidationError(
                f"coupling kernel must be ({m}, {m}) to match n_members, got {kernel.shape}"
            )
        sampler = KDppSampler.from_kernel(kernel, coupling.k)
        ind = np.zeros((n_draws, m))
        for row in ind:
            row[list(sampler.sample(rng))] = 1.0
    else:
        raise ValidationError(f"unknown coupling {coupling!r}")

    p_hat = float(ind.mean())
    cross = ind.T @ ind / n_draws
    off = cross[np.triu_indices(m, k=1)]
    info = {"empirical_p": p_hat, "empirical_p_joint": float(off.mean())}
    return ind, info


@dataclass
class MinAvgVariance:
    var_min: float
    var_avg: float
    se_min: float
    se_avg: float
    mean_min: float
    mean_avg: float
    var_member: float
    se_member: float
    info: dict


def variance_with_jackknife(x: np.ndarray) -> tuple[float, float]:
    """Unbiased sample variance and its delete-one jackknife standard error."""
    n = x.size
    if n < 3:
        raise ValidationError("need at least 3 draws for a jackknife variance")
    xc = x - x.mean()  # shift for numerical stability; variance is unaffected
    s1 = float(xc.sum())
    s2 = float((xc * xc).sum())
    var = (s2 - s1 * s1 / n) / (n - 1)
    loo_s1 = s1 - xc
    loo_s2 = s2 - xc * xc
    loo_var = (loo_s2 - loo_s1 * loo_s1 / (n - 1)) / (n - 2)
    center = loo_var.mean()
    se = math.sqrt((n - 1) / n * float(((loo_var - center) ** 2).sum()))
    return float(var), se


def mc_min_avg_variance(
    model: VarianceModel,
    coupling: Coupling,
    n_draws: int,
    rng: np.random.Generator,
) -> MinAvgVariance:
    """MC estimates of Var(min_i Z_i) and Var(mean_i Z_i) with jackknife SEs."""
    if n_draws < 10_000:
        raise ValidationError(f"n_draws too small for stable estimates: {n_draws}")
    indicators, info = sample_indicators(model, coupling, n_draws, rng)
    x = rng.uniform(model.a, model.b, size=(n_draws, model.n_members))
    z = x + model.c * indicators * (model.d - x)
    w_min = z.min(axis=1)
    w_avg = z.mean(axis=1)
    var_min, se_min = variance_with_jackknife(w_min)
    var_avg, se_avg = variance_with_jackknife(w_avg)
    var_member, se_member = variance_with_jackknife(z[:, 0])
    return MinAvgVariance(
        var_min=var_min,
        var_avg=var_avg,
        se_min=se_min,
        se_avg=se_avg,
        mean_min=float(w_min.mean()),
        mean_avg=float(w_avg.mean()),
        var_member=var_member,
        se_member=se_member,
        info=info,
    )


def run_experiment(
    model: VarianceModel,
    coupling: Coupling,
    n_draws: int,
    rng: np.random.Generator,
    sigma_level: float = 3.0,
) -> dict:
    """One full comparison: closed forms vs MC, coupled vs independent arm.

    Returns a JSON-ready report. For determinantally driven indicators the
    closed-form side plugs in the empirically measured marginal/joint
    probabilities. The phi entry records which scaling of the covariance
    term matches the measured coupled-vs-independent gap ("half" is the
    exact algebra; "indistinguishable" when the effect is below resolution).
    """
    coupled = mc_min_avg_variance(model, coupling, n_draws, rng)
    indep_model = dataclasses.replace(model, p_joint=model.p_marginal**2)
    independent = mc_min_avg_variance(indep_model, Independent(), n_draws, rng)

    if isinstance(coupling, KdppDriven):
        p_hat = coupled.info["empirical_p"]
        pj_hat = coupled.info["empirical_p_joint"]
        cf_model = dataclasses.replace(model, p_marginal=p_hat, p_joint=pj_hat)
    elif isinstance(coupling, NegativelyCoupled) and coupling.p_joint is not None:
        cf_model = dataclasses.replace(model, p_joint=float(coupling.p_joint))
    else:
        cf_model = model

    mean_cf = z_mean(cf_model)
    var_cf = z_variance(cf_model)
    min_mean_cf, min_var_cf = min_moments_from_cdf(cf_model)
    phi_half = (cf_model.c * (cf_model.d - cf_model.mu_x)) ** 2 / 2.0
    phi_quarter = phi_half / 2.0
    delta_p = cf_model.p_joint - cf_model.p_marginal**2

    mc_gap = coupled.var_avg - independent.var_avg
    gap_se = math.hypot(coupled.se_avg, independent.se_avg)
    err_half = abs(mc_gap - phi_half * delta_p)
    err_quarter = abs(mc_gap - phi_quarter * delta_p)
    if max(err_half, err_quarter) <= sigma_level * gap_se:
        phi_match = "indistinguishable"
    else:
        phi_match = "half" if err_half < err_quarter else "quarter"

    if delta_p < -1e-12:
        if mc_gap < -sigma_level * gap_se:
            ordering_avg = "reduced"
        elif abs(mc_gap) <= sigma_level * gap_se:
            ordering_avg = "tie_within_error"
        else:
            ordering_avg = "increased"
        min_gap = coupled.var_min - independent.var_min
        min_se = math.hypot(coupled.se_min, independent.se_min)
        if min_gap < -sigma_level * min_se:
            ordering_min = "reduced"
        elif abs(min_gap) <= sigma_level * min_se:
            ordering_min = "tie_within_error"
        else:
            ordering_min = "increased"
    elif delta_p > 1e-12:
        ordering_avg = ordering_min = "positive_coupling_informational"
    else:
        ordering_avg = ordering_min = "tie_within_error"

    checks = {
        "z_mean_mc": abs(coupled.mean_avg - mean_cf)
        <= sigma_level * math.sqrt(max(coupled.var_avg, 1e-300) / n_draws),
        "z_variance_mc": abs(coupled.var_member - var_cf) <= sigma_level * coupled.se_member,
        "avg_variance_closed_form": (
            model.n_members != 2
            or abs(coupled.var_avg - avg_variance_closed_form(cf_model))
            <= sigma_level * coupled.se_avg
        ),
        "min_variance_closed_form": (
            model.n_members != 2
            or abs(coupled.var_min - min_var_cf) <= sigma_level * coupled.se_min
        ),
        "ordering_avg": ordering_avg,
        "ordering_min": ordering_min,
    }

    return {
        "model": {
            "a": model.a,
            "b": model.b,
            "c": model.c,
            "d": model.d,
            "p_marginal": model.p_marginal,
            "p_joint": model.p_joint,
            "n_members": model.n_members,
        },
        "coupling": type(coupling).__name__,
        "n_draws": n_draws,
        "closed_form": {
            "z_mean": mean_cf,
            "z_variance": var_cf,
            "avg_variance": avg_variance_closed_form(cf_model),
            "min_mean": min_mean_cf,
            "min_variance": min_var_cf,
            "phi_half": phi_half,
            "phi_quarter": phi_quarter,
        },
        "mc_coupled": _mc_dict(coupled),
        "mc_independent": _mc_dict(independent),
        "avg_gap": {
            "mc": mc_gap,
            "se": gap_se,
            "predicted_half_phi": phi_half * delta_p,
            "predicted_quarter_phi": phi_quarter * delta_p,
            "phi_match": phi_match,
        },
        "checks": checks,
    }


def _mc_dict(r: MinAvgVariance) -> dict:
    return {
        "var_min": r.var_min,
        "var_avg": r.var_avg,
        "se_min": r.se_min,
        "se_avg": r.se_avg,
        "mean_min": r.mean_min,
        "mean_avg": r.mean_avg,
        "var_member": r.var_member,
        "se_member": r.se_member,
        **r.info,
    }
