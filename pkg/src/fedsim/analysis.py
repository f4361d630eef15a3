"""Analytic oracles and convergence diagnostics.

Quadratic fixed points for proximal/plain local GD, the small-learning-rate
limit, chi-square weight bias, the A/B/C convergence constants with their
closed-form specializations, learning-rate constraints, the order-optimal
proximal parameter, error-bound evaluation, and the two-client lower-bound
identity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from fedsim.solvers import AccumulationVector, SolverSpec, accumulation_vector


@dataclass(frozen=True)
class AssumptionConstants:
    """Smoothness / noise / dissimilarity constants entering the bounds."""

    L: float = 1.0
    sigma2: float = 0.0
    beta2: float = 1.0
    kappa2: float = 0.0

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("L must be > 0")
        if self.sigma2 < 0 or self.kappa2 < 0:
            raise ValueError("sigma2 and kappa2 must be >= 0")
        if self.beta2 < 1:
            raise ValueError("beta2 must be >= 1")


@dataclass(frozen=True)
class TheoremConstants:
    A: float
    B: float
    C: float
    tau_eff: float
    tau_bar: float
    slowdown: float
    chi2: float


class ContractionError(RuntimeError):
    """The fixed-point iteration map is not a contraction at this step size."""


def quadratic_fixed_point(p, H_list, e_list, tau_list, eta: float, mu: float = 0.0) -> np.ndarray:
    """Exact limit point of plain delta-averaging with local (proximal) GD.

    For quadratic clients with curvature H_i and linear term e_i, one round of
    deterministic local GD contracts through K_i = [I - (I - eta*mu*I -
    eta*H_i)^tau_i](H_i + mu*I)^{-1}; the iterates converge to
    (sum p_i K_i H_i)^{-1}(sum p_i K_i e_i) when the round map is a contraction.
    """
    p = np.asarray(p, dtype=float)
    H_list = [np.atleast_2d(np.asarray(H, dtype=float)) for H in H_list]
    e_list = [np.atleast_1d(np.asarray(e, dtype=float)) for e in e_list]
    d = H_list[0].shape[0]
    eye = np.eye(d)
    M = np.zeros((d, d))
    v = np.zeros(d)
    for pi, H, e, tau in zip(p, H_list, e_list, tau_list):
        K = (eye - np.linalg.matrix_power(eye - eta * mu * eye - eta * H, int(tau))) @ np.linalg.inv(H + mu * eye)
        M += pi * (K @ H)
        v += pi * (K @ e)
    spectral = np.linalg.norm(eye - M, 2)
    if spectral >= 1.0 - 1e-10:
        raise ContractionError(
            f"round map spectral norm {spectral:.12f} >= 1: iterates need not converge"
        )
    return np.linalg.solve(M, v)


def lemma1_limit(tau_list, e_list) -> np.ndarray:
    """Small-learning-rate limit of plain averaging on F_i = 1/2||x - e_i||^2
    with uniform weights: the tau-weighted mean of the local optima."""
    tau = np.asarray(tau_list, dtype=float)
    if np.any(tau < 1):
        raise ValueError("tau entries must be >= 1")
    e = np.array([np.atleast_1d(np.asarray(ei, dtype=float)) for ei in e_list])
    return (tau[:, None] * e).sum(axis=0) / tau.sum()


def chi_square(p, w) -> float:
    """Chi-square divergence sum (p_i - w_i)^2 / w_i between weight vectors."""
    p = np.asarray(p, dtype=float)
    w = np.asarray(w, dtype=float)
    if abs(p.sum() - 1.0) > 1e-9 or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("p and w must each sum to 1")
    if np.any(w <= 0):
        raise ValueError("w entries must be > 0")
    return float(np.sum((p - w) ** 2 / w))


def abc_constants(
    w, tau_eff: float, a_vectors: list[AccumulationVector], p=None
) -> TheoremConstants:
    """A/B/C constants of the convergence bound from explicit a-vectors.

    A = m * tau_eff * sum w_i^2 ||a_i||_2^2 / ||a_i||_1^2,
    B = sum w_i (||a_i||_2^2 - a_{i,-1}^2),
    C = max_i ||a_i||_1 (||a_i||_1 - a_{i,-1}).
    """
    w = np.asarray(w, dtype=float)
    m = len(a_vectors)
    norm1 = np.array([a.norm1 for a in a_vectors])
    norm2sq = np.array([a.norm2sq for a in a_vectors])
    last = np.array([a.last for a in a_vectors])
    taus = np.array([a.tau for a in a_vectors], dtype=float)
    A = m * tau_eff * float(np.sum(w**2 * norm2sq / norm1**2))
    B = float(np.sum(w * (norm2sq - last**2)))
    C = float(np.max(norm1 * (norm1 - last)))
    tau_bar = float(taus.mean())
    chi2 = chi_square(p, w) if p is not None else 0.0
    return TheoremConstants(
        A=A, B=B, C=C, tau_eff=tau_eff, tau_bar=tau_bar,
        slowdown=tau_bar / tau_eff, chi2=chi2,
    )


def fedavg_constants(p, tau_list) -> tuple[float, float, float]:
    """Closed-form A/B/C for the vanilla local solver.

    A = m sum p_i^2 tau_i / E_p[tau], B = E_p[tau] - 1 + Var_p[tau]/E_p[tau],
    C = tau_max (tau_max - 1).
    """
    p = np.asarray(p, dtype=float)
    tau = np.asarray(tau_list, dtype=float)
    mean = float(p @ tau)
    var = float(p @ tau**2) - mean**2
    A = len(p) * float(np.sum(p**2 * tau)) / mean
    B = mean - 1.0 + var / mean
    tau_max = float(tau.max())
    return A, B, tau_max * (tau_max - 1.0)


def fedprox_constants(p, tau_list, alpha: float) -> tuple[float, float, float]:
    """Closed-form A/B/C for the proximal local solver via geometric sums."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    p = np.asarray(p, dtype=float)
    tau = np.asarray(tau_list, dtype=float)
    r = 1.0 - alpha
    norm1 = (1.0 - r**tau) / alpha
    norm2sq = (1.0 - r ** (2 * tau)) / (1.0 - r**2)
    w_unnorm = p * (1.0 - r**tau)
    total = w_unnorm.sum()
    tau_eff = total / alpha
    w = w_unnorm / total
    A = len(p) * tau_eff * float(np.sum(w**2 * norm2sq / norm1**2))
    B = float(np.sum(w * (norm2sq - 1.0)))
    n1max = float(norm1.max())
    return A, B, n1max * (n1max - 1.0)


def best_prox_alpha(m: int, tau_bar: float, T: int) -> float:
    """Order-optimal proximal parameter sqrt(m) / (sqrt(tau_bar) T^(1/6)),
    clipped into (0, 1)."""
    if m < 1 or tau_bar <= 0 or T < 1:
        raise ValueError("m, tau_bar, T must be positive")
    alpha = np.sqrt(m) / (np.sqrt(tau_bar) * T ** (1.0 / 6.0))
    if alpha >= 1.0:
        warnings.warn(
            f"optimal alpha {alpha:.4f} outside (0,1); clipping", stacklevel=2
        )
        alpha = 1.0 - 1e-6
    return float(alpha)


def max_learning_rate(L: float, beta2: float, tau_eff: float, max_a_norm1: float) -> float:
    """Largest eta satisfying the analysis' learning-rate constraints:
    eta * L <= (1/2) min{1 / (max_i ||a_i||_1 sqrt(2 beta2 + 1)), 1 / tau_eff}."""
    if min(L, beta2, tau_eff, max_a_norm1) <= 0:
        raise ValueError("all arguments must be > 0")
    bound = 0.5 * min(1.0 / (max_a_norm1 * np.sqrt(2 * beta2 + 1)), 1.0 / tau_eff)
    return float(bound / L)


def error_bound(
    constants: TheoremConstants, assumptions: AssumptionConstants, m: int, T: int
) -> tuple[float, float]:
    """Evaluate the convergence bound with all swallowed constants set to 1.

    eps_opt is the vanishing optimization error at eta = sqrt(m/(tau_bar T));
    the total adds the amplification and the non-vanishing chi2*kappa2 floor:
    total = 2[chi2 (beta2 - 1) + 1] eps_opt + 2 chi2 kappa2.
    """
    tau_bar = constants.tau_bar
    sqrt_term = np.sqrt(m * tau_bar * T)
    eps_opt = (
        constants.slowdown / sqrt_term
        + constants.A * assumptions.sigma2 / sqrt_term
        + m * constants.B * assumptions.sigma2 / (tau_bar * T)
        + m * constants.C * assumptions.kappa2 / (tau_bar * T)
    )
    total = 2.0 * (constants.chi2 * (assumptions.beta2 - 1.0) + 1.0) * eps_opt
    total += 2.0 * constants.chi2 * assumptions.kappa2
    return float(eps_opt), float(total)


def lower_bound_gap(tau1: int, tau2: int, a: float) -> float:
    """Non-vanishing gradient-norm floor of plain averaging on the two-client
    construction F_1 = 1/2 (x-a)^2, F_2 = 1/2 (x+a)^2 with uniform weights:
    ((tau1 - tau2)/(tau1 + tau2))^2 a^2, which equals chi2 * kappa2 exactly."""
    if tau1 < 1 or tau2 < 1:
        raise ValueError("tau1, tau2 must be >= 1")
    return ((tau1 - tau2) / (tau1 + tau2)) ** 2 * a**2


def implicit_weights(spec: SolverSpec, p, tau_list) -> np.ndarray:
    """Aggregation weights implicitly chosen by plain delta-averaging for the
    given solver: w_i proportional to p_i ||a_i||_1."""
    p = np.asarray(p, dtype=float)
    norm1 = np.array(
        [accumulation_vector(spec, int(t)).norm1 for t in tau_list]
    )
    scaled = p * norm1
    return scaled / scaled.sum()
