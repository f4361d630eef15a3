"""Server-side aggregation of normalized client gradients.

The generalized update is x_next - x = -tau_eff * eta * sum_i w_i d_i. The
(tau_eff, w) pair is either derived implicitly from the clients' accumulation
norms (which reproduces plain delta-averaging exactly) or set explicitly
(normalized averaging keeps w = p and scales by the weighted step count).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WEIGHT_SCHEMES = ("implicit", "fednova")
TAU_EFF_SCHEMES = ("implicit", "weighted_tau", "fixed")


@dataclass(frozen=True)
class AggregationRule:
    """(weight scheme, tau_eff scheme) pair selecting an aggregation method.

    weight_scheme "implicit" weights each client by p_i * ||a_i||_1 (plain
    delta-averaging); "fednova" keeps w_i = p_i. tau_eff_scheme "implicit" uses
    sum p_i ||a_i||_1, "weighted_tau" uses sum p_i tau_i, "fixed" a constant.
    """

    weight_scheme: str = "implicit"
    tau_eff_scheme: str = "implicit"
    tau_eff_value: float | None = None

    def __post_init__(self):
        if self.weight_scheme not in WEIGHT_SCHEMES:
            raise ValueError(f"unknown weight scheme {self.weight_scheme!r}")
        if self.tau_eff_scheme not in TAU_EFF_SCHEMES:
            raise ValueError(f"unknown tau_eff scheme {self.tau_eff_scheme!r}")
        if self.tau_eff_scheme == "fixed":
            if self.tau_eff_value is None or self.tau_eff_value <= 0:
                raise ValueError("fixed tau_eff requires a positive value")

    @classmethod
    def fedavg(cls) -> "AggregationRule":
        return cls("implicit", "implicit")

    @classmethod
    def fednova(cls) -> "AggregationRule":
        return cls("fednova", "weighted_tau")

    def resolve(self, p, a_norm1s, taus) -> tuple[float, np.ndarray]:
        """Concrete (tau_eff, w) for one round's participation weights p."""
        p = np.asarray(p, dtype=float)
        a_norm1s = np.asarray(a_norm1s, dtype=float)
        taus = np.asarray(taus, dtype=float)
        if self.weight_scheme == "implicit":
            _, w = implicit_decomposition(p, a_norm1s, normalized=False)
        else:
            w = p.copy()
        if self.tau_eff_scheme == "implicit":
            tau_eff = float(p @ a_norm1s)
        elif self.tau_eff_scheme == "weighted_tau":
            tau_eff = float(p @ taus)
        else:
            tau_eff = float(self.tau_eff_value)
        if tau_eff <= 0:
            raise ValueError("resolved tau_eff must be > 0")
        return tau_eff, w


def implicit_decomposition(p, a_norm1s, normalized: bool = True) -> tuple[float, np.ndarray]:
    """(tau_eff, w) implicitly chosen by plain delta-averaging.

    tau_eff = sum p_i ||a_i||_1 and w_i proportional to p_i ||a_i||_1, so that
    -tau_eff * sum_i w_i * eta * d_i reproduces sum_i p_i delta_i exactly.
    With ``normalized`` the input p must sum to 1; the harness disables the
    check when p carries sampling-rescaled weights.
    """
    p = np.asarray(p, dtype=float)
    a_norm1s = np.asarray(a_norm1s, dtype=float)
    if normalized and abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("p must sum to 1")
    if np.any(a_norm1s <= 0):
        raise ValueError("accumulation norms must be > 0")
    scaled = p * a_norm1s
    tau_eff = float(scaled.sum())
    if tau_eff <= 0:
        raise ValueError("zero effective steps")
    return tau_eff, scaled / tau_eff


def fedprox_closed_form(p, taus, alpha: float) -> tuple[float, np.ndarray]:
    """Closed-form (tau_eff, w) for the proximal solver with parameter alpha.

    tau_eff = (1/alpha) sum p_i [1 - (1-alpha)^tau_i] and w_i proportional to
    p_i [1 - (1-alpha)^tau_i]; agrees with the implicit decomposition applied
    to proximal accumulation vectors.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    p = np.asarray(p, dtype=float)
    taus = np.asarray(taus, dtype=float)
    factors = 1.0 - (1.0 - alpha) ** taus
    scaled = p * factors
    total = scaled.sum()
    return float(total / alpha), scaled / total


def aggregate(rule: AggregationRule, p, results, eta: float) -> np.ndarray:
    """Global model change -tau_eff * eta * sum_i w_i d_i for one round."""
    if len(results) == 0:
        raise ValueError("no client results to aggregate")
    dims = {r.d.shape for r in results}
    if len(dims) != 1:
        raise ValueError("client results disagree on dimension")
    a_norm1s = [r.a_norm1 for r in results]
    taus = [r.tau for r in results]
    tau_eff, w = rule.resolve(p, a_norm1s, taus)
    total = np.zeros_like(results[0].d)
    for wi, r in zip(w, results):
        total += wi * r.d
    return -tau_eff * eta * total


class ServerOptimizer:
    """Applies the aggregated change to the global model.

    The momentum variant keeps a buffer that persists across rounds:
    u <- rho_s * u + delta; x <- x + u.
    """

    def __init__(self, variant: str = "plain", rho_s: float = 0.0):
        if variant not in ("plain", "momentum"):
            raise ValueError(f"unknown server optimizer {variant!r}")
        if not 0 <= rho_s < 1:
            raise ValueError("rho_s must be in [0, 1)")
        self.variant = variant
        self.rho_s = rho_s
        self.buffer: np.ndarray | None = None

    def step(self, x: np.ndarray, global_delta: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        global_delta = np.asarray(global_delta, dtype=float)
        if x.shape != global_delta.shape:
            raise ValueError("dimension mismatch")
        if self.variant == "plain":
            return x + global_delta
        if self.buffer is None:
            self.buffer = np.zeros_like(x)
        elif self.buffer.shape != x.shape:
            raise ValueError("buffer dimension mismatch")
        self.buffer = self.rho_s * self.buffer + global_delta
        return x + self.buffer
