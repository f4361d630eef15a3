"""Client-side local solvers and their gradient accumulation vectors.

Each solver's round change decomposes as delta = -eta * G @ a, where G stacks
the gradients visited during the loop and ``a`` is a nonnegative vector fixed
by the solver variant. The closed forms of ``a`` are computed independently of
the loop so the two routes can be cross-checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VARIANTS = ("vanilla", "proximal", "decayed_lr", "momentum", "vr_momentum")

DIVERGENCE_NORM = 1e12


class DivergenceError(RuntimeError):
    """Raised when a local iterate blows up; carries the offending step."""

    def __init__(self, step: int, norm: float):
        super().__init__(f"iterate diverged at local step {step} (norm {norm:.3e})")
        self.step = step
        self.norm = norm


@dataclass(frozen=True)
class SolverSpec:
    """Configuration of one client's local solver.

    eta is the client learning rate; mu the proximal penalty, gamma the
    per-step learning-rate decay factor, rho the momentum factor. Only the
    parameter matching the variant is used.
    """

    variant: str
    eta: float
    mu: float = 0.0
    gamma: float = 1.0
    rho: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown solver variant {self.variant!r}")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must be in [0, 1)")

    def with_eta(self, eta: float) -> "SolverSpec":
        return SolverSpec(self.variant, eta, self.mu, self.gamma, self.rho)


@dataclass
class AccumulationVector:
    """Nonnegative coefficients combining a round's gradients, chronological order."""

    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        if np.any(self.entries < 0):
            raise ValueError("accumulation entries must be nonnegative")

    @property
    def tau(self) -> int:
        return self.entries.shape[0]

    @property
    def norm1(self) -> float:
        return float(self.entries.sum())

    @property
    def norm2sq(self) -> float:
        return float(np.sum(self.entries**2))

    @property
    def last(self) -> float:
        return float(self.entries[-1])


def accumulation_vector(spec: SolverSpec, tau: int) -> AccumulationVector:
    """Closed-form accumulation vector for ``tau`` local steps of a solver.

    Chronological entry k (0-indexed): vanilla 1; proximal (1-alpha)^(tau-1-k)
    with alpha = eta*mu; decayed_lr gamma^k; momentum (1-rho^(tau-k))/(1-rho).
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    k = np.arange(tau, dtype=float)
    if spec.variant == "vanilla":
        entries = np.ones(tau)
    elif spec.variant == "proximal":
        alpha = spec.eta * spec.mu
        if alpha >= 1:
            raise ValueError(f"degenerate proximal solver: eta*mu = {alpha} >= 1")
        entries = (1.0 - alpha) ** (tau - 1 - k)
    elif spec.variant == "decayed_lr":
        entries = spec.gamma**k
    else:  # momentum, vr_momentum
        entries = (1.0 - spec.rho ** (tau - k)) / (1.0 - spec.rho)
    return AccumulationVector(entries)


@dataclass
class LocalRunResult:
    """One client's round output: raw change, normalized gradient, scale."""

    delta: np.ndarray
    d: np.ndarray
    a_norm1: float
    tau: int
    gradients: np.ndarray | None = field(default=None, repr=False)


def run_local(
    objective,
    x_start: np.ndarray,
    spec: SolverSpec,
    tau: int,
    correction: np.ndarray | None = None,
    batch_size: int | None = None,
    rng: np.random.Generator | None = None,
    record_gradients: bool = False,
) -> LocalRunResult:
    """Execute one client's local loop for a round.

    With ``batch_size`` and ``rng`` absent, the exact gradient is used
    (deterministic GD). ``correction`` is the cross-client variance-reduction
    term added to every gradient; only valid for the vr_momentum variant.
    The momentum buffer starts at zero each round.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if correction is not None and spec.variant != "vr_momentum":
        raise ValueError("correction is only supported for vr_momentum")
    x_start = np.asarray(x_start, dtype=float)
    x = x_start.copy()
    buf = np.zeros_like(x)
    stack = [] if record_gradients else None

    def gradient(xk):
        if rng is None or batch_size is None:
            g = objective.grad(xk)
        else:
            g = objective.stochastic_grad(xk, batch_size, rng)
        if correction is not None:
            g = g + correction
        return g

    for k in range(tau):
        g = gradient(x)
        if stack is not None:
            stack.append(g)
        if spec.variant == "vanilla":
            x = x - spec.eta * g
        elif spec.variant == "proximal":
            x = x - spec.eta * (g + spec.mu * (x - x_start))
        elif spec.variant == "decayed_lr":
            x = x - spec.eta * spec.gamma**k * g
        else:  # momentum, vr_momentum
            buf = spec.rho * buf + g
            x = x - spec.eta * buf
        norm = float(np.linalg.norm(x))
        if not np.isfinite(norm) or norm > DIVERGENCE_NORM:
            raise DivergenceError(k, norm)

    a = accumulation_vector(spec, tau)
    delta = x - x_start
    d = -delta / (spec.eta * a.norm1)
    return LocalRunResult(
        delta=delta,
        d=d,
        a_norm1=a.norm1,
        tau=tau,
        gradients=np.column_stack(stack) if stack is not None else None,
    )


def vr_correction(d_prev_local: np.ndarray, d_prev_weighted_avg: np.ndarray) -> np.ndarray:
    """Cross-client variance-reduction term from the previous round's
    normalized gradients: weighted average minus the client's own."""
    d_prev_local = np.asarray(d_prev_local, dtype=float)
    d_prev_weighted_avg = np.asarray(d_prev_weighted_avg, dtype=float)
    if d_prev_local.shape != d_prev_weighted_avg.shape:
        raise ValueError("dimension mismatch between local and averaged gradients")
    return d_prev_weighted_avg - d_prev_local
