"""Local and global objective functions with exact and stochastic gradients.

Two families are provided: strongly convex quadratics (used by the analytic
fixed-point oracles) and multinomial logistic regression on a synthetic
non-IID dataset. All objectives are immutable after construction and take an
explicit caller-owned RNG for stochastic evaluation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def _check_dim(expected: int, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (expected,):
        raise ValueError(f"dimension mismatch: expected ({expected},), got {x.shape}")
    return x


class QuadraticObjective:
    """F(x) = 1/2 x'Hx - e'x + 1/2 e'H^{-1}e with H symmetric positive definite.

    The constant term shifts the minimum value to exactly zero, attained at
    x = H^{-1}e. Stochastic gradients add isotropic Gaussian noise of variance
    ``noise_var`` per coordinate to the exact gradient.
    """

    def __init__(self, H: np.ndarray, e: np.ndarray, noise_var: float = 0.0):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        e = np.atleast_1d(np.asarray(e, dtype=float))
        if H.shape[0] != H.shape[1] or H.shape[0] != e.shape[0]:
            raise ValueError(f"shape mismatch: H {H.shape}, e {e.shape}")
        if not np.allclose(H, H.T, atol=1e-12):
            raise ValueError("H must be symmetric")
        try:
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            raise ValueError("H must be positive definite") from None
        if noise_var < 0:
            raise ValueError("noise_var must be >= 0")
        self.H = H
        self.e = e
        self.noise_var = float(noise_var)
        self._x_star = np.linalg.solve(H, e)
        self._offset = 0.5 * float(e @ self._x_star)

    @property
    def dim(self) -> int:
        return self.e.shape[0]

    def minimizer(self) -> np.ndarray:
        return self._x_star.copy()

    def value(self, x: np.ndarray) -> float:
        x = _check_dim(self.dim, x)
        return 0.5 * float(x @ (self.H @ x)) - float(self.e @ x) + self._offset

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = _check_dim(self.dim, x)
        return self.H @ x - self.e

    def stochastic_grad(self, x, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        # Batch size has no effect for the quadratic family; noise realizes
        # the bounded-variance assumption with known variance.
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        g = self.grad(x)
        if self.noise_var > 0.0:
            g = g + rng.normal(0.0, np.sqrt(self.noise_var), size=g.shape)
        return g


class LogisticObjective:
    """Mean multinomial cross-entropy for one client's (X, y) samples.

    Parameters are flattened row-major: weight matrix W (K x d_feat) first,
    then the bias vector b (K). Mini-batches are drawn with replacement.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray, num_classes: int):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=int))
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y disagree on sample count")
        if X.shape[0] < 1:
            raise ValueError("need at least one sample")
        if y.min() < 0 or y.max() >= num_classes:
            raise ValueError("label out of range")
        self.X = X
        self.y = y
        self.num_classes = int(num_classes)
        self.d_feat = X.shape[1]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.num_classes * (self.d_feat + 1)

    def _unpack(self, x: np.ndarray):
        x = _check_dim(self.dim, x)
        K, d = self.num_classes, self.d_feat
        return x[: K * d].reshape(K, d), x[K * d :]

    def _probs(self, W, b, idx) -> np.ndarray:
        logits = self.X[idx] @ W.T + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        return p

    def value(self, x: np.ndarray) -> float:
        W, b = self._unpack(x)
        idx = np.arange(self.n)
        p = self._probs(W, b, idx)
        return float(-np.mean(np.log(p[idx, self.y] + 1e-300)))

    def accuracy(self, x: np.ndarray) -> float:
        W, b = self._unpack(x)
        pred = np.argmax(self.X @ W.T + b, axis=1)
        return float(np.mean(pred == self.y))

    def batch_grad(self, x: np.ndarray, batch: np.ndarray) -> np.ndarray:
        batch = np.atleast_1d(np.asarray(batch, dtype=int))
        if batch.size == 0:
            raise ValueError("empty batch")
        W, b = self._unpack(x)
        p = self._probs(W, b, batch)
        p[np.arange(batch.size), self.y[batch]] -= 1.0
        grad_W = p.T @ self.X[batch] / batch.size
        grad_b = p.mean(axis=0)
        return np.concatenate([grad_W.ravel(), grad_b])

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.batch_grad(x, np.arange(self.n))

    def stochastic_grad(self, x, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        batch = rng.integers(0, self.n, size=batch_size)
        return self.batch_grad(x, batch)


class GlobalObjective:
    """p-weighted combination F(x) = sum_i p_i F_i(x) of client objectives."""

    def __init__(self, clients: list, p: np.ndarray):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if len(clients) != p.shape[0]:
            raise ValueError("clients and p disagree on length")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("p must be nonnegative and sum to 1")
        dims = {c.dim for c in clients}
        if len(dims) != 1:
            raise ValueError("client objectives disagree on dimension")
        self.clients = list(clients)
        self.p = p

    @property
    def m(self) -> int:
        return len(self.clients)

    @property
    def dim(self) -> int:
        return self.clients[0].dim

    def value(self, x, weights: np.ndarray | None = None) -> float:
        w = self.p if weights is None else weights
        return float(sum(wi * c.value(x) for wi, c in zip(w, self.clients)))

    def grad(self, x, weights: np.ndarray | None = None) -> np.ndarray:
        w = self.p if weights is None else weights
        g = np.zeros(self.dim)
        for wi, c in zip(w, self.clients):
            g += wi * c.grad(x)
        return g

    def is_quadratic(self) -> bool:
        return all(isinstance(c, QuadraticObjective) for c in self.clients)

    def minimizer(self, weights: np.ndarray | None = None) -> np.ndarray:
        """Exact minimizer of the (weighted) quadratic global objective."""
        if not self.is_quadratic():
            raise ValueError("closed-form minimizer requires quadratic clients")
        w = self.p if weights is None else weights
        H_bar = sum(wi * c.H for wi, c in zip(w, self.clients))
        e_bar = sum(wi * c.e for wi, c in zip(w, self.clients))
        return np.linalg.solve(H_bar, e_bar)


@dataclass
class SyntheticDataset:
    """Per-client feature/label arrays for the synthetic logistic task."""

    X: list[np.ndarray]
    y: list[np.ndarray]
    d_feat: int
    num_classes: int
    seed: int
    alpha: float
    beta: float
    n_per_client: np.ndarray = field(init=False)

    def __post_init__(self):
        counts = np.array([len(yi) for yi in self.y])
        if np.any(counts < 1):
            raise ValueError("every client needs at least one sample")
        self.n_per_client = counts

    @property
    def m(self) -> int:
        return len(self.X)

    @property
    def n_total(self) -> int:
        return int(self.n_per_client.sum())

    def weights(self) -> np.ndarray:
        p = self.n_per_client / self.n_total
        assert abs(p.sum() - 1.0) <= 1e-12
        return p

    def to_json(self, path: str) -> None:
        doc = {
            "clients": [
                {"n": int(n), "X": Xi.tolist(), "y": yi.tolist()}
                for n, Xi, yi in zip(self.n_per_client, self.X, self.y)
            ],
            "d_feat": self.d_feat,
            "K": self.num_classes,
            "seed": self.seed,
            "alpha": self.alpha,
            "beta": self.beta,
        }
        with open(path, "w") as f:
            json.dump(doc, f)

    @classmethod
    def from_json(cls, path: str) -> "SyntheticDataset":
        with open(path) as f:
            doc = json.load(f)
        return cls(
            X=[np.array(c["X"], dtype=float) for c in doc["clients"]],
            y=[np.array(c["y"], dtype=int) for c in doc["clients"]],
            d_feat=int(doc["d_feat"]),
            num_classes=int(doc["K"]),
            seed=int(doc["seed"]),
            alpha=float(doc["alpha"]),
            beta=float(doc["beta"]),
        )


def generate_synthetic(
    alpha: float,
    beta: float,
    m: int,
    d_feat: int = 60,
    num_classes: int = 10,
    seed: int = 0,
) -> SyntheticDataset:
    """Generate the non-IID synthetic logistic-regression dataset.

    ``alpha`` controls how much local models differ across clients, ``beta``
    how much local feature distributions differ. Labels come from a per-client
    ground-truth softmax model. Sample counts follow a lognormal law (floor 10)
    to mimic a power-law size distribution.
    """
    if m < 1 or d_feat < 1 or num_classes < 2:
        raise ValueError("need m >= 1, d_feat >= 1, num_classes >= 2")
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be >= 0")
    rng = np.random.default_rng(seed)
    counts = np.maximum(rng.lognormal(mean=4.0, sigma=2.0, size=m).astype(int), 10)
    cov_diag = np.power(np.arange(1, d_feat + 1, dtype=float), -1.2)
    X, y = [], []
    for i in range(m):
        u = rng.normal(0.0, np.sqrt(alpha)) if alpha > 0 else 0.0
        W = rng.normal(u, 1.0, size=(num_classes, d_feat))
        b = rng.normal(u, 1.0, size=num_classes)
        B = rng.normal(0.0, np.sqrt(beta)) if beta > 0 else 0.0
        v = rng.normal(B, 1.0, size=d_feat)
        Xi = rng.normal(v, np.sqrt(cov_diag), size=(counts[i], d_feat))
        logits = Xi @ W.T + b
        X.append(Xi)
        y.append(np.argmax(logits, axis=1))
    return SyntheticDataset(
        X=X, y=y, d_feat=d_feat, num_classes=num_classes, seed=seed,
        alpha=alpha, beta=beta,
    )
