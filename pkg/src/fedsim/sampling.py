"""Client participation schemes unbiased for full participation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SamplingScheme:
    """full, with_replacement(q), or without_replacement_rescaled(q).

    with_replacement draws q i.i.d. client indices proportional to p and
    weights each draw 1/q; without_replacement_rescaled draws q distinct
    uniform indices and rescales weights to p_i * m / q. Both make the
    weighted aggregate an unbiased estimate of the full-participation one.
    """

    variant: str = "full"
    q: int = 1

    def __post_init__(self):
        if self.variant not in ("full", "with_replacement", "without_replacement_rescaled"):
            raise ValueError(f"unknown sampling variant {self.variant!r}")
        if self.variant != "full" and self.q < 1:
            raise ValueError("q must be >= 1")


@dataclass
class ParticipationDraw:
    """Selected (client index, aggregation weight) pairs for one round.

    Duplicate indices under with-replacement sampling are collapsed to a
    single entry whose weight carries the multiplicity.
    """

    entries: list[tuple[int, float]]

    def indices(self) -> list[int]:
        return [i for i, _ in self.entries]

    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.entries])


def select_clients(
    scheme: SamplingScheme, p, m: int, rng: np.random.Generator | None = None
) -> ParticipationDraw:
    """Draw one round's participants and their aggregation weights."""
    p = np.asarray(p, dtype=float)
    if p.shape != (m,):
        raise ValueError("p must have length m")
    if abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("p must sum to 1")
    if scheme.variant == "full":
        return ParticipationDraw([(i, float(p[i])) for i in range(m)])
    if rng is None:
        raise ValueError("sampling requires an RNG")
    if scheme.variant == "with_replacement":
        draws = rng.choice(m, size=scheme.q, replace=True, p=p)
        idx, counts = np.unique(draws, return_counts=True)
        return ParticipationDraw(
            [(int(i), float(c) / scheme.q) for i, c in zip(idx, counts)]
        )
    if scheme.q > m:
        raise ValueError("q cannot exceed m for without-replacement sampling")
    idx = np.sort(rng.choice(m, size=scheme.q, replace=False))
    return ParticipationDraw(
        [(int(i), float(p[i]) * m / scheme.q) for i in idx]
    )
