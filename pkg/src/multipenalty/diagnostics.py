"""Monte-Carlo checks of how well ``A`` preserves norms on the signal class.

For subgaussian ensembles ``|A(Z)|^2`` concentrates around ``|Z|_F^2``; the
scan records both for sampled class members and their differences, and
:func:`fit_lower_envelope` extracts a lower bound ``|A(Z)|^2 >= g |Z|^2 - d``.
"""
from __future__ import annotations

from typing import Iterable, NamedTuple

import numpy as np

from .measure import MeasurementOperator, forward
from .model import SignalClassSpec, sample_ground_truth

__all__ = ["ScanResult", "injectivity_scan", "fit_lower_envelope", "GAMMA_GRID"]

GAMMA_GRID = np.round(np.arange(1, 101) / 100.0, 2)


class ScanResult(NamedTuple):
    delta_hat: float
    pairs: list[tuple[float, float]]

    def deviations(self) -> np.ndarray:
        return np.array([abs(a - z) for z, a in self.pairs])

    def median_deviation(self) -> float:
        return float(np.median(self.deviations())) if self.pairs else 0.0


def injectivity_scan(op: MeasurementOperator, spec: SignalClassSpec, n_samples: int,
                     rng: np.random.Generator, dense_fraction: float = 0.1,
                     samples: Iterable[np.ndarray] | None = None) -> ScanResult:
    """Sample ``Z`` and record ``(|Z|_F^2, |A(Z)|_2^2)``.

    Even-indexed samples are single ground-truth draws, odd-indexed ones are
    differences of two independent draws. ``samples`` replaces the sampler
    with explicit matrices. ``delta_hat`` is the largest absolute gap.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if (spec.n1, spec.n2) != op.shape:
        raise ValueError(f"spec dims {(spec.n1, spec.n2)} do not match operator {op.shape}")
    if samples is None:
        def draw():
            return sample_ground_truth(spec, dense_fraction, rng).product()

        samples = (draw() if i % 2 == 0 else draw() - draw() for i in range(n_samples))
    pairs = []
    for Z in samples:
        a = forward(op, Z)
        pairs.append((float(np.sum(Z * Z)), float(a @ a)))
    if len(pairs) != n_samples:
        raise ValueError(f"got {len(pairs)} explicit samples, expected {n_samples}")
    delta = max(abs(a - z) for z, a in pairs)
    return ScanResult(float(delta), pairs)


def fit_lower_envelope(pairs: Iterable[tuple[float, float]]) -> tuple[float, float]:
    """Fit ``y >= gamma * x - delta`` over all pairs.

    For each ``gamma`` on the grid ``0.01, ..., 1`` the tightest offset is
    ``max(0, max(gamma * x - y))``. The smallest offset wins; ties go to the
    larger ``gamma``.
    """
    P = np.asarray(list(pairs), dtype=float).reshape(-1, 2)
    if len(P) < 2:
        raise ValueError("need at least two pairs")
    x, y = P[:, 0], P[:, 1]
    if not (np.any(x) or np.any(y)):
        return 1.0, 0.0
    deltas = np.maximum(0.0, np.max(GAMMA_GRID[:, None] * x[None, :] - y[None, :], axis=1))
    best = np.flatnonzero(deltas == deltas.min())[-1]
    gamma, delta = GAMMA_GRID[best], deltas[best]
    # rounding in gamma*x - y can leave the bound short by an ulp
    while np.any(gamma * x - delta > y):
        delta = np.nextafter(delta, np.inf)
    return float(gamma), float(delta)
