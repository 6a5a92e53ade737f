"""Signal class of low-rank matrices with effectively sparse factors.

A matrix ``X = U @ V.T`` belongs to the scaled class ``Gamma * K^R_{s1,s2}``
when ``max(|U|_F^2, |V|_F^2) <= Gamma * R`` and
``|U|_1 <= R * sqrt(Gamma * s1)``, ``|V|_1 <= R * sqrt(Gamma * s2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Factorization",
    "SignalClassSpec",
    "InitializationError",
    "sample_ground_truth",
    "perturb_initialization",
    "certify_membership",
    "effective_sparsity",
    "hard_sparsity",
]


class InitializationError(RuntimeError):
    """Raised when a perturbed initialization cannot hit its target error."""


@dataclass(frozen=True)
class Factorization:
    """Pair of component matrices representing ``U @ V.T``."""

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        V = np.asarray(self.V, dtype=float)
        if U.ndim != 2 or V.ndim != 2:
            raise ValueError("U and V must be 2-D arrays")
        if U.shape[1] != V.shape[1] or U.shape[1] < 1:
            raise ValueError(
                f"U and V need the same column count >= 1, got {U.shape} and {V.shape}")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    def product(self) -> np.ndarray:
        return self.U @ self.V.T

    def is_zero(self) -> bool:
        return not (np.any(self.U) and np.any(self.V))

    def copy(self) -> "Factorization":
        return Factorization(self.U.copy(), self.V.copy())


@dataclass(frozen=True)
class SignalClassSpec:
    """Dimensions and sparsity levels of ``K^R_{s1,s2}``."""

    n1: int
    n2: int
    R: int
    s1: float
    s2: float
    Gamma: float = 1.0

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1 or self.R < 1:
            raise ValueError("n1, n2 and R must be positive")
        if not (1 <= self.s1 <= self.n1 and 1 <= self.s2 <= self.n2):
            raise ValueError(
                f"need 1 <= s1 <= n1 and 1 <= s2 <= n2, got s1={self.s1}, s2={self.s2}")
        if not self.Gamma > 0:
            raise ValueError("Gamma must be positive")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _sparse_component(n, R, s, dense_fraction, rng):
    k = _round_half_up(R * s)
    if k == 0 or k > n * R:
        raise ValueError(f"round(R*s) = {k} must lie in [1, {n * R}]")
    flat = np.zeros(n * R)
    positions = rng.choice(n * R, size=k, replace=False)
    flat[positions] = rng.standard_normal(k)
    flat *= math.sqrt(R) / np.linalg.norm(flat)
    M = flat.reshape(n, R)
    if dense_fraction > 0:
        D = rng.standard_normal((n, R))
        M = M + D * (dense_fraction * math.sqrt(R) / np.linalg.norm(D))
    return M


def sample_ground_truth(spec: SignalClassSpec, dense_fraction: float,
                        rng: np.random.Generator) -> Factorization:
    """Draw a random ground truth ``(U, V)`` for ``spec``.

    Each component gets ``round(R*s)`` Gaussian entries at uniformly random
    positions, is rescaled to Frobenius norm ``sqrt(R)`` and then receives a
    dense Gaussian matrix of Frobenius norm ``dense_fraction * sqrt(R)``.
    The dense part means the draw is only approximately in the class; use
    :func:`certify_membership` to measure it.
    """
    if dense_fraction < 0:
        raise ValueError("dense_fraction must be nonnegative")
    U = _sparse_component(spec.n1, spec.R, spec.s1, dense_fraction, rng)
    V = _sparse_component(spec.n2, spec.R, spec.s2, dense_fraction, rng)
    return Factorization(U, V)


def _relative_product_error(X, U, V):
    return np.linalg.norm(X - U @ V.T) / np.linalg.norm(X)


def perturb_initialization(truth: Factorization, target_rel_error: float,
                           rng: np.random.Generator, *, band: float = 0.05,
                           max_steps: int = 100) -> Factorization:
    """Randomly perturb ``truth`` so the product is off by ``target_rel_error``.

    Gaussian directions for ``U`` and ``V`` are drawn once; their common scale
    is bracketed and bisected until the relative product error falls into
    ``[1 - band, 1 + band] * target_rel_error``.
    """
    if not target_rel_error > 0:
        raise ValueError("target_rel_error must be positive")
    X = truth.product()
    if not np.linalg.norm(X) > 0:
        raise ValueError("truth has a zero product")

    U, V = truth.U, truth.V
    EU = rng.standard_normal(U.shape)
    EV = rng.standard_normal(V.shape)
    # unit-scale directions relative to each component's size
    EU *= np.linalg.norm(U) / max(np.linalg.norm(EU), np.finfo(float).tiny)
    EV *= np.linalg.norm(V) / max(np.linalg.norm(EV), np.finfo(float).tiny)

    lo_target = (1 - band) * target_rel_error
    hi_target = (1 + band) * target_rel_error

    def err(t):
        return _relative_product_error(X, U + t * EU, V + t * EV)

    lo, hi = 0.0, target_rel_error
    steps = 0
    while err(hi) < lo_target:
        lo, hi = hi, 2 * hi
        steps += 1
        if steps > max_steps:
            raise InitializationError("could not bracket the target error")

    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        e = err(mid)
        if lo_target <= e <= hi_target:
            return Factorization(U + mid * EU, V + mid * EV)
        if e < lo_target:
            lo = mid
        else:
            hi = mid
    e = err(hi)
    if lo_target <= e <= hi_target:
        return Factorization(U + hi * EU, V + hi * EV)
    raise InitializationError(
        f"bisection did not reach relative error {target_rel_error} (last {e:.4g})")


def certify_membership(F: Factorization, Gamma: float) -> tuple[float, float, bool]:
    """Smallest sparsity levels for which ``F`` lies in ``Gamma * K^R_{s1,s2}``.

    Returns ``(s1_required, s2_required, frobenius_ok)``.
    """
    if not Gamma > 0:
        raise ValueError("Gamma must be positive")
    R = F.rank
    scale = R * math.sqrt(Gamma)
    s1 = (np.abs(F.U).sum() / scale) ** 2
    s2 = (np.abs(F.V).sum() / scale) ** 2
    frob_ok = max(np.sum(F.U ** 2), np.sum(F.V ** 2)) <= Gamma * R
    return float(s1), float(s2), bool(frob_ok)


def effective_sparsity(M: np.ndarray, R: int) -> float:
    """``(|M|_1 / |M|_F)^2 / R``; zero for the zero matrix."""
    M = np.asarray(M, dtype=float)
    fro = np.linalg.norm(M)
    if fro == 0:
        return 0.0
    return float((np.abs(M).sum() / fro) ** 2 / R)


def hard_sparsity(M: np.ndarray, R: int) -> float:
    """Fraction of entries above machine epsilon, per rank and row."""
    M = np.asarray(M, dtype=float)
    nnz = np.count_nonzero(np.abs(M) > np.finfo(float).eps)
    return nnz / (R * M.shape[0])
