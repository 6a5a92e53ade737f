"""Linear measurement operators ``A(Z)_i = <A_i, Z>_F / sqrt(m)``.

Operators are stored densely as an ``(m, n1, n2)`` array. Restricted maps
``U -> A(U V^T)`` and ``V -> A(U V^T)`` materialize the ``m x (n*R)`` matrix
used by the block solvers.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "MeasurementOperator",
    "NoisySample",
    "RestrictedMap",
    "make_gaussian",
    "make_lognormal",
    "make_rank1_gaussian",
    "make_identity_like",
    "make_operator",
    "forward",
    "adjoint",
    "restrict_right",
    "restrict_left",
    "add_noise",
    "power_norm",
    "save_operator",
    "load_operator",
]

ENSEMBLES = ("gaussian", "lognormal", "rank1", "identity")


@dataclass(frozen=True, eq=False)
class MeasurementOperator:
    matrices: np.ndarray
    ensemble: str = "custom"
    seed: int | None = None

    def __post_init__(self):
        A = np.ascontiguousarray(self.matrices, dtype=float)
        if A.ndim != 3 or A.shape[0] < 1:
            raise ValueError("matrices must have shape (m, n1, n2) with m >= 1")
        A.setflags(write=False)
        object.__setattr__(self, "matrices", A)

    @property
    def m(self) -> int:
        return self.matrices.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrices.shape[1], self.matrices.shape[2]

    @cached_property
    def flat(self) -> np.ndarray:
        """``(m, n1*n2)`` matrix with the ``1/sqrt(m)`` scaling folded in."""
        out = self.matrices.reshape(self.m, -1) / math.sqrt(self.m)
        out.setflags(write=False)
        return out

    @cached_property
    def _flat_t(self) -> np.ndarray:
        # (m, n2, n1) layout for the left restriction
        out = np.ascontiguousarray(self.matrices.transpose(0, 2, 1)) / math.sqrt(self.m)
        out.setflags(write=False)
        return out

    def __call__(self, Z):
        return forward(self, Z)


@dataclass(frozen=True)
class NoisySample:
    y: np.ndarray
    eta_norm: float
    clean: np.ndarray


def make_gaussian(n1: int, n2: int, m: int, rng: np.random.Generator,
                  seed: int | None = None) -> MeasurementOperator:
    """I.i.d. standard normal ``A_i``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return MeasurementOperator(rng.standard_normal((m, n1, n2)), "gaussian", seed)


_LOGNORMAL_MEAN = math.exp(0.5)
_LOGNORMAL_STD = math.sqrt(math.e ** 2 - math.e)


def make_lognormal(n1: int, n2: int, m: int, rng: np.random.Generator,
                   seed: int | None = None) -> MeasurementOperator:
    """I.i.d. log-normal entries standardized to mean 0 and variance 1."""
    if m < 1:
        raise ValueError("m must be >= 1")
    raw = np.exp(rng.standard_normal((m, n1, n2)))
    raw -= _LOGNORMAL_MEAN
    raw /= _LOGNORMAL_STD
    return MeasurementOperator(raw, "lognormal", seed)


def make_rank1_gaussian(n1: int, n2: int, m: int, rng: np.random.Generator,
                        seed: int | None = None) -> MeasurementOperator:
    """``A_i = a_i a_i^T`` with standard normal ``a_i``; square only."""
    if n1 != n2:
        raise ValueError(f"rank-1 Gaussian measurements need n1 == n2, got {n1}x{n2}")
    if m < 1:
        raise ValueError("m must be >= 1")
    a = rng.standard_normal((m, n1))
    return MeasurementOperator(a[:, :, None] * a[:, None, :], "rank1", seed)


def make_identity_like(n1: int, n2: int) -> MeasurementOperator:
    """``m = n1*n2`` canonical basis matrices scaled by ``sqrt(m)``.

    The forward map is then the plain vectorization, an exact isometry.
    """
    m = n1 * n2
    A = np.zeros((m, n1, n2))
    A.reshape(m, m)[np.arange(m), np.arange(m)] = math.sqrt(m)
    return MeasurementOperator(A, "identity")


def make_operator(ensemble: str, n1: int, n2: int, m: int,
                  rng: np.random.Generator, seed: int | None = None) -> MeasurementOperator:
    if ensemble == "gaussian":
        return make_gaussian(n1, n2, m, rng, seed)
    if ensemble == "lognormal":
        return make_lognormal(n1, n2, m, rng, seed)
    if ensemble == "rank1":
        return make_rank1_gaussian(n1, n2, m, rng, seed)
    if ensemble == "identity":
        if m != n1 * n2:
            raise ValueError("identity ensemble needs m == n1*n2")
        return make_identity_like(n1, n2)
    raise ValueError(f"unknown ensemble {ensemble!r}")


def forward(op: MeasurementOperator, Z: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.shape != op.shape:
        raise ValueError(f"expected a {op.shape} matrix, got {Z.shape}")
    return op.flat @ Z.ravel()


def adjoint(op: MeasurementOperator, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (op.m,):
        raise ValueError(f"expected a vector of length {op.m}, got shape {w.shape}")
    return (w @ op.flat).reshape(op.shape)


def power_norm(B: np.ndarray, max_iter: int = 50, rtol: float = 1e-6,
               start: np.ndarray | None = None) -> tuple[float, np.ndarray | None]:
    """Power-iteration estimate of the spectral norm of ``B`` (no inflation).

    Returns the estimate and the final right vector, which can seed the next
    call on a nearby matrix.
    """
    if B.size == 0 or not np.any(B):
        return 0.0, None
    if start is None or start.shape != (B.shape[1],) or not np.any(start):
        # deterministic start; a constant vector can be orthogonal to the top mode
        start = np.random.default_rng(12345).standard_normal(B.shape[1])
    x = start / np.linalg.norm(start)
    sigma = 0.0
    for _ in range(max_iter):
        z = B.T @ (B @ x)
        nz = np.linalg.norm(z)
        if nz == 0:
            return 0.0, None
        new = math.sqrt(nz)
        x = z / nz
        if abs(new - sigma) <= rtol * new:
            sigma = new
            break
        sigma = new
    return sigma, x


@dataclass(eq=False)
class RestrictedMap:
    """Linear map ``X -> matrix @ vec(X)`` for a fixed partner factor.

    ``vec`` is row-major, matching ``X.ravel()``.
    """

    matrix: np.ndarray
    in_shape: tuple[int, int]
    _norm: float | None = field(default=None, repr=False)
    top_vector: np.ndarray | None = field(default=None, repr=False)

    SAFETY = 1.01

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape != self.in_shape:
            raise ValueError(f"expected shape {self.in_shape}, got {X.shape}")
        return self.matrix @ X.ravel()

    def adjoint(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.matrix.shape[0],):
            raise ValueError(f"expected a vector of length {self.matrix.shape[0]}")
        return (self.matrix.T @ w).reshape(self.in_shape)

    def raw_norm(self, start: np.ndarray | None = None) -> float:
        """Power-iteration norm; ``start`` seeds the first evaluation only."""
        if self._norm is None:
            self._norm, self.top_vector = power_norm(self.matrix, start=start)
        return self._norm

    def op_norm(self, start: np.ndarray | None = None) -> float:
        """Operator-norm estimate inflated by the safety factor."""
        return self.SAFETY * self.raw_norm(start)

    def is_zero(self) -> bool:
        return not np.any(self.matrix)


def restrict_right(op: MeasurementOperator, V: np.ndarray) -> RestrictedMap:
    """Map ``U -> forward(op, U @ V.T)``."""
    V = np.asarray(V, dtype=float)
    n1, n2 = op.shape
    if V.ndim != 2 or V.shape[0] != n2:
        raise ValueError(f"V must have {n2} rows, got shape {V.shape}")
    R = V.shape[1]
    # row i is vec(A_i V) / sqrt(m)
    M = (op.flat.reshape(op.m * n1, n2) @ V).reshape(op.m, n1 * R)
    return RestrictedMap(M, (n1, R))


def restrict_left(op: MeasurementOperator, U: np.ndarray) -> RestrictedMap:
    """Map ``V -> forward(op, U @ V.T)``."""
    U = np.asarray(U, dtype=float)
    n1, n2 = op.shape
    if U.ndim != 2 or U.shape[0] != n1:
        raise ValueError(f"U must have {n1} rows, got shape {U.shape}")
    R = U.shape[1]
    # row i is vec(A_i^T U) / sqrt(m)
    M = (op._flat_t.reshape(op.m * n2, n1) @ U).reshape(op.m, n2 * R)
    return RestrictedMap(M, (n2, R))


def add_noise(clean: np.ndarray, rel_level: float, reference_norm: float,
              rng: np.random.Generator) -> NoisySample:
    """Add Gaussian noise rescaled to ``|eta|_2 = rel_level * reference_norm``."""
    if rel_level < 0:
        raise ValueError("rel_level must be nonnegative")
    clean = np.asarray(clean, dtype=float)
    target = rel_level * reference_norm
    eta = rng.standard_normal(clean.shape)
    if target == 0:
        return NoisySample(clean.copy(), 0.0, clean.copy())
    eta *= target / np.linalg.norm(eta)
    return NoisySample(clean + eta, float(target), clean.copy())


_MAGIC = b"MPOP"
_HEADER = struct.Struct("<4sIQQQq16s")


def save_operator(op: MeasurementOperator, path) -> None:
    """Write ``op`` as a fixed header followed by row-major little-endian doubles."""
    n1, n2 = op.shape
    seed = -1 if op.seed is None else int(op.seed)
    tag = op.ensemble.encode("ascii")[:16].ljust(16, b"\0")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, n1, n2, op.m, seed, tag))
        fh.write(np.ascontiguousarray(op.matrices, dtype="<f8").tobytes())


def load_operator(path) -> MeasurementOperator:
    data = Path(path).read_bytes()
    magic, version, n1, n2, m, seed, tag = _HEADER.unpack_from(data)
    if magic != _MAGIC or version != 1:
        raise ValueError(f"{path} is not a measurement operator dump")
    payload = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if payload.size != m * n1 * n2:
        raise ValueError(f"{path}: payload holds {payload.size} values, expected {m * n1 * n2}")
    return MeasurementOperator(payload.reshape(m, n1, n2).astype(float),
                               tag.rstrip(b"\0").decode("ascii"),
                               None if seed < 0 else seed)
