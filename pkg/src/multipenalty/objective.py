"""Multi-penalty functional, elastic-net prox and fidelity gradients.

    J(U, V) = |y - A(U V^T)|_2^2 + a1 |U|_F^2 + a2 |U|_1 + b1 |V|_F^2 + b2 |V|_1
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .measure import MeasurementOperator, forward, restrict_left, restrict_right
from .model import Factorization

__all__ = [
    "RegularizationParams",
    "ElasticNetWeights",
    "enet",
    "prox_enet",
    "eval_J",
    "misfit",
    "grad_fidelity_U",
    "grad_fidelity_V",
]


@dataclass(frozen=True)
class ElasticNetWeights:
    """``theta1 * |Z|_F^2 + theta2 * |Z|_1``."""

    theta1: float
    theta2: float

    def __post_init__(self):
        if self.theta1 < 0 or self.theta2 < 0:
            raise ValueError("elastic-net weights must be nonnegative")


@dataclass(frozen=True)
class RegularizationParams:
    alpha1: float
    alpha2: float
    beta1: float
    beta2: float
    ratio_mode: str = "free"
    Gamma: float | None = None
    s: float | None = None

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.beta1, self.beta2) < 0:
            raise ValueError("regularization weights must be nonnegative")
        if self.ratio_mode == "theorem_locked":
            if self.Gamma is None or self.s is None:
                raise ValueError("theorem_locked mode needs Gamma and s")
            r = math.sqrt(self.s / self.Gamma)
            vals = (self.alpha1, r * self.alpha2, self.beta1, r * self.beta2)
            if max(vals) - min(vals) > 1e-12 * max(1.0, max(vals)):
                raise ValueError("weights violate a1 = sqrt(s/G) a2 = b1 = sqrt(s/G) b2")
        elif self.ratio_mode != "free":
            raise ValueError(f"unknown ratio_mode {self.ratio_mode!r}")

    @classmethod
    def equal(cls, mu: float) -> "RegularizationParams":
        return cls(mu, mu, mu, mu)

    @property
    def u_weights(self) -> ElasticNetWeights:
        return ElasticNetWeights(self.alpha1, self.alpha2)

    @property
    def v_weights(self) -> ElasticNetWeights:
        return ElasticNetWeights(self.beta1, self.beta2)


def enet(Z: np.ndarray, w: ElasticNetWeights) -> float:
    return float(w.theta1 * np.sum(Z * Z) + w.theta2 * np.abs(Z).sum())


def prox_enet(Z: np.ndarray, w: ElasticNetWeights, mu: float) -> np.ndarray:
    """Prox of ``mu * enet``: soft threshold at ``mu*theta2``, then shrink by
    ``1 + 2*mu*theta1``."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    Z = np.asarray(Z, dtype=float)
    shrunk = np.maximum(np.abs(Z) - mu * w.theta2, 0.0)
    return np.copysign(shrunk, Z) / (1.0 + 2.0 * mu * w.theta1)


def _check_y(y, op):
    y = np.asarray(y, dtype=float)
    if y.shape != (op.m,):
        raise ValueError(f"y must have length {op.m}, got shape {y.shape}")
    return y


def _check_factors(op, F):
    if F.shape != op.shape:
        raise ValueError(f"factorization of shape {F.shape} does not match operator {op.shape}")


def misfit(y: np.ndarray, op: MeasurementOperator, F: Factorization) -> float:
    """``|y - A(U V^T)|_2``."""
    y = _check_y(y, op)
    _check_factors(op, F)
    return float(np.linalg.norm(y - forward(op, F.product())))


def eval_J(y: np.ndarray, op: MeasurementOperator, F: Factorization,
           p: RegularizationParams) -> float:
    r = misfit(y, op, F)
    return r * r + enet(F.U, p.u_weights) + enet(F.V, p.v_weights)


def grad_fidelity_U(y: np.ndarray, op: MeasurementOperator, F: Factorization) -> np.ndarray:
    """Gradient of ``U -> |y - A(U V^T)|^2`` at fixed ``V``."""
    y = _check_y(y, op)
    _check_factors(op, F)
    L = restrict_right(op, F.V)
    return 2.0 * L.adjoint(L(F.U) - y)


def grad_fidelity_V(y: np.ndarray, op: MeasurementOperator, F: Factorization) -> np.ndarray:
    """Gradient of ``V -> |y - A(U V^T)|^2`` at fixed ``U``."""
    y = _check_y(y, op)
    _check_factors(op, F)
    L = restrict_left(op, F.U)
    return 2.0 * L.adjoint(L(F.V) - y)
