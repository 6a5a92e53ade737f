"""Alternating schemes for minimizing the multi-penalty functional.

* :func:`alternating_minimization` solves each convex block problem with
  :func:`prox_gradient_descent`.
* :func:`palm` takes a single prox-gradient step per block.
* :func:`altmin_sense_baseline` is plain alternating least squares, which
  only exploits the rank.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .measure import MeasurementOperator, RestrictedMap, restrict_left, restrict_right
from .model import Factorization, effective_sparsity
from .objective import ElasticNetWeights, RegularizationParams, enet, prox_enet

__all__ = [
    "NumericalError",
    "SolveConfig",
    "SolveResult",
    "prox_gradient_descent",
    "alternating_minimization",
    "palm",
    "altmin_sense_baseline",
    "stationarity_residuals",
    "write_trace_csv",
    "SOLVERS",
]

log = logging.getLogger(__name__)

TIKHONOV_FLOOR = 1e-10


class NumericalError(ArithmeticError):
    """A solver produced a non-finite iterate or objective."""


@dataclass(frozen=True)
class SolveConfig:
    """Iteration caps, tolerances and step rule shared by all solvers.

    ``step_rule`` is ``"lipschitz_inverse"`` or a fixed positive step.
    ``accelerate`` switches the inner prox-gradient loop to the restarted
    momentum variant; the fixed points are the same.
    """

    max_outer_iters: int = 500
    outer_tol: float = 1e-6
    inner_max_iters: int = 5000
    inner_tol: float = 1e-7
    step_rule: str | float = "lipschitz_inverse"
    record_trace: bool = False
    accelerate: bool = True
    step_bounds: tuple[float, float] = (1e-12, 1e12)

    def __post_init__(self):
        if self.max_outer_iters < 1 or self.inner_max_iters < 1:
            raise ValueError("iteration caps must be >= 1")
        if not (self.outer_tol > 0 and self.inner_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.step_rule != "lipschitz_inverse":
            if not (isinstance(self.step_rule, (int, float)) and self.step_rule > 0):
                raise ValueError("step_rule must be 'lipschitz_inverse' or a positive number")
        lo, hi = self.step_bounds
        if not 0 < lo < hi:
            raise ValueError("step_bounds must satisfy 0 < lo < hi")


@dataclass
class SolveResult:
    final: Factorization
    objective_trace: list[float]
    outer_iters: int
    converged: bool
    misfit: float
    degenerate: bool = False
    regularized: bool = False
    # (|U_k - U_{k+1}|_F^2, |V_k - V_{k+1}|_F^2) per outer iteration
    iterate_changes: list[tuple[float, float]] = field(default_factory=list)
    trace_rows: list[dict] = field(default_factory=list)

    def relative_error(self, truth: np.ndarray) -> float:
        return float(np.linalg.norm(truth - self.final.product()) / np.linalg.norm(truth))


def prox_gradient_descent(smooth_grad: Callable[[np.ndarray], np.ndarray],
                          lipschitz: float,
                          prox: Callable[[np.ndarray, float], np.ndarray],
                          x0: np.ndarray,
                          cfg: SolveConfig | None = None,
                          accelerate: bool | None = None) -> np.ndarray:
    """Iterate ``x <- prox(x - step * grad(x), step)``.

    Stops at the first iterate whose change relative to its norm is at most
    ``cfg.inner_tol``, or after ``cfg.inner_max_iters`` steps. With
    ``accelerate`` the gradient is taken at an extrapolated point and the
    momentum is reset whenever it points uphill.

    Raises
    ------
    NumericalError
        If an iterate becomes non-finite.
    """
    cfg = cfg or SolveConfig()
    if accelerate is None:
        accelerate = cfg.accelerate
    if cfg.step_rule == "lipschitz_inverse":
        if not lipschitz > 0:
            raise ValueError("lipschitz must be positive")
        step = 1.0 / lipschitz
    else:
        step = float(cfg.step_rule)

    x = np.array(x0, dtype=float)
    z = x
    t = 1.0
    tol = cfg.inner_tol
    for _ in range(cfg.inner_max_iters):
        x_new = prox(z - step * smooth_grad(z), step)
        d = x_new - x
        dn = math.sqrt(np.vdot(d, d))
        if not math.isfinite(dn):
            raise NumericalError("prox-gradient iterate became non-finite")
        if accelerate:
            if np.vdot(z - x_new, d) > 0:
                t = 1.0
                z = x_new
            else:
                t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
                z = x_new + ((t - 1.0) / t_new) * d
                t = t_new
        else:
            z = x_new
        x = x_new
        if dn <= tol * math.sqrt(np.vdot(x, x)):
            break
    return x


class _Seeded:
    """Carries the previous power-iteration vector of one block across outer
    iterations; the partner factor moves little, so a few steps suffice."""

    def __init__(self):
        self.vec = None

    def norm(self, L: RestrictedMap, raw: bool = False) -> float:
        nu = L.raw_norm(self.vec) if raw else L.op_norm(self.vec)
        self.vec = L.top_vector
        return nu


def _block_solve(L: RestrictedMap, y: np.ndarray, x0: np.ndarray,
                 w: ElasticNetWeights, cfg: SolveConfig,
                 seed: _Seeded | None = None) -> np.ndarray | None:
    """Minimize ``|y - L x|^2 + enet(x)``; ``None`` when ``L`` is zero."""
    if L.is_zero():
        return None
    B = L.matrix
    m, p = B.shape
    if p <= m:
        G = B.T @ B
        c = B.T @ y

        def grad(x):
            return 2.0 * (G @ x - c)
    else:
        def grad(x):
            return 2.0 * (B.T @ (B @ x - y))

    lip = 2.0 * (seed.norm(L) if seed else L.op_norm()) ** 2
    x = prox_gradient_descent(grad, lip, lambda z, step: prox_enet(z, w, step),
                              x0.ravel(), cfg)
    return x.reshape(L.in_shape)


def _check_inputs(y, op, init):
    y = np.asarray(y, dtype=float)
    if y.shape != (op.m,):
        raise ValueError(f"y must have length {op.m}, got shape {y.shape}")
    if init.shape != op.shape:
        raise ValueError(f"init of shape {init.shape} does not match operator {op.shape}")
    return y


def _trace_row(k, J, r, V):
    return {"iteration": k, "J": J, "misfit": r,
            "effective_sparsity": effective_sparsity(V, V.shape[1])}


def _alternate(y, op, init, cfg, update_u, update_v, penalty):
    """Shared outer loop: ``update_u(L_V, U)`` then ``update_v(L_U, V)``.

    An update returns ``None`` when its restricted map is zero; the block is
    then set to zero and the run is marked degenerate.
    """
    U, V = init.U.copy(), init.V.copy()
    r = float(np.linalg.norm(y - restrict_left(op, U)(V)))
    J = r * r + penalty(U, V)
    trace, changes, rows = [J], [], []
    if cfg.record_trace:
        rows.append(_trace_row(0, J, r, V))
    degenerate = converged = False
    k = 0
    for k in range(1, cfg.max_outer_iters + 1):
        U_new = update_u(restrict_right(op, V), U)
        if U_new is None:
            U_new, degenerate = np.zeros_like(U), True
        LU = restrict_left(op, U_new)
        V_new = update_v(LU, V)
        if V_new is None:
            V_new, degenerate = np.zeros_like(V), True

        r = float(np.linalg.norm(y - LU.matrix @ V_new.ravel()))
        J_new = r * r + penalty(U_new, V_new)
        if not math.isfinite(J_new):
            raise NumericalError(f"objective became non-finite at outer iteration {k}")
        changes.append((float(np.sum((U - U_new) ** 2)), float(np.sum((V - V_new) ** 2))))
        trace.append(J_new)
        if cfg.record_trace:
            rows.append(_trace_row(k, J_new, r, V_new))
        J_prev, J = J, J_new
        U, V = U_new, V_new
        if degenerate or J_prev - J <= cfg.outer_tol * J_prev:
            converged = True
            break
    return SolveResult(Factorization(U, V), trace, k, converged, r, degenerate,
                       iterate_changes=changes, trace_rows=rows)


def _penalty(p):
    return lambda U, V: enet(U, p.u_weights) + enet(V, p.v_weights)


def alternating_minimization(y: np.ndarray, op: MeasurementOperator,
                             p: RegularizationParams, init: Factorization,
                             cfg: SolveConfig | None = None) -> SolveResult:
    """Exact alternating block minimization of ``J``.

    Each block problem is convex and solved by prox-gradient descent warm
    started at the current block. Stops when the relative decrease of ``J``
    over one outer iteration drops below ``cfg.outer_tol``.
    """
    cfg = cfg or SolveConfig()
    y = _check_inputs(y, op, init)
    su, sv = _Seeded(), _Seeded()
    return _alternate(
        y, op, init, cfg,
        lambda L, U: _block_solve(L, y, U, p.u_weights, cfg, su),
        lambda L, V: _block_solve(L, y, V, p.v_weights, cfg, sv),
        _penalty(p))


def _palm_step(L: RestrictedMap, y, X, w, cfg, seed):
    nu = seed.norm(L, raw=True)
    if nu == 0:
        return None
    lam = 1.0 / (2.0 * nu * nu * RestrictedMap.SAFETY)
    lo, hi = cfg.step_bounds
    if not lo < lam < hi:
        clamped = min(max(lam, lo), hi)
        log.warning("PALM step %.3g outside (%.3g, %.3g); clamped to %.3g", lam, lo, hi, clamped)
        lam = clamped
    g = 2.0 * L.adjoint(L(X) - y)
    return prox_enet(X - lam * g, w, lam)


def palm(y: np.ndarray, op: MeasurementOperator, p: RegularizationParams,
         init: Factorization, cfg: SolveConfig | None = None) -> SolveResult:
    """Proximal alternating linearized minimization.

    One prox-gradient step per block with step ``1 / (2 * 1.01 * |A_V|^2)``
    (resp. ``|A_U|``), clamped to ``cfg.step_bounds``.
    """
    cfg = cfg or SolveConfig()
    y = _check_inputs(y, op, init)
    su, sv = _Seeded(), _Seeded()
    return _alternate(
        y, op, init, cfg,
        lambda L, U: _palm_step(L, y, U, p.u_weights, cfg, su),
        lambda L, V: _palm_step(L, y, V, p.v_weights, cfg, sv),
        _penalty(p))


def _least_squares(L: RestrictedMap, y):
    if L.is_zero():
        return None
    B = L.matrix
    G = B.T @ B
    G[np.diag_indices_from(G)] += TIKHONOV_FLOOR
    try:
        x = np.linalg.solve(G, B.T @ y)
    except np.linalg.LinAlgError:
        x = np.linalg.lstsq(B, y, rcond=None)[0]
    return x.reshape(L.in_shape)


def altmin_sense_baseline(y: np.ndarray, op: MeasurementOperator, R: int,
                          init: Factorization, cfg: SolveConfig | None = None) -> SolveResult:
    """Alternating unregularized least squares on the restricted maps.

    Normal equations carry a ``1e-10`` Tikhonov floor; the result is flagged
    ``regularized`` when a block system is underdetermined and the floor is
    what makes it solvable.
    """
    cfg = cfg or SolveConfig()
    y = _check_inputs(y, op, init)
    if init.rank != R:
        raise ValueError(f"init has rank {init.rank}, expected {R}")
    n1, n2 = op.shape
    res = _alternate(y, op, init, cfg,
                     lambda L, U: _least_squares(L, y),
                     lambda L, V: _least_squares(L, y),
                     lambda U, V: 0.0)
    res.regularized = op.m < max(n1, n2) * R
    return res


def stationarity_residuals(y: np.ndarray, op: MeasurementOperator, F: Factorization,
                           p: RegularizationParams) -> tuple[float, float]:
    """Prox-gradient fixed-point residuals ``|U - prox(U - lam grad_U)|_F`` and
    the V counterpart, with ``lam`` the inverse block Lipschitz constant."""
    out = []
    for L, X, w in ((restrict_right(op, F.V), F.U, p.u_weights),
                    (restrict_left(op, F.U), F.V, p.v_weights)):
        if L.is_zero():
            out.append(float(np.linalg.norm(X)))
            continue
        lam = 1.0 / (2.0 * L.op_norm() ** 2)
        g = 2.0 * L.adjoint(L(X) - y)
        out.append(float(np.linalg.norm(X - prox_enet(X - lam * g, w, lam))))
    return out[0], out[1]


def write_trace_csv(result: SolveResult, path) -> None:
    """Per-iteration rows ``iteration,J,misfit,effective_sparsity``."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["iteration", "J", "misfit", "effective_sparsity"],
                                lineterminator="\n")
        writer.writeheader()
        for row in result.trace_rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


SOLVERS = {"am": alternating_minimization, "palm": palm}
