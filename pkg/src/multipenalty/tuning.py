"""Parameter selection by shrinking a common regularization weight.

Start from a weight large enough that the solver returns the zero matrix,
then halve it, warm starting every solve from the previous solution, until
the selection metric has increased twice in a row.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .measure import MeasurementOperator, restrict_right
from .model import Factorization, certify_membership, effective_sparsity
from .objective import RegularizationParams
from .solvers import SOLVERS, SolveConfig, SolveResult

__all__ = [
    "lock_ratio",
    "make_params",
    "OracleError",
    "Discrepancy",
    "SweepPoint",
    "TuneResult",
    "default_mu0",
    "sweep",
    "active_components",
    "revive",
    "tune_shrink",
    "tune_shrink_multi",
    "misfit_safe_params",
    "solve_by_continuation",
    "write_sweep_csv",
    "MU_FLOOR",
]

MU_FLOOR = 1e-12
MAX_DOUBLINGS = 60


def lock_ratio(mu: float, Gamma: float, s: float) -> RegularizationParams:
    """``alpha2 = beta2 = mu`` and ``alpha1 = beta1 = sqrt(s/Gamma) * mu``."""
    if not (mu > 0 and Gamma > 0 and s > 0):
        raise ValueError("mu, Gamma and s must be positive")
    r = math.sqrt(s / Gamma)
    return RegularizationParams(r * mu, mu, r * mu, mu, "theorem_locked", Gamma, s)


def make_params(mu: float, mode: str = "equal", Gamma: float = 1.0,
                s: float = 1.0) -> RegularizationParams:
    """Parameters for one sweep point; ``mode`` is ``equal`` or ``locked``."""
    if mode == "equal":
        return RegularizationParams.equal(mu)
    if mode == "locked":
        return lock_ratio(mu, Gamma, s)
    raise ValueError(f"unknown parameter mode {mode!r}")


@dataclass(frozen=True)
class OracleError:
    """Relative distance to the ground truth."""

    truth: np.ndarray
    name: str = "oracle"

    def __call__(self, X: np.ndarray, misfit: float) -> float:
        return float(np.linalg.norm(self.truth - X) / np.linalg.norm(self.truth))


@dataclass(frozen=True)
class Discrepancy:
    """Gap between the residual norm and the known noise norm."""

    eta_norm: float
    name: str = "discrepancy"

    def __call__(self, X: np.ndarray, misfit: float) -> float:
        return abs(misfit - self.eta_norm)


class SweepPoint(NamedTuple):
    mu: float
    metric: float
    misfit: float
    effective_sparsity: float


@dataclass
class TuneResult:
    best_mu: float
    best_result: SolveResult
    sweep: list[SweepPoint]

    def __iter__(self):
        return iter((self.best_mu, self.best_result, self.sweep))


def default_mu0(y: np.ndarray, op: MeasurementOperator, init: Factorization) -> float:
    """Smallest l1 weight that zeroes the first U-block solve from ``init``.

    With ``alpha2 >= |2 A_V^*(y)|_inf`` the U-update returns zero and the run
    ends at the zero factorization.
    """
    L = restrict_right(op, init.V)
    return float(np.max(np.abs(2.0 * L.adjoint(y)))) * 1.01 or 1.0


def _alive(F: Factorization) -> np.ndarray:
    return np.any(F.U != 0, axis=0) & np.any(F.V != 0, axis=0)


def active_components(F: Factorization) -> int:
    """Number of rank-one terms ``u_k v_k^T`` with both columns nonzero."""
    return int(np.sum(_alive(F)))


def revive(F: Factorization, init: Factorization) -> Factorization:
    """Replace every dead component of ``F`` by the matching one of ``init``."""
    dead = ~_alive(F) & _alive(init)
    if not dead.any():
        return F
    U, V = F.U.copy(), F.V.copy()
    U[:, dead] = init.U[:, dead]
    V[:, dead] = init.V[:, dead]
    return Factorization(U, V)


def sweep(y: np.ndarray, op: MeasurementOperator, init: Factorization,
          mus: Iterable[float], solver: str = "am", cfg: SolveConfig | None = None,
          mode: str = "equal", Gamma: float = 1.0, s: float = 1.0,
          ) -> Iterator[tuple[float, SolveResult, Factorization]]:
    """Solve along ``mus`` with warm starts.

    Each solve starts from the previous solution. A zero column of ``U`` or
    ``V`` is never revived by the alternating updates, so components that
    died at a larger ``mu`` are first reset to their values in ``init``;
    for rank one this is a plain restart from ``init``. Yields
    ``(mu, result, start)``.
    """
    solve = SOLVERS[solver]
    start = init
    for mu in mus:
        res = solve(y, op, make_params(mu, mode, Gamma, s), start, cfg)
        yield mu, res, start
        start = revive(res.final, init)


def misfit_safe_params(truth: Factorization, eta_norm: float) -> RegularizationParams:
    """Largest locked-ratio weights whose penalty at the truth stays below
    ``|eta|^2``, which keeps a global minimizer's misfit under ``2 |eta|``.

    With ``X = U S W^T`` the thin SVD of the truth, each weight is capped at
    ``|eta|^2 / 2`` divided by its penalty term at ``(U S, W)``. ``Gamma`` and
    ``s`` are the smallest values certifying the truth's own factors.
    """
    if not eta_norm > 0:
        raise ValueError("eta_norm must be positive")
    R = truth.rank
    Uo, S, Wt = np.linalg.svd(truth.product(), full_matrices=False)
    US, W = Uo[:, :R] * S[:R], Wt[:R].T
    Gamma = max(np.sum(truth.U ** 2), np.sum(truth.V ** 2)) / R
    s = max(certify_membership(truth, Gamma)[:2])
    r = math.sqrt(s / Gamma)
    half = 0.5 * eta_norm ** 2
    mu = min(half / np.sum(US ** 2) / r, half / np.abs(US).sum(),
             half / np.sum(W ** 2) / r, half / np.abs(W).sum())
    return lock_ratio(float(mu), float(Gamma), float(s))


def solve_by_continuation(y: np.ndarray, op: MeasurementOperator, init: Factorization,
                          p: RegularizationParams, solver: str = "am",
                          cfg: SolveConfig | None = None, doublings: int = 20) -> SolveResult:
    """Solve at ``p`` after a warm-started path from ``2**doublings * p``.

    Small weights make a cold start from ``init`` crawl; walking down the
    halving path reaches the same kind of stationary point in a fraction of
    the iterations. Only the last solve is returned.
    """
    solve = SOLVERS[solver]
    start, res = init, None
    for k in range(doublings, -1, -1):
        f = 2.0 ** k
        q = replace(p, alpha1=p.alpha1 * f, alpha2=p.alpha2 * f,
                    beta1=p.beta1 * f, beta2=p.beta2 * f)
        res = solve(y, op, q, start, cfg)
        start = revive(res.final, init)
    return res


def _zero_mu0(y, op, init, mu0, solver, cfg, mode, Gamma, s):
    solve = SOLVERS[solver]
    for _ in range(MAX_DOUBLINGS + 1):
        res = solve(y, op, make_params(mu0, mode, Gamma, s), init, cfg)
        if res.final.is_zero():
            return mu0, res
        mu0 *= 2.0
    raise RuntimeError(f"no zero solution after {MAX_DOUBLINGS} doublings of mu0")


def _halvings(mu0):
    mu = mu0
    while mu >= MU_FLOOR:
        yield mu
        mu *= 0.5


def tune_shrink_multi(y: np.ndarray, op: MeasurementOperator, init: Factorization,
                      metrics: Sequence[Callable[[np.ndarray, float], float]],
                      mu0: float | None = None, solver: str = "am",
                      cfg: SolveConfig | None = None, mode: str = "equal",
                      Gamma: float = 1.0, s: float = 1.0) -> list[TuneResult]:
    """Run one warm-started halving sweep scored by several metrics at once.

    The solves along the sweep do not depend on the metric, so every metric
    sees the same path; the sweep continues until each metric's stop rule
    (two consecutive increases) has fired. Results are returned in the order
    of ``metrics``.
    """
    if mu0 is None:
        mu0 = default_mu0(y, op, init)
    mu0, first = _zero_mu0(y, op, init, mu0, solver, cfg, mode, Gamma, s)

    k = len(metrics)
    best: list[tuple[float, float, SolveResult] | None] = [None] * k
    prev = [math.inf] * k
    ups = [0] * k
    done = [False] * k
    paths: list[list[SweepPoint]] = [[] for _ in range(k)]

    def score(mu, res):
        X = res.final.product()
        es = effective_sparsity(res.final.V, res.final.rank)
        for i, metric in enumerate(metrics):
            if done[i]:
                continue
            val = metric(X, res.misfit)
            paths[i].append(SweepPoint(mu, val, res.misfit, es))
            if best[i] is None or val < best[i][1]:
                best[i] = (mu, val, res)
            ups[i] = ups[i] + 1 if val > prev[i] else 0
            prev[i] = val
            if ups[i] >= 2:
                done[i] = True

    score(mu0, first)
    rest = _halvings(mu0 * 0.5)
    for mu, res, _ in sweep(y, op, init, rest, solver, cfg, mode, Gamma, s):
        score(mu, res)
        if all(done):
            break
    return [TuneResult(b[0], b[2], path) for b, path in zip(best, paths)]


def tune_shrink(y: np.ndarray, op: MeasurementOperator, init: Factorization,
                metric: Callable[[np.ndarray, float], float],
                mu0: float | None = None, solver: str = "am",
                cfg: SolveConfig | None = None, mode: str = "equal",
                Gamma: float = 1.0, s: float = 1.0) -> TuneResult:
    """Halve ``mu`` from a zero-solution start until ``metric`` stops improving.

    ``mu0`` is doubled (at most 60 times) until the first solve returns the
    zero matrix. Returns ``(best_mu, best_result, sweep)``.
    """
    return tune_shrink_multi(y, op, init, [metric], mu0, solver, cfg, mode, Gamma, s)[0]


def write_sweep_csv(points: Iterable[SweepPoint], path) -> None:
    """One row per sweep point: ``mu,metric,misfit,effective_sparsity``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SweepPoint._fields)
        for p in points:
            w.writerow([repr(float(v)) for v in p])
