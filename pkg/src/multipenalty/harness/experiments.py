"""Experiment drivers.

Each driver expands its config into independent ``(grid point, trial)``
tasks, runs them (optionally in a process pool) and assembles tables whose
row order depends only on the config. Trial ``t`` draws all of its
randomness from ``default_rng([seed ^ t, point_index])``.
"""
from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields, replace
from itertools import repeat
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from ..diagnostics import fit_lower_envelope, injectivity_scan
from ..measure import add_noise, forward, make_identity_like, make_operator
from ..model import (Factorization, SignalClassSpec, effective_sparsity, hard_sparsity,
                     perturb_initialization, sample_ground_truth)
from ..solvers import SolveConfig, SolveResult, altmin_sense_baseline
from ..tuning import Discrepancy, OracleError, sweep, tune_shrink_multi
from .config import ExperimentConfig

__all__ = [
    "TrialRecord",
    "Table",
    "Problem",
    "trial_seed",
    "make_problem",
    "run_param_sweep",
    "run_ensemble_compare",
    "run_phase_transition",
    "run_injectivity",
    "run_experiment",
    "write_tables",
]


@dataclass(frozen=True)
class TrialRecord:
    seed: int
    config_digest: str
    relative_error: float
    misfit: float
    eta_norm: float
    effective_sparsity: float
    hard_sparsity: float
    outer_iters: int
    wall_ms: float
    success: bool | None


RECORD_FIELDS = [f.name for f in fields(TrialRecord)]
# wall time breaks byte-identical reruns, so it goes to the timing table
MAIN_FIELDS = [f for f in RECORD_FIELDS if f != "wall_ms"]


class Table(NamedTuple):
    header: list[str]
    rows: list[list]

    def column(self, name: str) -> list:
        i = self.header.index(name)
        return [r[i] for r in self.rows]


class Problem(NamedTuple):
    truth: Factorization
    X: np.ndarray
    op: object
    y: np.ndarray
    eta_norm: float
    init: Factorization


def trial_seed(seed: int, trial: int) -> int:
    return seed ^ trial


def _rng(cfg: ExperimentConfig, point: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([trial_seed(cfg.seed, trial), point])


def make_problem(rng: np.random.Generator, n1: int, n2: int, R: int, s1: float, s2: float,
                 m: int, ensemble: str, noise_rel: float, init_error: float = 0.6,
                 dense_fraction: float = 0.1) -> Problem:
    """Ground truth, operator, noisy data and perturbed initialization."""
    F = sample_ground_truth(SignalClassSpec(n1, n2, R, s1, s2), dense_fraction, rng)
    X = F.product()
    op = make_operator(ensemble, n1, n2, m, rng)
    sample = add_noise(forward(op, X), noise_rel, float(np.linalg.norm(X)), rng)
    init = perturb_initialization(F, init_error, rng)
    return Problem(F, X, op, sample.y, sample.eta_norm, init)


def _cfg_problem(cfg, rng, m, s2=None, ensemble=None, n=None, s=None):
    n1 = n2 = n
    if n is None:
        n1, n2 = cfg.n1, cfg.n2
    s1 = cfg.s1 if s is None else s
    s2 = (cfg.s2 if s2 is None else s2) if s is None else s
    return make_problem(rng, n1, n2, cfg.R, s1, s2, m, ensemble or cfg.ensembles[0],
                        cfg.noise_rel, cfg.init_error, cfg.dense_fraction)


def _record(cfg, trial, res: SolveResult, pb: Problem, wall_ms: float) -> TrialRecord:
    err = res.relative_error(pb.X)
    V, R = res.final.V, res.final.rank
    success = None if cfg.threshold is None else bool(err <= cfg.threshold)
    return TrialRecord(trial_seed(cfg.seed, trial), cfg.digest(), err, res.misfit, pb.eta_norm,
                       effective_sparsity(V, R), hard_sparsity(V, R), res.outer_iters,
                       wall_ms, success)


def _timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, (time.perf_counter() - t0) * 1e3


def _solve_cfg(cfg):
    return SolveConfig(max_outer_iters=cfg.max_outer_iters)


def _metric(cfg, pb):
    return OracleError(pb.X) if cfg.tuning == "oracle" else Discrepancy(pb.eta_norm)


# Task functions return (point columns, trial, record) triples. They live at
# module level so the process pool can pickle them.

def _param_sweep_task(cfg: ExperimentConfig, point: int, trial: int):
    m = cfg.m_grid[point]
    pb = _cfg_problem(cfg, _rng(cfg, point, trial), m)
    mus = [cfg.mu0 * 0.5 ** k for k in range(cfg.halvings + 1)]
    s_lock = max(cfg.s1, cfg.s2)
    out = []
    for mode in cfg.modes:
        path = sweep(pb.y, pb.op, pb.init, mus, cfg.solver, _solve_cfg(cfg), mode, 1.0, s_lock)
        t0 = time.perf_counter()
        for mu, res, _ in path:
            t1 = time.perf_counter()
            out.append(([m, mode, mu], trial, _record(cfg, trial, res, pb, (t1 - t0) * 1e3)))
            t0 = t1
    return out


def _ensemble_points(cfg):
    pts = []
    for e in cfg.ensembles:
        grid = cfg.rank1_m_grid if e == "rank1" else cfg.m_grid
        pts.extend((e, m) for m in grid)
    return pts


def _ensemble_task(cfg: ExperimentConfig, point: int, trial: int):
    ensemble, m = _ensemble_points(cfg)[point]
    rng = _rng(cfg, point, trial)
    if ensemble == "rank1":
        pb = _cfg_problem(cfg, rng, m, ensemble=ensemble, n=cfg.rank1_n, s=cfg.rank1_s)
    else:
        pb = _cfg_problem(cfg, rng, m, ensemble=ensemble)
    scfg = _solve_cfg(cfg)
    out = []
    if cfg.solver != "baseline":
        (tuned,), ms = _timed(tune_shrink_multi, pb.y, pb.op, pb.init, [_metric(cfg, pb)],
                              None, cfg.solver, scfg)
        out.append(([ensemble, m, cfg.solver, cfg.tuning], trial,
                    _record(cfg, trial, tuned.best_result, pb, ms)))
    res, ms = _timed(altmin_sense_baseline, pb.y, pb.op, cfg.R, pb.init, scfg)
    out.append(([ensemble, m, "baseline", "none"], trial, _record(cfg, trial, res, pb, ms)))
    return out


def _phase_points(cfg):
    return [(sf, mf) for sf in cfg.s_fracs for mf in cfg.m_fracs]


def _cell_size(cfg, sf, mf):
    s2 = min(max(sf * cfg.n2, 1.0), cfg.n2)
    m = max(1, int(math.floor(mf * cfg.n1 * cfg.n2 + 0.5)))
    return s2, m


def _phase_task(cfg: ExperimentConfig, point: int, trial: int):
    sf, mf = _phase_points(cfg)[point]
    s2, m = _cell_size(cfg, sf, mf)
    pb = _cfg_problem(cfg, _rng(cfg, point, trial), m, s2=s2)
    scfg = _solve_cfg(cfg)
    if cfg.solver == "baseline":
        res, ms = _timed(altmin_sense_baseline, pb.y, pb.op, cfg.R, pb.init, scfg)
        return [([sf, mf, "none"], trial, _record(cfg, trial, res, pb, ms))]
    metrics = [OracleError(pb.X), Discrepancy(pb.eta_norm)]
    tuned, ms = _timed(tune_shrink_multi, pb.y, pb.op, pb.init, metrics, None, cfg.solver, scfg)
    return [([sf, mf, metric.name], trial, _record(cfg, trial, t.best_result, pb, ms))
            for metric, t in zip(metrics, tuned)]


def _injectivity_points(cfg):
    return [(e, m) for e in cfg.ensembles for m in cfg.m_grid]


def _injectivity_task(cfg: ExperimentConfig, point: int, trial: int):
    ensemble, m = _injectivity_points(cfg)[point]
    rng = _rng(cfg, point, trial)
    if ensemble == "identity":
        op = make_identity_like(cfg.n1, cfg.n2)
    else:
        op = make_operator(ensemble, cfg.n1, cfg.n2, m, rng)
    spec = SignalClassSpec(cfg.n1, cfg.n2, cfg.R, cfg.s1, cfg.s2)
    scan = injectivity_scan(op, spec, cfg.samples, rng, cfg.dense_fraction)
    gamma, delta = fit_lower_envelope(scan.pairs) if len(scan.pairs) >= 2 else (1.0, 0.0)
    seed = trial_seed(cfg.seed, trial)
    row = [ensemble, m, seed, cfg.digest(), cfg.samples, scan.median_deviation(),
           scan.delta_hat, gamma, delta]
    pairs = [[ensemble, m, seed, z, a] for z, a in scan.pairs]
    return row, pairs


def _execute(task: Callable, cfg: ExperimentConfig, n_points: int, jobs: int) -> list:
    """Run ``task`` for every (point, trial); results in (point, trial) order."""
    args = [(p, t) for p in range(n_points) for t in range(cfg.trials)]
    points, trials = [a[0] for a in args], [a[1] for a in args]
    if jobs <= 1 or len(args) <= 1:
        return [task(cfg, p, t) for p, t in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(task, repeat(cfg), points, trials))


def _trial_tables(point_cols: Sequence[str], results) -> dict[str, Table]:
    entries = [e for chunk in results for e in chunk]
    main, timing = [], []
    for cols, trial, rec in entries:
        values = dict(zip(RECORD_FIELDS, astuple(rec)))
        main.append([*cols, trial, *(values[f] for f in MAIN_FIELDS)])
        timing.append([*cols, trial, rec.seed, rec.wall_ms])
    return {
        "": Table([*point_cols, "trial", *MAIN_FIELDS], main),
        "timing": Table([*point_cols, "trial", "seed", "wall_ms"], timing),
    }


def run_param_sweep(cfg: ExperimentConfig, jobs: int = 1) -> dict[str, Table]:
    """Relative error and sparsity along a halving grid of ``mu`` for every
    parameter mode. Each mode's path is warm started from the previous
    ``mu``; the first grid point is ``cfg.mu0``."""
    _expect(cfg, "param_sweep")
    results = _execute(_param_sweep_task, cfg, len(cfg.m_grid), jobs)
    tables = _trial_tables(["m", "mode", "mu"], results)
    # group by (m, mode, mu) rather than by trial
    for key, t in tables.items():
        order = sorted(range(len(t.rows)), key=lambda i: (cfg.m_grid.index(t.rows[i][0]),
                                                          cfg.modes.index(t.rows[i][1]),
                                                          -t.rows[i][2], t.rows[i][3]))
        tables[key] = Table(t.header, [t.rows[i] for i in order])
    return tables


def run_ensemble_compare(cfg: ExperimentConfig, jobs: int = 1) -> dict[str, Table]:
    """Tuned solver against the low-rank baseline across ensembles and ``m``."""
    _expect(cfg, "ensemble_compare")
    results = _execute(_ensemble_task, cfg, len(_ensemble_points(cfg)), jobs)
    return _trial_tables(["ensemble", "m", "method", "tuning"], results)


def run_phase_transition(cfg: ExperimentConfig, jobs: int = 1) -> dict[str, Table]:
    """Success rates over a (sparsity fraction, measurement fraction) grid.

    Both tuning rules are scored on the same halving path, so every trial
    yields one record per rule. The ``cells`` table aggregates success
    counts per grid cell.
    """
    _expect(cfg, "phase_transition")
    if cfg.threshold is None:
        cfg = replace(cfg, threshold=0.4)
    pts = _phase_points(cfg)
    results = _execute(_phase_task, cfg, len(pts), jobs)
    tables = _trial_tables(["s_frac", "m_frac", "tuning"], results)
    main = tables[""]
    counts: dict[tuple, list[int]] = {}
    for row in main.rows:
        sf, mf, tuning = row[:3]
        c = counts.setdefault((tuning, pts.index((sf, mf))), [0, 0])
        c[0] += 1
        c[1] += bool(row[main.header.index("success")])
    cells = []
    for (tuning, i), (n, k) in sorted(counts.items()):
        sf, mf = pts[i]
        s2, m = _cell_size(cfg, sf, mf)
        cells.append([tuning, sf, mf, s2, m, n, k, k / n])
    tables["cells"] = Table(["tuning", "s_frac", "m_frac", "s", "m", "trials", "successes",
                             "success_rate"], cells)
    return tables


def run_injectivity(cfg: ExperimentConfig, jobs: int = 1) -> dict[str, Table]:
    """Norm-deviation statistics and fitted envelope per ensemble and ``m``."""
    _expect(cfg, "injectivity")
    results = _execute(_injectivity_task, cfg, len(_injectivity_points(cfg)), jobs)
    rows = [r for r, _ in results]
    pairs = [p for _, chunk in results for p in chunk]
    return {
        "": Table(["ensemble", "m", "seed", "config_digest", "samples", "median_deviation",
                   "delta_hat", "gamma_fit", "delta_fit"], rows),
        "pairs": Table(["ensemble", "m", "seed", "z_norm2", "az_norm2"], pairs),
    }


RUNNERS = {
    "param_sweep": run_param_sweep,
    "ensemble_compare": run_ensemble_compare,
    "phase_transition": run_phase_transition,
    "injectivity": run_injectivity,
}


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> dict[str, Table]:
    return RUNNERS[cfg.experiment](cfg, jobs)


def _expect(cfg, name):
    if cfg.experiment != name:
        raise ValueError(f"config is for {cfg.experiment!r}, not {name!r}")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _side_path(out: Path, suffix: str) -> Path:
    return out if not suffix else out.with_name(f"{out.stem}.{suffix}{out.suffix or '.csv'}")


def write_tables(tables: dict[str, Table], out) -> list[Path]:
    """Write the main table to ``out`` and side tables next to it as
    ``<stem>.<name>.csv``."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    written = []
    for suffix, table in tables.items():
        path = _side_path(out, suffix)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table.header)
            for row in table.rows:
                w.writerow([_fmt(v) for v in row])
        written.append(path)
    return written
