"""Seeded Monte Carlo runner: simulate, estimate with JLMC and the MC-unaware
baseline, aggregate RMSE per ``(power, ||s||)`` cell, attach bounds."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import bounds as bnd
from .channel import CascadedModel, McModel, RisProfileSet, Scenario, build_supports, simulate_observation
from .config import ScenarioConfig
from .estimator import build_dictionary, distance_grid, jlmc, mc_unaware_estimate
from .geometry import RisGeometry

log = logging.getLogger(__name__)

PROFILE_STREAM = 0x5EED


@dataclass
class TrialResult:
    cell: int
    trial: int
    seed: int
    p_dbm: float
    s_norm: float
    true_position: np.ndarray
    jlmc_position: np.ndarray | None = None
    unaware_position: np.ndarray | None = None
    err_jlmc: float = float("nan")
    err_unaware: float = float("nan")
    mc_err: float = float("nan")
    iterations: int = 0
    converged: bool = False
    monotone: bool = True
    wall_time: float = 0.0
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class RmseRow:
    p_dbm: float
    s_norm: float
    rmse_jlmc: float
    rmse_unaware: float
    peb_aware: float
    peb_unaware: float
    bias_norm: float
    n_trials: int
    n_failed: int = 0


@dataclass
class ExperimentResult:
    config: ScenarioConfig
    rows: list
    trials: list
    reports: list
    pseudo_true: list = field(default_factory=list)  # (s_norm, PseudoTrue)


def trial_seed(master_seed: int, cell: int, trial: int) -> int:
    """Scheduling-independent per-trial seed."""
    ss = np.random.SeedSequence([master_seed, cell, trial])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def build_scenario(cfg: ScenarioConfig, p_dbm: float | None = None):
    """Return ``(scenario, supports)``; profiles are seeded from the master seed."""
    g = cfg.geometry
    geom = RisGeometry(g.ris_rows, g.ris_cols, cfg.spacing, np.array(g.ris_position),
                       np.array(g.orientation))
    radio = cfg.radio.with_power(cfg.powers_dbm[0] if p_dbm is None else p_dbm)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, PROFILE_STREAM]))
    profiles = RisProfileSet.random(geom.num_elements, radio.num_pilots, rng)
    sc = Scenario(geom, np.array(g.bs_position), np.array(g.ue_position), radio, profiles)
    return sc, build_supports(geom, len(cfg.mc_direction))


def rmse(errors) -> float:
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        return float("nan")
    total = 0.0
    for e in errors:  # fixed order for bit stability
        total += e * e
    return float(np.sqrt(total / errors.size))


_CTX = {}


def _init_worker(ctx):
    _CTX.clear()
    _CTX.update(ctx)


def run_trial(cell, trial, p_dbm, q, seed) -> TrialResult:
    cfg = _CTX["cfg"]
    scenario = _CTX["scenario"].with_power(p_dbm)
    supports = _CTX["supports"]
    mc = McModel(supports, q * cfg.mc_direction_array)
    res = TrialResult(cell, trial, seed, p_dbm, q, scenario.ue_position.copy())
    t0 = time.perf_counter()
    try:
        obs = simulate_observation(scenario, mc, seed)
        kw = dict(dictionary=_CTX["dictionary"], grid=_CTX["grid"])
        est = jlmc(obs.y, CascadedModel(scenario, supports), cfg.estimator, **kw)
        un = mc_unaware_estimate(obs.y, CascadedModel(scenario, supports), cfg.estimator, **kw)
        res.jlmc_position = est.position
        res.unaware_position = un.position
        res.err_jlmc = float(np.linalg.norm(est.position - scenario.ue_position))
        res.err_unaware = float(np.linalg.norm(un.position - scenario.ue_position))
        res.mc_err = float(np.linalg.norm(est.mc_coeffs - mc.coeffs))
        res.iterations = est.iterations
        res.converged = est.converged
        res.monotone = bool(np.all(np.diff(est.objective_trace) >= 0)
                            and np.all(np.diff(un.objective_trace) >= 0))
    except Exception as exc:  # a failed trial is logged and excluded, never fatal
        log.warning("trial %d/%d failed: %s", cell, trial, exc)
        res.error = f"{type(exc).__name__}: {exc}"
    res.wall_time = time.perf_counter() - t0
    return res


def _run_trial_args(args):
    return run_trial(*args)


def compute_bounds(cfg: ScenarioConfig, scenario=None, supports=None):
    """Bound reports for every cell plus pseudo-true points for the map norms."""
    if scenario is None:
        scenario, supports = build_scenario(cfg)
    reports = bnd.bound_sweep(scenario, supports, cfg.mc_direction_array, cfg.powers_dbm,
                              cfg.s_norms, cfg.search)
    model = CascadedModel(scenario, supports)
    pts = []
    for q in cfg.pseudo_true_norms:
        mc = McModel(supports, q * cfg.mc_direction_array)
        pts.append((q, bnd.pseudo_true(scenario, mc, cfg.search, model=model)))
    return reports, pts


def run_experiment(cfg: ScenarioConfig, workers: int = 1, progress=None) -> ExperimentResult:
    scenario, supports = build_scenario(cfg)
    model = CascadedModel(scenario, supports)
    ctx = dict(cfg=cfg, scenario=scenario, supports=supports,
               dictionary=build_dictionary(model, cfg.estimator),
               grid=distance_grid(model, cfg.estimator))
    reports, pts = compute_bounds(cfg, scenario, supports)

    cells = list(product(cfg.s_norms, cfg.powers_dbm))
    tasks = [(ci, ti, p, q, trial_seed(cfg.master_seed, ci, ti))
             for ci, (q, p) in enumerate(cells) for ti in range(cfg.n_trials)]
    if workers <= 1:
        _init_worker(ctx)
        trials = []
        for t in tasks:
            trials.append(_run_trial_args(t))
            if progress:
                progress(len(trials), len(tasks))
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(ctx,)) as ex:
            trials = list(ex.map(_run_trial_args, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    trials.sort(key=lambda r: (r.cell, r.trial))

    by_key = {(r.p_dbm, r.s_norm): r for r in reports}
    rows = []
    for ci, (q, p) in enumerate(cells):
        ok = [r for r in trials if r.cell == ci and not r.failed]
        rep = by_key[(p, q)]
        rows.append(RmseRow(p_dbm=p, s_norm=q,
                            rmse_jlmc=rmse([r.err_jlmc for r in ok]),
                            rmse_unaware=rmse([r.err_unaware for r in ok]),
                            peb_aware=rep.peb_aware, peb_unaware=rep.peb_unaware,
                            bias_norm=rep.bias_norm, n_trials=len(ok),
                            n_failed=cfg.n_trials - len(ok)))
    return ExperimentResult(cfg, rows, trials, reports, pts)
