"""Acceptance criteria A1-A10. Each test records one PASS/FAIL line, and the
lines are printed together in the terminal summary."""

import filecmp
import time
from dataclasses import replace

import numpy as np
import pytest

from risloc.bounds import bound_sweep, mcrb_lb, mean_jacobian, pseudo_true, unaware_derivatives
from risloc.channel import (CascadedModel, McModel, build_supports, mc_profile_apply, scattering_matrix,
                            simulate_observation)
from risloc.config import load_config, preset
from risloc.estimator import jlmc, mc_unaware_estimate
from risloc.experiment import build_scenario, run_experiment
from risloc.geometry import RisGeometry
from risloc.reports import emit_reports

import test_bounds
import test_channel
import test_estimator
from conftest import S_DIR
from test_harness import CSV, TINY

DESK = preset("desk")


def record(log, name, ok, detail):
    log.append(f"{name} {'PASS' if ok else 'FAIL'}: {detail}")
    print(log[-1])
    assert ok, detail


def test_a1_near_field_region(acceptance_log):
    g = RisGeometry(48, 48, 0.005)
    far, fres = g.fraunhofer_distance(0.01), g.fresnel_distance(0.01)
    e1, e2 = abs(far / 22.074 - 1), abs(fres / 1.187 - 1)
    record(acceptance_log, "A1", e1 < 0.005 and e2 < 0.005,
           f"Fraunhofer {far:.4f} m (err {e1:.2%}), Fresnel {fres:.4f} m (err {e2:.2%}), tol 0.5%")


def test_a2_no_coupling_collapse(acceptance_log):
    sc, sup = build_scenario(DESK, 10.0)
    model = CascadedModel(sc, sup)
    mc = McModel(sup, np.zeros(3))
    S = scattering_matrix(mc)
    omega_err = 0.0
    for t, ph in enumerate(sc.profiles.phases.T):
        z, _ = mc_profile_apply(ph, S, model.a_b)
        omega_err = max(omega_err, np.max(np.abs(np.exp(1j * ph) * z - model.Z0[:, t])))
    rep = mcrb_lb(sc, mc, pseudo_true(sc, mc, DESK.search, model=model), model=model)
    peb_rel = abs(rep.peb_unaware / rep.peb_known - 1)
    obs = simulate_observation(sc, mc, seed=42)
    cfg = replace(DESK.estimator, estimate_mc=False)
    a = jlmc(obs.y, model, cfg)
    b = mc_unaware_estimate(obs.y, model, DESK.estimator)
    same = a.position.tobytes() == b.position.tobytes() and a.objective_trace == b.objective_trace
    ok = omega_err < 1e-14 and peb_rel < 1e-3 and same
    record(acceptance_log, "A2", ok,
           f"profile err {omega_err:.1e}, peb_unaware/peb_known-1 = {peb_rel:.1e} (tol 0.1%), "
           f"estimates identical: {same}")


@pytest.fixture(scope="module")
def desk_sweep():
    sc, sup = build_scenario(DESK, 10.0)
    return bound_sweep(sc, sup, DESK.mc_direction_array, DESK.powers_dbm, (0.01, 0.05), DESK.search)


def test_a3_bound_ordering(acceptance_log, desk_sweep):
    bad = [(r.p_dbm, r.s_norm) for r in desk_sweep if not r.peb_unaware >= r.peb_aware]
    worst = min(r.peb_unaware / r.peb_aware for r in desk_sweep)
    record(acceptance_log, "A3", not bad,
           f"{len(desk_sweep) - len(bad)}/{len(desk_sweep)} cells with peb_unaware >= peb_aware "
           f"(min ratio {worst:.2f})")


def test_a4_bias_saturation(acceptance_log, desk_sweep):
    r = next(r for r in desk_sweep if r.s_norm == pytest.approx(0.05) and r.p_dbm == 10.0)
    rel = abs(r.peb_unaware - r.bias_norm) / r.bias_norm
    record(acceptance_log, "A4", rel < 0.05,
           f"peb_unaware {r.peb_unaware:.4e} m vs bias {r.bias_norm:.4e} m, rel diff {rel:.2%} (tol 5%)")


def test_a6_neumann_decay(acceptance_log, desk):
    sc, sup = desk
    e = test_channel.neumann_errors(sc, sup, [0.02, 0.04])
    ratio = e[1] / e[0]
    record(acceptance_log, "A6", 3.2 <= ratio <= 4.8, f"error ratio 0.04/0.02 = {ratio:.3f} (range [3.2, 4.8])")


def test_a7_derivatives(acceptance_log, small):
    sc, sup = small
    model = CascadedModel(sc, sup)
    s = 0.05 * S_DIR
    beta = 1.3 - 0.4j
    J = mean_jacobian(model, sc.ue_position, s, beta)
    fd = test_bounds.fd_jacobian(lambda z: test_bounds.mean_of_zeta(model, z, 3),
                                 test_bounds.zeta_of(beta, sc.ue_position, s))
    g = np.array([0.7, -1.1, *(sc.ue_position + [0.01, -0.02, 0.005])])
    _, D1, D2 = unaware_derivatives(model, g)
    fd1 = test_bounds.fd_jacobian(lambda z: unaware_derivatives(model, z)[0], g)
    fd2 = test_bounds.fd_jacobian(lambda z: unaware_derivatives(model, z)[1], g)
    errs = [test_bounds.rel_err(J, fd), test_bounds.rel_err(D1, fd1), test_bounds.rel_err(D2, fd2)]
    record(acceptance_log, "A7", max(errs) < 1e-5,
           "max rel err aware Jacobian {:.1e}, assumed first {:.1e}, second {:.1e} (tol 1e-5)".format(*errs))


def test_a8_brute_force_oracles(acceptance_log):
    worst = 0.0
    for m1 in range(1, 7):
        for m2 in range(1, 7):
            g = RisGeometry(m1, m2, 0.005, center=test_channel.TABLE_RIS)
            rng = np.random.default_rng(10 * m1 + m2)
            ph = rng.uniform(-np.pi, np.pi, m1 * m2)
            a_b = test_channel.nf_steering(test_channel.TABLE_BS, g, test_channel.K)
            a_u = test_channel.nf_steering(test_channel.TABLE_UE, g, test_channel.K)
            for q in (0.01, 0.05, 0.3):
                s = q * S_DIR
                _, h = mc_profile_apply(ph, scattering_matrix(McModel(build_supports(g, 3), s)), a_b, a_u)
                ref = a_u @ np.linalg.inv(np.diag(np.exp(-1j * ph)) - test_channel.dense_S(g, s)) @ a_b
                worst = max(worst, abs(h - ref) / abs(ref))
    test_estimator.test_coarse_aod_matches_exhaustive_scan()
    record(acceptance_log, "A8", worst < 1e-10,
           f"36 RIS sizes up to 6x6, worst rel err {worst:.1e} (tol 1e-10); coarse AOD index matches scan")


@pytest.fixture(scope="module")
def desk_monte_carlo(tmp_path_factory):
    cfg = replace(DESK, powers_dbm=(10.0,), s_norms=(0.0, 0.01, 0.05), pseudo_true_norms=())
    t0 = time.perf_counter()
    res = run_experiment(cfg)
    return res, time.perf_counter() - t0


@pytest.mark.slow
def test_a5_estimator_efficiency(acceptance_log, desk_monte_carlo):
    res, wall = desk_monte_carlo
    rows = {r.s_norm: r for r in res.rows}
    eff = {q: rows[q].rmse_jlmc / rows[q].peb_aware for q in (0.0, 0.01)}
    gap = rows[0.05].rmse_unaware / rows[0.05].rmse_jlmc
    failed = sum(r.n_failed for r in res.rows)
    ok = all(v <= 2 for v in eff.values()) and gap >= 5 and wall <= 900 and failed == 0
    record(acceptance_log, "A5", ok,
           f"rmse_jlmc/peb_aware = {eff[0.0]:.2f} (s=0), {eff[0.01]:.2f} (s=0.01) (tol 2); "
           f"rmse_unaware/rmse_jlmc at s=0.05 = {gap:.1f} (min 5); {failed} failed trials; {wall:.0f} s")


@pytest.mark.slow
def test_a9_monotone_refinement(acceptance_log, desk_monte_carlo):
    res, _ = desk_monte_carlo
    n = len(res.trials)
    mono = sum(t.monotone for t in res.trials if not t.failed)
    record(acceptance_log, "A9", mono == n, f"{mono}/{n} trials with non-decreasing objective traces")


def test_a10_determinism(acceptance_log, tmp_path):
    src = tmp_path / "tiny.toml"
    src.write_text(TINY)
    cfg = load_config(src)
    dirs = []
    for name, workers in (("run1", 1), ("run2", 1), ("threads2", 2)):
        emit_reports(run_experiment(cfg, workers=workers), tmp_path / name)
        dirs.append(tmp_path / name)
    diff = [f"{d.name}/{f}" for d in dirs[1:] for f in CSV
            if not filecmp.cmp(dirs[0] / f, d / f, shallow=False)]
    record(acceptance_log, "A10", not diff,
           f"{len(CSV)} output files compared across 2 repeats and 1 vs 2 workers; differing: {diff or 'none'}")
