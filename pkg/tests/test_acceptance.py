"""Acceptance run: one PASS/FAIL line per criterion, at the contract tolerances.

Lines are printed even under captured output, so ``pytest tests/test_acceptance.py``
shows the full report.  Criterion 5a is unattainable on the standard horizon and is
kept as a strict expected failure (see the notes in the README).
"""
import math
import time

import numpy as np
import pytest

from follicle_hmp import (Control, Ensemble, ExactAdjoint, InitialMeasure, ModelError, certify_bang_bang,
                          duality_check, exit_time, falsify_with_step_controls, jump_bracket_convergence,
                          refine, simulate, sweep, switching_function, table1)
from follicle_hmp.dynamics import Particle, simulate_ode
from follicle_hmp.transport import dirac_convergence

from conftest import T_EXIT_ONE, T_HAT0, random_instance


@pytest.fixture
def report(capsys):
    def emit(label, ok, detail, elapsed, limit):
        ok = bool(ok) and elapsed < limit
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail} ({elapsed:.2f} s, limit {limit:g} s)")
        return ok
    return emit


def two_mass(cs, **kw):
    p = table1(cs).replace(**kw) if kw else table1(cs)
    return Ensemble([Particle(0.0, 0.0, 1.0), Particle(0.0, 3.0, 1.0)], p)


def test_c1_exit_time_closed_form(report):
    start = time.perf_counter()
    p = table1(7.0)
    t_w = exit_time(0.0, Control.constant(p.w, p), p)
    t_1 = exit_time(0.0, Control.constant(1.0, p), p)
    elapsed = time.perf_counter() - start
    ok = abs(t_w - 1.1609) < 1e-4 and abs(t_w - T_HAT0) < 1e-6 and abs(t_1 - T_EXIT_ONE) < 1e-6
    assert report("1 exit time", ok, f"t_hat0 = {t_w:.10f}, u=1 exit = {t_1:.10f}", elapsed, 1.0)


def test_c2_oracle_equivalence(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        ens, u = random_instance(rng)
        ts = np.linspace(ens.params.t0, ens.params.t1, 41)
        exact = simulate(ens, u).states(ts)
        ode, _ = simulate_ode(ens, u, ts)
        scale = np.maximum(1.0, np.abs(exact))
        worst = max(worst, float(np.max(np.abs(exact - ode) / scale)))
    elapsed = time.perf_counter() - start
    assert report("2 oracle equivalence", worst < 1e-8, f"max scaled gap {worst:.2e} over 100 instances",
                  elapsed, 30.0)


def test_c3_hmp_certificate(report):
    start = time.perf_counter()
    cert = certify_bang_bang(Ensemble.single(table1(7.0)), T_HAT0)
    elapsed = time.perf_counter() - start
    names = [c.name for c in cert.checks]
    needed = {"phi_negative_before_switch", "phi_positive_after_switch", "hamiltonian_constancy",
              "jump_in_bracket", "conserved_x2_plus_psi3"}
    ok = cert.passed and cert.hypotheses["holds"] and needed <= set(names)
    failed = ",".join(cert.failed()) or "none"
    assert report("3 HMP certificate", ok, f"{len(names)} checks, failed: {failed}", elapsed, 5.0)


def test_c4_falsification(report):
    start = time.perf_counter()
    ens = Ensemble.single(table1(7.0))
    best = refine(sweep(ens, 1024, reverse=False), ens)
    rep = falsify_with_step_controls(ens, best.J, trials=10_000, workers=4)
    elapsed = time.perf_counter() - start
    detail = f"t* = {best.t_star:.8f}, {rep.violations} of 10000 beat J by > 1e-9"
    assert report("4 bang-bang falsification", rep.passed, detail, elapsed, 120.0)


@pytest.mark.xfail(strict=True, reason="terminal maturity saturates at ybar on t1 = 17; argmin is the exit time")
def test_c5a_weak_gain_argmin_at_t0(report):
    start = time.perf_counter()
    ens = Ensemble.single(table1(0.1))
    sr = sweep(ens, 4096, reverse=False)
    elapsed = time.perf_counter() - start
    detail = f"argmin t* = {sr.argmin:.6f}, J(t*) - J(t0) = {sr.J_min - sr.J[0]:.4f}"
    assert report("5a weak gain argmin at t0", sr.argmin_index == 0, detail, elapsed, 60.0)


def test_c5a_supplement_short_horizon(report):
    start = time.perf_counter()
    ens = Ensemble.single(table1(0.1).replace(t1=0.5))
    sr = sweep(ens, 4096, reverse=False)
    elapsed = time.perf_counter() - start
    detail = f"t1 = 0.5: argmin t* = {sr.argmin:.6f}"
    assert report("5a (supplement) weak gain, short horizon", sr.argmin_index == 0, detail, elapsed, 60.0)


def test_c5b_strong_gain_argmin_at_exit(report):
    start = time.perf_counter()
    sr = sweep(Ensemble.single(table1(7.0)), 4096, reverse=False)
    elapsed = time.perf_counter() - start
    gap = abs(sr.argmin - T_HAT0)
    detail = f"argmin t* = {sr.argmin:.6f}, |t* - t_hat0| = {gap:.2e}, cell = {sr.cell:.2e}"
    assert report("5b strong gain argmin at exit", gap <= sr.cell, detail, elapsed, 60.0)


def test_c5c_two_masses_segments_and_upcrossings(report):
    start = time.perf_counter()
    ok = True
    parts = []
    for cs, t1 in ((0.8, 17.0), (1.0, 17.0), (0.8, 1.4)):
        ens = two_mass(cs, t1=t1)
        sr = sweep(ens, 4096, reverse=False)
        u = Control.bang_bang(refine(sr, ens).t_star, ens.params)
        ts = np.linspace(ens.params.t0, ens.params.t1, 4001)
        sw = switching_function(simulate(ens, u), ExactAdjoint(ens, u), ts)
        n_seg = len(sr.segments())
        up = all(slope > 0 for _, slope in sw.zeros)
        ok &= n_seg == 3 and up
        parts.append(f"cs={cs} t1={t1}: {n_seg} segments, {len(sw.zeros)} zeros, upcrossing={up}")
    elapsed = time.perf_counter() - start
    assert report("5c two-mass sweep structure", ok, "; ".join(parts), elapsed, 60.0)


def test_c6_duality(report):
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    worst = math.inf
    ok = True
    for _ in range(20):
        ens, u = random_instance(rng, n_max=5)
        rep = duality_check(InitialMeasure.from_ensemble(ens), u, float(rng.uniform(0.5, 10.0)))
        ok &= rep.passed
        worst = min(worst, rep.min_increment)
    elapsed = time.perf_counter() - start
    assert report("6 duality", ok, f"smallest moment increment {worst:.3e}", elapsed, 10.0)


def test_c7_dirac_limit(report):
    start = time.perf_counter()
    p = table1(7.0)
    study = dirac_convergence(InitialMeasure.uniform(p), Control.bang_bang(T_HAT0, p))
    elapsed = time.perf_counter() - start
    errs = ", ".join(f"{e:.1e}" for e in study.errors)
    ok = study.monotone and study.finest_relative < 1e-6
    detail = f"errors {errs}; finest relative {study.finest_relative:.2e}"
    assert report("7 Dirac to measure limit", ok, detail, elapsed, 30.0)


def test_c8_mollified_bracket(report):
    start = time.perf_counter()
    p = table1(7.0)
    conv = jump_bracket_convergence(p, Ensemble.single(p), Control.bang_bang(T_HAT0, p),
                                    schedule=(10**2, 10**3, 10**4, 10**5))
    elapsed = time.perf_counter() - start
    rate = conv.a_rate()
    inside = [bool(r.inside) for r in conv.rows]
    ok = conv.a_decreasing() and rate <= -0.8 and all(inside[-2:])
    detail = f"A rate {rate:.3f}, inside {inside}"
    assert report("8 mollified bracket convergence", ok, detail, elapsed, 120.0)


def test_c9_parameter_validation(report):
    start = time.perf_counter()
    p = table1(7.0)
    lower = p.control_lower_limit
    curv = 2 * p.ys - p.c1
    try:
        p.replace(w=0.4)
        rejected = False
    except ModelError:
        rejected = True
    elapsed = time.perf_counter() - start
    ok = round(lower, 4) == 0.4889 and lower < p.w < 1 and math.isclose(curv, 0.108, rel_tol=1e-12) and rejected
    detail = f"ys^2/(c1 ys + c2) = {lower:.10f}, 2ys - c1 = {curv:.12g}, w = 0.4 rejected = {rejected}"
    assert report("9 parameter validation", ok, detail, elapsed, 1.0)
