import numpy as np
import pytest

from follicle_hmp import Control, Ensemble, cost_J, falsify_with_step_controls, refine, sweep, table1
from follicle_hmp.optimize import (SweepResult, exit_boundaries, golden_section, random_step_control, segment_of)
from follicle_hmp.transport import InitialMeasure

from conftest import T_HAT0


@pytest.fixture(scope="module")
def sweep7():
    ens = Ensemble.single(table1(7.0))
    return ens, sweep(ens, 4096)


def test_argmin_at_exit_time(sweep7):
    ens, sr = sweep7
    assert abs(sr.argmin - T_HAT0) <= sr.cell
    assert sr.reverse_ok
    rr = refine(sr, ens)
    assert rr.t_star == pytest.approx(T_HAT0, abs=1e-8)
    assert rr.local_min and not rr.tie


def test_sweep_csv(sweep7):
    _, sr = sweep7
    lines = sr.to_csv().splitlines()
    assert lines[0] == "t_star,J,segment_index" and len(lines) == 4097


def test_weak_gain_long_horizon_still_switches_at_exit():
    # with t1 = 17 the terminal maturity saturates, so the exit time wins for every cs > 0
    ens = Ensemble.single(table1(0.1))
    sr = sweep(ens, 1024, reverse=False)
    assert abs(sr.argmin - T_HAT0) <= sr.cell
    assert cost_J(ens, Control.bang_bang(T_HAT0, ens.params)) < cost_J(ens, Control.constant(1.0, ens.params))


def test_weak_gain_short_horizon_prefers_full_control():
    p = table1(0.1).replace(t1=0.5)
    ens = Ensemble.single(p)
    sr = sweep(ens, 1024)
    assert sr.argmin_index == 0
    rr = refine(sr, ens)
    assert rr.t_star == p.t0


def test_two_masses_three_segments(two_masses):
    for cs in (0.8, 1.0):
        ens = two_masses(cs=cs)
        sr = sweep(ens, 4096, reverse=False)
        segs = sr.segments()
        assert [s for s, _, _ in segs] == [0, 1, 2]
        assert len(sr.exit_times) == 2
        for (_, _, last), e in zip(segs, sr.exit_times):
            assert sr.t_star[last] < e <= sr.t_star[last + 1]


def test_interior_optimum_on_short_horizon(two_masses):
    ens = two_masses(cs=0.8, t1=1.4)
    sr = sweep(ens, 4096, reverse=False)
    rr = refine(sr, ens)
    e1, e2 = sr.exit_times
    assert e1 < rr.t_star < e2
    assert rr.t_star == pytest.approx(1.1401110, abs=1e-6)
    assert rr.local_min
    assert segment_of(rr.t_star, sr.exit_times) == 1


def fake_sweep(fun, exits, n=401, t1=3.0):
    grid = np.linspace(0.0, t1, n)
    seg = np.array([segment_of(t, exits) for t in grid])
    return SweepResult(grid, np.array([fun(t) for t in grid]), seg, list(exits), {"holds": True})


def test_refine_recovers_quadratic_minimum():
    f = lambda t: (t - 1.2345678) ** 2 - 3.0
    rr = refine(fake_sweep(f, [0.7, 2.1]), cost=f)
    assert rr.t_star == pytest.approx(1.2345678, abs=1e-7)
    assert rr.local_min and not rr.tie


def test_refine_reports_ties_across_segments():
    f = lambda t: min((t - 0.5) ** 2, (t - 2.5) ** 2)
    rr = refine(fake_sweep(f, [1.5]), cost=f)
    assert rr.tie
    assert [round(c.t_star, 6) for c in rr.candidates] == [0.5, 2.5]
    assert [c.segment for c in rr.candidates] == [0, 1]
    assert rr.t_star == pytest.approx(0.5, abs=1e-7)


def test_refine_kink_at_exit():
    f = lambda t: abs(t - 1.0)
    rr = refine(fake_sweep(f, [1.0], n=37), cost=f)
    assert rr.t_star == pytest.approx(1.0, abs=1e-12) and not rr.tie


def test_golden_section_boundary_minimum():
    x, fx = golden_section(lambda t: t, 0.0, 1.0)
    assert x == 0.0 and fx == 0.0


def test_random_step_controls_admissible(p7):
    rng = np.random.default_rng(0)
    for _ in range(200):
        u = random_step_control(rng, p7, 8, focus=2.0)
        assert u.is_admissible(p7)
        assert len(u.values) <= 8


def test_falsification_small_and_worker_independent(sweep7):
    ens, sr = sweep7
    rr = refine(sr, ens)
    a = falsify_with_step_controls(ens, rr.J, trials=300, seed=11)
    b = falsify_with_step_controls(ens, rr.J, trials=300, seed=11, workers=2)
    assert a.passed and a.violations == 0
    assert np.array_equal(a.margins, b.margins)
    assert a.summary()["trials"] == 300


def test_density_sweep_boundary():
    p = table1(7.0)
    rho = InitialMeasure.uniform(p, nx=8, ny=8)
    assert exit_boundaries(rho) == [pytest.approx(T_HAT0, abs=1e-12)]
    sr = sweep(rho, 257, reverse=False)
    assert sr.argmin >= T_HAT0 - sr.cell


def test_sweep_rejects_tiny_grid(p7):
    with pytest.raises(ValueError):
        sweep(Ensemble.single(p7), 1)
