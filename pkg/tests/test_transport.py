import time

import numpy as np
import pytest

from follicle_hmp import Control, Ensemble, ModelError, cost_J, discretize, duality_check, table1
from follicle_hmp.transport import (InitialMeasure, chattering_control, check_particle_consistency,
                                    cost_measure, dirac_convergence, exit_lipschitz, exit_time_continuity_probe,
                                    extend_control, level_shape, moment, pushforward_integrate,
                                    read_density_csv, unexited_fraction, write_density_csv)
from follicle_hmp.model import exit_time

from conftest import T_HAT0, random_instance


def test_particle_measure_agrees_with_ensemble():
    rng = np.random.default_rng(3)
    for _ in range(5):
        ens, u = random_instance(rng, n_max=6)
        assert check_particle_consistency(ens, u) < 1e-12


def test_pushforward_total_mass_growth(p1):
    rho = InitialMeasure.uniform(p1)
    u = Control.constant(1.0, p1)
    # before any cell can exit all mass grows at rate cs
    t = 0.0005
    mass = pushforward_integrate(rho, u, t, lambda x, y: np.ones_like(y))
    assert mass == pytest.approx(rho.total_mass() * np.exp(p1.cs * t) * (1 - 0) , rel=1e-3)
    assert pushforward_integrate(rho, u, 0.0, lambda x, y: np.ones_like(y)) == pytest.approx(1.0, rel=1e-12)


def test_pushforward_positive_and_supported(p7):
    rho = InitialMeasure.uniform(p7, nx=8, ny=8)
    u = Control.bang_bang(0.7, p7)
    for t in (0.3, 1.0, 5.0):
        xs = pushforward_integrate(rho, u, t, lambda x, y: x)
        m = pushforward_integrate(rho, u, t, lambda x, y: np.ones_like(x))
        lo = pushforward_integrate(rho, u, t, lambda x, y: (x < t - 1e-12).astype(float))
        hi = pushforward_integrate(rho, u, t, lambda x, y: (y > p7.ybar).astype(float))
        assert m > 0 and lo == 0.0 and hi == 0.0
        assert t * m <= xs <= (1 + t) * m


def test_cost_measure_density_vs_fine_collocation(p7):
    rho = InitialMeasure.uniform(p7)
    u = Control.bang_bang(T_HAT0, p7)
    assert cost_measure(rho, u) == pytest.approx(cost_measure(discretize(rho, 4096), u), rel=1e-8)


def test_discretize_mass_and_identity(p7):
    rho = InitialMeasure.uniform(p7, mass=2.5)
    for n in (1, 16, 64, 100):
        d = discretize(rho, n)
        assert len(d.weights) == n
        assert d.total_mass() == pytest.approx(2.5, rel=1e-12)
    point = InitialMeasure.from_ensemble(Ensemble.single(p7, x2=1.0, x3=3.0))
    same = discretize(point, 1)
    assert same.y0.tolist() == [1.0] and same.weights.tolist() == [3.0]
    u = Control.bang_bang(0.9, p7)
    costs = [cost_measure(discretize(point, n), u) for n in (16, 64, 256)]
    assert np.ptp(costs) <= 1e-12 * abs(costs[0])
    with pytest.raises(ModelError):
        discretize(InitialMeasure.from_ensemble(Ensemble([(0, 0, 1), (0, 1, 1)], p7)), 3)


def test_level_shape():
    assert level_shape(16) == (4, 4)
    assert level_shape(1024) == (32, 32)
    assert level_shape(12) == (3, 4)
    assert level_shape(7) == (1, 7)


def test_dirac_convergence_uniform_density(p7):
    start = time.perf_counter()
    study = dirac_convergence(InitialMeasure.uniform(p7), Control.bang_bang(T_HAT0, p7))
    assert time.perf_counter() - start < 30.0
    assert study.monotone
    assert study.finest_relative < 1e-6
    assert study.to_csv().startswith("level,n,J,abs_dJ\n")


def test_reference_insensitive_to_node_count(p7):
    rho = InitialMeasure.uniform(p7)
    u = Control.bang_bang(0.8, p7)
    assert cost_measure(rho, u, n=256) == pytest.approx(cost_measure(rho, u, n=10_000), rel=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_duality_random_controls(seed):
    rng = np.random.default_rng(100 + seed)
    ens, u = random_instance(rng, n_max=5)
    rho = InitialMeasure.from_ensemble(ens)
    t_ext = float(rng.uniform(0.5, 10.0))
    rep = duality_check(rho, u, t_ext)
    assert rep.passed, rep.min_increment


def test_duality_edge_cases(p7):
    rho = InitialMeasure.uniform(p7, nx=4, ny=4)
    assert duality_check(rho, Control.constant(0.5, p7), p7.t1).passed
    assert duality_check(rho, Control.constant(0.5, p7), 2.0).passed
    with pytest.raises(ModelError):
        duality_check(rho, Control.constant(0.5, p7), 20.0)


def test_extend_control(p7):
    u = Control.steps([1.0, 3.0], [0.5, 0.8, 0.6], p7)
    ext = extend_control(u, 2.0, p7)
    assert ext.times == (1.0, 2.0) and ext.values == (0.5, 0.8, 1.0)
    assert extend_control(u, 0.0, p7).values == (1.0,)
    assert extend_control(u, 17.0, p7) is u


def test_exit_time_continuity_chattering(p7):
    mean = 0.75
    ns = [4, 8, 16, 32, 64, 128, 256, 512, 1024]
    ctrls = [chattering_control(n, mean, p7) for n in ns]
    assert all(c.mean() == pytest.approx(mean, abs=1e-12) for c in ctrls[:3])
    probe = exit_time_continuity_probe([0.0] * len(ns), ctrls, 0.0, Control.constant(mean, p7), p7, ns)
    # the error depends on where the exit lands inside a chatter cell, so it is O(1/n) but not monotone
    assert probe.within(lambda n: 1.0 / n)
    assert probe.converged
    assert probe.rate() < -0.8


def test_exit_time_continuity_initial_data(p7):
    u = Control.bang_bang(0.8, p7)
    ns = [1, 2, 4, 8, 16, 32]
    L = exit_lipschitz(p7)
    for sign in (+1, -1):
        y0 = 2.0
        probe = exit_time_continuity_probe([y0 + sign / n for n in ns], [u] * len(ns), y0, u, p7, ns)
        assert probe.within(lambda n: L / n)


def test_constant_sequences_exact(p7):
    u = Control.constant(0.6, p7)
    probe = exit_time_continuity_probe([1.0] * 3, [u] * 3, 1.0, u, p7)
    assert probe.differences == [0.0, 0.0, 0.0]


def test_density_csv_roundtrip(p7):
    vals = np.array([[1.0, 2.0], [0.0, 3.0]])
    rho = read_density_csv(write_density_csv(vals, p7.ys), p7)
    assert rho.is_density
    # without interior grid lines the interpolant is bilinear, so Gauss collocation is exact
    assert rho.total_mass() == pytest.approx(vals.mean() * p7.ys, rel=1e-13)
    kinked = read_density_csv(write_density_csv(np.array([[1.0, 2.0, 0.5], [0.0, 1.0, 3.0]]), p7.ys), p7)
    assert kinked.kinks_y == (3.0,)
    assert kinked.total_mass() == pytest.approx(7.875, rel=1e-4)
    with pytest.raises(ModelError, match="row 4"):
        read_density_csv("nx,ny,ys\n2,2,6.0\n1,1\n1,x\n", p7)
    with pytest.raises(ModelError, match="ys"):
        read_density_csv("nx,ny,ys\n2,2,5.0\n1,1\n1,1\n", p7)
    with pytest.raises(ModelError, match="expected 4"):
        read_density_csv("nx,ny,ys\n2,2,6.0\n1,1\n", p7)


def test_measure_validation(p7):
    with pytest.raises(ModelError):
        InitialMeasure.from_particles([0.0], [7.0], [1.0], p7)
    with pytest.raises(ModelError):
        InitialMeasure.from_particles([0.0], [1.0], [0.0], p7)


def test_unexited_and_moment(p7):
    rho = InitialMeasure.uniform(p7)
    assert unexited_fraction(rho, Control.constant(0.5, p7)) == 0.0
    short = p7.replace(t1=0.2)
    frac = unexited_fraction(InitialMeasure.uniform(short), Control.constant(0.5, short))
    assert 0.0 < frac < 1.0
    assert moment(rho, Control.constant(0.5, p7), 0.0) == pytest.approx(3.0, rel=1e-12)
