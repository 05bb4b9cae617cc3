import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid

from follicle_hmp import (Control, Ensemble, ModelError, adjoint_regularized, backward_adjoint, simulate,
                          simulate_regularized, smooth_gain, table1)
from follicle_hmp.regularized import (Mollifier, RegularizedProblem, jump_bracket_convergence, layer_increment,
                                      level_time, penalty_integral, projected_gradient, regularized_cost,
                                      regularized_gap)

from conftest import T_HAT0


def test_kernel_unit_mass_and_support():
    for i in (1, 7, 100, 10**4, 10**6):
        mol = Mollifier(i)
        assert mol.mass() == pytest.approx(1.0, abs=1e-12)
        lo, hi = mol.support
        assert lo == -1.0 / i and hi == 0.0
        assert mol.kernel(lo - 1e-9) == 0.0 and mol.kernel(1e-12) == 0.0
        z = np.linspace(lo, hi, 2001)
        slope = np.max(np.abs(np.diff(mol.kernel(z)) / np.diff(z)))
        assert slope <= mol.kernel_slope_bound() * (1 + 1e-6)


def test_index_range():
    with pytest.raises(ModelError):
        Mollifier(0)
    with pytest.raises(ModelError):
        Mollifier(10**6 + 1)


def test_smooth_gain_limits(p7):
    i = 50
    assert smooth_gain(i, p7.ys - 1.0 / i, p7) == 1.0
    assert smooth_gain(i, 0.0, p7) == 1.0
    assert smooth_gain(i, p7.ys, p7) == 0.0
    assert smooth_gain(i, 7.0, p7) == 0.0
    assert [smooth_gain(i, 5.9, p7) for i in (1, 5, 20)][-1] == 1.0


@settings(max_examples=80, deadline=None)
@given(i=st.integers(1, 10**6), y=st.floats(5.0, 6.5), dy=st.floats(0.0, 0.1))
def test_smooth_gain_monotone_and_bounded(i, y, dy):
    p = table1(1.0)
    a, b = smooth_gain(i, y, p), smooth_gain(i, y + dy, p)
    assert 0.0 <= b <= a <= 1.0


def test_chi_is_kernel_primitive(p7):
    mol = Mollifier(10)
    y = np.linspace(5.85, 6.05, 41)
    h = 1e-6
    fd = (mol.chi(y + h, p7.ys) - mol.chi(y - h, p7.ys)) / (2 * h)
    assert np.allclose(fd, mol.dchi(y, p7.ys), atol=1e-4)
    # chi_i(y) = int_{y - ys}^inf w_i
    for yy in (5.93, 5.97):
        z = np.linspace(yy - p7.ys, 0.0, 20001)
        assert trapezoid(mol.kernel(z), z) == pytest.approx(float(mol.chi(yy, p7.ys)), abs=1e-7)


def test_large_index_matches_hybrid(p1):
    ens = Ensemble.single(p1)
    u = Control.bang_bang(T_HAT0, p1)
    hybrid = simulate(ens, u).final_states()[0]
    path = simulate_regularized(RegularizedProblem(p1, 10**6), ens, u)[0]
    y, m = path.final
    assert y == pytest.approx(hybrid[1], abs=1e-9)
    assert abs(m - hybrid[2]) < 1e-4


def test_zero_gain_identical():
    p = table1(0.0)
    ens = Ensemble([(0, 0.0, 1.0), (0, 2.0, 0.5)], p)
    u = Control.bang_bang(0.8, p)
    prob = RegularizedProblem(p, 1000)
    paths = simulate_regularized(prob, ens, u)
    traj = simulate(ens, u)
    for k, path in enumerate(paths):
        for t in (0.3, 1.0, 5.0, 17.0):
            assert np.allclose(path.state(t), traj.paths[k].state(t), rtol=1e-10, atol=1e-10)
    adj = adjoint_regularized(prob, paths)
    hyb = backward_adjoint(traj)
    for k in range(2):
        for t in (0.2, 1.3, 8.0):
            assert np.allclose(adj[k].psi(t), hyb[k].psi(t), rtol=1e-8, atol=1e-8)


def test_above_threshold_mass_frozen(p7):
    ens = Ensemble.single(p7, x2=6.0, x3=2.0)
    path = simulate_regularized(RegularizedProblem(p7, 100), ens, Control.constant(1.0, p7))[0]
    assert path.final[1] == 2.0


def test_conserved_combination_by_finite_differences(p1):
    ens = Ensemble.single(p1)
    u = Control.bang_bang(T_HAT0, p1)
    prob = RegularizedProblem(p1, 1000)
    path = simulate_regularized(prob, ens, u)[0]
    adj = adjoint_regularized(prob, [path])[0]
    h = 1e-7
    for t in (0.3, path.t_bar + 0.4 * (path.t_hat - path.t_bar), 3.0):
        def combo(s):
            return path.state(s)[1] + adj.psi(s)[2]
        fd = (combo(t + h) - combo(t - h)) / (2 * h)
        y = path.state(t)[1]
        exact = -p1.cs * prob.mollifier.chi(y, p1.ys) * combo(t)
        assert fd == pytest.approx(exact, rel=1e-5, abs=1e-7)


def test_layer_times_and_width(p1):
    u = Control.bang_bang(T_HAT0, p1)
    ens = Ensemble.single(p1)
    for i in (100, 10**4):
        path = simulate_regularized(RegularizedProblem(p1, i), ens, u)[0]
        assert path.t_hat == pytest.approx(T_HAT0, abs=1e-12)
        assert level_time(0.0, p1.ys - 1.0 / i, u, p1) == path.t_bar
        slow = -36.0 + (11.892 * 6 + 2.288) * p1.w
        assert (path.t_hat - path.t_bar) * i * slow == pytest.approx(1.0, rel=5e-2 if i == 100 else 5e-4)


def test_layer_increment_single_velocity_limit(p1):
    # constant control across the exit: the limit is the bracket end with that control
    u = Control.constant(p1.w, p1)
    ens = Ensemble.single(p1)
    jump = backward_adjoint(simulate(ens, u))[0].jump
    r = layer_increment(p1, ens, u, 10**5)
    assert r.delta == pytest.approx(jump.value, rel=2e-4)
    assert r.split_residual < 1e-8


def test_bracket_convergence_schedule(p1):
    conv = jump_bracket_convergence(p1, Ensemble.single(p1), Control.bang_bang(T_HAT0, p1),
                                    schedule=(10**2, 10**3, 10**4))
    assert conv.a_decreasing()
    assert conv.a_rate() <= -0.8
    assert all(r.inside for r in conv.rows)
    gaps = [abs(r.delta - conv.hybrid_jump) for r in conv.rows]
    assert gaps[0] > gaps[1] > gaps[2]
    header = conv.to_csv().splitlines()[0]
    assert header == "i,A_i,Delta_i,bracket_lo,bracket_hi,inside,layer_width"


def test_zero_gain_bracket_degenerates():
    p = table1(0.0)
    u = Control.constant(0.8, p)
    r = layer_increment(p, Ensemble.single(p), u, 1000)
    assert r.bracket == (0.0, 0.0)
    assert abs(r.delta) < 1e-9


def test_penalty_and_cost(p1):
    prob = RegularizedProblem(p1, 400, T_HAT0)
    u = Control.bang_bang(T_HAT0, p1)
    # the ramp of width 1/i differs from the step on two triangles
    assert penalty_integral(prob, u) == pytest.approx((1 - p1.w) ** 2 / (12 * 400), rel=1e-12)
    assert prob.penalty == pytest.approx(0.05)
    ens = Ensemble.single(p1)
    j = regularized_cost(prob, ens, u)
    path = simulate_regularized(prob, ens, u)[0]
    assert j == pytest.approx(-path.final[0] * path.final[1] + 0.05 * penalty_integral(prob, u), rel=1e-14)


def test_regularized_gap_vanishes(p1):
    ens = Ensemble.single(p1)
    gaps = [regularized_gap(p1, ens, T_HAT0, i, n=11)[0] for i in (100, 10**4)]
    assert all(g <= 0 for g in gaps)
    assert abs(gaps[1]) <= abs(gaps[0]) + 1e-12


def test_projected_gradient_descends():
    p = table1(1.0).replace(t1=2.0)
    prob = RegularizedProblem(p, 100)
    u, history = projected_gradient(prob, Ensemble.single(p), Control.constant(1.0, p), cells=16, iters=5)
    assert u.is_admissible(p)
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))
    assert len(history) <= 6
