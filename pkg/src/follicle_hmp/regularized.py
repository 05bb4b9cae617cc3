"""Mollified gain and the smooth control problems that approximate the hybrid one.

The indicator of ``y < ys`` is replaced by ``chi_i(y) = P(i (ys - y))`` with
the quintic smoothstep ``P(s) = 10 s^3 - 15 s^4 + 6 s^5`` clipped to
``[0, 1]``.  This is the primitive of the bump ``30 s^2 (1 - s)^2`` on
``[0, 1]``, so ``chi_i`` is the convolution of the indicator with a unit-mass
kernel supported on ``[-1/i, 0]``.  Maturity dynamics do not involve the
gain, hence only ``x3`` and the costates change with ``i``.
"""
from __future__ import annotations

import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .dynamics import Ensemble, Particle, simulate
from .adjoint import backward_adjoint
from .model import (ODE_ATOL, ODE_METHOD, ODE_RTOL, Control, ModelError, ModelParams,
                    flow_segment, transit_time, velocity_a, velocity_b)
from .transport import gauss_legendre

MAX_INDEX = 10**6


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))


def _bump(s):
    inside = (s > 0.0) & (s < 1.0)
    return np.where(inside, 30.0 * s * s * (1.0 - s) ** 2, 0.0)


@dataclass(frozen=True)
class Mollifier:
    """Kernel ``w_i(z) = 30 i s^2 (1 - s)^2`` with ``s = -i z`` on ``[-1/i, 0]``."""

    i: int

    def __post_init__(self):
        if not (1 <= self.i <= MAX_INDEX):
            raise ModelError(f"mollifier index must lie in [1, {MAX_INDEX}]")

    @property
    def support(self) -> tuple[float, float]:
        return (-1.0 / self.i, 0.0)

    def kernel(self, z):
        return self.i * _bump(-self.i * np.asarray(z, dtype=float))

    def kernel_slope_bound(self) -> float:
        """``C i^2`` bound on ``|w_i'|``; ``C = 30 max |d/ds s^2 (1-s)^2|``."""
        return self.i**2 * 30.0 * (math.sqrt(3.0) / 9.0)

    def chi(self, y, ys: float):
        """``chi_i(y)``: 1 below ``ys - 1/i``, 0 from ``ys`` on, smooth in between."""
        return _smoothstep(self.i * (ys - np.asarray(y, dtype=float)))

    def dchi(self, y, ys: float):
        """``d chi_i / dy``; nonpositive and supported on ``[ys - 1/i, ys]``."""
        return -self.i * _bump(self.i * (ys - np.asarray(y, dtype=float)))

    def mass(self, nodes: int = 8) -> float:
        """Numerical integral of the kernel (exact for this quartic)."""
        x, w = gauss_legendre(nodes, -1.0 / self.i, 0.0)
        return float(np.sum(self.kernel(x) * w))


def smooth_gain(i: int, y, params: ModelParams):
    """Regularised gain factor ``chi_i(y)`` (multiply by ``cs`` for the rate)."""
    return Mollifier(i).chi(y, params.ys)


@dataclass
class RegularizedProblem:
    """Smooth problem with index ``i`` and the reference control ``z_i``."""

    params: ModelParams
    i: int
    tstar: float | None = None      # switch of the bang-bang reference control

    def __post_init__(self):
        self.mollifier = Mollifier(self.i)

    @property
    def penalty(self) -> float:
        return 1.0 / math.sqrt(self.i)

    def z(self, t):
        """Reference control: ``bang_bang(tstar)`` with a linear ramp of width ``1/i``."""
        p = self.params
        t = np.asarray(t, dtype=float)
        if self.tstar is None:
            return np.full(t.shape, 1.0)
        ramp = np.clip((t - self.tstar) * self.i + 0.5, 0.0, 1.0)
        return p.w + (1.0 - p.w) * ramp

    def z_breaks(self) -> list[float]:
        if self.tstar is None:
            return []
        h = 0.5 / self.i
        return [self.tstar - h, self.tstar + h]


# -- forward pass --------------------------------------------------------------------

def level_time(y0: float, level: float, u: Control, params: ModelParams) -> float:
    """First time the maturity reaches ``level``; ``inf`` if not by ``t1``."""
    if y0 >= level:
        return params.t0
    y = y0
    for a, b, v in u.segments():
        tau = transit_time(y, level, v, params)
        if a + tau <= b:
            return a + tau
        y = flow_segment(y, b - a, v, params)
    return math.inf


@dataclass
class RegularizedPath:
    particle: Particle
    t_bar: float                 # x2 = ys - 1/i
    t_hat: float                 # x2 = ys
    pieces: list = field(default_factory=list)    # (ta, tb, u, dense sol of (x2, x3))

    def _piece(self, t):
        for ta, tb, v, sol in self.pieces:
            if t <= tb:
                return ta, tb, v, sol
        return self.pieces[-1]

    def state(self, t: float) -> tuple[float, float, float]:
        _, _, _, sol = self._piece(t)
        x2, x3 = sol(t)
        return self.particle.x1 + (t - self.pieces[0][0]), float(x2), float(x3)

    def control(self, t: float) -> float:
        return self._piece(t)[2]

    @property
    def final(self) -> tuple[float, float]:
        _, tb, _, sol = self.pieces[-1]
        x2, x3 = sol(tb)
        return float(x2), float(x3)

    def breaks(self) -> list[float]:
        return [self.pieces[0][0], *[pc[1] for pc in self.pieces]]


def _regular_breaks(u: Control, params: ModelParams, extra: Sequence[float]) -> list[float]:
    pts = {params.t0, params.t1, *u.times}
    pts.update(t for t in extra if params.t0 < t < params.t1)
    return sorted(pts)


def simulate_regularized(problem: RegularizedProblem, ens: Ensemble, u: Control,
                         rtol: float = ODE_RTOL, atol: float = ODE_ATOL) -> list[RegularizedPath]:
    """Integrate ``x2' = a + b u``, ``x3' = cs chi_i(x2) x3`` for every mass.

    The right-hand side is smooth in the state, so no event handling is
    used; the integration is only restarted at control switches and at the
    times the maturity enters and leaves the layer ``[ys - 1/i, ys]`` so the
    adaptive step cannot stride over the layer.
    """
    p, mol = problem.params, problem.mollifier
    paths = []
    for q in ens:
        t_bar = level_time(q.x2, p.ys - 1.0 / problem.i, u, p)
        t_hat = level_time(q.x2, p.ys, u, p)
        path = RegularizedPath(q, t_bar, t_hat)
        z = [q.x2, q.x3]
        edges = _regular_breaks(u, p, [t_bar, t_hat])
        for ta, tb in zip(edges, edges[1:]):
            v = u(0.5 * (ta + tb))

            def rhs(t, s, v=v):
                return [velocity_a(s[0]) + velocity_b(s[0], p) * v, p.cs * mol.chi(s[0], p.ys) * s[1]]

            sol = solve_ivp(rhs, (ta, tb), z, method=ODE_METHOD, rtol=rtol, atol=atol, dense_output=True)
            if not sol.success:
                raise ModelError(f"regularised forward solve failed for i={problem.i}: {sol.message}")
            path.pieces.append((ta, tb, v, sol.sol))
            z = list(sol.y[:, -1])
        paths.append(path)
    return paths


# -- costates ---------------------------------------------------------------------------

@dataclass
class RegularizedAdjoint:
    path: RegularizedPath
    pieces: list = field(default_factory=list)   # (ta, tb, dense sol of (psi2, psi3))

    def psi(self, t: float) -> tuple[float, float, float]:
        for ta, tb, sol in self.pieces:
            if ta <= t <= tb:
                p2, p3 = sol(t)
                return 0.0, float(p2), float(p3)
        raise ModelError(f"time {t} outside the adjoint horizon")


def _costate_rhs(problem: RegularizedProblem, path: RegularizedPath, v: float):
    p, mol = problem.params, problem.mollifier

    def rhs(t, s):
        _, x2, x3 = path.state(t)
        psi2, psi3 = s
        lin = -2.0 * x2 + p.c1 * v
        chi, dchi = mol.chi(x2, p.ys), mol.dchi(x2, p.ys)
        d2 = -lin * (psi2 + x3) - p.cs * chi * x3 - p.cs * dchi * x3 * (psi3 + x2)
        d3 = -p.cs * chi * (psi3 + x2) - (velocity_a(x2) + velocity_b(x2, p) * v)
        return [d2, d3]

    return rhs


def adjoint_regularized(problem: RegularizedProblem, paths: list[RegularizedPath],
                        rtol: float = ODE_RTOL, atol: float = ODE_ATOL) -> list[RegularizedAdjoint]:
    """Backward solve of the smooth costate system from zero terminal values."""
    out = []
    for path in paths:
        adj = RegularizedAdjoint(path)
        s = [0.0, 0.0]
        for ta, tb, v, _ in reversed(path.pieces):
            sol = solve_ivp(_costate_rhs(problem, path, v), (tb, ta), s, method=ODE_METHOD,
                            rtol=rtol, atol=atol, dense_output=True)
            if not sol.success:
                raise ModelError(f"regularised adjoint solve failed for i={problem.i}: {sol.message}")
            adj.pieces.insert(0, (ta, tb, sol.sol))
            s = list(sol.y[:, -1])
        out.append(adj)
    return out


# -- cost ------------------------------------------------------------------------------------

def penalty_integral(problem: RegularizedProblem, u: Control) -> float:
    """``int |u - z_i|^2 dt``, exact (piecewise quadratic integrand)."""
    p = problem.params
    edges = sorted({p.t0, p.t1, *u.times, *[t for t in problem.z_breaks() if p.t0 < t < p.t1]})
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        x, w = gauss_legendre(3, a, b)
        total += float(np.sum((u(x) - problem.z(x)) ** 2 * w))
    return total


def regularized_cost(problem: RegularizedProblem, ens: Ensemble, u: Control) -> float:
    """``J_i(u)``: terminal maturity moment plus the ``1/sqrt(i)`` tracking penalty.

    The running integral of ``(a + b u + cs chi_i x2) x3`` is the time
    derivative of ``x2 x3``, so the cost only needs terminal states.
    """
    paths = simulate_regularized(problem, ens, u)
    terminal = -sum(x2 * x3 for x2, x3 in (path.final for path in paths))
    return terminal + problem.penalty * penalty_integral(problem, u)


def regularized_gap(params: ModelParams, ens: Ensemble, tstar: float, i: int,
                    half_width: float | None = None, n: int = 41) -> tuple[float, float]:
    """Best ``J_i`` over bang-bang switches near ``tstar`` versus ``J_i`` at ``tstar``.

    Returns ``(J_i(best) - J_i(tstar), best switch)``; the difference is
    nonpositive and tends to zero as ``i`` grows.
    """
    half_width = 20.0 / i if half_width is None else half_width
    prob = RegularizedProblem(params, i, tstar)
    at = regularized_cost(prob, ens, Control.bang_bang(tstar, params))
    best, arg = at, tstar
    for t in np.linspace(tstar - half_width, tstar + half_width, n):
        j = regularized_cost(prob, ens, Control.bang_bang(float(t), params))
        if j < best:
            best, arg = j, float(t)
    return best - at, arg


def projected_gradient(problem: RegularizedProblem, ens: Ensemble, u0: Control, cells: int = 200,
                       iters: int = 200, step: float = 1.0, tol: float = 1e-10):
    """Projected gradient on step controls over a uniform mesh (optional inner solve).

    The gradient of ``J_i`` with respect to the level on a cell is minus the
    cell integral of ``d H_i / d u = b(x2) (x3 + psi2) - 2 (u - z_i)/sqrt(i)``,
    summed over masses.  Steps are projected onto ``[w, 1]`` and accepted
    by Armijo backtracking.
    """
    p = problem.params
    mesh = np.linspace(p.t0, p.t1, cells + 1)
    mids = 0.5 * (mesh[:-1] + mesh[1:])
    levels = np.clip(u0(mids), p.w, 1.0)

    def control(vals):
        times, values = [], [float(vals[0])]
        for t, v in zip(mesh[1:-1], vals[1:]):
            if v != values[-1]:
                times.append(float(t))
                values.append(float(v))
        return Control(tuple(times), tuple(values), p.t0, p.t1, label="projected-gradient")

    def cost_and_grad(vals):
        u = control(vals)
        paths = simulate_regularized(problem, ens, u)
        adj = adjoint_regularized(problem, paths)
        grad = np.zeros(cells)
        for k, (a, b) in enumerate(zip(mesh[:-1], mesh[1:])):
            x, w = gauss_legendre(4, a, b)
            dh = 0.0
            for path, ad in zip(paths, adj):
                for t, wt in zip(x, w):
                    _, y, m = path.state(t)
                    dh += wt * velocity_b(y, p) * (m + ad.psi(t)[1])
            dh -= 2.0 * problem.penalty * float(np.sum((vals[k] - problem.z(x)) * w))
            grad[k] = -dh
        terminal = -sum(x2 * x3 for x2, x3 in (path.final for path in paths))
        return terminal + problem.penalty * penalty_integral(problem, u), grad

    j, g = cost_and_grad(levels)
    history = [j]
    for _ in range(iters):
        t = step
        while t > 1e-12:
            trial = np.clip(levels - t * g, p.w, 1.0)
            jt, gt = cost_and_grad(trial)
            if jt <= j - 1e-4 * float(np.dot(g, levels - trial)):
                break
            t *= 0.5
        else:
            break
        if abs(j - jt) <= tol * max(1.0, abs(j)):
            levels, j, g = trial, jt, gt
            history.append(j)
            break
        levels, j, g = trial, jt, gt
        history.append(j)
    return control(levels), history


# -- jump bracket convergence --------------------------------------------------------------

@dataclass
class LayerResult:
    i: int
    t_bar: float
    t_hat: float
    A: float
    B: float
    delta: float
    bracket: tuple
    inflated: tuple
    layer_width: float
    predicted_width: float

    @property
    def inside(self) -> bool:
        return self.inflated[0] <= self.delta <= self.inflated[1]

    @property
    def split_residual(self) -> float:
        return abs(self.A + self.B - self.delta) / max(1.0, abs(self.delta))


@dataclass
class BracketConvergence:
    rows: list
    hybrid_jump: float
    bracket: tuple

    def a_rate(self) -> float:
        """Slope of ``log |A(i)|`` against ``log i``."""
        x = np.log([r.i for r in self.rows])
        y = np.log([abs(r.A) for r in self.rows])
        return float(np.polyfit(x, y, 1)[0])

    def a_decreasing(self) -> bool:
        a = [abs(r.A) for r in self.rows]
        return all(q < p for p, q in zip(a, a[1:]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("i,A_i,Delta_i,bracket_lo,bracket_hi,inside,layer_width\n")
        for r in self.rows:
            buf.write(f"{r.i},{float(r.A)!r},{float(r.delta)!r},{float(r.inflated[0])!r},{float(r.inflated[1])!r},"
                      f"{str(r.inside).lower()},{float(r.layer_width)!r}\n")
        return buf.getvalue()


def _layer_integrals(problem: RegularizedProblem, path: RegularizedPath, adj: RegularizedAdjoint,
                     nodes: int = 64) -> tuple[float, float]:
    """``A(i)`` and ``B(i)`` by Gauss-Legendre panels over ``[t_bar, t_hat]``."""
    p, mol = problem.params, problem.mollifier
    edges = sorted({path.t_bar, path.t_hat, *[b for b in path.breaks() if path.t_bar < b < path.t_hat]})
    A = B = 0.0
    for a, b in zip(edges, edges[1:]):
        for lo, hi in zip(np.linspace(a, b, 9)[:-1], np.linspace(a, b, 9)[1:]):
            x, w = gauss_legendre(nodes // 8, lo, hi)
            for t, wt in zip(x, w):
                _, x2, x3 = path.state(t)
                _, psi2, psi3 = adj.psi(t)
                v = path.control(t)
                lin = -2.0 * x2 + p.c1 * v
                A -= wt * (lin * (psi2 + x3) + p.cs * mol.chi(x2, p.ys) * x3)
                B -= wt * p.cs * x3 * (x2 + psi3) * mol.dchi(x2, p.ys)
    return float(A), float(B)


def layer_increment(params: ModelParams, ens: Ensemble, u: Control, i: int, k: int = 0,
                    inflation: float | None = None) -> LayerResult:
    """Regularised ``psi2`` increment across the layer for mass ``k``.

    The bracket comes from the hybrid solution (state and ``psi3`` at the
    exit).  It is widened on both sides by ``inflation`` times its own
    magnitude, ``10/i`` by default.
    """
    inflation = 10.0 / i if inflation is None else inflation
    traj = simulate(ens, u)
    jump = backward_adjoint(traj)[k].jump
    t_hat = traj.paths[k].exit
    if jump is None or jump.at_horizon:
        raise ModelError("the hybrid trajectory of this mass does not cross ys inside (t0, t1)")
    lo, hi = min(jump.lower, jump.upper), max(jump.lower, jump.upper)

    prob = RegularizedProblem(params, i, None)
    paths = simulate_regularized(prob, ens, u)
    adj = adjoint_regularized(prob, paths)
    path, ad = paths[k], adj[k]
    delta = ad.psi(path.t_hat)[1] - ad.psi(path.t_bar)[1]
    A, B = _layer_integrals(prob, path, ad)
    slow = velocity_a(params.ys) + velocity_b(params.ys, params) * u.left_limit(t_hat)
    return LayerResult(i, path.t_bar, path.t_hat, A, B, delta, (lo, hi),
                       (lo - inflation * abs(lo), hi + inflation * abs(hi)),
                       path.t_hat - path.t_bar, 1.0 / (i * slow))


def _layer_job(args):
    return layer_increment(*args)


def jump_bracket_convergence(params: ModelParams, ens: Ensemble, u: Control,
                             schedule: Sequence[int] = (10**2, 10**3, 10**4, 10**5), k: int = 0,
                             workers: int = 1) -> BracketConvergence:
    """Layer increments along an index schedule, with the hybrid jump for reference.

    Each index is an independent run, so ``workers > 1`` spreads the
    schedule over processes; the rows come back in schedule order.
    """
    traj = simulate(ens, u)
    jump = backward_adjoint(traj)[k].jump
    jobs = [(params, ens, u, int(i), k) for i in schedule]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            rows = list(pool.map(_layer_job, jobs))
    else:
        rows = [_layer_job(j) for j in jobs]
    value = jump.value if jump is not None else math.nan
    return BracketConvergence(rows, value, rows[0].bracket)
