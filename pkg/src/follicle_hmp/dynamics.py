"""Forward simulation of weighted Dirac masses under the hybrid vector field.

Each mass carries ``(x1, x2, x3)`` = (age, maturity, weight).  Age drifts at
unit speed, maturity follows the Riccati flow, and the weight grows at rate
``cs`` until the maturity reaches ``ys``.  Crossing times come from the
closed-form transit time on each constant control piece, so the stored
trajectory is exact up to rounding and can be queried at any time.
"""

from __future__ import annotations

import bisect
import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import quad, solve_ivp

from .model import (
    ODE_ATOL,
    ODE_METHOD,
    ODE_RTOL,
    Control,
    ModelError,
    ModelParams,
    flow_segment,
    gain_c,
    not_exited,
    riccati_roots,
    transit_time,
    velocity_a,
    velocity_b,
)


@dataclass(frozen=True)
class Particle:
    x1: float
    x2: float
    x3: float


class Ensemble:
    """Weighted Dirac masses sorted by strictly increasing initial maturity."""

    def __init__(self, particles: Sequence, params: ModelParams):
        parts = [p if isinstance(p, Particle) else Particle(*map(float, p)) for p in particles]
        if not parts:
            raise ModelError("an ensemble needs at least one particle")
        for p in parts:
            if not p.x3 > 0:
                raise ModelError(f"particle weight must be > 0 (got {p.x3})")
            if not (0.0 <= p.x1 <= 1.0 and 0.0 <= p.x2 <= params.ys):
                raise ModelError(f"particle ({p.x1}, {p.x2}) outside [0,1] x [0, ys]")
        parts.sort(key=lambda p: p.x2)
        for p, q in zip(parts, parts[1:]):
            if p.x2 == q.x2:
                raise ModelError(f"equal initial maturities {p.x2}: merge the weights instead")
        self.particles = tuple(parts)
        self.params = params

    def __len__(self):
        return len(self.particles)

    def __iter__(self):
        return iter(self.particles)

    def scaled(self, factor: float) -> "Ensemble":
        return Ensemble([Particle(p.x1, p.x2, p.x3 * factor) for p in self], self.params)

    def with_params(self, params: ModelParams) -> "Ensemble":
        return Ensemble(self.particles, params)

    @classmethod
    def single(cls, params: ModelParams, x2: float = 0.0, x3: float = 1.0, x1: float = 0.0):
        return cls([Particle(x1, x2, x3)], params)

    def initial_moment(self) -> float:
        return sum(p.x2 * p.x3 for p in self)

    def total_mass(self) -> float:
        return sum(p.x3 for p in self)


# -- per-particle semi-analytic path ----------------------------------------

@dataclass(frozen=True)
class Piece:
    ta: float
    tb: float
    u: float
    y: float        # maturity at ta
    mass: float     # weight at ta
    growing: bool   # proliferation phase on (ta, tb)


class ParticlePath:
    """Closed-form trajectory of one Dirac mass under a step control."""

    def __init__(self, particle: Particle, u: Control, params: ModelParams, m=math):
        self.particle = particle
        self.params = params
        self.control = u
        self.m = m
        self.exit = not_exited(params)
        pieces = []
        y, mass = m.mpf(particle.x2) if m is not math else particle.x2, particle.x3
        span = self.span
        if y >= params.ys:
            self.exit = params.t0
        for a, b, v in u.segments():
            growing = y < params.ys
            if growing:
                tau = transit_time(y, params.ys, v, params, m)
                if a + tau < b:
                    mid = a + tau
                    pieces.append(Piece(a, mid, v, y, mass, True))
                    self.exit = mid
                    mass = mass * m.exp(params.cs * span(a, mid))
                    y, a, growing = params.ys, mid, False
                elif a + tau == b:
                    self.exit = b
            pieces.append(Piece(a, b, v, y, mass, growing))
            y = params.ys if b == self.exit else flow_segment(y, span(a, b), v, params, m)
            mass = mass * m.exp(params.cs * span(a, b)) if growing else mass
        self.pieces = tuple(pieces)
        self._starts = [pc.ta for pc in pieces]
        self.final = (y, mass)

    def span(self, a, b):
        """``b - a`` in the working precision (plain floats would round first)."""
        if self.m is math:
            return b - a
        return self.m.mpf(b) - self.m.mpf(a)

    def piece(self, t: float) -> Piece:
        """Piece active at ``t`` (right-continuous: the later piece at a boundary)."""
        return self.pieces[max(0, bisect.bisect_right(self._starts, t) - 1)]

    def state(self, t: float) -> tuple[float, float, float]:
        """``(x1, x2, x3)`` at time ``t``."""
        p = self.params
        x1 = self.particle.x1 + (t - p.t0)
        if t >= p.t1:
            return x1, self.final[0], self.final[1]
        pc = self.piece(t)
        dt = self.span(pc.ta, t)
        y = flow_segment(pc.y, dt, pc.u, p, self.m)
        mass = pc.mass * self.m.exp(p.cs * dt) if pc.growing else pc.mass
        return x1, y, mass

    def states(self, ts) -> np.ndarray:
        """Vectorised :meth:`state`; returns an array of shape ``(len(ts), 3)``."""
        ts = np.asarray(ts, dtype=float)
        out = np.empty((ts.size, 3))
        out[:, 0] = self.particle.x1 + (ts - self.params.t0)
        idx = np.clip(np.searchsorted(self._starts, ts, side="right") - 1, 0, len(self.pieces) - 1)
        for j, pc in enumerate(self.pieces):
            sel = idx == j
            if not sel.any():
                continue
            dt = ts[sel] - pc.ta
            y_minus, y_plus, d = riccati_roots(pc.u, self.params)
            if pc.y == y_plus:
                out[sel, 1] = pc.y
            else:
                r = (pc.y - y_plus) / (pc.y - y_minus) * np.exp(-d * dt)
                out[sel, 1] = y_plus + d * r / (1 - r)
            out[sel, 2] = pc.mass * np.exp(self.params.cs * dt) if pc.growing else pc.mass
        end = ts >= self.params.t1
        out[end, 1:] = self.final
        return out

    def smooth_intervals(self) -> list[tuple[float, float]]:
        return [(pc.ta, pc.tb) for pc in self.pieces]


class Trajectory:
    """Ensemble trajectory: one :class:`ParticlePath` per Dirac mass."""

    def __init__(self, ens: Ensemble, u: Control):
        self.ensemble = ens
        self.params = ens.params
        self.control = u
        self.paths = [ParticlePath(p, u, ens.params) for p in ens]

    @property
    def exit_times(self) -> list[float]:
        return [path.exit for path in self.paths]

    def state(self, t: float) -> np.ndarray:
        return np.array([path.state(t) for path in self.paths])

    def states(self, ts) -> np.ndarray:
        """Array of shape ``(len(ts), N, 3)``."""
        return np.stack([path.states(ts) for path in self.paths], axis=1)

    def final_states(self) -> np.ndarray:
        return np.array([(path.particle.x1 + self.params.t1 - self.params.t0, *path.final)
                         for path in self.paths])

    def moment(self, t: float) -> float:
        s = self.state(t)
        return float(np.sum(s[:, 1] * s[:, 2]))

    def moments(self, ts) -> np.ndarray:
        s = self.states(ts)
        return np.sum(s[..., 1] * s[..., 2], axis=1)

    def grid(self, n: int = 2001) -> np.ndarray:
        return np.linspace(self.params.t0, self.params.t1, n)


def simulate(ens: Ensemble, u: Control) -> Trajectory:
    u.check(ens.params)
    return Trajectory(ens, u)


def cost_J(ens: Ensemble, u: Control) -> float:
    """Terminal cost ``-sum_k x2^k(t1) x3^k(t1)``."""
    u.check(ens.params)
    return -sum(y * m for y, m in (ParticlePath(p, u, ens.params).final for p in ens))


def maturity_moment(traj: Trajectory, t: float) -> float:
    """``M(t) = sum_k x2^k(t) x3^k(t)``; equals ``-cost_J`` at ``t1``."""
    return traj.moment(t)


def running_cost(x2, x3, u, params: ModelParams):
    """Integrand ``f0`` of the equivalent Lagrange form of the cost."""
    return -(velocity_a(x2) + velocity_b(x2, params) * u + gain_c(x2, params) * x2) * x3


def cost_J_running(ens: Ensemble, u: Control, epsabs: float = 1e-13) -> float:
    """Lagrange form ``sum_k int f0 dt - sum_k x2^k0 x3^k0`` by adaptive quadrature."""
    traj = simulate(ens, u)
    total = 0.0
    for path in traj.paths:
        for pc in path.pieces:
            def f(t, pc=pc, path=path):
                _, y, m = path.state(t)
                # inside a piece the phase is fixed; evaluate the gain by phase
                c = ens.params.cs if pc.growing else 0.0
                return -(velocity_a(y) + velocity_b(y, ens.params) * pc.u + c * y) * m
            val, _ = quad(f, pc.ta, pc.tb, epsabs=epsabs, epsrel=1e-13, limit=400)
            total += val
    return total - ens.initial_moment()


# -- full ODE oracle ----------------------------------------------------------

def simulate_ode(ens: Ensemble, u: Control, ts, rtol: float = ODE_RTOL,
                 atol: float = ODE_ATOL) -> tuple[np.ndarray, list[float]]:
    """Integrate every particle's 3-state hybrid ODE with integrator event detection.

    Returns states sampled at ``ts`` (shape ``(len(ts), N, 3)``) and the exit
    times found by the integrator's root finder.  Independent of the
    closed-form path.
    """
    p = ens.params
    ts = np.asarray(ts, dtype=float)
    out = np.empty((ts.size, len(ens), 3))
    exits = []

    def field(t, z, v, growing):
        return [1.0, velocity_a(z[1]) + velocity_b(z[1], p) * v, p.cs * z[2] if growing else 0.0]

    def crossing(t, z, v, growing):
        return z[1] - p.ys
    crossing.terminal = True
    crossing.direction = 1

    for k, part in enumerate(ens):
        z = np.array([part.x1, part.x2, part.x3])
        growing = part.x2 < p.ys
        exit_t = not_exited(p) if growing else p.t0
        for a, b, v in u.segments():
            while a < b:
                sel = (ts >= a) & (ts <= b)
                sol = solve_ivp(field, (a, b), z, method=ODE_METHOD, rtol=rtol, atol=atol,
                                dense_output=True, args=(v, growing),
                                events=crossing if growing else None)
                stop = sol.t[-1]
                sel &= ts <= stop
                if sel.any():
                    out[sel, k] = sol.sol(ts[sel]).T
                z = sol.y[:, -1].copy()
                if growing and sol.status == 1:
                    exit_t, growing = stop, False
                    z[1] = p.ys
                a = stop
        exits.append(exit_t)
    return out, exits


# -- CSV interfaces -------------------------------------------------------------

def read_ensemble_csv(text: str, params: ModelParams) -> Ensemble:
    """Parse ``x1,x2,x3`` rows; errors name the offending line."""
    rows = [ln for ln in io.StringIO(text)]
    reader = csv.reader(r for r in rows if not r.lstrip().startswith("#"))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["x1", "x2", "x3"]:
        raise ModelError("ensemble CSV must start with header x1,x2,x3")
    parts = []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise ModelError(f"row {line_no}: expected 3 columns, got {len(row)}")
        try:
            parts.append(Particle(*(float(c) for c in row)))
        except ValueError:
            raise ModelError(f"row {line_no}: non-numeric value in {row!r}") from None
    return Ensemble(parts, params)


def write_ensemble_csv(ens: Ensemble) -> str:
    lines = ["x1,x2,x3"] + [f"{p.x1!r},{p.x2!r},{p.x3!r}" for p in ens]
    return "\n".join(lines) + "\n"


def trajectory_csv(traj: Trajectory, ts) -> str:
    states = traj.states(ts)
    n = len(traj.paths)
    header = ["t"] + [f"x{c}_{k + 1}" for k in range(n) for c in (1, 2, 3)]
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for t, row in zip(ts, states):
        wr.writerow([repr(float(t))] + [repr(float(v)) for v in row.ravel()])
    return buf.getvalue()
