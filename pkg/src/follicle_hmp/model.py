"""Model constants, controls and the scalar maturation flow.

The maturation velocity under a constant control level ``u`` is the
Riccati right-hand side ``-y**2 + c1*u*y + c2*u``.  On every constant
segment of a step control it is solved in closed form through its two
real roots ``y_minus < 0 < y_plus``; the adaptive integrator in
:func:`maturation_flow_ode` is kept as an independent cross-check.
"""

from __future__ import annotations

import bisect
import configparser
import math
from dataclasses import dataclass, field, fields
from typing import Iterator, Sequence

import numpy as np
from scipy.integrate import solve_ivp


class ModelError(ValueError):
    """Invalid model parameters, controls or arguments."""


# scipy's embedded RK pair used everywhere a numerical oracle is needed
ODE_METHOD = "DOP853"
ODE_ATOL = 1e-12
ODE_RTOL = 1e-12


@dataclass(frozen=True)
class ModelParams:
    """Scalar constants of the simplified follicle model.

    Defaults are the published parameter table; ``cs`` has no published
    default and is left to the caller (``1.0`` is only a placeholder so the
    dataclass can be built positionally).
    """

    cs: float = 1.0
    c1: float = 11.892
    c2: float = 2.288
    ys: float = 6.0
    w: float = 0.5
    t0: float = 0.0
    t1: float = 17.0

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, float(getattr(self, f.name)))
        problems = self.violations()
        if problems:
            raise ModelError("; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        for name in ("c1", "c2", "cs", "ys"):
            v = getattr(self, name)
            if not v > 0 and not (name == "cs" and v == 0):
                out.append(f"{name} must be > 0 (got {v})")
        if not self.t1 > self.t0:
            out.append(f"t1 must exceed t0 (got t0={self.t0}, t1={self.t1})")
        if out:
            return out
        lo = self.control_lower_limit
        if not lo < 1:
            out.append(f"ys^2/(c1*ys+c2) = {lo:.6g} must be < 1")
        if not lo < self.w < 1:
            out.append(f"w = {self.w} must lie in (ys^2/(c1*ys+c2), 1) = ({lo:.6g}, 1)")
        return out

    @property
    def control_lower_limit(self) -> float:
        """``ys**2 / (c1*ys + c2)``: infimum of admissible lower bounds ``w``."""
        return self.ys**2 / (self.c1 * self.ys + self.c2)

    @property
    def ybar(self) -> float:
        return asymptotic_maturity(self)

    @property
    def gain_threshold(self) -> float:
        """``(a(ys) + b(ys)) / ys``; the gain must exceed it for the bang-bang theorem."""
        return (velocity_a(self.ys) + velocity_b(self.ys, self)) / self.ys

    def theorem_conditions(self) -> dict:
        """Evaluate the sufficient conditions of the single-switch theorem.

        Horizon condition ``t1 > t_hat_0`` plus ``2*ys - c1 > 0`` and
        ``cs > (a(ys)+b(ys))/ys``.  These are reported, never enforced.
        """
        t_hat0 = exit_time(0.0, Control.constant(self.w, self), self)
        return {
            "horizon": t_hat0 < self.t1,
            "t_hat0": t_hat0,
            "curvature": 2 * self.ys - self.c1 > 0,
            "curvature_margin": 2 * self.ys - self.c1,
            "gain": self.cs > self.gain_threshold,
            "gain_threshold": self.gain_threshold,
            "holds": (t_hat0 < self.t1 and 2 * self.ys - self.c1 > 0
                      and self.cs > self.gain_threshold),
        }

    def replace(self, **changes) -> "ModelParams":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ModelParams(**values)

    # -- flat key=value config -------------------------------------------
    KEYS = ("t0", "t1", "c1", "c2", "cs", "ys", "w")

    def to_config(self) -> str:
        return "".join(f"{k} = {getattr(self, k)!r}\n" for k in self.KEYS)

    @classmethod
    def from_mapping(cls, mapping) -> "ModelParams":
        if "cs" not in mapping:
            raise ModelError("cs has no default and must be given explicitly")
        unknown = set(mapping) - set(cls.KEYS)
        if unknown:
            raise ModelError(f"unknown model keys: {sorted(unknown)}")
        try:
            values = {k: float(mapping[k]) for k in mapping}
        except ValueError as exc:
            raise ModelError(f"non-numeric model value: {exc}") from None
        return cls(**values)

    @classmethod
    def from_config(cls, text: str, section: str = "model") -> "ModelParams":
        cp = configparser.ConfigParser()
        cp.read_string(text if "[" in text else f"[{section}]\n{text}")
        if not cp.has_section(section):
            raise ModelError(f"config has no [{section}] section")
        return cls.from_mapping(dict(cp[section]))


def table1(cs: float) -> ModelParams:
    """Published default parameters with the given proliferation rate."""
    return ModelParams(cs=cs)


# -- velocities ---------------------------------------------------------------

def velocity_a(y):
    return -y * y


def velocity_b(y, params: ModelParams):
    return params.c1 * y + params.c2


def gain_c(y, params: ModelParams):
    """Proliferation rate: ``cs`` on ``[0, ys)`` and zero from ``ys`` on."""
    if np.ndim(y):
        return np.where(np.asarray(y) < params.ys, params.cs, 0.0)
    return params.cs if y < params.ys else 0.0


def asymptotic_maturity(params: ModelParams) -> float:
    return (params.c1 + math.sqrt(params.c1**2 + 4 * params.c2)) / 2


# -- controls -----------------------------------------------------------------

@dataclass(frozen=True)
class Control:
    """Right-continuous step control on ``[t0, t1]``.

    ``times`` are the switch instants strictly inside ``(t0, t1)``;
    ``values[j]`` holds on ``[times[j-1], times[j])``.
    """

    times: tuple
    values: tuple
    t0: float
    t1: float
    label: str = field(default="", compare=False)

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        values = tuple(float(v) for v in self.values)
        if len(values) != len(times) + 1:
            raise ModelError("need exactly one more control value than switch times")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ModelError("switch times must be strictly increasing")
        if times and not (self.t0 < times[0] and times[-1] < self.t1):
            raise ModelError("switch times must lie strictly inside (t0, t1)")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value: float, params: ModelParams) -> "Control":
        return cls((), (value,), params.t0, params.t1, label=f"const({value:g})")

    @classmethod
    def bang_bang(cls, tstar: float, params: ModelParams, reverse: bool = False) -> "Control":
        """``w`` before ``tstar`` and ``1`` after (``1`` then ``w`` if ``reverse``)."""
        lo, hi = (1.0, params.w) if reverse else (params.w, 1.0)
        label = f"bang_bang({tstar:.12g}{', reverse' if reverse else ''})"
        if tstar <= params.t0:
            return cls((), (hi,), params.t0, params.t1, label=label)
        if tstar >= params.t1:
            return cls((), (lo,), params.t0, params.t1, label=label)
        return cls((tstar,), (lo, hi), params.t0, params.t1, label=label)

    @classmethod
    def steps(cls, times: Sequence[float], values: Sequence[float], params: ModelParams) -> "Control":
        return cls(tuple(times), tuple(values), params.t0, params.t1)

    def __call__(self, t):
        if np.ndim(t):
            idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
            return np.asarray(self.values)[idx]
        return self.values[bisect.bisect_right(self.times, t)]

    def left_limit(self, t: float) -> float:
        return self.values[bisect.bisect_left(self.times, t)]

    def segments(self, start: float | None = None, stop: float | None = None) -> Iterator[tuple]:
        """Yield ``(a, b, u)`` for the constant pieces covering ``[start, stop]``."""
        start = self.t0 if start is None else start
        stop = self.t1 if stop is None else stop
        edges = [self.t0, *self.times, self.t1]
        for j, u in enumerate(self.values):
            a, b = max(edges[j], start), min(edges[j + 1], stop)
            if b > a:
                yield a, b, u

    def is_admissible(self, params: ModelParams) -> bool:
        return all(params.w - 1e-14 <= v <= 1 + 1e-14 for v in self.values)

    def check(self, params: ModelParams) -> "Control":
        if not self.is_admissible(params):
            raise ModelError(f"control values must lie in [w, 1] = [{params.w}, 1]")
        if (self.t0, self.t1) != (params.t0, params.t1):
            raise ModelError("control horizon differs from the model horizon")
        return self

    def mean(self) -> float:
        return sum((b - a) * u for a, b, u in self.segments()) / (self.t1 - self.t0)


# -- closed-form Riccati segments --------------------------------------------

def riccati_roots(u, params: ModelParams, m=math):
    """Roots ``(y_minus, y_plus, y_plus - y_minus)`` of ``-y**2 + c1*u*y + c2*u``.

    ``m`` is the math namespace (``math`` or ``mpmath.mp``).
    """
    c1u = params.c1 * u
    disc = m.sqrt(c1u * c1u + 4 * params.c2 * u)
    y_plus = (c1u + disc) / 2
    # product of the roots is -c2*u; avoids cancellation in (c1u - disc)/2
    y_minus = -params.c2 * u / y_plus
    return y_minus, y_plus, y_plus - y_minus


def flow_segment(y0, dt, u, params: ModelParams, m=math):
    """State after ``dt`` time units at constant control ``u`` starting from ``y0``.

    Valid for ``y0 > y_minus`` and either sign of ``dt`` (backward flow heads
    towards ``y_minus`` without blow-up).
    """
    y_minus, y_plus, d = riccati_roots(u, params, m)
    if y0 == y_plus:
        return y0
    r = (y0 - y_plus) / (y0 - y_minus) * m.exp(-d * dt)
    return y_plus + d * r / (1 - r)


def gap_segment(y0, dt, u, params: ModelParams, m=math):
    """``y_plus - y(dt)`` computed without cancellation (resolves tiny gaps)."""
    y_minus, y_plus, d = riccati_roots(u, params, m)
    r = (y0 - y_plus) / (y0 - y_minus) * m.exp(-d * dt)
    return -d * r / (1 - r)


def velocity_segment(y, u, params: ModelParams):
    return velocity_a(y) + velocity_b(y, params) * u


def transit_time(y0, y1, u, params: ModelParams, m=math):
    """Time to move from ``y0`` to ``y1`` at constant ``u``; ``inf`` if unreachable."""
    if y1 == y0:
        return 0.0
    y_minus, y_plus, d = riccati_roots(u, params, m)
    if not (y0 < y1 < y_plus or y_plus < y1 < y0):
        return math.inf
    return (m.log((y_plus - y0) / (y_plus - y1)) + m.log((y1 - y_minus) / (y0 - y_minus))) / d


def _check_y0(y0, params: ModelParams, upper: float):
    if not (0.0 <= y0 <= upper):
        raise ModelError(f"initial maturity {y0} outside [0, {upper:.12g}]")


def maturation_flow(t: float, y0: float, u: Control, params: ModelParams, t_start: float | None = None):
    """Maturity at time ``t`` of a cell with maturity ``y0`` at ``t_start`` (default ``t0``)."""
    _check_y0(y0, params, params.ybar)
    t_start = params.t0 if t_start is None else t_start
    y = y0
    for a, b, v in u.segments(t_start, t):
        y = flow_segment(y, b - a, v, params)
    return y


def maturation_flow_ode(t: float, y0: float, u: Control, params: ModelParams,
                        rtol: float = ODE_RTOL, atol: float = ODE_ATOL) -> float:
    """Adaptive embedded Runge-Kutta solution of the same flow (oracle path)."""
    _check_y0(y0, params, params.ybar)
    y = y0
    for a, b, v in u.segments(params.t0, t):
        sol = solve_ivp(lambda _, z, v=v: [velocity_segment(z[0], v, params)],
                        (a, b), [y], method=ODE_METHOD, rtol=rtol, atol=atol)
        y = sol.y[0, -1]
    return y


def exit_time(y0: float, u: Control, params: ModelParams, t_start: float | None = None) -> float:
    """First time the maturity reaches ``ys``; ``t1 + 1`` if it does not by ``t1``."""
    _check_y0(y0, params, params.ys)
    t_start = params.t0 if t_start is None else t_start
    if y0 >= params.ys:
        return t_start
    y = y0
    for a, b, v in u.segments(t_start, params.t1):
        tau = transit_time(y, params.ys, v, params)
        if a + tau <= b:
            return a + tau
        y = flow_segment(y, b - a, v, params)
    return not_exited(params)


def not_exited(params: ModelParams) -> float:
    return params.t1 + 1.0


def entry_maturity(tau: float, u: Control, params: ModelParams) -> float:
    """Initial maturity whose trajectory reaches ``ys`` exactly at ``tau``.

    Backward closed-form flow from ``(tau, ys)`` to ``t0``; may be negative
    when no admissible initial maturity exits that late.
    """
    y = params.ys
    pieces = list(u.segments(params.t0, tau))
    for a, b, v in reversed(pieces):
        y = flow_segment(y, a - b, v, params)
    return y
