"""Measure-valued solutions by transport along characteristics.

An initial measure is held either as weighted points or as a density on
``[0, 1] x [0, ys]`` together with a tensor Gauss-Legendre rule.  Every
quantity is evaluated by pushing the quadrature nodes (or points) forward
with the closed-form maturation flow and reweighting by the accumulated
proliferation factor ``exp(cs * (min(t, e) - t0))``.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import Ensemble, Particle, cost_J, simulate
from .model import (Control, ModelError, ModelParams, entry_maturity, exit_time,
                    riccati_roots, transit_time, velocity_a, velocity_b)

DEFAULT_NODES = 64


def gauss_legendre(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """``n``-point Gauss-Legendre nodes and weights on ``[a, b]``."""
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def composite_gauss(breaks: Sequence[float], n_total: int, order: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Composite rule on the union of ``[breaks[j], breaks[j+1]]``.

    Roughly ``n_total`` nodes are spread over equal-length panels of at most
    ``order`` nodes each, never letting a panel straddle a break point.
    """
    breaks = sorted(set(float(b) for b in breaks))
    length = breaks[-1] - breaks[0]
    panels = max(1, math.ceil(n_total / order))
    xs, ws = [], []
    for a, b in zip(breaks, breaks[1:]):
        k = max(1, round(panels * (b - a) / length))
        edges = np.linspace(a, b, k + 1)
        per = max(2, min(order, math.ceil(n_total / panels)))
        for lo, hi in zip(edges, edges[1:]):
            x, w = gauss_legendre(per, lo, hi)
            xs.append(x)
            ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


# -- vectorised characteristics ----------------------------------------------

def push_forward(y0: np.ndarray, u: Control, params: ModelParams, t: float | None = None):
    """Maturity at ``t`` and exit time for every entry of ``y0``.

    Returns ``(y, e)`` with ``e = t1 + 1`` for cells that have not reached
    ``ys`` by ``t1``.  Exit times beyond ``t`` are still reported when they
    happen before ``t1``.
    """
    t = params.t1 if t is None else t
    y = np.array(y0, dtype=float)
    y_at = y.copy()
    e = np.where(y >= params.ys, params.t0, params.t1 + 1.0)
    for a, b, v in u.segments(params.t0, params.t1):
        y_minus, y_plus, d = riccati_roots(v, params)
        below = (y < params.ys) & (e > params.t1)
        if below.any():
            with np.errstate(divide="ignore", invalid="ignore"):
                tau = (np.log((y_plus - y[below]) / (y_plus - params.ys))
                       + np.log((params.ys - y_minus) / (y[below] - y_minus))) / d
            hit = np.isfinite(tau) & (a + tau <= b)
            idx = np.flatnonzero(below)[hit]
            e[idx] = a + tau[hit]
        if a < t <= b:
            y_at = _flow(y, t - a, y_minus, y_plus, d)
        y = _flow(y, b - a, y_minus, y_plus, d)
    return y_at, e


def _flow(y, dt, y_minus, y_plus, d):
    r = (y - y_plus) / (y - y_minus) * np.exp(-d * dt)
    out = y_plus + d * r / (1 - r)
    return np.where(y == y_plus, y, out)


def growth_factor(e: np.ndarray, t: float, params: ModelParams) -> np.ndarray:
    """``exp(int_{t0}^t c(Psi) ds) = exp(cs * (min(t, e) - t0))``."""
    return np.exp(params.cs * (np.minimum(t, e) - params.t0))


# -- initial measures ------------------------------------------------------------

@dataclass
class InitialMeasure:
    """Nonnegative measure on ``[0, 1] x [0, ys]``.

    ``x0, y0, weights`` always hold a particle list; for a density this list
    is its tensor quadrature rule and ``density`` keeps the integrand so the
    rule can be rebuilt at any resolution.
    """

    params: ModelParams
    x0: np.ndarray
    y0: np.ndarray
    weights: np.ndarray
    density: Callable | None = None
    kinks_y: tuple = ()
    label: str = ""
    nodes: tuple = field(default=(0, 0))

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.y0 = np.asarray(self.y0, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if not (self.x0.shape == self.y0.shape == self.weights.shape) or self.x0.ndim != 1:
            raise ModelError("x0, y0 and weights must be one-dimensional arrays of equal length")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ModelError("measure weights must be finite and nonnegative")
        if np.any((self.x0 < 0) | (self.x0 > 1) | (self.y0 < 0) | (self.y0 > self.params.ys)):
            raise ModelError(f"measure support must lie in [0, 1] x [0, {self.params.ys}]")
        if not self.total_mass() > 0:
            raise ModelError("measure must have positive total mass")

    @property
    def is_density(self) -> bool:
        return self.density is not None

    @classmethod
    def from_particles(cls, x0, y0, weights, params: ModelParams) -> "InitialMeasure":
        if np.any(np.asarray(weights, dtype=float) <= 0):
            raise ModelError("particle weights must be positive")
        return cls(params, x0, y0, weights, label="particles")

    @classmethod
    def from_ensemble(cls, ens: Ensemble) -> "InitialMeasure":
        parts = list(ens)
        return cls.from_particles([p.x1 for p in parts], [p.x2 for p in parts],
                                  [p.x3 for p in parts], ens.params)

    @classmethod
    def from_density(cls, density: Callable, params: ModelParams, nx: int = DEFAULT_NODES,
                     ny: int = DEFAULT_NODES, kinks_y: Sequence[float] = (), label: str = "density"):
        """Tensor Gauss-Legendre collocation of a vectorised ``density(x, y)``."""
        if nx < 1 or ny < 1:
            raise ModelError("quadrature sizes must be positive")
        gx, wx = gauss_legendre(nx, 0.0, 1.0)
        gy, wy = gauss_legendre(ny, 0.0, params.ys)
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        W = np.outer(wx, wy) * np.asarray(density(X, Y), dtype=float)
        if np.any(W < 0):
            raise ModelError("density must be nonnegative")
        return cls(params, X.ravel(), Y.ravel(), W.ravel(), density=density,
                   kinks_y=tuple(kinks_y), label=label, nodes=(nx, ny))

    @classmethod
    def uniform(cls, params: ModelParams, mass: float = 1.0, **kw) -> "InitialMeasure":
        """Constant density on ``[0, 1] x [0, ys]`` with the given total mass."""
        height = mass / params.ys
        return cls.from_density(lambda x, y: np.full(np.broadcast(x, y).shape, height), params,
                                label="uniform", **kw)

    def total_mass(self) -> float:
        return math.fsum(self.weights)

    def y_marginal(self, y: np.ndarray, nx: int = DEFAULT_NODES) -> np.ndarray:
        """Density of the ``y``-marginal (integral over ``x`` in ``[0, 1]``)."""
        if not self.is_density:
            raise ModelError("y-marginal density only exists for density-form measures")
        gx, wx = gauss_legendre(nx, 0.0, 1.0)
        y = np.asarray(y, dtype=float)
        vals = self.density(gx[None, :], y[:, None])
        return np.asarray(vals, dtype=float) @ wx

    def to_ensemble(self) -> Ensemble:
        """Particle list as a Dirac ensemble (zero weights dropped, equal y0 merged)."""
        merged: dict[float, list] = {}
        for x, y, w in zip(self.x0, self.y0, self.weights):
            if w <= 0:
                continue
            slot = merged.setdefault(float(y), [0.0, 0.0])
            slot[0] += w * x
            slot[1] += w
        parts = [Particle(s[0] / s[1], y, s[1]) for y, s in merged.items()]
        return Ensemble(parts, self.params)


# -- density files -------------------------------------------------------------------

def read_density_csv(text: str, params: ModelParams) -> InitialMeasure:
    """Grid density: header ``nx,ny,ys``, then ``nx*ny`` row-major values.

    Values sit on the uniform grid ``x_i = i/(nx-1)``, ``y_j = j*ys/(ny-1)``
    and are interpolated bilinearly onto the quadrature nodes.  Grid lines in
    ``y`` are kept as break points for the one-dimensional cost quadrature.
    """
    rows = [r for r in (line.strip() for line in text.splitlines()) if r and not r.startswith("#")]
    if not rows or [c.strip() for c in rows[0].split(",")] != ["nx", "ny", "ys"]:
        raise ModelError("density file: first row must be the header 'nx,ny,ys'")
    try:
        nx, ny, ys = rows[1].split(",")
        nx, ny, ys = int(nx), int(ny), float(ys)
    except (IndexError, ValueError):
        raise ModelError("density file: row 2 must hold integer nx, integer ny and float ys") from None
    if nx < 2 or ny < 2:
        raise ModelError("density file: need nx >= 2 and ny >= 2")
    if not math.isclose(ys, params.ys, rel_tol=1e-12):
        raise ModelError(f"density file: ys={ys} does not match the model threshold {params.ys}")
    values = []
    for lineno, row in enumerate(rows[2:], start=3):
        try:
            values.extend(float(v) for v in row.split(","))
        except ValueError:
            raise ModelError(f"density file: row {lineno} is not a list of numbers: {row!r}") from None
    if len(values) != nx * ny:
        raise ModelError(f"density file: expected {nx * ny} values, found {len(values)}")
    grid = np.array(values).reshape(nx, ny)
    if np.any(grid < 0):
        raise ModelError("density file: values must be nonnegative")
    gx = np.linspace(0.0, 1.0, nx)
    gy = np.linspace(0.0, ys, ny)

    def density(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        i = np.clip(np.searchsorted(gx, x, side="right") - 1, 0, nx - 2)
        j = np.clip(np.searchsorted(gy, y, side="right") - 1, 0, ny - 2)
        s = (x - gx[i]) / (gx[i + 1] - gx[i])
        r = (y - gy[j]) / (gy[j + 1] - gy[j])
        return ((1 - s) * (1 - r) * grid[i, j] + s * (1 - r) * grid[i + 1, j]
                + (1 - s) * r * grid[i, j + 1] + s * r * grid[i + 1, j + 1])

    return InitialMeasure.from_density(density, params, kinks_y=tuple(gy[1:-1]), label="grid")


def write_density_csv(values: np.ndarray, ys: float) -> str:
    values = np.asarray(values, dtype=float)
    nx, ny = values.shape
    buf = io.StringIO()
    buf.write(f"nx,ny,ys\n{nx},{ny},{ys!r}\n")
    for row in values:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


# -- pushforward quantities ---------------------------------------------------------

def pushforward_integrate(rho0: InitialMeasure, u: Control, t: float, phi: Callable) -> float:
    """``<rho(t), phi>`` for the transported and reweighted measure.

    ``phi(x, y)`` must accept arrays.  Node contributions are summed with
    ``math.fsum`` so the result does not depend on evaluation order.
    """
    p = rho0.params
    if not (p.t0 <= t <= p.t1):
        raise ModelError(f"time {t} outside [{p.t0}, {p.t1}]")
    y_t, e = push_forward(rho0.y0, u, p, t)
    vals = np.asarray(phi(rho0.x0 + (t - p.t0), y_t), dtype=float)
    vals = np.broadcast_to(vals, rho0.weights.shape)
    return math.fsum(vals * growth_factor(e, t, p) * rho0.weights)


def moment(rho0: InitialMeasure, u: Control, t: float) -> float:
    """Maturity moment ``M(t) = <rho(t), y>``."""
    return pushforward_integrate(rho0, u, t, lambda x, y: y)


def cost_integrand(y0: np.ndarray, u: Control, params: ModelParams) -> np.ndarray:
    """``-Psi(t1, y0, u) * exp(cs * (min(e, t1) - t0))`` per unit initial mass."""
    y1, e = push_forward(y0, u, params)
    return -y1 * growth_factor(e, params.t1, params)


def cost_breaks(u: Control, params: ModelParams, extra: Sequence[float] = ()) -> list[float]:
    """Initial maturities where the cost integrand may lose smoothness.

    These are the ``y0`` whose exit coincides with a control switch or with
    ``t1``, plus any caller-supplied points (density grid lines).
    """
    pts = {0.0, params.ys}
    for tau in (*u.times, params.t1):
        y = entry_maturity(tau, u, params)
        if 0.0 < y < params.ys:
            pts.add(float(y))
    pts.update(float(y) for y in extra if 0.0 < y < params.ys)
    return sorted(pts)


def cost_measure(rho0: InitialMeasure, u: Control, n: int | None = None) -> float:
    """``J(rho0, u)``; the integrand does not depend on ``x0``.

    Particle measures are summed exactly.  Density measures are integrated
    in ``y0`` only, against their ``y``-marginal, with a composite
    Gauss-Legendre rule of about ``n`` nodes split at :func:`cost_breaks`.
    """
    p = rho0.params
    if not rho0.is_density:
        return math.fsum(cost_integrand(rho0.y0, u, p) * rho0.weights)
    n = 256 if n is None else n
    y, w = composite_gauss(cost_breaks(u, p, rho0.kinks_y), n)
    return math.fsum(cost_integrand(y, u, p) * rho0.y_marginal(y) * w)


def unexited_fraction(rho0: InitialMeasure, u: Control) -> float:
    """Share of initial mass whose exit does not happen by ``t1``."""
    _, e = push_forward(rho0.y0, u, rho0.params)
    return math.fsum(rho0.weights[e > rho0.params.t1]) / rho0.total_mass()


# -- Dirac approximation ----------------------------------------------------------------

def level_shape(n: int) -> tuple[int, int]:
    """Split ``n`` points into ``nx * ny`` with ``nx <= ny`` as square as possible."""
    if n < 1:
        raise ModelError("number of points must be at least 1")
    nx = max(d for d in range(1, math.isqrt(n) + 1) if n % d == 0)
    return nx, n // nx


def discretize(rho0: InitialMeasure, n: int) -> InitialMeasure:
    """``n``-point Dirac approximation by tensor quadrature-node collocation."""
    if not rho0.is_density:
        # atoms are split into equal copies, so every level is the same measure
        m = len(rho0.weights)
        if n % m:
            raise ModelError(f"a measure of {m} atoms can only be discretized at multiples of {m}")
        r = n // m
        return InitialMeasure(rho0.params, np.repeat(rho0.x0, r), np.repeat(rho0.y0, r),
                              np.repeat(rho0.weights / r, r), label=rho0.label)
    nx, ny = level_shape(n)
    dis = InitialMeasure.from_density(rho0.density, rho0.params, nx=nx, ny=ny, kinks_y=rho0.kinks_y)
    return InitialMeasure(rho0.params, dis.x0, dis.y0, dis.weights, label=f"dirac({n})")


@dataclass
class ConvergenceStudy:
    levels: list
    costs: list
    reference: float
    reference_nodes: int

    @property
    def errors(self) -> list[float]:
        return [abs(j - self.reference) for j in self.costs]

    @property
    def monotone(self) -> bool:
        err = self.errors
        return all(b < a for a, b in zip(err, err[1:]))

    @property
    def finest_relative(self) -> float:
        return self.errors[-1] / abs(self.reference)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("level,n,J,abs_dJ\n")
        for k, (n, j, err) in enumerate(zip(self.levels, self.costs, self.errors)):
            buf.write(f"{k},{n},{j!r},{err!r}\n")
        return buf.getvalue()


def dirac_convergence(rho0: InitialMeasure, u: Control, levels: Sequence[int] = (16, 64, 256, 1024),
                      reference_nodes: int = 10_000) -> ConvergenceStudy:
    """Costs of the Dirac approximations against a fine quadrature reference."""
    ref = cost_measure(rho0, u, n=reference_nodes)
    costs = [cost_measure(discretize(rho0, n), u) for n in levels]
    return ConvergenceStudy(list(levels), costs, ref, reference_nodes)


# -- duality and exit-time continuity ---------------------------------------------

@dataclass
class DualityReport:
    t_ext: float
    t1: float
    times: np.ndarray
    increments: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.all(self.increments > 0))

    @property
    def min_increment(self) -> float:
        return float(self.increments.min()) if self.increments.size else math.inf


def extend_control(u: Control, t_ext: float, params: ModelParams) -> Control:
    """``u`` on ``[t0, t_ext)`` followed by ``1`` up to ``t1``."""
    if t_ext >= params.t1:
        return u
    times = [t for t in u.times if t < t_ext]
    values = [u(t) for t in [params.t0, *times]]
    if t_ext > params.t0:
        times.append(t_ext)
        values.append(1.0)
    else:
        times, values = [], [1.0]
    # merge equal neighbours so the switch list stays strictly meaningful
    ts, vs = [], [values[0]]
    for t, v in zip(times, values[1:]):
        if v != vs[-1]:
            ts.append(t)
            vs.append(v)
    return Control(tuple(ts), tuple(vs), params.t0, params.t1, label=f"{u.label}+ext({t_ext:g})")


def moment_increments(y_start: np.ndarray, mass_start: np.ndarray, exits: np.ndarray,
                      times: np.ndarray, params: ModelParams) -> np.ndarray:
    """``M(t_{j+1}) - M(t_j)`` under ``u = 1`` without cancellation.

    ``y_start``/``mass_start`` are states at ``times[0]``; ``exits`` the exit
    times under the extended control (growth stops there).  The maturity
    increment uses ``D r (e^{-D dt} - 1) / ((1 - r)(1 - r'))``, which keeps
    full relative accuracy even when the state sits within 1e-70 of the
    asymptotic maturity.
    """
    y = np.asarray(y_start, dtype=float)
    if np.any(y >= params.ybar):
        raise ModelError("extension requires every maturity strictly below the asymptotic maturity")
    y_minus, y_plus, d = riccati_roots(1.0, params)
    r0 = (y - y_plus) / (y - y_minus)
    mass0 = np.asarray(mass_start, dtype=float)
    out = []
    for ta, tb in zip(times, times[1:]):
        ra = r0 * np.exp(-d * (ta - times[0]))
        dy = d * ra * np.expm1(-d * (tb - ta)) / ((1 - ra) * (1 - ra * np.exp(-d * (tb - ta))))
        ya = y_plus + d * ra / (1 - ra)
        grow_a = np.minimum(ta, exits) - times[0]
        grow_b = np.minimum(tb, exits) - times[0]
        ma = mass0 * np.exp(params.cs * np.maximum(grow_a, 0.0))
        dm = ma * np.expm1(params.cs * np.maximum(grow_b - grow_a, 0.0))
        out.append(math.fsum((ma + dm) * dy + ya * dm))
    return np.array(out)


def duality_check(rho0: InitialMeasure, u: Control, t_ext: float, n: int = 400) -> DualityReport:
    """Extend ``u`` by ``1`` after ``t_ext`` and test that ``M`` strictly increases."""
    p = rho0.params
    if not (p.t0 <= t_ext <= p.t1):
        raise ModelError(f"extension start {t_ext} outside [{p.t0}, {p.t1}]")
    if t_ext == p.t1:
        return DualityReport(t_ext, p.t1, np.array([p.t1]), np.array([]))
    ext = extend_control(u, t_ext, p)
    y_start, e = push_forward(rho0.y0, ext, p, t_ext)
    mass = rho0.weights * growth_factor(e, t_ext, p)
    times = np.linspace(t_ext, p.t1, n + 1)
    inc = moment_increments(y_start, mass, e, times, p)
    return DualityReport(t_ext, p.t1, times, inc)


@dataclass
class ContinuityProbe:
    n: list
    differences: list
    tol: float

    @property
    def converged(self) -> bool:
        return self.differences[-1] <= self.tol

    def rate(self) -> float:
        """Least-squares slope of ``log |e_n - e|`` against ``log n`` (exact hits skipped)."""
        pts = [(math.log(n), math.log(d)) for n, d in zip(self.n, self.differences) if d > 0]
        if len(pts) < 2:
            return -math.inf
        x, y = np.array(pts).T
        return float(np.polyfit(x, y, 1)[0])

    def within(self, bound: Callable[[int], float]) -> bool:
        return all(d <= bound(n) for n, d in zip(self.n, self.differences))


def chattering_control(n: int, mean: float, params: ModelParams) -> Control:
    """Alternate ``w`` and ``1`` on cells of width ``1/n`` with average ``mean``.

    Each cell is ``w, 1, w`` with the ``1`` phase centred, which removes the
    first-order phase error of a one-sided duty cycle.
    """
    if not (params.w <= mean <= 1.0):
        raise ModelError("mean control must lie in [w, 1]")
    theta = (mean - params.w) / (1.0 - params.w)
    if theta in (0.0, 1.0):
        return Control.constant(mean, params)
    h = 1.0 / n
    times, values = [], [params.w]
    start = params.t0
    while start < params.t1:
        on, off = start + 0.5 * (1 - theta) * h, start + 0.5 * (1 + theta) * h
        for t, v in ((on, 1.0), (off, params.w)):
            if t < params.t1:
                times.append(t)
                values.append(v)
        start += h
    return Control(tuple(times), tuple(values), params.t0, params.t1, label=f"chatter({n},{mean:g})")


def exit_time_continuity_probe(y0s: Sequence[float], controls: Sequence[Control], y0: float,
                               u: Control, params: ModelParams, ns: Sequence[int] | None = None,
                               tol: float = 1e-3) -> ContinuityProbe:
    """``|e(y0_n, u_n) - e(y0, u)|`` along a sequence of data indexed by ``ns``."""
    target = exit_time(y0, u, params)
    diffs = [abs(exit_time(y, c, params) - target) for y, c in zip(y0s, controls)]
    ns = list(range(1, len(diffs) + 1)) if ns is None else list(ns)
    return ContinuityProbe(ns, diffs, tol)


def exit_lipschitz(params: ModelParams) -> float:
    """Bound on ``|de/dy0|`` from the slowest speed on ``[0, ys]``."""
    return 1.0 / (velocity_a(params.ys) + velocity_b(params.ys, params) * params.w)


def check_particle_consistency(ens: Ensemble, u: Control) -> float:
    """Largest gap between the measure and the Dirac-ensemble computations."""
    rho = InitialMeasure.from_ensemble(ens)
    traj = simulate(ens, u)
    p = ens.params
    gaps = [abs(cost_measure(rho, u) - cost_J(ens, u)) / max(1.0, abs(cost_J(ens, u)))]
    for t in np.linspace(p.t0, p.t1, 7):
        mass = pushforward_integrate(rho, u, t, lambda x, y: np.ones_like(y))
        gaps.append(abs(mass - traj.state(t)[:, 2].sum()) / max(1.0, mass))
        m = moment(rho, u, t)
        gaps.append(abs(m - traj.moment(t)) / max(1.0, abs(m)))
    return max(gaps)
