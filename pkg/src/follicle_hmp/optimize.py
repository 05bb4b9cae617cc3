"""Switching-time search over the bang-bang family ``w -> 1``.

The cost of ``bang_bang(t*)`` is continuous in ``t*`` and smooth between
the exit times of the masses under ``u = w``; it is kinked at those times.
The search therefore scans a uniform grid, then refines each smooth segment
separately and compares the segment winners with the kink points.
"""
from __future__ import annotations

import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .dynamics import Ensemble, cost_J
from .model import Control, ModelParams, exit_time
from .transport import InitialMeasure, cost_measure

DEFAULT_GRID = 1024
DEFAULT_SEED = 20240917
TIE_TOL = 1e-9
REFINE_TOL = 1e-8


def problem_params(problem) -> ModelParams:
    return problem.params


def problem_cost(problem, u: Control) -> float:
    """Cost of ``u`` for a Dirac ensemble or an initial measure."""
    if isinstance(problem, InitialMeasure):
        return cost_measure(problem, u)
    return cost_J(problem, u)


def least_maturity(problem) -> float:
    """Lowest initial maturity present; a density counts from the bottom of its support."""
    if isinstance(problem, InitialMeasure):
        return 0.0 if problem.is_density else float(problem.y0.min())
    return min(q.x2 for q in problem)


def exit_boundaries(problem) -> list[float]:
    """Exit times under ``u = w`` strictly inside ``(t0, t1]``, ascending.

    For a density only the last one (the exit of the least mature cell)
    separates qualitatively different regimes, so that is the single boundary.
    """
    p = problem_params(problem)
    slow = Control.constant(p.w, p)
    if isinstance(problem, InitialMeasure) and problem.is_density:
        y0s = [least_maturity(problem)]
    elif isinstance(problem, InitialMeasure):
        y0s = sorted(set(problem.y0.tolist()))
    else:
        y0s = [q.x2 for q in problem]
    times = sorted({exit_time(y, slow, p) for y in y0s})
    return [t for t in times if p.t0 < t <= p.t1]


def _evaluate(args):
    problem, tstars, reverse = args
    p = problem_params(problem)
    return [problem_cost(problem, Control.bang_bang(t, p, reverse=reverse)) for t in tstars]


def evaluate_family(problem, tstars: Sequence[float], reverse: bool = False, workers: int = 1) -> np.ndarray:
    """``J(bang_bang(t*))`` for every ``t*``; parallel across ``workers`` processes."""
    tstars = list(map(float, tstars))
    if workers <= 1 or len(tstars) < 64:
        return np.array(_evaluate((problem, tstars, reverse)))
    chunks = np.array_split(np.arange(len(tstars)), workers * 4)
    jobs = [(problem, [tstars[i] for i in c], reverse) for c in chunks if len(c)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_evaluate, jobs))
    return np.array([v for part in parts for v in part])


@dataclass
class SweepResult:
    t_star: np.ndarray
    J: np.ndarray
    segment_index: np.ndarray
    exit_times: list
    theorem_conditions: dict
    reverse_J: np.ndarray | None = None

    @property
    def argmin_index(self) -> int:
        # earliest among exact ties: a later switch can only lose maturity
        return int(np.argmin(self.J))

    @property
    def argmin(self) -> float:
        return float(self.t_star[self.argmin_index])

    @property
    def J_min(self) -> float:
        return float(self.J[self.argmin_index])

    @property
    def cell(self) -> float:
        return float(self.t_star[1] - self.t_star[0]) if len(self.t_star) > 1 else 0.0

    def segments(self) -> list[tuple[int, int, int]]:
        """Maximal runs ``(segment_index, first, last)`` of grid points."""
        runs = []
        start = 0
        for i in range(1, len(self.t_star) + 1):
            if i == len(self.t_star) or self.segment_index[i] != self.segment_index[start]:
                runs.append((int(self.segment_index[start]), start, i - 1))
                start = i
        return runs

    def max_neighbour_jump(self) -> float:
        return float(np.max(np.abs(np.diff(self.J)))) if len(self.J) > 1 else 0.0

    @property
    def reverse_ok(self) -> bool | None:
        """Whether the ``1 -> w`` family never beats the ``w -> 1`` family."""
        if self.reverse_J is None:
            return None
        return bool(np.min(self.reverse_J) >= self.J_min - TIE_TOL)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t_star,J,segment_index\n")
        for t, j, s in zip(self.t_star, self.J, self.segment_index):
            buf.write(f"{float(t)!r},{float(j)!r},{int(s)}\n")
        return buf.getvalue()


def segment_of(t: float, boundaries: Sequence[float]) -> int:
    """Number of exits (under ``u = w``) at or before ``t``."""
    return int(np.searchsorted(np.asarray(boundaries), t, side="right"))


def sweep(problem, n: int = DEFAULT_GRID, reverse: bool = True, workers: int = 1) -> SweepResult:
    """Scan ``J(bang_bang(t*))`` on ``n`` uniform points covering ``[t0, t1]``."""
    if n < 2:
        raise ValueError("sweep needs at least two grid points")
    p = problem_params(problem)
    grid = np.linspace(p.t0, p.t1, n)
    bounds = exit_boundaries(problem)
    J = evaluate_family(problem, grid, workers=workers)
    seg = np.array([segment_of(t, bounds) for t in grid])
    rev = evaluate_family(problem, grid, reverse=True, workers=workers) if reverse else None
    return SweepResult(grid, J, seg, bounds, p.theorem_conditions(), rev)


# -- refinement ---------------------------------------------------------------------------

def golden_section(f: Callable[[float], float], a: float, b: float, tol: float = REFINE_TOL) -> tuple[float, float]:
    """Minimise a unimodal ``f`` on ``[a, b]``; returns ``(x, f(x))``.

    Brent's bounded method (golden-section steps with parabolic
    acceleration) from scipy; the end points are compared as well so a
    minimum sitting on the boundary is returned exactly.
    """
    if b - a <= tol:
        x = 0.5 * (a + b)
        return x, f(x)
    res = minimize_scalar(f, bounds=(a, b), method="bounded", options={"xatol": tol / 4})
    best = (float(res.x), float(res.fun))
    for x in (a, b):
        fx = f(x)
        if fx < best[1]:
            best = (x, fx)
    return best


@dataclass
class Candidate:
    t_star: float
    J: float
    segment: int


@dataclass
class RefineResult:
    t_star: float
    J: float
    candidates: list = field(default_factory=list)
    local_min: bool = False

    @property
    def tie(self) -> bool:
        return len(self.candidates) > 1


def refine(sweep_result: SweepResult, problem=None, cost: Callable[[float], float] | None = None,
           tol: float = REFINE_TOL, tie_tol: float = TIE_TOL) -> RefineResult:
    """Polish the sweep minimum segment by segment.

    In every segment the best grid point and its two neighbours, clipped to
    the segment, bound a smooth search.  Exit times inside those windows are
    candidates in their own right, being kinks of ``J``.  Candidates from
    different segments whose costs agree within ``tie_tol`` are all reported.
    ``cost`` overrides the problem (used to inject test functions).
    """
    sr = sweep_result
    if cost is None:
        p = problem_params(problem)

        def cost(t):
            return problem_cost(problem, Control.bang_bang(t, p))

    grid, bounds = sr.t_star, list(sr.exit_times)
    t_lo, t_hi = float(grid[0]), float(grid[-1])
    edges = [t_lo, *[b for b in bounds if t_lo < b < t_hi], t_hi]
    per_segment: dict[int, Candidate] = {}

    def offer(t, j):
        s = segment_of(t, bounds)
        best = per_segment.get(s)
        if best is None or j < best.J - tie_tol or (abs(j - best.J) <= tie_tol and t < best.t_star):
            per_segment[s] = Candidate(float(t), float(j), s)

    for lo, hi in zip(edges, edges[1:]):
        inside = np.flatnonzero((grid >= lo) & (grid <= hi))
        if inside.size == 0:
            continue
        i = inside[np.argmin(sr.J[inside])]
        a = max(lo, float(grid[max(i - 1, 0)]))
        b = min(hi, float(grid[min(i + 1, len(grid) - 1)]))
        x, fx = golden_section(cost, a, b, tol)
        offer(x, fx)
        for edge in (lo, hi):
            if a <= edge <= b:
                offer(edge, cost(edge))

    cands = sorted(per_segment.values(), key=lambda c: (c.J, c.t_star))
    best = cands[0]
    # kink candidates approached from both sides are the same point
    merged: list[Candidate] = []
    for c in cands:
        if c.J - best.J > tie_tol:
            continue
        if any(abs(c.t_star - m.t_star) <= 1e3 * tol for m in merged):
            continue
        merged.append(c)
    merged.sort(key=lambda c: c.t_star)
    delta = 1e-6
    local = all(cost(min(max(best.t_star + s, t_lo), t_hi)) >= best.J - tie_tol for s in (-delta, delta))
    return RefineResult(best.t_star, best.J, merged, local)


# -- falsification ----------------------------------------------------------------------

def random_step_control(rng: np.random.Generator, params: ModelParams, max_segments: int = 8,
                        focus: float | None = None) -> Control:
    """Admissible step control with at most ``max_segments`` pieces.

    Switch instants are drawn uniformly on ``[t0, t1]`` or, with probability
    one half, on ``[t0, focus]`` where the exits happen; levels are extreme
    (``w`` or ``1``) a third of the time and uniform on ``[w, 1]`` otherwise.
    """
    k = int(rng.integers(1, max_segments + 1))
    hi = params.t1 if focus is None or rng.random() < 0.5 else min(params.t1, focus)
    times = np.unique(rng.uniform(params.t0, hi, k - 1))
    times = times[(times > params.t0) & (times < params.t1)]
    values = np.where(rng.random(len(times) + 1) < 1 / 3,
                      rng.choice([params.w, 1.0], len(times) + 1),
                      rng.uniform(params.w, 1.0, len(times) + 1))
    return Control(tuple(times), tuple(values), params.t0, params.t1, label="random")


def _trial_batch(args):
    problem, seeds, j_min, max_segments, focus = args
    p = problem_params(problem)
    out = []
    for s in seeds:
        rng = np.random.default_rng(s)
        u = random_step_control(rng, p, max_segments, focus)
        out.append(problem_cost(problem, u) - j_min)
    return out


@dataclass
class FalsificationReport:
    seed: int
    trials: int
    j_min: float
    margins: np.ndarray
    tol: float = TIE_TOL

    @property
    def violations(self) -> int:
        return int(np.sum(self.margins < -self.tol))

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def summary(self) -> dict:
        q = np.quantile(self.margins, [0.0, 0.01, 0.5, 0.99, 1.0])
        return {"seed": self.seed, "trials": self.trials, "j_min": self.j_min,
                "violations": self.violations, "min_margin": float(q[0]), "q01": float(q[1]),
                "median": float(q[2]), "q99": float(q[3]), "max_margin": float(q[4])}


def falsify_with_step_controls(problem, j_min: float, trials: int = 10_000, seed: int = DEFAULT_SEED,
                               max_segments: int = 8, workers: int = 1) -> FalsificationReport:
    """Check that no random step control beats the bang-bang optimum ``j_min``.

    The first two trials are the constant controls ``1`` and ``w``; the
    others come from per-trial seeds spawned from ``seed``, so the outcome
    does not depend on ``workers``.
    """
    p = problem_params(problem)
    bounds = exit_boundaries(problem)
    focus = 2.0 * max(bounds) if bounds else None
    margins = [problem_cost(problem, Control.constant(1.0, p)) - j_min,
               problem_cost(problem, Control.constant(p.w, p)) - j_min]
    seeds = np.random.SeedSequence(seed).spawn(max(trials - 2, 0))
    if workers <= 1:
        margins += _trial_batch((problem, seeds, j_min, max_segments, focus))
    else:
        chunks = [seeds[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_trial_batch, [(problem, c, j_min, max_segments, focus) for c in chunks]))
        order = [i for w in range(workers) for i in range(w, len(seeds), workers)]
        flat = [m for part in parts for m in part]
        ordered = [0.0] * len(seeds)
        for idx, m in zip(order, flat):
            ordered[idx] = m
        margins += ordered
    return FalsificationReport(seed, trials, j_min, np.array(margins[:max(trials, 2)]))
