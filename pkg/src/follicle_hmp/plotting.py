"""Figures for the command-line reports.

Two routes.  :func:`svg_line_plot` writes a small SVG by hand (polylines,
ticks, labels), so a sweep curve can always be inspected without a plotting
stack.  The ``figure_*`` helpers draw richer PNG figures with matplotlib's
object API (no pyplot state), which keeps repeated CLI runs independent.
"""
from __future__ import annotations

import math
from html import escape
from typing import Iterable, Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
COLORS = ("#08589e", "#d95f0e", "#2ca25f", "#756bb1", "#636363")

STYLE = {
    "font.size": 9,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
}


# -- plain SVG ------------------------------------------------------------------------------

def nice_ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    """Round tick values covering ``[lo, hi]`` (steps of 1, 2 or 5 times a power of ten)."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / max(target - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1.0, 2.0, 5.0, 10.0) if m * mag >= raw)
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    k = 0
    while first + k * step <= hi + 1e-9 * step:
        ticks.append(round(first + k * step, 12))
        k += 1
    return ticks


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e5 or abs(v) < 1e-3:
        return f"{v:.2e}"
    return f"{v:.6g}"


def svg_line_plot(series: Sequence[tuple], verticals: Iterable[float] = (), *, title: str = "",
                  xlabel: str = "", ylabel: str = "", width: int = 640, height: int = 400,
                  marker: tuple | None = None) -> str:
    """Render line series to an SVG document.

    ``series`` holds ``(xs, ys, label)`` triples; each is drawn as one
    polyline, so pass separate triples where the curve should be broken.
    ``verticals`` become dashed lines, ``marker`` an ``(x, y)`` dot.
    """
    left, right, top, bottom = 72, 16, 32, 48
    xs_all = np.concatenate([np.asarray(s[0], dtype=float) for s in series])
    ys_all = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    finite = np.isfinite(ys_all)
    x0, x1 = float(np.min(xs_all)), float(np.max(xs_all))
    y0, y1 = float(np.min(ys_all[finite])), float(np.max(ys_all[finite]))
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    if x1 == x0:
        x0, x1 = x0 - 1.0, x1 + 1.0
    pad = 0.04 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (y1 - y) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in nice_ticks(x0, x1):
        X = sx(t)
        out.append(f'<line x1="{X:.2f}" y1="{top + ph}" x2="{X:.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{top + ph + 18}" text-anchor="middle">{_fmt(t)}</text>')
    for t in nice_ticks(y0, y1):
        Y = sy(t)
        out.append(f'<line x1="{left - 5}" y1="{Y:.2f}" x2="{left}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{Y + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
    for v in verticals:
        if x0 <= v <= x1:
            X = sx(v)
            out.append(f'<line x1="{X:.2f}" y1="{top}" x2="{X:.2f}" y2="{top + ph}" '
                       'stroke="#888888" stroke-dasharray="4,3"/>')
    labels = []
    for k, (xs, ys, label) in enumerate(series):
        color = COLORS[k % len(COLORS)] if label else COLORS[0]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys) if math.isfinite(y))
        if pts:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        if label and label not in labels:
            labels.append(label)
            out.append(f'<text x="{left + pw - 6}" y="{top + 16 + 14 * (len(labels) - 1)}" '
                       f'text-anchor="end" fill="{color}">{escape(label)}</text>')
    if marker is not None:
        out.append(f'<circle cx="{sx(marker[0]):.2f}" cy="{sy(marker[1]):.2f}" r="3.5" fill="#d95f0e"/>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{left + pw / 2:.1f}" y="20" text-anchor="middle">{escape(title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def sweep_svg(sweep, t_opt: float | None = None, j_opt: float | None = None) -> str:
    """Cost against switching time, broken at the exit times."""
    series = [(sweep.t_star[a:b + 1], sweep.J[a:b + 1], "") for _, a, b in sweep.segments()]
    marker = (t_opt, j_opt) if t_opt is not None and j_opt is not None else None
    return svg_line_plot(series, sweep.exit_times, title="cost of the bang-bang family",
                         xlabel="switching time t*", ylabel="J", marker=marker)


# -- matplotlib figures ---------------------------------------------------------------------

def _figure(width: float = 6.0, rows: int = 1):
    import matplotlib as mpl
    mpl.rcParams.update(STYLE)
    fig = Figure(figsize=(width, width * GOLDEN * (0.75 if rows > 1 else 1.0) * rows))
    FigureCanvasAgg(fig)
    return fig


def _save(fig: Figure, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})


def figure_sweep(sweep, path, t_opt: float | None = None, j_opt: float | None = None) -> None:
    fig = _figure()
    ax = fig.add_subplot(1, 1, 1)
    for seg, a, b in sweep.segments():
        ax.plot(sweep.t_star[a:b + 1], sweep.J[a:b + 1], color=COLORS[seg % len(COLORS)],
                label=f"segment {seg}")
    if sweep.reverse_J is not None:
        ax.plot(sweep.t_star, sweep.reverse_J, color="0.6", lw=0.8, ls=":", label="1 then w")
    for e in sweep.exit_times:
        ax.axvline(e, color="0.5", ls="--", lw=0.8)
    if t_opt is not None:
        ax.plot([t_opt], [j_opt], "o", color="#d95f0e", ms=5, label=f"t* = {t_opt:.6f}")
    ax.set_xlabel("switching time t*")
    ax.set_ylabel("J")
    ax.legend(loc="best", frameon=False)
    _save(fig, path)


def figure_trajectory(traj, path, n: int = 801) -> None:
    """Maturity and mass of every Dirac mass, with the threshold line."""
    ts = np.linspace(traj.params.t0, traj.params.t1, n)
    states = traj.states(ts)
    fig = _figure(rows=2)
    ax1 = fig.add_subplot(2, 1, 1)
    ax2 = fig.add_subplot(2, 1, 2, sharex=ax1)
    for k in range(states.shape[1]):
        c = COLORS[k % len(COLORS)]
        ax1.plot(ts, states[:, k, 1], color=c)
        ax2.semilogy(ts, states[:, k, 2], color=c)
    ax1.axhline(traj.params.ys, color="0.5", ls="--", lw=0.8)
    for e in traj.exit_times:
        if traj.params.t0 < e < traj.params.t1:
            ax1.axvline(e, color="0.7", ls=":", lw=0.8)
    ax1.set_ylabel("maturity x2")
    ax2.set_ylabel("mass x3")
    ax2.set_xlabel("t")
    _save(fig, path)


def figure_switching(sw, path) -> None:
    """Summed switching function on a symmetric log scale."""
    fig = _figure()
    ax = fig.add_subplot(1, 1, 1)
    ax.plot(sw.t, sw.phi_n, color=COLORS[0])
    ax.axhline(0.0, color="0.4", lw=0.6)
    ax.set_yscale("symlog", linthresh=1e-6)
    for z, _ in sw.zeros:
        ax.axvline(z, color="#d95f0e", ls="--", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("summed switching function")
    _save(fig, path)


def figure_dirac(study, path) -> None:
    fig = _figure()
    ax = fig.add_subplot(1, 1, 1)
    n = np.array(study.levels, dtype=float)
    err = np.maximum(study.errors, 1e-300)
    ax.loglog(n, err, "o-", color=COLORS[0])
    ax.set_xlabel("number of Dirac masses n")
    ax.set_ylabel("|J_n - J_ref|")
    _save(fig, path)


def figure_bracket(conv, path) -> None:
    """Layer increments against the (inflated) bracket, and ``|A(i)|``."""
    fig = _figure(rows=2)
    i = np.array([r.i for r in conv.rows], dtype=float)
    ax1 = fig.add_subplot(2, 1, 1)
    ax1.semilogx(i, [r.delta for r in conv.rows], "o-", color=COLORS[0], label="layer increment")
    ax1.fill_between(i, [r.inflated[0] for r in conv.rows], [r.inflated[1] for r in conv.rows],
                     color=COLORS[2], alpha=0.2, label="bracket")
    if math.isfinite(conv.hybrid_jump):
        ax1.axhline(conv.hybrid_jump, color="0.4", ls="--", lw=0.8, label="hybrid jump")
    ax1.legend(loc="best", frameon=False)
    ax2 = fig.add_subplot(2, 1, 2)
    ax2.loglog(i, [abs(r.A) for r in conv.rows], "s-", color=COLORS[1])
    ax2.set_xlabel("mollifier index i")
    ax2.set_ylabel("|A(i)|")
    _save(fig, path)
