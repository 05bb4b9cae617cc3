"""Command-line experiments: ``simulate``, ``sweep``, ``verify`` and ``converge``.

A run is described by an INI-style file with flat ``key = value`` sections::

    [model]        cs, and optionally t0 t1 c1 c2 ys w
    [problem]      ensemble = FILE  or  density = FILE
    [control]      kind = constant | bang_bang | steps, with tstar / value / times, values
    [simulate]     points
    [sweep]        grid, reverse, falsify, max_segments
    [verify]       tstar, grid
    [converge]     levels, reference_nodes, schedule, particle

Relative file names are resolved next to the config file; ``builtin:NAME``
refers to the files shipped in the package (``--list`` shows them).  Every
written file starts with a comment naming the tool version and a hash of
the config, the problem file and the flags that change results.

Exit codes: 0 success, 1 a verification check failed, 2 bad input.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import math
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .adjoint import adjoint_csv, backward_adjoint, certify_bang_bang, switching_function, ExactAdjoint
from .dynamics import Ensemble, cost_J, read_ensemble_csv, simulate, trajectory_csv
from .model import Control, ModelError, ModelParams, exit_time
from .optimize import DEFAULT_GRID, DEFAULT_SEED, falsify_with_step_controls, least_maturity, refine, sweep
from .plotting import (figure_bracket, figure_dirac, figure_sweep, figure_switching, figure_trajectory,
                       sweep_svg)
from .regularized import jump_bracket_convergence
from .transport import (InitialMeasure, cost_measure, dirac_convergence, moment, read_density_csv,
                        unexited_fraction)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INPUT = 0, 1, 2

SECTIONS = {
    "model": set(ModelParams.KEYS),
    "problem": {"ensemble", "density"},
    "control": {"kind", "tstar", "value", "times", "values", "reverse"},
    "simulate": {"points"},
    "sweep": {"grid", "reverse", "falsify", "max_segments"},
    "verify": {"tstar", "grid"},
    "converge": {"levels", "reference_nodes", "schedule", "particle"},
}


class InputError(Exception):
    """Bad config, data file or flag; reported with exit code 2."""


def builtin_names() -> list[str]:
    return sorted(p.name for p in resources.files("follicle_hmp").joinpath("data").iterdir()
                  if p.name.endswith((".ini", ".csv")))


def _read_source(ref: str, base: Path | None) -> tuple[str, Path | None]:
    """Text of a file reference and the directory later references resolve against."""
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        node = resources.files("follicle_hmp").joinpath("data", name)
        if not node.is_file():
            raise InputError(f"no builtin file {name!r}; available: {', '.join(builtin_names())}")
        return node.read_text(), None
    path = Path(ref)
    if not path.is_absolute() and base is not None:
        path = base / path
    try:
        return path.read_text(), path.parent
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


@dataclass
class ExperimentConfig:
    """Parsed config: model parameters, the problem and per-command options."""

    text: str
    params: ModelParams
    problem: object                       # Ensemble or InitialMeasure
    problem_text: str
    sections: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)

    def where(self, section: str, key: str) -> str:
        n = self.lines.get((section, key))
        return f"line {n} ([{section}] {key})" if n else f"[{section}] {key}"

    def raw(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def integer(self, section, key, default, lo=1, hi=10**7) -> int:
        raw = self.raw(section, key)
        if raw is None:
            return default
        try:
            v = int(raw)
        except ValueError:
            raise InputError(f"{self.where(section, key)}: expected an integer, got {raw!r}") from None
        if not lo <= v <= hi:
            raise InputError(f"{self.where(section, key)}: {v} outside [{lo}, {hi}]")
        return v

    def integers(self, section, key, default, lo=1, hi=10**7) -> list[int]:
        raw = self.raw(section, key)
        if raw is None:
            return list(default)
        try:
            vals = [int(float(x)) for x in raw.split(",") if x.strip()]
        except ValueError:
            raise InputError(f"{self.where(section, key)}: expected comma-separated integers") from None
        if not vals or any(not lo <= v <= hi for v in vals):
            raise InputError(f"{self.where(section, key)}: values must lie in [{lo}, {hi}]")
        return vals

    def boolean(self, section, key, default) -> bool:
        raw = self.raw(section, key)
        if raw is None:
            return default
        low = raw.strip().lower()
        if low in ("1", "yes", "true", "on"):
            return True
        if low in ("0", "no", "false", "off"):
            return False
        raise InputError(f"{self.where(section, key)}: expected yes/no, got {raw!r}")

    @property
    def is_density(self) -> bool:
        return isinstance(self.problem, InitialMeasure)


def _line_index(text: str) -> dict:
    out, section = {}, None
    for n, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"\s*([A-Za-z0-9_]+)\s*[=:]", line)
        if m and section is not None:
            out.setdefault((section, m.group(1).lower()), n)
    return out


def load_config(ref: str) -> ExperimentConfig:
    text, base = _read_source(ref, Path.cwd())
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InputError(f"config parse error: {exc}".replace("\n", " ")) from None
    lines = _line_index(text)
    sections = {}
    for name in cp.sections():
        if name not in SECTIONS:
            n = next((i for i, ln in enumerate(text.splitlines(), 1) if ln.strip() == f"[{name}]"), "?")
            raise InputError(f"line {n}: unknown section [{name}]")
        for key in cp[name]:
            if key not in SECTIONS[name]:
                n = lines.get((name, key))
                raise InputError(f"line {n}: unknown key {key!r} in [{name}]")
        sections[name] = dict(cp[name])
    model = sections.get("model", {})
    try:
        params = ModelParams.from_mapping(model)
    except ModelError as exc:
        msg = str(exc)
        named = [k for k in ModelParams.KEYS if k in model and re.search(rf"\b{k}\b", msg)]
        loc = ", ".join(f"line {lines[('model', k)]}" for k in named if ("model", k) in lines)
        raise InputError(f"{loc or '[model]'}: {msg}") from None

    prob = sections.get("problem", {})
    if len(prob) != 1:
        raise InputError("[problem] needs exactly one of 'ensemble = FILE' or 'density = FILE'")
    kind, file_ref = next(iter(prob.items()))
    if not file_ref.startswith("builtin:") and base is None:
        file_ref = "builtin:" + file_ref
    problem_text, _ = _read_source(file_ref, base)
    try:
        problem = (read_ensemble_csv(problem_text, params) if kind == "ensemble"
                   else read_density_csv(problem_text, params))
    except ModelError as exc:
        raise InputError(f"{file_ref}: {exc}") from None
    return ExperimentConfig(text, params, problem, problem_text, sections, lines)


# -- helpers -----------------------------------------------------------------------------------

def resolve_tstar(cfg: ExperimentConfig, raw: str | None, grid: int, workers: int) -> float:
    """``auto``: exit time under ``u = w`` from the lowest maturity present; ``refine``: sweep optimum."""
    p = cfg.params
    raw = (raw or "auto").strip().lower()
    if raw == "auto":
        e = exit_time(least_maturity(cfg.problem), Control.constant(p.w, p), p)
        return min(e, p.t1)
    if raw == "refine":
        return refine(sweep(cfg.problem, grid, reverse=False, workers=workers), cfg.problem).t_star
    try:
        t = float(raw)
    except ValueError:
        raise InputError(f"tstar must be 'auto', 'refine' or a number, got {raw!r}") from None
    if not p.t0 <= t <= p.t1:
        raise InputError(f"tstar = {t} outside [t0, t1] = [{p.t0}, {p.t1}]")
    return t


def build_control(cfg: ExperimentConfig, grid: int, workers: int) -> Control:
    p = cfg.params
    kind = (cfg.raw("control", "kind") or "bang_bang").strip().lower()
    try:
        if kind == "constant":
            return Control.constant(float(cfg.raw("control", "value", p.w)), p).check(p)
        if kind == "bang_bang":
            t = resolve_tstar(cfg, cfg.raw("control", "tstar"), grid, workers)
            return Control.bang_bang(t, p, reverse=cfg.boolean("control", "reverse", False))
        if kind == "steps":
            times = [float(x) for x in (cfg.raw("control", "times") or "").split(",") if x.strip()]
            values = [float(x) for x in (cfg.raw("control", "values") or "").split(",") if x.strip()]
            return Control.steps(times, values, p).check(p)
    except (ValueError, ModelError) as exc:
        raise InputError(f"[control]: {exc}") from None
    raise InputError(f"{cfg.where('control', 'kind')}: unknown control kind {kind!r}")


@dataclass
class Writer:
    """Writes report files under ``out`` with the provenance comment on top."""

    out: Path
    header: str
    written: list = field(default_factory=list)

    def text(self, name: str, body: str, comment: str = "#") -> Path:
        path = self.out / name
        if comment == "<!--":
            first, rest = body.split("\n", 1) if body.startswith("<?xml") else ("", body)
            content = (first + "\n" if first else "") + f"<!-- {self.header} -->\n" + rest
        else:
            content = f"{comment} {self.header}\n" + body
        path.write_text(content)
        self.written.append(path)
        return path

    def figure(self, name: str, draw, *args, **kw) -> Path:
        path = self.out / name
        draw(*args, path=path, **kw)
        self.written.append(path)
        return path


def _hash(cfg: ExperimentConfig, command: str, args) -> str:
    h = hashlib.sha256()
    for part in (cfg.text, cfg.problem_text, command, str(args.grid), str(args.seed)):
        h.update(part.encode())
        h.update(b"\0")
    return h.hexdigest()[:16]


def _summary(lines: dict) -> str:
    return "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n" for k, v in lines.items())


# -- commands -------------------------------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig, args, out: Writer) -> int:
    p = cfg.params
    points = args.grid or cfg.integer("simulate", "points", 2001, lo=2)
    u = build_control(cfg, DEFAULT_GRID, args.threads)
    ts = np.linspace(p.t0, p.t1, points)
    t_hat0 = exit_time(0.0, Control.constant(p.w, p), p)
    info = {"control": u.label or "steps", "switch_times": ",".join(repr(t) for t in u.times),
            "t_hat0": t_hat0}
    if cfg.is_density:
        rho0 = cfg.problem
        m = np.array([moment(rho0, u, t) for t in ts])
        info.update(J=cost_measure(rho0, u), total_mass=rho0.total_mass(),
                    unexited_fraction=unexited_fraction(rho0, u))
    else:
        traj = simulate(cfg.problem, u)
        m = traj.moments(ts)
        out.text("trajectory.csv", trajectory_csv(traj, ts))
        out.figure("trajectory.png", figure_trajectory, traj)
        info.update(J=cost_J(cfg.problem, u),
                    exit_times=",".join(repr(e) for e in traj.exit_times))
    out.text("moment.csv", "t,M\n" + "".join(f"{t!r},{v!r}\n" for t, v in zip(ts.tolist(), m.tolist())))
    out.text("summary.txt", _summary(info))
    print(f"t_hat0 = {t_hat0:.10f}")
    print(f"J = {info['J']:.12g}")
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, args, out: Writer) -> int:
    grid = args.grid or cfg.integer("sweep", "grid", DEFAULT_GRID, lo=3)
    sr = sweep(cfg.problem, grid, reverse=cfg.boolean("sweep", "reverse", True), workers=args.threads)
    rr = refine(sr, cfg.problem)
    info = {"grid": grid, "cell": sr.cell, "argmin_grid": sr.argmin, "J_grid": sr.J_min,
            "t_star": rr.t_star, "J": rr.J, "local_min": rr.local_min, "tie": rr.tie,
            "candidates": "; ".join(f"{c.t_star!r}@{c.segment}" for c in rr.candidates),
            "exit_times": ",".join(repr(e) for e in sr.exit_times),
            "segments": " ".join(f"{s}:{a}-{b}" for s, a, b in sr.segments()),
            "reverse_ok": sr.reverse_ok,
            "hypotheses": "satisfied" if sr.theorem_conditions["holds"] else "theorem hypotheses not satisfied"}
    code = EXIT_OK
    trials = cfg.integer("sweep", "falsify", 0, lo=0)
    if trials:
        rep = falsify_with_step_controls(cfg.problem, rr.J, trials, seed=args.seed,
                                         max_segments=cfg.integer("sweep", "max_segments", 8), workers=args.threads)
        info.update({f"falsify_{k}": v for k, v in rep.summary().items()})
        out.text("falsify.csv", "trial,margin\n" + "".join(f"{k},{float(v)!r}\n" for k, v in enumerate(rep.margins)))
        if not rep.passed:
            code = EXIT_CHECK_FAILED
    out.text("sweep.csv", sr.to_csv())
    out.text("sweep.svg", sweep_svg(sr, rr.t_star, rr.J), comment="<!--")
    out.figure("sweep.png", figure_sweep, sr, t_opt=rr.t_star, j_opt=rr.J)
    out.text("sweep_summary.txt", _summary(info))
    print(f"argmin (grid) = {sr.argmin:.10f}   refined t* = {rr.t_star:.10f}   J = {rr.J:.12g}")
    if rr.tie:
        print("tie: " + info["candidates"])
    return code


def cmd_verify(cfg: ExperimentConfig, args, out: Writer) -> int:
    if cfg.is_density:
        raise InputError("verify needs an ensemble problem (the certificate is stated for Dirac masses)")
    grid = args.grid or cfg.integer("verify", "grid", 2001, lo=11)
    tstar = resolve_tstar(cfg, cfg.raw("verify", "tstar"), DEFAULT_GRID, args.threads)
    cert = certify_bang_bang(cfg.problem, tstar, n_grid=grid)
    out.text("certificate.txt", cert.to_text())
    u = Control.bang_bang(tstar, cfg.params)
    traj = simulate(cfg.problem, u)
    ts = traj.grid(grid)
    out.text("adjoint.csv", adjoint_csv(traj, backward_adjoint(traj), ts))
    out.figure("switching.png", figure_switching, switching_function(traj, ExactAdjoint(cfg.problem, u), ts))
    sys.stdout.write(cert.to_text())
    return EXIT_OK if cert.passed else EXIT_CHECK_FAILED


def cmd_converge(cfg: ExperimentConfig, args, out: Writer) -> int:
    p = cfg.params
    u = build_control(cfg, DEFAULT_GRID, args.threads)
    levels = cfg.integers("converge", "levels", (16, 64, 256, 1024))
    ref_nodes = cfg.integer("converge", "reference_nodes", 10_000, lo=16)
    rho0 = cfg.problem if cfg.is_density else InitialMeasure.from_ensemble(cfg.problem)
    try:
        study = dirac_convergence(rho0, u, levels, ref_nodes)
    except ModelError as exc:
        raise InputError(f"[converge] levels: {exc}") from None
    code = EXIT_OK
    info = {"dirac_levels": ",".join(map(str, levels)), "dirac_reference": study.reference}
    if rho0.is_density:
        info.update(dirac_monotone=study.monotone, dirac_finest_relative=study.finest_relative)
        if not study.monotone:
            code = EXIT_CHECK_FAILED
    else:
        same = max(study.errors) <= 1e-12 * max(1.0, abs(study.reference))
        info.update(dirac_levels_identical=same)
        if not same:
            code = EXIT_CHECK_FAILED
    out.text("dirac.csv", study.to_csv())
    out.figure("dirac.png", figure_dirac, study)

    schedule = cfg.integers("converge", "schedule", (10**2, 10**3, 10**4, 10**5), hi=10**6)
    ens = Ensemble.single(p) if cfg.is_density else cfg.problem
    k = cfg.integer("converge", "particle", 1, hi=len(ens)) - 1
    try:
        conv = jump_bracket_convergence(p, ens, u, schedule, k, workers=args.threads)
    except ModelError as exc:
        raise InputError(f"[converge] mollifier study: {exc}") from None
    inside_tail = all(r.inside for r in conv.rows[-2:])
    info.update(mollified_hybrid_jump=conv.hybrid_jump, mollified_A_rate=conv.a_rate() if len(schedule) > 1 else math.nan,
                mollified_inside_tail=inside_tail)
    if not inside_tail:
        code = EXIT_CHECK_FAILED
    out.text("mollified.csv", conv.to_csv())
    out.figure("mollified.png", figure_bracket, conv)
    out.text("converge_summary.txt", _summary(info))
    for key, v in info.items():
        print(f"{key} = {v}")
    return code


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "verify": cmd_verify, "converge": cmd_converge}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="follicle-hmp", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--list", action="store_true", help="list the builtin configs and data files")
    ap.add_argument("command", nargs="?", choices=sorted(COMMANDS))
    ap.add_argument("--config", default="builtin:table1_single.ini",
                    help="config file, or builtin:NAME (default: %(default)s)")
    ap.add_argument("--out", default="out", help="output directory (created if missing)")
    ap.add_argument("--grid", type=int, default=None,
                    help="time points (simulate), sweep points (sweep) or certificate grid (verify)")
    ap.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed for random step controls")
    ap.add_argument("--threads", type=int, default=1, help="upper bound on worker processes")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.list:
        print("\n".join(builtin_names()))
        return EXIT_OK
    if args.command is None:
        ap.print_usage(sys.stderr)
        print("follicle-hmp: error: a command is required", file=sys.stderr)
        return EXIT_INPUT
    try:
        if args.grid is not None and args.grid < 2:
            raise InputError("--grid must be at least 2")
        if args.threads < 1:
            raise InputError("--threads must be at least 1")
        cfg = load_config(args.config)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        header = f"follicle-hmp {__version__} {args.command} config-sha256={_hash(cfg, args.command, args)}"
        return COMMANDS[args.command](cfg, args, Writer(out_dir, header))
    except InputError as exc:
        print(f"follicle-hmp: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ModelError as exc:
        print(f"follicle-hmp: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
