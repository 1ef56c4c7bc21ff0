"""Command line front end.

    delaytrack solve problem.json [--k N] [--M N] [--out DIR] [--round-delays]
                                  [--oracle-check] [--samples N] [--dump-opmats]
                                  [--dump-qp] [--gnuplot]

Problem documents are JSON. Matrix and vector entries are numbers or
expression strings in ``t`` (``+ - * / ^``, ``sin cos exp``, ``pi`` and
``piecewise(cond, value, ..., default)``)::

    {
      "name": "scalar delayed plant",
      "q": 1, "r": 1, "t_f": 1.0,
      "A": [["t^2"]], "B": [[2]],
      "delayed_state_terms": [{"matrix": [["-3*t"]], "delay": 0.5}],
      "delayed_input_terms": [{"matrix": [[1]], "delay": 0.5}],
      "x0": [1], "f": ["t^2+1"], "g": ["t+1"],
      "Q": [[2]], "R": [[0.01]], "T": [[0.5]],
      "reference": ["piecewise(t<0.5, 9*t^2-6*t+1, 0.25)"],
      "compat_continuity": true,
      "constraints": {
        "point": [{"t": 0.5, "x": [0, 1, 0], "u": [0], "value": -0.5}],
        "terminal": [{"x": [0, 0, 1], "value": 0}],
        "inequality": [{"window": [0, 2], "x": ["0", "t", "1"], "u": ["-1"], "bound": "0.8"}]
      },
      "output": {"C": [[...]], "D": [[...]], "Q": [[...]], "reference": [...], "T": [[...]]},
      "solver": {"k": 2, "M": 5, "tol": 1e-8, "max_iter": 100, "round_delays": false}
    }

A matrix may also be given as ``{"diag": [...]}``; 1 x 1 matrices and
length-one vectors may be bare numbers. With an ``output`` section the
index tracks y = C x + D u against ``output.reference``; ``Q``/``T`` at the
top level are then ignored.

A sweep document ``{"sweep": {"base": {...}, "cases": [{"name": ..., "overrides": {...}}]}}``
solves every case (overrides are merged into the base recursively) into
``OUT/<name>/`` and writes ``OUT/sweep.csv``.

Exit codes:
    0  solved to optimality
    2  problem document could not be parsed
    3  delays do not align with the wavelet grid (see --round-delays)
    4  the QP solver did not reach optimality
    5  input/output failure
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, dde_oracle, opmat
from .expr import ExpressionError, compile_entry
from .lqt_model import (ConstraintSet, DelayedLqtProblem, GridError, PointConstraint, TerminalConstraint,
                        TimeFunction, WindowInequality, output_to_state_reform)
from .tracker import solve_problem

log = logging.getLogger("delaytrack")

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_GRID = 3
EXIT_SOLVER = 4
EXIT_IO = 5

# open-loop amplification above which oracle replay restarts at every interface
ANCHOR_GROWTH = 1e6


class ParseError(ValueError):
    def __init__(self, pointer, message):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer
        self.message = message


def _ptr(base, key):
    key = str(key).replace("~", "~0").replace("/", "~1")
    return f"{base}/{key}"


def _get(doc, key, ptr, default=...):
    if key in doc:
        return doc[key]
    if default is ...:
        raise ParseError(_ptr(ptr, key), "required field is missing")
    return default


def _number(value, ptr, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(ptr, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ParseError(ptr, f"expected an integer, got {value!r}")
    if positive and not value > 0:
        raise ParseError(ptr, f"expected a positive value, got {value!r}")
    return int(value) if integer else float(value)


def _entry(value, ptr):
    try:
        return compile_entry(value, ptr)
    except ExpressionError as exc:
        raise ParseError(ptr, str(exc).split(": ", 1)[-1]) from None


def _matrix_entries(node, shape, ptr):
    rows, cols = shape
    if isinstance(node, dict):
        if set(node) != {"diag"}:
            raise ParseError(ptr, "matrix objects only support the 'diag' key")
        diag = node["diag"]
        if not isinstance(diag, list) or len(diag) != rows or rows != cols:
            raise ParseError(_ptr(ptr, "diag"), f"expected {rows} diagonal entries")
        return [[diag[i] if i == j else 0.0 for j in range(cols)] for i in range(rows)], \
            [[_ptr(_ptr(ptr, "diag"), i) if i == j else ptr for j in range(cols)] for i in range(rows)]
    if not isinstance(node, list):
        if shape == (1, 1):
            return [[node]], [[ptr]]
        raise ParseError(ptr, f"expected a {rows} x {cols} matrix")
    if len(node) != rows or not all(isinstance(row, list) and len(row) == cols for row in node):
        raise ParseError(ptr, f"expected a {rows} x {cols} matrix")
    return node, [[_ptr(_ptr(ptr, i), j) for j in range(cols)] for i in range(rows)]


def parse_matrix(node, shape, ptr) -> TimeFunction:
    entries, ptrs = _matrix_entries(node, shape, ptr)
    compiled = [[_entry(v, p) for v, p in zip(row, prow)] for row, prow in zip(entries, ptrs)]
    return TimeFunction.from_entries(compiled, shape)


def parse_constant_matrix(node, shape, ptr) -> np.ndarray:
    fn = parse_matrix(node, shape, ptr)
    if not fn.is_constant:
        raise ParseError(ptr, "must be constant (no dependence on t)")
    return np.array(fn.constant)


def parse_vector(node, n, ptr) -> TimeFunction:
    if not isinstance(node, list):
        if n != 1:
            raise ParseError(ptr, f"expected a list of {n} entries")
        node = [node]
    if len(node) != n:
        raise ParseError(ptr, f"expected {n} entries, got {len(node)}")
    return TimeFunction.from_entries([_entry(v, _ptr(ptr, i)) for i, v in enumerate(node)], (n,))


def parse_constant_vector(node, n, ptr) -> np.ndarray:
    fn = parse_vector(node, n, ptr)
    if not fn.is_constant:
        raise ParseError(ptr, "must be constant (no dependence on t)")
    return np.array(fn.constant)


def _delay_terms(doc, key, shape, ptr):
    out = []
    terms = _get(doc, key, ptr, [])
    if not isinstance(terms, list):
        raise ParseError(_ptr(ptr, key), "expected a list of {matrix, delay} objects")
    for i, term in enumerate(terms):
        tp = _ptr(_ptr(ptr, key), i)
        if not isinstance(term, dict):
            raise ParseError(tp, "expected an object with 'matrix' and 'delay'")
        mat = parse_matrix(_get(term, "matrix", tp), shape, _ptr(tp, "matrix"))
        h = _get(term, "delay", tp)
        h = _number(h, _ptr(tp, "delay"))
        if h < 0:
            raise ParseError(_ptr(tp, "delay"), "delays must be non-negative")
        out.append((mat, h))
    return tuple(out)


def _constraints(doc, q, r, ptr):
    node = _get(doc, "constraints", ptr, {}) or {}
    cp = _ptr(ptr, "constraints")
    if not isinstance(node, dict):
        raise ParseError(cp, "expected an object")
    unknown = set(node) - {"point", "terminal", "inequality"}
    if unknown:
        raise ParseError(cp, f"unknown constraint kinds {sorted(unknown)}")
    points, terminals, windows = [], [], []
    for i, c in enumerate(node.get("point", [])):
        p = _ptr(_ptr(cp, "point"), i)
        points.append(PointConstraint(
            t=_number(_get(c, "t", p), _ptr(p, "t")),
            x_row=parse_constant_vector(_get(c, "x", p), q, _ptr(p, "x")),
            u_row=parse_constant_vector(c.get("u", [0.0] * r), r, _ptr(p, "u")),
            value=_number(_get(c, "value", p), _ptr(p, "value")),
        ))
    for i, c in enumerate(node.get("terminal", [])):
        p = _ptr(_ptr(cp, "terminal"), i)
        terminals.append(TerminalConstraint(
            x_row=parse_constant_vector(_get(c, "x", p), q, _ptr(p, "x")),
            value=_number(_get(c, "value", p), _ptr(p, "value")),
        ))
    for i, c in enumerate(node.get("inequality", [])):
        p = _ptr(_ptr(cp, "inequality"), i)
        win = _get(c, "window", p)
        if not isinstance(win, list) or len(win) != 2:
            raise ParseError(_ptr(p, "window"), "expected [t_a, t_b]")
        bound = _entry(_get(c, "bound", p), _ptr(p, "bound"))
        windows.append(WindowInequality(
            t_a=_number(win[0], _ptr(_ptr(p, "window"), 0)),
            t_b=_number(win[1], _ptr(_ptr(p, "window"), 1)),
            x_coef=parse_vector(c.get("x", [0.0] * q), q, _ptr(p, "x")),
            u_coef=parse_vector(c.get("u", [0.0] * r), r, _ptr(p, "u")),
            bound=_scalar_fn(bound),
            label=str(c.get("label", f"inequality[{i}]")),
        ))
    return ConstraintSet(tuple(points), tuple(terminals), tuple(windows))


def _scalar_fn(expr):
    if expr.is_constant:
        return TimeFunction.const(float(expr(0.0)), ())
    return TimeFunction(lambda t: expr(np.asarray(t, dtype=np.float64)), ())


def parse_problem(doc, ptr="") -> DelayedLqtProblem:
    """Build a problem from a parsed JSON document; errors carry a JSON pointer."""
    if not isinstance(doc, dict):
        raise ParseError(ptr, "problem document must be a JSON object")
    q = _number(_get(doc, "q", ptr), _ptr(ptr, "q"), positive=True, integer=True)
    r = _number(_get(doc, "r", ptr), _ptr(ptr, "r"), positive=True, integer=True)
    t_f = _number(_get(doc, "t_f", ptr), _ptr(ptr, "t_f"), positive=True)
    A = parse_matrix(_get(doc, "A", ptr), (q, q), _ptr(ptr, "A"))
    B = parse_matrix(_get(doc, "B", ptr), (q, r), _ptr(ptr, "B"))
    x0 = parse_constant_vector(_get(doc, "x0", ptr), q, _ptr(ptr, "x0"))
    output = doc.get("output")
    zeros_q = [[0.0] * q for _ in range(q)]
    Q = parse_constant_matrix(doc.get("Q", zeros_q) if output is None else zeros_q, (q, q), _ptr(ptr, "Q"))
    T = parse_constant_matrix(doc.get("T", zeros_q) if output is None else zeros_q, (q, q), _ptr(ptr, "T"))
    R = parse_matrix(_get(doc, "R", ptr), (r, r), _ptr(ptr, "R"))
    ref_node = doc.get("reference", [0.0] * q) if output is None else [0.0] * q
    reference = parse_vector(ref_node, q, _ptr(ptr, "reference"))
    f = parse_vector(doc["f"], q, _ptr(ptr, "f")) if "f" in doc else None
    g = parse_vector(doc["g"], r, _ptr(ptr, "g")) if "g" in doc else None
    compat = doc.get("compat_continuity", True)
    if not isinstance(compat, bool):
        raise ParseError(_ptr(ptr, "compat_continuity"), "expected true or false")
    fields = dict(
        q=q, r=r, A=A, B=B, x0=x0, Q=Q, R=R, T=T, reference=reference, t_f=t_f,
        delayed_state_terms=_delay_terms(doc, "delayed_state_terms", (q, q), ptr),
        delayed_input_terms=_delay_terms(doc, "delayed_input_terms", (q, r), ptr),
        f=f, g=g, constraints=_constraints(doc, q, r, ptr), compat_continuity=compat,
        name=str(doc.get("name", "")),
    )
    try:
        problem = DelayedLqtProblem(**fields)
    except ValueError as exc:
        raise ParseError(ptr, str(exc)) from None
    if output is None:
        return problem
    op = _ptr(ptr, "output")
    if not isinstance(output, dict):
        raise ParseError(op, "expected an object")
    C = parse_constant_matrix(_get(output, "C", op), _shape_of(output["C"], q, _ptr(op, "C")), _ptr(op, "C"))
    p = C.shape[0]
    D = parse_constant_matrix(output["D"], (p, r), _ptr(op, "D")) if "D" in output else None
    Qy = parse_constant_matrix(_get(output, "Q", op), (p, p), _ptr(op, "Q"))
    Ty = parse_constant_matrix(output["T"], (p, p), _ptr(op, "T")) if "T" in output else None
    ry = parse_vector(_get(output, "reference", op), p, _ptr(op, "reference"))
    try:
        augmented, _ = output_to_state_reform(problem, C, D, Qy, ry, Ty)
    except ValueError as exc:
        raise ParseError(op, str(exc)) from None
    return augmented


def _shape_of(node, q, ptr):
    if not isinstance(node, list) or not node or not isinstance(node[0], list):
        raise ParseError(ptr, f"expected a p x {q} matrix")
    return (len(node), q)


def merge(base, overrides):
    """Recursive dict merge; lists and scalars in ``overrides`` replace."""
    out = copy.deepcopy(base)
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def expand_sweep(doc):
    """[(case name, problem document)] for plain and sweep documents."""
    if "sweep" not in doc:
        return [(None, doc)]
    sw = doc["sweep"]
    if not isinstance(sw, dict) or "base" not in sw or not isinstance(sw.get("cases"), list):
        raise ParseError("/sweep", "expected {'base': {...}, 'cases': [...]}")
    cases = []
    seen = set()
    for i, case in enumerate(sw["cases"]):
        cp = f"/sweep/cases/{i}"
        if not isinstance(case, dict) or not isinstance(case.get("name"), str) or not case["name"]:
            raise ParseError(cp, "each case needs a non-empty 'name'")
        name = case["name"]
        if name in seen or "/" in name:
            raise ParseError(_ptr(cp, "name"), f"duplicate or invalid case name {name!r}")
        seen.add(name)
        cases.append((name, merge(sw["base"], case.get("overrides", {}))))
    return cases


@dataclass
class RunConfig:
    document: Path
    out: Path
    k: int | None = None
    M: int | None = None
    round_delays: bool = False
    oracle_check: bool = False
    samples: int = 200
    dump_opmats: bool = False
    dump_qp: bool = False
    gnuplot: bool = False
    tol: float | None = None
    max_iter: int | None = None


def _solver_settings(doc, cfg: RunConfig):
    node = doc.get("solver", {}) or {}
    sp = "/solver"
    k = cfg.k if cfg.k is not None else _number(_get(node, "k", sp), f"{sp}/k", integer=True)
    M = cfg.M if cfg.M is not None else _number(_get(node, "M", sp), f"{sp}/M", integer=True)
    if k < 2 or M < 3:
        raise ParseError(sp, f"need k >= 2 and M >= 3, got k={k}, M={M}")
    tol = cfg.tol if cfg.tol is not None else _number(node.get("tol", 1e-8), f"{sp}/tol", positive=True)
    max_iter = cfg.max_iter if cfg.max_iter is not None else \
        _number(node.get("max_iter", 100), f"{sp}/max_iter", integer=True, positive=True)
    rd = cfg.round_delays or bool(node.get("round_delays", False))
    return k, M, tol, max_iter, rd


def _floats(a):
    return [float(v) for v in np.ravel(a)]


def _write_matrix(path, M):
    np.savetxt(path, np.atleast_2d(M), delimiter=",", fmt="%.17g")


def oracle_check(problem, sol, samples):
    """Replay the solved control through the DDE integrator; returns (trajectory, report, summary dict)."""
    align = list(sol.interfaces())
    align += [c.t for c in problem.constraints.point_equalities]
    for w in problem.constraints.window_inequalities:
        align += [w.t_a, w.t_b]
    step = dde_oracle.choose_step(problem, align=align, max_step=problem.t_f / max(400, 2 * samples))
    growth = dde_oracle.growth_bound(problem)
    anchored = growth > ANCHOR_GROWTH
    traj = dde_oracle.integrate_dde(problem, sol.controls, step,
                                    anchor=sol.states if anchored else None,
                                    anchor_times=sol.interfaces() if anchored else ())
    report = dde_oracle.compare(sol.states, traj, breakpoints=sol.interfaces()[1:-1],
                                check_continuity=problem.compat_continuity)
    return traj, report, {
        "mode": "anchored" if anchored else "open_loop",
        "growth_bound": growth,
        "step": step,
        "objective": dde_oracle.evaluate_cost(problem, traj),
        "state_error": report.as_dict(),
    }


def _gnuplot_script(problem):
    q, r = problem.q, problem.r
    lines = ["set datafile separator ','", "set key autotitle columnhead", "set xlabel 't'",
             "set terminal pngcairo size 900,600", "set output 'states.png'"]
    lines.append("plot " + ", ".join(f"'solution.csv' using 1:{2 + i} with lines" for i in range(q))
                 + ", " + ", ".join(f"'solution.csv' using 1:{2 + q + r + i} with lines dt 2" for i in range(q)))
    lines.append("set output 'controls.png'")
    lines.append("plot " + ", ".join(f"'solution.csv' using 1:{2 + q + i} with lines" for i in range(r)))
    return "\n".join(lines) + "\n"


def solve_document(doc, out: Path, cfg: RunConfig):
    """Solve one problem document into ``out``; returns (exit code, summary dict)."""
    problem = parse_problem(doc)
    k, M, tol, max_iter, round_delays = _solver_settings(doc, cfg)
    summary = {"name": problem.name, "k": k, "M": M, "q": problem.q, "r": problem.r, "t_f": problem.t_f}
    try:
        sol = solve_problem(problem, k, M, round_delays=round_delays, tol=tol, max_iter=max_iter)
    except GridError as exc:
        summary.update(status="grid_error", message=str(exc))
        return EXIT_GRID, summary
    qs = sol.qp_solution
    summary.update(
        status=qs.status,
        s=sol.basis.s,
        unknowns=sol.n_unknowns,
        objective=float(qs.objective),
        iterations=int(qs.iterations),
        residuals=dict(zip(("stationarity", "equality", "inequality", "complementarity"), _floats(qs.residuals))),
        tikhonov_shift=float(qs.shift),
        equality_rows=int(sol.qp.A_eq.shape[0]),
        inequality_rows=int(sol.qp.G_in.shape[0]),
        refinements=int(sol.refinements),
        max_constraint_violation=float(sol.max_violation),
        delay_perturbations=[{"kind": kind, "index": int(i), "delay": float(old), "used": float(new)}
                             for kind, i, old, new in sol.delay_perturbations],
    )
    out.mkdir(parents=True, exist_ok=True)
    t = np.linspace(0.0, problem.t_f, cfg.samples + 1)
    traj = dde_oracle.Trajectory(t, sol.states(t), sol.controls(t))
    dde_oracle.write_csv(out / "solution.csv", sol.problem, traj)
    if cfg.oracle_check and qs.ok:
        otraj, _, oracle_summary = oracle_check(sol.problem, sol, cfg.samples)
        summary["oracle"] = oracle_summary
        dde_oracle.write_csv(out / "oracle.csv", sol.problem, otraj)
    if cfg.dump_opmats:
        d = out / "opmats"
        d.mkdir(exist_ok=True)
        _write_matrix(d / "P.csv", opmat.integration_matrix(sol.basis).data)
        _write_matrix(d / "C.csv", opmat.gram_matrix(sol.basis).data)
        for kind, terms in (("state", sol.problem.delayed_state_terms), ("input", sol.problem.delayed_input_terms)):
            for i, (_, h) in enumerate(terms):
                n_v = int(round(h / problem.t_f * sol.basis.n_sub))
                _write_matrix(d / f"D_{kind}{i}.csv", opmat.delay_matrix(sol.basis, n_v).data)
    if cfg.dump_qp:
        d = out / "qp"
        d.mkdir(exist_ok=True)
        for name in ("H", "A_eq", "G_in"):
            _write_matrix(d / f"{name}.csv", getattr(sol.qp, name))
        for name in ("b_eq", "h_in"):
            _write_matrix(d / f"{name}.csv", getattr(sol.qp, name)[:, None])
    if cfg.gnuplot:
        (out / "plot.gp").write_text(_gnuplot_script(sol.problem))
    code = EXIT_OK if qs.ok else EXIT_SOLVER
    return code, summary


def _write_summary(path, summary):
    body = dict(summary)
    body["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def run(cfg: RunConfig) -> int:
    try:
        doc = json.loads(Path(cfg.document).read_text())
    except OSError as exc:
        log.error("cannot read %s: %s", cfg.document, exc)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        log.error("%s is not valid JSON: %s", cfg.document, exc)
        return EXIT_PARSE
    try:
        cases = expand_sweep(doc)
        codes, rows = [], []
        for name, case in cases:
            out = cfg.out if name is None else cfg.out / name
            code, summary = solve_document(case, out, cfg)
            if name is not None:
                summary["case"] = name
            out.mkdir(parents=True, exist_ok=True)
            _write_summary(out / "summary.json", summary)
            log.info("%s: status %s, J* = %s", name or summary["name"] or cfg.document,
                     summary["status"], summary.get("objective"))
            if code == EXIT_GRID:
                log.error("%s", summary["message"])
            codes.append(code)
            rows.append((name, summary))
        if len(cases) > 1 or cases[0][0] is not None:
            with open(cfg.out / "sweep.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["case", "status", "objective", "unknowns"])
                for name, s in rows:
                    obj = s.get("objective")
                    w.writerow([name, s["status"], "" if obj is None else f"{obj:.10g}", s.get("unknowns", "")])
    except ParseError as exc:
        log.error("parse error at %s", exc)
        return EXIT_PARSE
    except OSError as exc:
        log.error("output failure: %s", exc)
        return EXIT_IO
    return max(codes)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="delaytrack",
        description="Optimal tracking for delayed linear systems via Chebyshev wavelets.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="exit codes: 0 optimal, 2 parse error, 3 delays off the wavelet grid, "
               "4 solver failure, 5 I/O error",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="solve a problem or sweep document",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog="exit codes: 0 optimal, 2 parse error, 3 delays off the wavelet grid, "
                              "4 solver failure, 5 I/O error")
    s.add_argument("document", type=Path)
    s.add_argument("--k", type=int, help="resolution level (2^(k-1) subintervals)")
    s.add_argument("--M", type=int, help="Chebyshev degree count per subinterval")
    s.add_argument("--out", type=Path, default=Path("out"))
    s.add_argument("--round-delays", action="store_true", help="snap delays to the nearest grid point")
    s.add_argument("--oracle-check", action="store_true", help="replay the control through an RK4 DDE integrator")
    s.add_argument("--samples", type=int, default=200, help="rows in solution.csv (default 200)")
    s.add_argument("--dump-opmats", action="store_true")
    s.add_argument("--dump-qp", action="store_true")
    s.add_argument("--gnuplot", action="store_true", help="also write plot.gp")
    s.add_argument("-v", "--verbose", action="count", default=0, help="-v progress, -vv debug")
    s.add_argument("--tol", type=float)
    s.add_argument("--max-iter", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.samples < 2:
        log.error("--samples must be at least 2")
        return EXIT_PARSE
    cfg = RunConfig(document=args.document, out=args.out, k=args.k, M=args.M, round_delays=args.round_delays,
                    oracle_check=args.oracle_check, samples=args.samples, dump_opmats=args.dump_opmats,
                    dump_qp=args.dump_qp, gnuplot=args.gnuplot, tol=args.tol, max_iter=args.max_iter)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
