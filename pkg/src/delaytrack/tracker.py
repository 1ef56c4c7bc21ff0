"""End-to-end solve: expand, assemble, solve, reconstruct, verify inequalities."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import chebwave, qp_assembler, qp_solver
from .chebwave import CoeffVector, PiecewisePoly, WaveletBasis
from .lqt_model import (DelayedLqtProblem, GridError, ProblemExpansion, expand_problem, snap_delays,
                        validate_grid)
from .qp_assembler import QuadraticProgram
from .qp_solver import QpSolution

log = logging.getLogger(__name__)


@dataclass
class TrackerSolution:
    problem: DelayedLqtProblem  # after any delay snapping
    basis: WaveletBasis
    expansion: ProblemExpansion
    qp: QuadraticProgram
    qp_solution: QpSolution
    Xbar: CoeffVector
    U: CoeffVector
    X: CoeffVector
    delay_perturbations: list = field(default_factory=list)
    refinements: int = 0
    max_violation: float = 0.0  # dense-sweep maximum of (lhs - bound) over all windows

    @property
    def status(self):
        return self.qp_solution.status

    @property
    def objective(self):
        return self.qp_solution.objective

    @property
    def n_unknowns(self):
        return self.qp.n

    def state_poly(self) -> PiecewisePoly:
        return chebwave.to_piecewise_poly(self.X, self.problem.t_f)

    def control_poly(self) -> PiecewisePoly:
        return chebwave.to_piecewise_poly(self.U, self.problem.t_f)

    def states(self, t, right_limit=False):
        tau = np.clip(np.asarray(t, dtype=np.float64) / self.problem.t_f, 0.0, 1.0)
        return chebwave.reconstruct(self.X, tau, right_limit=right_limit)

    def controls(self, t, right_limit=False):
        tau = np.clip(np.asarray(t, dtype=np.float64) / self.problem.t_f, 0.0, 1.0)
        return chebwave.reconstruct(self.U, tau, right_limit=right_limit)

    def interfaces(self):
        return self.basis.interfaces() * self.problem.t_f


def _window_values(sol_X, sol_U, problem, window, t, right_limit=False):
    tau = t / problem.t_f
    x = chebwave.reconstruct(sol_X, tau, right_limit=right_limit).reshape(t.size, -1)
    u = chebwave.reconstruct(sol_U, tau, right_limit=right_limit).reshape(t.size, -1)
    lhs = np.einsum("ni,ni->n", window.x_coef(t), x) + np.einsum("ni,ni->n", window.u_coef(t), u)
    return lhs - np.broadcast_to(window.bound(t), t.shape)


def sweep_points(basis, window, t_f, density=10):
    """Dense verification grid: density*M uniform points per subinterval, clipped to the window."""
    n = basis.n_sub * basis.M * density
    t = np.linspace(0.0, t_f, n + 1)
    t = t[(t >= window.t_a) & (t <= window.t_b)]
    return np.unique(np.concatenate([[window.t_a, window.t_b], t]))


def inequality_sweep(sol_X, sol_U, problem, basis, density=10):
    """Per-window list of (times, right_limit flags, violation values)."""
    out = []
    for w in problem.constraints.window_inequalities:
        t = sweep_points(basis, w, problem.t_f, density)
        left = _window_values(sol_X, sol_U, problem, w, t, False)
        right = _window_values(sol_X, sol_U, problem, w, t, True)
        # the window start is read from the right, its end from the left
        right[-1] = left[-1]
        left[0] = right[0]
        out.append((t, left, right))
    return out


def _split(chi, exp):
    nx = exp.q * exp.basis.s
    Xbar = CoeffVector(exp.basis, exp.q, chi[:nx])
    U = CoeffVector(exp.basis, exp.r, chi[nx:])
    return Xbar, U


def solve_problem(problem: DelayedLqtProblem, k: int, M: int, round_delays=False, tol=1e-8, max_iter=100,
                  refine_tol=1e-7, max_refinements=8, sweep_density=10) -> TrackerSolution:
    """Transcribe and solve. Raises GridError when delays are off-grid and rounding is off."""
    basis = WaveletBasis(k, M)
    perturbations = []
    report = validate_grid(problem, k)
    if not report.ok:
        if not round_delays:
            raise GridError(report.message)
        problem, perturbations = snap_delays(problem, k)
        for kind, i, old, new in perturbations:
            log.warning("%s delay %d snapped from %.10g to %.10g", kind, i, old, new)
    exp = expand_problem(problem, basis)
    qp = qp_assembler.assemble_qp(exp)
    sol = qp_solver.solve(qp, tol=tol, max_iter=max_iter)
    refinements = 0
    worst = 0.0
    windows = problem.constraints.window_inequalities
    while windows and sol.ok:
        Xbar, U = _split(sol.chi, exp)
        X = Xbar + exp.Gamma
        worst = 0.0
        add_rows, add_rhs, add_where = [], [], []
        for w_idx, (t, left, right) in enumerate(inequality_sweep(X, U, problem, basis, sweep_density)):
            worst = max(worst, float(left.max()), float(right.max()))
            for vals, side in ((left, False), (right, True)):
                bad = np.nonzero(vals > refine_tol)[0]
                if bad.size:
                    tau = t[bad] / problem.t_f
                    flags = np.full(bad.size, side)
                    G, h = qp_assembler.inequality_rows(basis, exp, windows[w_idx], tau, flags)
                    add_rows.append(G)
                    add_rhs.append(h)
                    add_where.append(np.column_stack([tau, np.full(tau.shape, w_idx), flags]))
        if not add_rows or refinements >= max_refinements:
            break
        refinements += 1
        qp.G_in = np.vstack([qp.G_in] + add_rows)
        qp.h_in = np.concatenate([qp.h_in] + add_rhs)
        qp.ineq_points = np.vstack([qp.ineq_points] + add_where)
        log.info("refinement %d: %d extra inequality samples (worst violation %.3e)",
                 refinements, sum(a.shape[0] for a in add_rows), worst)
        sol = qp_solver.solve(qp, tol=tol, max_iter=max_iter)
    Xbar, U = _split(sol.chi, exp)
    return TrackerSolution(problem, basis, exp, qp, sol, Xbar, U, Xbar + exp.Gamma, perturbations,
                           refinements, worst)
