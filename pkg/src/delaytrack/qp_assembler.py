"""Assemble the transcribed quadratic program.

Unknowns are chi = [Xbar; U], where Xbar holds the wavelet coefficients of
the tracking error x - r and U those of the control.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import chebwave, opmat
from .chebwave import WaveletBasis
from .lqt_model import ConstraintSet, ProblemExpansion


class AssemblyError(ValueError):
    pass


@dataclass
class QuadraticProgram:
    H: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    G_in: np.ndarray
    h_in: np.ndarray
    q: int
    r: int
    s: int
    t_f: float
    c: np.ndarray | None = None  # optional linear term
    row_labels: list = field(default_factory=list)
    ineq_points: np.ndarray | None = None  # (normalised time, window index) per inequality row

    @property
    def n(self):
        return self.H.shape[0]

    @property
    def n_state(self):
        return self.q * self.s

    def objective(self, chi):
        val = 0.5 * chi @ self.H @ chi
        if self.c is not None:
            val += self.c @ chi
        return float(val)


def _sym(M):
    return 0.5 * (M + M.T)


def _check_psd(H, what):
    scale = max(1.0, float(np.abs(H).max(initial=0.0)))
    try:
        np.linalg.cholesky(H + 1e-8 * scale * np.eye(H.shape[0]))
        return
    except np.linalg.LinAlgError:
        pass
    lam = np.linalg.eigvalsh(H).min()
    if lam < -1e-8 * scale:
        raise AssemblyError(f"{what} is not positive semi-definite (smallest eigenvalue {lam:.3e})")


def assemble_hessian(exp: ProblemExpansion, basis: WaveletBasis | None = None) -> np.ndarray:
    basis = basis or exp.basis
    q, r, t_f = exp.q, exp.r, exp.t_f
    C = opmat.gram_matrix(basis).data
    E1 = opmat.endpoint_outer(basis).data
    Hx = t_f * np.kron(C, exp.Q) + np.kron(E1, exp.T)
    if exp.R_tilde is None:
        Hu = t_f * np.kron(C, exp.R_const)
    else:
        Hu = t_f * _sym(opmat.kron_apply(C, r, exp.R_tilde))
    Hx, Hu = _sym(Hx), _sym(Hu)
    _check_psd(Hx, "state Hessian block")
    _check_psd(Hu, "control Hessian block")
    nx, nu = Hx.shape[0], Hu.shape[0]
    H = np.zeros((nx + nu, nx + nu))
    H[:nx, :nx] = Hx
    H[nx:, nx:] = Hu
    return H


def _shift_delay(M, n_v, basis, ch):
    """M @ (D_v^T kron I_ch): columns move left by n_v * M * ch."""
    shift = n_v * basis.M * ch
    out = np.zeros_like(M)
    if shift < M.shape[1]:
        out[:, : M.shape[1] - shift] = M[:, shift:]
    return out


def _shift_vec(v, n_v, basis, ch):
    """(D_v^T kron I_ch) v: entries move right by n_v * M * ch."""
    shift = n_v * basis.M * ch
    out = np.zeros_like(v)
    if shift < v.shape[0]:
        out[shift:] = v[: v.shape[0] - shift]
    return out


def assemble_dynamics(exp: ProblemExpansion, basis: WaveletBasis | None = None):
    """Rows [t_f(P^T A~ + sum P^T A~_mu D_mu^T) - I | t_f(P^T B~ + sum P^T B~_nu D_nu^T)] and rhs."""
    basis = basis or exp.basis
    q, r, t_f = exp.q, exp.r, exp.t_f
    if exp.A_tilde.shape != (basis.s * q, basis.s * q) or exp.B_tilde.shape != (basis.s * q, basis.s * r):
        raise AssemblyError("expansion does not match the basis dimensions")
    Pt = opmat.integration_matrix(basis).data.T
    Gamma = exp.Gamma.data

    Ax = exp.A_tilde.copy()
    rhs_inner = exp.A_tilde @ Gamma
    for At, n_mu, F in zip(exp.A_mu_tilde, exp.n_mu, exp.F_mu):
        Ax += _shift_delay(At, n_mu, basis, q)
        rhs_inner += At @ (_shift_vec(Gamma, n_mu, basis, q) + F.data)
    Bx = exp.B_tilde.copy()
    for Bt, n_nu, G in zip(exp.B_nu_tilde, exp.n_nu, exp.G_nu):
        Bx += _shift_delay(Bt, n_nu, basis, r)
        rhs_inner += Bt @ G.data

    left = t_f * opmat.kron_apply(Pt, q, Ax) - np.eye(basis.s * q)
    right = t_f * opmat.kron_apply(Pt, q, Bx)
    rows = np.hstack([left, right])
    rhs = Gamma - exp.X0.data - t_f * opmat.kron_apply(Pt, q, rhs_inner)
    if exp.B_u is not None:
        rows = apply_control_derivative_adjustment(rows, exp.B_u, basis, q)
    return rows, rhs


def apply_control_derivative_adjustment(rows, B_u, basis: WaveletBasis, q: int):
    """Add I_s kron B_u to the control columns of the dynamics rows."""
    B_u = np.atleast_2d(np.asarray(B_u, dtype=np.float64))
    if B_u.shape[0] != q:
        raise AssemblyError(f"derivative adjustment has {B_u.shape[0]} rows, expected {q}")
    r = B_u.shape[1]
    nx = basis.s * q
    if rows.shape != (nx, nx + basis.s * r):
        raise AssemblyError("dynamics rows do not match the derivative adjustment")
    out = rows.copy()
    if np.any(B_u):
        out[:, nx:] += np.kron(np.eye(basis.s), B_u)
    return out


def assemble_compatibility(basis: WaveletBasis, q: int, r: int = 0):
    """Continuity of the state at every interior interface (rows over chi)."""
    N, M = basis.n_sub, basis.M
    left = basis.amplitudes  # psi_{i,m} at the right end of its subinterval
    right = basis.amplitudes * (-1.0) ** np.arange(M)  # psi_{i+1,m} there
    Psi_c = np.zeros((N - 1, basis.s))
    for i in range(N - 1):
        Psi_c[i, i * M:(i + 1) * M] = left
        Psi_c[i, (i + 1) * M:(i + 2) * M] = -right
    rows = np.kron(Psi_c, np.eye(q))
    if r:
        rows = np.hstack([rows, np.zeros((rows.shape[0], basis.s * r))])
    return rows, np.zeros(rows.shape[0])


def _row_at(basis, tau, x_row, u_row, right_limit=False):
    psi = chebwave.eval_vector(basis, tau, right_limit=right_limit)
    return np.concatenate([np.kron(psi, x_row), np.kron(psi, u_row)])


def assemble_point_constraints(basis: WaveletBasis, constraints: ConstraintSet, exp: ProblemExpansion):
    q, r, t_f = exp.q, exp.r, exp.t_f
    rows, rhs, labels = [], [], []
    for i, c in enumerate(constraints.point_equalities):
        if not 0.0 <= c.t <= t_f:
            raise AssemblyError(f"point constraint time {c.t} outside [0, {t_f}]")
        tau = c.t / t_f
        x_row = np.asarray(c.x_row, dtype=np.float64)
        rows.append(_row_at(basis, tau, x_row, np.asarray(c.u_row, dtype=np.float64)))
        rhs.append(c.value - x_row @ chebwave.reconstruct(exp.Gamma, tau))
        labels.append(f"point[{i}]")
    for i, c in enumerate(constraints.terminal_equalities):
        x_row = np.asarray(c.x_row, dtype=np.float64)
        rows.append(_row_at(basis, 1.0, x_row, np.zeros(r)))
        rhs.append(c.value - x_row @ chebwave.reconstruct(exp.Gamma, 1.0))
        labels.append(f"terminal[{i}]")
    if not rows:
        return np.zeros((0, basis.s * (q + r))), np.zeros(0), []
    return np.array(rows), np.array(rhs), labels


def inequality_sample_points(basis: WaveletBasis, t_a, t_b, t_f, per_sub=None):
    """Normalised sample times for a window: Chebyshev-Gauss points of every
    overlapping subinterval plus both window ends.

    Returns (tau, right_limit) arrays; the window start is read from the right.
    """
    per_sub = basis.M if per_sub is None else int(per_sub)
    if per_sub < 1:
        raise AssemblyError("need at least one inequality sample per subinterval")
    a, b = t_a / t_f, t_b / t_f
    j = np.arange(per_sub)
    local = -np.cos((2 * j + 1) * np.pi / (2 * per_sub))
    pts = ((np.arange(basis.n_sub)[:, None] + 0.5 * (local[None, :] + 1.0)) / basis.n_sub).ravel()
    pts = pts[(pts > a) & (pts < b)]
    tau = np.concatenate([[a], pts, [b]])
    right = np.zeros(tau.shape, dtype=bool)
    right[0] = True
    if a == 1.0:
        right[0] = False
    return tau, right


def inequality_rows(basis, exp, window, tau, right_limit):
    """Rows and rhs of one window inequality at explicit normalised times."""
    t_f = exp.t_f
    t = np.asarray(tau) * t_f
    xc = window.x_coef(t)
    uc = window.u_coef(t)
    bound = np.broadcast_to(window.bound(t), t.shape)
    rows = np.empty((t.shape[0], basis.s * (exp.q + exp.r)))
    rhs = np.empty(t.shape[0])
    for i in range(t.shape[0]):
        rows[i] = _row_at(basis, tau[i], xc[i], uc[i], bool(right_limit[i]))
        ref = chebwave.reconstruct(exp.Gamma, tau[i], right_limit=bool(right_limit[i]))
        rhs[i] = bound[i] - xc[i] @ ref
    return rows, rhs


def assemble_inequalities(basis: WaveletBasis, constraints: ConstraintSet, exp: ProblemExpansion,
                          samples_per_subinterval=None):
    n = basis.s * (exp.q + exp.r)
    blocks, rhs, where = [], [], []
    for w_idx, w in enumerate(constraints.window_inequalities):
        tau, right = inequality_sample_points(basis, w.t_a, w.t_b, exp.t_f, samples_per_subinterval)
        if tau.size == 0:
            raise AssemblyError(f"inequality window {w_idx} has no sample points")
        G, h = inequality_rows(basis, exp, w, tau, right)
        blocks.append(G)
        rhs.append(h)
        where.append(np.column_stack([tau, np.full(tau.shape, w_idx), right]))
    if not blocks:
        return np.zeros((0, n)), np.zeros(0), np.zeros((0, 3))
    return np.vstack(blocks), np.concatenate(rhs), np.vstack(where)


def assemble_qp(exp: ProblemExpansion, inequality_samples=None) -> QuadraticProgram:
    basis = exp.basis
    problem = exp.problem
    H = assemble_hessian(exp, basis)
    dyn, b_dyn = assemble_dynamics(exp, basis)
    rows, rhs = [dyn], [b_dyn]
    labels = ["dynamics"] * dyn.shape[0]
    if problem.compat_continuity and basis.n_sub > 1:
        cr, cb = assemble_compatibility(basis, exp.q, exp.r)
        rows.append(cr)
        rhs.append(cb)
        labels += ["continuity"] * cr.shape[0]
    pr, pb, pl = assemble_point_constraints(basis, problem.constraints, exp)
    if pr.shape[0]:
        rows.append(pr)
        rhs.append(pb)
        labels += pl
    G, h, where = assemble_inequalities(basis, problem.constraints, exp, inequality_samples)
    return QuadraticProgram(
        H=H, A_eq=np.vstack(rows), b_eq=np.concatenate(rhs), G_in=G, h_in=h,
        q=exp.q, r=exp.r, s=basis.s, t_f=exp.t_f, row_labels=labels, ineq_points=where,
    )
