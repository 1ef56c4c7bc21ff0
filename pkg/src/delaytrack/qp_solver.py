"""Dense convex QP solvers: null-space equality QP and a primal-dual interior point.

Problem: minimise 1/2 x^T H x + c^T x  s.t.  A x = b,  G x <= h.
Sign convention for the multipliers: H x + c + A^T lam + G^T mu = 0, mu >= 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class QpSolution:
    chi: np.ndarray
    lambda_eq: np.ndarray
    mu_in: np.ndarray
    objective: float
    status: str
    iterations: int
    residuals: tuple  # stationarity, primal eq, primal ineq, complementarity
    shift: float = 0.0
    kept_rows: np.ndarray | None = None
    merit_history: list = field(default_factory=list)

    @property
    def ok(self):
        return self.status == OPTIMAL


def _linear(qp):
    c = getattr(qp, "c", None)
    return np.zeros(qp.H.shape[0]) if c is None else np.asarray(c, dtype=np.float64)


def kkt_residuals(qp, sol):
    """Infinity norms (stationarity, equality, inequality, complementarity) from scratch."""
    x = sol.chi
    grad = qp.H @ x + _linear(qp)
    if qp.A_eq.shape[0]:
        grad = grad + qp.A_eq.T @ sol.lambda_eq
        r_eq = float(np.abs(qp.A_eq @ x - qp.b_eq).max())
    else:
        r_eq = 0.0
    if qp.G_in.shape[0]:
        grad = grad + qp.G_in.T @ sol.mu_in
        slack = qp.G_in @ x - qp.h_in
        r_in = float(max(slack.max(), 0.0))
        r_comp = float(np.abs(sol.mu_in * slack).max())
    else:
        r_in = r_comp = 0.0
    r_st = float(np.abs(grad).max()) if grad.size else 0.0
    return (r_st, r_eq, r_in, r_comp)


def prune_rows(A, b, tol=1e-10):
    """Drop linearly dependent equality rows by pivoted QR of A^T.

    Returns (kept row indices sorted, consistent flag, max residual of dropped rows).
    """
    basis = EqualityBasis(A, b, tol)
    return basis.kept, basis.consistent, basis.dropped_residual


class EqualityBasis:
    """Row pruning, particular solution and null-space basis for A x = b.

    One pivoted QR of A^T picks the independent rows; one Householder QR of
    the kept rows gives x_p, an orthonormal basis Z of null(A) and a
    triangular factor for recovering multipliers. Rows dropped as dependent
    are checked against x_p, which is how an inconsistent system shows up.
    """

    def __init__(self, A, b, tol=1e-10):
        m, n = A.shape
        self.n = n
        if m == 0:
            self.kept = np.arange(0)
        else:
            R, piv = sla.qr(A.T, mode="r", pivoting=True, check_finite=False)
            diag = np.abs(np.diag(R))
            rank = int(np.sum(diag > tol * diag[0])) if diag.size and diag[0] > 0 else 0
            self.kept = np.sort(piv[:rank])
        Ak, bk = A[self.kept], b[self.kept]
        mk = Ak.shape[0]
        if mk:
            Q, R = sla.qr(Ak.T, check_finite=False)
            self.Q1, self.R = Q[:, :mk], R[:mk]
            self.Z = Q[:, mk:]
            self.x_p = self.Q1 @ sla.solve_triangular(self.R, bk, trans="T")
        else:
            self.Q1, self.R = np.zeros((n, 0)), np.zeros((0, 0))
            self.Z = np.eye(n)
            self.x_p = np.zeros(n)
        resid = np.abs(A @ self.x_p - b) if m else np.zeros(0)
        self.dropped_residual = float(resid.max(initial=0.0))
        scale = max(1.0, float(np.abs(b).max(initial=0.0)))
        self.consistent = self.dropped_residual <= 1e-8 * scale

    def multipliers(self, g, m):
        """Least-squares lam with A^T lam = -g, scattered to all m rows (dropped rows get 0)."""
        lam = np.zeros(m)
        if self.kept.size:
            lam[self.kept] = sla.solve_triangular(self.R, -(self.Q1.T @ g))
        return lam


def nullspace_split(A, b):
    """Particular solution x_p of A x = b and an orthonormal basis Z of null(A)."""
    basis = EqualityBasis(A, b)
    return basis.x_p, basis.Z


def _reduced(qp, basis):
    H, c, Z = qp.H, _linear(qp), basis.Z
    HZ = H @ Z
    Hr = Z.T @ HZ
    return 0.5 * (Hr + Hr.T), Z.T @ (H @ basis.x_p + c)


def solve_equality_qp(qp, tol=1e-8) -> QpSolution:
    """Equality-constrained QP by null-space elimination.

    A semidefinite reduced Hessian is retried with growing Tikhonov shifts;
    the shift used is reported on the solution.
    """
    if qp.G_in.shape[0]:
        raise ValueError("solve_equality_qp needs a problem without inequalities")
    H, A, b = qp.H, qp.A_eq, qp.b_eq
    n, m = H.shape[0], A.shape[0]
    basis = EqualityBasis(A, b)
    if not basis.consistent:
        log.warning("inconsistent equality constraints (residual %.3e)", basis.dropped_residual)
        return QpSolution(np.zeros(n), np.zeros(m), np.zeros(0), np.nan, INFEASIBLE, 0,
                          (np.inf, np.inf, 0.0, 0.0), kept_rows=basis.kept)
    Hr, cr = _reduced(qp, basis)
    scale = max(1.0, float(np.abs(H).max(initial=0.0)))
    y, used = None, 0.0
    for shift in (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
        try:
            f = sla.cho_factor(Hr + shift * scale * np.eye(Hr.shape[0]), check_finite=False)
        except (np.linalg.LinAlgError, sla.LinAlgError):
            continue
        y = sla.cho_solve(f, -cr)
        y = y + sla.cho_solve(f, -cr - Hr @ y)  # one refinement step
        if np.all(np.isfinite(y)):
            used = shift * scale
            break
        y = None
    if y is None:
        return QpSolution(np.zeros(n), np.zeros(m), np.zeros(0), np.nan, NUMERICAL_FAILURE, 0,
                          (np.inf, np.inf, 0.0, 0.0), kept_rows=basis.kept)
    if used:
        log.info("reduced Hessian solved with Tikhonov shift %.1e", used)
    x = basis.x_p + basis.Z @ y
    lam = basis.multipliers(H @ x + _linear(qp), m)
    sol = QpSolution(x, lam, np.zeros(0), qp_objective(qp, x), OPTIMAL, 1, (0.0,) * 4, shift=used,
                     kept_rows=basis.kept)
    sol.residuals = kkt_residuals(qp, sol)
    bscale = max(1.0, float(np.abs(b).max(initial=0.0)))
    if sol.residuals[1] > 1e-6 * bscale:
        sol.status = NUMERICAL_FAILURE
    return sol


def qp_objective(qp, x):
    return float(0.5 * x @ qp.H @ x + _linear(qp) @ x)


def _step_to_boundary(v, dv, frac):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, frac * float(np.min(-v[neg] / dv[neg])))


def _factor_pd(K, scale):
    try:
        return ("cho", sla.cho_factor(K, check_finite=False))
    except (np.linalg.LinAlgError, sla.LinAlgError):
        pass
    # semidefinite reduced Hessian: a tiny shift keeps the Newton step defined
    K = K + 1e-12 * scale * np.eye(K.shape[0])
    try:
        return ("cho", sla.cho_factor(K, check_finite=False))
    except (np.linalg.LinAlgError, sla.LinAlgError):
        return ("lu", sla.lu_factor(K, check_finite=False))


def _back(fac, rhs):
    kind, f = fac
    return sla.cho_solve(f, rhs) if kind == "cho" else sla.lu_solve(f, rhs)


def _mehrotra(H, c, G, h, y, tol, max_iter, frac, scale, bnorm):
    """Inequality-only predictor-corrector; returns (y, z, status, iterations, merit history)."""
    p = G.shape[0]
    w = np.maximum(h - G @ y, 1.0)
    z = np.ones(p)
    history = []
    status = MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        rd = H @ y + c + G.T @ z
        ri = G @ y + w - h
        gap = float(z @ w) / p
        merit = float(np.abs(rd).max(initial=0.0) + np.abs(ri).max() + gap)
        history.append(merit)
        log.debug("ipm iter %d merit %.3e gap %.3e", it, merit, gap)
        if np.abs(rd).max(initial=0.0) <= tol * scale and np.abs(ri).max() <= tol * bnorm and gap <= tol:
            status = OPTIMAL
            break
        if gap > 1e12 or not np.isfinite(merit):
            status = INFEASIBLE
            break
        d = z / w
        try:
            fac = _factor_pd(H + G.T @ (d[:, None] * G), scale)
        except (np.linalg.LinAlgError, sla.LinAlgError, ValueError):
            status = NUMERICAL_FAILURE
            break

        def newton(rc):
            # rc is the complementarity target for z*w after the step
            dy = _back(fac, -rd - G.T @ ((rc + z * ri) / w - z))
            dw = -ri - G @ dy
            dz = (rc - z * w - z * dw) / w
            return dy, dz, dw

        # predictor (affine scaling)
        dy_a, dz_a, dw_a = newton(np.zeros(p))
        a_p = _step_to_boundary(w, dw_a, 1.0)
        a_d = _step_to_boundary(z, dz_a, 1.0)
        gap_aff = float((w + a_p * dw_a) @ (z + a_d * dz_a)) / p
        sigma = (gap_aff / gap) ** 3 if gap > 0 else 0.0
        # corrector with centring
        dy, dz, dw = newton(sigma * gap - dw_a * dz_a)
        alpha = min(_step_to_boundary(w, dw, frac), _step_to_boundary(z, dz, frac))
        y = y + alpha * dy
        w = w + alpha * dw
        z = z + alpha * dz
    return y, z, status, it, history


def solve_convex_qp(qp, tol=1e-8, max_iter=100, frac=0.995) -> QpSolution:
    """Primal-dual interior point (Mehrotra predictor-corrector) with slacks G x + w = h, w >= 0.

    Equalities are eliminated first: x = x_p + Z y with Z an orthonormal
    null-space basis, and the iteration runs on y. Equality multipliers are
    recovered at the end from the stationarity condition by least squares.
    Eliminating (rather than carrying A in the Newton matrix) matters when
    equality rows are close to dependent, e.g. continuity rows next to the
    integrated dynamics at fine resolution: the objective is then sensitive
    to equality residuals of order 1e-9.
    """
    if qp.G_in.shape[0] == 0:
        return solve_equality_qp(qp, tol)
    H, G, h = qp.H, qp.G_in, qp.h_in
    c = _linear(qp)
    n = H.shape[0]
    basis = EqualityBasis(qp.A_eq, qp.b_eq)
    kept = basis.kept
    if not basis.consistent:
        log.warning("inconsistent equality constraints (residual %.3e)", basis.dropped_residual)
        return QpSolution(np.zeros(n), np.zeros(qp.A_eq.shape[0]), np.zeros(G.shape[0]), np.nan,
                          INFEASIBLE, 0, (np.inf,) * 4, kept_rows=kept)
    x_p, Z = basis.x_p, basis.Z
    Hr, cr = _reduced(qp, basis)
    Gr = G @ Z
    hr = h - G @ x_p
    scale = max(1.0, float(np.abs(H).max()), float(np.abs(c).max(initial=0.0)))
    bnorm = max(1.0, float(np.abs(qp.b_eq).max(initial=0.0)), float(np.abs(h).max()))
    y, z, status, it, history = _mehrotra(Hr, cr, Gr, hr, np.zeros(Z.shape[1]), tol, max_iter, frac,
                                          scale, bnorm)
    x = x_p + Z @ y
    lam_full = basis.multipliers(H @ x + c + G.T @ z, qp.A_eq.shape[0])
    sol = QpSolution(x, lam_full, z, qp_objective(qp, x), status, it, (0.0,) * 4,
                     kept_rows=kept, merit_history=history)
    sol.residuals = kkt_residuals(qp, sol)
    return sol


def solve(qp, tol=1e-8, max_iter=100) -> QpSolution:
    if qp.G_in.shape[0]:
        return solve_convex_qp(qp, tol=tol, max_iter=max_iter)
    return solve_equality_qp(qp, tol=tol)
