"""Delayed linear-quadratic tracking problems and their wavelet images."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from . import chebwave, opmat
from .chebwave import CoeffVector, WaveletBasis


class GridError(ValueError):
    """Delays do not sit on the dyadic grid of the chosen basis."""


class TimeFunction:
    """Array-valued function of time with a constant fast path.

    Calling with times of shape S returns an array of shape S + ``shape``.
    """

    def __init__(self, fn: Optional[Callable], shape, constant=None):
        self.shape = tuple(shape)
        if constant is not None:
            constant = np.array(constant, dtype=np.float64).reshape(self.shape)
            constant.setflags(write=False)
        self.constant = constant
        self._fn = fn

    @classmethod
    def const(cls, value, shape=None):
        value = np.asarray(value, dtype=np.float64)
        return cls(None, value.shape if shape is None else shape, value)

    @classmethod
    def from_entries(cls, entries, shape):
        """Build from a nested structure of callables/numbers matching ``shape``."""
        flat = list(np.asarray(entries, dtype=object).reshape(-1))
        if len(flat) != int(np.prod(shape, dtype=int)):
            raise ValueError(f"expected {int(np.prod(shape, dtype=int))} entries for shape {shape}")
        if all(not callable(e) or getattr(e, "is_constant", False) for e in flat):
            return cls.const([e(0.0) if callable(e) else float(e) for e in flat], shape)

        def fn(t):
            t = np.asarray(t, dtype=np.float64)
            cols = [np.broadcast_to(e(t) if callable(e) else float(e), t.shape) for e in flat]
            return np.stack(cols, axis=-1).reshape(t.shape + tuple(shape))

        return cls(fn, shape)

    @property
    def is_constant(self):
        return self.constant is not None

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.constant is not None:
            return np.broadcast_to(self.constant, t.shape + self.shape).copy()
        out = np.asarray(self._fn(t), dtype=np.float64)
        return out.reshape(t.shape + self.shape)

    def rescaled(self, t_f):
        """Same function expressed in normalised time tau = t / t_f."""
        if self.constant is not None:
            return self
        return TimeFunction(lambda tau, f=self._fn: f(np.asarray(tau) * t_f), self.shape)

    def shifted(self, offset):
        """g(t) = self(t - offset)."""
        if self.constant is not None:
            return self
        return TimeFunction(lambda t, f=self._fn: f(np.asarray(t) - offset), self.shape)

    def left_multiply(self, L):
        """t -> L @ self(t) for a constant matrix L."""
        L = np.asarray(L, dtype=np.float64)
        shape = (L.shape[0],) + self.shape[1:]
        if self.constant is not None:
            return TimeFunction.const(L @ self.constant, shape)
        return TimeFunction(lambda t, f=self._fn: np.einsum("ij,...j->...i" if len(self.shape) == 1
                                                           else "ij,...jk->...ik", L, f(t)), shape)

    @staticmethod
    def vstack(top: "TimeFunction", bottom: "TimeFunction"):
        shape = (top.shape[0] + bottom.shape[0],) + top.shape[1:]
        if top.is_constant and bottom.is_constant:
            return TimeFunction.const(np.concatenate([top.constant, bottom.constant], axis=0), shape)
        return TimeFunction(
            lambda t: np.concatenate([top(t), bottom(t)], axis=np.asarray(t).ndim), shape)

    def padded_columns(self, extra):
        """Append ``extra`` zero columns to a matrix function."""
        rows, cols = self.shape
        shape = (rows, cols + extra)
        if self.constant is not None:
            return TimeFunction.const(np.hstack([self.constant, np.zeros((rows, extra))]), shape)

        def fn(t):
            v = self(t)
            return np.concatenate([v, np.zeros(v.shape[:-1] + (extra,))], axis=-1)

        return TimeFunction(fn, shape)


@dataclass(frozen=True)
class PointConstraint:
    """x_row . x(t) + u_row . u(t) = value."""

    t: float
    x_row: np.ndarray
    u_row: np.ndarray
    value: float


@dataclass(frozen=True)
class TerminalConstraint:
    """x_row . x(t_f) = value."""

    x_row: np.ndarray
    value: float


@dataclass(frozen=True)
class WindowInequality:
    """x_coef(t) . x(t) + u_coef(t) . u(t) <= bound(t) for t in [t_a, t_b]."""

    t_a: float
    t_b: float
    x_coef: TimeFunction
    u_coef: TimeFunction
    bound: TimeFunction
    label: str = ""


@dataclass(frozen=True)
class ConstraintSet:
    point_equalities: tuple = ()
    terminal_equalities: tuple = ()
    window_inequalities: tuple = ()

    def is_empty(self):
        return not (self.point_equalities or self.terminal_equalities or self.window_inequalities)

    def validate(self, t_f):
        for c in self.point_equalities:
            if not 0.0 <= c.t <= t_f:
                raise ValueError(f"point constraint time {c.t} outside [0, {t_f}]")
        for w in self.window_inequalities:
            if not (0.0 <= w.t_a < w.t_b <= t_f):
                raise ValueError(f"inequality window [{w.t_a}, {w.t_b}] invalid for horizon {t_f}")


@dataclass(frozen=True)
class DelayedLqtProblem:
    q: int
    r: int
    A: TimeFunction
    B: TimeFunction
    x0: np.ndarray
    Q: np.ndarray
    R: TimeFunction
    T: np.ndarray
    reference: TimeFunction
    t_f: float
    delayed_state_terms: tuple = ()  # (TimeFunction q x q, delay)
    delayed_input_terms: tuple = ()  # (TimeFunction q x r, delay)
    f: Optional[TimeFunction] = None  # state history on [-h_x, 0]
    g: Optional[TimeFunction] = None  # control history on [-h_u, 0]
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    compat_continuity: bool = True
    derivative_adjustment: Optional[np.ndarray] = None  # B_u, q x r
    name: str = ""

    def __post_init__(self):
        if self.t_f <= 0:
            raise ValueError(f"horizon t_f must be positive, got {self.t_f}")
        q, r = self.q, self.r
        if self.A.shape != (q, q) or self.B.shape != (q, r):
            raise ValueError("A must be q x q and B q x r")
        for Am, h in self.delayed_state_terms:
            if Am.shape != (q, q):
                raise ValueError("delayed state matrices must be q x q")
            if not 0 <= h <= self.t_f:
                raise ValueError(f"state delay {h} outside [0, t_f]")
        for Bn, h in self.delayed_input_terms:
            if Bn.shape != (q, r):
                raise ValueError("delayed input matrices must be q x r")
            if not 0 <= h <= self.t_f:
                raise ValueError(f"input delay {h} outside [0, t_f]")
        for name, M, n in (("Q", self.Q, q), ("T", self.T, q)):
            M = np.asarray(M, dtype=np.float64)
            if M.shape != (n, n):
                raise ValueError(f"{name} must be {n} x {n}")
            if np.abs(M - M.T).max(initial=0.0) > 1e-12 * max(1.0, np.abs(M).max()):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M).min() < -1e-10 * max(1.0, np.abs(M).max()):
                raise ValueError(f"{name} must be positive semi-definite")
        if self.R.shape != (r, r):
            raise ValueError("R must be r x r")
        if self.reference.shape != (q,):
            raise ValueError("reference must be a q-vector function")
        if np.shape(self.x0) != (q,):
            raise ValueError("x0 must have length q")
        if self.f is not None:
            if self.f.shape != (q,):
                raise ValueError("initial state function must be a q-vector")
            if np.abs(self.f(0.0) - self.x0).max() > 1e-8:
                raise ValueError("initial function f(0) disagrees with x0")
        if self.g is not None and self.g.shape != (r,):
            raise ValueError("initial control function must be an r-vector")
        if self.derivative_adjustment is not None and np.shape(self.derivative_adjustment) != (q, r):
            raise ValueError("derivative adjustment must be q x r")
        self.constraints.validate(self.t_f)

    @property
    def h_x(self):
        return max((h for _, h in self.delayed_state_terms), default=0.0)

    @property
    def h_u(self):
        return max((h for _, h in self.delayed_input_terms), default=0.0)

    @property
    def history(self):
        return self.f if self.f is not None else TimeFunction.const(self.x0)

    @property
    def control_history(self):
        return self.g if self.g is not None else TimeFunction.const(np.zeros(self.r))


@dataclass(frozen=True)
class ScaledProblem:
    """Problem data re-parameterised on tau = t / t_f; dynamics carry the factor t_f."""

    source: DelayedLqtProblem
    t_f: float
    A: TimeFunction
    B: TimeFunction
    R: TimeFunction
    reference: TimeFunction
    history: TimeFunction
    control_history: TimeFunction
    state_delays: tuple  # (TimeFunction, tau_mu)
    input_delays: tuple  # (TimeFunction, tau_nu)


def rescale(problem: DelayedLqtProblem) -> ScaledProblem:
    t_f = float(problem.t_f)
    if t_f <= 0:
        raise ValueError("t_f must be positive")
    return ScaledProblem(
        source=problem,
        t_f=t_f,
        A=problem.A.rescaled(t_f),
        B=problem.B.rescaled(t_f),
        R=problem.R.rescaled(t_f),
        reference=problem.reference.rescaled(t_f),
        history=problem.history.rescaled(t_f),
        control_history=problem.control_history.rescaled(t_f),
        state_delays=tuple((Am.rescaled(t_f), h / t_f) for Am, h in problem.delayed_state_terms),
        input_delays=tuple((Bn.rescaled(t_f), h / t_f) for Bn, h in problem.delayed_input_terms),
    )


@dataclass(frozen=True)
class GridReport:
    ok: bool
    k: int
    exact_state_shifts: tuple
    exact_input_shifts: tuple
    message: str = ""
    smallest_k: Optional[int] = None

    @property
    def state_shifts(self):
        return tuple(int(round(v)) for v in self.exact_state_shifts)

    @property
    def input_shifts(self):
        return tuple(int(round(v)) for v in self.exact_input_shifts)


def _aligned(x, tol=1e-9):
    return abs(x - round(x)) <= tol * max(1.0, abs(x))


def validate_grid(problem: DelayedLqtProblem, k: int, k_max: int = 16) -> GridReport:
    """Check that every 2^(k-1) h / t_f is a whole number of subintervals."""
    N = 2 ** (k - 1)
    ratios = [h / problem.t_f for _, h in problem.delayed_state_terms]
    iratios = [h / problem.t_f for _, h in problem.delayed_input_terms]
    xs = tuple(N * v for v in ratios)
    us = tuple(N * v for v in iratios)
    if all(_aligned(v) for v in xs + us):
        return GridReport(True, k, xs, us, "ok", k)
    smallest = None
    for kk in range(2, k_max + 1):
        NN = 2 ** (kk - 1)
        if all(_aligned(NN * v) for v in ratios + iratios):
            smallest = kk
            break
    bad = [v for v in xs + us if not _aligned(v)]
    if smallest is None:
        msg = (f"delay shifts {', '.join(f'{v:.6g}' for v in bad)} are not integers at k={k}; "
               f"no dyadic k <= {k_max} aligns")
    else:
        msg = (f"delay shifts {', '.join(f'{v:.6g}' for v in bad)} are not integers at k={k}; "
               f"smallest aligned k is {smallest}")
    return GridReport(False, k, xs, us, msg, smallest)


def snap_delays(problem: DelayedLqtProblem, k: int):
    """Move every delay to the nearest grid point; returns (problem, perturbations).

    A perturbation entry is (kind, index, original delay, snapped delay).
    """
    N = 2 ** (k - 1)
    width = problem.t_f / N
    changes = []

    def snap(terms, kind):
        out = []
        for i, (mat, h) in enumerate(terms):
            hs = np.floor(h / width + 0.5) * width  # ties go up, unlike round()
            if abs(hs - h) > 1e-12 * max(1.0, h):
                changes.append((kind, i, h, hs))
            out.append((mat, hs))
        return tuple(out)

    snapped = replace(
        problem,
        delayed_state_terms=snap(problem.delayed_state_terms, "state"),
        delayed_input_terms=snap(problem.delayed_input_terms, "input"),
    )
    return snapped, changes


@dataclass(frozen=True)
class ProblemExpansion:
    basis: WaveletBasis
    problem: DelayedLqtProblem
    t_f: float
    q: int
    r: int
    tau_mu: tuple
    tau_nu: tuple
    n_mu: tuple
    n_nu: tuple
    A_tilde: np.ndarray
    A_mu_tilde: tuple
    B_tilde: np.ndarray
    B_nu_tilde: tuple
    Gamma: CoeffVector
    X0: CoeffVector
    F_mu: tuple
    G_nu: tuple
    R_tilde: Optional[np.ndarray]  # None when R is constant
    R_const: Optional[np.ndarray]
    Q: np.ndarray
    T: np.ndarray
    B_u: Optional[np.ndarray] = None


def _matrix_product_image(basis, fn: TimeFunction):
    rows, cols = fn.shape
    if fn.is_constant:
        return np.kron(np.eye(basis.s), fn.constant)
    F = chebwave.expand_matrix(basis, fn, rows, cols)
    return opmat.block_product_matrix(basis, F)


def _history_coeffs(basis, hist: TimeFunction, tau_d, n_d, channels):
    if n_d == 0:
        return CoeffVector(basis, channels, np.zeros(channels * basis.s))

    def shifted(tau):
        tau = np.asarray(tau)
        return hist(np.minimum(tau, tau_d) - tau_d)

    cv = chebwave.expand_vector(basis, shifted, channels)
    blocks = cv.blocks.copy()
    blocks[n_d:] = 0.0
    return CoeffVector.from_blocks(basis, blocks)


def _check_R(basis, R: TimeFunction):
    if R.is_constant:
        samples = R.constant[None]
    else:
        samples = R(chebwave.quadrature_times(basis).ravel())
    if np.abs(samples - np.swapaxes(samples, -1, -2)).max() > 1e-12 * max(1.0, np.abs(samples).max()):
        raise ValueError("R(t) must be symmetric")
    if np.linalg.eigvalsh(samples).min() <= 0:
        raise ValueError("R(t) must be positive definite at every sample")


def expand_problem(problem: DelayedLqtProblem, basis: WaveletBasis) -> ProblemExpansion:
    """Wavelet images of all problem data. Delays must already sit on the grid."""
    report = validate_grid(problem, basis.k)
    if not report.ok:
        raise GridError(report.message)
    sp = rescale(problem)
    q, r = problem.q, problem.r
    N = basis.n_sub

    A_t = _matrix_product_image(basis, sp.A)
    B_t = _matrix_product_image(basis, sp.B)
    A_mu = tuple(_matrix_product_image(basis, Am) for Am, _ in sp.state_delays)
    B_nu = tuple(_matrix_product_image(basis, Bn) for Bn, _ in sp.input_delays)
    n_mu = report.state_shifts
    n_nu = report.input_shifts
    tau_mu = tuple(n / N for n in n_mu)
    tau_nu = tuple(n / N for n in n_nu)

    Gamma = chebwave.expand_vector(basis, sp.reference, q)
    x0 = np.asarray(problem.x0, dtype=np.float64)
    X0_blocks = np.zeros((N, basis.M, q))
    X0_blocks[:, 0, :] = np.sqrt(np.pi / 2.0**basis.k) * x0
    X0 = CoeffVector.from_blocks(basis, X0_blocks)

    F_mu = tuple(_history_coeffs(basis, sp.history, t, n, q) for t, n in zip(tau_mu, n_mu))
    G_nu = tuple(_history_coeffs(basis, sp.control_history, t, n, r) for t, n in zip(tau_nu, n_nu))

    _check_R(basis, sp.R)
    if sp.R.is_constant:
        R_tilde, R_const = None, np.asarray(sp.R.constant)
    else:
        R_tilde, R_const = _matrix_product_image(basis, sp.R), None

    B_u = None if problem.derivative_adjustment is None else np.asarray(problem.derivative_adjustment)
    return ProblemExpansion(
        basis=basis, problem=problem, t_f=sp.t_f, q=q, r=r,
        tau_mu=tau_mu, tau_nu=tau_nu, n_mu=n_mu, n_nu=n_nu,
        A_tilde=A_t, A_mu_tilde=A_mu, B_tilde=B_t, B_nu_tilde=B_nu,
        Gamma=Gamma, X0=X0, F_mu=F_mu, G_nu=G_nu,
        R_tilde=R_tilde, R_const=R_const,
        Q=np.asarray(problem.Q, dtype=np.float64), T=np.asarray(problem.T, dtype=np.float64),
        B_u=B_u,
    )


def output_to_state_reform(problem: DelayedLqtProblem, C_y, D_y, Q_y, r_y: TimeFunction, T_y=None):
    """Append p states z = C_y x + D_y u so an output-tracking index becomes a state one.

    Returns (augmented problem, B_u) where B_u is None when D_y = 0. When
    present, B_u enters the dynamics as z(t) = C_y x0 + int(...) + B_u u(t);
    the augmented problem already carries it as ``derivative_adjustment``.
    """
    C_y = np.atleast_2d(np.asarray(C_y, dtype=np.float64))
    p, q = C_y.shape
    r = problem.r
    D_y = np.zeros((p, r)) if D_y is None else np.atleast_2d(np.asarray(D_y, dtype=np.float64))
    if q != problem.q or D_y.shape != (p, r):
        raise ValueError("output map dimensions do not match the plant")
    if np.linalg.matrix_rank(C_y) < p:
        raise ValueError("output map C_y must have full row rank")
    if problem.derivative_adjustment is not None:
        raise ValueError("problem already carries a derivative adjustment")
    Q_y = np.atleast_2d(np.asarray(Q_y, dtype=np.float64))
    T_y = np.zeros((p, p)) if T_y is None else np.atleast_2d(np.asarray(T_y, dtype=np.float64))

    def aug_state(Am: TimeFunction):
        return TimeFunction.vstack(Am, Am.left_multiply(C_y)).padded_columns(p)

    def aug_input(Bm: TimeFunction):
        return TimeFunction.vstack(Bm, Bm.left_multiply(C_y))

    x0 = np.asarray(problem.x0, dtype=np.float64)
    qa = q + p
    Q = np.zeros((qa, qa))
    Q[q:, q:] = Q_y
    T = np.zeros((qa, qa))
    T[q:, q:] = T_y
    ref = TimeFunction.vstack(TimeFunction.const(np.zeros(q)), r_y)
    hist = problem.history
    f = TimeFunction.vstack(hist, hist.left_multiply(C_y))
    B_u = None
    if np.any(D_y != 0.0):
        B_u = np.vstack([np.zeros((q, r)), D_y])

    def pad(row):
        return np.concatenate([np.asarray(row, dtype=np.float64), np.zeros(p)])

    cons = problem.constraints
    new_cons = ConstraintSet(
        point_equalities=tuple(replace(c, x_row=pad(c.x_row)) for c in cons.point_equalities),
        terminal_equalities=tuple(replace(c, x_row=pad(c.x_row)) for c in cons.terminal_equalities),
        window_inequalities=tuple(
            replace(w, x_coef=TimeFunction.vstack(w.x_coef, TimeFunction.const(np.zeros(p))))
            for w in cons.window_inequalities),
    )
    augmented = replace(
        problem,
        q=qa,
        A=aug_state(problem.A),
        B=aug_input(problem.B),
        delayed_state_terms=tuple((aug_state(Am), h) for Am, h in problem.delayed_state_terms),
        delayed_input_terms=tuple((aug_input(Bn), h) for Bn, h in problem.delayed_input_terms),
        x0=np.concatenate([x0, C_y @ x0]),
        f=f,
        Q=Q,
        T=T,
        reference=ref,
        constraints=new_cons,
        derivative_adjustment=B_u,
    )
    return augmented, B_u


def exact_ratio(h, t_f):
    """Delay ratio as a fraction when it is close to one with a small denominator."""
    return Fraction(h / t_f).limit_denominator(1 << 20)
