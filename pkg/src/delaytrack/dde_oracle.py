"""Independent check of a tracking solution: fixed-step RK4 for the delayed
plant driven by a given control, and the cost functional by Simpson's rule.
"""

from __future__ import annotations

import csv
import inspect
from dataclasses import dataclass
from fractions import Fraction
from math import gcd

import numpy as np

from . import _kernels
from .lqt_model import DelayedLqtProblem


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray  # (n,)
    states: np.ndarray  # (n, q), left limits at jumps
    controls: np.ndarray  # (n, r), left limits at jumps
    states_right: np.ndarray | None = None
    controls_right: np.ndarray | None = None

    def __post_init__(self):
        t = self.times
        if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if self.states.shape[0] != t.size or self.controls.shape[0] != t.size:
            raise ValueError("states/controls must have one row per time")

    def right_states(self):
        return self.states if self.states_right is None else self.states_right

    def right_controls(self):
        return self.controls if self.controls_right is None else self.controls_right


def _as_control(control, r):
    """Normalise a control to u(t_array, right_limit) -> (n, r)."""
    try:
        takes_side = "right_limit" in inspect.signature(control).parameters
    except (TypeError, ValueError):
        takes_side = False

    def u(t, right_limit=False):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        vals = control(t, right_limit=right_limit) if takes_side else control(t)
        vals = np.asarray(vals, dtype=np.float64)
        if vals.ndim == 0:
            vals = np.full((t.size, r), float(vals))
        return vals.reshape(t.size, r)

    return u


def _frac(x):
    return Fraction(x).limit_denominator(1 << 24)


def _divides(step, x, tol=1e-9):
    ratio = x / step
    return abs(ratio - round(ratio)) <= tol * max(1.0, ratio)


def choose_step(problem: DelayedLqtProblem, align=(), max_step=None, panels=True):
    """Largest step <= max_step such that every delay, t_f and every point in
    ``align`` is a whole number of steps (of Simpson panels when ``panels``)."""
    pts = [problem.t_f] + [h for _, h in problem.delayed_state_terms] + \
        [h for _, h in problem.delayed_input_terms] + [a for a in align if 0 < a < problem.t_f]
    fr = [_frac(p) for p in pts if p > 0]
    num = 0
    den = 1
    for f in fr:
        den = den * f.denominator // gcd(den, f.denominator)
    for f in fr:
        num = gcd(num, f.numerator * (den // f.denominator))
    base = num / den  # gcd of all alignment points
    max_step = problem.t_f / 400 if max_step is None else max_step
    mult = 2 if panels else 1
    n = max(1, int(np.ceil(base / (mult * max_step) - 1e-12)))
    return base / (mult * n)


def integrate_dde(problem: DelayedLqtProblem, control, step: float, anchor=None, anchor_times=()) -> Trajectory:
    """Classical RK4 with delayed reads from stored history (cubic Hermite between nodes).

    Controls are sampled one-sided at step ends so jumps on the step grid are
    handled exactly. With a derivative adjustment B_u the plant is integrated in
    w = x - B_u u with w(0) = x0 and mapped back.

    ``anchor(t, right_limit)`` with ``anchor_times`` restarts the state from the
    given trajectory at those grid times. This turns the replay into a check of
    per-segment defects, which is what stays meaningful for strongly unstable
    plants where open-loop replay amplifies any residual exponentially.
    """
    t_f = problem.t_f
    if step <= 0 or not _divides(step, t_f):
        raise ValueError(f"step {step} does not divide the horizon {t_f}")
    for _, h in problem.delayed_state_terms + problem.delayed_input_terms:
        if h > 0 and not _divides(step, h):
            raise ValueError(f"step {step} does not divide the delay {h}")
    q, r = problem.q, problem.r
    N = int(round(t_f / step))
    u = _as_control(control, r)
    Bu = problem.derivative_adjustment
    t_nodes = np.linspace(0.0, t_f, N + 1)
    t_half = np.linspace(0.0, t_f, 2 * N + 1)

    A_half = problem.A(t_half)
    B_half = problem.B(t_half)
    state_terms = [(Am(t_half), int(round(h / step))) for Am, h in problem.delayed_state_terms]
    zero_delay = [(m, d) for m, d in state_terms if d == 0]
    state_terms = [(m, d) for m, d in state_terms if d > 0]
    for m, _ in zero_delay:  # x(t - 0) is just x(t)
        A_half = A_half + m
    ad_half = np.zeros((len(state_terms), 2 * N + 1, q, q))
    delay_steps = np.zeros(len(state_terms), dtype=np.int64)
    for v, (m, d) in enumerate(state_terms):
        ad_half[v] = m
        delay_steps[v] = d

    # control samples at (start+, mid, end-) of each step
    u_start = u(t_nodes[:-1], right_limit=True)
    u_mid = u(0.5 * (t_nodes[:-1] + t_nodes[1:]))
    u_end = u(t_nodes[1:], right_limit=False)
    U3 = np.stack([u_start, u_mid, u_end], axis=1)  # (N, 3, r)
    t3 = np.stack([t_nodes[:-1], 0.5 * (t_nodes[:-1] + t_nodes[1:]), t_nodes[1:]], axis=1)
    idx3 = np.stack([2 * np.arange(N), 2 * np.arange(N) + 1, 2 * np.arange(N) + 2], axis=1)

    B3 = B_half[idx3]  # (N, 3, q, r)
    A3 = A_half[idx3]
    forcing = np.einsum("nsqr,nsr->nsq", B3, U3)
    if Bu is not None:
        forcing += np.einsum("nsqp,pr,nsr->nsq", A3, Bu, U3)

    hist_u = problem.control_history
    for Bn, h in problem.delayed_input_terms:
        Bn3 = Bn(t3)
        ts = t3 - h
        # step ends are left limits, so t - h = 0 there still reads the history
        use_hist = ts < 0
        use_hist[:, 2] = ts[:, 2] <= 0
        ud = np.where(
            use_hist[..., None],
            hist_u(np.minimum(ts, 0.0)),
            np.stack([u(np.maximum(ts[:, 0], 0.0), right_limit=True),
                      u(np.maximum(ts[:, 1], 0.0)),
                      u(np.maximum(ts[:, 2], 0.0), right_limit=False)], axis=1),
        )
        forcing += np.einsum("nsqr,nsr->nsq", Bn3, ud)
    if Bu is not None:
        for (Am, h) in problem.delayed_state_terms:
            if h <= 0:
                continue
            ts = t3 - h
            ud = np.stack([u(np.maximum(ts[:, 0], 0.0), right_limit=True),
                           u(np.maximum(ts[:, 1], 0.0)),
                           u(np.maximum(ts[:, 2], 0.0), right_limit=False)], axis=1)
            ud = np.where((ts > 0)[..., None], ud, 0.0)
            forcing += np.einsum("nsqp,pr,nsr->nsq", Am(t3), Bu, ud)

    d_max = int(delay_steps.max()) if delay_steps.size else 0
    hist_t = (np.arange(2 * d_max + 1) / 2.0 - d_max) * step
    init_half = problem.history(hist_t).reshape(2 * d_max + 1, q)

    x0 = np.asarray(problem.x0, dtype=np.float64)
    w0 = x0  # the adjusted part B_u u rides on top, so x(0+) = x0 + B_u u(0+)
    reset_mask = np.zeros(N + 1, dtype=bool)
    reset_vals = np.zeros((N + 1, q))
    if anchor is not None and len(anchor_times):
        at = np.asarray(anchor_times, dtype=np.float64)
        at = at[(at > 0) & (at < t_f)]
        idx = np.rint(at / step).astype(int)
        if np.any(np.abs(idx * step - at) > 1e-9 * t_f):
            raise ValueError("anchor times must lie on the integration grid")
        xr = np.asarray(anchor(at, right_limit=True), dtype=np.float64).reshape(at.size, q)
        if Bu is not None:
            xr = xr - u(at, right_limit=True) @ Bu.T
        reset_mask[idx] = True
        reset_vals[idx] = xr
    W, _ = _kernels.rk4_delay(w0, A_half, ad_half, delay_steps, forcing, init_half, step,
                              reset_mask, reset_vals)

    ctrl_left = u(t_nodes, right_limit=False)
    ctrl_right = u(t_nodes, right_limit=True)
    if Bu is not None:
        states = W + ctrl_left @ Bu.T
        states_right = W + ctrl_right @ Bu.T
    else:
        states, states_right = W, None
    if np.array_equal(ctrl_left, ctrl_right):
        ctrl_right = None
    return Trajectory(t_nodes, states, ctrl_left, states_right, ctrl_right)


def growth_bound(problem: DelayedLqtProblem, samples=16):
    """Crude open-loop amplification estimate exp(max Re eig(A(t)) * t_f)."""
    t = np.linspace(0.0, problem.t_f, samples)
    A = problem.A(t)
    for Am, _ in problem.delayed_state_terms:
        A = A + np.abs(Am(t))  # delayed feedback only adds growth in the worst case
    abscissa = max(float(np.linalg.eigvals(a).real.max()) for a in A)
    return float(np.exp(min(abscissa * problem.t_f, 700.0)))


def evaluate_cost(problem: DelayedLqtProblem, traj: Trajectory) -> float:
    """1/2 e(t_f)^T T e(t_f) + 1/2 int (e^T Q e + u^T R u) dt by composite Simpson.

    Panels are consecutive node pairs; panel ends use one-sided values so
    jumps at even nodes are integrated exactly.
    """
    t = traj.times
    if t.size % 2 == 0:
        raise ValueError("Simpson's rule needs an odd number of samples")
    Q = np.asarray(problem.Q)

    def integrand(ts, xs, us, right_limit):
        # reference evaluated one-sided by nudging into the panel
        span = t[-1] - t[0]
        nudge = 1e-12 * span * (1 if right_limit else -1)
        ref = problem.reference(np.clip(ts + nudge, t[0], t[-1]))
        e = xs - ref
        R = problem.R(ts)
        return np.einsum("ni,ij,nj->n", e, Q, e) + np.einsum("ni,nij,nj->n", us, R, us)

    a = slice(0, -1, 2)
    m = slice(1, None, 2)
    b = slice(2, None, 2)
    fa = integrand(t[a], traj.right_states()[a], traj.right_controls()[a], True)
    fm = integrand(t[m], traj.states[m], traj.controls[m], False)
    fb = integrand(t[b], traj.states[b], traj.controls[b], False)
    width = t[b] - t[a]
    running = float(np.sum(width / 6.0 * (fa + 4.0 * fm + fb)))
    eT = traj.states[-1] - problem.reference(t[-1])
    terminal = float(eT @ np.asarray(problem.T) @ eT)
    return 0.5 * terminal + 0.5 * running


@dataclass(frozen=True)
class ErrorReport:
    sup: np.ndarray  # per channel
    l2: np.ndarray
    relative_sup: float  # max over channels of sup error / sup |oracle|
    interface_jumps: np.ndarray  # max jump of the reconstruction per channel
    flagged: bool

    def as_dict(self):
        return {
            "sup": [float(v) for v in self.sup],
            "l2": [float(v) for v in self.l2],
            "relative_sup": float(self.relative_sup),
            "max_interface_jump": float(self.interface_jumps.max(initial=0.0)),
            "flagged": bool(self.flagged),
        }


def compare(reconstructed, oracle: Trajectory, channel="states", breakpoints=None, jump_tol=1e-6,
            check_continuity=False) -> ErrorReport:
    """Sup and L2 errors of a reconstructed trajectory against an oracle trajectory.

    ``reconstructed`` is any callable f(t, right_limit=False) -> (n, ch).
    """
    ref = oracle.states if channel == "states" else oracle.controls
    t = oracle.times
    vals = np.asarray(reconstructed(t), dtype=np.float64).reshape(ref.shape)
    err = vals - ref
    sup = np.abs(err).max(axis=0)
    dt = np.diff(t)
    l2 = np.sqrt(np.sum(0.5 * dt[:, None] * (err[1:] ** 2 + err[:-1] ** 2), axis=0))
    scale = max(float(np.abs(ref).max(initial=0.0)), 1e-12)
    jumps = np.zeros(ref.shape[1])
    if breakpoints is not None and len(breakpoints):
        bp = np.asarray(breakpoints, dtype=np.float64)
        left = np.asarray(reconstructed(bp), dtype=np.float64).reshape(bp.size, -1)
        right = np.asarray(reconstructed(bp, right_limit=True), dtype=np.float64).reshape(bp.size, -1)
        jumps = np.abs(left - right).max(axis=0)
    flagged = bool(check_continuity and np.any(jumps > jump_tol))
    return ErrorReport(sup, l2, float(sup.max() / scale), jumps, flagged)


def write_csv(path, problem: DelayedLqtProblem, traj: Trajectory):
    """Columns t, x1..xq, u1..ur, r1..rq, e1..eq."""
    q, r = problem.q, problem.r
    ref = problem.reference(traj.times)
    err = traj.states - ref
    header = (["t"] + [f"x{i + 1}" for i in range(q)] + [f"u{i + 1}" for i in range(r)]
              + [f"r{i + 1}" for i in range(q)] + [f"e{i + 1}" for i in range(q)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, ti in enumerate(traj.times):
            row = [ti, *traj.states[i], *traj.controls[i], *ref[i], *err[i]]
            w.writerow([f"{v:.12g}" for v in row])
