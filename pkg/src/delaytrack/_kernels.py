"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``DELAYTRACK_DISABLE_NUMBA=1`` (any value other than ``0``/``false``/empty)
before import to force the numpy implementations. Both paths are always
importable as ``*_numpy`` / ``*_numba`` so they can be compared directly.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _flag_disabled():
    value = os.environ.get("DELAYTRACK_DISABLE_NUMBA", "")
    return value.strip().lower() not in ("", "0", "false", "no")


USE_NUMBA = numba is not None and not _flag_disabled()


# --------------------------------------------------------------------------
# Chebyshev tables
# --------------------------------------------------------------------------

def cheb_table_numpy(x, M):
    """T_0..T_{M-1} at every x, shape (len(x), M), by the three-term recurrence."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty((x.shape[0], M))
    out[:, 0] = 1.0
    if M > 1:
        out[:, 1] = x
    for m in range(2, M):
        out[:, m] = 2.0 * x * out[:, m - 1] - out[:, m - 2]
    return out


def _cheb_table_loop(x, M):
    n = x.shape[0]
    out = np.empty((n, M))
    for i in range(n):
        xi = x[i]
        out[i, 0] = 1.0
        if M > 1:
            out[i, 1] = xi
        for m in range(2, M):
            out[i, m] = 2.0 * xi * out[i, m - 1] - out[i, m - 2]
    return out


def locate_numpy(tau, n_sub, right_limit):
    """1-based subinterval index and local coordinate in [-1, 1] per point.

    Interfaces belong to the left subinterval unless ``right_limit`` is set.
    """
    tau = np.asarray(tau, dtype=np.float64)
    scaled = tau * n_sub
    if right_limit:
        idx = np.floor(scaled).astype(np.int64) + 1
    else:
        idx = np.ceil(scaled).astype(np.int64)
    idx = np.clip(idx, 1, n_sub)
    local = 2.0 * scaled - 2.0 * idx + 1.0
    return idx, np.clip(local, -1.0, 1.0)


def _locate_loop(tau, n_sub, right_limit):
    n = tau.shape[0]
    idx = np.empty(n, dtype=np.int64)
    local = np.empty(n)
    for i in range(n):
        scaled = tau[i] * n_sub
        if right_limit:
            j = int(np.floor(scaled)) + 1
        else:
            j = int(np.ceil(scaled))
        if j < 1:
            j = 1
        elif j > n_sub:
            j = n_sub
        x = 2.0 * scaled - 2.0 * j + 1.0
        if x > 1.0:
            x = 1.0
        elif x < -1.0:
            x = -1.0
        idx[i] = j
        local[i] = x
    return idx, local


def reconstruct_numpy(blocks, tau, n_sub, amp, right_limit):
    """Evaluate sum_nm c[n, m, :] psi_nm(tau) for coefficient blocks (n_sub, M, ch)."""
    M = blocks.shape[1]
    idx, local = locate_numpy(tau, n_sub, right_limit)
    table = cheb_table_numpy(local, M) * amp
    return np.einsum("pm,pmc->pc", table, blocks[idx - 1])


def _reconstruct_loop(blocks, tau, n_sub, amp, right_limit):
    M = blocks.shape[1]
    ch = blocks.shape[2]
    n = tau.shape[0]
    out = np.zeros((n, ch))
    tm = np.empty(M)
    for i in range(n):
        scaled = tau[i] * n_sub
        if right_limit:
            j = int(np.floor(scaled)) + 1
        else:
            j = int(np.ceil(scaled))
        j = min(max(j, 1), n_sub)
        x = min(max(2.0 * scaled - 2.0 * j + 1.0, -1.0), 1.0)
        tm[0] = 1.0
        if M > 1:
            tm[1] = x
        for m in range(2, M):
            tm[m] = 2.0 * x * tm[m - 1] - tm[m - 2]
        b = j - 1
        for m in range(M):
            w = tm[m] * amp[m]
            for c in range(ch):
                out[i, c] += w * blocks[b, m, c]
    return out


# --------------------------------------------------------------------------
# Fixed-step RK4 for linear delay systems
# --------------------------------------------------------------------------
#
# Layout shared by both implementations:
#   a_half   (2N+1, q, q)      A(t) on the half-step grid t_0, t_0+h/2, t_1, ...
#   ad_half  (V, 2N+1, q, q)   delayed-state matrices on the same grid
#   delay_steps (V,)           delays as whole multiples of the step (>= 1)
#   forcing  (N, 3, q)         all control-driven terms at (start, mid, end) of
#                              each step, one-sided at subinterval interfaces
#   init_half (2D+1, q)        history before 0 on the half grid, D = max delay
#                              in steps; row j is time (j/2 - D) * h
#   reset_mask (N+1,), reset_vals (N+1, q)
#                              optional re-anchoring: where the mask is set the
#                              state is overwritten before the step starts


def _delayed_state(j2, W, dW, forcing, init_half, d_max, h):
    # j2 is twice the (possibly negative) step index of the requested time
    if j2 <= 0:
        return init_half[j2 + 2 * d_max]
    if j2 % 2 == 0:
        return W[j2 // 2]
    lo = (j2 - 1) // 2
    hi = lo + 1
    # dW holds right derivatives; the step needs the left one at hi
    d_hi = dW[hi] - forcing[hi, 0] + forcing[lo, 2]
    return 0.5 * (W[lo] + W[hi]) + 0.125 * h * (dW[lo] - d_hi)


def rk4_delay_numpy(w0, a_half, ad_half, delay_steps, forcing, init_half, h, reset_mask, reset_vals):
    N = forcing.shape[0]
    q = w0.shape[0]
    V = delay_steps.shape[0]
    d_max = int(delay_steps.max()) if V else 0
    W = np.zeros((N + 1, q))
    dW = np.zeros((N + 1, q))
    W[0] = w0

    def rhs(i2, x):
        val = a_half[i2] @ x
        for v in range(V):
            xd = _delayed_state(i2 - 2 * int(delay_steps[v]), W, dW, forcing, init_half, d_max, h)
            val = val + ad_half[v, i2] @ xd
        return val

    for i in range(N):
        if reset_mask[i]:
            W[i] = reset_vals[i]
        k1 = rhs(2 * i, W[i]) + forcing[i, 0]
        dW[i] = k1
        k2 = rhs(2 * i + 1, W[i] + 0.5 * h * k1) + forcing[i, 1]
        k3 = rhs(2 * i + 1, W[i] + 0.5 * h * k2) + forcing[i, 1]
        k4 = rhs(2 * i + 2, W[i] + h * k3) + forcing[i, 2]
        W[i + 1] = W[i] + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    dW[N] = rhs(2 * N, W[N]) + forcing[N - 1, 2]
    return W, dW


def _rk4_delay_loop(w0, a_half, ad_half, delay_steps, forcing, init_half, h, reset_mask, reset_vals):
    N = forcing.shape[0]
    q = w0.shape[0]
    V = delay_steps.shape[0]
    d_max = 0
    for v in range(V):
        if delay_steps[v] > d_max:
            d_max = delay_steps[v]
    W = np.zeros((N + 1, q))
    dW = np.zeros((N + 1, q))
    W[0, :] = w0
    ks = np.zeros((4, q))
    xs = np.zeros(q)
    xd = np.zeros(q)
    stage_off = (0, 1, 1, 2)
    stage_frc = (0, 1, 1, 2)
    stage_mul = (0.0, 0.5, 0.5, 1.0)
    for i in range(N + 1):
        if i < N and reset_mask[i]:
            for a in range(q):
                W[i, a] = reset_vals[i, a]
        n_stage = 4 if i < N else 1
        for st in range(n_stage):
            i2 = 2 * i + stage_off[st]
            for a in range(q):
                if st == 0:
                    xs[a] = W[i, a]
                else:
                    xs[a] = W[i, a] + stage_mul[st] * h * ks[st - 1, a]
            for a in range(q):
                acc = 0.0
                for b in range(q):
                    acc += a_half[i2, a, b] * xs[b]
                ks[st, a] = acc
            for v in range(V):
                j2 = i2 - 2 * delay_steps[v]
                if j2 <= 0:
                    for a in range(q):
                        xd[a] = init_half[j2 + 2 * d_max, a]
                elif j2 % 2 == 0:
                    for a in range(q):
                        xd[a] = W[j2 // 2, a]
                else:
                    lo = (j2 - 1) // 2
                    for a in range(q):
                        d_hi = dW[lo + 1, a] - forcing[lo + 1, 0, a] + forcing[lo, 2, a]
                        xd[a] = 0.5 * (W[lo, a] + W[lo + 1, a]) + 0.125 * h * (dW[lo, a] - d_hi)
                for a in range(q):
                    acc = 0.0
                    for b in range(q):
                        acc += ad_half[v, i2, a, b] * xd[b]
                    ks[st, a] += acc
            fi = i if i < N else N - 1
            fs = stage_frc[st] if i < N else 2
            for a in range(q):
                ks[st, a] += forcing[fi, fs, a]
            if st == 0:
                for a in range(q):
                    dW[i, a] = ks[0, a]
        if i < N:
            for a in range(q):
                W[i + 1, a] = W[i, a] + h / 6.0 * (ks[0, a] + 2.0 * ks[1, a] + 2.0 * ks[2, a] + ks[3, a])
    return W, dW


if numba is not None:
    _jit = numba.njit(cache=True, nogil=True)
    cheb_table_numba = _jit(_cheb_table_loop)
    locate_numba = _jit(_locate_loop)
    reconstruct_numba = _jit(_reconstruct_loop)
    rk4_delay_numba = _jit(_rk4_delay_loop)
else:  # pragma: no cover
    cheb_table_numba = cheb_table_numpy
    locate_numba = locate_numpy
    reconstruct_numba = reconstruct_numpy
    rk4_delay_numba = rk4_delay_numpy


def cheb_table(x, M):
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    if USE_NUMBA:
        return cheb_table_numba(x, int(M))
    return cheb_table_numpy(x, M)


def locate(tau, n_sub, right_limit=False):
    tau = np.ascontiguousarray(tau, dtype=np.float64).ravel()
    if USE_NUMBA:
        return locate_numba(tau, int(n_sub), bool(right_limit))
    return locate_numpy(tau, n_sub, right_limit)


def reconstruct_points(blocks, tau, n_sub, amp, right_limit=False):
    blocks = np.ascontiguousarray(blocks, dtype=np.float64)
    tau = np.ascontiguousarray(tau, dtype=np.float64).ravel()
    amp = np.ascontiguousarray(amp, dtype=np.float64)
    if USE_NUMBA:
        return reconstruct_numba(blocks, tau, int(n_sub), amp, bool(right_limit))
    return reconstruct_numpy(blocks, tau, n_sub, amp, right_limit)


def rk4_delay(w0, a_half, ad_half, delay_steps, forcing, init_half, h, reset_mask=None, reset_vals=None):
    N = forcing.shape[0]
    if reset_mask is None:
        reset_mask = np.zeros(N + 1, dtype=np.bool_)
        reset_vals = np.zeros((N + 1, np.shape(w0)[0]))
    args = (
        np.ascontiguousarray(w0, dtype=np.float64),
        np.ascontiguousarray(a_half, dtype=np.float64),
        np.ascontiguousarray(ad_half, dtype=np.float64),
        np.ascontiguousarray(delay_steps, dtype=np.int64),
        np.ascontiguousarray(forcing, dtype=np.float64),
        np.ascontiguousarray(init_half, dtype=np.float64),
        float(h),
        np.ascontiguousarray(reset_mask, dtype=np.bool_),
        np.ascontiguousarray(reset_vals, dtype=np.float64),
    )
    if USE_NUMBA:
        return rk4_delay_numba(*args)
    return rk4_delay_numpy(*args)
