"""First-kind Chebyshev wavelets on [0, 1].

The basis with resolution ``k`` and order ``M`` splits [0, 1] into
``2**(k-1)`` dyadic subintervals and places the scaled Chebyshev polynomials
T_0..T_{M-1} on each one. Coefficient vectors are stored wavelet-major: for
each (n, m) in lexicographic order the ``channels`` components are
contiguous.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial import chebyshev as npcheb
from numpy.polynomial import polynomial as nppoly

from . import _kernels


class ExpansionError(ValueError):
    """A function could not be expanded (non-finite value at a quadrature node)."""


@dataclass(frozen=True)
class WaveletBasis:
    k: int
    M: int

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise ValueError(f"resolution k must be an integer >= 2, got {self.k}")
        if int(self.M) != self.M or self.M < 3:
            raise ValueError(f"order M must be an integer >= 3, got {self.M}")

    @property
    def n_sub(self) -> int:
        """Number of subintervals, 2**(k-1)."""
        return 2 ** (self.k - 1)

    @property
    def s(self) -> int:
        return self.n_sub * self.M

    @property
    def subinterval_width(self) -> float:
        return 1.0 / self.n_sub

    @property
    def scale(self) -> float:
        """Common amplitude sqrt(2**k / pi)."""
        return np.sqrt(2.0**self.k / np.pi)

    @cached_property
    def amplitudes(self) -> np.ndarray:
        """sqrt(2**k / pi) * weight_m for m = 0..M-1."""
        amp = np.full(self.M, np.sqrt(2.0)) * self.scale
        amp[0] = self.scale
        return amp

    def interval(self, n):
        """Closed support [(n-1)/2^(k-1), n/2^(k-1)] of subinterval n (1-based)."""
        if not 1 <= n <= self.n_sub:
            raise ValueError(f"subinterval index {n} outside 1..{self.n_sub}")
        return (n - 1) / self.n_sub, n / self.n_sub

    def interfaces(self):
        return np.arange(1, self.n_sub) / self.n_sub

    def index(self, n, m):
        """Zero-based position of psi_nm in the basis vector."""
        return (n - 1) * self.M + m


@dataclass(frozen=True)
class CoeffVector:
    basis: WaveletBasis
    channels: int
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64).ravel()
        if data.shape[0] != self.channels * self.basis.s:
            raise ValueError(
                f"coefficient length {data.shape[0]} != channels*s = {self.channels * self.basis.s}"
            )
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def blocks(self) -> np.ndarray:
        """View as (n_sub, M, channels)."""
        return self.data.reshape(self.basis.n_sub, self.basis.M, self.channels)

    @classmethod
    def from_blocks(cls, basis, blocks):
        blocks = np.asarray(blocks, dtype=np.float64)
        return cls(basis, blocks.shape[2], blocks.reshape(-1))

    def __add__(self, other):
        if other.basis != self.basis or other.channels != self.channels:
            raise ValueError("incompatible coefficient vectors")
        return CoeffVector(self.basis, self.channels, self.data + other.data)


def _check_tau(t):
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12) or not np.all(np.isfinite(arr)):
        raise ValueError("time must lie in [0, 1]")
    return np.clip(arr, 0.0, 1.0)


def eval_psi(basis: WaveletBasis, n: int, m: int, t, right_limit: bool = False):
    """Value of psi_nm at t (scalar or array).

    At a shared interface the left subinterval owns the point; pass
    ``right_limit=True`` for the limit from the right instead.
    """
    if not 1 <= n <= basis.n_sub:
        raise ValueError(f"subinterval index n={n} outside 1..{basis.n_sub}")
    if not 0 <= m < basis.M:
        raise ValueError(f"order m={m} outside 0..{basis.M - 1}")
    tau = _check_tau(t)
    idx, local = _kernels.locate(np.atleast_1d(tau), basis.n_sub, right_limit)
    vals = _kernels.cheb_table(local, basis.M)[:, m] * basis.amplitudes[m]
    vals = np.where(idx == n, vals, 0.0)
    return vals.reshape(np.shape(tau)) if np.ndim(tau) else float(vals[0])


def eval_vector(basis: WaveletBasis, t, right_limit: bool = False):
    """Psi(t) of length s; for an array of times returns shape (len(t), s)."""
    tau = _check_tau(t)
    flat = np.atleast_1d(tau).ravel()
    idx, local = _kernels.locate(flat, basis.n_sub, right_limit)
    table = _kernels.cheb_table(local, basis.M) * basis.amplitudes
    out = np.zeros((flat.shape[0], basis.s))
    cols = (idx - 1)[:, None] * basis.M + np.arange(basis.M)
    np.put_along_axis(out, cols, table, axis=1)
    return out[0] if np.ndim(tau) == 0 else out


def _gauss_nodes(M):
    # Gauss-Legendre with 4M nodes mapped to [0, pi]
    x, w = np.polynomial.legendre.leggauss(4 * M)
    theta = 0.5 * np.pi * (x + 1.0)
    return theta, 0.5 * np.pi * w


def _sample(f, t):
    """Call f on an array of times; accepts vectorised or scalar callables."""
    try:
        vals = np.asarray(f(t), dtype=np.float64)
    except (TypeError, ValueError):
        vals = None
    if vals is not None:
        if vals.ndim == 0:
            return np.full(t.shape, float(vals))
        if vals.shape[: t.ndim] == t.shape:
            return vals
    vals = np.array([np.asarray(f(float(ti)), dtype=np.float64) for ti in t.ravel()])
    return vals.reshape(t.shape + vals.shape[1:])


def _project(basis, values, theta, weights):
    # values: (n_sub, nodes, ...) sampled at (cos(theta) + 2n - 1) / 2^k
    M = basis.M
    cosm = np.cos(np.outer(np.arange(M), theta))  # (M, nodes)
    wp = np.ones(M)
    wp[1:] = np.sqrt(2.0)
    fac = wp / np.sqrt(2.0**basis.k * np.pi)
    return np.einsum("m,mj,j,nj...->nm...", fac, cosm, weights, values)


def quadrature_times(basis: WaveletBasis):
    """Sample times (n_sub, nodes) used by the coefficient quadrature."""
    theta, _ = _gauss_nodes(basis.M)
    n = np.arange(1, basis.n_sub + 1)[:, None]
    return (np.cos(theta)[None, :] + 2 * n - 1) / 2.0**basis.k


def _expand_samples(basis, values, times):
    bad = ~np.isfinite(values)
    if np.any(bad):
        where = np.argwhere(bad)[0]
        raise ExpansionError(f"non-finite function value at quadrature node t={times[tuple(where[:2])]:.17g}")
    theta, weights = _gauss_nodes(basis.M)
    return _project(basis, values, theta, weights)


def expand_scalar(basis: WaveletBasis, f) -> CoeffVector:
    """Coefficients f_nm of a scalar function on [0, 1]."""
    times = quadrature_times(basis)
    values = _sample(f, times)
    if values.shape != times.shape:
        raise ExpansionError(f"scalar function returned shape {values.shape[times.ndim:]} per point")
    blocks = _expand_samples(basis, values, times)
    return CoeffVector(basis, 1, blocks.reshape(-1))


def expand_vector(basis: WaveletBasis, g, channels: int) -> CoeffVector:
    """Coefficients of a vector function g(t) -> (channels,), interleaved per wavelet."""
    times = quadrature_times(basis)
    values = _sample(g, times)
    values = values.reshape(times.shape + (-1,))
    if values.shape[-1] != channels:
        raise ExpansionError(f"vector function has {values.shape[-1]} components, expected {channels}")
    blocks = _expand_samples(basis, values, times)
    return CoeffVector.from_blocks(basis, blocks)


def expand_matrix(basis: WaveletBasis, F, rows: int, cols: int) -> np.ndarray:
    """Matrix-valued coefficients F_nm, shape (n_sub, M, rows, cols)."""
    times = quadrature_times(basis)
    values = _sample(F, times).reshape(times.shape + (rows, cols))
    return _expand_samples(basis, values, times)


def reconstruct(coeffs: CoeffVector, t, right_limit: bool = False):
    """Evaluate the expansion at t; returns (channels,) or (len(t), channels)."""
    tau = _check_tau(t)
    basis = coeffs.basis
    out = _kernels.reconstruct_points(coeffs.blocks, np.atleast_1d(tau), basis.n_sub,
                                      basis.amplitudes, right_limit)
    return out[0] if np.ndim(tau) == 0 else out


@dataclass(frozen=True)
class PiecewisePoly:
    """Per-subinterval monomials in original time t = tau * t_scale.

    ``coeffs`` has shape (n_sub, channels, M) with ascending powers.
    """

    basis: WaveletBasis
    channels: int
    coeffs: np.ndarray
    t_scale: float = 1.0

    @property
    def breakpoints(self):
        return np.linspace(0.0, self.t_scale, self.basis.n_sub + 1)

    def __call__(self, t, right_limit: bool = False):
        t = np.asarray(t, dtype=np.float64)
        flat = np.atleast_1d(t).ravel()
        idx, _ = _kernels.locate(np.clip(flat / self.t_scale, 0.0, 1.0), self.basis.n_sub, right_limit)
        c = self.coeffs[idx - 1]  # (npts, ch, M)
        out = np.zeros((flat.shape[0], self.channels))
        for p in range(self.basis.M - 1, -1, -1):
            out = out * flat[:, None] + c[:, :, p]
        return out[0] if t.ndim == 0 else out

    def format(self, channel=0, digits=5):
        lines = []
        bp = self.breakpoints
        for n in range(self.basis.n_sub):
            terms = []
            for p in range(self.basis.M - 1, -1, -1):
                c = self.coeffs[n, channel, p]
                terms.append(f"{c:+.{digits}f}" + (f"t^{p}" if p > 1 else "t" if p == 1 else ""))
            lines.append(f"[{bp[n]:g}, {bp[n + 1]:g}]: " + " ".join(terms))
        return "\n".join(lines)


def to_piecewise_poly(coeffs: CoeffVector, t_scale: float = 1.0) -> PiecewisePoly:
    """Exact change of basis from wavelets to monomials in t = tau * t_scale."""
    basis = coeffs.basis
    M, N = basis.M, basis.n_sub
    out = np.zeros((N, coeffs.channels, M))
    blocks = coeffs.blocks
    for n in range(1, N + 1):
        # local x = 2^k t / t_scale - 2n + 1
        lin = np.array([-(2.0 * n - 1.0), 2.0**basis.k / t_scale])
        for c in range(coeffs.channels):
            cheb = blocks[n - 1, :, c] * basis.amplitudes
            power_x = npcheb.cheb2poly(cheb)
            acc = np.zeros(1)
            for p in range(len(power_x) - 1, -1, -1):
                acc = nppoly.polyadd(nppoly.polymul(acc, lin), [power_x[p]])
            out[n - 1, c, : acc.shape[0]] = acc[:M]
    return PiecewisePoly(basis, coeffs.channels, out, float(t_scale))


def theorem1_coefficient_bounds(basis: WaveletBasis, rho0: float, rho1: float, rho: float) -> np.ndarray:
    """Upper bounds on |f_nm|, shape (n_sub, M), from sup-norms of f, f', f''."""
    if min(rho0, rho1, rho) < 0:
        raise ValueError("sup-norm bounds must be non-negative")
    k = basis.k
    row = np.empty(basis.M)
    row[0] = np.sqrt(np.pi / 2.0**k) * rho0
    row[1] = np.sqrt(np.pi / 2.0 ** (3 * k - 1)) * rho1
    m = np.arange(2, basis.M)
    row[2:] = np.sqrt(np.pi / 2.0 ** (5 * k - 1)) * rho / (m**2 - 1.0)
    return np.tile(row, (basis.n_sub, 1))
