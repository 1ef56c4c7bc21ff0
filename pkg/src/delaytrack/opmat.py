"""Operational matrices of the Chebyshev wavelet basis.

All matrices are built from closed forms; quadrature only appears in tests.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .chebwave import CoeffVector, WaveletBasis, eval_vector


@dataclass(frozen=True)
class OpMatrix:
    basis: WaveletBasis
    kind: str
    data: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


def _integration_blocks(M):
    L = np.zeros((M, M))
    E = np.zeros((M, M))
    r2 = np.sqrt(2.0)
    L[0, 0] = 1.0
    L[0, 1] = 1.0 / r2
    L[1, 0] = -r2 / 4.0
    if M > 2:
        L[1, 2] = 0.25
    E[0, 0] = 2.0
    for m in range(2, M):
        L[m, 0] = (-1.0) ** (m - 1) * r2 / (m * m - 1.0)
        L[m, m - 1] = -1.0 / (2.0 * (m - 1))
        if m + 1 < M:
            L[m, m + 1] = 1.0 / (2.0 * (m + 1))
        E[m, 0] = -(1.0 + (-1.0) ** m) * r2 / (m * m - 1.0)
    return L, E


def integration_matrix(basis: WaveletBasis) -> OpMatrix:
    """P with int_0^t Psi = P Psi(t); block upper triangular (L diagonal, E above)."""
    L, E = _integration_blocks(basis.M)
    N, M = basis.n_sub, basis.M
    P = np.zeros((basis.s, basis.s))
    for n in range(N):
        P[n * M:(n + 1) * M, n * M:(n + 1) * M] = L
        for eta in range(n + 1, N):
            P[n * M:(n + 1) * M, eta * M:(eta + 1) * M] = E
    return OpMatrix(basis, "integration", P / 2.0**basis.k)


def gram_block(M):
    """Unscaled per-subinterval block C_1 (the Gram matrix is 2/pi times blkdiag of it)."""
    i = np.arange(1, M + 1)[:, None]
    j = np.arange(1, M + 1)[None, :]
    l = np.where((i == 1) & (j == 1), 1.0, np.where((i == 1) | (j == 1), np.sqrt(2.0), 2.0))
    num = 1.0 - (i - 1) ** 2 - (j - 1) ** 2
    den = ((i + j - 2) ** 2 - 1.0) * ((i - j) ** 2 - 1.0)
    even = (i + j) % 2 == 0
    return np.where(even, l * num / np.where(even, den, 1.0), 0.0)


def gram_matrix(basis: WaveletBasis) -> OpMatrix:
    """C = int_0^1 Psi Psi^T dt, exact."""
    C = np.kron(np.eye(basis.n_sub), gram_block(basis.M)) * (2.0 / np.pi)
    return OpMatrix(basis, "gram", C)


@lru_cache(maxsize=None)
def product_tensor(M):
    """W[i, j, l] with psi_i psi_j ~ sqrt(2^k/pi) * sum_l W[i, j, l] psi_l on one subinterval.

    Products whose top index reaches M are truncated, as the basis stops at
    T_{M-1}.
    """
    W = np.zeros((M, M, M))
    h = 1.0 / np.sqrt(2.0)
    for i in range(M):
        for j in range(M):
            if i == 0 or j == 0:
                W[i, j, max(i, j)] += 1.0
            elif i == j:
                W[i, j, 0] += 1.0
                if 2 * i < M:
                    W[i, j, 2 * i] += h
            else:
                W[i, j, abs(i - j)] += h
                if i + j < M:
                    W[i, j, i + j] += h
    W.setflags(write=False)
    return W


def _product_blocks(basis, F):
    # F: (n_sub, M, p, q) -> per-subinterval blocks (n_sub, M, M, p, q) indexed [n, l, j]
    W = product_tensor(basis.M)
    return basis.scale * np.einsum("ijl,nipq->nljpq", W, F)


def product_matrix(basis: WaveletBasis, f: CoeffVector) -> OpMatrix:
    """f_tilde with (f Psi) Psi^T ~ Psi^T f_tilde for a scalar expansion f."""
    if f.channels != 1:
        raise ValueError(f"product matrix needs a scalar expansion, got {f.channels} channels")
    F = f.blocks.reshape(basis.n_sub, basis.M, 1, 1)
    return OpMatrix(basis, "product", block_product_matrix(basis, F))


def block_product_matrix(basis: WaveletBasis, F) -> np.ndarray:
    """(s p) x (s q) matrix for matrix-valued coefficients F[n, m] of shape p x q.

    Satisfies F(t) (Psi^T(t) kron I_q) ~ (Psi^T(t) kron I_p) F_tilde.
    """
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 4 or F.shape[:2] != (basis.n_sub, basis.M):
        raise ValueError(f"expected blocks of shape (n_sub, M, p, q), got {F.shape}")
    N, M, p, q = F.shape
    blocks = _product_blocks(basis, F)  # (N, M, M, p, q)
    out = np.zeros((basis.s * p, basis.s * q))
    for n in range(N):
        blk = blocks[n].transpose(0, 2, 1, 3).reshape(M * p, M * q)
        out[n * M * p:(n + 1) * M * p, n * M * q:(n + 1) * M * q] = blk
    return out


def delay_matrix(basis: WaveletBasis, n_v: int) -> OpMatrix:
    """D_v with Psi(t - h_v) = D_v Psi(t) for t >= h_v, h_v = n_v / 2^(k-1)."""
    if int(n_v) != n_v or not 0 <= n_v <= basis.n_sub:
        raise ValueError(f"delay shift must be an integer in 0..{basis.n_sub}, got {n_v}")
    n_v = int(n_v)
    M = basis.M
    D = np.zeros((basis.s, basis.s))
    width = (basis.n_sub - n_v) * M
    D[:width, n_v * M:] = np.eye(width)
    return OpMatrix(basis, "delay", D)


def endpoint_outer(basis: WaveletBasis) -> OpMatrix:
    """Psi(1) Psi(1)^T; nonzero only in the last M x M block."""
    v = eval_vector(basis, 1.0)
    return OpMatrix(basis, "endpoint", np.outer(v, v))


def kron_lift(matrix, dim: int) -> np.ndarray:
    """matrix kron I_dim."""
    return np.kron(np.asarray(matrix, dtype=np.float64), np.eye(dim))


def kron_apply(matrix, dim: int, X) -> np.ndarray:
    """(matrix kron I_dim) @ X without forming the Kronecker product."""
    matrix = np.asarray(matrix, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    vec = X.ndim == 1
    X3 = X.reshape(matrix.shape[1], dim, -1)
    out = np.einsum("ij,jdc->idc", matrix, X3, optimize=True)
    out = out.reshape(matrix.shape[0] * dim, -1)
    return out[:, 0] if vec else out
