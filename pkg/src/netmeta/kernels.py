"""Block linear-algebra kernels used by the moment estimator.

Matrices of size ``(n*p, n*p)`` are viewed as ``n x n`` grids of ``p x p``
blocks; ``A_{k,i}`` is ``A[k*p:(k+1)*p, i*p:(i+1)*p]``. ``vec`` is column-major
throughout, so ``vec(A X B) = (B.T kron A) vec(X)``.

The two triple-sum kernels (:func:`btr_sandwich` and
:func:`coefficient_matrix`) dominate the cost of a fit. Each has a numba loop
implementation and an ``einsum`` implementation; which one runs is decided by
:mod:`netmeta._accel`. The loops visit only the nonzero ``m_ij``, which pays off
because ``M1`` and ``M2`` are block diagonal; the ``einsum`` path is dense.
"""

from __future__ import annotations

import numpy as np

from ._accel import njit, use_numba

PINV_RTOL = 1e-10
EIG_NOISE = 1e-12


def _check_blocked(m: np.ndarray, p: int) -> int:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if p < 1 or m.shape[0] % p:
        raise ValueError(f"matrix of size {m.shape[0]} is not divisible into {p}x{p} blocks")
    return m.shape[0] // p


def blocks(m: np.ndarray, p: int) -> np.ndarray:
    """Return a ``(n, p, n, p)`` view so that ``view[k, :, i, :]`` is block ``(k, i)``."""
    n = _check_blocked(m, p)
    return m.reshape(n, p, n, p)


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _block_trace_numpy(m, p):
    n = m.shape[0] // p
    return np.einsum("kakb->ab", m.reshape(n, p, n, p))


def _btr_sandwich_numpy(A, M, Sigma, B, p):
    n = M.shape[0]
    A4 = A.reshape(n, p, n, p)
    B4 = B.reshape(n, p, n, p)
    return np.einsum("ij,kaib,bc,jcke->ae", M, A4, Sigma, B4, optimize=True)


def _coefficient_numpy(A, B, M, p):
    n = M.shape[0]
    A4 = A.reshape(n, p, n, p)
    B4 = B.reshape(n, p, n, p)
    # G[i, v, k, u] = sum_j m_ij B_{j,k}[v, u]
    G = np.einsum("ij,jvku->ivku", M, B4, optimize=True)
    out = np.einsum("ivku,kaib->uavb", G, A4, optimize=True)
    return out.reshape(p * p, p * p)


# ---------------------------------------------------------------------------
# numba loop implementations
# ---------------------------------------------------------------------------


@njit
def _block_trace_loop(m, p):
    n = m.shape[0] // p
    out = np.zeros((p, p))
    for k in range(n):
        o = k * p
        for a in range(p):
            for b in range(p):
                out[a, b] += m[o + a, o + b]
    return out


def _csr(M):
    """Row-compressed nonzeros of ``M``: the loops only visit ``m_ij != 0``."""
    rows, cols = np.nonzero(M)
    indptr = np.zeros(M.shape[0] + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return np.cumsum(indptr), cols.astype(np.int64), np.ascontiguousarray(M[rows, cols], dtype=np.float64)


@njit
def _mix_rows(indptr, indices, data, X, p):
    """``(M kron I_p) X`` using the nonzero ``m_ij`` only; rows are copied contiguously."""
    n = indptr.shape[0] - 1
    out = np.zeros(X.shape)
    cols = X.shape[1]
    for i in range(n):
        io = i * p
        for q in range(indptr[i], indptr[i + 1]):
            mij = data[q]
            jo = indices[q] * p
            for b in range(p):
                for t in range(cols):
                    out[io + b, t] += mij * X[jo + b, t]
    return out


@njit
def _btr_sandwich_loop(A, indptr, indices, data, Sigma, B, p):
    n = indptr.shape[0] - 1
    np_ = n * p
    # SB = (I kron Sigma) B, then U = (M kron I) SB = (M kron Sigma) B
    SB = np.zeros((np_, np_))
    for j in range(n):
        jo = j * p
        for b in range(p):
            for c in range(p):
                s = Sigma[b, c]
                if s == 0.0:
                    continue
                for t in range(np_):
                    SB[jo + b, t] += s * B[jo + c, t]
    U = _mix_rows(indptr, indices, data, SB, p)
    # btr(A U) = sum_{k,i} A_{k,i} U_{i,k}
    out = np.zeros((p, p))
    for k in range(n):
        ko = k * p
        for a in range(p):
            for r in range(np_):
                x = A[ko + a, r]
                if x == 0.0:
                    continue
                for e in range(p):
                    out[a, e] += x * U[r, ko + e]
    return out


@njit
def _coefficient_loop(A, B, indptr, indices, data, p):
    n = indptr.shape[0] - 1
    # G_{i,k} = sum_j m_ij B_{j,k}
    G = _mix_rows(indptr, indices, data, B, p)
    out = np.zeros((p * p, p * p))
    # out += G_{i,k}.T kron A_{k,i}
    for i in range(n):
        io = i * p
        for k in range(n):
            ko = k * p
            for v in range(p):
                for u in range(p):
                    g = G[io + v, ko + u]
                    if g == 0.0:
                        continue
                    for a in range(p):
                        r = u * p + a
                        for b in range(p):
                            out[r, v * p + b] += g * A[ko + a, io + b]
    return out


def _btr_sandwich_sparse(A, M, Sigma, B, p):
    indptr, indices, data = _csr(M)
    return _btr_sandwich_loop(np.ascontiguousarray(A), indptr, indices, data,
                              np.ascontiguousarray(Sigma), np.ascontiguousarray(B), p)


def _coefficient_sparse(A, B, M, p):
    indptr, indices, data = _csr(M)
    return _coefficient_loop(np.ascontiguousarray(A), np.ascontiguousarray(B), indptr, indices, data, p)


# ---------------------------------------------------------------------------
# public surface
# ---------------------------------------------------------------------------


def block_trace(m: np.ndarray, p: int) -> np.ndarray:
    """Sum of the ``p x p`` blocks on the main block diagonal of ``m``.

    For ``p == 1`` this is the ordinary trace, returned as a ``1 x 1`` array.
    """
    m = np.asarray(m, dtype=float)
    _check_blocked(m, p)
    if use_numba():
        return _block_trace_loop(np.ascontiguousarray(m), p)
    return _block_trace_numpy(m, p)


def _check_sandwich(A, M, B, p):
    n = M.shape[0]
    if M.ndim != 2 or M.shape != (n, n):
        raise ValueError(f"M must be square, got shape {M.shape}")
    for name, X in (("A", A), ("B", B)):
        if X.shape != (n * p, n * p):
            raise ValueError(f"{name} has shape {X.shape}, expected {(n * p, n * p)}")


def btr_sandwich(A: np.ndarray, M: np.ndarray, Sigma: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``btr(A (M kron Sigma) B)`` without forming the Kronecker product.

    Evaluates ``sum_{i,j,k} m_ij A_{k,i} Sigma B_{j,k}``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    M = np.asarray(M, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.ndim != 2 or Sigma.shape[0] != Sigma.shape[1]:
        raise ValueError(f"Sigma must be square, got shape {Sigma.shape}")
    p = Sigma.shape[0]
    _check_sandwich(A, M, B, p)
    if use_numba():
        return _btr_sandwich_sparse(A, M, Sigma, B, p)
    return _btr_sandwich_numpy(A, M, Sigma, B, p)


def coefficient_matrix(A: np.ndarray, B: np.ndarray, M: np.ndarray, p: int) -> np.ndarray:
    """The ``p^2 x p^2`` matrix ``sum_{i,j,k} m_ij B_{j,k}^T kron A_{k,i}``.

    It satisfies ``coefficient_matrix(A, B, M, p) @ vec(S) == vec(btr_sandwich(A, M, S, B))``
    for every ``p x p`` matrix ``S``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    M = np.asarray(M, dtype=float)
    _check_sandwich(A, M, B, p)
    if use_numba():
        return _coefficient_sparse(A, B, M, p)
    return _coefficient_numpy(A, B, M, p)


def vec(m: np.ndarray) -> np.ndarray:
    """Column-major stacking of the columns of ``m``."""
    return np.asarray(m).reshape(-1, order="F")


def unvec(v: np.ndarray, rows: int, cols: int | None = None) -> np.ndarray:
    cols = rows if cols is None else cols
    return np.asarray(v).reshape(rows, cols, order="F")


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(a, b)


def pseudo_inverse(m: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse via the SVD.

    Singular values below ``rtol`` times the largest are treated as zero.
    """
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return m.T.copy()
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s[0] == 0.0:
        return np.zeros(m.T.shape)
    keep = s > rtol * s[0]
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (vt.T * inv) @ u.T


def symmetrize(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return (m + m.T) / 2.0


def truncate_psd(m: np.ndarray, sym_tol: float = 1e-10) -> tuple[np.ndarray, list[float]]:
    """Project a symmetric matrix onto the positive semi-definite cone.

    Negative eigenvalues are set to zero and the matrix is rebuilt from its
    spectral decomposition.

    Returns
    -------
    truncated : ndarray
        Symmetric PSD matrix.
    clamped : list of float
        Eigenvalues that were set to zero. Values in ``(-1e-12, 0)`` are zeroed
        but not listed.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise np.linalg.LinAlgError("cannot eigendecompose a matrix with non-finite entries")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if np.max(np.abs(m - m.T), initial=0.0) > sym_tol * scale:
        raise ValueError("truncate_psd requires a symmetric matrix; symmetrize it first")
    lam, vecs = np.linalg.eigh(m)
    if np.all(lam >= 0.0):
        return m.copy(), []
    clamped = [float(x) for x in lam if x <= -EIG_NOISE]
    kept = np.maximum(lam, 0.0)
    out = (vecs * kept) @ vecs.T
    return (out + out.T) / 2.0, clamped
