"""Structural matrices of the multivariate network meta-analysis model.

Everything here is a deterministic function of a canonical dataset. Stacked
vectors are contrast-major: ``Y`` holds ``n`` blocks of ``p`` outcomes, one
block per contrast, studies ordered design by design.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Design, NetworkDataset, iter_design_groups

COND_LIMIT = 1e12


class SingularCovarianceError(np.linalg.LinAlgError):
    """An observed within-study covariance block cannot be inverted reliably."""


def build_p_matrix(c_d: int) -> np.ndarray:
    """``c_d x c_d`` matrix with ones on the diagonal and halves elsewhere."""
    if c_d < 1:
        raise ValueError(f"c_d must be at least 1, got {c_d}")
    P = np.full((c_d, c_d), 0.5)
    np.fill_diagonal(P, 1.0)
    return P


def build_contrast_rows(design: Design, treatments: tuple[str, ...] | list[str]) -> np.ndarray:
    """Rows of the univariate design matrix for one study of ``design``.

    Row ``i`` describes the effect of the design's ``(i+1)``-th treatment
    against its baseline in terms of the basic parameters (effects against the
    network reference ``treatments[0]``). Columns follow ``treatments[1:]``.
    """
    index = {t: i for i, t in enumerate(treatments)}
    c = len(treatments) - 1
    base = design.treatments[0]
    Z = np.zeros((design.contrast_count, c))
    for row, t in enumerate(design.treatments[1:]):
        j, k = index.get(t), index.get(base)
        if j is None or k is None:
            raise ValueError(f"design {design.label} uses a treatment outside the network")
        if j == 0:
            raise ValueError(
                f"design {design.label}: reference treatment {treatments[0]} cannot be a "
                f"non-baseline arm; canonicalize the dataset first"
            )
        Z[row, j - 1] = 1.0
        if k != 0:
            Z[row, k - 1] = -1.0
    return Z


def build_m_matrices(ds: NetworkDataset) -> tuple[np.ndarray, np.ndarray]:
    """Study (``M1``) and design (``M2``) correlation patterns, each ``n x n``."""
    n = ds.n
    M1 = np.zeros((n, n))
    M2 = np.zeros((n, n))
    pos = 0
    for design, studies in iter_design_groups(ds):
        c_d = design.contrast_count
        P = build_p_matrix(c_d)
        start = pos
        for _ in studies:
            M1[pos:pos + c_d, pos:pos + c_d] = P
            pos += c_d
        M2[start:pos, start:pos] = np.kron(np.ones((len(studies), len(studies))), P)
    return M1, M2


def build_z_matrix(ds: NetworkDataset) -> np.ndarray:
    rows = [build_contrast_rows(s.design, ds.treatments) for s in ds.studies]
    return np.vstack(rows) if rows else np.zeros((0, ds.c))


def build_design_matrix_X(Z: np.ndarray, p: int) -> np.ndarray:
    """Stack ``I_p kron z_i`` for every row ``z_i`` of ``Z``: shape ``(n p) x (p c)``."""
    n, c = Z.shape
    X = np.zeros((n * p, p * c))
    for i in range(n):
        X[i * p:(i + 1) * p] = np.kron(np.eye(p), Z[i:i + 1])
    return X


def precision_matrix(S: np.ndarray, observed: np.ndarray, cond_limit: float = COND_LIMIT) -> np.ndarray:
    """Precision matrix with zero weight on missing components.

    The inverse of the observed principal submatrix of ``S`` is embedded at the
    observed positions; rows and columns of missing components are zero.

    Raises
    ------
    SingularCovarianceError
        If the observed submatrix is not positive definite or its condition
        number exceeds ``cond_limit``.
    """
    S = np.asarray(S, dtype=float)
    obs = np.asarray(observed, dtype=bool).reshape(-1)
    W = np.zeros_like(S)
    if not obs.any():
        return W
    idx = np.flatnonzero(obs)
    S_r = S[np.ix_(idx, idx)]
    S_r = (S_r + S_r.T) / 2.0
    lam = np.linalg.eigvalsh(S_r)
    if lam[0] <= 0 or lam[-1] / lam[0] > cond_limit:
        raise SingularCovarianceError(
            f"observed covariance block is singular or ill-conditioned "
            f"(eigenvalues in [{lam[0]:.3g}, {lam[-1]:.3g}])"
        )
    L = np.linalg.cholesky(S_r)
    Linv = np.linalg.solve(L, np.eye(len(idx)))
    inv = Linv.T @ Linv
    W[np.ix_(idx, idx)] = (inv + inv.T) / 2.0
    return W


def _block_diag(mats: list[np.ndarray]) -> np.ndarray:
    size = sum(m.shape[0] for m in mats)
    out = np.zeros((size, size))
    pos = 0
    for m in mats:
        k = m.shape[0]
        out[pos:pos + k, pos:pos + k] = m
        pos += k
    return out


@dataclass(frozen=True)
class DesignBlock:
    """Per-design slices of the stacked quantities."""

    design: Design
    n_studies: int
    contrasts: slice  # positions in 0..n
    rows: slice  # positions in 0..n*p
    Y: np.ndarray
    S: np.ndarray
    W: np.ndarray
    R: np.ndarray
    M1: np.ndarray
    X: np.ndarray


@dataclass(frozen=True)
class StructuralMatrices:
    p: int
    n: int
    c: int
    Y: np.ndarray
    S: np.ndarray
    R: np.ndarray
    W: np.ndarray
    M1: np.ndarray
    M2: np.ndarray
    Z: np.ndarray
    X: np.ndarray
    per_design: tuple[DesignBlock, ...]
    observed: np.ndarray
    parameter_labels: tuple[str, ...]


def build_structure(ds: NetworkDataset, placeholder: float = 0.0, cov_placeholder: float = 0.0) -> StructuralMatrices:
    """Assemble every structural matrix for a canonical dataset.

    ``placeholder`` fills missing entries of ``Y`` and ``cov_placeholder`` the
    rows and columns of ``S`` belonging to missing components. Neither affects
    any estimate; both are exposed so that this can be checked.
    """
    p = ds.p
    Y_parts, S_parts, W_parts, obs_parts = [], [], [], []
    for s in ds.studies:
        obs = s.observed
        y = s.effects.reshape(-1).copy()
        y[~obs] = placeholder
        S_i = s.within_cov.copy()
        S_i[~obs, :] = cov_placeholder
        S_i[:, ~obs] = cov_placeholder
        try:
            W_i = precision_matrix(s.within_cov, obs)
        except SingularCovarianceError as exc:
            raise SingularCovarianceError(f"study {s.id}: {exc}") from None
        Y_parts.append(y)
        S_parts.append(S_i)
        W_parts.append(W_i)
        obs_parts.append(obs)
    Y = np.concatenate(Y_parts)
    observed = np.concatenate(obs_parts)
    S = _block_diag(S_parts)
    W = _block_diag(W_parts)
    R = np.diag(observed.astype(float))
    M1, M2 = build_m_matrices(ds)
    Z = build_z_matrix(ds)
    X = build_design_matrix_X(Z, p)

    per_design = []
    pos = 0
    for design, studies in iter_design_groups(ds):
        c_d = design.contrast_count
        n_d = c_d * len(studies)
        cs = slice(pos, pos + n_d)
        rs = slice(pos * p, (pos + n_d) * p)
        per_design.append(
            DesignBlock(
                design=design,
                n_studies=len(studies),
                contrasts=cs,
                rows=rs,
                Y=Y[rs],
                S=S[rs, rs],
                W=W[rs, rs],
                R=R[rs, rs],
                M1=M1[cs, cs],
                X=np.kron(np.ones((len(studies), 1)), np.eye(p * c_d)),
            )
        )
        pos += n_d

    return StructuralMatrices(
        p=p, n=ds.n, c=ds.c, Y=Y, S=S, R=R, W=W, M1=M1, M2=M2, Z=Z, X=X,
        per_design=tuple(per_design), observed=observed,
        parameter_labels=tuple(ds.basic_parameter_labels()),
    )
