"""Independent reference estimators for the two special cases of the matrix method.

* :func:`univariate_dl_network` -- the scalar DerSimonian-Laird style estimator
  for network meta-analysis with random inconsistency effects (one outcome,
  complete data), written with scalar quadratic forms and traces.
* :func:`multivariate_metareg_mom` -- the matrix method of moments for
  multivariate meta-regression when every study has two arms, written study by
  study with the identity study-correlation pattern collapsed to a double sum.

Neither reuses the structural-matrix builders or the estimator; they read the
study records directly and share only :mod:`netmeta.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import NetworkDataset


def _contrast_labels(ds: NetworkDataset):
    """(study index, baseline, treatment, design key) for every contrast, in stacking order."""
    out = []
    for si, s in enumerate(ds.studies):
        base = s.design.treatments[0]
        key = frozenset(s.design.treatments)
        for t in s.design.treatments[1:]:
            out.append((si, base, t, key))
    return out


def _z_row(ds: NetworkDataset, base: str, t: str) -> np.ndarray:
    z = np.zeros(ds.c)
    ref = ds.treatments[0]
    if t != ref:
        z[ds.treatments.index(t) - 1] += 1.0
    if base != ref:
        z[ds.treatments.index(base) - 1] -= 1.0
    return z


@dataclass(frozen=True)
class UnivariateDLResult:
    tau2_beta: float
    tau2_omega: float
    tau2_beta_raw: float
    tau2_omega_raw: float
    delta: np.ndarray
    var_delta: np.ndarray
    Q: float
    Q_design: float

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.var_delta))


def univariate_dl_network(ds: NetworkDataset, substitution: str = "truncated") -> UnivariateDLResult:
    """Scalar moment estimator for one outcome with complete data.

    ``Q`` is the weighted residual sum of squares about the common-effect,
    consistent fit; ``Q_design`` sums the same statistic within each design about
    the design's own means. With ``P = W - W Z (Z'WZ)^{-1} Z'W``::

        E[Q_design] = sum_d (n_d - c_d) + tau_beta^2 sum_d tr(P_d M1_d)
        E[Q]        = (n - c) + tau_beta^2 tr(P M1) + tau_omega^2 tr(P M2)

    ``tau_beta^2`` comes from the first line and is truncated at zero before it
    enters the second line (``substitution="truncated"``), or enters untruncated
    (``"raw"``).
    """
    if ds.p != 1:
        raise ValueError("the univariate oracle needs exactly one outcome")
    if any(s.missing.any() for s in ds.studies):
        raise ValueError("the univariate oracle assumes complete data")
    labels = _contrast_labels(ds)
    n = len(labels)
    c = ds.c

    y = np.concatenate([s.effects[:, 0] for s in ds.studies])
    Z = np.array([_z_row(ds, b, t) for _, b, t, _ in labels])
    S = np.zeros((n, n))
    W = np.zeros((n, n))
    M1 = np.zeros((n, n))
    M2 = np.zeros((n, n))
    pos = 0
    spans = []
    for s in ds.studies:
        k = s.design.contrast_count
        S[pos:pos + k, pos:pos + k] = s.within_cov
        W[pos:pos + k, pos:pos + k] = np.linalg.inv(s.within_cov)
        spans.append((pos, pos + k))
        pos += k
    for i, (si, bi, ti, di) in enumerate(labels):
        for j, (sj, bj, tj, dj) in enumerate(labels):
            if si == sj:
                M1[i, j] = 1.0 if i == j else 0.5
            if di == dj:
                M2[i, j] = 1.0 if (bi, ti) == (bj, tj) else 0.5

    G = Z.T @ W @ Z
    delta0 = np.linalg.solve(G, Z.T @ W @ y)
    e = y - Z @ delta0
    Q = float(e @ W @ e)
    P = W - W @ Z @ np.linalg.solve(G, Z.T @ W)

    # design-level statistics: residuals about each design's weighted mean contrast vector
    Q_design = 0.0
    df_design = 0.0
    tr_design = 0.0
    for key in dict.fromkeys(lab[3] for lab in labels):
        members = [si for si, s in enumerate(ds.studies) if frozenset(s.design.treatments) == key]
        if len(members) < 2:
            continue
        k = ds.studies[members[0]].design.contrast_count
        Wsum = sum(W[a:b, a:b] for a, b in (spans[m] for m in members))
        mu = np.linalg.solve(Wsum, sum(W[a:b, a:b] @ y[a:b] for a, b in (spans[m] for m in members)))
        for m in members:
            a, b = spans[m]
            r = y[a:b] - mu
            Q_design += float(r @ W[a:b, a:b] @ r)
        idx = np.concatenate([np.arange(*spans[m]) for m in members])
        W_d = W[np.ix_(idx, idx)]
        X_d = np.tile(np.eye(k), (len(members), 1))
        P_d = W_d - W_d @ X_d @ np.linalg.solve(X_d.T @ W_d @ X_d, X_d.T @ W_d)
        df_design += len(idx) - k
        tr_design += float(np.trace(P_d @ M1[np.ix_(idx, idx)]))

    if tr_design <= 0.0:
        raise ValueError("no design has two or more studies; tau_beta^2 is not identifiable")
    tau2_beta_raw = (Q_design - df_design) / tr_design
    tau2_beta = max(0.0, tau2_beta_raw)
    plug = tau2_beta if substitution == "truncated" else tau2_beta_raw
    denom = float(np.trace(P @ M2))
    if denom > 1e-12 * float(np.trace(P)):
        tau2_omega_raw = (Q - (n - c) - plug * float(np.trace(P @ M1))) / denom
        tau2_omega = max(0.0, tau2_omega_raw)
    else:
        # no between-design information: report nan and fit with tau_omega^2 = 0
        tau2_omega_raw, tau2_omega = float("nan"), 0.0

    V = tau2_beta * M1 + tau2_omega * M2 + S
    Vinv = np.linalg.inv(V)
    var = np.linalg.inv(Z.T @ Vinv @ Z)
    delta = var @ Z.T @ Vinv @ y
    return UnivariateDLResult(tau2_beta, tau2_omega, tau2_beta_raw, tau2_omega_raw, delta, var, Q, Q_design)


@dataclass(frozen=True)
class MetaRegressionResult:
    sigma_raw: np.ndarray
    sigma: np.ndarray
    btrQ: np.ndarray
    coefficient: np.ndarray


def multivariate_metareg_mom(ds: NetworkDataset) -> MetaRegressionResult:
    """Matrix method of moments for multivariate meta-regression, two-arm studies only.

    Each study contributes one ``p``-vector ``y_i`` with design matrix
    ``X_i = I_p kron z_i``. Because studies are independent, the expectation of
    the block-traced ``Q`` reduces to ``sum_i sum_k A_{k,i} Sigma B_{i,k} + btr(B)``.
    Missing outcomes get zero weight.
    """
    if any(s.design.contrast_count != 1 for s in ds.studies):
        raise ValueError("the meta-regression oracle needs every study to have exactly two arms")
    p = ds.p
    N = ds.N
    ys, Ws, Rs, Xs = [], [], [], []
    for s in ds.studies:
        obs = ~s.missing[0]
        W = np.zeros((p, p))
        if obs.any():
            idx = np.flatnonzero(obs)
            W[np.ix_(idx, idx)] = np.linalg.inv(s.within_cov[np.ix_(idx, idx)])
        ys.append(np.where(obs, s.effects[0], 0.0))
        Ws.append(W)
        Rs.append(np.diag(obs.astype(float)))
        z = _z_row(ds, s.design.treatments[0], s.design.treatments[1])
        Xs.append(np.kron(np.eye(p), z[None, :]))

    G = sum(X.T @ W @ X for X, W in zip(Xs, Ws))
    Ginv = np.linalg.inv(G)
    beta = Ginv @ sum(X.T @ W @ y for X, W, y in zip(Xs, Ws, ys))
    resid = [y - X @ beta for X, y in zip(Xs, ys)]
    btrQ = sum(np.outer(W @ r, R @ r) for W, R, r in zip(Ws, Rs, resid))

    # H_{ij} = X_i G^{-1} X_j' W_j ; (I - H)'_{k,i} = delta_ki I - H_{ik}'
    def H(i, j):
        return Xs[i] @ Ginv @ Xs[j].T @ Ws[j]

    I = np.eye(p)

    def IHt(k, i):
        return (I if k == i else 0.0) - H(i, k).T

    C = np.zeros((p * p, p * p))
    btrB = np.zeros((p, p))
    for i in range(N):
        for k in range(N):
            A_ki = IHt(k, i) @ Ws[i]
            B_ik = IHt(i, k) @ Rs[k]
            C += np.kron(B_ik.T, A_ki)
            if i == k:
                btrB += B_ik
    rhs = kernels.vec(btrQ) - kernels.vec(btrB)
    sigma_raw = kernels.unvec(np.linalg.solve(C, rhs), p)
    sigma, _ = kernels.truncate_psd(kernels.symmetrize(sigma_raw))
    return MetaRegressionResult(sigma_raw, sigma, btrQ, C)
