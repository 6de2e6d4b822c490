"""Matrix method-of-moments estimation of the heterogeneity and inconsistency covariances.

Two ``p x p`` statistics drive the estimation: the block trace of the global
``Q`` matrix built from residuals of the common-effect, consistent fit, and the
sum over designs of the block traces of design-specific ``Q_d`` matrices built
from residuals around each design's own mean. Their expectations are linear in
``vec(Sigma_beta)`` and ``vec(Sigma_omega)``::

    vec E[btr Q]          = C   vec(Sigma_beta) + D vec(Sigma_omega) + E
    vec E[sum_d btr Q_d]  = C_d vec(Sigma_beta) + E_d          (summed over d)

The design-level equation gives ``Sigma_beta``; substituting it into the global
equation gives ``Sigma_omega``. Both are then symmetrized and truncated to the
PSD cone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import kernels
from .structure import StructuralMatrices

COND_LIMIT = 1e12

Variant = Literal["full", "consistent_eq7", "consistent_eq8", "common_effect"]
Substitution = Literal["truncated", "raw"]


class IdentifiabilityError(np.linalg.LinAlgError):
    """A linear system needed for estimation is singular or badly conditioned.

    ``target`` names what cannot be identified: ``"delta"``, ``"sigma_beta"`` or
    ``"sigma_omega"``. ``hint`` suggests a simpler model.
    """

    def __init__(self, target: str, message: str, hint: str = "", condition: float = np.inf):
        self.target = target
        self.hint = hint
        self.condition = condition
        super().__init__(message)


SIMPLER_MODEL_HINT = (
    "consider a simpler model instead: the consistent model, the common-effect model, "
    "or an analysis of fewer outcomes"
)


def unidentified_parameters(G: np.ndarray, labels: tuple[str, ...] | list[str], rtol: float = 1e-10) -> list[str]:
    """Labels of parameters touched by the numerical null space of ``G``."""
    u, s, vt = np.linalg.svd(G)
    if s.size == 0:
        return []
    null = vt[s <= rtol * max(s[0], 1e-300)]
    if null.size == 0:
        return []
    weight = np.sum(null**2, axis=0)
    return [labels[i] for i in np.flatnonzero(weight > 1e-8)]


def _solve(G: np.ndarray, rhs: np.ndarray, target: str, message: str) -> tuple[np.ndarray, float]:
    cond = float(np.linalg.cond(G)) if G.size else 0.0
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise IdentifiabilityError(target, f"{message} (condition number {cond:.3g})", SIMPLER_MODEL_HINT, cond)
    return np.linalg.solve(G, rhs), cond


# ---------------------------------------------------------------------------
# hat matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DesignHat:
    H: np.ndarray
    A: np.ndarray
    B: np.ndarray


@dataclass(frozen=True)
class HatSystem:
    H: np.ndarray
    A: np.ndarray
    B: np.ndarray
    per_design: tuple[DesignHat, ...]
    xtwx_condition: float


def common_effect_hat(X: np.ndarray, W: np.ndarray, labels=None) -> tuple[np.ndarray, float]:
    """``H = X (X'WX)^{-1} X'W`` for the common-effect, consistent model."""
    G = X.T @ W @ X
    cond = float(np.linalg.cond(G)) if G.size else 0.0
    if not np.isfinite(cond) or cond > COND_LIMIT:
        names = unidentified_parameters(G, labels) if labels is not None else []
        which = f": no information on {', '.join(names)}" if names else ""
        raise IdentifiabilityError(
            "delta",
            f"the common-effect model is not identifiable{which} (condition number {cond:.3g})",
            "every basic parameter needs direct or indirect evidence for every outcome",
            cond,
        )
    return X @ np.linalg.solve(G, X.T @ W), cond


def design_hat(X_d: np.ndarray, W_d: np.ndarray) -> np.ndarray:
    """Design-level hat matrix; the pseudoinverse keeps partly unidentified designs usable."""
    return X_d @ kernels.pseudo_inverse(X_d.T @ W_d @ X_d) @ X_d.T @ W_d


def build_hat_system(sm: StructuralMatrices) -> HatSystem:
    H, cond = common_effect_hat(sm.X, sm.W, sm.parameter_labels)
    I = np.eye(H.shape[0])
    IHt = (I - H).T
    per = []
    for blk in sm.per_design:
        H_d = design_hat(blk.X, blk.W)
        IHt_d = (np.eye(H_d.shape[0]) - H_d).T
        per.append(DesignHat(H_d, IHt_d @ blk.W, IHt_d @ blk.R))
    return HatSystem(H, IHt @ sm.W, IHt @ sm.R, tuple(per), cond)


# ---------------------------------------------------------------------------
# Q matrices
# ---------------------------------------------------------------------------


def _q(W, R, H, Y):
    resid = Y - H @ Y
    return np.outer(W @ resid, R @ resid)


def compute_global_Q(sm: StructuralMatrices, hs: HatSystem) -> np.ndarray:
    """``Q = W (Y - Yhat)(Y - Yhat)' R`` with ``Yhat`` from the common-effect fit."""
    return _q(sm.W, sm.R, hs.H, sm.Y)


def compute_design_Q(sm: StructuralMatrices, hs: HatSystem, d: int) -> np.ndarray:
    blk = sm.per_design[d]
    return _q(blk.W, blk.R, hs.per_design[d].H, blk.Y)


# ---------------------------------------------------------------------------
# estimating equations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatingSystem:
    p: int
    Cmat: np.ndarray
    Dmat: np.ndarray
    Evec: np.ndarray
    Cd_sum: np.ndarray
    Ed_sum: np.ndarray
    btrQ: np.ndarray
    btrQd_sum: np.ndarray

    def expected_btrQ(self, sigma_beta, sigma_omega) -> np.ndarray:
        v = self.Cmat @ kernels.vec(sigma_beta) + self.Dmat @ kernels.vec(sigma_omega) + self.Evec
        return kernels.unvec(v, self.p)

    def expected_btrQd(self, sigma_beta) -> np.ndarray:
        return kernels.unvec(self.Cd_sum @ kernels.vec(sigma_beta) + self.Ed_sum, self.p)


def assemble_equations(sm: StructuralMatrices, hs: HatSystem) -> EstimatingSystem:
    p = sm.p
    Cmat = kernels.coefficient_matrix(hs.A, hs.B, sm.M1, p)
    Dmat = kernels.coefficient_matrix(hs.A, hs.B, sm.M2, p)
    Evec = kernels.vec(kernels.block_trace(hs.B, p))
    btrQ = kernels.block_trace(compute_global_Q(sm, hs), p)
    Cd_sum = np.zeros((p * p, p * p))
    Ed_sum = np.zeros(p * p)
    btrQd = np.zeros((p, p))
    for d, (blk, dh) in enumerate(zip(sm.per_design, hs.per_design)):
        if blk.n_studies < 2:
            # a single study fits its own design mean exactly: Q_d, C_d and E_d vanish
            continue
        Cd_sum += kernels.coefficient_matrix(dh.A, dh.B, blk.M1, p)
        Ed_sum += kernels.vec(kernels.block_trace(dh.B, p))
        btrQd += kernels.block_trace(compute_design_Q(sm, hs, d), p)
    return EstimatingSystem(p, Cmat, Dmat, Evec, Cd_sum, Ed_sum, btrQ, btrQd)


# ---------------------------------------------------------------------------
# solving
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovarianceEstimates:
    sigma_beta_raw: np.ndarray
    sigma_omega_raw: np.ndarray
    sigma_beta: np.ndarray
    sigma_omega: np.ndarray
    truncated_eigenvalues: dict[str, list[float]]
    model_variant: Variant
    substitution: Substitution = "truncated"
    conditions: dict[str, float] = field(default_factory=dict)


def _finalize(raw: np.ndarray) -> tuple[np.ndarray, list[float]]:
    return kernels.truncate_psd(kernels.symmetrize(raw))


BETA_MSG = ("between-study covariance is not identifiable: it needs at least two studies of the "
            "same design reporting every pair of outcomes")
BETA_EQ7_MSG = ("between-study covariance is not identifiable from the global equation under "
                "consistency: the residual variation carries no information on some outcome pair")
OMEGA_MSG = ("inconsistency covariance is not identifiable: it needs studies of at least two "
             "different designs, forming a loop, reporting every pair of outcomes")


def solve_sigma_beta_eq8(es: EstimatingSystem) -> tuple[np.ndarray, float]:
    v, cond = _solve(es.Cd_sum, kernels.vec(es.btrQd_sum) - es.Ed_sum, "sigma_beta", BETA_MSG)
    return kernels.unvec(v, es.p), cond


def solve_sigma_beta_eq7(es: EstimatingSystem) -> tuple[np.ndarray, float]:
    v, cond = _solve(es.Cmat, kernels.vec(es.btrQ) - es.Evec, "sigma_beta", BETA_EQ7_MSG)
    return kernels.unvec(v, es.p), cond


def solve_full_model(es: EstimatingSystem, substitution: Substitution = "truncated") -> CovarianceEstimates:
    """Estimate both covariance matrices.

    ``substitution`` selects which estimate of ``Sigma_beta`` enters the global
    equation: the truncated PSD one (default) or the raw solution, which keeps
    both moment equations satisfied exactly.
    """
    if substitution not in ("truncated", "raw"):
        raise ValueError(f"substitution must be 'truncated' or 'raw', got {substitution!r}")
    beta_raw, cond_b = solve_sigma_beta_eq8(es)
    beta, clamped_b = _finalize(beta_raw)
    plug = beta if substitution == "truncated" else beta_raw
    rhs = kernels.vec(es.btrQ) - es.Cmat @ kernels.vec(plug) - es.Evec
    v, cond_w = _solve(es.Dmat, rhs, "sigma_omega", OMEGA_MSG)
    omega_raw = kernels.unvec(v, es.p)
    omega, clamped_w = _finalize(omega_raw)
    return CovarianceEstimates(
        beta_raw, omega_raw, beta, omega,
        {"sigma_beta": clamped_b, "sigma_omega": clamped_w},
        "full", substitution, {"sigma_beta": cond_b, "sigma_omega": cond_w},
    )


def solve_consistent_model(es: EstimatingSystem, option: Literal["eq7", "eq8"] = "eq7") -> CovarianceEstimates:
    """Estimate ``Sigma_beta`` with ``Sigma_omega`` fixed at zero.

    ``eq7`` uses the global equation, which exploits the consistency assumption;
    ``eq8`` uses the design-level equation exactly as the full model does.
    """
    if option == "eq7":
        beta_raw, cond = solve_sigma_beta_eq7(es)
    elif option == "eq8":
        beta_raw, cond = solve_sigma_beta_eq8(es)
    else:
        raise ValueError(f"option must be 'eq7' or 'eq8', got {option!r}")
    beta, clamped = _finalize(beta_raw)
    zero = np.zeros((es.p, es.p))
    return CovarianceEstimates(
        beta_raw, zero, beta, zero.copy(),
        {"sigma_beta": clamped, "sigma_omega": []},
        f"consistent_{option}", "truncated", {"sigma_beta": cond},
    )


def common_effect_estimates(p: int) -> CovarianceEstimates:
    z = np.zeros((p, p))
    return CovarianceEstimates(z, z.copy(), z.copy(), z.copy(), {"sigma_beta": [], "sigma_omega": []}, "common_effect")


def estimate_covariances(
    sm: StructuralMatrices,
    model: Literal["full", "consistent", "common"] = "full",
    sigma_beta: Literal["eq7", "eq8"] | None = None,
    substitution: Substitution = "truncated",
) -> CovarianceEstimates:
    """Run the estimator for one model variant.

    ``sigma_beta`` picks the equation for the consistent model (default
    ``eq7``); the full model always uses the design-level equation.
    """
    if model == "common":
        if sigma_beta is not None:
            raise ValueError("the common-effect model has no between-study covariance to estimate")
        return common_effect_estimates(sm.p)
    es = assemble_equations(sm, build_hat_system(sm))
    if model == "full":
        if sigma_beta not in (None, "eq8"):
            raise ValueError("the full model estimates Sigma_beta from the design-level equation (eq8) only")
        return solve_full_model(es, substitution)
    if model == "consistent":
        return solve_consistent_model(es, sigma_beta or "eq7")
    raise ValueError(f"unknown model {model!r}")
