"""Weighted least-squares inference for the basic parameters.

The estimated covariance matrices are plugged into the marginal variance of
``Y`` and then treated as fixed and known. With missing outcomes the inverse
variance is replaced by the precision matrix of the observed components.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np
from scipy.stats import norm

from .data import NetworkDataset
from .estimator import (
    CovarianceEstimates,
    IdentifiabilityError,
    SIMPLER_MODEL_HINT,
    assemble_equations,
    build_hat_system,
    unidentified_parameters,
)
from .structure import StructuralMatrices, build_structure, precision_matrix

COND_LIMIT = 1e12


@dataclass(frozen=True)
class FitResult:
    delta_hat: np.ndarray
    var_delta: np.ndarray
    labels: tuple[str, ...]
    ci_level: float
    covariances: CovarianceEstimates
    p: int
    c: int

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.var_delta), 0.0, None))

    @property
    def z(self) -> float:
        return float(norm.ppf(0.5 + self.ci_level / 2.0))

    @property
    def ci_lower(self) -> np.ndarray:
        return self.delta_hat - self.z * self.se

    @property
    def ci_upper(self) -> np.ndarray:
        return self.delta_hat + self.z * self.se

    def index(self, outcome: int, treatment: int) -> int:
        """Position in delta of the basic parameter for ``treatment`` (1..c) and ``outcome`` (0..p-1)."""
        return outcome * self.c + (treatment - 1)


def marginal_variance(sm: StructuralMatrices, cov: CovarianceEstimates) -> np.ndarray:
    return np.kron(sm.M1, cov.sigma_beta) + np.kron(sm.M2, cov.sigma_omega) + sm.S


def fit_gls(sm: StructuralMatrices, cov: CovarianceEstimates, ci_level: float = 0.95) -> FitResult:
    """Generalised least-squares estimate of delta and its variance."""
    if not 0.0 < ci_level < 1.0:
        raise ValueError(f"ci_level must be in (0, 1), got {ci_level}")
    V = marginal_variance(sm, cov)
    P = precision_matrix(V, sm.observed, cond_limit=np.inf)
    G = sm.X.T @ P @ sm.X
    cond = float(np.linalg.cond(G))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        names = unidentified_parameters(G, sm.parameter_labels)
        raise IdentifiabilityError(
            "delta",
            f"basic parameter(s) {', '.join(names) or '?'} cannot be estimated (condition number {cond:.3g})",
            "every basic parameter needs direct or indirect evidence for every outcome",
            cond,
        )
    var = np.linalg.inv(G)
    var = (var + var.T) / 2.0
    delta = var @ (sm.X.T @ P @ sm.Y)
    return FitResult(delta, var, sm.parameter_labels, ci_level, cov, sm.p, sm.c)


# ---------------------------------------------------------------------------
# functional parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FunctionalContrast:
    label: str
    weights: np.ndarray


@dataclass(frozen=True)
class ContrastEstimate:
    label: str
    estimate: float
    se: float
    lower: float
    upper: float


_CONTRAST_RE = re.compile(r"^\s*(?P<a>[^-@\s]+)\s*-\s*(?P<b>[^-@\s]+)\s*@\s*(?P<k>\S+)\s*$")


def contrast_weights(treatments, p: int, first: str, second: str, outcome: int) -> np.ndarray:
    """Weights giving the effect of ``second`` relative to ``first`` on ``outcome``.

    ``delta^{XY} = delta^{AY} - delta^{AX}`` with ``A`` the reference.
    """
    treatments = list(treatments)
    c = len(treatments) - 1
    for t in (first, second):
        if t not in treatments:
            raise KeyError(f"unknown treatment {t!r}")
    if not 0 <= outcome < p:
        raise IndexError(f"outcome index {outcome} out of range for p = {p}")
    w = np.zeros(p * c)
    j, k = treatments.index(second), treatments.index(first)
    if j:
        w[outcome * c + j - 1] += 1.0
    if k:
        w[outcome * c + k - 1] -= 1.0
    return w


def parse_contrast(spec: str, treatments, outcomes) -> FunctionalContrast:
    """Parse ``"C-E@2"``: effect of E relative to C on the second outcome.

    The outcome may be given by 1-based position or by name.
    """
    m = _CONTRAST_RE.match(spec)
    if not m:
        raise ValueError(f"cannot parse contrast {spec!r}; expected e.g. 'C-E@2'")
    outcomes = list(outcomes)
    k = m["k"]
    if k in outcomes:
        idx = outcomes.index(k)
    elif k.isdigit() and 1 <= int(k) <= len(outcomes):
        idx = int(k) - 1
    else:
        raise ValueError(f"unknown outcome {k!r} in contrast {spec!r}")
    w = contrast_weights(treatments, len(outcomes), m["a"], m["b"], idx)
    return FunctionalContrast(f"{m['a']}{m['b']}@{outcomes[idx]}", w)


def functional_inference(fr: FitResult, contrasts: list[FunctionalContrast]) -> list[ContrastEstimate]:
    out = []
    z = fr.z
    for fc in contrasts:
        w = np.asarray(fc.weights, dtype=float)
        if w.shape != fr.delta_hat.shape:
            raise ValueError(f"contrast {fc.label}: expected {fr.delta_hat.size} weights, got {w.size}")
        est = float(w @ fr.delta_hat)
        se = float(np.sqrt(max(w @ fr.var_delta @ w, 0.0)))
        out.append(ContrastEstimate(fc.label, est, se, est - z * se, est + z * se))
    return out


def cross_outcome_correlations(fr: FitResult, outcome_a: int, outcome_b: int) -> np.ndarray:
    """``c x c`` correlations between basic-parameter estimates of two outcomes.

    Entry ``(j, l)`` correlates treatment ``j+1`` on ``outcome_a`` with treatment
    ``l+1`` on ``outcome_b``; the diagonal holds the matched pairs.
    """
    if fr.p < 2:
        raise ValueError("cross-outcome correlations need at least two outcomes")
    for k in (outcome_a, outcome_b):
        if not 0 <= k < fr.p:
            raise IndexError(f"outcome index {k} out of range for p = {fr.p}")
    c = fr.c
    ia = slice(outcome_a * c, (outcome_a + 1) * c)
    ib = slice(outcome_b * c, (outcome_b + 1) * c)
    sd = fr.se
    block = fr.var_delta[ia, ib]
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = block / np.outer(sd[ia], sd[ib])
    return np.clip(corr, -1.0, 1.0)


# ---------------------------------------------------------------------------
# identifiability
# ---------------------------------------------------------------------------


@dataclass
class IdentifiabilityReport:
    common_effect_ok: bool
    sigma_beta_ok: bool
    sigma_omega_ok: bool
    sigma_beta_eq7_ok: bool
    details: list[str] = field(default_factory=list)
    recommendation: str = ""

    def to_dict(self) -> dict:
        return {
            "common_effect_ok": self.common_effect_ok,
            "sigma_beta_ok": self.sigma_beta_ok,
            "sigma_omega_ok": self.sigma_omega_ok,
            "sigma_beta_eq7_ok": self.sigma_beta_eq7_ok,
            "details": list(self.details),
            "recommendation": self.recommendation,
        }


def _reports_pair(study, k: int, l: int) -> bool:
    obs = ~study.missing
    return bool(obs[:, k].any() and obs[:, l].any())


def check_identifiability(ds: NetworkDataset) -> IdentifiabilityReport:
    """Structural and numerical checks of which model variants can be fitted.

    Structural rules, per pair of outcomes (including each outcome with
    itself): the between-study covariance needs a design with two or more
    studies reporting both outcomes; the inconsistency covariance needs two or
    more designs with studies reporting both. The numerical checks look at the
    conditioning of the matrices that must be inverted.
    """
    details: list[str] = []
    p = ds.p
    names = ds.outcomes
    beta_struct = omega_struct = True
    for k, l in combinations_with_replacement(range(p), 2):
        pair = names[k] if k == l else f"{names[k]}/{names[l]}"
        per_design = [sum(_reports_pair(s, k, l) for s in ds.studies_of(d)) for d in ds.designs]
        if max(per_design, default=0) < 2:
            beta_struct = False
            details.append(f"no design has two or more studies reporting {pair}")
        if sum(x > 0 for x in per_design) < 2:
            omega_struct = False
            details.append(f"fewer than two designs report {pair}")

    common_ok = beta_num = omega_num = eq7_num = False
    try:
        sm = build_structure(ds)
        hs = build_hat_system(sm)
        common_ok = True
    except IdentifiabilityError as exc:
        details.append(str(exc))
    except np.linalg.LinAlgError as exc:
        details.append(f"within-study covariance problem: {exc}")
    if common_ok:
        es = assemble_equations(sm, hs)
        for label, G in (("design-level", es.Cd_sum), ("global (heterogeneity)", es.Cmat), ("global (inconsistency)", es.Dmat)):
            cond = float(np.linalg.cond(G))
            ok = np.isfinite(cond) and cond <= COND_LIMIT
            if label == "design-level":
                beta_num = ok
            elif label.endswith("(heterogeneity)"):
                eq7_num = ok
            else:
                omega_num = ok
            if not ok:
                details.append(f"{label} coefficient matrix is singular (condition number {cond:.3g})")

    report = IdentifiabilityReport(
        common_effect_ok=common_ok,
        sigma_beta_ok=common_ok and beta_struct and beta_num,
        sigma_omega_ok=common_ok and omega_struct and omega_num,
        sigma_beta_eq7_ok=common_ok and eq7_num,
        details=details,
    )
    if not (report.sigma_beta_ok and report.sigma_omega_ok):
        report.recommendation = SIMPLER_MODEL_HINT
    return report
