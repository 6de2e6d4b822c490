"""Monte Carlo generation from the multivariate network meta-analysis model.

Random numbers come from numpy's PCG64 bit generator. Replication ``r`` of a
scenario with seed ``s`` uses ``Generator(PCG64(SeedSequence([s, r])))``, so each
replication is reproducible on its own and results do not depend on the order
in which replications run.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DatasetError, Design, NetworkDataset, Study, dataset_from_dict, validate_dataset
from .estimator import IdentifiabilityError, estimate_covariances
from .inference import fit_gls
from .structure import build_contrast_rows, build_p_matrix, build_structure

PSD_TOL = 1e-10


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(rep)])))


def mvn(rng: np.random.Generator, cov: np.ndarray) -> np.ndarray:
    """One draw from ``N(0, cov)``; falls back to an eigen factor for semi-definite ``cov``."""
    cov = np.asarray(cov, dtype=float)
    if cov.size == 0:
        return np.zeros(0)
    z = rng.standard_normal(cov.shape[0])
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        lam, vecs = np.linalg.eigh((cov + cov.T) / 2.0)
        L = vecs * np.sqrt(np.clip(lam, 0.0, None))
    return L @ z


def _check_psd(name: str, m: np.ndarray) -> None:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square")
    if np.max(np.abs(m - m.T), initial=0.0) > 1e-12:
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(m)[0] < -PSD_TOL:
        raise ValueError(f"{name} must be positive semi-definite")


@dataclass(frozen=True)
class SimulationScenario:
    """Generative parameters for repeated datasets sharing one network template.

    ``template`` fixes the studies, designs, within-study covariances and the
    baseline missingness pattern; its effect values are ignored. ``delta`` is
    outcome-major (``p * c``). ``missing_rate`` removes further components
    completely at random.
    """

    template: NetworkDataset
    delta: np.ndarray
    sigma_beta: np.ndarray
    sigma_omega: np.ndarray
    missing_rate: float = 0.0
    seed: int = 0
    reps: int = 1000

    def __post_init__(self):
        p, c = self.template.p, self.template.c
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=float).reshape(-1))
        if self.delta.size != p * c:
            raise ValueError(f"delta must have p*c = {p * c} entries, got {self.delta.size}")
        for name in ("sigma_beta", "sigma_omega"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (p, p):
                raise ValueError(f"{name} must be {p}x{p}")
            _check_psd(name, m)
            object.__setattr__(self, name, m)
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate must be in [0, 1)")


def simulate_dataset(sc: SimulationScenario, rep: int = 0) -> NetworkDataset:
    """Draw one dataset: per-design inconsistency, per-study heterogeneity and sampling error."""
    ds = sc.template
    rng = replication_rng(sc.seed, rep)
    p, c = ds.p, ds.c
    delta_pc = sc.delta.reshape(p, c)
    studies = []
    for design in ds.designs:
        P = build_p_matrix(design.contrast_count)
        omega = mvn(rng, np.kron(P, sc.sigma_omega))
        Zd = build_contrast_rows(design, ds.treatments)
        mean = (Zd @ delta_pc.T).reshape(-1)
        for s in ds.studies_of(design):
            theta = mvn(rng, np.kron(P, sc.sigma_beta))
            obs = s.observed
            S_obs = s.within_cov[np.ix_(obs, obs)]
            eps = np.zeros(obs.size)
            eps[obs] = mvn(rng, S_obs)
            y = (mean + omega + theta + eps).reshape(s.effects.shape)
            missing = s.missing.copy()
            if sc.missing_rate > 0:
                extra = rng.random(missing.shape) < sc.missing_rate
                new = missing | extra
                if new.all():
                    keep = np.flatnonzero(~missing.reshape(-1))
                    new.reshape(-1)[keep[rng.integers(keep.size)]] = False
                missing = new
            cov = s.within_cov.copy()
            flat = missing.reshape(-1)
            cov[flat, :] = 0.0
            cov[:, flat] = 0.0
            studies.append(Study(s.id, s.design, np.where(missing, 0.0, y), missing, cov))
    return NetworkDataset(ds.treatments, ds.outcomes, studies)


# ---------------------------------------------------------------------------
# templates
# ---------------------------------------------------------------------------


def arm_within_cov(
    rng: np.random.Generator, c_d: int, outcome_sd: Sequence[float], corr: float = 0.3, spread: float = 0.5
) -> np.ndarray:
    """Within-study covariance for contrasts sharing a baseline arm.

    Each arm gets a variance multiplier drawn from ``U(1 - spread, 1 + spread)``;
    contrast ``i`` has variance ``v_0 + v_i`` and contrasts covary through the
    baseline arm ``v_0``. Outcomes are correlated with a common ``corr``.
    """
    sd = np.asarray(outcome_sd, dtype=float)
    p = sd.size
    v = rng.uniform(1.0 - spread, 1.0 + spread, size=c_d + 1)
    contrast = np.diag(v[1:]) + v[0]
    outcome = np.full((p, p), corr)
    np.fill_diagonal(outcome, 1.0)
    outcome = outcome * np.outer(sd, sd)
    return np.kron(contrast, outcome)


def network_template(
    treatments: Sequence[str],
    outcomes: Sequence[str],
    designs: Sequence[tuple[str | Sequence[str], int]],
    rng: np.random.Generator,
    outcome_sd: Sequence[float] | None = None,
    corr: float = 0.3,
    missing_rate: float = 0.0,
    missing_outcomes: dict[str, Sequence[str]] | None = None,
) -> NetworkDataset:
    """Canonical dataset with zero effects, for use as a simulation template.

    ``designs`` lists ``(treatments, number of studies)``; a design given as a
    string is split into single-letter labels. ``missing_outcomes`` maps study
    ids (``"<design label>-<k>"``) to outcomes they never report.
    """
    p = len(outcomes)
    sd = np.full(p, 0.3) if outcome_sd is None else np.asarray(outcome_sd, dtype=float)
    missing_outcomes = missing_outcomes or {}
    studies = []
    for spec, count in designs:
        design = Design(tuple(spec))
        c_d = design.contrast_count
        for k in range(count):
            sid = f"{design.label}-{k + 1}"
            missing = np.zeros((c_d, p), dtype=bool)
            for o in missing_outcomes.get(sid, ()):
                missing[:, list(outcomes).index(o)] = True
            if missing_rate > 0:
                missing |= rng.random((c_d, p)) < missing_rate
                if missing.all():
                    missing.reshape(-1)[rng.integers(missing.size)] = False
            S = arm_within_cov(rng, c_d, sd, corr)
            studies.append(Study(sid, design, np.zeros((c_d, p)), missing, S))
    return validate_dataset(NetworkDataset(tuple(treatments), tuple(outcomes), studies))


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------


def scenario_from_dict(doc: dict) -> SimulationScenario:
    """Scenario document: a dataset document plus a ``truth`` block.

    ``truth`` has ``delta`` (``p`` rows of ``c`` basic parameters, one row per
    outcome), ``sigma_beta`` and ``sigma_omega``. Optional top-level keys are
    ``missing_rate``, ``seed`` and ``reps``. Study ``y`` values only mark which
    components are missing.
    """
    if "truth" not in doc:
        raise DatasetError(["scenario has no 'truth' block"])
    template = dataset_from_dict({k: v for k, v in doc.items() if k in ("treatments", "outcomes", "studies")})
    truth = doc["truth"]
    try:
        return SimulationScenario(
            template=template,
            delta=np.asarray(truth["delta"], dtype=float),
            sigma_beta=np.asarray(truth["sigma_beta"], dtype=float),
            sigma_omega=np.asarray(truth["sigma_omega"], dtype=float),
            missing_rate=float(doc.get("missing_rate", 0.0)),
            seed=int(doc.get("seed", 0)),
            reps=int(doc.get("reps", 1000)),
        )
    except KeyError as exc:
        raise DatasetError([f"truth block is missing {exc}"]) from exc


def load_scenario(path: str | Path) -> SimulationScenario:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Monte Carlo harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationResult:
    rep: int
    ok: bool
    beta_raw: np.ndarray | None = None
    omega_raw: np.ndarray | None = None
    beta: np.ndarray | None = None
    omega: np.ndarray | None = None
    delta: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    error: str = ""


def run_replication(
    sc: SimulationScenario, rep: int, model: str = "full", sigma_beta: str | None = None,
    substitution: str = "truncated", ci_level: float = 0.95,
) -> ReplicationResult:
    ds = simulate_dataset(sc, rep)
    try:
        sm = build_structure(ds)
        cov = estimate_covariances(sm, model, sigma_beta, substitution)
        fr = fit_gls(sm, cov, ci_level)
    except (IdentifiabilityError, np.linalg.LinAlgError) as exc:
        return ReplicationResult(rep, False, error=str(exc))
    return ReplicationResult(
        rep, True, cov.sigma_beta_raw, cov.sigma_omega_raw, cov.sigma_beta, cov.sigma_omega,
        fr.delta_hat, fr.ci_lower, fr.ci_upper,
    )


def _run_chunk(args):
    sc, reps, kw = args
    return [run_replication(sc, r, **kw) for r in reps]


def run_simulation(
    sc: SimulationScenario, reps: int | None = None, workers: int = 1, **fit_kw
) -> list[ReplicationResult]:
    """Fit every replication; results are ordered by replication index."""
    reps = sc.reps if reps is None else reps
    idx = list(range(reps))
    if workers <= 1:
        return _run_chunk((sc, idx, fit_kw))
    chunks = [idx[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, [(sc, ch, fit_kw) for ch in chunks]))
    return sorted((r for part in parts for r in part), key=lambda r: r.rep)


SUMMARY_FIELDS = ["parameter", "truth", "mean", "bias", "mc_se", "coverage", "truncation_rate", "n_ok"]


def summarize(sc: SimulationScenario, results: list[ReplicationResult]) -> list[dict]:
    """Bias, Monte Carlo standard error, CI coverage and truncation rate per parameter.

    Covariance rows summarise the raw (pre-truncation) estimates; their
    truncation rate is the share of replications in which truncation changed
    that entry. Basic-parameter rows report coverage of the nominal interval.
    """
    ok = [r for r in results if r.ok]
    n_ok = len(ok)
    rows = []
    p = sc.template.p
    outcomes = sc.template.outcomes
    labels = sc.template.basic_parameter_labels()

    def stats(values, truth):
        arr = np.asarray(values, dtype=float)
        if arr.size == 0:
            return np.nan, np.nan, np.nan
        mean = float(arr.mean())
        mc_se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else np.nan
        return mean, mean - truth, mc_se

    for name, truth_m, raw_attr, fin_attr in (
        ("sigma_beta", sc.sigma_beta, "beta_raw", "beta"),
        ("sigma_omega", sc.sigma_omega, "omega_raw", "omega"),
    ):
        for a in range(p):
            for b in range(p):
                truth = float(truth_m[a, b])
                vals = [getattr(r, raw_attr)[a, b] for r in ok]
                mean, bias, se = stats(vals, truth)
                changed = [
                    not np.isclose(getattr(r, fin_attr)[a, b], (getattr(r, raw_attr)[a, b] + getattr(r, raw_attr)[b, a]) / 2,
                                   rtol=0.0, atol=1e-12)
                    for r in ok
                ]
                rows.append({
                    "parameter": f"{name}[{outcomes[a]},{outcomes[b]}]", "truth": truth, "mean": mean,
                    "bias": bias, "mc_se": se, "coverage": np.nan,
                    "truncation_rate": float(np.mean(changed)) if ok else np.nan, "n_ok": n_ok,
                })
    for i, label in enumerate(labels):
        truth = float(sc.delta[i])
        mean, bias, se = stats([r.delta[i] for r in ok], truth)
        cover = float(np.mean([r.lower[i] <= truth <= r.upper[i] for r in ok])) if ok else np.nan
        rows.append({
            "parameter": f"delta[{label}]", "truth": truth, "mean": mean, "bias": bias, "mc_se": se,
            "coverage": cover, "truncation_rate": np.nan, "n_ok": n_ok,
        })
    return rows


def summary_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
