"""Fit reports as JSON-ready dictionaries, CSV and plain text."""

from __future__ import annotations

import csv
import io
import json
from typing import Any

import numpy as np

from .data import NetworkDataset, comparison_counts
from .estimator import CovarianceEstimates
from .inference import ContrastEstimate, FitResult, IdentifiabilityReport


def _m(a: np.ndarray) -> list:
    return np.asarray(a, dtype=float).tolist()


def _cov_section(cov: CovarianceEstimates, key: str) -> dict[str, Any]:
    raw = cov.sigma_beta_raw if key == "sigma_beta" else cov.sigma_omega_raw
    fin = cov.sigma_beta if key == "sigma_beta" else cov.sigma_omega
    return {
        "raw": _m(raw),
        "truncated": _m(fin),
        "clamped_eigenvalues": list(cov.truncated_eigenvalues.get(key, [])),
        "condition_number": cov.conditions.get(key),
    }


def build_report(
    ds: NetworkDataset,
    fr: FitResult,
    ident: IdentifiabilityReport | None = None,
    contrasts: list[ContrastEstimate] | None = None,
    sigma_beta_equation: str | None = None,
) -> dict[str, Any]:
    cov = fr.covariances
    basics = []
    ref = ds.reference
    for i, label in enumerate(fr.labels):
        k, j = divmod(i, fr.c)
        basics.append({
            "label": label,
            "outcome": ds.outcomes[k],
            "comparison": f"{ref}{ds.treatments[j + 1]}",
            "estimate": float(fr.delta_hat[i]),
            "se": float(fr.se[i]),
            "lower": float(fr.ci_lower[i]),
            "upper": float(fr.ci_upper[i]),
        })
    report: dict[str, Any] = {
        "model": {
            "variant": cov.model_variant,
            "sigma_beta_equation": sigma_beta_equation,
            "substitution": cov.substitution,
            "ci_level": fr.ci_level,
        },
        "dataset": {
            "treatments": list(ds.treatments),
            "outcomes": list(ds.outcomes),
            "N": ds.N, "D": ds.D, "n": ds.n, "p": ds.p, "c": ds.c,
        },
        "comparison_counts": {
            "all": comparison_counts(ds),
            "by_outcome": {o: comparison_counts(ds, o) for o in ds.outcomes},
        },
        "covariances": {
            "sigma_beta": _cov_section(cov, "sigma_beta"),
            "sigma_omega": _cov_section(cov, "sigma_omega"),
        },
        "basic_parameters": basics,
        "var_delta": _m(fr.var_delta),
    }
    if contrasts:
        report["contrasts"] = [
            {"label": c.label, "estimate": c.estimate, "se": c.se, "lower": c.lower, "upper": c.upper}
            for c in contrasts
        ]
    if ident is not None:
        report["identifiability"] = ident.to_dict()
    return report


def to_json(report: dict[str, Any]) -> str:
    return json.dumps(report, indent=2, allow_nan=True) + "\n"


CSV_FIELDS = ["section", "parameter", "estimate", "se", "lower", "upper"]


def to_csv(report: dict[str, Any]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for b in report["basic_parameters"]:
        w.writerow(["basic", b["label"], repr(b["estimate"]), repr(b["se"]), repr(b["lower"]), repr(b["upper"])])
    for c in report.get("contrasts", []):
        w.writerow(["contrast", c["label"], repr(c["estimate"]), repr(c["se"]), repr(c["lower"]), repr(c["upper"])])
    outcomes = report["dataset"]["outcomes"]
    for key in ("sigma_beta", "sigma_omega"):
        sec = report["covariances"][key]
        for kind in ("raw", "truncated"):
            m = sec[kind]
            for a in range(len(outcomes)):
                for b in range(len(outcomes)):
                    if kind == "truncated" and b > a:
                        continue
                    w.writerow([f"{key}_{kind}", f"{outcomes[a]},{outcomes[b]}", repr(m[a][b]), "", "", ""])
    return buf.getvalue()


def to_text(report: dict[str, Any]) -> str:
    """Estimate (se) grid per outcome, then the lower triangles of both covariance matrices."""
    ds = report["dataset"]
    outcomes, c = ds["outcomes"], ds["c"]
    ref = ds["treatments"][0]
    cols = [f"{ref}{t}" for t in ds["treatments"][1:]]
    mdl = report["model"]
    lines = [
        f"model: {mdl['variant']} (Sigma_beta substitution: {mdl['substitution']}, CI level {mdl['ci_level']:g})",
        f"network: N = {ds['N']} studies, D = {ds['D']} designs, n = {ds['n']} contrasts, p = {ds['p']} outcomes",
        "",
        "basic parameters, estimate (se):",
    ]
    width = max(16, max(len(o) for o in outcomes) + 2)
    lines.append(" " * width + "".join(f"{col:>16}" for col in cols))
    bp = report["basic_parameters"]
    for k, o in enumerate(outcomes):
        cells = [f"{b['estimate']:.2f} ({b['se']:.2f})" for b in bp[k * c:(k + 1) * c]]
        lines.append(f"{o:<{width}}" + "".join(f"{x:>16}" for x in cells))
    for key, name in (("sigma_omega", "inconsistency"), ("sigma_beta", "between-study")):
        sec = report["covariances"][key]
        lines.append("")
        lines.append(f"{name} covariance ({key}), truncated [raw]:")
        m, raw = sec["truncated"], sec["raw"]
        for a in range(len(outcomes)):
            for b in range(a + 1):
                sym = (raw[a][b] + raw[b][a]) / 2.0
                lines.append(f"  {key}[{a + 1}{b + 1}] {outcomes[a]}/{outcomes[b]}: {m[a][b]:.4f} [{sym:.4f}]")
        if sec["clamped_eigenvalues"]:
            vals = ", ".join(f"{v:.4g}" for v in sec["clamped_eigenvalues"])
            lines.append(f"  negative eigenvalues set to zero: {vals}")
    if report.get("contrasts"):
        lines.append("")
        lines.append("functional parameters:")
        for ce in report["contrasts"]:
            lines.append(f"  {ce['label']}: {ce['estimate']:.3f} ({ce['se']:.3f}) [{ce['lower']:.3f}, {ce['upper']:.3f}]")
    ident = report.get("identifiability")
    if ident and ident.get("details"):
        lines.append("")
        lines.append("identifiability notes:")
        lines.extend(f"  - {d}" for d in ident["details"])
        if ident.get("recommendation"):
            lines.append(f"  {ident['recommendation']}")
    lines.append("")
    lines.append("direct comparisons: " + ", ".join(f"{k}:{v}" for k, v in report["comparison_counts"]["all"].items()))
    return "\n".join(lines) + "\n"
