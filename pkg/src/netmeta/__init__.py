"""Multivariate network meta-analysis with random inconsistency effects.

Typical use::

    from netmeta import load_dataset, build_structure, estimate_covariances, fit_gls

    ds = load_dataset("data.json")
    sm = build_structure(ds)
    cov = estimate_covariances(sm, model="full")
    fit = fit_gls(sm, cov)
"""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    DatasetError,
    Design,
    NetworkDataset,
    Study,
    Treatment,
    comparison_counts,
    dataset_from_dict,
    load_dataset,
    validate_dataset,
)
from .estimator import (  # noqa: E402
    CovarianceEstimates,
    IdentifiabilityError,
    assemble_equations,
    build_hat_system,
    estimate_covariances,
    solve_consistent_model,
    solve_full_model,
)
from .inference import (  # noqa: E402
    FitResult,
    FunctionalContrast,
    check_identifiability,
    cross_outcome_correlations,
    fit_gls,
    functional_inference,
    parse_contrast,
)
from .structure import StructuralMatrices, build_structure  # noqa: E402

__all__ = [
    "CovarianceEstimates", "DatasetError", "Design", "FitResult", "FunctionalContrast",
    "IdentifiabilityError", "NetworkDataset", "StructuralMatrices", "Study", "Treatment",
    "assemble_equations", "build_hat_system", "build_structure", "check_identifiability",
    "comparison_counts", "cross_outcome_correlations", "dataset_from_dict", "estimate_covariances",
    "fit_gls", "functional_inference", "load_dataset", "parse_contrast", "solve_consistent_model",
    "solve_full_model", "validate_dataset",
]
