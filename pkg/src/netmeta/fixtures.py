"""Bundled example networks.

``rrms``
    Thirteen studies of six treatments and three outcomes (MRI lesions,
    relapse rate, disability progression) with the design structure of the
    relapsing-remitting multiple sclerosis example: AB x2, AC x3, AD, BC,
    BD x2, CD, AEF x2, CEF, and the MRI outcome missing for four studies. The
    effect values and within-study covariances are simulated, not trial data.
``law2016``
    Thirteen single-outcome studies with designs AB, BC x5, BD x2, CD x2, ABD
    and BCD x2, again with simulated values.

Regenerate the JSON files with ``python -m netmeta.fixtures``.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .data import Design, NetworkDataset, Study, load_dataset, save_dataset, validate_dataset
from .kernels import truncate_psd
from .simulation import SimulationScenario, arm_within_cov, simulate_dataset

RRMS_TREATMENTS = ("A", "B", "C", "D", "E", "F")
RRMS_OUTCOMES = ("MRI", "relapse", "disability")
RRMS_STUDIES = (
    ("IFNB SG (1)", "AB"),
    ("IFNB SG (2)", "AB"),
    ("Jacobs/Simon", "AC"),
    ("PRISMS (1)", "AC"),
    ("PRISMS (2)", "AC"),
    ("Johnson", "AD"),
    ("Durelli", "BC"),
    ("O'Connor (1)", "BD"),
    ("O'Connor (2)", "BD"),
    ("Mikol", "CD"),
    ("FREEDOMS 1", "AEF"),
    ("FREEDOMS 2", "AEF"),
    ("TRANSFORMS", "CEF"),
)
RRMS_NO_MRI = ("Johnson", "Durelli", "O'Connor (1)", "O'Connor (2)")

# generating values for the simulated outcomes (rows: outcomes; columns: AB..AF)
RRMS_DELTA = np.array([
    [-0.96, -0.97, -0.67, -1.38, -1.51],
    [-0.36, -0.23, -0.33, -0.80, -0.77],
    [-0.47, -0.10, -0.43, -0.37, -0.37],
])
RRMS_SIGMA_BETA = np.array([
    [0.1538, -0.0116, -0.0195],
    [-0.0116, 0.0059, 0.0024],
    [-0.0195, 0.0024, 0.0027],
])
RRMS_SIGMA_OMEGA = np.array([
    [0.0027, 0.0066, 0.0143],
    [0.0066, 0.0161, 0.0349],
    [0.0143, 0.0349, 0.0756],
])
RRMS_OUTCOME_SD = (0.25, 0.08, 0.18)

LAW2016_DESIGNS = ("AB", "BC", "BC", "BC", "BC", "BC", "BD", "BD", "CD", "CD", "ABD", "BCD", "BCD")

FIXTURE_SEED = 20161


def rrms_template(seed: int = FIXTURE_SEED) -> NetworkDataset:
    rng = np.random.default_rng(seed)
    studies = []
    for sid, design in RRMS_STUDIES:
        d = Design(tuple(design))
        missing = np.zeros((d.contrast_count, 3), dtype=bool)
        if sid in RRMS_NO_MRI:
            missing[:, 0] = True
        S = arm_within_cov(rng, d.contrast_count, RRMS_OUTCOME_SD, corr=0.4)
        studies.append(Study(sid, d, np.zeros(missing.shape), missing, S))
    return validate_dataset(NetworkDataset(RRMS_TREATMENTS, RRMS_OUTCOMES, studies))


def rrms_scenario(seed: int = FIXTURE_SEED, reps: int = 1000) -> SimulationScenario:
    omega, _ = truncate_psd(RRMS_SIGMA_OMEGA)  # the rounded values are marginally indefinite
    return SimulationScenario(
        rrms_template(seed), RRMS_DELTA.reshape(-1), RRMS_SIGMA_BETA, omega, seed=seed, reps=reps
    )


def law2016_template(seed: int = FIXTURE_SEED) -> NetworkDataset:
    rng = np.random.default_rng(seed)
    studies = []
    counts: dict[str, int] = {}
    for design in LAW2016_DESIGNS:
        counts[design] = counts.get(design, 0) + 1
        d = Design(tuple(design))
        S = arm_within_cov(rng, d.contrast_count, (0.3,))
        studies.append(Study(f"{design}-{counts[design]}", d, np.zeros((d.contrast_count, 1)),
                             np.zeros((d.contrast_count, 1), dtype=bool), S))
    return validate_dataset(NetworkDataset(("A", "B", "C", "D"), ("y",), studies))


def law2016_scenario(seed: int = FIXTURE_SEED) -> SimulationScenario:
    return SimulationScenario(
        law2016_template(seed), np.array([-0.3, -0.5, -0.2]), np.array([[0.04]]), np.array([[0.02]]), seed=seed
    )


NAMES = ("rrms", "law2016")


def fixture_path(name: str) -> Path:
    if name not in NAMES:
        raise KeyError(f"unknown fixture {name!r}; choose from {NAMES}")
    return Path(str(resources.files("netmeta") / "data" / f"{name}.json"))


def load_fixture(name: str) -> NetworkDataset:
    return load_dataset(fixture_path(name))


def _regenerate(outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    save_dataset(simulate_dataset(rrms_scenario(), 0), outdir / "rrms.json")
    save_dataset(simulate_dataset(law2016_scenario(), 0), outdir / "law2016.json")


if __name__ == "__main__":
    _regenerate(Path(__file__).parent / "data")
