"""Random network generators shared by the test modules."""

from __future__ import annotations

import numpy as np

from netmeta.simulation import SimulationScenario, network_template, simulate_dataset

TREATMENTS = ("A", "B", "C", "D")

# (design, min count, max count); AB is always replicated and ABC/AC/BC close a loop
MIXED_POOL = (
    ("AB", 2, 3), ("AC", 1, 2), ("BC", 1, 3), ("BD", 1, 2), ("CD", 0, 2), ("ABC", 0, 2), ("BCD", 0, 2),
)
TWO_ARM_POOL = (("AB", 2, 3), ("AC", 1, 3), ("AD", 1, 2), ("BC", 1, 2), ("BD", 0, 2), ("CD", 0, 2))


def random_psd(rng: np.random.Generator, p: int, scale: float = 0.1) -> np.ndarray:
    L = rng.normal(size=(p, p)) * np.sqrt(scale / p)
    return L @ L.T


def random_pd(rng: np.random.Generator, n: int) -> np.ndarray:
    L = rng.normal(size=(n, n))
    return L @ L.T + n * np.eye(n)


def random_designs(rng: np.random.Generator, pool=MIXED_POOL) -> list[tuple[str, int]]:
    out = []
    for design, lo, hi in pool:
        k = int(rng.integers(lo, hi + 1))
        if k:
            out.append((design, k))
    return out


def random_scenario(
    rng: np.random.Generator,
    p: int = 2,
    pool=MIXED_POOL,
    missing_rate: float = 0.0,
    scale: float = 0.1,
    seed: int | None = None,
) -> SimulationScenario:
    outcomes = tuple(f"y{k + 1}" for k in range(p))
    template = network_template(
        TREATMENTS, outcomes, random_designs(rng, pool), rng,
        outcome_sd=rng.uniform(0.2, 0.5, size=p), corr=float(rng.uniform(0.0, 0.6)),
    )
    c = len(TREATMENTS) - 1
    return SimulationScenario(
        template, rng.normal(scale=0.5, size=p * c), random_psd(rng, p, scale), random_psd(rng, p, scale),
        missing_rate=missing_rate, seed=int(rng.integers(2**31)) if seed is None else seed,
    )


def random_dataset(rng: np.random.Generator, **kw):
    return simulate_dataset(random_scenario(rng, **kw), 0)


def make_dataset(treatments, outcomes, records, validate: bool = True):
    """Dataset from ``(id, design, y, S[, missing])`` tuples with ``y`` of shape ``c_d x p``."""
    from netmeta.data import Design, NetworkDataset, Study, validate_dataset

    p = len(outcomes)
    studies = []
    for rec in records:
        sid, design, y, S = rec[:4]
        d = Design(tuple(design))
        y = np.asarray(y, dtype=float).reshape(d.contrast_count, p)
        missing = np.zeros_like(y, dtype=bool) if len(rec) < 5 else np.asarray(rec[4], dtype=bool).reshape(y.shape)
        studies.append(Study(sid, d, y, missing, np.atleast_2d(np.asarray(S, dtype=float))))
    ds = NetworkDataset(tuple(treatments), tuple(outcomes), studies)
    return validate_dataset(ds) if validate else ds
