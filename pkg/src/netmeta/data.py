"""Multivariate network meta-analysis datasets.

A dataset holds, for every study, the estimated effects of each non-baseline
treatment relative to the study's baseline (one row per contrast, one column
per outcome), a missing-value mask, and the within-study covariance matrix.

Within-study covariance matrices use a contrast-major layout: entry
``i * p + k`` refers to contrast ``i`` and outcome ``k``. This is the same order
as flattening the ``c_d x p`` effects array row by row.

Canonical form
--------------
:func:`validate_dataset` puts a dataset into canonical form:

* each design lists its treatments in network order, so the baseline is the
  design's treatment that comes first in the network treatment list;
* effects and covariances supplied against another baseline or order are
  re-expressed by the corresponding linear transform;
* studies are grouped by design, designs ordered by first appearance and
  studies kept in input order within a design.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

SYMMETRY_TOL = 1e-8


class DatasetError(ValueError):
    """Raised when a dataset fails validation. ``errors`` lists every violation."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        msg = "; ".join(self.errors) if self.errors else "invalid dataset"
        super().__init__(msg)


@dataclass(frozen=True)
class Treatment:
    label: str
    index: int

    @property
    def is_reference(self) -> bool:
        return self.index == 0


@dataclass(frozen=True, eq=False)
class Design:
    """The set of treatments compared in a study, baseline first.

    Two designs are equal when they compare the same set of treatments,
    whatever baseline they list first.
    """

    treatments: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "treatments", tuple(self.treatments))

    @property
    def baseline(self) -> str:
        return self.treatments[0]

    @property
    def arm_count(self) -> int:
        return len(self.treatments)

    @property
    def contrast_count(self) -> int:
        return len(self.treatments) - 1

    @property
    def label(self) -> str:
        sep = "" if all(len(t) == 1 for t in self.treatments) else "-"
        return sep.join(self.treatments)

    def __eq__(self, other):
        if not isinstance(other, Design):
            return NotImplemented
        return frozenset(self.treatments) == frozenset(other.treatments)

    def __hash__(self):
        return hash(frozenset(self.treatments))

    def __repr__(self):
        return f"Design({self.label!r})"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Study:
    """One study: ``effects`` is ``c_d x p``; ``within_cov`` is ``(p c_d) x (p c_d)``.

    Missing effects hold the placeholder 0 and the matching rows and columns of
    ``within_cov`` are 0 once the study has been validated.
    """

    id: str
    design: Design
    effects: np.ndarray
    missing: np.ndarray
    within_cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "effects", _readonly(np.asarray(self.effects, dtype=float)))
        object.__setattr__(self, "missing", _readonly(np.asarray(self.missing, dtype=bool)))
        object.__setattr__(self, "within_cov", _readonly(np.asarray(self.within_cov, dtype=float)))

    @property
    def observed(self) -> np.ndarray:
        """Flat contrast-major mask of observed components."""
        return ~self.missing.reshape(-1)

    @property
    def p(self) -> int:
        return self.effects.shape[1] if self.effects.ndim == 2 else 0


@dataclass(frozen=True)
class NetworkDataset:
    treatments: tuple[str, ...]
    outcomes: tuple[str, ...]
    studies: tuple[Study, ...]

    def __post_init__(self):
        object.__setattr__(self, "treatments", tuple(self.treatments))
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        object.__setattr__(self, "studies", tuple(self.studies))

    @property
    def treatment_list(self) -> list[Treatment]:
        return [Treatment(label, i) for i, label in enumerate(self.treatments)]

    @property
    def reference(self) -> str:
        return self.treatments[0]

    @property
    def p(self) -> int:
        return len(self.outcomes)

    @property
    def t(self) -> int:
        return len(self.treatments)

    @property
    def c(self) -> int:
        return self.t - 1

    @property
    def N(self) -> int:
        return len(self.studies)

    @property
    def designs(self) -> list[Design]:
        seen: dict[Design, Design] = {}
        for s in self.studies:
            seen.setdefault(s.design, s.design)
        return list(seen)

    @property
    def D(self) -> int:
        return len(self.designs)

    def studies_of(self, design: Design) -> list[Study]:
        return [s for s in self.studies if s.design == design]

    @property
    def N_d(self) -> list[int]:
        return [len(self.studies_of(d)) for d in self.designs]

    @property
    def n_d(self) -> list[int]:
        return [nd * d.contrast_count for nd, d in zip(self.N_d, self.designs)]

    @property
    def n(self) -> int:
        return sum(s.design.contrast_count for s in self.studies)

    def basic_parameter_labels(self) -> list[str]:
        """Outcome-major labels such as ``"AB@MRI"``, matching the order of delta."""
        ref = self.reference
        return [f"{ref}{t}@{o}" for o in self.outcomes for t in self.treatments[1:]]

    def with_effects(self, effects: Sequence[np.ndarray]) -> "NetworkDataset":
        """Copy with new effect values (same shapes, masks and covariances)."""
        studies = []
        for s, y in zip(self.studies, effects, strict=True):
            y = np.where(s.missing, 0.0, np.asarray(y, dtype=float))
            studies.append(Study(s.id, s.design, y, s.missing, s.within_cov))
        return NetworkDataset(self.treatments, self.outcomes, studies)


# ---------------------------------------------------------------------------
# validation and canonicalization
# ---------------------------------------------------------------------------


def _baseline_transform(in_order: Sequence[str], canon: Sequence[str]) -> np.ndarray:
    """Matrix taking contrasts against ``in_order[0]`` to contrasts against ``canon[0]``."""
    c = len(canon) - 1
    pos = {t: i - 1 for i, t in enumerate(in_order)}  # baseline maps to -1
    T = np.zeros((c, c))
    b = canon[0]
    for row, t in enumerate(canon[1:]):
        if pos[t] >= 0:
            T[row, pos[t]] += 1.0
        if pos[b] >= 0:
            T[row, pos[b]] -= 1.0
    return T


def _canonical_study(study: Study, order: dict[str, int], p: int) -> Study:
    in_order = tuple(study.design.treatments)
    canon = tuple(sorted(in_order, key=order.__getitem__))
    design = Design(canon)
    cov = np.where(np.isfinite(study.within_cov), study.within_cov, 0.0)
    missing = study.missing.copy()
    effects = np.where(missing, 0.0, study.effects)
    if canon != in_order:
        T = _baseline_transform(in_order, canon)
        K = np.kron(T, np.eye(p))
        # a transformed component is observed only if every source is observed
        src_missing = missing.reshape(-1).astype(float)
        new_missing = (np.abs(K) @ src_missing) > 0
        effects = (T @ effects)
        cov = K @ cov @ K.T
        missing = new_missing.reshape(effects.shape)
    flat = missing.reshape(-1)
    effects = np.where(missing, 0.0, effects)
    cov = cov.copy()
    cov[flat, :] = 0.0
    cov[:, flat] = 0.0
    return Study(str(study.id), design, effects, missing, cov)


def _check_study(study: Study, p: int, known: set[str]) -> list[str]:
    errs = []
    sid = study.id
    tr = study.design.treatments
    unknown = [t for t in tr if t not in known]
    if unknown:
        errs.append(f"study {sid}: unknown treatment label(s) {unknown}")
    if len(set(tr)) != len(tr):
        errs.append(f"study {sid}: design lists a treatment twice")
    if len(tr) < 2:
        errs.append(f"study {sid}: design needs at least two treatments")
    if errs:
        return errs
    c_d = len(tr) - 1
    if study.effects.shape != (c_d, p):
        errs.append(f"study {sid}: effects have shape {study.effects.shape}, expected {(c_d, p)}")
    if study.missing.shape != study.effects.shape:
        errs.append(f"study {sid}: missing mask shape {study.missing.shape} does not match effects")
    if study.within_cov.shape != (p * c_d, p * c_d):
        errs.append(
            f"study {sid}: within-study covariance has shape {study.within_cov.shape}, "
            f"expected {(p * c_d, p * c_d)}"
        )
    if errs:
        return errs
    obs = study.observed
    if not obs.any():
        return [f"study {sid}: every outcome is missing for every contrast"]
    if not np.all(np.isfinite(study.effects[~study.missing])):
        errs.append(f"study {sid}: observed effects must be finite")
    S = study.within_cov[np.ix_(obs, obs)]
    if not np.all(np.isfinite(S)):
        errs.append(f"study {sid}: within-study covariance has missing or non-finite entries for observed components")
        return errs
    scale = max(1.0, float(np.max(np.abs(S))))
    if np.max(np.abs(S - S.T)) > SYMMETRY_TOL * scale:
        errs.append(f"study {sid}: within-study covariance is not symmetric")
        return errs
    try:
        np.linalg.cholesky((S + S.T) / 2.0)
    except np.linalg.LinAlgError:
        errs.append(f"study {sid}: within-study covariance is not positive definite")
    return errs


def validate_dataset(raw: NetworkDataset) -> NetworkDataset:
    """Check ``raw`` and return its canonical form.

    Raises
    ------
    DatasetError
        With the complete list of violations found.
    """
    errors: list[str] = []
    treatments = tuple(str(t) for t in raw.treatments)
    outcomes = tuple(str(o) for o in raw.outcomes)
    p = len(outcomes)
    if p == 0:
        errors.append("at least one outcome is required (p = 0)")
    if len(treatments) < 2:
        errors.append("at least two treatments are required")
    dup_t = [t for t, k in Counter(treatments).items() if k > 1]
    if dup_t:
        errors.append(f"duplicate treatment label(s) {dup_t}")
    dup_o = [o for o, k in Counter(outcomes).items() if k > 1]
    if dup_o:
        errors.append(f"duplicate outcome name(s) {dup_o}")
    if not raw.studies:
        errors.append("dataset contains no studies")
    dup_ids = [s for s, k in Counter(str(st.id) for st in raw.studies).items() if k > 1]
    if dup_ids:
        errors.append(f"duplicate study id(s) {dup_ids}")
    if p == 0:
        raise DatasetError(errors)
    known = set(treatments)
    for st in raw.studies:
        errors.extend(_check_study(st, p, known))
    if errors:
        raise DatasetError(errors)

    order = {t: i for i, t in enumerate(treatments)}
    canon = [_canonical_study(s, order, p) for s in raw.studies]
    post = [f"study {s.id}: every component is missing after re-expressing against baseline {s.design.baseline}"
            for s in canon if not s.observed.any()]
    if post:
        raise DatasetError(post)
    design_order: dict[Design, int] = {}
    for s in canon:
        design_order.setdefault(s.design, len(design_order))
    canon.sort(key=lambda s: design_order[s.design])  # stable within a design
    return NetworkDataset(treatments, outcomes, canon)


# ---------------------------------------------------------------------------
# comparison counts
# ---------------------------------------------------------------------------


def pair_label(a: str, b: str) -> str:
    sep = "" if len(a) == 1 and len(b) == 1 else "-"
    return f"{a}{sep}{b}"


def comparison_counts(ds: NetworkDataset, outcome: str | None = None) -> dict[str, int]:
    """Number of direct comparisons of each pair of treatments.

    A study with ``m`` arms contributes one comparison to each of its
    ``m (m - 1) / 2`` treatment pairs. With ``outcome`` given, only studies that
    observe that outcome on at least one contrast are counted.
    """
    if outcome is not None and outcome not in ds.outcomes:
        raise KeyError(f"unknown outcome {outcome!r}; known outcomes are {list(ds.outcomes)}")
    order = {t: i for i, t in enumerate(ds.treatments)}
    counts: dict[tuple[str, str], int] = {}
    k = None if outcome is None else ds.outcomes.index(outcome)
    for s in ds.studies:
        if k is not None and s.missing[:, k].all():
            continue
        arms = sorted(s.design.treatments, key=order.__getitem__)
        for a, b in combinations(arms, 2):
            counts[(a, b)] = counts.get((a, b), 0) + 1
    ordered = sorted(counts, key=lambda ab: (order[ab[0]], order[ab[1]]))
    return {pair_label(a, b): counts[(a, b)] for a, b in ordered}


# ---------------------------------------------------------------------------
# JSON input / output
# ---------------------------------------------------------------------------


def _study_from_json(rec: dict[str, Any], p: int) -> Study:
    design = Design(tuple(str(t) for t in rec["design"]))
    c_d = max(design.contrast_count, 0)
    y_raw = rec.get("y")
    if y_raw is None:
        y_raw = [[None] * p for _ in range(c_d)]
    y = np.array([[np.nan if v is None else float(v) for v in row] for row in y_raw], dtype=float)
    if y.size == 0:
        y = y.reshape(len(y_raw), 0)
    missing = ~np.isfinite(y)
    S_raw = rec["S"]
    S = np.array([[np.nan if v is None else float(v) for v in row] for row in S_raw], dtype=float)
    return Study(str(rec["id"]), design, np.where(missing, 0.0, y), missing, S)


def dataset_from_dict(doc: dict[str, Any], validate: bool = True) -> NetworkDataset:
    """Build a dataset from the JSON document layout.

    Keys: ``treatments``, ``outcomes`` and ``studies``; each study has ``id``,
    ``design`` (baseline first), ``y`` (``c_d x p``, ``null`` for missing) and
    ``S`` (``(p c_d) x (p c_d)``, contrast-major, ``null`` allowed in rows and
    columns of missing components).
    """
    try:
        treatments = [str(t) for t in doc["treatments"]]
        outcomes = [str(o) for o in doc["outcomes"]]
        recs = doc["studies"]
    except (KeyError, TypeError) as exc:
        raise DatasetError([f"missing top-level key {exc}"]) from exc
    errors = []
    studies = []
    for i, rec in enumerate(recs):
        try:
            studies.append(_study_from_json(rec, len(outcomes)))
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"study #{i} ({rec.get('id', '?') if isinstance(rec, dict) else '?'}): malformed record ({exc})")
    if errors:
        raise DatasetError(errors)
    ds = NetworkDataset(tuple(treatments), tuple(outcomes), tuple(studies))
    return validate_dataset(ds) if validate else ds


def _nullable(x: float, missing: bool):
    return None if missing else float(x)


def dataset_to_dict(ds: NetworkDataset) -> dict[str, Any]:
    studies = []
    for s in ds.studies:
        flat_missing = s.missing.reshape(-1)
        y = [[_nullable(v, m) for v, m in zip(row, mrow)] for row, mrow in zip(s.effects, s.missing)]
        S = [
            [_nullable(s.within_cov[a, b], flat_missing[a] or flat_missing[b]) for b in range(len(flat_missing))]
            for a in range(len(flat_missing))
        ]
        studies.append({"id": s.id, "design": list(s.design.treatments), "y": y, "S": S})
    return {"treatments": list(ds.treatments), "outcomes": list(ds.outcomes), "studies": studies}


def load_dataset(path: str | Path) -> NetworkDataset:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return dataset_from_dict(doc)


def save_dataset(ds: NetworkDataset, path: str | Path) -> None:
    doc = dataset_to_dict(ds)
    lines = ["{"]
    lines.append(f'  "treatments": {json.dumps(doc["treatments"])},')
    lines.append(f'  "outcomes": {json.dumps(doc["outcomes"])},')
    lines.append('  "studies": [')
    body = [f"    {json.dumps(st)}" for st in doc["studies"]]
    lines.append(",\n".join(body))
    lines.append("  ]")
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def describe(ds: NetworkDataset) -> str:
    lines = [
        f"treatments: {', '.join(ds.treatments)} (reference {ds.reference})",
        f"outcomes:   {', '.join(ds.outcomes)} (p = {ds.p})",
        f"studies:    N = {ds.N}, designs D = {ds.D}, contrasts n = {ds.n}",
    ]
    for d, nd in zip(ds.designs, ds.N_d):
        lines.append(f"  {d.label:<8} x{nd}")
    return "\n".join(lines)


def iter_design_groups(ds: NetworkDataset) -> Iterable[tuple[Design, list[Study]]]:
    for d in ds.designs:
        yield d, ds.studies_of(d)
