"""Complexity: entropy of normalized absolute attribution mass over
budget-matched top-k lists.

Low entropy means a few units dominate (easy to comprehend); the maximum
ln(k_x) is reached when all top scores share a magnitude.  The per-instance
list size k_x is the number of span explanations the designated span method
produced for that instance.
"""

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import AttributionSet, Kind
from .errors import ContractViolation, DegenerateInputError, EmptyEvaluationError, ValidationError
from .faithfulness import instance_rng


def normalized_mass(scores: Sequence[float]) -> np.ndarray:
    """p_i = |a_i| / sum_j |a_j|; rejects all-zero score lists."""
    mags = np.abs(np.asarray(scores, dtype=float))
    total = mags.sum()
    if total == 0.0:
        raise DegenerateInputError("all attribution scores are zero")
    return mags / total


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def entropy_complexity(attr: AttributionSet, k_x: int,
                       all_entries: bool = False) -> tuple[float, bool]:
    """CL over the top-k_x entries (0 <= CL <= ln k_x); zero-mass terms drop out.

    ``all_entries`` switches to the original formulation that normalizes over
    every produced score instead of the budget-matched prefix.  Returns the
    value plus a saturation flag for lists shorter than k_x.
    """
    if k_x < 1:
        raise ValidationError("k_x must be >= 1")
    if attr.s == 0:
        raise DegenerateInputError("empty attribution set")
    scores = attr.scores() if all_entries else attr.scores()[:k_x]
    saturated = (not all_entries) and attr.s < k_x
    return _entropy(normalized_mass(scores)), saturated


@dataclass(frozen=True)
class ComplexityRow:
    method: str
    kind: Kind
    cl: float
    random_ref: float
    upper_bound: float
    n_instances: int


@dataclass(frozen=True)
class ComplexityReport:
    rows: tuple[ComplexityRow, ...]
    seed: int
    skipped: tuple[str, ...]


def dataset_complexity(
    methods: Mapping[str, Mapping[str, AttributionSet]],
    budget_source: str,
    seed: int = 0,
    all_entries: bool = False,
) -> ComplexityReport:
    """Mean CL per method plus seeded Random and Upperbound references.

    k_x per instance is the span method's explanation count.  The random
    reference scores k_x uniform [0, 1] draws; the upper bound is ln(k_x).
    Instances that any method cannot score (no spans, all-zero prefix) are
    excluded from every method identically.
    """
    if budget_source not in methods:
        raise ContractViolation(f"budget source {budget_source!r} not among methods")
    ids = sorted(
        set.intersection(*(set(per.keys()) for per in methods.values()))
    ) if methods else []

    usable: list[tuple[str, int]] = []
    skipped: list[str] = []
    values: dict[str, dict[str, float]] = {name: {} for name in methods}
    for instance_id in ids:
        k_x = methods[budget_source][instance_id].s
        if k_x == 0:
            skipped.append(instance_id)
            continue
        try:
            for name in methods:
                cl, _ = entropy_complexity(methods[name][instance_id], k_x, all_entries)
                values[name][instance_id] = cl
        except DegenerateInputError:
            skipped.append(instance_id)
            for name in methods:
                values[name].pop(instance_id, None)
            continue
        usable.append((instance_id, k_x))
    if not usable:
        raise EmptyEvaluationError("no instance could be scored for complexity")

    rand_total = upper_total = 0.0
    for instance_id, k_x in usable:
        rng = instance_rng(seed, instance_id, salt="complexity")
        draws = rng.uniform(0.0, 1.0, size=k_x)
        if draws.sum() == 0.0:  # measure-zero, but keep the reference total
            draws = np.full(k_x, 1.0)
        rand_total += _entropy(draws / draws.sum())
        upper_total += math.log(k_x)
    n = len(usable)

    rows = tuple(
        ComplexityRow(
            name,
            next(iter(per.values())).kind,
            sum(values[name][iid] for iid, _ in usable) / n,
            rand_total / n,
            upper_total / n,
            n,
        )
        for name, per in methods.items()
    )
    return ComplexityReport(rows, seed, tuple(skipped))
