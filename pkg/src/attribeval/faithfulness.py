"""Unified comprehensiveness and sufficiency with dynamic token budgets.

Span explanations set the budget: theta(x, k) is the number of unique tokens
in the top-k span pairs, and every other explanation kind must select units
until it covers (at least) that many tokens.  Points are prediction flips
after omitting (CP) or keeping only (SP) the selected tokens; scores average
over span steps k = 1..K and instances.  A shared random baseline draws
uniform token sets sized to the dataset-mean budget.
"""

import hashlib
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import AttributionSet, ExplanationUnit, Instance, Kind, tokens_of
from .errors import ContractViolation, DegenerateInputError, EmptyEvaluationError, ValidationError
from .model import ModelHandle, mask_keep, mask_omit

DEFAULT_SPAN_STEPS = 3


def instance_rng(master_seed: int, instance_id: str, salt: str = "") -> np.random.Generator:
    """Per-instance generator split from the master seed; independent of
    evaluation order and stable across runs."""
    digest = hashlib.sha256(f"{salt}:{instance_id}".encode()).digest()
    return np.random.default_rng([master_seed, int.from_bytes(digest[:8], "big")])


@dataclass(frozen=True)
class TokenBudget:
    """Unique-token budgets per span step for one instance (1-based steps)."""

    instance_id: str
    thetas: tuple[int, ...]

    def __post_init__(self):
        if any(b > a for a, b in zip(self.thetas[1:], self.thetas)):
            raise ValidationError("budgets must be non-decreasing in k")

    def theta(self, k: int) -> int:
        return self.thetas[k - 1]


def budget_from_spans(span_set: AttributionSet, k: int) -> int:
    """theta = unique tokens covered by the top-k span pairs (saturating)."""
    if span_set.kind != Kind.SPAN_PAIR:
        raise ContractViolation("budgets derive from span-pair explanations")
    if k < 1:
        raise ValidationError("span step k must be >= 1")
    if span_set.s == 0:
        raise DegenerateInputError(
            f"instance {span_set.instance_id!r}: span method produced no spans"
        )
    return len(tokens_of(span_set.top(k)))


def budgets_for(span_set: AttributionSet, k_max: int) -> TokenBudget:
    return TokenBudget(span_set.instance_id,
                       tuple(budget_from_spans(span_set, k) for k in range(1, k_max + 1)))


@dataclass(frozen=True)
class BudgetSelection:
    units: tuple[ExplanationUnit, ...]
    tokens: frozenset[int]
    saturated: bool  # attribution list ran out before reaching theta
    overshoot: bool  # multi-token units pushed the cover past theta

    def __post_init__(self):
        object.__setattr__(self, "tokens", frozenset(self.tokens))


def match_budget(attr: AttributionSet, theta: int) -> BudgetSelection:
    """Smallest ranked prefix covering at least ``theta`` unique tokens.

    Token explanations hit theta exactly; pair explanations may overshoot by at
    most one token (flagged).  If the list is exhausted first, everything is
    returned with the saturation flag set.
    """
    if theta < 0:
        raise ValidationError("budget must be non-negative")
    chosen: list[ExplanationUnit] = []
    covered: set[int] = set()
    for unit, _ in attr.entries:
        if len(covered) >= theta:
            break
        chosen.append(unit)
        covered.update(unit.token_indices())
    return BudgetSelection(tuple(chosen), frozenset(covered),
                           saturated=len(covered) < theta,
                           overshoot=len(covered) > theta)


def comp_point(model: ModelHandle, instance: Instance,
               units: Iterable[ExplanationUnit]) -> int:
    """1 iff omitting the units' tokens flips the model's prediction."""
    y = model.predict(instance.tokens).label
    perturbed = mask_omit(instance, tokens_of(units), model.mask_token)
    return int(model.predict(perturbed).label != y)


def suff_point(model: ModelHandle, instance: Instance,
               units: Iterable[ExplanationUnit]) -> int:
    """1 iff keeping only the units' tokens preserves the model's prediction."""
    y = model.predict(instance.tokens).label
    perturbed = mask_keep(instance, tokens_of(units), model.mask_token)
    return int(model.predict(perturbed).label == y)


@dataclass(frozen=True)
class FaithfulnessScores:
    """comp and suff are means of CP/SP points over steps and instances.

    ``suff`` follows the keep-equals orientation (higher is more sufficient);
    ``suff_inverted`` = 1 - suff matches the lower-is-better plotting axis.
    """

    comp: float
    suff: float
    n_instances: int

    @property
    def suff_inverted(self) -> float:
        return 1.0 - self.suff


@dataclass(frozen=True)
class FaithfulnessReport:
    per_method: dict[str, FaithfulnessScores]
    random: FaithfulnessScores
    k_max: int
    seed: int
    random_sizes: tuple[int, ...]
    skipped: tuple[str, ...]


def _selection_for(attr: AttributionSet, kind: Kind, theta: int, k: int) -> frozenset[int]:
    if kind == Kind.SPAN_PAIR:
        return tokens_of(attr.top(k))
    return match_budget(attr, theta).tokens


def unified_faithfulness(
    model: ModelHandle,
    instances: Sequence[Instance],
    methods: Mapping[str, Mapping[str, AttributionSet]],
    budget_source: str,
    k_max: int = DEFAULT_SPAN_STEPS,
    seed: int = 0,
) -> FaithfulnessReport:
    """Budget-matched CP/SP scores for every method plus a shared random baseline.

    ``methods`` maps method name to per-instance attribution sets; the
    designated span method sets the budgets.  Instances where it yields no
    spans are dropped from every method identically (recorded in ``skipped``).
    The random baseline draws, per instance and step, a uniform token set of
    size round(mean theta over the dataset), shared across the methods.
    """
    if budget_source not in methods:
        raise ContractViolation(f"budget source {budget_source!r} not among methods")
    usable: list[tuple[Instance, TokenBudget]] = []
    skipped: list[str] = []
    for instance in instances:
        span_set = methods[budget_source].get(instance.id)
        if span_set is None or span_set.s == 0:
            skipped.append(instance.id)
            continue
        usable.append((instance, budgets_for(span_set, k_max)))
    if not usable:
        raise EmptyEvaluationError("no instance has span explanations to set budgets")

    mean_thetas = [
        float(np.mean([b.theta(k) for _, b in usable])) for k in range(1, k_max + 1)
    ]
    random_sizes = tuple(max(1, round(t)) for t in mean_thetas)

    cp: dict[str, float] = {name: 0.0 for name in methods}
    sp: dict[str, float] = {name: 0.0 for name in methods}
    cp_rand = sp_rand = 0.0
    steps_total = k_max * len(usable)

    for instance, budget in usable:
        y = model.predict(instance.tokens).label
        for k in range(1, k_max + 1):
            theta = budget.theta(k)
            for name, per_instance in methods.items():
                attr = per_instance.get(instance.id)
                if attr is None:
                    raise ValidationError(
                        f"method {name!r} lacks attributions for instance {instance.id!r}"
                    )
                selected = _selection_for(attr, attr.kind, theta, k)
                omitted = model.predict(
                    mask_omit(instance, selected, model.mask_token)).label
                kept = model.predict(
                    mask_keep(instance, selected, model.mask_token)).label
                cp[name] += int(omitted != y)
                sp[name] += int(kept == y)
            rng = instance_rng(seed, instance.id, salt=f"faithfulness:{k}")
            size = min(random_sizes[k - 1], instance.num_tokens)
            random_tokens = rng.choice(instance.num_tokens, size=size, replace=False)
            omitted = model.predict(
                mask_omit(instance, random_tokens, model.mask_token)).label
            kept = model.predict(
                mask_keep(instance, random_tokens, model.mask_token)).label
            cp_rand += int(omitted != y)
            sp_rand += int(kept == y)

    per_method = {
        name: FaithfulnessScores(cp[name] / steps_total, sp[name] / steps_total, len(usable))
        for name in methods
    }
    random_scores = FaithfulnessScores(cp_rand / steps_total, sp_rand / steps_total, len(usable))
    return FaithfulnessReport(per_method, random_scores, k_max, seed,
                              random_sizes, tuple(skipped))
