"""Agreement with human annotations: mean average precision at the token and
interaction level, with budget-matched thresholds and random baselines.

Prediction sets are nested: one per span step k = 1..K, sized by the unified
budget procedure, so every explanation kind sees the same number of
thresholds.  Instances with empty gold sets are excluded rather than scored
zero (recall is undefined there).
"""

from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .core import (
    AttributionSet,
    GoldAnnotation,
    Instance,
    Kind,
    SpanPair,
    Token,
    TokenPair,
)
from .errors import ContractViolation, EmptyEvaluationError
from .faithfulness import DEFAULT_SPAN_STEPS, budgets_for, instance_rng, match_budget

EXACT = "exact"
OVERLAP = "overlap"


def _matches(predicted, gold, matcher: str) -> bool:
    if matcher == EXACT:
        return predicted == gold
    if matcher == OVERLAP:
        if isinstance(predicted, SpanPair) and isinstance(gold, SpanPair):
            return not (predicted.e1 < gold.s1 or gold.e1 < predicted.s1) and not (
                predicted.e2 < gold.s2 or gold.e2 < predicted.s2
            )
        return predicted == gold
    raise ContractViolation(f"unknown matcher {matcher!r}")


def precision_recall(predicted: Iterable[Hashable], gold: Iterable[Hashable],
                     matcher: str = EXACT) -> tuple[float, float]:
    """Fraction of predictions matching some gold unit, and of gold units matched."""
    predicted = list(predicted)
    gold = list(gold)
    if not gold:
        raise ContractViolation("gold set must be non-empty (exclude the instance upstream)")
    if not predicted:
        return 0.0, 0.0
    if matcher == EXACT:
        gold_set = set(gold)
        hit = sum(1 for u in predicted if u in gold_set)
        pred_set = set(predicted)
        covered = sum(1 for g in gold if g in pred_set)
    else:
        hit = sum(1 for u in predicted if any(_matches(u, g, matcher) for g in gold))
        covered = sum(1 for g in gold if any(_matches(u, g, matcher) for u in predicted))
    return hit / len(predicted), covered / len(gold)


def ap_from_sets(prediction_sets: Sequence[Iterable[Hashable]], gold: Iterable[Hashable],
                 matcher: str = EXACT) -> float:
    """AP = sum_i (R_i - R_{i-1}) * P_i over nested prediction sets, R_{-1} = 0."""
    gold = list(gold)
    ap = 0.0
    prev_recall = 0.0
    for current in prediction_sets:
        p, r = precision_recall(current, gold, matcher)
        ap += (r - prev_recall) * p
        prev_recall = r
    return ap


def _prediction_sets(attr: AttributionSet, budgets: Sequence[int],
                     level: str) -> list[list]:
    """Nested prediction sets at the budget points.

    Token level: budgets are unique-token counts; sets are the covered tokens.
    Interaction level: span sets take the top-k prefix (budgets are the steps
    k), pair sets the smallest prefix covering the step's token budget.
    """
    sets: list[list] = []
    if level == "token":
        for theta in budgets:
            sets.append(sorted(match_budget(attr, theta).tokens))
    elif level == "interaction":
        for k, theta in enumerate(budgets, start=1):
            if attr.kind == Kind.SPAN_PAIR:
                sets.append(attr.top(k))
            elif attr.kind == Kind.TOKEN_PAIR:
                sets.append(list(match_budget(attr, theta).units))
            else:
                raise ContractViolation(
                    "interaction-level agreement is undefined for token explanations"
                )
    else:
        raise ContractViolation(f"unknown agreement level {level!r}")
    return sets


def average_precision(attr: AttributionSet, gold: Iterable[Hashable],
                      budgets: Sequence[int], matcher: str = EXACT,
                      level: str = "token") -> float:
    """AP of one attribution set against one gold set at the given budgets."""
    return ap_from_sets(_prediction_sets(attr, budgets, level), gold, matcher)


@dataclass(frozen=True)
class AgreementRow:
    method: str
    kind: Kind
    level: str
    matcher: str
    map: float
    baseline: float
    n_instances: int


@dataclass(frozen=True)
class AgreementReport:
    rows: tuple[AgreementRow, ...]
    k_max: int
    seed: int


def _random_token_ranking(instance: Instance, rng: np.random.Generator) -> AttributionSet:
    order = rng.permutation(instance.num_tokens)
    entries = [(Token(int(i)), float(len(order) - r)) for r, i in enumerate(order)]
    return AttributionSet.from_scores(instance.id, Kind.TOKEN, "random", entries)


def _random_pair_ranking(instance: Instance, rng: np.random.Generator) -> AttributionSet:
    pairs = [(p, q) for p in range(instance.m)
             for q in range(instance.m, instance.num_tokens)]
    order = rng.permutation(len(pairs))
    entries = [(TokenPair(*pairs[int(i)]), float(len(order) - r))
               for r, i in enumerate(order)]
    return AttributionSet.from_scores(instance.id, Kind.TOKEN_PAIR, "random", entries)


def _random_span_ranking(instance: Instance, rng: np.random.Generator,
                         count: int, max_len: int = 3) -> AttributionSet:
    """Ranked random span pairs with lengths uniform in 1..max_len (clipped)."""
    seen: set[SpanPair] = set()
    entries = []
    attempts = 0
    while len(entries) < count and attempts < count * 50:
        attempts += 1
        l1 = int(rng.integers(1, min(max_len, instance.m) + 1))
        l2 = int(rng.integers(1, min(max_len, instance.n) + 1))
        s1 = int(rng.integers(0, instance.m - l1 + 1))
        s2 = instance.m + int(rng.integers(0, instance.n - l2 + 1))
        span = SpanPair(s1, s1 + l1 - 1, s2, s2 + l2 - 1)
        if span not in seen:
            seen.add(span)
            entries.append((span, float(count - len(entries))))
    return AttributionSet.from_scores(instance.id, Kind.SPAN_PAIR, "random", entries)


def _gold_for(gold: GoldAnnotation | None, kind: Kind, level: str):
    if gold is None:
        return None
    if level == "token":
        flat = gold.flat_token_gold()
        return sorted(flat) if flat else None
    if kind == Kind.TOKEN_PAIR:
        return sorted(gold.pair_gold, key=lambda u: u.sort_key()) if gold.pair_gold else None
    return sorted(gold.span_gold, key=lambda u: u.sort_key()) if gold.span_gold else None


def map_token_level(
    methods: Mapping[str, Mapping[str, AttributionSet]],
    golds: Mapping[str, GoldAnnotation | None],
    instances: Sequence[Instance],
    budget_source: str,
    k_max: int = DEFAULT_SPAN_STEPS,
    seed: int = 0,
) -> AgreementReport:
    """Token-level MAP per method plus a shared random-token baseline.

    Interaction explanations contribute the tokens they cover; gold tokens come
    from the native token annotation or are aggregated from pair/span gold.
    """
    if budget_source not in methods:
        raise ContractViolation(f"budget source {budget_source!r} not among methods")
    ap_sums = {name: 0.0 for name in methods}
    ap_rand = 0.0
    scored = 0
    for instance in instances:
        span_set = methods[budget_source].get(instance.id)
        if span_set is None or span_set.s == 0:
            continue
        gold_tokens = _gold_for(golds.get(instance.id), Kind.TOKEN, "token")
        if not gold_tokens:
            continue
        budgets = budgets_for(span_set, k_max).thetas
        scored += 1
        for name, per_instance in methods.items():
            ap_sums[name] += average_precision(per_instance[instance.id], gold_tokens,
                                               budgets, EXACT, "token")
        rng = instance_rng(seed, instance.id, salt="agreement-token")
        ap_rand += average_precision(_random_token_ranking(instance, rng), gold_tokens,
                                     budgets, EXACT, "token")
    if scored == 0:
        raise EmptyEvaluationError("no instance carries token-level gold annotations")
    rows = tuple(
        AgreementRow(name, next(iter(per.values())).kind if per else Kind.TOKEN, "token",
                     EXACT, ap_sums[name] / scored, ap_rand / scored, scored)
        for name, per in methods.items()
    )
    return AgreementReport(rows, k_max, seed)


def map_interaction_level(
    methods: Mapping[str, Mapping[str, AttributionSet]],
    golds: Mapping[str, GoldAnnotation | None],
    instances: Sequence[Instance],
    budget_source: str,
    k_max: int = DEFAULT_SPAN_STEPS,
    matcher: str = EXACT,
    seed: int = 0,
) -> AgreementReport:
    """Interaction-level MAP: pair methods against pair gold, span methods
    against span gold, each with a kind-matched random baseline.  Token
    explanations are rejected (the measure is undefined for them)."""
    if budget_source not in methods:
        raise ContractViolation(f"budget source {budget_source!r} not among methods")
    rows = []
    for name, per_instance in methods.items():
        kinds = {aset.kind for aset in per_instance.values()}
        if Kind.TOKEN in kinds:
            raise ContractViolation(
                f"method {name!r} produces token explanations; interaction-level"
                " agreement is undefined for those"
            )
        kind = kinds.pop() if kinds else Kind.TOKEN_PAIR
        ap_sum = rand_sum = 0.0
        scored = 0
        for instance in instances:
            span_set = methods[budget_source].get(instance.id)
            if span_set is None or span_set.s == 0:
                continue
            gold_units = _gold_for(golds.get(instance.id), kind, "interaction")
            if not gold_units:
                continue
            budgets = budgets_for(span_set, k_max).thetas
            scored += 1
            ap_sum += average_precision(per_instance[instance.id], gold_units,
                                        budgets, matcher, "interaction")
            rng = instance_rng(seed, instance.id, salt=f"agreement-{kind.value}")
            if kind == Kind.SPAN_PAIR:
                random_attr = _random_span_ranking(instance, rng, count=k_max)
            else:
                random_attr = _random_pair_ranking(instance, rng)
            rand_sum += average_precision(random_attr, gold_units, budgets,
                                          matcher, "interaction")
        if scored == 0:
            raise EmptyEvaluationError(
                f"no instance carries {kind.value} gold annotations for method {name!r}"
            )
        rows.append(AgreementRow(name, kind, "interaction", matcher,
                                 ap_sum / scored, rand_sum / scored, scored))
    return AgreementReport(tuple(rows), k_max, seed)
