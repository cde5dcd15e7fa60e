import numpy as np
import pytest

from attribeval.core import AttributionSet, Instance, Kind, SpanPair, Token, TokenPair
from attribeval.errors import ContractViolation, DegenerateInputError, ValidationError
from attribeval.faithfulness import (
    budget_from_spans,
    budgets_for,
    comp_point,
    match_budget,
    suff_point,
    unified_faithfulness,
)
from attribeval.model import make_linear_bow_model


def span_set(instance_id, spans_scores):
    return AttributionSet.from_scores(
        instance_id, Kind.SPAN_PAIR, "spans",
        [(SpanPair(*s), v) for s, v in spans_scores])


def token_set(instance_id, scores):
    return AttributionSet.from_scores(
        instance_id, Kind.TOKEN, "tokens",
        [(Token(i), v) for i, v in scores])


def pair_set(instance_id, scores):
    return AttributionSet.from_scores(
        instance_id, Kind.TOKEN_PAIR, "pairs",
        [(TokenPair(p, q), v) for (p, q), v in scores])


class TestBudgetFromSpans:
    def test_top_span_counts_unique_tokens(self):
        spans = span_set("b", [((0, 1, 5, 7), 1.0)])
        assert budget_from_spans(spans, 1) == 5

    def test_shared_tokens_counted_once(self):
        spans = span_set("b", [((0, 1, 5, 6), 1.0), ((1, 2, 5, 5), 0.5)])
        assert budget_from_spans(spans, 2) == len({0, 1, 5, 6, 2})

    def test_saturates_past_span_count(self):
        spans = span_set("b", [((0, 0, 5, 5), 1.0)])
        assert budget_from_spans(spans, 9) == 2

    def test_empty_set_is_degenerate(self):
        empty = AttributionSet("b", Kind.SPAN_PAIR, "spans", ())
        with pytest.raises(DegenerateInputError):
            budget_from_spans(empty, 1)

    def test_budgets_non_decreasing(self):
        spans = span_set("b", [((0, 1, 5, 7), 1.0), ((2, 3, 8, 8), 0.5)])
        budget = budgets_for(spans, 2)
        assert budget.thetas[0] <= budget.thetas[1]


class TestMatchBudget:
    def test_token_prefix_hits_budget_exactly(self):
        attr = token_set("m", [(i, 1.0 - i / 10) for i in range(8)])
        sel = match_budget(attr, 5)
        assert len(sel.units) == 5 and len(sel.tokens) == 5
        assert not sel.saturated and not sel.overshoot

    def test_pair_prefix_stops_at_cover(self):
        attr = pair_set("m", [((0, 5), 0.9), ((1, 5), 0.8), ((2, 6), 0.7)])
        sel = match_budget(attr, 3)
        assert sel.units == (TokenPair(0, 5), TokenPair(1, 5))
        assert sel.tokens == {0, 1, 5}
        assert not sel.overshoot

    def test_pair_prefix_can_overshoot_by_one(self):
        attr = pair_set("m", [((0, 5), 0.9), ((1, 6), 0.8)])
        sel = match_budget(attr, 3)
        assert sel.units == (TokenPair(0, 5), TokenPair(1, 6))
        assert len(sel.tokens) == 4 and sel.overshoot

    def test_exhausted_list_sets_saturation(self):
        attr = token_set("m", [(0, 1.0), (1, 0.5)])
        sel = match_budget(attr, 5)
        assert sel.saturated and len(sel.units) == 2


class TestPoints:
    def test_constant_model_never_flips(self, constant_model):
        inst = Instance("p", ("a", "b"), ("c",), 0)
        assert comp_point(constant_model, inst, [Token(0), Token(2)]) == 0
        assert suff_point(constant_model, inst, [Token(1)]) == 1

    def test_linear_model_flips_on_decisive_token(self):
        model = make_linear_bow_model({"k": [0.0, 4.0]}, [0.0, -2.0])
        inst = Instance("p2", ("k", "f"), ("g", "h"), 1)
        assert model.predict(inst.tokens).label == 1
        assert comp_point(model, inst, [Token(0)]) == 1
        assert comp_point(model, inst, [Token(1)]) == 0
        assert suff_point(model, inst, [Token(0)]) == 1
        assert suff_point(model, inst, [Token(1)]) == 0

    def test_empty_units_cannot_flip(self):
        model = make_linear_bow_model({"k": [0.0, 4.0]}, [0.0, -2.0])
        inst = Instance("p3", ("k",), ("f",), 1)
        assert comp_point(model, inst, []) == 0
        assert suff_point(model, inst, []) == 0  # all-mask drops the prediction


def tiny_setup():
    model = make_linear_bow_model({"k": [0.0, 4.0], "j": [0.0, 4.0]}, [0.0, -6.0])
    instances = [
        Instance("i0", ("k", "f"), ("j", "g"), 1),
        Instance("i1", ("f", "h"), ("g", "g2"), 0),
    ]
    methods = {
        "good-tokens": {
            "i0": token_set("i0", [(0, 2.0), (2, 1.9), (1, 0.0), (3, -0.1)]),
            "i1": token_set("i1", [(0, 0.1), (1, 0.05), (2, 0.0), (3, 0.0)]),
        },
        "pairs": {
            "i0": pair_set("i0", [((0, 2), 1.0), ((1, 3), 0.1), ((0, 3), 0.05),
                                  ((1, 2), 0.02)]),
            "i1": pair_set("i1", [((0, 2), 0.0), ((0, 3), 0.0), ((1, 2), 0.0),
                                  ((1, 3), 0.0)]),
        },
        "spans": {
            "i0": span_set("i0", [((0, 0, 2, 2), 1.0), ((1, 1, 3, 3), 0.2)]),
            "i1": span_set("i1", [((0, 1, 2, 2), 0.1)]),
        },
    }
    return model, instances, methods


class TestUnifiedFaithfulness:
    def test_constant_model_sanity(self, constant_model):
        _, instances, methods = tiny_setup()
        rep = unified_faithfulness(constant_model, instances, methods, "spans",
                                   k_max=2, seed=0)
        for scores in list(rep.per_method.values()) + [rep.random]:
            assert scores.comp == 0.0
            assert scores.suff == 1.0
            assert scores.suff_inverted == 0.0

    def test_single_instance_single_step_degenerate_average(self):
        model, instances, methods = tiny_setup()
        only = [instances[0]]
        rep = unified_faithfulness(model, only, methods, "spans", k_max=1, seed=0)
        theta = budget_from_spans(methods["spans"]["i0"], 1)
        sel = match_budget(methods["good-tokens"]["i0"], theta)
        assert rep.per_method["good-tokens"].comp == float(
            comp_point(model, only[0], sel.units))
        assert rep.per_method["good-tokens"].suff == float(
            suff_point(model, only[0], sel.units))

    def test_budget_matching_invariant(self):
        model, instances, methods = tiny_setup()
        for inst in instances:
            budgets = budgets_for(methods["spans"][inst.id], 2)
            for k in (1, 2):
                theta = budgets.theta(k)
                token_sel = match_budget(methods["good-tokens"][inst.id], theta)
                if not token_sel.saturated:
                    assert len(token_sel.tokens) == theta
                pair_sel = match_budget(methods["pairs"][inst.id], theta)
                if not pair_sel.saturated:
                    assert len(pair_sel.tokens) in (theta, theta + 1)

    def test_identical_selections_get_identical_points(self):
        model, instances, methods = tiny_setup()
        clone = {
            "a": methods["good-tokens"],
            "b": {iid: token_set(iid, [(u.i, s) for u, s in aset.entries])
                  for iid, aset in methods["good-tokens"].items()},
            "spans": methods["spans"],
        }
        rep = unified_faithfulness(model, instances, clone, "spans", k_max=2, seed=3)
        assert rep.per_method["a"].comp == rep.per_method["b"].comp
        assert rep.per_method["a"].suff == rep.per_method["b"].suff

    def test_random_baseline_shared_across_method_subsets(self):
        model, instances, methods = tiny_setup()
        full = unified_faithfulness(model, instances, methods, "spans", k_max=2, seed=9)
        subset = unified_faithfulness(
            model, instances,
            {"good-tokens": methods["good-tokens"], "spans": methods["spans"]},
            "spans", k_max=2, seed=9)
        assert full.random == subset.random

    def test_spanless_instances_skipped_for_all_methods(self):
        model, instances, methods = tiny_setup()
        methods = {name: dict(per) for name, per in methods.items()}
        methods["spans"]["i1"] = AttributionSet("i1", Kind.SPAN_PAIR, "spans", ())
        rep = unified_faithfulness(model, instances, methods, "spans", k_max=2, seed=0)
        assert rep.skipped == ("i1",)
        assert all(s.n_instances == 1 for s in rep.per_method.values())

    def test_missing_attribution_is_an_error(self):
        model, instances, methods = tiny_setup()
        del methods["good-tokens"]["i1"]
        with pytest.raises(ValidationError, match="good-tokens"):
            unified_faithfulness(model, instances, methods, "spans", k_max=1, seed=0)

    def test_budget_source_must_be_a_method(self):
        model, instances, methods = tiny_setup()
        with pytest.raises(ContractViolation):
            unified_faithfulness(model, instances, methods, "nope", k_max=1, seed=0)

    def test_scores_lie_in_unit_interval(self):
        model, instances, methods = tiny_setup()
        rep = unified_faithfulness(model, instances, methods, "spans", k_max=3, seed=1)
        for scores in list(rep.per_method.values()) + [rep.random]:
            assert 0.0 <= scores.comp <= 1.0
            assert 0.0 <= scores.suff <= 1.0

    def test_deterministic_given_seed(self):
        model, instances, methods = tiny_setup()
        a = unified_faithfulness(model, instances, methods, "spans", k_max=2, seed=5)
        b = unified_faithfulness(model, instances, methods, "spans", k_max=2, seed=5)
        assert a == b
