import numpy as np
import pytest

from attribeval.attribution import CoalitionGame, exact_shapley
from attribeval.core import save_dataset, validate_unit
from attribeval.errors import ValidationError
from attribeval.synth import SynthSpec, generate, mutual_information_pairs


class TestSpecValidation:
    def test_noise_range(self):
        with pytest.raises(ValidationError):
            SynthSpec(noise=0.5)

    def test_rule_must_fit_in_parts(self):
        with pytest.raises(ValidationError):
            SynthSpec(num_pairs=4, plant_all_pairs=True, m_range=(3, 4), n_range=(3, 4))

    def test_run_length_sane(self):
        with pytest.raises(ValidationError):
            SynthSpec(run_length=(0, 2))


class TestGenerate:
    def test_deterministic_bytes(self, tmp_path):
        paths = []
        for run in range(2):
            result = generate(SynthSpec(num_instances=50, seed=9))
            path = tmp_path / f"d{run}.jsonl"
            save_dataset(result.records, path)
            paths.append(path.read_bytes())
        assert paths[0] == paths[1]

    def test_models_deterministic(self):
        a = generate(SynthSpec(num_instances=5, seed=4)).models_config()
        b = generate(SynthSpec(num_instances=5, seed=4)).models_config()
        assert a == b

    def test_clean_rule_classified_perfectly(self):
        result = generate(SynthSpec(num_instances=200, noise=0.0, seed=11))
        for model in (result.linear_model, result.attention_model):
            hits = [model.predict(inst.tokens).label == inst.label
                    for inst in result.instances()]
            assert np.mean(hits) >= 0.95

    def test_noise_corrupts_roughly_the_stated_fraction(self):
        result = generate(SynthSpec(num_instances=400, noise=0.2, seed=3))
        model = result.linear_model
        agree = np.mean([model.predict(inst.tokens).label == inst.label
                         for inst in result.instances()])
        assert 0.7 <= agree <= 0.9

    def test_gold_annotations_are_valid_and_attached_to_pairs(self):
        result = generate(SynthSpec(num_instances=100, seed=5))
        seen_gold = 0
        for inst, gold in result.records:
            if gold is None:
                continue
            seen_gold += 1
            gold.validate_for(inst)
            assert gold.token_gold and gold.pair_gold and gold.span_gold
            for pair in gold.pair_gold:
                assert inst.token_at(pair.p).startswith("key1_")
                assert inst.token_at(pair.q).startswith("key2_")
            for span in gold.span_gold:
                validate_unit(span, inst)
        assert seen_gold >= 30

    def test_negatives_carry_at_most_one_designated_token(self):
        result = generate(SynthSpec(num_instances=200, noise=0.0, seed=21))
        for inst, gold in result.records:
            if gold is None:
                designated = [t for t in inst.tokens if t.startswith("key")]
                assert len(designated) <= 1

    def test_planted_pairs_recoverable_by_mutual_information(self):
        spec = SynthSpec(num_instances=300, noise=0.05, seed=13)
        result = generate(spec)
        ranking = mutual_information_pairs(
            result.records,
            spec.part1_keys() + spec.fillers()[:10],
            spec.part2_keys() + spec.fillers()[:10],
        )
        top = {(a, b) for _, a, b in ranking[: spec.num_pairs]}
        assert top == {(f"key1_{i}", f"key2_{i}") for i in range(spec.num_pairs)}

    def test_exact_shapley_ranks_planted_pair_top_two(self):
        spec = SynthSpec(num_instances=60, num_pairs=1, noise=0.0, seed=17)
        result = generate(spec)
        model = result.linear_model
        hits = total = 0
        for inst, gold in result.records:
            if gold is None:
                continue
            total += 1
            aset = exact_shapley(CoalitionGame(inst, model))
            top2 = {u.i for u in aset.top(2)}
            if top2 == set(gold.token_gold):
                hits += 1
        assert total >= 15
        assert hits / total >= 0.9
