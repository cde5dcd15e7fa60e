import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the oracles module

from attribeval.attribution import (
    CoalitionGame,
    bivariate_shapley_full,
    exact_shapley,
    louvain_spans,
)
from attribeval.core import Instance
from attribeval.faithfulness import instance_rng
from attribeval.model import make_linear_bow_model
from attribeval.synth import SynthSpec, generate

# repo-pinned acceptance configurations
FAITH_SPEC = SynthSpec(num_instances=500, noise=0.05, plant_all_pairs=True, seed=42)
SIM_SPEC = SynthSpec(num_instances=500, num_pairs=8, vocab_size=60,
                     singleton_rate=0.5, noise=0.05, seed=7)


@pytest.fixture
def small_instance() -> Instance:
    return Instance("x1", ("a", "dog"), ("an", "animal"), 0)


@pytest.fixture
def constant_model():
    return make_linear_bow_model({}, [0.0, 0.0], model_id="constant")


def _per_instance_seed(master: int, instance_id: str, salt: str) -> int:
    return int(instance_rng(master, instance_id, salt).integers(2 ** 31))


@pytest.fixture(scope="session")
def planted_bundle():
    """The repo-seeded planted task with exact-Shapley token, pair, and span
    attributions; shared by the faithfulness/agreement/complexity acceptance
    tests (computing it dominates their runtime)."""
    result = generate(FAITH_SPEC)
    model = result.linear_model
    methods = {"shapley-exact": {}, "shapley-pair": {}, "louvain-shapley": {}}
    for inst in result.instances():
        game = CoalitionGame(inst, model)
        methods["shapley-exact"][inst.id] = exact_shapley(game)
        pairs, graph = bivariate_shapley_full(game)
        methods["shapley-pair"][inst.id] = pairs
        methods["louvain-shapley"][inst.id] = louvain_spans(
            pairs, graph, seed=_per_instance_seed(FAITH_SPEC.seed, inst.id, "louvain")
        )
    return result, model, methods
