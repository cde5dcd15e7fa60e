"""Token, token-pair, and span-pair attribution for two-part text classifiers,
with a budget-matched diagnostic suite (faithfulness, agreement with
annotations, simulatability, complexity)."""

__version__ = "0.1.0"

from .core import (
    AttributionSet,
    GoldAnnotation,
    Instance,
    Kind,
    SpanPair,
    Token,
    TokenPair,
    load_attributions,
    load_dataset,
    rank_entries,
    save_attributions,
    save_dataset,
    tokens_of,
)
from .model import (
    AttentionMap,
    LinearBowModel,
    ModelHandle,
    Prediction,
    ToyAttentionModel,
    make_linear_bow_model,
    make_toy_attention_model,
    mask_keep,
    mask_omit,
)
from .attribution import (
    CoalitionGame,
    InteractionGraph,
    attention_interaction,
    attention_token,
    bivariate_shapley,
    bivariate_shapley_directed,
    exact_shapley,
    integrated_gradients,
    kernel_shap,
    louvain_spans,
    select_head,
)
from .faithfulness import (
    budget_from_spans,
    comp_point,
    match_budget,
    suff_point,
    unified_faithfulness,
)
from .agreement import average_precision, map_interaction_level, map_token_level, precision_recall
from .simulatability import (
    build_simulation_splits,
    insert_symbol,
    insert_text,
    simulate_scores,
    train_agent,
    unified_simulatability,
)
from .complexity import dataset_complexity, entropy_complexity, normalized_mass
from .synth import SynthSpec, generate
from .adapter import AdapterEndpoint, check_conformance, handshake
