"""Simulatability: train agent models to mimic the original model's labels,
with and without explanations woven into the input, and report the F1 gain.

The agent is a bag-of-words softmax classifier trained by full-batch gradient
descent with dev-selected early stopping: same family as the built-in linear
model, deterministic given the seed.  Explanations enter either as in-place
symbol wrapping ("<" tokens ">" "#rank") or as appended explanation text after
a "||" separator; insertion happens at train and test time alike.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import AttributionSet, ExplanationUnit, Instance, Kind
from .errors import ContractViolation, TrainingError, ValidationError
from .faithfulness import budget_from_spans, match_budget
from .model import ModelHandle

OPEN_MARK = "<"
CLOSE_MARK = ">"
TEXT_SEP = "||"
MAX_RANK_MARK = 9

INSERTION_MODES = ("none", "symbol", "text")


def _rank_mark(rank: int) -> str:
    return f"#{rank}" if rank <= MAX_RANK_MARK else f"#{MAX_RANK_MARK}+"


def _regions(unit: ExplanationUnit) -> list[tuple[int, int]]:
    if hasattr(unit, "span1"):
        return [unit.span1, unit.span2]
    return [(i, i) for i in unit.token_indices()]


def insert_symbol(instance: Instance, units: Sequence[ExplanationUnit]) -> list[str]:
    """Wrap each explanation region as "<" tokens ">" "#rank", ranks 1-based.

    Regions of one interaction share a rank mark.  When units overlap, earlier
    (higher-ranked) units claim their positions first and later units wrap only
    the contiguous stretches that remain.
    """
    claimed: set[int] = set()
    wraps: list[tuple[int, int, int]] = []  # (start, end, rank)
    for rank, unit in enumerate(units, start=1):
        for start, end in _regions(unit):
            positions = [i for i in range(start, end + 1) if i not in claimed]
            runs: list[tuple[int, int]] = []
            for pos in positions:
                if runs and runs[-1][1] == pos - 1:
                    runs[-1] = (runs[-1][0], pos)
                else:
                    runs.append((pos, pos))
            wraps.extend((a, b, rank) for a, b in runs)
            claimed.update(positions)
    opens = {start: rank for start, _, rank in wraps}
    closes = {end: rank for _, end, rank in wraps}
    out: list[str] = []
    for i, token in enumerate(instance.tokens):
        if i in opens:
            out.append(OPEN_MARK)
        out.append(token)
        if i in closes:
            out.extend([CLOSE_MARK, _rank_mark(closes[i])])
    return out


def insert_text(instance: Instance, units: Sequence[ExplanationUnit]) -> list[str]:
    """Append rendered explanations after a "||" separator, in rank order.

    Tokens are separated by ";"; the members of one interaction are joined by
    "," and interactions separated by ";"; spans render as their tokens.
    """
    if not units:
        return list(instance.tokens)
    rendered: list[str] = []
    for idx, unit in enumerate(units):
        if idx:
            rendered.append(";")
        for r_idx, (start, end) in enumerate(_regions(unit)):
            if r_idx:
                rendered.append(",")
            rendered.extend(instance.tokens[start:end + 1])
    return list(instance.tokens) + [TEXT_SEP] + rendered


def render_input(instance: Instance, insertion: str,
                 units: Sequence[ExplanationUnit] | None) -> list[str]:
    if insertion not in INSERTION_MODES:
        raise ContractViolation(f"unknown insertion mode {insertion!r}")
    if insertion == "none" or units is None:
        return list(instance.tokens)
    if insertion == "symbol":
        return insert_symbol(instance, units)
    return insert_text(instance, units)


@dataclass(frozen=True)
class SimulationDataset:
    """Simulation splits plus the original model's labels Y' to imitate."""

    instances: dict[str, Instance]
    y_prime: dict[str, int]
    train_ids: tuple[str, ...]
    dev_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    num_classes: int

    def split_signature(self) -> tuple:
        return (self.train_ids, self.dev_ids, self.test_ids)


def build_simulation_splits(instances: Sequence[Instance], model: ModelHandle,
                            ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
                            seed: int = 0) -> SimulationDataset:
    """Label every instance with the model's prediction and split train/dev/test."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError("split ratios must sum to 1")
    n = len(instances)
    n_train, n_dev = int(n * ratios[0]), int(n * ratios[1])
    n_test = n - n_train - n_dev
    if min(n_train, n_dev, n_test) < 1:
        raise ValidationError(f"dataset of {n} instances is too small for non-empty splits")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    ids = [instances[i].id for i in order]
    preds = model.predict_batch([inst.tokens for inst in instances])
    return SimulationDataset(
        instances={inst.id: inst for inst in instances},
        y_prime={inst.id: pred.label for inst, pred in zip(instances, preds)},
        train_ids=tuple(ids[:n_train]),
        dev_ids=tuple(ids[n_train:n_train + n_dev]),
        test_ids=tuple(ids[n_train + n_dev:]),
        num_classes=model.num_classes,
    )


@dataclass(frozen=True)
class AgentHyperparams:
    learning_rate: float = 0.5
    epochs: int = 300
    l2: float = 1e-3
    patience: int = 30


@dataclass
class AgentModel:
    """Bag-of-words softmax classifier with a fixed train-split vocabulary."""

    vocab: tuple[str, ...]
    weights: np.ndarray  # (V, C)
    bias: np.ndarray     # (C,)
    num_classes: int
    seed: int
    hyperparams: AgentHyperparams
    split_signature: tuple = field(default=())

    def _features(self, inputs: Sequence[Sequence[str]]) -> np.ndarray:
        index = {t: i for i, t in enumerate(self.vocab)}
        x = np.zeros((len(inputs), len(self.vocab)))
        for row, tokens in enumerate(inputs):
            for tok in tokens:
                col = index.get(tok)
                if col is not None:
                    x[row, col] += 1.0
        return x

    def predict_labels(self, inputs: Sequence[Sequence[str]]) -> np.ndarray:
        logits = self._features(inputs) @ self.weights + self.bias
        return np.argmax(logits, axis=1)

    def to_json(self) -> str:
        return json.dumps({
            "vocab": list(self.vocab),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "num_classes": self.num_classes,
            "seed": self.seed,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, blob: str) -> "AgentModel":
        obj = json.loads(blob)
        return cls(tuple(obj["vocab"]), np.asarray(obj["weights"]),
                   np.asarray(obj["bias"]), int(obj["num_classes"]),
                   int(obj["seed"]), AgentHyperparams())


def macro_f1(y_true: Sequence[int], y_pred: Sequence[int]) -> float:
    """Unweighted mean F1 over the classes present in the truth or predictions."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    classes = sorted(set(y_true.tolist()) | set(y_pred.tolist()))
    scores = []
    for c in classes:
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def train_agent(sim: SimulationDataset, insertion: str,
                explanations: Mapping[str, Sequence[ExplanationUnit]] | None,
                hyperparams: AgentHyperparams = AgentHyperparams(),
                seed: int = 0) -> AgentModel:
    """Full-batch gradient descent, early-stopped on dev cross-entropy
    (earliest best epoch wins ties); bit-reproducible given the seed.

    ``explanations`` maps instance id to the (already budget-matched) ranked
    unit list woven into the input; None or ``insertion="none"`` trains the
    explanation-free baseline agent on byte-identical raw inputs.
    """
    def inputs_for(ids: tuple[str, ...]) -> list[list[str]]:
        return [
            render_input(sim.instances[i], insertion,
                         explanations.get(i) if explanations is not None else None)
            for i in ids
        ]

    train_inputs = inputs_for(sim.train_ids)
    dev_inputs = inputs_for(sim.dev_ids)
    y_train = np.array([sim.y_prime[i] for i in sim.train_ids])
    y_dev = np.array([sim.y_prime[i] for i in sim.dev_ids])

    vocab = tuple(sorted({t for tokens in train_inputs for t in tokens}))
    agent = AgentModel(vocab, np.zeros((len(vocab), sim.num_classes)),
                       np.zeros(sim.num_classes), sim.num_classes, seed, hyperparams,
                       sim.split_signature())
    x = agent._features(train_inputs)
    x_dev = agent._features(dev_inputs)
    y_onehot = np.eye(sim.num_classes)[y_train]

    best_loss = np.inf
    best = (agent.weights.copy(), agent.bias.copy())
    stale = 0
    n = x.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(hyperparams.epochs):
            logits = x @ agent.weights + agent.bias
            logits -= logits.max(axis=1, keepdims=True)
            probs = np.exp(logits)
            probs /= probs.sum(axis=1, keepdims=True)
            if not np.all(np.isfinite(probs)):
                raise TrainingError(f"agent training diverged (hyperparams={hyperparams})")
            grad = (probs - y_onehot) / n
            agent.weights -= hyperparams.learning_rate * (x.T @ grad
                                                          + hyperparams.l2 * agent.weights)
            agent.bias -= hyperparams.learning_rate * grad.sum(axis=0)
            dev_logp = _log_softmax(x_dev @ agent.weights + agent.bias)
            dev_loss = float(-dev_logp[np.arange(len(y_dev)), y_dev].mean())
            if not math.isfinite(dev_loss):
                raise TrainingError(f"agent training diverged (hyperparams={hyperparams})")
            if dev_loss < best_loss - 1e-12:
                best_loss = dev_loss
                best = (agent.weights.copy(), agent.bias.copy())
                stale = 0
            else:
                stale += 1
                if stale >= hyperparams.patience:
                    break
    agent.weights, agent.bias = best
    return agent


@dataclass(frozen=True)
class SimRow:
    method: str
    kind: Kind
    insertion: str
    sf: float
    sf_baseline: float
    rsf: float
    k: int
    seed: int


@dataclass(frozen=True)
class SimulatabilityReport:
    rows: tuple[SimRow, ...]
    sf_baseline: float
    seed: int
    skipped: tuple[str, ...]


def simulate_scores(agents: Mapping[str, AgentModel], baseline: AgentModel,
                    sim: SimulationDataset, insertion: str,
                    explanations: Mapping[str, Mapping[str, Sequence[ExplanationUnit]]],
                    ) -> dict[str, tuple[float, float]]:
    """Test-split macro-F1 against Y' per method, with explanations inserted at
    test time too.  Returns method -> (SF, RSF = SF - SF_baseline)."""
    y_test = [sim.y_prime[i] for i in sim.test_ids]
    raw_inputs = [render_input(sim.instances[i], "none", None) for i in sim.test_ids]
    sf_baseline = macro_f1(y_test, baseline.predict_labels(raw_inputs))
    out: dict[str, tuple[float, float]] = {}
    for name, agent in agents.items():
        if agent.split_signature != baseline.split_signature:
            raise ContractViolation(f"agent {name!r} was trained on different splits")
        inputs = [
            render_input(sim.instances[i], insertion, explanations[name].get(i))
            for i in sim.test_ids
        ]
        sf = macro_f1(y_test, agent.predict_labels(inputs))
        out[name] = (sf, sf - sf_baseline)
    return out


def select_units(attr: AttributionSet, theta: int, k: int) -> list[ExplanationUnit]:
    """Budget-matched unit selection: spans take top-k, others cover theta tokens."""
    if attr.kind == Kind.SPAN_PAIR:
        return attr.top(k)
    return list(match_budget(attr, theta).units)


def unified_simulatability(
    model: ModelHandle,
    instances: Sequence[Instance],
    methods: Mapping[str, Mapping[str, AttributionSet]],
    budget_source: str,
    insertion: str = "symbol",
    k: int = 1,
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    hyperparams: AgentHyperparams = AgentHyperparams(),
    seed: int = 0,
    persist_dir: str | None = None,
) -> SimulatabilityReport:
    """Train one agent per method (plus the no-explanation baseline) and score SF/RSF.

    Budgets derive from span step ``k`` (default 1); instances without span
    explanations are dropped before splitting so all variants share membership.
    With ``persist_dir`` the trained agent parameters are written out as JSON
    (vocabulary and weight rows) for audit.
    """
    if budget_source not in methods:
        raise ContractViolation(f"budget source {budget_source!r} not among methods")
    kept: list[Instance] = []
    skipped: list[str] = []
    for inst in instances:
        span_set = methods[budget_source].get(inst.id)
        if span_set is None or span_set.s == 0:
            skipped.append(inst.id)
        else:
            kept.append(inst)
    sim = build_simulation_splits(kept, model, ratios, seed)

    selections: dict[str, dict[str, list[ExplanationUnit]]] = {}
    for name, per_instance in methods.items():
        selections[name] = {}
        for inst in kept:
            theta = budget_from_spans(methods[budget_source][inst.id], k)
            selections[name][inst.id] = select_units(per_instance[inst.id], theta, k)

    baseline = train_agent(sim, "none", None, hyperparams, seed)
    agents = {
        name: train_agent(sim, insertion, selections[name], hyperparams, seed)
        for name in methods
    }
    if persist_dir is not None:
        import os
        os.makedirs(persist_dir, exist_ok=True)
        for name, agent in [("baseline", baseline)] + sorted(agents.items()):
            path = os.path.join(persist_dir, f"agent_{name}.json")
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(agent.to_json() + "\n")
    scores = simulate_scores(agents, baseline, sim, insertion, selections)
    y_test = [sim.y_prime[i] for i in sim.test_ids]
    raw_inputs = [render_input(sim.instances[i], "none", None) for i in sim.test_ids]
    sf_baseline = macro_f1(y_test, baseline.predict_labels(raw_inputs))
    rows = tuple(
        SimRow(name, next(iter(methods[name].values())).kind, insertion,
               scores[name][0], sf_baseline, scores[name][1], k, seed)
        for name in methods
    )
    return SimulatabilityReport(rows, sf_baseline, seed, tuple(skipped))
