"""Seeded synthetic tasks with planted cross-part co-occurrence rules.

The label is 1 iff a designated (part1 token, part2 token) pair co-occurs;
negatives carry at most one designated token so the rule is also expressible
by thresholding the count of designated tokens at two.  Planted members sit
inside short runs that become gold span annotations, and the generator emits
matching linear and attention toy models that implement the rule exactly.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import GoldAnnotation, Instance, Record, SpanPair, TokenPair
from .errors import ValidationError
from .model import (
    LinearBowModel,
    ToyAttentionModel,
    ToyAttentionParams,
    make_linear_bow_model,
)

MASK = "[MASK]"


@dataclass(frozen=True)
class SynthSpec:
    num_instances: int = 200
    vocab_size: int = 40            # filler vocabulary size
    m_range: tuple[int, int] = (5, 7)
    n_range: tuple[int, int] = (5, 7)
    num_pairs: int = 2              # designated cross-part pairs in the rule
    plant_all_pairs: bool = False   # positives carry every pair instead of one
    run_length: tuple[int, int] = (2, 3)
    singleton_rate: float = 0.4     # negatives carrying one designated member
    positive_rate: float = 0.5
    noise: float = 0.0
    seed: int = 0
    id_prefix: str = "syn"

    def __post_init__(self):
        if not 0.0 <= self.noise < 0.5:
            raise ValidationError("noise rate must lie in [0, 0.5)")
        if self.num_pairs < 1:
            raise ValidationError("the rule needs at least one designated pair")
        planted = self.num_pairs if self.plant_all_pairs else 1
        if planted > self.m_range[0] or planted > self.n_range[0]:
            raise ValidationError(
                "rule needs more planted tokens than the shortest parts allow"
            )
        if self.run_length[0] < 1 or self.run_length[1] < self.run_length[0]:
            raise ValidationError("run length range must be 1 <= lo <= hi")

    def part1_keys(self) -> list[str]:
        return [f"key1_{i}" for i in range(self.num_pairs)]

    def part2_keys(self) -> list[str]:
        return [f"key2_{i}" for i in range(self.num_pairs)]

    def fillers(self) -> list[str]:
        return [f"f{i}" for i in range(self.vocab_size)]


@dataclass
class SynthResult:
    spec: SynthSpec
    records: list[Record] = field(default_factory=list)
    linear_model: LinearBowModel | None = None
    attention_model: ToyAttentionModel | None = None

    def instances(self) -> list[Instance]:
        return [inst for inst, _ in self.records]

    def models_config(self) -> dict:
        return {
            "linear": self.linear_model.to_config(),
            "attention": self.attention_model.to_config(),
        }


def _plant_runs(part: list[str], members: list[str], run_len_range: tuple[int, int],
                rng: np.random.Generator) -> list[tuple[int, int, int]]:
    """Place one run per member into free slots; returns (start, end, member_pos).

    Runs shrink toward the bare member when the part is too crowded.
    """
    placements: list[tuple[int, int, int]] = []
    free = [True] * len(part)
    for member in members:
        placed = False
        for length in range(int(rng.integers(run_len_range[0], run_len_range[1] + 1)), 0, -1):
            starts = [
                s for s in range(len(part) - length + 1)
                if all(free[s:s + length])
            ]
            if not starts:
                continue
            start = int(starts[int(rng.integers(len(starts)))])
            member_offset = int(rng.integers(length))
            part[start + member_offset] = member
            for i in range(start, start + length):
                free[i] = False
            placements.append((start, start + length - 1, start + member_offset))
            placed = True
            break
        if not placed:
            raise ValidationError("could not fit planted runs into the part")
    return placements


def _rule_linear_model(spec: SynthSpec, scale: float = 4.0) -> LinearBowModel:
    weights = {key: [0.0, scale] for key in spec.part1_keys() + spec.part2_keys()}
    return make_linear_bow_model(weights, [0.0, -1.5 * scale], MASK, "synth-linear")


def _rule_attention_model(spec: SynthSpec, gamma: float = 40.0,
                          beta: float = 4.0) -> ToyAttentionModel:
    """Two heads: head 0 attends uniformly and counts designated tokens via its
    values (threshold encoded through the anchor's value); head 1 points the
    anchor at designated tokens but contributes no value signal."""
    keys = spec.part1_keys() + spec.part2_keys()
    vocab = keys + spec.fillers() + [MASK]
    dim, d_head = 4, 2
    emb = np.zeros((len(vocab), dim))
    for i, tok in enumerate(vocab):
        if tok in keys:
            emb[i] = [1.0, 0.0, 1.0, 0.0]
        elif tok != MASK:
            emb[i] = [0.0, 0.0, 0.0, 0.5]
    anchor = np.array([0.0, 1.0, 0.0, 0.0])
    w_q = np.zeros((2, dim, d_head))
    w_k = np.zeros((2, dim, d_head))
    w_v = np.zeros((2, dim, d_head))
    w_q[1, 1, 0] = beta          # anchor's query along the designated-key channel
    w_k[1, 2, 0] = 1.0           # designated tokens expose that key
    w_v[0, 0, 0] = 1.0           # head 0 value = (designated indicator, anchor indicator)
    w_v[0, 1, 1] = 1.0
    w_o = np.zeros((2 * d_head, dim))
    w_o[0, 0] = 1.0
    w_o[1, 1] = 1.0
    w_c = np.zeros((dim, 2))
    w_c[0, 1] = gamma            # logit1 = gamma * (count - 1.5) / positions
    w_c[1, 1] = -1.5 * gamma
    params = ToyAttentionParams(
        vocab=vocab, embeddings=emb, anchor_embedding=anchor,
        w_q=w_q, w_k=w_k, w_v=w_v, w_o=w_o, w_c=w_c, b_c=np.zeros(2),
    )
    model = ToyAttentionModel(params, MASK, "synth-attention")
    return model


def generate(spec: SynthSpec) -> SynthResult:
    """Build the dataset with gold annotations plus matching toy models.

    Deterministic per seed.  Clean positives always contain full planted
    pair(s); negatives contain at most one designated member, so both emitted
    models classify the clean rule perfectly.
    """
    rng = np.random.default_rng(spec.seed)
    fillers = spec.fillers()
    p1_keys, p2_keys = spec.part1_keys(), spec.part2_keys()
    records: list[Record] = []
    for idx in range(spec.num_instances):
        m = int(rng.integers(spec.m_range[0], spec.m_range[1] + 1))
        n = int(rng.integers(spec.n_range[0], spec.n_range[1] + 1))
        part1 = [fillers[int(rng.integers(len(fillers)))] for _ in range(m)]
        part2 = [fillers[int(rng.integers(len(fillers)))] for _ in range(n)]
        positive = bool(rng.random() < spec.positive_rate)
        gold = None
        if positive:
            pair_ids = (list(range(spec.num_pairs)) if spec.plant_all_pairs
                        else [int(rng.integers(spec.num_pairs))])
            runs1 = _plant_runs(part1, [p1_keys[i] for i in pair_ids],
                                spec.run_length, rng)
            runs2 = _plant_runs(part2, [p2_keys[i] for i in pair_ids],
                                spec.run_length, rng)
            token_gold = set()
            pair_gold = set()
            span_gold = set()
            for (s1, e1, pos1), (s2, e2, pos2) in zip(runs1, runs2):
                token_gold.update({pos1, m + pos2})
                pair_gold.add(TokenPair(pos1, m + pos2))
                span_gold.add(SpanPair(s1, e1, m + s2, m + e2))
            instance_id = f"{spec.id_prefix}{idx:05d}"
            gold = GoldAnnotation(instance_id, frozenset(token_gold),
                                  frozenset(pair_gold), frozenset(span_gold))
        elif rng.random() < spec.singleton_rate:
            pair_id = int(rng.integers(spec.num_pairs))
            if rng.random() < 0.5:
                part1[int(rng.integers(m))] = p1_keys[pair_id]
            else:
                part2[int(rng.integers(n))] = p2_keys[pair_id]
        label = int(positive)
        if rng.random() < spec.noise:
            label = 1 - label
        instance = Instance(f"{spec.id_prefix}{idx:05d}", tuple(part1), tuple(part2), label)
        records.append((instance, gold))
    return SynthResult(
        spec=spec,
        records=records,
        linear_model=_rule_linear_model(spec),
        attention_model=_rule_attention_model(spec),
    )


def mutual_information_pairs(records: list[Record], candidates_1: list[str],
                             candidates_2: list[str]) -> list[tuple[float, str, str]]:
    """MI between pair co-occurrence and the label, for rule-recovery checks."""
    labels = np.array([inst.label for inst, _ in records])
    n = len(records)
    out = []
    for a in candidates_1:
        has_a = np.array([a in inst.part1 for inst, _ in records])
        for b in candidates_2:
            has_b = np.array([b in inst.part2 for inst, _ in records])
            co = has_a & has_b
            mi = 0.0
            for x_val in (0, 1):
                for y_val in (0, 1):
                    p_xy = np.mean((co == x_val) & (labels == y_val))
                    p_x = np.mean(co == x_val)
                    p_y = np.mean(labels == y_val)
                    if p_xy > 0 and p_x > 0 and p_y > 0:
                        mi += p_xy * math.log(p_xy / (p_x * p_y))
            out.append((float(mi), a, b))
    out.sort(key=lambda t: (-t[0], t[1], t[2]))
    return out
