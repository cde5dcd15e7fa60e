"""Attribution methods: coalition-game Shapley values (exact, sampled, and
directed bivariate), integrated gradients, attention readouts, and span
extraction via community detection on the cross-part interaction graph.

All attributions score the model's predicted class on the unperturbed input.
Coalition values use keep-masking (tokens outside the coalition are replaced
with the mask token), so sequence lengths never change.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .core import AttributionSet, Instance, Kind, SpanPair, Token, TokenPair
from .errors import (
    CapacityError,
    ContractViolation,
    ValidationError,
)
from .louvain import louvain_communities
from .model import ATTENTION, GRAD_DOT, ModelHandle, mask_keep

log = logging.getLogger(__name__)

EXACT_ENUMERATION_CAP = 14
KERNEL_RIDGE = 1e-8
DEFAULT_BIVARIATE_PERMUTATIONS = 2000


class Game(Protocol):
    """A coalition game over ``num_players`` token slots.

    Coalitions are bitmasks; ``values`` returns v(S) for each mask.
    """

    num_players: int

    def values(self, masks: Sequence[int]) -> np.ndarray: ...


class TableGame:
    """A game backed by an explicit value table indexed by coalition bitmask."""

    def __init__(self, table: Sequence[float]):
        table = np.asarray(table, dtype=float)
        n = int(table.shape[0]).bit_length() - 1
        if table.shape[0] != 1 << n:
            raise ValidationError("value table length must be a power of two")
        self.num_players = n
        self.table = table

    def values(self, masks: Sequence[int]) -> np.ndarray:
        return self.table[np.asarray(masks, dtype=np.int64)]


class AdditiveGame:
    """v(S) = sum of per-player weights; the textbook Shapley sanity case."""

    def __init__(self, weights: Sequence[float], base: float = 0.0):
        self.weights = np.asarray(weights, dtype=float)
        self.base = base
        self.num_players = len(self.weights)

    def values(self, masks: Sequence[int]) -> np.ndarray:
        masks = np.asarray(masks, dtype=np.int64)
        bits = (masks[:, None] >> np.arange(self.num_players)) & 1
        return self.base + bits @ self.weights


class CoalitionGame:
    """Model-backed game: v(S) = predicted probability of the target class when
    only the tokens in S are kept (everything else masked)."""

    def __init__(self, instance: Instance, model: ModelHandle, target: int | None = None):
        self.instance = instance
        self.model = model
        self.num_players = instance.num_tokens
        if target is None:
            target = model.predict(instance.tokens).label
        self.target = target
        self._cache: dict[int, float] = {}

    def _keep_sequence(self, mask: int) -> list[str]:
        keep = [i for i in range(self.num_players) if mask >> i & 1]
        return mask_keep(self.instance, keep, self.model.mask_token)

    def values(self, masks: Sequence[int]) -> np.ndarray:
        masks = [int(m) for m in masks]
        missing = sorted({m for m in masks if m not in self._cache})
        if missing:
            preds = self.model.predict_batch([self._keep_sequence(m) for m in missing])
            for m, pred in zip(missing, preds):
                self._cache[m] = pred.probs[self.target]
        return np.array([self._cache[m] for m in masks])

    def full_mask(self) -> int:
        return (1 << self.num_players) - 1


def _popcounts(n: int) -> np.ndarray:
    pc = np.zeros(1 << n, dtype=np.int64)
    for i in range(n):
        pc[1 << i: 2 << i] = pc[: 1 << i] + 1
    return pc


def _subset_weights(n: int) -> np.ndarray:
    """w[s] = s!(n-s-1)!/n! — the permutation weight of a predecessor set of size s."""
    return np.array([
        math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n)
        for s in range(n)
    ])


def exact_shapley_values(game: Game, cap: int = EXACT_ENUMERATION_CAP) -> np.ndarray:
    """Shapley values by full subset enumeration (2^n coalition evaluations)."""
    n = game.num_players
    if n > cap:
        raise CapacityError(
            f"{n} players exceed the exact enumeration cap ({cap}); use kernel_shap"
        )
    masks = np.arange(1 << n, dtype=np.int64)
    v = game.values(masks)
    pc = _popcounts(n)
    w = _subset_weights(n)
    phi = np.empty(n)
    for i in range(n):
        without = masks[(masks >> i) & 1 == 0]
        phi[i] = float(np.sum(w[pc[without]] * (v[without | (1 << i)] - v[without])))
    return phi


def exact_shapley(game: CoalitionGame, cap: int = EXACT_ENUMERATION_CAP) -> AttributionSet:
    phi = exact_shapley_values(game, cap)
    return AttributionSet.from_scores(
        game.instance.id, Kind.TOKEN, "shapley-exact",
        [(Token(i), float(phi[i])) for i in range(len(phi))],
    )


def _kernel_size_mass(n: int) -> np.ndarray:
    """Total Shapley-kernel mass per coalition size s = 1..n-1, normalized.

    The per-coalition kernel weight is (n-1) / (C(n,s) * s * (n-s)); summed over
    the C(n,s) coalitions of a size this leaves (n-1) / (s * (n-s))."""
    sizes = np.arange(1, n)
    mass = (n - 1) / (sizes * (n - sizes))
    return mass / mass.sum()


def _masks_of_size(n: int, size: int) -> list[int]:
    out = []
    for members in itertools.combinations(range(n), size):
        mask = 0
        for i in members:
            mask |= 1 << i
        out.append(mask)
    return out


def kernel_shap_values(game: Game, samples: int, seed: int,
                       ridge: float = KERNEL_RIDGE) -> tuple[np.ndarray, bool]:
    """Shapley values by the kernel-weighted least-squares approximation.

    Coalition-size levels are enumerated fully (with their exact kernel
    weights) while the sampling budget covers them, smallest and largest sizes
    first where the per-coalition weight is highest; the leftover budget is
    sampled with sizes proportional to the remaining kernel mass and coalitions
    uniform within a size, duplicates aggregating as regression weights.  The
    efficiency constraint sum(phi) = v(F) - v(empty) is enforced exactly by
    eliminating the last player.  Returns the values and whether ridge damping
    was needed for a singular system.
    """
    n = game.num_players
    if samples < n + 2:
        raise ValidationError(f"kernel_shap needs at least n+2={n + 2} samples, got {samples}")
    rng = np.random.default_rng(seed)
    full = (1 << n) - 1
    v_ends = game.values([0, full])
    v0, delta = float(v_ends[0]), float(v_ends[1] - v_ends[0])

    size_mass = _kernel_size_mass(n)
    weight_of: dict[int, float] = {}
    budget = samples
    mass_left = 1.0
    order = sorted(range(1, n), key=lambda s: (min(s, n - s), s))
    to_sample: list[int] = []
    for s in order:
        level_count = math.comb(n, s)
        mass = size_mass[s - 1]
        if mass_left > 0 and budget * (mass / mass_left) >= level_count:
            per_coalition = mass / level_count
            for mask in _masks_of_size(n, s):
                weight_of[mask] = per_coalition
            budget -= level_count
            mass_left -= mass
        else:
            to_sample.append(s)
    if to_sample and budget > 0 and mass_left > 0:
        probs = np.array([size_mass[s - 1] for s in to_sample])
        probs /= probs.sum()
        drawn_sizes = rng.choice(to_sample, size=budget, p=probs)
        per_draw = mass_left / budget
        for s in drawn_sizes:
            members = rng.choice(n, size=int(s), replace=False)
            mask = 0
            for i in members:
                mask |= 1 << int(i)
            weight_of[mask] = weight_of.get(mask, 0.0) + per_draw

    masks = sorted(weight_of)
    weights = np.array([weight_of[m] for m in masks], dtype=float)
    z = ((np.asarray(masks, dtype=np.int64)[:, None] >> np.arange(n)) & 1).astype(float)
    y = game.values(masks)

    # eliminate player n-1 so the efficiency constraint holds exactly
    y_adj = y - v0 - z[:, -1] * delta
    x = z[:, :-1] - z[:, -1:]
    a = (x * weights[:, None]).T @ x
    b = (x * weights[:, None]).T @ y_adj
    used_ridge = False
    try:
        head = np.linalg.solve(a, b)
        if not np.all(np.isfinite(head)):
            raise np.linalg.LinAlgError("non-finite solution")
    except np.linalg.LinAlgError:
        used_ridge = True
        head = np.linalg.solve(a + ridge * np.eye(n - 1), b)
    phi = np.empty(n)
    phi[:-1] = head
    phi[-1] = delta - head.sum()
    if used_ridge:
        log.warning("kernel_shap: singular regression system, applied ridge damping %g", ridge)
    return phi, used_ridge


def kernel_shap(game: CoalitionGame, samples: int, seed: int) -> AttributionSet:
    phi, used_ridge = kernel_shap_values(game, samples, seed)
    return AttributionSet.from_scores(
        game.instance.id, Kind.TOKEN, "shapley-kernel",
        [(Token(i), float(phi[i])) for i in range(len(phi))],
        flags=("ridge_fallback",) if used_ridge else (),
    )


def bivariate_shapley_directed(game: Game, i: int, j: int,
                               cap: int = EXACT_ENUMERATION_CAP,
                               num_permutations: int = DEFAULT_BIVARIATE_PERMUTATIONS,
                               seed: int = 0) -> float:
    """Directed importance of player i conditioned on j being present.

    The restricted-subset sum runs only over coalitions containing j, with
    weights normalized over that family (equivalently: the mean marginal
    contribution of i over permutations where j precedes i).  Exact within the
    enumeration cap, seeded permutation sampling beyond it.
    """
    if i == j:
        raise ContractViolation("directed bivariate importance requires i != j")
    n = game.num_players
    if not (0 <= i < n and 0 <= j < n):
        raise ValidationError(f"player index out of range [0, {n})")
    if n <= cap:
        masks = np.arange(1 << n, dtype=np.int64)
        sel = masks[((masks >> j) & 1 == 1) & ((masks >> i) & 1 == 0)]
        pc = _popcounts(n)
        w = _subset_weights(n)
        gains = game.values(sel | (1 << i)) - game.values(sel)
        # weights over the restricted family sum to 1/2; normalize to a mean
        return 2.0 * float(np.sum(w[pc[sel]] * gains))
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(num_permutations):
        perm = rng.permutation(n)
        pos = np.empty(n, dtype=np.int64)
        pos[perm] = np.arange(n)
        if pos[j] > pos[i]:  # swap to land uniformly in the j-precedes-i half
            perm[pos[i]], perm[pos[j]] = perm[pos[j]], perm[pos[i]]
            pos[i], pos[j] = pos[j], pos[i]
        before = 0
        for p in perm[: pos[i]]:
            before |= 1 << int(p)
        pair = game.values([before, before | (1 << i)])
        total += float(pair[1] - pair[0])
    return total / num_permutations


@dataclass(frozen=True)
class InteractionGraph:
    """Directed cross-part interaction weights over global token indices.

    ``directed[i, j]`` is the importance of token i conditioned on token j
    (or the attention weight i -> j); entries within a part are zero.
    """

    m: int
    n: int
    directed: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.directed, dtype=float)
        total = self.m + self.n
        if d.shape != (total, total):
            raise ValidationError("interaction matrix must be (m+n, m+n)")
        if not np.all(np.isfinite(d)):
            raise ValidationError("interaction weights must be finite")
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "directed", d)

    def symmetrized(self) -> np.ndarray:
        return (self.directed + self.directed.T) / 2.0

    def cross_pairs(self) -> list[tuple[int, int]]:
        return [(p, q) for p in range(self.m) for q in range(self.m, self.m + self.n)]


def bivariate_shapley_full(game: CoalitionGame,
                           cap: int = EXACT_ENUMERATION_CAP,
                           num_permutations: int = DEFAULT_BIVARIATE_PERMUTATIONS,
                           seed: int = 0) -> tuple[AttributionSet, InteractionGraph]:
    """All cross-part pair interactions plus the directed graph behind them.

    score(p, q) = (Shap(p | q) + Shap(q | p)) / 2 over every part1 x part2 pair.
    """
    inst = game.instance
    total = inst.num_tokens
    directed = np.zeros((total, total))
    entries = []
    for p in range(inst.m):
        for q in range(inst.m, total):
            d_pq = bivariate_shapley_directed(game, p, q, cap, num_permutations, seed)
            d_qp = bivariate_shapley_directed(game, q, p, cap, num_permutations, seed)
            directed[p, q] = d_pq
            directed[q, p] = d_qp
            entries.append((TokenPair(p, q), (d_pq + d_qp) / 2.0))
    aset = AttributionSet.from_scores(inst.id, Kind.TOKEN_PAIR, "shapley-pair", entries)
    return aset, InteractionGraph(inst.m, inst.n, directed)


def bivariate_shapley(game: CoalitionGame, **kwargs) -> AttributionSet:
    return bivariate_shapley_full(game, **kwargs)[0]


@dataclass(frozen=True)
class IGResult:
    """Integrated-gradients attribution plus the completeness diagnostic.

    ``completeness_gap`` is |sum(IG) - (logit_t(x) - logit_t(baseline))| when the
    model exposes logits in-process, else None (the wire protocol carries only
    probabilities).
    """

    attributions: AttributionSet
    completeness_gap: float | None


def integrated_gradients(model: ModelHandle, instance: Instance, steps: int = 50,
                         target: int | None = None) -> IGResult:
    """Midpoint-rule path integral of per-token directional logit gradients.

    The baseline is the all-mask sequence; IG_i averages grad_dot over
    midpoints (t - 0.5)/steps for t = 1..steps.
    """
    model.require(GRAD_DOT)
    if steps < 1:
        raise ValidationError("integrated gradients needs at least one step")
    tokens = list(instance.tokens)
    baseline = [model.mask_token] * len(tokens)
    if target is None:
        target = model.predict(tokens).label
    acc = np.zeros(len(tokens))
    for t in range(1, steps + 1):
        alpha = (t - 0.5) / steps
        acc += np.asarray(model.grad_dot(tokens, baseline, alpha, target))
    ig = acc / steps
    gap = None
    if hasattr(model, "logits"):
        ref = float(model.logits(tokens)[target] - model.logits(baseline)[target])
        gap = abs(float(ig.sum()) - ref)
    aset = AttributionSet.from_scores(
        instance.id, Kind.TOKEN, "ig",
        [(Token(i), float(ig[i])) for i in range(len(tokens))],
    )
    return IGResult(aset, gap)


def _scores_from_row(amap, row: np.ndarray, num_tokens: int) -> np.ndarray:
    """Collapse a matrix row onto global token indices via the alignment."""
    scores = np.zeros(num_tokens)
    for pos, tok in enumerate(amap.alignment):
        if tok >= 0:
            scores[tok] += row[pos]
    return scores


def attention_token(model: ModelHandle, instance: Instance, head: int) -> AttributionSet:
    """Token scores = final-layer attention from the anchor (first) position."""
    model.require(ATTENTION)
    amap = model.attention(instance.tokens)
    if not 0 <= head < amap.num_heads:
        raise ValidationError(f"head {head} out of range [0, {amap.num_heads})")
    scores = _scores_from_row(amap, amap.heads[head][0], instance.num_tokens)
    return AttributionSet.from_scores(
        instance.id, Kind.TOKEN, f"attention-token:h{head}",
        [(Token(i), float(scores[i])) for i in range(instance.num_tokens)],
    )


def attention_interaction_full(model: ModelHandle, instance: Instance,
                               head: int) -> tuple[AttributionSet, InteractionGraph]:
    """Cross-part pair scores = mean of the two attention directions."""
    model.require(ATTENTION)
    amap = model.attention(instance.tokens)
    if not 0 <= head < amap.num_heads:
        raise ValidationError(f"head {head} out of range [0, {amap.num_heads})")
    total = instance.num_tokens
    att = np.zeros((total, total))
    mat = amap.heads[head]
    for pos_a, tok_a in enumerate(amap.alignment):
        if tok_a < 0:
            continue
        for pos_b, tok_b in enumerate(amap.alignment):
            if tok_b >= 0:
                att[tok_a, tok_b] += mat[pos_a, pos_b]
    directed = np.zeros((total, total))
    entries = []
    for p in range(instance.m):
        for q in range(instance.m, total):
            directed[p, q] = att[p, q]
            directed[q, p] = att[q, p]
            entries.append((TokenPair(p, q), (att[p, q] + att[q, p]) / 2.0))
    aset = AttributionSet.from_scores(instance.id, Kind.TOKEN_PAIR,
                                      f"attention-pair:h{head}", entries)
    return aset, InteractionGraph(instance.m, instance.n, directed)


def attention_interaction(model: ModelHandle, instance: Instance, head: int) -> AttributionSet:
    return attention_interaction_full(model, instance, head)[0]


def select_head(model: ModelHandle, calibration: Sequence[Instance],
                candidate_heads: Sequence[int] | None = None, budget: int = 2,
                seed: int = 0) -> int:
    """Pick the final-layer head whose anchor-attention token explanations are
    most comprehensive: omitting the top-``budget`` attended tokens should flip
    the prediction most often over the calibration set.  Ties go to the lowest
    head index; ``seed`` is accepted for interface stability (the criterion is
    deterministic)."""
    from .faithfulness import comp_point  # local import to keep modules acyclic

    model.require(ATTENTION)
    if not calibration:
        raise ValidationError("head selection needs at least one calibration instance")
    if candidate_heads is None:
        candidate_heads = range(model.attention(calibration[0].tokens).num_heads)
    best_head, best_score = None, -1.0
    for head in candidate_heads:
        flips = 0
        for inst in calibration:
            aset = attention_token(model, inst, head)
            units = aset.top(budget)
            flips += comp_point(model, inst, units)
        score = flips / len(calibration)
        if score > best_score:
            best_head, best_score = head, score
    return int(best_head)


def _contiguous_runs(indices: list[int]) -> list[tuple[int, int]]:
    runs = []
    for idx in indices:
        if runs and idx == runs[-1][1] + 1:
            runs[-1] = (runs[-1][0], idx)
        else:
            runs.append((idx, idx))
    return runs


def louvain_spans(pairs: AttributionSet, graph: InteractionGraph,
                  resolution: float = 1.0, seed: int = 0,
                  method: str | None = None) -> AttributionSet:
    """Extract span-pair explanations from token-pair interactions.

    The symmetrized interaction graph (shifted to non-negative weights) is
    clustered with Louvain; each community's part1 and part2 members split into
    maximal contiguous runs, and every (run1, run2) combination becomes a span
    pair scored by the sum of the original cross pair scores inside it divided
    by the total token count of the two runs.  Communities confined to one part
    emit nothing (logged).
    """
    if pairs.kind != Kind.TOKEN_PAIR:
        raise ContractViolation("louvain_spans consumes token-pair attributions")
    m, total = graph.m, graph.m + graph.n
    score_of = {(u.p, u.q): a for u, a in pairs.entries}
    sym = graph.symmetrized()
    cross = np.zeros_like(sym)
    for p, q in graph.cross_pairs():
        w = sym[p, q]
        cross[p, q] = cross[q, p] = w
    cross_vals = [cross[p, q] for p, q in graph.cross_pairs()]
    shift = min(0.0, min(cross_vals)) if cross_vals else 0.0
    shifted = np.zeros_like(cross)
    for p, q in graph.cross_pairs():
        shifted[p, q] = shifted[q, p] = cross[p, q] - shift

    communities = louvain_communities(shifted, resolution=resolution, seed=seed)
    entries = []
    skipped = 0
    for comm in communities:
        part1 = [i for i in comm if i < m]
        part2 = [i for i in comm if i >= m]
        if not part1 or not part2:
            skipped += 1
            continue
        for s1, e1 in _contiguous_runs(part1):
            for s2, e2 in _contiguous_runs(part2):
                tok_count = (e1 - s1 + 1) + (e2 - s2 + 1)
                score = sum(
                    score_of.get((p, q), 0.0)
                    for p in range(s1, e1 + 1)
                    for q in range(s2, e2 + 1)
                )
                entries.append((SpanPair(s1, e1, s2, e2), score / tok_count))
    if skipped:
        log.debug("louvain_spans: %d single-part communities emitted no span pair (%s)",
                  skipped, pairs.instance_id)
    return AttributionSet.from_scores(
        pairs.instance_id, Kind.SPAN_PAIR, method or f"louvain:{pairs.method}", entries
    )
