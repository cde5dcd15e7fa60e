"""Black-box classifier contract, built-in toy models, and masking machinery.

Every attribution method and perturbation test runs against a ``ModelHandle``:
a classifier that always supports ``predict`` and may declare ``grad_dot``
(per-token directional logit derivatives along an interpolation path, for
integrated gradients) and ``attention`` (final-layer attention maps).
Perturbations never delete positions; they replace tokens with the model's
declared mask token so sequence lengths and attention maps stay aligned.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import Instance
from .errors import UnsupportedCapabilityError, ValidationError

PREDICT = "predict"
GRAD_DOT = "grad_dot"
ATTENTION = "attention"

PROB_SUM_TOL = 1e-6
ATTENTION_ROW_TOL = 1e-5


@dataclass(frozen=True)
class Prediction:
    """Class probabilities plus the argmax label (ties go to the lowest index)."""

    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if any(p < 0 for p in self.probs):
            raise ValidationError("prediction probabilities must be non-negative")
        if abs(sum(self.probs) - 1.0) > PROB_SUM_TOL:
            raise ValidationError(f"probabilities sum to {sum(self.probs)!r}, not 1")

    @property
    def label(self) -> int:
        best = max(self.probs)
        return next(i for i, p in enumerate(self.probs) if p == best)


@dataclass(frozen=True)
class AttentionMap:
    """Final-layer attention, one row-stochastic matrix per head.

    ``alignment[pos]`` is the global token index served by matrix position
    ``pos``, or -1 for positions (such as a start anchor) that carry no input
    token.  The anchor, when present, is position 0.
    """

    heads: tuple[np.ndarray, ...]
    alignment: tuple[int, ...]

    def __post_init__(self):
        heads = tuple(np.asarray(h, dtype=float) for h in self.heads)
        object.__setattr__(self, "heads", heads)
        object.__setattr__(self, "alignment", tuple(int(i) for i in self.alignment))
        for h in heads:
            if h.ndim != 2 or h.shape[0] != h.shape[1]:
                raise ValidationError("attention matrices must be square")
            if h.shape[0] != len(self.alignment):
                raise ValidationError("alignment length must match matrix size")
            if np.any(h < 0) or np.any(np.abs(h.sum(axis=1) - 1.0) > ATTENTION_ROW_TOL):
                raise ValidationError("attention rows must be non-negative and sum to 1")
            h.setflags(write=False)

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    def position_of(self, global_index: int) -> int:
        try:
            return self.alignment.index(global_index)
        except ValueError:
            raise ValidationError(f"no attention position aligned to token {global_index}")


class ModelHandle(ABC):
    """Capability-declaring classifier contract.

    Subclasses must be deterministic: the same input always yields the same
    prediction.  ``calls`` counts predict invocations (batch items included).
    """

    def __init__(self, model_id: str, num_classes: int, mask_token: str,
                 capabilities: Iterable[str], thread_safe: bool = True):
        if num_classes < 2:
            raise ValidationError("a classifier needs at least 2 classes")
        if not mask_token:
            raise ValidationError("mask token must be non-empty")
        self.id = model_id
        self.num_classes = num_classes
        self.mask_token = mask_token
        self.capabilities = frozenset(capabilities) | {PREDICT}
        self.thread_safe = thread_safe
        self.calls = 0

    def supports(self, capability: str) -> bool:
        return capability in self.capabilities

    def require(self, capability: str) -> None:
        if not self.supports(capability):
            raise UnsupportedCapabilityError(
                f"model {self.id!r} does not declare the {capability!r} capability"
            )

    @abstractmethod
    def predict(self, tokens: Sequence[str]) -> Prediction:
        ...

    def predict_batch(self, batch: Sequence[Sequence[str]]) -> list[Prediction]:
        return [self.predict(tokens) for tokens in batch]

    def grad_dot(self, tokens: Sequence[str], baseline: Sequence[str], alpha: float,
                 target: int) -> np.ndarray:
        """Directional derivative of the target-class logit at the path point
        ``baseline + alpha * (tokens - baseline)``, one scalar per position."""
        raise UnsupportedCapabilityError(
            f"model {self.id!r} does not declare the {GRAD_DOT!r} capability"
        )

    def attention(self, tokens: Sequence[str]) -> AttentionMap:
        raise UnsupportedCapabilityError(
            f"model {self.id!r} does not declare the {ATTENTION!r} capability"
        )


def mask_omit(instance: Instance, omit: Iterable[int], mask: str) -> list[str]:
    """Replace the tokens at ``omit`` with the mask token, in place."""
    omit = set(omit)
    total = instance.num_tokens
    for i in omit:
        if not 0 <= i < total:
            raise ValidationError(f"omit index {i} out of range [0, {total})")
    return [mask if i in omit else t for i, t in enumerate(instance.tokens)]


def mask_keep(instance: Instance, keep: Iterable[int], mask: str) -> list[str]:
    """Retain only the tokens at ``keep``; every other position is masked."""
    keep = set(keep)
    total = instance.num_tokens
    for i in keep:
        if not 0 <= i < total:
            raise ValidationError(f"keep index {i} out of range [0, {total})")
    return [t if i in keep else mask for i, t in enumerate(instance.tokens)]


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class LinearBowModel(ModelHandle):
    """Bag-of-words linear classifier: logits = sum of per-token class weights + bias.

    The mask token and unknown tokens map to an all-zero weight row, so masking
    a token removes exactly its contribution.  Gradients are closed-form and
    independent of the interpolation point.
    """

    def __init__(self, weights: dict[str, Sequence[float]], bias: Sequence[float],
                 mask_token: str = "[MASK]", model_id: str = "linear-bow"):
        bias = np.asarray(bias, dtype=float)
        super().__init__(model_id, len(bias), mask_token, {PREDICT, GRAD_DOT})
        self.bias = bias
        self.weights = {}
        for tok, row in weights.items():
            row = np.asarray(row, dtype=float)
            if row.shape != bias.shape:
                raise ValidationError(f"weight row for {tok!r} has wrong class count")
            self.weights[tok] = row
        self._zero = np.zeros_like(bias)
        self.weights[mask_token] = self._zero

    def _row(self, token: str) -> np.ndarray:
        return self.weights.get(token, self._zero)

    def logits(self, tokens: Sequence[str]) -> np.ndarray:
        z = self.bias.copy()
        for t in tokens:
            z += self._row(t)
        return z

    def predict(self, tokens: Sequence[str]) -> Prediction:
        if len(tokens) == 0:
            raise ValidationError("predict requires a non-empty token sequence")
        self.calls += 1
        return Prediction(tuple(_softmax(self.logits(tokens))))

    def predict_batch(self, batch: Sequence[Sequence[str]]) -> list[Prediction]:
        if not batch:
            return []
        self.calls += len(batch)
        lengths = {len(tokens) for tokens in batch}
        if len(lengths) > 1:
            return [Prediction(tuple(_softmax(self.logits(tokens)))) for tokens in batch]
        # equal-length fast path: accumulate position by position so every
        # row's float additions happen in exactly the order predict() uses
        # (bit-identical probabilities)
        known = sorted({t for tokens in batch for t in tokens} & self.weights.keys())
        table = np.vstack([self._zero] + [self.weights[t] for t in known])
        index = {t: i + 1 for i, t in enumerate(known)}
        ids = np.array([[index.get(t, 0) for t in tokens] for tokens in batch])
        z = np.tile(self.bias, (len(batch), 1))
        for pos in range(ids.shape[1]):
            z += table[ids[:, pos]]
        return [Prediction(tuple(p)) for p in _softmax(z)]

    def grad_dot(self, tokens, baseline, alpha, target) -> np.ndarray:
        if len(tokens) != len(baseline):
            raise ValidationError("tokens and baseline must have equal length")
        if not 0 <= target < self.num_classes:
            raise ValidationError(f"target class {target} out of range")
        # Linear map: the gradient is constant along the path, alpha unused.
        return np.array(
            [self._row(t)[target] - self._row(b)[target] for t, b in zip(tokens, baseline)]
        )

    def to_config(self) -> dict:
        return {
            "type": "linear",
            "mask_token": self.mask_token,
            "bias": self.bias.tolist(),
            "weights": {t: r.tolist() for t, r in sorted(self.weights.items())},
        }


def make_linear_bow_model(weights: dict[str, Sequence[float]], bias: Sequence[float],
                          mask_token: str = "[MASK]",
                          model_id: str = "linear-bow") -> LinearBowModel:
    return LinearBowModel(weights, bias, mask_token, model_id)


@dataclass
class ToyAttentionParams:
    """Parameters of the single-block multi-head toy attention classifier.

    ``embeddings`` maps tokens to d-dimensional rows; the anchor symbol gets
    its own row and is prepended at position 0 (never maskable, excluded from
    explanation indices).  Heads share the embedding width: d = heads * d_head.
    """

    vocab: list[str]
    embeddings: np.ndarray          # (V, d)
    anchor_embedding: np.ndarray    # (d,)
    w_q: np.ndarray                 # (H, d, d_head)
    w_k: np.ndarray                 # (H, d, d_head)
    w_v: np.ndarray                 # (H, d, d_head)
    w_o: np.ndarray                 # (H * d_head, d)
    w_c: np.ndarray                 # (d, C)
    b_c: np.ndarray                 # (C,)

    def to_config(self) -> dict:
        return {
            "type": "attention",
            "vocab": list(self.vocab),
            "embeddings": self.embeddings.tolist(),
            "anchor_embedding": self.anchor_embedding.tolist(),
            "w_q": self.w_q.tolist(),
            "w_k": self.w_k.tolist(),
            "w_v": self.w_v.tolist(),
            "w_o": self.w_o.tolist(),
            "w_c": self.w_c.tolist(),
            "b_c": self.b_c.tolist(),
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "ToyAttentionParams":
        return cls(
            vocab=list(cfg["vocab"]),
            embeddings=np.asarray(cfg["embeddings"], dtype=float),
            anchor_embedding=np.asarray(cfg["anchor_embedding"], dtype=float),
            w_q=np.asarray(cfg["w_q"], dtype=float),
            w_k=np.asarray(cfg["w_k"], dtype=float),
            w_v=np.asarray(cfg["w_v"], dtype=float),
            w_o=np.asarray(cfg["w_o"], dtype=float),
            w_c=np.asarray(cfg["w_c"], dtype=float),
            b_c=np.asarray(cfg["b_c"], dtype=float),
        )

    @classmethod
    def random(cls, vocab: list[str], seed: int, dim: int = 8, heads: int = 2,
               num_classes: int = 2, scale: float = 0.6) -> "ToyAttentionParams":
        if dim % heads != 0:
            raise ValidationError("embedding dim must be divisible by the head count")
        rng = np.random.default_rng(seed)
        d_head = dim // heads
        return cls(
            vocab=list(vocab),
            embeddings=rng.normal(0.0, scale, (len(vocab), dim)),
            anchor_embedding=rng.normal(0.0, scale, dim),
            w_q=rng.normal(0.0, scale, (heads, dim, d_head)),
            w_k=rng.normal(0.0, scale, (heads, dim, d_head)),
            w_v=rng.normal(0.0, scale, (heads, dim, d_head)),
            w_o=rng.normal(0.0, scale, (heads * d_head, dim)),
            w_c=rng.normal(0.0, scale, (dim, num_classes)),
            b_c=np.zeros(num_classes),
        )


class ToyAttentionModel(ModelHandle):
    """Single multi-head self-attention block over embedded tokens.

    A start anchor is prepended at position 0; the classifier reads the
    attention output at the anchor.  No positional encodings, so attention
    depends only on token identities.
    """

    def __init__(self, params: ToyAttentionParams, mask_token: str = "[MASK]",
                 model_id: str = "toy-attention"):
        super().__init__(model_id, params.b_c.shape[0], mask_token,
                         {PREDICT, GRAD_DOT, ATTENTION})
        self.params = params
        self._index = {t: i for i, t in enumerate(params.vocab)}
        self._dim = params.embeddings.shape[1]
        self._heads = params.w_q.shape[0]
        self._d_head = params.w_q.shape[2]
        self._scale = 1.0 / np.sqrt(self._d_head)
        if self._heads < 2:
            raise ValidationError("toy attention model requires at least 2 heads")
        if mask_token not in self._index:
            raise ValidationError("mask token must be in the model vocabulary")

    def _embed_token(self, token: str) -> np.ndarray:
        idx = self._index.get(token)
        if idx is None:
            return np.zeros(self._dim)  # out-of-vocabulary tokens carry no signal
        return self.params.embeddings[idx]

    def _embed(self, tokens: Sequence[str]) -> np.ndarray:
        rows = [self.params.anchor_embedding] + [self._embed_token(t) for t in tokens]
        return np.stack(rows)

    def _attention_weights(self, x: np.ndarray) -> np.ndarray:
        """Per-head row-stochastic attention over all positions; x is (P, d)."""
        p = self.params
        att = np.empty((self._heads, x.shape[0], x.shape[0]))
        for h in range(self._heads):
            q = x @ p.w_q[h]
            k = x @ p.w_k[h]
            att[h] = _softmax(q @ k.T * self._scale)
        return att

    def _logits_from_embedding(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        att = self._attention_weights(x)
        head_out = [att[h][0] @ (x @ p.w_v[h]) for h in range(self._heads)]
        z0 = np.concatenate(head_out) @ p.w_o
        return z0 @ p.w_c + p.b_c

    def logits(self, tokens: Sequence[str]) -> np.ndarray:
        return self._logits_from_embedding(self._embed(tokens))

    def predict(self, tokens: Sequence[str]) -> Prediction:
        if len(tokens) == 0:
            raise ValidationError("predict requires a non-empty token sequence")
        self.calls += 1
        return Prediction(tuple(_softmax(self.logits(tokens))))

    def attention(self, tokens: Sequence[str]) -> AttentionMap:
        att = self._attention_weights(self._embed(tokens))
        alignment = (-1,) + tuple(range(len(tokens)))
        return AttentionMap(tuple(att), alignment)

    def grad_dot(self, tokens, baseline, alpha, target) -> np.ndarray:
        """Analytic gradient of the target logit at the interpolated embedding,
        dotted per position with the input-minus-baseline direction."""
        if len(tokens) != len(baseline):
            raise ValidationError("tokens and baseline must have equal length")
        if not 0 <= target < self.num_classes:
            raise ValidationError(f"target class {target} out of range")
        x_full = self._embed(tokens)
        b_full = self._embed(baseline)
        x_alpha = b_full + alpha * (x_full - b_full)
        grad = self._grad_logit(x_alpha, target)
        direction = x_full - b_full
        return np.einsum("pd,pd->p", grad[1:], direction[1:])

    def _grad_logit(self, x: np.ndarray, target: int) -> np.ndarray:
        """d(logit_target)/dx for every position; x is (P, d).

        Only row 0 of the block output feeds the classifier, so gradients flow
        through the anchor's query, all keys, and all values.
        """
        p = self.params
        n_pos = x.shape[0]
        w_c_t = p.w_c[:, target]                      # (d,)
        u = p.w_o @ w_c_t                             # (H * d_head,)
        grad = np.zeros_like(x)
        for h in range(self._heads):
            u_h = u[h * self._d_head:(h + 1) * self._d_head]
            q0 = x[0] @ p.w_q[h]                      # (d_head,)
            k = x @ p.w_k[h]                          # (P, d_head)
            v = x @ p.w_v[h]                          # (P, d_head)
            a = _softmax((k @ q0) * self._scale)      # (P,)
            # value route: d/dv_j of sum_j a_j (v_j . u_h)
            grad += a[:, None] * (p.w_v[h] @ u_h)[None, :]
            # attention-score route through the softmax
            c = v @ u_h                               # (P,)
            t_vec = a * (c - float(a @ c)) * self._scale
            grad[0] += (p.w_q[h] @ k.T) @ t_vec
            grad += np.outer(t_vec, p.w_k[h] @ q0)
        return grad

    def to_config(self) -> dict:
        cfg = self.params.to_config()
        cfg["mask_token"] = self.mask_token
        return cfg


def make_toy_attention_model(params: ToyAttentionParams | None = None,
                             mask_token: str = "[MASK]", seed: int = 0,
                             vocab: Sequence[str] | None = None,
                             **random_kwargs) -> ToyAttentionModel:
    """Build the toy attention model from explicit params or a seeded random init."""
    if params is None:
        vocab = list(vocab) if vocab is not None else [f"w{i}" for i in range(16)]
        if mask_token not in vocab:
            vocab = vocab + [mask_token]
        params = ToyAttentionParams.random(vocab, seed, **random_kwargs)
    return ToyAttentionModel(params, mask_token)


def model_from_config(cfg: dict, model_id: str | None = None) -> ModelHandle:
    """Rebuild a builtin model from its serialized config (see ``to_config``)."""
    kind = cfg.get("type")
    if kind == "linear":
        model = LinearBowModel(cfg["weights"], cfg["bias"], cfg.get("mask_token", "[MASK]"))
    elif kind == "attention":
        model = ToyAttentionModel(ToyAttentionParams.from_config(cfg),
                                  cfg.get("mask_token", "[MASK]"))
    else:
        raise ValidationError(f"unknown builtin model type {kind!r}")
    if model_id:
        model.id = model_id
    return model
