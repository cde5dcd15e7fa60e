"""Domain types, dataset ingestion, and ranking/budget utilities.

An input instance is a two-part token sequence (part1 of m tokens, part2 of
n tokens) addressed by global token indices: i in [0, m) is part1, i in
[m, m+n) is part2.  Explanation units come in three kinds: single tokens,
cross-part token pairs, and cross-part contiguous span pairs.  All types here
are immutable and safe to share across threads.
"""

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence, Union

from .errors import (
    ContractViolation,
    DuplicateIdError,
    NumericError,
    ParseError,
    ValidationError,
)


class Kind(str, Enum):
    """Explanation kinds: per-token, cross-part token pair, cross-part span pair."""

    TOKEN = "token"
    TOKEN_PAIR = "token_pair"
    SPAN_PAIR = "span_pair"


@dataclass(frozen=True)
class Instance:
    """A two-part classified token sequence."""

    id: str
    part1: tuple[str, ...]
    part2: tuple[str, ...]
    label: int

    def __post_init__(self):
        object.__setattr__(self, "part1", tuple(self.part1))
        object.__setattr__(self, "part2", tuple(self.part2))
        if len(self.part1) < 1 or len(self.part2) < 1:
            raise ValidationError(f"instance {self.id!r}: both parts must be non-empty")
        if any(not t for t in self.part1 + self.part2):
            raise ValidationError(f"instance {self.id!r}: tokens must be non-empty strings")
        if self.label < 0:
            raise ValidationError(f"instance {self.id!r}: label must be a class index >= 0")

    @property
    def m(self) -> int:
        return len(self.part1)

    @property
    def n(self) -> int:
        return len(self.part2)

    @property
    def num_tokens(self) -> int:
        return self.m + self.n

    @property
    def tokens(self) -> tuple[str, ...]:
        """Global token sequence: part1 followed by part2."""
        return self.part1 + self.part2

    def token_at(self, i: int) -> str:
        return self.tokens[i]


@dataclass(frozen=True)
class Token:
    """A single token, by global index."""

    i: int

    def token_indices(self) -> tuple[int, ...]:
        return (self.i,)

    def sort_key(self) -> tuple[int, ...]:
        return (self.i,)

    def encode(self) -> list[int]:
        return [self.i]


@dataclass(frozen=True)
class TokenPair:
    """A cross-part token pair: p in part1, q in part2 (global indices)."""

    p: int
    q: int

    def token_indices(self) -> tuple[int, ...]:
        return (self.p, self.q)

    def sort_key(self) -> tuple[int, ...]:
        return (self.p, self.q)

    def encode(self) -> list[int]:
        return [self.p, self.q]


@dataclass(frozen=True)
class SpanPair:
    """A cross-part pair of contiguous spans with inclusive endpoints.

    [s1, e1] lies in part1 and [s2, e2] in part2; single-token spans have
    s == e.
    """

    s1: int
    e1: int
    s2: int
    e2: int

    def token_indices(self) -> tuple[int, ...]:
        return tuple(range(self.s1, self.e1 + 1)) + tuple(range(self.s2, self.e2 + 1))

    def sort_key(self) -> tuple[int, ...]:
        return (self.s1, self.e1, self.s2, self.e2)

    def encode(self) -> list[int]:
        return [self.s1, self.e1, self.s2, self.e2]

    @property
    def span1(self) -> tuple[int, int]:
        return (self.s1, self.e1)

    @property
    def span2(self) -> tuple[int, int]:
        return (self.s2, self.e2)


ExplanationUnit = Union[Token, TokenPair, SpanPair]

_KIND_OF_UNIT = {Token: Kind.TOKEN, TokenPair: Kind.TOKEN_PAIR, SpanPair: Kind.SPAN_PAIR}


def kind_of(unit: ExplanationUnit) -> Kind:
    return _KIND_OF_UNIT[type(unit)]


def decode_unit(kind: Kind, ints: Sequence[int]) -> ExplanationUnit:
    """Inverse of ``unit.encode()`` for the documented wire encoding."""
    ints = list(ints)
    if kind == Kind.TOKEN and len(ints) == 1:
        return Token(ints[0])
    if kind == Kind.TOKEN_PAIR and len(ints) == 2:
        return TokenPair(ints[0], ints[1])
    if kind == Kind.SPAN_PAIR and len(ints) == 4:
        return SpanPair(ints[0], ints[1], ints[2], ints[3])
    raise ValidationError(f"unit encoding {ints} does not match kind {kind.value}")


def validate_unit(unit: ExplanationUnit, instance: Instance) -> None:
    """Check a unit's indices against an instance's part boundary."""
    m, total = instance.m, instance.num_tokens
    if isinstance(unit, Token):
        if not 0 <= unit.i < total:
            raise ValidationError(
                f"instance {instance.id!r}: token index {unit.i} out of range [0, {total})"
            )
    elif isinstance(unit, TokenPair):
        if not 0 <= unit.p < m:
            raise ValidationError(
                f"instance {instance.id!r}: pair index {unit.p} must lie in part1 [0, {m})"
            )
        if not m <= unit.q < total:
            raise ValidationError(
                f"instance {instance.id!r}: pair index {unit.q} must lie in part2 [{m}, {total})"
            )
    elif isinstance(unit, SpanPair):
        if not (0 <= unit.s1 <= unit.e1 < m):
            raise ValidationError(
                f"instance {instance.id!r}: span [{unit.s1}, {unit.e1}] not inside part1 [0, {m})"
            )
        if not (m <= unit.s2 <= unit.e2 < total):
            raise ValidationError(
                f"instance {instance.id!r}: span [{unit.s2}, {unit.e2}] not inside part2"
                f" [{m}, {total})"
            )
    else:
        raise ContractViolation(f"unknown unit type {type(unit).__name__}")


def tokens_of(units: Iterable[ExplanationUnit]) -> frozenset[int]:
    """Union of all token indices covered by the units (set semantics)."""
    out: set[int] = set()
    for u in units:
        out.update(u.token_indices())
    return frozenset(out)


Entry = tuple[ExplanationUnit, float]


def rank_entries(entries: Iterable[Entry], rule: str = "signed") -> list[Entry]:
    """Sort (unit, score) entries by descending importance.

    ``signed`` ranks by raw score (attribution toward the predicted class);
    ``magnitude`` ranks by absolute score.  Ties break on the smaller first
    index, then subsequent indices, so the order is total and deterministic.
    """
    entries = list(entries)
    for unit, score in entries:
        if not math.isfinite(score):
            raise NumericError(f"non-finite score {score!r} for unit {unit}")
    if rule == "signed":
        keyfn = lambda e: (-e[1], e[0].sort_key())
    elif rule == "magnitude":
        keyfn = lambda e: (-abs(e[1]), e[0].sort_key())
    else:
        raise ContractViolation(f"unknown ranking rule {rule!r}")
    return sorted(entries, key=keyfn)


@dataclass(frozen=True)
class AttributionSet:
    """A ranked explanation list of one kind for one instance.

    ``entries`` order is the importance ranking; producers rank via
    ``rank_entries`` (see ``from_scores``).
    """

    instance_id: str
    kind: Kind
    method: str
    entries: tuple[Entry, ...]
    flags: frozenset[str] = frozenset()  # advisory markers (e.g. "ridge_fallback"); not serialized

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((u, float(a)) for u, a in self.entries))
        object.__setattr__(self, "flags", frozenset(self.flags))
        seen = set()
        for unit, score in self.entries:
            if kind_of(unit) != self.kind:
                raise ValidationError(
                    f"attribution set {self.instance_id!r}/{self.method!r}:"
                    f" unit {unit} is not of kind {self.kind.value}"
                )
            if not math.isfinite(score):
                raise NumericError(f"non-finite score for unit {unit}")
            if unit in seen:
                raise ValidationError(f"duplicate unit {unit} in attribution set")
            seen.add(unit)

    @classmethod
    def from_scores(
        cls,
        instance_id: str,
        kind: Kind,
        method: str,
        entries: Iterable[Entry],
        rule: str = "signed",
        flags: Iterable[str] = (),
    ) -> "AttributionSet":
        return cls(instance_id, kind, method, tuple(rank_entries(entries, rule)),
                   frozenset(flags))

    @property
    def s(self) -> int:
        """Upper limit on usable explanation pieces: the entry count."""
        return len(self.entries)

    def units(self) -> list[ExplanationUnit]:
        return [u for u, _ in self.entries]

    def scores(self) -> list[float]:
        return [a for _, a in self.entries]

    def top(self, k: int) -> list[ExplanationUnit]:
        return [u for u, _ in self.entries[:k]]

    def validate_for(self, instance: Instance) -> None:
        if instance.id != self.instance_id:
            raise ContractViolation(
                f"attribution set for {self.instance_id!r} applied to instance {instance.id!r}"
            )
        if self.kind == Kind.TOKEN and self.s > instance.num_tokens:
            raise ValidationError("more token entries than tokens")
        if self.kind == Kind.TOKEN_PAIR and self.s > instance.m * instance.n:
            raise ValidationError("more pair entries than cross-part pairs")
        for unit in self.units():
            validate_unit(unit, instance)


@dataclass(frozen=True)
class GoldAnnotation:
    """Human reference sets for one instance, at up to three granularities."""

    instance_id: str
    token_gold: frozenset[int] | None = None
    pair_gold: frozenset[TokenPair] | None = None
    span_gold: frozenset[SpanPair] | None = None

    def validate_for(self, instance: Instance) -> None:
        if self.token_gold is not None:
            for i in self.token_gold:
                validate_unit(Token(i), instance)
        for units in (self.pair_gold, self.span_gold):
            if units is not None:
                for u in units:
                    validate_unit(u, instance)

    def flat_token_gold(self) -> frozenset[int] | None:
        """Token-level reference: native token gold, else tokens aggregated
        from the pair/span gold sets."""
        if self.token_gold is not None:
            return self.token_gold
        pooled: set[int] = set()
        found = False
        for units in (self.pair_gold, self.span_gold):
            if units is not None:
                found = True
                pooled.update(tokens_of(units))
        return frozenset(pooled) if found else None


Record = tuple[Instance, GoldAnnotation | None]


def _parse_record(obj: dict, line_no: int) -> Record:
    try:
        instance = Instance(
            id=str(obj["id"]),
            part1=tuple(obj["part1"]),
            part2=tuple(obj["part2"]),
            label=int(obj["label"]),
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"record missing or mistyped field: {exc}", line_no)
    token_gold = obj.get("token_gold")
    pair_gold = obj.get("pair_gold")
    span_gold = obj.get("span_gold")
    if token_gold is None and pair_gold is None and span_gold is None:
        return instance, None
    gold = GoldAnnotation(
        instance_id=instance.id,
        token_gold=frozenset(int(i) for i in token_gold) if token_gold is not None else None,
        pair_gold=(
            frozenset(TokenPair(int(p), int(q)) for p, q in pair_gold)
            if pair_gold is not None
            else None
        ),
        span_gold=(
            frozenset(SpanPair(int(a), int(b), int(c), int(d)) for a, b, c, d in span_gold)
            if span_gold is not None
            else None
        ),
    )
    gold.validate_for(instance)
    return instance, gold


def load_dataset(path) -> list[Record]:
    """Read a dataset JSONL file, validating every record.

    One record per line: ``{"id", "part1", "part2", "label"}`` plus optional
    ``token_gold`` / ``pair_gold`` / ``span_gold`` (span entries are
    ``[s, s+l1, t, t+l2]`` with inclusive endpoints).  Order is preserved;
    duplicate ids are rejected.
    """
    records: list[Record] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_no)
            if not isinstance(obj, dict):
                raise ParseError("record is not a JSON object", line_no)
            instance, gold = _parse_record(obj, line_no)
            if instance.id in seen_ids:
                raise DuplicateIdError(f"duplicate instance id {instance.id!r} at line {line_no}")
            seen_ids.add(instance.id)
            records.append((instance, gold))
    return records


def serialize_record(instance: Instance, gold: GoldAnnotation | None = None) -> str:
    """One JSONL line for a record; inverse of the loader."""
    obj: dict = {
        "id": instance.id,
        "part1": list(instance.part1),
        "part2": list(instance.part2),
        "label": instance.label,
    }
    if gold is not None:
        if gold.token_gold is not None:
            obj["token_gold"] = sorted(gold.token_gold)
        if gold.pair_gold is not None:
            obj["pair_gold"] = sorted([u.p, u.q] for u in gold.pair_gold)
        if gold.span_gold is not None:
            obj["span_gold"] = sorted(u.encode() for u in gold.span_gold)
    return json.dumps(obj, ensure_ascii=False)


def save_dataset(records: Iterable[Record], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for instance, gold in records:
            fh.write(serialize_record(instance, gold) + "\n")


def save_attributions(sets: Iterable[AttributionSet], path) -> None:
    """Write attribution sets as JSONL, one instance per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for aset in sets:
            obj = {
                "id": aset.instance_id,
                "kind": aset.kind.value,
                "method": aset.method,
                "entries": [{"unit": u.encode(), "score": a} for u, a in aset.entries],
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_attributions(path) -> list[AttributionSet]:
    """Read attribution JSONL; file order of entries is the ranking."""
    out: list[AttributionSet] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_no)
            try:
                kind = Kind(obj["kind"])
                entries = tuple(
                    (decode_unit(kind, e["unit"]), float(e["score"])) for e in obj["entries"]
                )
                out.append(AttributionSet(str(obj["id"]), kind, str(obj["method"]), entries))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad attribution record: {exc}", line_no)
    return out
