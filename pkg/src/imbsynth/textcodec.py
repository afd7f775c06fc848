"""Row <-> sentence serialization, permutation strategies, and the closed-vocabulary codec."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import FeatureKind, Row, Schema

BOS = "<bos>"
EOS = "<eos>"
IS = "<is>"
SEP = "<sep>"

STRUCTURAL_TOKENS = (BOS, EOS, IS, SEP)
NUMBER_TOKENS = tuple("0123456789") + (".", "-")
NUMBER_CHARS = frozenset("0123456789.-")


class CodecError(Exception):
    pass


class ParseError(Exception):
    """A token sequence that does not decode to a schema-conforming row."""

    def __init__(self, reason: str, position: int):
        super().__init__(f"{reason} (at token position {position})")
        self.reason = reason
        self.position = position


class Permutation(str, Enum):
    PERMUTE_XY = "permute_xy"
    FIX_Y = "fix_y"


@dataclass(frozen=True)
class Field:
    name: str
    value_text: str


@dataclass(frozen=True)
class Sentence:
    fields: tuple[Field, ...]
    target_name: str

    def __post_init__(self):
        if sum(1 for f in self.fields if f.name == self.target_name) != 1:
            raise CodecError("sentence must contain the target field exactly once")
        feature_names = [f.name for f in self.fields if f.name != self.target_name]
        if len(set(feature_names)) != len(feature_names):
            raise CodecError("duplicate feature field in sentence")

    @property
    def target_field(self) -> Field:
        return next(f for f in self.fields if f.name == self.target_name)

    def text(self) -> str:
        """Human-readable form, e.g. 'Edu is Bachelor, WH is 35.5'."""
        return ", ".join(f"{f.name} is {f.value_text}" for f in self.fields)


@dataclass(frozen=True)
class CodecConfig:
    sig_digits: int = 4
    permutation: Permutation = Permutation.FIX_Y

    def __post_init__(self):
        if self.sig_digits < 1:
            raise CodecError("sig_digits must be >= 1")


def format_number(x: float, sig_digits: int = 4) -> str:
    """Shortest positional decimal with at most sig_digits significant digits.

    No exponent notation, no trailing zeros; rounding is round-half-to-even.
    """
    if not np.isfinite(x):
        raise CodecError(f"cannot format non-finite number {x!r}")
    if x == 0:
        return "0"
    text = np.format_float_positional(
        float(x), precision=sig_digits, unique=True, fractional=False, trim="-"
    )
    if text in ("-0", "0."):
        return "0"
    return text


def row_to_sentence(row: Row, schema: Schema, include_categorical: bool = True,
                    sig_digits: int = 4) -> Sentence:
    """Serialize a row; interpolated rows drop categorical fields via the flag."""
    fields = []
    for value, feat in zip(row.values, schema.features):
        if feat.kind is FeatureKind.CONTINUOUS:
            fields.append(Field(feat.name, format_number(value, sig_digits)))
        elif include_categorical:
            fields.append(Field(feat.name, value))
    fields.append(Field(schema.target_name, row.label))
    return Sentence(tuple(fields), schema.target_name)


def permute_sentence(sentence: Sentence, strategy: Permutation,
                     rng: np.random.Generator) -> Sentence:
    fields = list(sentence.fields)
    if strategy is Permutation.PERMUTE_XY:
        order = rng.permutation(len(fields))
        permuted = [fields[i] for i in order]
    else:
        target = sentence.target_field
        rest = [f for f in fields if f.name != sentence.target_name]
        order = rng.permutation(len(rest))
        permuted = [target] + [rest[i] for i in order]
    return Sentence(tuple(permuted), sentence.target_name)


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    index: dict[str, int]

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise CodecError(f"token {token!r} not in vocabulary") from None

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    @property
    def bos(self) -> int:
        return self.index[BOS]

    @property
    def eos(self) -> int:
        return self.index[EOS]

    @property
    def is_id(self) -> int:
        return self.index[IS]

    @property
    def sep(self) -> int:
        return self.index[SEP]

    @property
    def number_ids(self) -> tuple[int, ...]:
        return tuple(self.index[t] for t in NUMBER_TOKENS)


def build_vocab(schema: Schema) -> Vocab:
    """Closed vocabulary: structural, digits, names, categories, labels (in that order)."""
    tokens: list[str] = list(STRUCTURAL_TOKENS) + list(NUMBER_TOKENS)
    seen = set(tokens)

    def add(tok: str) -> None:
        if tok not in seen:
            tokens.append(tok)
            seen.add(tok)

    for feat in schema.features:
        if _is_numeric_text(feat.name):
            raise CodecError(f"feature name {feat.name!r} is all number characters")
        add(feat.name)
    add(schema.target_name)
    for feat in schema.features:
        if feat.categories:
            for cat in feat.categories:
                # All-digit category strings would be indistinguishable from
                # character-level numeric values when decoding.
                if _is_numeric_text(cat):
                    raise CodecError(f"category {cat!r} is all number characters")
                add(cat)
    for label in schema.target_labels:
        if _is_numeric_text(label):
            raise CodecError(f"label {label!r} is all number characters")
        add(label)
    return Vocab(tuple(tokens), {t: i for i, t in enumerate(tokens)})


def encode(sentence: Sentence, vocab: Vocab, *, final: bool = True) -> list[int]:
    """Token layout: BOS, (name IS value... SEP)*, last field without SEP, EOS.

    With final=False the EOS (and trailing SEP) are left off, producing a prompt
    prefix that generation can continue.
    """
    ids = [vocab.bos]
    for pos, field in enumerate(sentence.fields):
        ids.append(vocab.id(field.name))
        ids.append(vocab.is_id)
        if _is_numeric_text(field.value_text):
            if not field.value_text:
                raise CodecError(f"empty numeric value for field {field.name!r}")
            ids.extend(vocab.id(ch) for ch in field.value_text)
        else:
            ids.append(vocab.id(field.value_text))
        if pos < len(sentence.fields) - 1:
            ids.append(vocab.sep)
    if final:
        ids.append(vocab.eos)
    return ids


def _is_numeric_text(text: str) -> bool:
    return bool(text) and all(ch in NUMBER_CHARS for ch in text)


def decode_to_row(tokens: list[int], vocab: Vocab, schema: Schema) -> Row:
    """Total inverse of encode: raises ParseError on any malformed sequence."""
    if not tokens or tokens[0] != vocab.bos:
        raise ParseError("sequence must start with BOS", 0)
    if tokens[-1] != vocab.eos:
        raise ParseError("sequence must end with EOS", max(0, len(tokens) - 1))
    for pos, tid in enumerate(tokens):
        if not (0 <= tid < len(vocab)):
            raise ParseError(f"token id {tid} out of vocabulary", pos)

    feat_by_name = {f.name: f for f in schema.features}
    values: dict[str, object] = {}
    label: str | None = None

    i = 1
    end = len(tokens) - 1  # exclusive of EOS
    while i < end:
        name_tok = vocab.token(tokens[i])
        if name_tok != schema.target_name and name_tok not in feat_by_name:
            raise ParseError(f"expected a field name, got {name_tok!r}", i)
        if i + 1 >= end or tokens[i + 1] != vocab.is_id:
            raise ParseError(f"field {name_tok!r} not followed by IS", i + 1)
        i += 2
        # Collect value tokens up to SEP or EOS.
        start = i
        while i < end and tokens[i] != vocab.sep:
            i += 1
        value_tokens = [vocab.token(t) for t in tokens[start:i]]
        if not value_tokens:
            raise ParseError(f"field {name_tok!r} has an empty value", start)
        if name_tok == schema.target_name:
            if label is not None:
                raise ParseError("duplicate target field", start - 2)
            if len(value_tokens) != 1 or value_tokens[0] not in schema.target_labels:
                raise ParseError("target value is not a declared label", start)
            label = value_tokens[0]
        else:
            feat = feat_by_name[name_tok]
            if name_tok in values:
                raise ParseError(f"duplicate field {name_tok!r}", start - 2)
            if feat.kind is FeatureKind.CONTINUOUS:
                text = "".join(value_tokens)
                if not _is_numeric_text(text):
                    raise ParseError(f"non-numeric value for {name_tok!r}", start)
                try:
                    values[name_tok] = float(text)
                except ValueError:
                    raise ParseError(f"unparseable number {text!r} for {name_tok!r}", start) from None
            else:
                if len(value_tokens) != 1 or value_tokens[0] not in feat.categories:
                    raise ParseError(f"bad category value for {name_tok!r}", start)
                values[name_tok] = value_tokens[0]
        if i < end:  # skip SEP
            if i + 1 == end:
                raise ParseError("trailing separator before EOS", i)
            i += 1

    if label is None:
        raise ParseError("missing target field", len(tokens) - 1)
    for feat in schema.features:
        if feat.name not in values:
            raise ParseError(f"missing field {feat.name!r}", len(tokens) - 1)
    return Row(tuple(values[f.name] for f in schema.features), label)
