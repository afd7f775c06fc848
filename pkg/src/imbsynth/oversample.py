"""Oversampling pipeline: interpolation, fine-tune corpora, prompts, constrained
generation, rebalancing, and the classical SMOTE / SMOTE-NC baselines."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from enum import Enum

import numpy as np

from . import lm as lm_mod
from .data import FeatureKind, Row, Schema, Table
from .lm import LMConfig, LMParams, SamplerConfig, TrainConfig
from .textcodec import (
    Field, ParseError, Permutation, Sentence, Vocab,
    decode_to_row, encode, format_number, permute_sentence, row_to_sentence,
)


class OversampleError(Exception):
    pass


class GenerationError(OversampleError):
    def __init__(self, accepted: int, failed: int):
        super().__init__(
            f"free-decoding generation exhausted retries: {accepted} accepted, {failed} failed"
        )
        self.accepted = accepted
        self.failed = failed


class ConditionStrategy(str, Enum):
    CONDITION_Y = "condition_y"
    CONDITION_YX = "condition_yx"


class FinetuneSet(str, Enum):
    MAJOR_MINOR = "major_minor"
    MINOR_ONLY = "minor_only"
    MINOR_INTERPOLATE = "minor_interpolate"


class DecodeMode(str, Enum):
    CONSTRAINED = "constrained"
    FREE = "free"


@dataclass(frozen=True)
class LMSize:
    """Transformer dimensions; vocab_size is supplied by the schema at run time."""
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_k: int = 16
    d_ff: int = 128
    max_len: int = 256

    def to_lm_config(self, vocab_size: int) -> LMConfig:
        return LMConfig(vocab_size=vocab_size, d_model=self.d_model,
                        n_layers=self.n_layers, n_heads=self.n_heads,
                        d_k=self.d_k, d_ff=self.d_ff, max_len=self.max_len)

    def to_dict(self) -> dict:
        return {"d_model": self.d_model, "n_layers": self.n_layers,
                "n_heads": self.n_heads, "d_k": self.d_k,
                "d_ff": self.d_ff, "max_len": self.max_len}


@dataclass(frozen=True)
class OversampleConfig:
    condition: ConditionStrategy = ConditionStrategy.CONDITION_YX
    permutation: Permutation = Permutation.FIX_Y
    finetune: FinetuneSet = FinetuneSet.MINOR_INTERPOLATE
    r: float = 1.0
    temperature: float = 0.7
    decode_mode: DecodeMode = DecodeMode.CONSTRAINED
    max_retries: int = 16
    sig_digits: int = 4
    lm: LMSize = dc_field(default_factory=LMSize)
    train: TrainConfig = dc_field(default_factory=TrainConfig)

    def __post_init__(self):
        if not (0.0 <= self.r <= 1.0):
            raise OversampleError("interpolation ratio r must be in [0, 1]")
        if self.temperature <= 0:
            raise OversampleError("temperature must be positive")
        if self.max_retries < 1:
            raise OversampleError("max_retries must be >= 1")

    def to_dict(self) -> dict:
        return {
            "condition": self.condition.value,
            "permutation": self.permutation.value,
            "finetune": self.finetune.value,
            "r": self.r,
            "temperature": self.temperature,
            "decode_mode": self.decode_mode.value,
            "max_retries": self.max_retries,
            "sig_digits": self.sig_digits,
            "lm": self.lm.to_dict(),
            "train": self.train.to_dict(),
        }

    @staticmethod
    def from_dict(obj: dict) -> "OversampleConfig":
        kwargs = dict(obj)
        if "condition" in kwargs:
            kwargs["condition"] = ConditionStrategy(kwargs["condition"])
        if "permutation" in kwargs:
            kwargs["permutation"] = Permutation(kwargs["permutation"])
        if "finetune" in kwargs:
            kwargs["finetune"] = FinetuneSet(kwargs["finetune"])
        if "decode_mode" in kwargs:
            kwargs["decode_mode"] = DecodeMode(kwargs["decode_mode"])
        if "lm" in kwargs:
            kwargs["lm"] = LMSize(**kwargs["lm"])
        if "train" in kwargs:
            kwargs["train"] = TrainConfig(**kwargs["train"])
        return OversampleConfig(**kwargs)


@dataclass(frozen=True)
class PartialRow:
    """Interpolated sample: continuous values only (schema order) plus the label."""
    con_values: tuple[float, ...]
    label: str


def interpolate(x_i: Row, x_j: Row, eps: float, schema: Schema) -> PartialRow:
    """Convex combination of the continuous parts of two minority rows."""
    if x_i.label != schema.minority_label or x_j.label != schema.minority_label:
        raise OversampleError("interpolation inputs must carry the minority label")
    if not (0.0 <= eps <= 1.0):
        raise OversampleError("eps must be in [0, 1]")
    con = tuple(
        float(x_i.values[c]) + eps * (float(x_j.values[c]) - float(x_i.values[c]))
        for c in schema.continuous_indices
    )
    return PartialRow(con, schema.minority_label)


def build_interpolation_set(minor: Table, target_count: int,
                            rng: np.random.Generator) -> list[PartialRow]:
    if target_count == 0:
        return []
    if len(minor) < 2:
        raise OversampleError("need at least 2 minority rows to interpolate")
    out = []
    n = len(minor)
    for _ in range(target_count):
        i, j = rng.choice(n, size=2, replace=False)
        eps = float(rng.uniform(0.0, 1.0))
        out.append(interpolate(minor.rows[i], minor.rows[j], eps, minor.schema))
    return out


def partial_row_to_sentence(partial: PartialRow, schema: Schema,
                            sig_digits: int = 4) -> Sentence:
    fields = [
        Field(schema.features[c].name, format_number(v, sig_digits))
        for c, v in zip(schema.continuous_indices, partial.con_values)
    ]
    fields.append(Field(schema.target_name, partial.label))
    return Sentence(tuple(fields), schema.target_name)


def build_finetune_corpus(major: Table | None, minor: Table,
                          inter: list[PartialRow], permutation: Permutation,
                          vocab: Vocab, rng: np.random.Generator,
                          sig_digits: int = 4) -> list[list[int]]:
    """Serialize, permute, and encode the fine-tuning rows; order shuffled by rng."""
    schema = minor.schema
    sentences: list[Sentence] = []
    if major is not None:
        sentences += [row_to_sentence(r, schema, True, sig_digits) for r in major.rows]
    sentences += [row_to_sentence(r, schema, True, sig_digits) for r in minor.rows]
    sentences += [partial_row_to_sentence(p, schema, sig_digits) for p in inter]
    if not sentences:
        raise OversampleError("empty fine-tune corpus")
    corpus = [encode(permute_sentence(s, permutation, rng), vocab) for s in sentences]
    order = rng.permutation(len(corpus))
    return [corpus[i] for i in order]


def build_prompt(condition: ConditionStrategy, schema: Schema, minor: Table,
                 vocab: Vocab, rng: np.random.Generator,
                 sig_digits: int = 4) -> tuple[list[int], str | None]:
    """Prompt token ids (no EOS) plus the name of the prompt-seeded feature, if any."""
    fields = [Field(schema.target_name, schema.minority_label)]
    seeded: str | None = None
    if condition is ConditionStrategy.CONDITION_YX:
        if len(minor) == 0:
            raise OversampleError("condition_yx needs a non-empty minority table")
        fi = int(rng.integers(schema.n_features))
        feat = schema.features[fi]
        donor = minor.rows[int(rng.integers(len(minor)))]
        value = donor.values[fi]
        text = (format_number(value, sig_digits)
                if feat.kind is FeatureKind.CONTINUOUS else value)
        fields.append(Field(feat.name, text))
        seeded = feat.name
    sentence = Sentence(tuple(fields), schema.target_name)
    return encode(sentence, vocab, final=False), seeded


class ConstrainedDecoder:
    """Per-step allowed-token sets that force well-formed, complete rows.

    Only well-formedness is enforced: field layout, no duplicate features, value
    tokens legal for the current feature, EOS once every feature is present.
    """

    VALUE_MAX_CHARS = 12

    _AFTER_VALUE = "after_value"
    _EXPECT_NAME = "expect_name"
    _EXPECT_IS = "expect_is"
    _VALUE = "value"

    def __init__(self, schema: Schema, vocab: Vocab, emitted: set[str] | None = None):
        self.schema = schema
        self.vocab = vocab
        self.emitted = set(emitted or ())
        self.state = self._AFTER_VALUE
        self.current: str | None = None
        self.num_text = ""
        self._by_name = {f.name: f for f in schema.features}
        self._name_ids = {f.name: vocab.id(f.name) for f in schema.features}
        self._digit_ids = [vocab.id(ch) for ch in "0123456789"]
        self._dot_id = vocab.id(".")
        self._minus_id = vocab.id("-")

    @property
    def all_emitted(self) -> bool:
        return len(self.emitted) == self.schema.n_features

    def expects_name(self) -> bool:
        return self.state == self._EXPECT_NAME

    def _terminator(self) -> int:
        return self.vocab.eos if self.all_emitted else self.vocab.sep

    def allowed(self) -> list[int]:
        if self.state == self._AFTER_VALUE:
            return [self._terminator()]
        if self.state == self._EXPECT_NAME:
            return [self._name_ids[f.name] for f in self.schema.features
                    if f.name not in self.emitted]
        if self.state == self._EXPECT_IS:
            return [self.vocab.is_id]
        feat = self._by_name[self.current]
        if feat.kind is FeatureKind.CATEGORICAL:
            return [self.vocab.id(c) for c in feat.categories]
        out: list[int] = []
        text = self.num_text
        if len(text) < self.VALUE_MAX_CHARS:
            out.extend(self._digit_ids)
            if "." not in text:
                out.append(self._dot_id)
            if text == "":
                out.append(self._minus_id)
        if any(ch.isdigit() for ch in text):
            out.append(self._terminator())
        return out

    def advance(self, token_id: int) -> None:
        tok = self.vocab.token(token_id)
        if self.state == self._AFTER_VALUE:
            # SEP moves to the next field; EOS is terminal.
            self.state = self._EXPECT_NAME if token_id == self.vocab.sep else self._AFTER_VALUE
        elif self.state == self._EXPECT_NAME:
            self.current = tok
            self.emitted.add(tok)
            self.state = self._EXPECT_IS
        elif self.state == self._EXPECT_IS:
            feat = self._by_name[self.current]
            self.num_text = ""
            self.state = self._VALUE
        else:
            feat = self._by_name[self.current]
            if feat.kind is FeatureKind.CATEGORICAL:
                self.state = self._AFTER_VALUE
            elif token_id in (self.vocab.sep, self.vocab.eos):
                self.state = self._EXPECT_NAME if token_id == self.vocab.sep else self._AFTER_VALUE
            else:
                self.num_text += tok

    def mask_fn(self, prompt_len: int):
        """Adapter for lm.sample_sequence: consumes newly appended tokens, then
        reports the allowed set for the next step."""
        consumed = [prompt_len]

        def fn(seq: list[int]) -> list[int]:
            for tid in seq[consumed[0]:]:
                self.advance(tid)
            consumed[0] = len(seq)
            return self.allowed()

        return fn


def slot_rng(master_seed: int, slot: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((master_seed, slot)))


def generate_minority(params: LMParams, config: OversampleConfig, schema: Schema,
                      vocab: Vocab, minor: Table, need: int,
                      master_seed: int) -> Table:
    """Generate exactly `need` parseable minority rows from the fine-tuned model.

    Each sample slot owns an rng stream keyed by (master_seed, slot), so the
    output is independent of scheduling order.
    """
    lm_config = config.lm.to_lm_config(len(vocab))
    scfg = SamplerConfig(temperature=config.temperature)
    rows: list[Row] = []
    failed_total = 0
    for slot in range(need):
        rng = slot_rng(master_seed, slot)
        prompt, seeded = build_prompt(config.condition, schema, minor, vocab, rng,
                                      config.sig_digits)
        max_steps = lm_config.max_len - len(prompt)
        if config.decode_mode is DecodeMode.CONSTRAINED:
            decoder = ConstrainedDecoder(schema, vocab,
                                         emitted={seeded} if seeded else None)
            result = lm_mod.sample_sequence(
                params, prompt, scfg, decoder.mask_fn(len(prompt)), rng,
                max_steps, lm_config, vocab.eos)
            rows.append(decode_to_row(result.tokens, vocab, schema))
        else:
            for attempt in range(config.max_retries):
                result = lm_mod.sample_sequence(
                    params, prompt, scfg, None, rng, max_steps, lm_config, vocab.eos)
                try:
                    row = decode_to_row(result.tokens, vocab, schema)
                except ParseError:
                    failed_total += 1
                    continue
                if row.label != schema.minority_label:
                    failed_total += 1
                    continue
                rows.append(row)
                break
            else:
                raise GenerationError(accepted=len(rows), failed=failed_total)
    return Table(schema, tuple(rows))


def _ordinal_matrix(table: Table) -> np.ndarray:
    """Ordinal-encode categoricals by declared index; the lossy plain-SMOTE path."""
    schema = table.schema
    X = np.empty((len(table), schema.n_features))
    for i, row in enumerate(table.rows):
        for j, (v, f) in enumerate(zip(row.values, schema.features)):
            X[i, j] = float(v) if f.kind is FeatureKind.CONTINUOUS else f.categories.index(v)
    return X


def _knn_indices(dist_row: np.ndarray, self_index: int, k: int) -> np.ndarray:
    d = dist_row.copy()
    d[self_index] = np.inf
    order = np.argsort(d, kind="stable")
    return order[:k]


def smote(minor: Table, need: int, k: int = 5,
          rng: np.random.Generator | None = None) -> Table:
    """Plain SMOTE on ordinal-encoded features (categoricals rounded back)."""
    if len(minor) < 2:
        raise OversampleError("SMOTE needs at least 2 minority rows")
    rng = rng if rng is not None else np.random.default_rng(0)
    schema = minor.schema
    k = min(k, len(minor) - 1)
    X = _ordinal_matrix(minor)
    dists = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=-1))
    rows: list[Row] = []
    for _ in range(need):
        i = int(rng.integers(len(minor)))
        nn = _knn_indices(dists[i], i, k)
        j = int(nn[int(rng.integers(k))])
        gap = float(rng.uniform(0.0, 1.0))
        point = X[i] + gap * (X[j] - X[i])
        values = []
        for col, f in enumerate(schema.features):
            if f.kind is FeatureKind.CONTINUOUS:
                values.append(float(point[col]))
            else:
                idx = int(np.clip(round(point[col]), 0, len(f.categories) - 1))
                values.append(f.categories[idx])
        rows.append(Row(tuple(values), schema.minority_label))
    return Table(schema, tuple(rows))


def smote_nc(minor: Table, need: int, k: int = 5,
             rng: np.random.Generator | None = None) -> Table:
    """SMOTE-NC: interpolate continuous parts, vote categoricals among neighbors."""
    if len(minor) < 2:
        raise OversampleError("SMOTE-NC needs at least 2 minority rows")
    schema = minor.schema
    con_idx = schema.continuous_indices
    cat_idx = schema.categorical_indices
    if not con_idx:
        raise OversampleError("SMOTE-NC needs at least one continuous feature")
    rng = rng if rng is not None else np.random.default_rng(0)
    k = min(k, len(minor) - 1)

    con = np.array([[float(r.values[c]) for c in con_idx] for r in minor.rows])
    mu = con.mean(axis=0)
    sd = con.std(axis=0)
    sd[sd == 0] = 1.0
    conz = (con - mu) / sd
    med = float(np.median(conz.std(axis=0)))  # SMOTE-NC categorical penalty

    n = len(minor)
    d2 = ((conz[:, None, :] - conz[None, :, :]) ** 2).sum(axis=-1)
    for c in cat_idx:
        vals = np.array([minor.rows[i].values[c] for i in range(n)], dtype=object)
        mismatch = vals[:, None] != vals[None, :]
        d2 = d2 + mismatch * med ** 2
    dists = np.sqrt(d2)

    rows: list[Row] = []
    for _ in range(need):
        i = int(rng.integers(n))
        nn = _knn_indices(dists[i], i, k)
        j = int(nn[int(rng.integers(k))])
        gap = float(rng.uniform(0.0, 1.0))
        new_con = con[i] + gap * (con[j] - con[i])
        values: list = [None] * schema.n_features
        for pos, c in enumerate(con_idx):
            values[c] = float(new_con[pos])
        for c in cat_idx:
            feat = schema.features[c]
            votes = {cat: 0 for cat in feat.categories}
            for nb in nn:
                votes[minor.rows[int(nb)].values[c]] += 1
            best = max(feat.categories, key=lambda cat: (votes[cat], -feat.categories.index(cat)))
            values[c] = best
        rows.append(Row(tuple(values), schema.minority_label))
    return Table(schema, tuple(rows))


def rebalance(major: Table, synthetic_minor: Table, seed: int = 0) -> Table:
    """Concatenate and shuffle deterministically."""
    if major.schema != synthetic_minor.schema:
        raise OversampleError("schema mismatch between major and synthetic tables")
    rows = list(major.rows) + list(synthetic_minor.rows)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(rows))
    return Table(major.schema, tuple(rows[i] for i in order))


def finetune_corpus_for(config: OversampleConfig, major: Table, minor: Table,
                        vocab: Vocab, rng: np.random.Generator) -> list[list[int]]:
    """Assemble the corpus dictated by the fine-tune strategy axis."""
    if config.finetune is FinetuneSet.MAJOR_MINOR:
        return build_finetune_corpus(major, minor, [], config.permutation, vocab,
                                     rng, config.sig_digits)
    inter: list[PartialRow] = []
    if config.finetune is FinetuneSet.MINOR_INTERPOLATE:
        target = int(round(config.r * len(major)))
        inter = build_interpolation_set(minor, target, rng)
    return build_finetune_corpus(None, minor, inter, config.permutation, vocab,
                                 rng, config.sig_digits)


def train_oversampler(config: OversampleConfig, major: Table, minor: Table,
                      vocab: Vocab, seed: int) -> LMParams:
    """Fine-tune a fresh model per the strategy axes; deterministic under seed."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0)))
    corpus = finetune_corpus_for(config, major, minor, vocab, rng)
    lm_config = config.lm.to_lm_config(len(vocab))
    longest = max(len(s) for s in corpus)
    if longest > lm_config.max_len:
        raise OversampleError(
            f"corpus sequence length {longest} exceeds max_len {lm_config.max_len}")
    params = lm_mod.init_params(lm_config, seed=seed)
    tcfg = TrainConfig(batch_size=config.train.batch_size, epochs=config.train.epochs,
                       learning_rate=config.train.learning_rate, seed=seed,
                       grad_clip=config.train.grad_clip)
    return lm_mod.train(params, corpus, tcfg, lm_config)
