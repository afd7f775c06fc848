"""Metric suite, mixed-type encoding, entropy diagnostics, and the seeded
evaluation loop around the downstream classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .data import FeatureKind, Schema, Table
from .gbdt import GBDTClassifier, GBDTConfig
from .lm import LMConfig, LMParams, SamplerConfig, dist_entropy, next_token_dist
from .oversample import ConstrainedDecoder, rebalance
from .textcodec import Vocab


class EvalError(Exception):
    pass


class MixedEncoder:
    """Min-max scaled continuous channels (clipped to [0,1]) plus one-hot categoricals."""

    def __init__(self, schema: Schema):
        self.schema = schema
        self.lo: np.ndarray | None = None
        self.hi: np.ndarray | None = None
        self.width = len(schema.continuous_indices) + sum(
            len(schema.features[c].categories) for c in schema.categorical_indices
        )

    def fit(self, reference: Table) -> "MixedEncoder":
        if len(reference) == 0:
            raise EvalError("cannot fit encoder on an empty table")
        con = np.array([[float(r.values[c]) for c in self.schema.continuous_indices]
                        for r in reference.rows])
        if con.size:
            self.lo = con.min(axis=0)
            self.hi = con.max(axis=0)
        else:
            self.lo = np.zeros(0)
            self.hi = np.zeros(0)
        return self

    def transform(self, table: Table) -> np.ndarray:
        if self.lo is None:
            raise EvalError("encoder not fitted")
        out = np.zeros((len(table), self.width))
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        for i, row in enumerate(table.rows):
            col = 0
            for pos, c in enumerate(self.schema.continuous_indices):
                x = (float(row.values[c]) - self.lo[pos]) / span[pos]
                out[i, col] = float(np.clip(x, 0.0, 1.0))
                col += 1
            for c in self.schema.categorical_indices:
                feat = self.schema.features[c]
                out[i, col + feat.categories.index(row.values[c])] = 1.0
                col += len(feat.categories)
        return out

    def labels(self, table: Table) -> np.ndarray:
        minority = self.schema.minority_label
        return np.array([1 if r.label == minority else 0 for r in table.rows])


def fit_gbdt(train: Table, cfg: GBDTConfig, encoder: MixedEncoder) -> GBDTClassifier:
    y = encoder.labels(train)
    if y.min() == y.max():
        raise EvalError("training table has a single label")
    return GBDTClassifier(cfg).fit(encoder.transform(train), y)


def f1_minority(preds, truth, minority_label=1) -> float:
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    if preds.shape != truth.shape or preds.size == 0:
        raise EvalError("predictions and truth must be equal-length and non-empty")
    pos_pred = preds == minority_label
    pos_true = truth == minority_label
    tp = int((pos_pred & pos_true).sum())
    fp = int((pos_pred & ~pos_true).sum())
    fn = int((~pos_pred & pos_true).sum())
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def auc(scores, truth, minority_label=1) -> float:
    """Rank-based ROC AUC with the standard half-credit tie correction."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    pos = truth == minority_label
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvalError("AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1), 0.0))


def close_probability(minor_star: Table, synth: Table, alpha: float,
                      encoder: MixedEncoder) -> float:
    """Fraction of real minority rows within normalized distance alpha of a synthetic row."""
    if len(minor_star) == 0 or len(synth) == 0:
        raise EvalError("close_probability needs non-empty tables")
    real = encoder.transform(minor_star)
    fake = encoder.transform(synth)
    d = _pairwise_distances(real, fake).min(axis=1) / np.sqrt(encoder.width)
    return float((d <= alpha).mean())


def coverage(minor_star: Table, synth: Table, k: int, encoder: MixedEncoder) -> float:
    """Fraction of real rows whose k-NN-radius ball contains a synthetic row."""
    if len(minor_star) <= k:
        raise EvalError(f"coverage needs more than k={k} real rows")
    real = encoder.transform(minor_star)
    fake = encoder.transform(synth)
    rr = _pairwise_distances(real, real)
    np.fill_diagonal(rr, np.inf)
    radius = np.sort(rr, axis=1)[:, k - 1]
    nearest_fake = _pairwise_distances(real, fake).min(axis=1)
    return float((nearest_fake <= radius).mean())


@dataclass(frozen=True)
class Histogram:
    edges: tuple[float, ...]
    counts: tuple[int, ...]
    distances: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"edges": list(self.edges), "counts": list(self.counts)}


def dcr_histogram(test_minor: Table, synth: Table, encoder: MixedEncoder,
                  bins: int = 20) -> Histogram:
    """Distance-to-closest-record histogram over [0, max distance]."""
    if len(test_minor) == 0 or len(synth) == 0:
        raise EvalError("dcr_histogram needs non-empty tables")
    real = encoder.transform(test_minor)
    fake = encoder.transform(synth)
    d = _pairwise_distances(real, fake).min(axis=1)
    top = float(d.max()) if d.max() > 0 else 1e-12
    counts, edges = np.histogram(d, bins=bins, range=(0.0, top))
    return Histogram(tuple(float(e) for e in edges),
                     tuple(int(c) for c in counts),
                     tuple(float(x) for x in d))


@dataclass
class EntropyProbe:
    """Per-prompt entropy trace from one constrained generation."""
    step_entropies: list[float]
    first_field_entropy: float | None


def per_step_entropy(params: LMParams, prompts: list[tuple[list[int], str | None]],
                     scfg: SamplerConfig, schema: Schema, vocab: Vocab,
                     lm_config: LMConfig, seed: int = 0) -> list[EntropyProbe]:
    """Constrained generation that records H(p) of each masked next-token
    distribution, in nats; also the entropy at the first field-name position."""
    if not prompts:
        raise EvalError("per_step_entropy needs at least one prompt")
    probes = []
    rng = np.random.default_rng(seed)
    for prompt, seeded in prompts:
        decoder = ConstrainedDecoder(schema, vocab,
                                     emitted={seeded} if seeded else None)
        seq = list(prompt)
        entropies: list[float] = []
        first_field: float | None = None
        for _ in range(lm_config.max_len - len(prompt)):
            allowed = decoder.allowed()
            at_name = decoder.expects_name()
            if len(allowed) == 1:
                h = 0.0
                tok = allowed[0]
            else:
                probs = next_token_dist(
                    params, seq,
                    SamplerConfig(scfg.temperature, tuple(allowed)), lm_config)
                h = dist_entropy(probs)
                tok = int(rng.choice(lm_config.vocab_size, p=probs / probs.sum()))
            entropies.append(h)
            if at_name and first_field is None:
                first_field = h
            decoder.advance(tok)
            seq.append(tok)
            if tok == vocab.eos:
                break
        probes.append(EntropyProbe(entropies, first_field))
    return probes


def mean_per_step_entropy(probes: list[EntropyProbe]) -> float:
    all_steps = [h for p in probes for h in p.step_entropies]
    return float(np.mean(all_steps)) if all_steps else 0.0


def mean_first_field_entropy(probes: list[EntropyProbe]) -> float:
    vals = [p.first_field_entropy for p in probes if p.first_field_entropy is not None]
    return float(np.mean(vals)) if vals else 0.0


class RowBinner:
    """Discretizes rows into joint symbols: categories verbatim, continuous
    values in 10 equal-width bins fit on a reference table."""

    def __init__(self, schema: Schema, reference: Table, bins: int = 10):
        self.schema = schema
        self.bins = bins
        self.edges: dict[int, np.ndarray] = {}
        for c in schema.continuous_indices:
            vals = np.array([float(r.values[c]) for r in reference.rows])
            lo, hi = float(vals.min()), float(vals.max())
            if hi <= lo:
                hi = lo + 1.0
            self.edges[c] = np.linspace(lo, hi, bins + 1)

    def symbol(self, row) -> tuple:
        parts = []
        for c, (v, f) in enumerate(zip(row.values, self.schema.features)):
            if f.kind is FeatureKind.CONTINUOUS:
                edges = self.edges[c]
                b = int(np.clip(np.searchsorted(edges, float(v), side="right") - 1,
                                0, self.bins - 1))
                parts.append(b)
            else:
                parts.append(v)
        return tuple(parts)


def sample_set_entropy(samples: Table, binner: RowBinner) -> float:
    """Plug-in Shannon entropy (nats) of the discretized row distribution."""
    if len(samples) == 0:
        raise EvalError("sample_set_entropy needs a non-empty table")
    counts: dict[tuple, int] = {}
    for row in samples.rows:
        sym = binner.symbol(row)
        counts[sym] = counts.get(sym, 0) + 1
    n = len(samples)
    p = np.array(list(counts.values()), dtype=np.float64) / n
    return float(-(p * np.log(p)).sum())


@dataclass
class SeedScore:
    seed: int
    f1: float
    auc: float
    close_probability: float | None = None
    coverage: float | None = None

    def to_dict(self) -> dict:
        d = {"seed": self.seed, "f1": self.f1, "auc": self.auc}
        if self.close_probability is not None:
            d["close_probability"] = self.close_probability
        if self.coverage is not None:
            d["coverage"] = self.coverage
        return d


@dataclass
class EvalReport:
    f1: float
    auc: float
    f1_std: float
    auc_std: float
    close_probability: float | None
    coverage: float | None
    dcr: Histogram | None
    per_seed: list[SeedScore] = field(default_factory=list)

    def to_dict(self) -> dict:
        d: dict = {
            "f1": self.f1, "auc": self.auc,
            "f1_std": self.f1_std, "auc_std": self.auc_std,
            "per_seed": [s.to_dict() for s in self.per_seed],
        }
        if self.close_probability is not None:
            d["close_probability"] = self.close_probability
        if self.coverage is not None:
            d["coverage"] = self.coverage
        if self.dcr is not None:
            d["dcr"] = self.dcr.to_dict()
        return d


def run_evaluation(major: Table, minor: Table, minor_star: Table, test: Table,
                   method, seeds: list[int], gbdt: GBDTConfig,
                   alpha: float = 0.2, k: int = 2, dcr_bins: int = 20) -> EvalReport:
    """Per seed: oversample to |major|, rebalance, fit the classifier, score.

    `method(minor, need, seed)` returns a synthetic minority Table, or None for
    the no-oversampling null method. Quality metrics are computed against the
    held-aside minor_star; the DCR histogram uses the first seed's synthetic set.
    """
    if not seeds:
        raise EvalError("need at least one seed")
    schema = major.schema
    star_encoder = MixedEncoder(schema).fit(minor_star)
    test_minor_idx = [i for i, r in enumerate(test.rows) if r.label == schema.minority_label]
    test_minor = test.subset(test_minor_idx)

    scores: list[SeedScore] = []
    dcr: Histogram | None = None
    for seed in seeds:
        synth = method(minor, len(major), seed)
        if synth is None:
            train_table = rebalance(major, minor, seed=seed)
        else:
            train_table = rebalance(major, synth, seed=seed)
        clf_encoder = MixedEncoder(schema).fit(train_table)
        clf = fit_gbdt(train_table, gbdt, clf_encoder)
        Xt = clf_encoder.transform(test)
        yt = clf_encoder.labels(test)
        preds = clf.predict(Xt)
        probs = clf.predict_proba(Xt)
        score = SeedScore(seed=seed, f1=f1_minority(preds, yt), auc=auc(probs, yt))
        if synth is not None and len(synth) > 0:
            score.close_probability = close_probability(minor_star, synth, alpha, star_encoder)
            score.coverage = coverage(minor_star, synth, k, star_encoder)
            if dcr is None and len(test_minor) > 0:
                dcr = dcr_histogram(test_minor, synth, star_encoder, bins=dcr_bins)
        scores.append(score)

    f1s = np.array([s.f1 for s in scores])
    aucs = np.array([s.auc for s in scores])
    closes = [s.close_probability for s in scores if s.close_probability is not None]
    covs = [s.coverage for s in scores if s.coverage is not None]
    return EvalReport(
        f1=float(f1s.mean()), auc=float(aucs.mean()),
        f1_std=float(f1s.std()), auc_std=float(aucs.std()),
        close_probability=float(np.mean(closes)) if closes else None,
        coverage=float(np.mean(covs)) if covs else None,
        dcr=dcr, per_seed=scores,
    )
