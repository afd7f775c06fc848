"""Oversampling lab for imbalanced tabular classification.

A small language model is fine-tuned on serialized minority rows (optionally
augmented with interpolated rows) and sampled under a constrained decoder to
produce synthetic minority examples, which are evaluated against SMOTE-style
baselines with a from-scratch gradient-boosted tree classifier.
"""

from .data import (
    DataError, Feature, FeatureKind, ImbalanceSpec, Row, Schema, Table,
    class_counts, generate_fixture, load_csv, load_schema, make_imbalanced,
    save_csv, save_schema, split_train_test,
)
from .evaluation import (
    EvalReport, Histogram, MixedEncoder, RowBinner, auc, close_probability,
    coverage, dcr_histogram, f1_minority, run_evaluation, sample_set_entropy,
)
from .gbdt import GBDTClassifier, GBDTConfig
from .lm import (
    LMConfig, LMParams, SamplerConfig, TrainConfig, forward, init_params,
    load_checkpoint, nll_loss, sample_sequence, save_checkpoint, train,
)
from .oversample import (
    ConditionStrategy, ConstrainedDecoder, DecodeMode, FinetuneSet, LMSize,
    OversampleConfig, build_finetune_corpus, build_prompt, generate_minority,
    interpolate, rebalance, smote, smote_nc, train_oversampler,
)
from .pipeline import (
    LLM_METHODS, METHODS, entropy_comparisons, evaluate_method,
    run_ablation_grid, run_sweep,
)
from .textcodec import (
    CodecError, ParseError, Permutation, Sentence, Vocab, build_vocab,
    decode_to_row, encode, permute_sentence, row_to_sentence,
)

__version__ = "0.1.0"
