"""Method registry and the higher-level experiment drivers used by the CLI:
single runs, the strategy ablation grid, entropy comparisons, and sweeps."""

from __future__ import annotations

import dataclasses
import itertools
import logging
from dataclasses import dataclass

import numpy as np

from . import oversample as ov
from .data import ImbalanceSpec, Table, make_imbalanced
from .evaluation import (
    EvalReport, RowBinner, mean_first_field_entropy, mean_per_step_entropy,
    per_step_entropy, run_evaluation, sample_set_entropy,
)
from .gbdt import GBDTConfig
from .lm import LMParams, SamplerConfig
from .oversample import (
    ConditionStrategy, DecodeMode, FinetuneSet, OversampleConfig, OversampleError,
    build_prompt, generate_minority, slot_rng, train_oversampler,
)
from .textcodec import Permutation, Vocab, build_vocab

logger = logging.getLogger(__name__)

LLM_METHODS = ("imbllm", "imbllm_inter", "great_equiv")
METHODS = LLM_METHODS + ("smote", "smote_nc", "imbalance_null")


def expand_method(method: str, base: OversampleConfig) -> OversampleConfig:
    """Pin the three strategy axes implied by a named method."""
    if method == "imbllm":
        return dataclasses.replace(base, condition=ConditionStrategy.CONDITION_YX,
                                   permutation=Permutation.FIX_Y,
                                   finetune=FinetuneSet.MINOR_INTERPOLATE)
    if method == "imbllm_inter":
        return dataclasses.replace(base, condition=ConditionStrategy.CONDITION_YX,
                                   permutation=Permutation.FIX_Y,
                                   finetune=FinetuneSet.MINOR_INTERPOLATE, r=0.0)
    if method == "great_equiv":
        return dataclasses.replace(base, condition=ConditionStrategy.CONDITION_Y,
                                   permutation=Permutation.PERMUTE_XY,
                                   finetune=FinetuneSet.MAJOR_MINOR)
    raise OversampleError(f"unknown LLM method {method!r}")


class LLMMethod:
    """Oversampler handle that fine-tunes a fresh model per evaluation seed."""

    def __init__(self, config: OversampleConfig, major: Table, vocab: Vocab):
        self.config = config
        self.major = major
        self.vocab = vocab
        self.trained: dict[int, LMParams] = {}

    def __call__(self, minor: Table, need: int, seed: int) -> Table:
        params = train_oversampler(self.config, self.major, minor, self.vocab, seed)
        self.trained[seed] = params
        return generate_minority(params, self.config, minor.schema, self.vocab,
                                 minor, need, master_seed=seed)


def make_method(name: str, base: OversampleConfig, major: Table, vocab: Vocab):
    if name in LLM_METHODS:
        return LLMMethod(expand_method(name, base), major, vocab)
    if name == "smote":
        return lambda minor, need, seed: ov.smote(minor, need, rng=np.random.default_rng(seed))
    if name == "smote_nc":
        return lambda minor, need, seed: ov.smote_nc(minor, need, rng=np.random.default_rng(seed))
    if name == "imbalance_null":
        return lambda minor, need, seed: None
    raise OversampleError(f"unknown method {name!r}")


def evaluate_method(name: str, major: Table, minor: Table, minor_star: Table,
                    test: Table, base: OversampleConfig, gbdt: GBDTConfig,
                    seeds: list[int]):
    """Returns (EvalReport, method handle) for a named oversampler."""
    vocab = build_vocab(major.schema)
    method = make_method(name, base, major, vocab)
    report = run_evaluation(major, minor, minor_star, test, method, seeds, gbdt)
    return report, method


GRID_AXES = (
    tuple(ConditionStrategy),
    tuple(Permutation),
    tuple(FinetuneSet),
)


def grid_cell_label(condition: ConditionStrategy, permutation: Permutation,
                    finetune: FinetuneSet) -> str:
    if (condition, permutation, finetune) == (
            ConditionStrategy.CONDITION_Y, Permutation.PERMUTE_XY, FinetuneSet.MAJOR_MINOR):
        return "great_equiv"
    if (condition, permutation, finetune) == (
            ConditionStrategy.CONDITION_YX, Permutation.FIX_Y, FinetuneSet.MINOR_INTERPOLATE):
        return "imbllm_full"
    return f"{condition.value}+{permutation.value}+{finetune.value}"


@dataclass
class GridCell:
    label: str
    condition: str
    permutation: str
    finetune: str
    f1: float | None = None
    f1_std: float | None = None
    auc: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "label": self.label, "condition": self.condition,
            "permutation": self.permutation, "finetune": self.finetune,
            "f1": self.f1, "f1_std": self.f1_std, "auc": self.auc,
            "error": self.error,
        }


def run_ablation_grid(major: Table, minor: Table, minor_star: Table, test: Table,
                      base: OversampleConfig, gbdt: GBDTConfig,
                      seeds: list[int]) -> list[GridCell]:
    """All 12 strategy combinations; per-cell failures are recorded, not raised."""
    vocab = build_vocab(major.schema)
    cells: list[GridCell] = []
    for condition, permutation, finetune in itertools.product(*GRID_AXES):
        cfg = dataclasses.replace(base, condition=condition,
                                  permutation=permutation, finetune=finetune)
        cell = GridCell(grid_cell_label(condition, permutation, finetune),
                        condition.value, permutation.value, finetune.value)
        try:
            method = LLMMethod(cfg, major, vocab)
            report = run_evaluation(major, minor, minor_star, test, method, seeds, gbdt)
            cell.f1, cell.f1_std, cell.auc = report.f1, report.f1_std, report.auc
        except Exception as exc:  # per-cell isolation is the contract here
            logger.exception("grid cell %s failed", cell.label)
            cell.error = f"{type(exc).__name__}: {exc}"
        cells.append(cell)
    return cells


def _prompts_for(condition: ConditionStrategy, schema, minor, vocab, cfg,
                 count: int, seed: int):
    return [build_prompt(condition, schema, minor, vocab,
                         slot_rng(seed, slot), cfg.sig_digits)
            for slot in range(count)]


def entropy_comparisons(major: Table, minor: Table, minor_star: Table,
                        base: OversampleConfig, seeds: list[int],
                        n_samples: int = 500, n_probe_prompts: int = 32) -> dict:
    """Empirical entropy measurements behind the three diversity claims.

    prop1: condition_y vs condition_yx prompting on one fix_y/minor-only model.
    prop2: first-field entropy, fix_y-trained vs permute_xy-trained, prompted
           with the bare minority-label condition.
    prop3: minor_only vs minor_interpolate fine-tuning.
    """
    schema = major.schema
    vocab = build_vocab(schema)
    binner = RowBinner(schema, minor_star)
    scfg = SamplerConfig(temperature=base.temperature)
    lm_config = base.lm.to_lm_config(len(vocab))

    def sample_entropy(cfg, params, condition, seed):
        gen_cfg = dataclasses.replace(cfg, condition=condition)
        synth = generate_minority(params, gen_cfg, schema, vocab, minor,
                                  n_samples, master_seed=seed)
        return sample_set_entropy(synth, binner)

    out: dict = {"prop1": {"per_seed": []}, "prop2": {"per_seed": []},
                 "prop3": {"per_seed": []}}

    for seed in seeds:
        # One fix_y, minority-only model serves prop1 and half of props 2/3.
        cfg_fix_minor = dataclasses.replace(
            base, condition=ConditionStrategy.CONDITION_YX,
            permutation=Permutation.FIX_Y, finetune=FinetuneSet.MINOR_ONLY)
        params_fix_minor = train_oversampler(cfg_fix_minor, major, minor, vocab, seed)

        h_y = sample_entropy(cfg_fix_minor, params_fix_minor,
                             ConditionStrategy.CONDITION_Y, seed)
        h_yx = sample_entropy(cfg_fix_minor, params_fix_minor,
                              ConditionStrategy.CONDITION_YX, seed)
        out["prop1"]["per_seed"].append(
            {"seed": seed, "condition_y": h_y, "condition_yx": h_yx})

        cfg_permute = dataclasses.replace(cfg_fix_minor,
                                          permutation=Permutation.PERMUTE_XY)
        params_permute = train_oversampler(cfg_permute, major, minor, vocab, seed)
        prompts = _prompts_for(ConditionStrategy.CONDITION_Y, schema, minor, vocab,
                               base, n_probe_prompts, seed)
        probes_fix = per_step_entropy(params_fix_minor, prompts, scfg, schema,
                                      vocab, lm_config, seed=seed)
        probes_permute = per_step_entropy(params_permute, prompts, scfg, schema,
                                          vocab, lm_config, seed=seed)
        out["prop2"]["per_seed"].append({
            "seed": seed,
            "fix_y_first_field": mean_first_field_entropy(probes_fix),
            "permute_xy_first_field": mean_first_field_entropy(probes_permute),
            "fix_y_per_step": mean_per_step_entropy(probes_fix),
            "permute_xy_per_step": mean_per_step_entropy(probes_permute),
        })

        cfg_interp = dataclasses.replace(cfg_fix_minor,
                                         finetune=FinetuneSet.MINOR_INTERPOLATE)
        params_interp = train_oversampler(cfg_interp, major, minor, vocab, seed)
        h_minor = sample_entropy(cfg_fix_minor, params_fix_minor,
                                 ConditionStrategy.CONDITION_YX, seed)
        h_aug = sample_entropy(cfg_interp, params_interp,
                               ConditionStrategy.CONDITION_YX, seed)
        out["prop3"]["per_seed"].append(
            {"seed": seed, "minor_only": h_minor, "minor_interpolate": h_aug})

    for key, fields in (("prop1", ("condition_y", "condition_yx")),
                        ("prop2", ("fix_y_first_field", "permute_xy_first_field")),
                        ("prop3", ("minor_only", "minor_interpolate"))):
        out[key]["mean"] = {
            f: float(np.mean([row[f] for row in out[key]["per_seed"]])) for f in fields
        }
    return out


@dataclass
class SweepPoint:
    value: float
    f1: float
    f1_std: float

    def to_dict(self) -> dict:
        return {"value": self.value, "f1": self.f1, "f1_std": self.f1_std}


def run_sweep(param: str, values: list[float], train: Table, test: Table,
              imbalance: ImbalanceSpec, base: OversampleConfig, gbdt: GBDTConfig,
              seeds: list[int]) -> list[SweepPoint]:
    """Sweep the interpolation ratio r (fixed split) or the imbalance ratio q."""
    points: list[SweepPoint] = []
    for value in values:
        if param == "r":
            if not (0.0 <= value <= 1.0):
                raise OversampleError(f"r value {value} outside [0, 1]")
            major, minor, minor_star = make_imbalanced(train, imbalance)
            cfg = dataclasses.replace(base, r=value)
        elif param == "q":
            if not (0.0 < value <= 1.0):
                raise OversampleError(f"q value {value} outside (0, 1]")
            spec = ImbalanceSpec(q=value, seed=imbalance.seed)
            major, minor, minor_star = make_imbalanced(train, spec)
            cfg = base
        else:
            raise OversampleError(f"unknown sweep parameter {param!r}")
        report, _ = evaluate_method("imbllm", major, minor, minor_star, test,
                                    cfg, gbdt, seeds)
        points.append(SweepPoint(value=value, f1=report.f1, f1_std=report.f1_std))
    return points
