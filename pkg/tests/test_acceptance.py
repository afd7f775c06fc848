"""End-to-end acceptance gate on the deterministic CI fixture.

Each test prints a single PASS/FAIL line (uncaptured) and then asserts.
Shared models are trained once per session; the whole module stays well
under the CPU budget of the directional criteria.
"""

import dataclasses
import json

import numpy as np
import pytest

from imbsynth.cli import main
from imbsynth.data import (
    ImbalanceSpec, generate_fixture, make_imbalanced, split_train_test,
)
from imbsynth.evaluation import (
    MixedEncoder, RowBinner, auc, close_probability, coverage, dcr_histogram,
    f1_minority, fit_gbdt, mean_first_field_entropy, per_step_entropy,
    run_evaluation, sample_set_entropy,
)
from imbsynth.gbdt import GBDTConfig
from imbsynth.lm import (
    SamplerConfig, TrainConfig, forward, init_params, loss_and_grad, nll_loss,
    train,
)
from imbsynth.oversample import (
    ConditionStrategy, FinetuneSet, LMSize, OversampleConfig,
    generate_minority, rebalance, smote, smote_nc, train_oversampler,
)
from imbsynth.pipeline import _prompts_for
from imbsynth.textcodec import (
    Permutation, build_vocab, decode_to_row, encode, permute_sentence,
    row_to_sentence,
)
from test_evaluation import (
    _brute_auc, _brute_close, _brute_coverage, _brute_dcr, _con_schema, _table,
)

SEEDS = (0, 1, 2)
ACC_LM = LMSize(d_model=32, n_layers=1, n_heads=2, d_k=16, d_ff=64, max_len=160)
BASE = OversampleConfig(lm=ACC_LM)

# Minority-only corpora are tiny (20 sentences), so they get many epochs;
# the interpolation-augmented corpora (420 sentences) get proportionally fewer.
MINOR_TRAIN = TrainConfig(batch_size=8, epochs=150, learning_rate=2e-3, seed=0)
R_TRAIN = TrainConfig(batch_size=32, epochs=12, learning_rate=2e-3, seed=0)


def _report(capsys, num, ok, desc):
    with capsys.disabled():
        print(f"\nACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} - {desc}")
    assert ok, f"acceptance criterion {num} failed: {desc}"


@pytest.fixture(scope="session")
def acc_data():
    """400 majority / 100 minority-star / q=0.2 => 20 minority, 4 con + 2 cat."""
    table = generate_fixture(500, 125, 4, 2, seed=11)
    train_t, test_t = split_train_test(table, 0.2, seed=0)
    major, minor, minor_star = make_imbalanced(train_t, ImbalanceSpec(0.2, 0))
    assert (len(major), len(minor), len(minor_star)) == (400, 20, 100)
    return major, minor, minor_star, test_t


@pytest.fixture(scope="session")
def acc_vocab(acc_data):
    return build_vocab(acc_data[0].schema)


@pytest.fixture(scope="session")
def minor_models(acc_data, acc_vocab):
    """Per seed: minority-only models trained under fix_y and permute_xy."""
    major, minor, _, _ = acc_data
    cfg_fix = dataclasses.replace(BASE, permutation=Permutation.FIX_Y,
                                  finetune=FinetuneSet.MINOR_ONLY,
                                  train=MINOR_TRAIN)
    cfg_perm = dataclasses.replace(cfg_fix, permutation=Permutation.PERMUTE_XY)
    return {
        seed: (train_oversampler(cfg_fix, major, minor, acc_vocab, seed),
               train_oversampler(cfg_perm, major, minor, acc_vocab, seed))
        for seed in SEEDS
    }


@pytest.fixture(scope="session")
def r_eval(acc_data, acc_vocab):
    """Per seed and r in {0, 1}: sample-set entropy, coverage, downstream F1."""
    major, minor, minor_star, test_t = acc_data
    schema = major.schema
    binner = RowBinner(schema, minor_star)
    star_enc = MixedEncoder(schema).fit(minor_star)
    out = {}
    for r in (0.0, 1.0):
        cfg = dataclasses.replace(BASE, finetune=FinetuneSet.MINOR_INTERPOLATE,
                                  r=r, train=R_TRAIN)
        for seed in SEEDS:
            params = train_oversampler(cfg, major, minor, acc_vocab, seed)
            synth = generate_minority(params, cfg, schema, acc_vocab, minor,
                                      len(major), master_seed=seed)
            train_tab = rebalance(major, synth, seed=seed)
            enc = MixedEncoder(schema).fit(train_tab)
            clf = fit_gbdt(train_tab, GBDTConfig(), enc)
            f1 = f1_minority(clf.predict(enc.transform(test_t)),
                             enc.labels(test_t))
            out[(r, seed)] = {
                "entropy": sample_set_entropy(synth, binner),
                "coverage": coverage(minor_star, synth, 2, star_enc),
                "f1": f1,
            }
    return out


def test_criterion_1_codec_round_trip(acc_data, acc_vocab, capsys):
    major, minor, minor_star, test_t = acc_data
    schema = major.schema
    pool = major.rows + minor_star.rows + test_t.rows
    rng = np.random.default_rng(101)
    exact = 0
    n = 1000
    for i in range(n):
        row = pool[int(rng.integers(len(pool)))]
        strategy = Permutation.FIX_Y if i % 2 else Permutation.PERMUTE_XY
        s = permute_sentence(row_to_sentence(row, schema), strategy, rng)
        if decode_to_row(encode(s, acc_vocab), acc_vocab, schema) == row:
            exact += 1
    _report(capsys, 1, exact == n,
            f"codec round-trip exact on {exact}/{n} permuted fixture rows")


def test_criterion_2_causality(acc_vocab, capsys):
    config = ACC_LM.to_lm_config(len(acc_vocab))
    params = init_params(config, seed=0)
    rng = np.random.default_rng(202)
    tokens = rng.integers(0, config.vocab_size, size=60).tolist()
    base = forward(params, tokens, config)
    clean = 0
    for _ in range(100):
        pos = int(rng.integers(1, len(tokens)))
        mutated = list(tokens)
        mutated[pos] = int((mutated[pos] + 1 + rng.integers(config.vocab_size - 1))
                           % config.vocab_size)
        out = forward(params, mutated, config)
        if out[:pos].tobytes() == base[:pos].tobytes():
            clean += 1
    _report(capsys, 2, clean == 100,
            f"{clean}/100 future-token perturbations left past logits bit-identical")


def test_criterion_3_gradient_check(capsys):
    from imbsynth.lm import LMConfig
    config = LMConfig(vocab_size=11, d_model=8, n_layers=1, n_heads=2, d_k=4,
                      d_ff=16, max_len=32)
    params = init_params(config, seed=1).astype(np.float64)
    rng = np.random.default_rng(303)
    batch = [rng.integers(0, 11, size=9).tolist(),
             rng.integers(0, 11, size=6).tolist()]
    _, grads = loss_and_grad(params, batch, config)
    h = 1e-5
    names = list(params.tensors)
    worst = 0.0
    for _ in range(20):
        name = names[int(rng.integers(len(names)))]
        idx = np.unravel_index(int(rng.integers(params[name].size)),
                               params[name].shape)
        orig = params[name][idx]
        params.tensors[name][idx] = orig + h
        up = nll_loss(params, batch, config)
        params.tensors[name][idx] = orig - h
        down = nll_loss(params, batch, config)
        params.tensors[name][idx] = orig
        numeric = (up - down) / (2 * h)
        analytic = grads[name][idx]
        rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, rel)
    _report(capsys, 3, worst < 1e-3,
            f"analytic vs finite-difference gradients, worst rel err {worst:.2e}")


def test_criterion_4_overfit_oracle(acc_data, acc_vocab, capsys):
    major, minor, _, _ = acc_data
    schema = major.schema
    config = ACC_LM.to_lm_config(len(acc_vocab))
    corpus = [encode(row_to_sentence(r, schema), acc_vocab)
              for r in minor.rows[:2]]
    params = init_params(config, seed=0)
    initial = nll_loss(params, corpus, config)
    fitted = train(params, corpus,
                   TrainConfig(batch_size=2, epochs=200, learning_rate=1e-2,
                               seed=0), config)
    final = nll_loss(fitted, corpus, config)
    _report(capsys, 4, final < 0.1 * initial,
            f"2-sentence overfit NLL {initial:.3f} -> {final:.4f} "
            f"({final / initial:.1%} of initial)")


def test_criterion_5_constrained_validity(acc_data, acc_vocab, capsys):
    major, minor, _, _ = acc_data
    schema = major.schema
    params = init_params(ACC_LM.to_lm_config(len(acc_vocab)), seed=42)
    synth = generate_minority(params, BASE, schema, acc_vocab, minor, 1000,
                              master_seed=0)
    minority = sum(1 for r in synth.rows if r.label == schema.minority_label)
    ok = len(synth) == 1000 and minority == 1000
    _report(capsys, 5, ok,
            f"{len(synth)}/1000 untrained constrained samples parsed, "
            f"{minority} with the minority label")


def test_criterion_6_metric_oracles(capsys):
    rng = np.random.default_rng(606)
    trials = 0
    mismatches = 0
    for _ in range(60):
        m = int(rng.integers(1, 4))
        schema = _con_schema(m)
        n_real = int(rng.integers(4, 21))
        n_fake = int(rng.integers(1, 21))
        real = np.round(rng.uniform(size=(n_real, m)), 3)
        real[0], real[1] = 0.0, 1.0
        fake = np.round(rng.uniform(size=(n_fake, m)), 3)
        rt, ft = _table(schema, real), _table(schema, fake)
        enc = MixedEncoder(schema).fit(rt)
        alpha = float(rng.uniform(0.05, 0.8))
        k = int(rng.integers(1, 4))
        hist = dcr_histogram(rt, ft, enc, bins=5)
        scores = np.round(rng.uniform(size=n_real), 1)
        truth = (np.arange(n_real) < n_real // 2).astype(int)
        checks = [
            abs(close_probability(rt, ft, alpha, enc)
                - _brute_close(real, fake, alpha, m)) < 1e-12,
            abs(coverage(rt, ft, k, enc) - _brute_coverage(real, fake, k)) < 1e-12,
            np.allclose(hist.distances, _brute_dcr(real, fake), atol=1e-12),
            abs(auc(scores, truth) - _brute_auc(scores, truth)) < 1e-12,
        ]
        trials += 1
        if not all(checks):
            mismatches += 1
    _report(capsys, 6, trials >= 50 and mismatches == 0,
            f"close/coverage/DCR/AUC exact vs brute force on {trials} instances, "
            f"{mismatches} mismatches")


def test_criterion_7_condition_entropy(acc_data, acc_vocab, minor_models, capsys):
    major, minor, minor_star, _ = acc_data
    schema = major.schema
    binner = RowBinner(schema, minor_star)
    cfg = dataclasses.replace(BASE, finetune=FinetuneSet.MINOR_ONLY,
                              train=MINOR_TRAIN)
    wins = 0
    h_y_all, h_yx_all = [], []
    for seed in SEEDS:
        params = minor_models[seed][0]
        h = {}
        for cond in ConditionStrategy:
            gen_cfg = dataclasses.replace(cfg, condition=cond)
            synth = generate_minority(params, gen_cfg, schema, acc_vocab,
                                      minor, 500, master_seed=seed)
            h[cond] = sample_set_entropy(synth, binner)
        h_y_all.append(h[ConditionStrategy.CONDITION_Y])
        h_yx_all.append(h[ConditionStrategy.CONDITION_YX])
        if h[ConditionStrategy.CONDITION_YX] >= h[ConditionStrategy.CONDITION_Y]:
            wins += 1
    mean_y, mean_yx = float(np.mean(h_y_all)), float(np.mean(h_yx_all))
    ok = wins >= 2 and mean_yx > mean_y
    _report(capsys, 7, ok,
            f"sample-set entropy condition_yx >= condition_y in {wins}/3 seeds, "
            f"means {mean_yx:.3f} vs {mean_y:.3f}")


def test_criterion_8_first_field_entropy(acc_data, acc_vocab, minor_models,
                                         capsys):
    major, minor, _, _ = acc_data
    schema = major.schema
    scfg = SamplerConfig(temperature=BASE.temperature)
    lm_config = ACC_LM.to_lm_config(len(acc_vocab))
    wins = 0
    fix_all, perm_all = [], []
    for seed in SEEDS:
        p_fix, p_perm = minor_models[seed]
        prompts = _prompts_for(ConditionStrategy.CONDITION_Y, schema, minor,
                               acc_vocab, BASE, 32, seed)
        h_fix = mean_first_field_entropy(per_step_entropy(
            p_fix, prompts, scfg, schema, acc_vocab, lm_config, seed=seed))
        h_perm = mean_first_field_entropy(per_step_entropy(
            p_perm, prompts, scfg, schema, acc_vocab, lm_config, seed=seed))
        fix_all.append(h_fix)
        perm_all.append(h_perm)
        if h_fix > h_perm:
            wins += 1
    mean_fix, mean_perm = float(np.mean(fix_all)), float(np.mean(perm_all))
    ok = wins >= 2 and mean_fix > mean_perm
    _report(capsys, 8, ok,
            f"first-field entropy fix_y > permute_xy in {wins}/3 seeds, "
            f"means {mean_fix:.3f} vs {mean_perm:.3f}")


def test_criterion_9_interpolation_trend(r_eval, capsys):
    h_wins = sum(r_eval[(1.0, s)]["entropy"] >= r_eval[(0.0, s)]["entropy"]
                 for s in SEEDS)
    c_wins = sum(r_eval[(1.0, s)]["coverage"] >= r_eval[(0.0, s)]["coverage"]
                 for s in SEEDS)
    f_wins = sum(r_eval[(1.0, s)]["f1"] >= r_eval[(0.0, s)]["f1"]
                 for s in SEEDS)
    ok = h_wins >= 2 and c_wins >= 2 and f_wins >= 2
    _report(capsys, 9, ok,
            f"r=1 vs r=0 wins: entropy {h_wins}/3, coverage {c_wins}/3, "
            f"F1 {f_wins}/3")


def test_criterion_10_downstream_ordering(acc_data, r_eval, capsys):
    major, minor, minor_star, test_t = acc_data
    gbdt = GBDTConfig()
    f1_full = float(np.mean([r_eval[(1.0, s)]["f1"] for s in SEEDS]))
    null = run_evaluation(major, minor, minor_star, test_t,
                          lambda m, need, s: None, list(SEEDS), gbdt)
    reports_ok = True
    for method in (smote, smote_nc):
        rep = run_evaluation(
            major, minor, minor_star, test_t,
            lambda m, need, s, fn=method: fn(m, need, rng=np.random.default_rng(s)),
            list(SEEDS), gbdt)
        d = rep.to_dict()
        reports_ok &= all(np.isfinite(d[k]) for k in
                          ("f1", "auc", "close_probability", "coverage"))
        reports_ok &= len(d["per_seed"]) == 3 and sum(d["dcr"]["counts"]) > 0
    ok = f1_full > null.f1 and reports_ok
    _report(capsys, 10, ok,
            f"mean F1 imbllm_full {f1_full:.3f} > imbalance_null {null.f1:.3f}; "
            f"smote/smote_nc reports valid: {reports_ok}")


@pytest.fixture(scope="session")
def cli_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("acc_cli")
    assert main(["fixture", "--out", str(out), "--major", "60", "--minor", "30",
                 "--con", "2", "--cat", "1", "--seed", "13"]) == 0
    cfg = {
        "oversample": {
            "lm": {"d_model": 16, "n_layers": 1, "n_heads": 2, "d_k": 8,
                   "d_ff": 32, "max_len": 128},
            "train": {"batch_size": 16, "epochs": 2, "learning_rate": 1e-3,
                      "seed": 0},
        },
        "gbdt": {"n_rounds": 10},
    }
    (out / "micro.json").write_text(json.dumps(cfg))
    return out


def test_criterion_11_ablation_grid(cli_dir, tmp_path, capsys):
    common = ["--data", str(cli_dir / "fixture.csv"),
              "--schema", str(cli_dir / "schema.json"),
              "--config", str(cli_dir / "micro.json"), "--seeds", "0"]
    grid_out = tmp_path / "grid"
    code = main(["ablate", *common, "--out", str(grid_out)])
    grid = json.loads((grid_out / "grid.json").read_text())
    errors = [c["label"] for c in grid if c["error"]]
    ge = [c for c in grid if (c["condition"], c["permutation"], c["finetune"])
          == ("condition_y", "permute_xy", "major_minor")]

    run_out = tmp_path / "ge"
    main(["run", *common, "--out", str(run_out), "--method", "great_equiv"])
    report = json.loads((run_out / "report.json").read_text())
    agrees = (len(ge) == 1 and ge[0]["label"] == "great_equiv"
              and ge[0]["f1"] == report["f1"] and ge[0]["auc"] == report["auc"])

    ok = code == 0 and len(grid) == 12 and not errors and agrees
    _report(capsys, 11, ok,
            f"ablation grid: {len(grid)} rows, errors={errors or 'none'}, "
            f"great_equiv row matches standalone run: {agrees}")


def test_criterion_12_run_determinism(cli_dir, tmp_path, capsys):
    common = ["--data", str(cli_dir / "fixture.csv"),
              "--schema", str(cli_dir / "schema.json"),
              "--config", str(cli_dir / "micro.json"),
              "--seeds", "0,1", "--method", "imbllm"]
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["run", *common, "--out", str(out1)]) == 0
    assert main(["run", *common, "--out", str(out2)]) == 0
    same = (out1 / "report.json").read_bytes() == \
        (out2 / "report.json").read_bytes()
    _report(capsys, 12, same,
            "repeated run with identical config/seeds is byte-identical: "
            f"{same}")
