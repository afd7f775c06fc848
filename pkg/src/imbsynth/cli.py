"""Command-line entry point: fixture, run, ablate, entropy, sweep."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import report as figs
from .data import (
    ImbalanceSpec, Schema, Table, generate_fixture, load_csv, load_schema,
    make_imbalanced, save_csv, save_schema, split_train_test,
)
from .gbdt import GBDTConfig
from .lm import save_checkpoint
from .oversample import OversampleConfig, finetune_corpus_for
from .pipeline import (
    LLM_METHODS, METHODS, entropy_comparisons, evaluate_method, expand_method,
    run_ablation_grid, run_sweep,
)
from .textcodec import build_vocab

logger = logging.getLogger(__name__)


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _setup_run_log(out: Path) -> None:
    handler = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    root = logging.getLogger("imbsynth")
    root.setLevel(logging.INFO)
    root.addHandler(handler)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _effective(cfg: dict, args, keys: list[str]) -> dict:
    """Config-file values overridden by explicitly passed CLI flags."""
    out = dict(cfg)
    for key in keys:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def _parse_seeds(value) -> list[int]:
    if value is None:
        return [0, 1, 2]
    if isinstance(value, list):
        return [int(v) for v in value]
    return [int(tok) for tok in str(value).split(",") if tok.strip() != ""]


def _prepare_tables(eff: dict):
    schema = load_schema(eff["schema"])
    table = load_csv(eff["data"], schema)
    test_fraction = float(eff.get("test_fraction", 0.2))
    split_seed = int(eff.get("split_seed", 0))
    train, test = split_train_test(table, test_fraction, split_seed)
    imb = eff.get("imbalance", {})
    spec = ImbalanceSpec(q=float(imb.get("q", 0.2)), seed=int(imb.get("seed", 0)))
    return schema, train, test, spec


def _build_configs(eff: dict):
    ocfg = OversampleConfig.from_dict(eff.get("oversample", {}))
    gbdt = GBDTConfig(**eff.get("gbdt", {}))
    seeds = _parse_seeds(eff.get("seeds"))
    if not seeds:
        raise ValueError("seeds list must be non-empty")
    return ocfg, gbdt, seeds


def _echo(eff: dict, out: Path) -> None:
    _write_json(eff, out / "config.echo.json")


def _fail(out: Path, exc: Exception) -> int:
    (out / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
    print(f"error: {exc}", file=sys.stderr)
    return 1


def cmd_fixture(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = generate_fixture(args.major, args.minor, args.con, args.cat, args.seed)
    save_csv(table, out / "fixture.csv")
    save_schema(table.schema, out / "schema.json")
    print(f"wrote {out / 'fixture.csv'} ({len(table)} rows) and {out / 'schema.json'}")
    return 0


def _dump_sentences(eff: dict, schema: Schema, major: Table, minor: Table,
                    ocfg: OversampleConfig, seed: int) -> None:
    from .textcodec import decode_to_row  # local import keeps startup light

    vocab = build_vocab(schema)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0)))
    corpus = finetune_corpus_for(ocfg, major, minor, vocab, rng)
    for seq in corpus:
        words = []
        i = 1
        while i < len(seq) - 1:
            name = vocab.token(seq[i])
            i += 2  # skip IS
            val = []
            while i < len(seq) - 1 and vocab.token(seq[i]) != "<sep>":
                val.append(vocab.token(seq[i]))
                i += 1
            words.append(f"{name} is {''.join(val)}")
            if i < len(seq) - 1:
                i += 1
        print(", ".join(words))


def cmd_run(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg = _load_config_file(args.config)
        eff = _effective(cfg, args, ["data", "schema", "method", "seeds",
                                     "test_fraction", "split_seed"])
        if args.q is not None:
            eff.setdefault("imbalance", {})
            eff["imbalance"]["q"] = args.q
        eff["seeds"] = _parse_seeds(eff.get("seeds"))
        method = eff.get("method", "imbllm")
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
        _setup_run_log(out)

        schema, train, test, spec = _prepare_tables(eff)
        ocfg, gbdt, seeds = _build_configs(eff)
        major, minor, minor_star = make_imbalanced(train, spec)
        logger.info("method=%s |major|=%d |minor|=%d |minor*|=%d |test|=%d",
                    method, len(major), len(minor), len(minor_star), len(test))

        if args.dump_sentences and method in LLM_METHODS:
            _dump_sentences(eff, schema, major, minor,
                            expand_method(method, ocfg), seeds[0])

        report, handle = evaluate_method(method, major, minor, minor_star, test,
                                         ocfg, gbdt, seeds)

        eff_full = dict(eff)
        eff_full["imbalance"] = {"q": spec.q, "seed": spec.seed}
        eff_full["oversample"] = (expand_method(method, ocfg).to_dict()
                                  if method in LLM_METHODS else ocfg.to_dict())
        eff_full["gbdt"] = gbdt.to_dict()
        eff_full["method"] = method
        eff_full.setdefault("test_fraction", 0.2)
        eff_full.setdefault("split_seed", 0)
        _echo(eff_full, out)

        _write_json(report.to_dict(), out / "report.json")
        if report.dcr is not None:
            with open(out / "dcr.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["dcr"])
                for d in report.dcr.distances:
                    writer.writerow([repr(d)])
            figs.render_dcr(report.dcr, out / "dcr.png", title=f"DCR ({method})")
        if hasattr(handle, "trained") and handle.trained:
            first = seeds[0]
            lm_config = handle.config.lm.to_lm_config(len(build_vocab(schema)))
            save_checkpoint(handle.trained[first], lm_config, out / "checkpoint.imblm")
        print(f"{method}: mean F1 {report.f1:.4f} (±{report.f1_std:.4f}), "
              f"mean AUC {report.auc:.4f} (±{report.auc_std:.4f})")
        return 0
    except Exception as exc:
        logger.exception("run failed")
        return _fail(out, exc)


def cmd_ablate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg = _load_config_file(args.config)
        eff = _effective(cfg, args, ["data", "schema", "seeds",
                                     "test_fraction", "split_seed"])
        eff["seeds"] = _parse_seeds(eff.get("seeds"))
        _setup_run_log(out)
        schema, train, test, spec = _prepare_tables(eff)
        ocfg, gbdt, seeds = _build_configs(eff)
        major, minor, minor_star = make_imbalanced(train, spec)

        cells = run_ablation_grid(major, minor, minor_star, test, ocfg, gbdt, seeds)

        eff["imbalance"] = {"q": spec.q, "seed": spec.seed}
        eff["oversample"] = ocfg.to_dict()
        eff["gbdt"] = gbdt.to_dict()
        _echo(eff, out)
        _write_json([c.to_dict() for c in cells], out / "grid.json")
        with open(out / "grid.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "condition", "permutation", "finetune",
                             "f1", "f1_std", "auc", "error"])
            for c in cells:
                writer.writerow([c.label, c.condition, c.permutation, c.finetune,
                                 "" if c.f1 is None else repr(c.f1),
                                 "" if c.f1_std is None else repr(c.f1_std),
                                 "" if c.auc is None else repr(c.auc),
                                 c.error or ""])
        figs.render_grid(cells, out / "grid.png")
        failures = [c for c in cells if c.error]
        for c in cells:
            score = "failed" if c.error else f"F1 {c.f1:.4f}"
            print(f"{c.label}: {score}")
        return 1 if failures else 0
    except Exception as exc:
        logger.exception("ablate failed")
        return _fail(out, exc)


def cmd_entropy(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg = _load_config_file(args.config)
        eff = _effective(cfg, args, ["data", "schema", "seeds",
                                     "test_fraction", "split_seed"])
        eff["seeds"] = _parse_seeds(eff.get("seeds"))
        _setup_run_log(out)
        schema, train, test, spec = _prepare_tables(eff)
        ocfg, gbdt, seeds = _build_configs(eff)
        major, minor, minor_star = make_imbalanced(train, spec)

        blocks = entropy_comparisons(major, minor, minor_star, ocfg, seeds,
                                     n_samples=args.samples,
                                     n_probe_prompts=args.probe_prompts)
        eff["imbalance"] = {"q": spec.q, "seed": spec.seed}
        eff["oversample"] = ocfg.to_dict()
        _echo(eff, out)
        _write_json(blocks, out / "entropy.json")
        figs.render_entropy(blocks, out / "entropy.png")
        for key in ("prop1", "prop2", "prop3"):
            print(f"{key}: {blocks[key]['mean']}")
        return 0
    except Exception as exc:
        logger.exception("entropy failed")
        return _fail(out, exc)


def cmd_sweep(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg = _load_config_file(args.config)
        eff = _effective(cfg, args, ["data", "schema", "seeds",
                                     "test_fraction", "split_seed"])
        eff["seeds"] = _parse_seeds(eff.get("seeds"))
        _setup_run_log(out)
        schema, train, test, spec = _prepare_tables(eff)
        ocfg, gbdt, seeds = _build_configs(eff)
        values = [float(tok) for tok in str(args.values).split(",") if tok.strip()]
        if not values:
            raise ValueError("sweep needs at least one value")

        points = run_sweep(args.param, values, train, test, spec, ocfg, gbdt, seeds)

        eff["imbalance"] = {"q": spec.q, "seed": spec.seed}
        eff["oversample"] = ocfg.to_dict()
        eff["gbdt"] = gbdt.to_dict()
        eff["sweep"] = {"param": args.param, "values": values}
        _echo(eff, out)
        with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([args.param, "f1_mean", "f1_std"])
            for p in points:
                writer.writerow([repr(p.value), repr(p.f1), repr(p.f1_std)])
        figs.render_sweep(args.param, points, out / "sweep.png")
        for p in points:
            print(f"{args.param}={p.value}: F1 {p.f1:.4f} (±{p.f1_std:.4f})")
        return 0
    except Exception as exc:
        logger.exception("sweep failed")
        return _fail(out, exc)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--data", help="input CSV path")
    parser.add_argument("--schema", help="schema JSON path")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seeds", help="comma-separated evaluation seeds")
    parser.add_argument("--test-fraction", dest="test_fraction", type=float)
    parser.add_argument("--split-seed", dest="split_seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imbsynth",
                                     description="oversampling lab for imbalanced tabular data")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixture", help="generate the synthetic CSV fixture")
    p.add_argument("--major", type=int, default=400)
    p.add_argument("--minor", type=int, default=100)
    p.add_argument("--con", type=int, default=4)
    p.add_argument("--cat", type=int, default=2)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("run", help="evaluate one oversampling method")
    _add_common(p)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--q", type=float, help="imbalance ratio override")
    p.add_argument("--dump-sentences", action="store_true",
                   help="print the serialized fine-tune sentences and continue")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="run the 12-cell strategy grid")
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("entropy", help="entropy comparisons for the three claims")
    _add_common(p)
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--probe-prompts", dest="probe_prompts", type=int, default=32)
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("sweep", help="sweep q or r and consolidate F1")
    _add_common(p)
    p.add_argument("--param", choices=("q", "r"), required=True)
    p.add_argument("--values", required=True, help="comma-separated sweep values")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
