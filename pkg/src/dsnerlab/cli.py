"""Command-line surface: generate / train / evaluate / report.

Every command is driven by one flat key-value config file; flags can only
override keys that exist in that file, and the effective configuration is
echoed into each output, so a run is reproducible from its artifacts alone.
Re-running a command with identical inputs overwrites its outputs with
identical bytes. The output directory comes from the config, a `--out`
flag, or the DSNERLAB_OUTPUT_DIR environment variable (highest precedence).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .config import ConfigFile, config_to_flat_dict, load_config
from .corpus import CorpusError, read_conll, write_conll
from .distant_supervision import (
    ConfigError,
    NoiseSpec,
    generate_synthetic,
    inject_noise,
    match_dataset,
    noise_profile,
    split_dataset,
)
from .engine import run_experiment
from .evaluation import format_conll_report, predict_labels, span_prf, span_prf_by_type
from .rng import STREAM_NOISE, derive_seed
from .tagger import load_checkpoint, save_checkpoint, window_ids

ENV_OUTPUT_DIR = "DSNERLAB_OUTPUT_DIR"


def _resolve_out_dir(cf: ConfigFile, flag_value) -> Path:
    out = os.environ.get(ENV_OUTPUT_DIR) or flag_value or cf.experiment.output_dir
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_generate(args) -> int:
    cf = load_config(args.config)
    out = _resolve_out_dir(cf, args.out)
    gen = cf.generator

    clean, gazetteer = generate_synthetic(gen)
    train_clean, dev, test = split_dataset(clean, gen)
    ds_train = match_dataset(train_clean, gazetteer)

    write_conll(train_clean, out / "train_clean.conll")
    write_conll(dev, out / "dev.conll")
    write_conll(test, out / "test.conll")
    write_conll(ds_train, out / "train_ds.conll")
    (out / "gazetteer.tsv").write_text(gazetteer.to_text(), encoding="utf-8")

    summary = {
        "config": config_to_flat_dict(cf),
        "splits": {"train": len(train_clean), "dev": len(dev), "test": len(test)},
        "gazetteer_entries": len(gazetteer),
        "distant_supervision": noise_profile(ds_train),
    }
    if gen.noise_ratio > 0:
        spec = NoiseSpec(gen.noise_ratio, gen.noise_mode,
                         seed=derive_seed(gen.seed, STREAM_NOISE))
        noisy = inject_noise(train_clean, spec)
        write_conll(noisy, out / "train_noisy.conll")
        summary["injected_noise"] = {
            "ratio_percent": gen.noise_ratio,
            "mode": gen.noise_mode,
            "profile": noise_profile(noisy),
        }
    _write_json(out / "generate_summary.json", summary)
    print(f"wrote corpus files to {out}")
    return 0


def cmd_train(args) -> int:
    cf = load_config(args.config)
    exp = cf.experiment
    if args.no_utl:
        exp = exp.without_utl()
    if args.no_scl:
        exp = exp.without_scl()
    cf = ConfigFile(experiment=exp, generator=cf.generator)
    out = _resolve_out_dir(cf, args.out)

    if args.dry_run:
        print(json.dumps(config_to_flat_dict(cf), indent=2, sort_keys=True))
        return 0

    outcome = run_experiment(cf)
    _write_json(out / "run_result.json", outcome.result)
    save_checkpoint(out / "best_model.npz", outcome.best_arch,
                    outcome.best_params, outcome.tagset, outcome.vocab,
                    extra={"model": outcome.best_name,
                           "run_name": exp.run_name,
                           "dev_f1": outcome.result["best"]["dev_f1"]})
    test = outcome.result["test"]
    print(f"{exp.run_name}: best={outcome.best_name} "
          f"dev_f1={outcome.result['best']['dev_f1']:.4f} "
          f"test_f1={test['f1']:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    arch, params, tagset, vocab, extra = load_checkpoint(args.checkpoint)
    dataset = read_conll(args.dataset, tagset)
    wins = [window_ids(vocab.encode(s.tokens), arch.window_radius)
            for s in dataset.sentences]
    preds = predict_labels(params, wins)
    gold = dataset.label_sequences()
    overall = span_prf(preds, gold, tagset)
    payload = overall.to_dict()
    payload["checkpoint"] = str(args.checkpoint)
    payload["dataset"] = str(args.dataset)
    if args.json:
        _write_json(Path(args.json), payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.text:
        print(format_conll_report(overall, span_prf_by_type(preds, gold, tagset)))
    return 0


REPORT_COLUMNS = (
    "run", "run_name", "seed", "noise_ratio", "sigma_co", "sigma_ua",
    "scl_delta", "best_model", "best_epoch", "dev_f1",
    "test_precision", "test_recall", "test_f1",
)


def cmd_report(args) -> int:
    rows = []
    for run_dir in args.run_dirs:
        path = Path(run_dir) / "run_result.json"
        if not path.exists():
            print(f"error: no run_result.json under {run_dir}", file=sys.stderr)
            return 1
        with open(path, encoding="utf-8") as fh:
            result = json.load(fh)
        conf = result["config"]
        rows.append({
            "run": str(run_dir),
            "run_name": conf["run_name"],
            "seed": conf["seed"],
            "noise_ratio": conf["gen_noise_ratio"],
            "sigma_co": conf["sigma_co"],
            "sigma_ua": conf["sigma_ua"],
            "scl_delta": conf["scl_delta"],
            "best_model": result["best"]["model"],
            "best_epoch": result["best"]["epoch"],
            "dev_f1": repr(result["best"]["dev_f1"]),
            "test_precision": repr(result["test"]["precision"]),
            "test_recall": repr(result["test"]["recall"]),
            "test_f1": repr(result["test"]["f1"]),
        })
    rows.sort(key=lambda r: (r["noise_ratio"], r["run_name"], r["seed"], r["run"]))
    target = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(target, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            target.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsnerlab",
        description="Distantly-supervised sequence-labeling laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic corpus files")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides config)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="run one training experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--dry-run", action="store_true",
                   help="print the effective config and exit")
    p.add_argument("--no-utl", action="store_true",
                   help="disable uncertainty-aware selection")
    p.add_argument("--no-scl", action="store_true",
                   help="disable student-student transfer")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a CoNLL file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--json", help="also write metrics JSON to this path")
    p.add_argument("--text", action="store_true",
                   help="print a conlleval-style text report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="merge run results into one CSV")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CorpusError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
