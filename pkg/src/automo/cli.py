"""Command-line driver: ``automo <subcommand> --config FILE --out DIR [--seed N]``.

Subcommands: synth, train, tune, evaluate, stratify, attack.  Each writes CSV
reports into ``--out``; ``--json`` adds a ``<subcommand>_summary.json``.
Timestamps only appear in ``automo.log``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import metrics as M
from . import pipeline as P
from .config import ConfigError, RunConfig, load_config, parse_config
from .data import load_manifest, save_dataset
from .fusion import NoBalancedModelError, STRATUM_FIELDS
from .hyperopt import TUNING_FIELDS, ObjectiveError
from .imia import TRACE_FIELDS
from .persistence import ArchiveError, load_model_set, save_model_set

log = logging.getLogger("automo")

SUBCOMMANDS = ("synth", "train", "tune", "evaluate", "stratify", "attack")


def _fmt(value) -> str:
    if isinstance(value, float):
        return "NA" if value != value else repr(value)
    return str(value)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


# ---------------------------------------------------------------------------
# paths


def _train_manifest(cfg: RunConfig, out: Path) -> Path:
    return cfg.path(cfg.data.train_manifest, out / "data" / "train" / "manifest.csv")


def _test_manifest(cfg: RunConfig, out: Path) -> Path:
    return cfg.path(cfg.data.test_manifest, out / "data" / "test" / "manifest.csv")


def _models_dir(out: Path) -> Path:
    return out / "models"


def _load_split(path: Path, cfg: RunConfig, split: str):
    ds = load_manifest(path, cfg.data.side, split)
    ds.require_both_classes()
    return ds


def _load_models(out: Path):
    pareto, weights, _ = load_model_set(_models_dir(out))
    return pareto, weights


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: RunConfig, out: Path) -> dict:
    train, test = P.synthetic_splits(cfg)
    tm = save_dataset(train, out / "data" / "train")
    sm = save_dataset(test, out / "data" / "test")
    return {"train_manifest": str(tm), "test_manifest": str(sm),
            "train_counts": train.class_counts(), "test_counts": test.class_counts()}


def cmd_train(cfg: RunConfig, out: Path) -> dict:
    train = _load_split(_train_manifest(cfg, out), cfg, "train")
    pareto, weights = P.train_ensemble(train, cfg)
    write_csv(out / "imia_trace.csv", TRACE_FIELDS,
              ([getattr(r, f) for f in TRACE_FIELDS] for r in pareto.trace))
    run = {"seed": cfg.seed, "mp": cfg.imia.mp, "lambda": cfg.fusion.lam,
           "n": cfg.imia.n, "max_iter": cfg.imia.max_iter}
    save_model_set(pareto, weights, _models_dir(out), run)
    write_csv(out / "pareto_metrics.csv", ("id", "weight") + M.METRIC_FIELDS,
              ([c.id, w] + [getattr(c.metrics, f) for f in M.METRIC_FIELDS] for c, w in zip(pareto, weights)))
    return {"front_size": len(pareto), "weights": weights}


def cmd_tune(cfg: RunConfig, out: Path) -> dict:
    train = _load_split(_train_manifest(cfg, out), cfg, "train")
    best, history = P.tune_hyperparameters(train, cfg)
    write_csv(out / "tuning_log.csv", TUNING_FIELDS, ([t.trial, t.mp, t.lam, t.objective] for t in history))
    (out / "tuned.ini").write_text(f"[imia]\nmp = {best.mp!r}\n\n[fusion]\nlambda = {best.lam!r}\n")
    return {"mp": best.mp, "lambda": best.lam, "objective": best.objective}


def cmd_evaluate(cfg: RunConfig, out: Path) -> dict:
    pareto, weights = _load_models(out)
    test = _load_split(_test_manifest(cfg, out), cfg, "test")
    results = P.evaluate_repeats(pareto, weights, test, cfg)
    write_csv(out / "metrics.csv", ("repeat",) + M.METRIC_FIELDS,
              ([r.repeat] + [getattr(r.metrics, f) for f in M.METRIC_FIELDS] for r in results))
    summary = P.summarize(results)
    write_csv(out / "metrics_summary.csv", ("metric", "mean", "std"),
              ([f, *summary[f]] for f in M.METRIC_FIELDS))
    first = results[0].predictions
    write_csv(out / "predictions.csv", ("sample_id", "p_fin1", "p_fin2", "u_fin", "decision", "label"),
              zip(test.ids, first.p_fin1.tolist(), first.p_fin2.tolist(), first.u_fin.tolist(),
                  first.decision.tolist(), test.labels.tolist()))
    return {f: {"mean": m, "std": s} for f, (m, s) in summary.items()}


def cmd_stratify(cfg: RunConfig, out: Path) -> dict:
    pareto, weights = _load_models(out)
    test = _load_split(_test_manifest(cfg, out), cfg, "test")
    rows = P.stratify(pareto, weights, test, cfg)
    write_csv(out / "stratification.csv", STRATUM_FIELDS,
              ([r.uncertainty, r.sen, r.spe, r.auc, r.acc] for r in rows))
    return {"rows": [r.__dict__ for r in rows]}


def cmd_attack(cfg: RunConfig, out: Path) -> dict:
    pareto, weights = _load_models(out)
    test = _load_split(_test_manifest(cfg, out), cfg, "test")
    sweeps = P.attack_repeats(pareto, weights, test, cfg)
    for r, sweep in enumerate(sweeps):
        write_csv(out / f"robustness_seed{r}.csv", ("epsilon", "acc"), ([row.epsilon, row.acc] for row in sweep))
    eps = [row.epsilon for row in sweeps[0]]
    mean_acc = [sum(s[i].acc for s in sweeps) / len(sweeps) for i in range(len(eps))]
    write_csv(out / "robustness.csv", ("epsilon", "acc"), zip(eps, mean_acc))
    return {"epsilon": eps, "acc": mean_acc}


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "tune": cmd_tune,
    "evaluate": cmd_evaluate,
    "stratify": cmd_stratify,
    "attack": cmd_attack,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="automo", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", type=Path, help="INI run config (defaults apply when omitted)")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--seed", type=int, help="override [run] seed")
    parser.add_argument("--json", action="store_true", help="also write a JSON summary")
    return parser


def _setup_logging(out: Path) -> logging.Handler:
    handler = logging.FileHandler(out / "automo.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    root = logging.getLogger("automo")
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    return handler


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors exit 2, --help exits 0
        return exc.code
    handler = None
    try:
        cfg = load_config(args.config) if args.config else parse_config("")
        if args.seed is not None:
            cfg.seed = args.seed
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        handler = _setup_logging(out)
        log.info("%s: seed=%d", args.subcommand, cfg.seed)
        summary = COMMANDS[args.subcommand](cfg, out)
        if args.json:
            (out / f"{args.subcommand}_summary.json").write_text(
                json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n")
        log.info("%s: done", args.subcommand)
        return 0
    except (ConfigError, ArchiveError, ObjectiveError, NoBalancedModelError,
            OSError, ValueError) as exc:
        print(f"automo {args.subcommand}: error: {exc}", file=sys.stderr)
        return 1
    finally:
        if handler is not None:
            logging.getLogger("automo").removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
