"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or usage, 2 numeric/runtime failure.
Progress goes to stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as pio
from .engine import calibrate
from .experiments import KINDS, ExperimentPlan, run
from .head import load_checkpoint, save_checkpoint
from .metrics import evaluate
from .sos import PROTOCOLS, synthesize_sos
from .synthetic import SyntheticSpec, generate
from .types import CalibrationConfig, NumericError, ValidationError, normalize_labels, seeded_rng

log = logging.getLogger("pc3")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def _add_hyperparams(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("calibration hyperparameters (flag > --config file > default)")
    g.add_argument("--config", type=Path, help="JSON config file with CalibrationConfig keys")
    g.add_argument("--alpha", type=float, help="MOS refresh rate in [0,1] (default 0.1)")
    g.add_argument("--beta", type=float, help="constancy multiplier (default 1/9)")
    g.add_argument("--lambda", dest="lam", type=float, help="head learning rate (default 1e-4)")
    g.add_argument("--warmup-epochs", type=int, help="epochs before MOS updates start (default 1)")
    g.add_argument("--epochs", dest="total_epochs", type=int, help="total epochs (default 60)")
    g.add_argument("--batch-size", type=int, help="head mini-batch size (default 64)")
    g.add_argument("--hidden-dims", type=_ints, help="two hidden sizes, e.g. 128,64")


def _add_synthetic(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthetic dataset")
    d = SyntheticSpec()
    g.add_argument("--n-items", type=int, default=d.n_items, help=f"items (default {d.n_items})")
    g.add_argument("--feature-dim", type=int, default=d.feature_dim, help=f"feature dimension (default {d.feature_dim})")
    g.add_argument("--feature-noise", type=float, default=d.feature_noise, help=f"feature noise std (default {d.feature_noise})")
    g.add_argument("--sos-noise-std", type=float, default=d.sos_noise_std, help=f"per-subject score noise std (default {d.sos_noise_std})")
    g.add_argument("--subjects", type=int, default=d.subjects_per_item, help=f"raw scores per item (default {d.subjects_per_item})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pc3", description="Single-opinion-score calibration and experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synthetic", help="write a synthetic features.csv and ratings.json")
    _add_synthetic(p)
    p.add_argument("--seed", type=_seed, required=True, help="dataset seed")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("synthesize-sos", help="draw one opinion score per item")
    p.add_argument("--ratings", type=Path, required=True, help="ratings JSON")
    p.add_argument("--protocol", choices=PROTOCOLS, required=True)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", type=Path, required=True, help="output CSV (item_id,sos[,ground_truth])")

    p = sub.add_parser("calibrate", help="calibrate single opinion scores")
    p.add_argument("--features", type=Path, required=True, help="features CSV")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--ratings", type=Path, help="ratings JSON to synthesize SOS from (needs --protocol)")
    src.add_argument("--labels", type=Path, help="CSV with item_id,sos[,ground_truth] columns")
    p.add_argument("--protocol", choices=PROTOCOLS, help="SOS synthesis protocol for --ratings")
    p.add_argument("--seed", type=_seed, help="seed for SOS synthesis and the engine (default: config seed)")
    p.add_argument("--init-head", type=Path, help="start from a saved head checkpoint")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _add_hyperparams(p)

    p = sub.add_parser("evaluate", help="SRCC/PLCC/KROCC/MSE between two label CSVs")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--pred-column", help="default: 'calibrated' if present, else the last column")
    p.add_argument("--truth-column", help="default: 'ground_truth' if present, else the last column")

    p = sub.add_parser("experiment", help="run a median-of-repeats experiment")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--seed", type=_seed, required=True, help="base seed; repeat i uses seed+i")
    p.add_argument("--features", type=Path, help="features CSV (default: synthetic dataset)")
    p.add_argument("--ratings", type=Path, help="ratings JSON with ground_truth_mos")
    p.add_argument("--protocol", choices=PROTOCOLS, default="raw-sample")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--rates", type=_floats, default=(0.6, 0.8), help="bias rates, e.g. 0.6,0.8")
    p.add_argument("--ks", type=_ints, default=(1, 2, 4, 8), help="FOS subject counts, e.g. 1,2,4,8")
    p.add_argument("--alphas", type=_floats, default=(0.0, 0.1, 0.2, 0.6, 0.8), help="alpha grid")
    p.add_argument("--threads", type=int, default=1, help="worker cap for parallel repeats")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _add_synthetic(p)
    _add_hyperparams(p)
    return parser


def resolve_config(args, seed: int | None) -> CalibrationConfig:
    config = pio.read_config(args.config) if args.config else CalibrationConfig()
    overrides = {}
    for name in ("alpha", "beta", "lam", "warmup_epochs", "total_epochs", "batch_size", "hidden_dims"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if seed is not None:
        overrides["seed"] = seed
    return config.replace(**overrides)


def _cmd_gen_synthetic(args) -> None:
    spec = SyntheticSpec(args.n_items, args.feature_dim, args.feature_noise, args.sos_noise_std, args.subjects, args.seed)
    features, records = generate(spec)
    pio.write_features(args.out / "features.csv", features)
    pio.write_ratings(args.out / "ratings.json", records)
    log.info("wrote %d items to %s", features.n_items, args.out)


def _truth_or_none(records):
    if all(r.ground_truth_mos is not None for r in records):
        return np.array([r.ground_truth_mos for r in records])
    return None


def _cmd_synthesize_sos(args) -> None:
    records = pio.read_ratings(args.ratings)
    sos = synthesize_sos(records, args.protocol, seeded_rng(args.seed))
    truth = _truth_or_none(records)
    header = ["item_id", "sos"] + (["ground_truth"] if truth is not None else [])
    rows = [[r.item_id, sos[i]] + ([truth[i]] if truth is not None else []) for i, r in enumerate(records)]
    pio.write_table(args.out, header, rows)


def _cmd_calibrate(args) -> None:
    config = resolve_config(args, args.seed)
    features = pio.read_features(args.features)
    if args.ratings is not None:
        if args.protocol is None:
            raise ValidationError("--ratings requires --protocol")
        records = pio.read_ratings(args.ratings)
        by_id = {r.item_id: r for r in records}
        missing = [i for i in features.item_ids if i not in by_id]
        if missing or len(by_id) != features.n_items:
            raise ValidationError(f"ratings and features disagree on item ids (e.g. {missing[:5]})")
        records = [by_id[i] for i in features.item_ids]
        sos = synthesize_sos(records, args.protocol, seeded_rng(config.seed))
        truth = _truth_or_none(records)
    else:
        cols = pio.read_labels(args.labels)
        if "sos" not in cols:
            raise ValidationError(f"{args.labels}: needs a 'sos' column")
        pos = {iid: k for k, iid in enumerate(cols["item_id"])}
        if set(pos) != set(features.item_ids) or len(pos) != len(cols["item_id"]):
            raise ValidationError("labels and features disagree on item ids")
        order = [pos[i] for i in features.item_ids]
        sos = cols["sos"][order]
        truth = cols["ground_truth"][order] if "ground_truth" in cols else None
    params = load_checkpoint(args.init_head) if args.init_head else None
    log.info("calibrating %d items for %d epochs", features.n_items, config.total_epochs)
    result = calibrate(features, normalize_labels(sos), config, params)
    calibrated = result.calibrated_raw(sos)
    metrics = None
    if truth is not None:
        metrics = {"sos": evaluate(sos, truth).as_dict(), "pc3": evaluate(calibrated, truth).as_dict()}
    pio.write_results(args.out, labels=(features.item_ids, sos, calibrated, truth), metrics=metrics, trace=result.trace)
    pio.write_json(args.out / "config.json", pio.config_to_json(config))
    save_checkpoint(result.params, args.out / "head.json")
    log.info("wrote results to %s", args.out)


def _pick(cols: dict, preferred: str, explicit: str | None, path) -> np.ndarray:
    name = explicit or (preferred if preferred in cols else list(cols)[-1])
    if name == "item_id" or name not in cols:
        raise ValidationError(f"{path}: no numeric column {name!r}")
    return cols[name]


def _cmd_evaluate(args) -> None:
    pred_cols = pio.read_labels(args.pred)
    truth_cols = pio.read_labels(args.truth)
    pred = _pick(pred_cols, "calibrated", args.pred_column, args.pred)
    truth = _pick(truth_cols, "ground_truth", args.truth_column, args.truth)
    pos = {iid: k for k, iid in enumerate(truth_cols["item_id"])}
    if set(pos) != set(pred_cols["item_id"]):
        raise ValidationError("prediction and truth files cover different item ids")
    truth = truth[[pos[i] for i in pred_cols["item_id"]]]
    report = evaluate(pred, truth).as_dict()
    sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _cmd_experiment(args) -> None:
    config = resolve_config(args, None)
    kw = {}
    if (args.features is None) != (args.ratings is None):
        raise ValidationError("--features and --ratings must be given together")
    if args.features is not None:
        features = pio.read_features(args.features)
        by_id = {r.item_id: r for r in pio.read_ratings(args.ratings)}
        if set(by_id) != set(features.item_ids):
            raise ValidationError("ratings and features disagree on item ids")
        kw.update(features=features, records=[by_id[i] for i in features.item_ids])
    else:
        kw["synthetic"] = SyntheticSpec(args.n_items, args.feature_dim, args.feature_noise, args.sos_noise_std, args.subjects, args.seed)
    plan = ExperimentPlan(
        kind=args.kind, protocol=args.protocol, rates=args.rates, ks=args.ks, alphas=args.alphas,
        repeats=args.repeats, seed=args.seed, config=config, threads=args.threads, **kw,
    )
    log.info("running %s experiment with %d repeats", plan.kind, plan.repeats)
    result = run(plan)
    doc = result.as_json()
    doc["config"] = pio.config_to_json(config)
    pio.write_json(args.out / "metrics.json", doc)
    pio.write_table(args.out / "table.csv", *result.table())
    for name, (header, rows) in result.plots.items():
        pio.write_table(args.out / f"{name}.csv", header, rows)
    header, rows = result.table()
    sys.stdout.write(",".join(header) + "\n")
    for row in rows:
        sys.stdout.write(",".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in row) + "\n")


COMMANDS = {
    "gen-synthetic": _cmd_gen_synthetic,
    "synthesize-sos": _cmd_synthesize_sos,
    "calibrate": _cmd_calibrate,
    "evaluate": _cmd_evaluate,
    "experiment": _cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        COMMANDS[args.command](args)
    except (ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except (NumericError, ArithmeticError, RuntimeError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
