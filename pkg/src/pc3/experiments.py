"""Desk-scale experiment runners with median-of-repeats aggregation.

Every repeat ``i`` draws its randomness from ``seed + i``; within a repeat all
compared variants (protocols, rates, alphas, label sources) consume the same
synthesized labels, splits and engine seed so differences isolate the effect
under study.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .engine import EpochReport, calibrate
from .metrics import METRIC_NAMES, MetricsReport, evaluate, median_report, relative_change
from .regressor import QualityRegressor
from .sos import RatingRecord, fos_mean, ground_truth, mix_bias_rate, synthesize_sos
from .synthetic import SyntheticSpec, generate
from .types import CalibrationConfig, FeatureTable, ValidationError, normalize_labels, seeded_rng

log = logging.getLogger(__name__)

KINDS = ("calibration", "bias-rate", "fos", "alpha-sweep", "downstream")

# sub-streams under seed + repeat
STREAM_SOS = 0
STREAM_MIX = 1
STREAM_FOS = 2
STREAM_SPLIT = 3
STREAM_REGRESSOR = 4

N_BUCKETS = 10
MIN_DOWNSTREAM_ITEMS = 10


@dataclass
class ExperimentPlan:
    kind: str
    features: FeatureTable | None = None
    records: Sequence[RatingRecord] | None = None
    synthetic: SyntheticSpec | None = None
    protocol: str = "raw-sample"
    rates: tuple[float, ...] = (0.6, 0.8)
    ks: tuple[int, ...] = (1, 2, 4, 8)
    alphas: tuple[float, ...] = (0.0, 0.1, 0.2, 0.6, 0.8)
    repeats: int = 10
    seed: int = 0
    config: CalibrationConfig = field(default_factory=CalibrationConfig)
    threads: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown experiment kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.repeats < 1:
            raise ValidationError(f"repeats must be >= 1, got {self.repeats}")
        for name in ("rates", "ks", "alphas"):
            if not getattr(self, name):
                raise ValidationError(f"{name} grid must not be empty")
        if (self.features is None) != (self.records is None):
            raise ValidationError("features and records must be given together")
        if self.features is None and self.synthetic is None:
            self.synthetic = SyntheticSpec(seed=self.seed)

    def dataset(self) -> tuple[FeatureTable, list[RatingRecord]]:
        if self.features is not None:
            features, records = self.features, list(self.records)
            if [r.item_id for r in records] != list(features.item_ids):
                raise ValidationError("rating records must list the same item ids as the features, in order")
            return features, records
        return generate(self.synthetic)


@dataclass
class Row:
    method: str
    report: MetricsReport
    setting: float | int | None = None

    def cells(self) -> list:
        return [self.method, "" if self.setting is None else self.setting] + [
            getattr(self.report, m) for m in METRIC_NAMES
        ]


@dataclass
class ExperimentResult:
    kind: str
    setting_name: str
    rows: list[Row]
    per_repeat: dict[str, list[MetricsReport]]
    plots: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)

    def row(self, method: str, setting=None) -> MetricsReport:
        for r in self.rows:
            if r.method == method and (setting is None or r.setting == setting):
                return r.report
        raise KeyError((method, setting))

    def table(self) -> tuple[list[str], list[list]]:
        return ["method", self.setting_name] + list(METRIC_NAMES), [r.cells() for r in self.rows]

    def as_json(self) -> dict:
        return {
            "kind": self.kind,
            "rows": [
                {"method": r.method, self.setting_name: r.setting, **r.report.as_dict()} for r in self.rows
            ],
            "per_repeat": {k: [m.as_dict() for m in v] for k, v in self.per_repeat.items()},
        }


def calibrate_raw(features: FeatureTable, labels: np.ndarray, config: CalibrationConfig) -> tuple[np.ndarray, list[EpochReport]]:
    """Normalize, calibrate and map back to the labels' own scale."""
    result = calibrate(features, normalize_labels(labels), config)
    return result.calibrated_raw(labels), result.trace


def _map_repeats(plan: ExperimentPlan, fn: Callable[[int], dict]) -> list[dict]:
    if plan.threads > 1:
        with ThreadPoolExecutor(max_workers=plan.threads) as pool:
            return list(pool.map(fn, range(plan.repeats)))
    return [fn(i) for i in range(plan.repeats)]


def _sos(plan: ExperimentPlan, records, i: int) -> np.ndarray:
    return synthesize_sos(records, plan.protocol, seeded_rng(plan.seed + i, STREAM_SOS))


def _config(plan: ExperimentPlan, i: int, **changes) -> CalibrationConfig:
    return plan.config.replace(seed=plan.seed + i, **changes)


def _compare_rows(baseline: str, per_repeat: dict[str, list[MetricsReport]], setting=None) -> list[Row]:
    base = median_report(per_repeat[baseline])
    pc3 = median_report(per_repeat["PC3"])
    return [Row(baseline, base, setting), Row("PC3", pc3, setting), Row("delta_pct", relative_change(pc3, base), setting)]


def error_buckets(truth: np.ndarray, labels: dict[str, list[np.ndarray]], n_buckets: int = N_BUCKETS):
    """Mean and spread of absolute label error per ground-truth-MOS decile, pooled over repeats."""
    edges = np.quantile(truth, np.linspace(0.0, 1.0, n_buckets + 1))
    bucket = np.clip(np.searchsorted(edges, truth, side="right") - 1, 0, n_buckets - 1)
    header = ["bucket", "mos_low", "mos_high"]
    abs_err = {}
    for name, runs in labels.items():
        header += [f"{name}_mae", f"{name}_sd"]
        abs_err[name] = np.stack([np.abs(r - truth) for r in runs])
    rows = []
    for b in range(n_buckets):
        mask = bucket == b
        row = [b, float(edges[b]), float(edges[b + 1])]
        for err in abs_err.values():
            pooled = err[:, mask].ravel()
            row += [float(pooled.mean()), float(pooled.std())] if pooled.size else [float("nan")] * 2
        rows.append(row)
    return header, rows


def _trace_plot(trace: list[EpochReport]):
    return (
        ["epoch", "data_fit_loss", "constraint_loss", "total_loss"],
        [[t.epoch, t.data_fit_loss, t.constraint_loss, t.total_loss] for t in trace],
    )


def run_calibration(plan: ExperimentPlan) -> ExperimentResult:
    features, records = plan.dataset()
    truth = ground_truth(records)

    def one(i):
        sos = _sos(plan, records, i)
        cal, trace = calibrate_raw(features, sos, _config(plan, i))
        log.info("calibration repeat %d done", i)
        return {"sos": sos, "pc3": cal, "trace": trace}

    runs = _map_repeats(plan, one)
    per = {
        "SOS": [evaluate(r["sos"], truth) for r in runs],
        "PC3": [evaluate(r["pc3"], truth) for r in runs],
    }
    plots = {
        "error_buckets": error_buckets(truth, {"sos": [r["sos"] for r in runs], "pc3": [r["pc3"] for r in runs]}),
        "trace_repeat0": _trace_plot(runs[0]["trace"]),
    }
    return ExperimentResult("calibration", "setting", _compare_rows("SOS", per), per, plots)


def run_bias_rate(plan: ExperimentPlan) -> ExperimentResult:
    features, records = plan.dataset()
    truth = ground_truth(records)

    def one(i):
        sos = _sos(plan, records, i)
        out = {}
        for rate in plan.rates:
            mixed = mix_bias_rate(truth, sos, rate, seeded_rng(plan.seed + i, STREAM_MIX))
            cal, _ = calibrate_raw(features, mixed, _config(plan, i))
            out[rate] = (evaluate(mixed, truth), evaluate(cal, truth))
        log.info("bias-rate repeat %d done", i)
        return out

    runs = _map_repeats(plan, one)
    rows: list[Row] = []
    per: dict[str, list[MetricsReport]] = {}
    for rate in plan.rates:
        p = {"SOS": [r[rate][0] for r in runs], "PC3": [r[rate][1] for r in runs]}
        per[f"SOS@{rate}"] = p["SOS"]
        per[f"PC3@{rate}"] = p["PC3"]
        rows += _compare_rows("SOS", p, rate)
    return ExperimentResult("bias-rate", "rate", rows, per)


def run_fos(plan: ExperimentPlan) -> ExperimentResult:
    features, records = plan.dataset()
    truth = ground_truth(records)
    need = max(plan.ks)
    short = [r.item_id for r in records if r.raw_scores is None or len(r.raw_scores) < need]
    if short:
        raise ValidationError(f"FOS with k={need} needs {need} raw scores per item; {len(short)} items fall short")

    def one(i):
        out = {}
        for k in plan.ks:
            fos = fos_mean(records, k, seeded_rng(plan.seed + i, STREAM_FOS, k))
            cal, _ = calibrate_raw(features, fos, _config(plan, i))
            out[k] = (evaluate(fos, truth), evaluate(cal, truth))
        log.info("fos repeat %d done", i)
        return out

    runs = _map_repeats(plan, one)
    rows: list[Row] = []
    per: dict[str, list[MetricsReport]] = {}
    curve = []
    for k in plan.ks:
        p = {"FOS": [r[k][0] for r in runs], "PC3": [r[k][1] for r in runs]}
        per[f"FOS@{k}"] = p["FOS"]
        per[f"PC3@{k}"] = p["PC3"]
        krows = _compare_rows("FOS", p, k)
        rows += krows
        fos_m, pc3_m = krows[0].report, krows[1].report
        curve.append([k] + [getattr(fos_m, m) for m in METRIC_NAMES] + [getattr(pc3_m, m) for m in METRIC_NAMES])
    header = ["k"] + [f"fos_{m}" for m in METRIC_NAMES] + [f"pc3_{m}" for m in METRIC_NAMES]
    return ExperimentResult("fos", "k", rows, per, {"fos_curve": (header, curve)})


def run_alpha_sweep(plan: ExperimentPlan) -> ExperimentResult:
    features, records = plan.dataset()
    truth = ground_truth(records)
    alphas = sorted(set(float(a) for a in plan.alphas))

    def one(i):
        sos = _sos(plan, records, i)
        out = {"SOS": evaluate(sos, truth)}
        for a in alphas:
            cal, _ = calibrate_raw(features, sos, _config(plan, i, alpha=a))
            out[a] = evaluate(cal, truth)
        log.info("alpha-sweep repeat %d done", i)
        return out

    runs = _map_repeats(plan, one)
    per = {"SOS": [r["SOS"] for r in runs]}
    rows = [Row("SOS", median_report(per["SOS"]))]
    for a in alphas:
        per[f"PC3@{a}"] = [r[a] for r in runs]
        rows.append(Row("PC3", median_report(per[f"PC3@{a}"]), a))
    return ExperimentResult("alpha-sweep", "alpha", rows, per)


def train_test_split(n: int, rng: np.random.Generator, test_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    if n < MIN_DOWNSTREAM_ITEMS:
        raise ValidationError(f"need at least {MIN_DOWNSTREAM_ITEMS} items for a train/test split, got {n}")
    order = rng.permutation(n)
    n_test = int(round(test_fraction * n))
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def run_downstream(plan: ExperimentPlan) -> ExperimentResult:
    """Train one regressor per label source on a random 80/20 split; score on held-out ground truth.

    Calibration sees only the training items' single opinion scores.
    """
    features, records = plan.dataset()
    truth = ground_truth(records)
    lo, hi = float(truth.min()), float(truth.max())
    if hi <= lo:
        raise ValidationError("ground truth MOS is constant")

    def one(i):
        train, test = train_test_split(features.n_items, seeded_rng(plan.seed + i, STREAM_SPLIT))
        sos = _sos(plan, records, i)
        cal, _ = calibrate_raw(features.subset(train), sos[train], _config(plan, i))
        sources = {"MOS": truth[train], "SOS": sos[train], "PC3": cal}
        x = features.features
        out = {}
        for name, y in sources.items():
            reg = QualityRegressor(features.dim, seeded_rng(plan.seed + i, STREAM_REGRESSOR))
            reg.fit(x[train], (y - lo) / (hi - lo), seeded_rng(plan.seed + i, STREAM_REGRESSOR, 1))
            pred = reg.predict(x[test]) * (hi - lo) + lo
            out[name] = evaluate(pred, truth[test])
        log.info("downstream repeat %d done", i)
        return out

    runs = _map_repeats(plan, one)
    per = {name: [r[name] for r in runs] for name in ("MOS", "SOS", "PC3")}
    meds = {name: median_report(v) for name, v in per.items()}
    rows = [Row(name, meds[name]) for name in ("MOS", "SOS", "PC3")]
    rows.append(Row("delta_pct", relative_change(meds["PC3"], meds["SOS"])))
    return ExperimentResult("downstream", "setting", rows, per)


RUNNERS = {
    "calibration": run_calibration,
    "bias-rate": run_bias_rate,
    "fos": run_fos,
    "alpha-sweep": run_alpha_sweep,
    "downstream": run_downstream,
}


def run(plan: ExperimentPlan) -> ExperimentResult:
    return RUNNERS[plan.kind](plan)
