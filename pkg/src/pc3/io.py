"""Dataset, configuration and results files.

Formats:

* features CSV: header ``item_id,f0,...,f{D-1}``, one row per item.
* ratings JSON: array of ``{"item_id", "ground_truth_mos"?, one of
  "raw_scores": [...] | "gaussian": {"mos", "std"} | "histogram": [{"value", "count"}]}``.
* config JSON: flat object with any subset of the ``CalibrationConfig`` keys
  (``lambda`` for the learning rate); unknown keys are rejected.
* labels CSV: ``item_id,sos,calibrated[,ground_truth]``.
* trace CSV: ``epoch,data_fit_loss,constraint_loss,total_loss``.
* metrics JSON: nested objects of floats, keys sorted, NaN written as null.

CSV floats are written with 17 significant digits and JSON floats with
Python's shortest round-trip repr, so writers are byte-stable and every
value reads back exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .engine import EpochReport
from .sos import RatingRecord
from .types import CalibrationConfig, FeatureTable, ValidationError

_CONFIG_ALIASES = {"lambda": "lam", "T_h": "warmup_epochs"}


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_features(path, table: FeatureTable) -> None:
    header = ["item_id"] + [f"f{j}" for j in range(table.dim)]
    rows = ([iid] + [fmt(x) for x in row] for iid, row in zip(table.item_ids, table.features))
    _write_text(path, _csv_text(header, rows))


def read_features(path) -> FeatureTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty features file") from None
        dim = len(header) - 1
        if header[0] != "item_id" or dim < 1 or header[1:] != [f"f{j}" for j in range(dim)]:
            raise ValidationError(f"{path}:1: header must be item_id,f0,...,f{{D-1}}")
        ids: list[str] = []
        seen: set[str] = set()
        rows = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != dim + 1:
                raise ValidationError(f"{path}:{line}: expected {dim + 1} fields, got {len(row)}")
            if row[0] in seen:
                raise ValidationError(f"{path}:{line}: duplicate item id {row[0]!r}")
            try:
                vals = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise ValidationError(f"{path}:{line}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ValidationError(f"{path}:{line}: non-finite feature value")
            seen.add(row[0])
            ids.append(row[0])
            rows.append(vals)
    if not rows:
        raise ValidationError(f"{path}: no feature rows")
    return FeatureTable(tuple(ids), np.array(rows, dtype=np.float64).reshape(len(rows), dim))


def _record_from_json(obj, where: str) -> RatingRecord:
    if not isinstance(obj, dict) or "item_id" not in obj:
        raise ValidationError(f"{where}: expected an object with an item_id")
    allowed = {"item_id", "ground_truth_mos", "raw_scores", "gaussian", "histogram"}
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ValidationError(f"{where}: unknown keys {extra}")
    kw = {"item_id": str(obj["item_id"]), "ground_truth_mos": obj.get("ground_truth_mos")}
    try:
        if "raw_scores" in obj:
            kw["raw_scores"] = tuple(obj["raw_scores"])
        if "gaussian" in obj:
            g = obj["gaussian"]
            kw["gaussian"] = (g["mos"], g["std"])
        if "histogram" in obj:
            kw["histogram"] = tuple((b["value"], b["count"]) for b in obj["histogram"])
        return RatingRecord(**kw)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{where}: malformed annotation ({exc})") from None
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from None


def read_ratings(path) -> list[RatingRecord]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, list):
        raise ValidationError(f"{path}: expected a JSON array of rating records")
    records = [_record_from_json(obj, f"{path}[{i}]") for i, obj in enumerate(doc)]
    ids = [r.item_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate item ids")
    return records


def ratings_to_json(records: Sequence[RatingRecord]) -> list[dict]:
    out = []
    for r in records:
        obj: dict = {"item_id": r.item_id}
        if r.ground_truth_mos is not None:
            obj["ground_truth_mos"] = r.ground_truth_mos
        if r.raw_scores is not None:
            obj["raw_scores"] = list(r.raw_scores)
        elif r.gaussian is not None:
            obj["gaussian"] = {"mos": r.gaussian[0], "std": r.gaussian[1]}
        else:
            obj["histogram"] = [{"value": v, "count": c} for v, c in r.histogram]
        out.append(obj)
    return out


def write_ratings(path, records: Sequence[RatingRecord]) -> None:
    _write_text(path, _dump_json(ratings_to_json(records)))


def config_from_mapping(mapping: dict, base: CalibrationConfig | None = None) -> CalibrationConfig:
    """Overlay ``mapping`` on ``base`` (defaults when omitted); unknown keys raise."""
    base = base or CalibrationConfig()
    names = set(CalibrationConfig.field_names())
    changes = {}
    for key, value in mapping.items():
        name = _CONFIG_ALIASES.get(key, key)
        if name not in names:
            raise ValidationError(f"unknown config key {key!r}")
        if name == "hidden_dims":
            value = tuple(value)
        changes[name] = value
    return base.replace(**changes)


def read_config(path) -> CalibrationConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return config_from_mapping(doc)


def config_to_json(config: CalibrationConfig) -> dict:
    return {
        "alpha": config.alpha,
        "beta": config.beta,
        "lambda": config.lam,
        "warmup_epochs": config.warmup_epochs,
        "total_epochs": config.total_epochs,
        "batch_size": config.batch_size,
        "hidden_dims": list(config.hidden_dims),
        "seed": config.seed,
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    _write_text(path, _dump_json(obj))


def write_labels(path, item_ids: Sequence[str], sos, calibrated, ground_truth=None) -> None:
    header = ["item_id", "sos", "calibrated"] + (["ground_truth"] if ground_truth is not None else [])
    rows = []
    for i, iid in enumerate(item_ids):
        row = [iid, fmt(sos[i]), fmt(calibrated[i])]
        if ground_truth is not None:
            row.append(fmt(ground_truth[i]))
        rows.append(row)
    _write_text(path, _csv_text(header, rows))


def read_labels(path) -> dict[str, np.ndarray | list[str]]:
    """Columns of a labels CSV (or any ``item_id,<numeric>...`` CSV) by header name."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "item_id":
            raise ValidationError(f"{path}:1: first column must be item_id")
        cols: dict[str, list] = {h: [] for h in header}
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
            cols["item_id"].append(row[0])
            for h, v in zip(header[1:], row[1:]):
                try:
                    cols[h].append(float(v))
                except ValueError:
                    raise ValidationError(f"{path}:{reader.line_num}: bad number {v!r}") from None
    return {h: (v if h == "item_id" else np.array(v)) for h, v in cols.items()}


def write_trace(path, trace: Sequence[EpochReport]) -> None:
    rows = ([str(r.epoch), fmt(r.data_fit_loss), fmt(r.constraint_loss), fmt(r.total_loss)] for r in trace)
    _write_text(path, _csv_text(["epoch", "data_fit_loss", "constraint_loss", "total_loss"], rows))


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """CSV with floats rendered at 17 significant digits."""
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return fmt(v)
        return str(v)

    _write_text(path, _csv_text(list(header), ([cell(v) for v in row] for row in rows)))


def write_results(out_dir, *, labels=None, metrics=None, trace=None) -> None:
    """Write whichever of labels.csv, metrics.json and trace.csv are supplied.

    ``labels`` is ``(item_ids, sos, calibrated, ground_truth_or_None)``.
    """
    out = Path(out_dir)
    if labels is not None:
        write_labels(out / "labels.csv", *labels)
    if metrics is not None:
        write_json(out / "metrics.json", metrics)
    if trace is not None:
        write_trace(out / "trace.csv", trace)
