"""Agreement metrics between label vectors: SRCC, PLCC, KROCC and MSE."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .types import ValidationError

METRIC_NAMES = ("srcc", "plcc", "krocc", "mse")


@dataclass(frozen=True)
class MetricsReport:
    srcc: float
    plcc: float
    krocc: float
    mse: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _pair(a, b, min_len: int = 2) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValidationError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < min_len:
        raise ValidationError(f"need at least {min_len} values, got {a.shape[0]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("metric inputs must be finite")
    return a, b


def _check_spread(a: np.ndarray, b: np.ndarray) -> None:
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise ValidationError("correlation is undefined for a constant vector")


def plcc(a, b) -> float:
    a, b = _pair(a, b)
    _check_spread(a, b)
    da = a - a.mean()
    db = b - b.mean()
    r = float(np.dot(da, db) / np.sqrt(np.dot(da, da) * np.dot(db, db)))
    return min(1.0, max(-1.0, r))


def srcc(a, b) -> float:
    """Pearson correlation of average-tie ranks."""
    a, b = _pair(a, b)
    _check_spread(a, b)
    return plcc(rankdata(a), rankdata(b))


def krocc(a, b) -> float:
    """Kendall tau-b."""
    a, b = _pair(a, b)
    _check_spread(a, b)
    n = a.shape[0]
    net = 0
    ties_a = 0
    ties_b = 0
    for i in range(n - 1):
        sa = np.sign(a[i + 1 :] - a[i])
        sb = np.sign(b[i + 1 :] - b[i])
        net += int(np.dot(sa, sb))
        ties_a += int(np.count_nonzero(sa == 0))
        ties_b += int(np.count_nonzero(sb == 0))
    n0 = n * (n - 1) // 2
    tau = net / np.sqrt(float((n0 - ties_a) * (n0 - ties_b)))
    return min(1.0, max(-1.0, float(tau)))


def mse(a, b) -> float:
    a, b = _pair(a, b, min_len=1)
    return float(np.mean((a - b) ** 2))


def evaluate(pred, truth) -> MetricsReport:
    return MetricsReport(srcc(pred, truth), plcc(pred, truth), krocc(pred, truth), mse(pred, truth))


def median_report(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Field-wise median; even counts average the middle two."""
    if not reports:
        raise ValidationError("cannot take the median of zero reports")
    return MetricsReport(**{
        name: float(np.median([getattr(r, name) for r in reports])) for name in METRIC_NAMES
    })


def relative_change(new: MetricsReport, base: MetricsReport) -> MetricsReport:
    """Per-metric ``100 * (new - base) / base``; negative MSE change is an improvement."""

    def pct(x: float, ref: float) -> float:
        return 100.0 * (x - ref) / ref if ref != 0 else float("nan")

    return MetricsReport(**{name: pct(getattr(new, name), getattr(base, name)) for name in METRIC_NAMES})
