"""Single-opinion-score synthesis from richer annotations."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .types import ValidationError

log = logging.getLogger(__name__)

PROTOCOLS = ("raw-sample", "gaussian", "empirical")
_NEEDS = {"raw-sample": "raw_scores", "gaussian": "gaussian", "empirical": "histogram"}


@dataclass(frozen=True)
class RatingRecord:
    """Subjective annotation of one item; exactly one annotation kind is set."""

    item_id: str
    raw_scores: tuple[float, ...] | None = None
    gaussian: tuple[float, float] | None = None
    histogram: tuple[tuple[float, float], ...] | None = None
    ground_truth_mos: float | None = None

    def __post_init__(self):
        kinds = [k for k in ("raw_scores", "gaussian", "histogram") if getattr(self, k) is not None]
        if len(kinds) != 1:
            raise ValidationError(
                f"item {self.item_id!r}: expected exactly one annotation kind, got {kinds or 'none'}"
            )
        if self.raw_scores is not None:
            scores = tuple(float(s) for s in self.raw_scores)
            if not scores:
                raise ValidationError(f"item {self.item_id!r}: raw_scores is empty")
            if not all(np.isfinite(scores)):
                raise ValidationError(f"item {self.item_id!r}: non-finite raw score")
            object.__setattr__(self, "raw_scores", scores)
        if self.gaussian is not None:
            mos, std = (float(x) for x in self.gaussian)
            if not (np.isfinite(mos) and np.isfinite(std)):
                raise ValidationError(f"item {self.item_id!r}: non-finite gaussian parameters")
            if std < 0:
                raise ValidationError(f"item {self.item_id!r}: negative std {std}")
            object.__setattr__(self, "gaussian", (mos, std))
        if self.histogram is not None:
            bins = tuple((float(v), float(c)) for v, c in self.histogram)
            if any(c < 0 for _, c in bins):
                raise ValidationError(f"item {self.item_id!r}: negative histogram count")
            if sum(c for _, c in bins) <= 0:
                raise ValidationError(f"item {self.item_id!r}: histogram has no mass")
            object.__setattr__(self, "histogram", bins)
        if self.ground_truth_mos is not None:
            object.__setattr__(self, "ground_truth_mos", float(self.ground_truth_mos))

    @property
    def kind(self) -> str:
        if self.raw_scores is not None:
            return "raw_scores"
        return "gaussian" if self.gaussian is not None else "histogram"

    def mean_score(self) -> float:
        if self.raw_scores is not None:
            return float(np.mean(self.raw_scores))
        if self.gaussian is not None:
            return self.gaussian[0]
        values, counts = np.array(self.histogram).T
        return float(np.sum(values * counts) / np.sum(counts))


def ground_truth(records: Sequence[RatingRecord]) -> np.ndarray:
    missing = [r.item_id for r in records if r.ground_truth_mos is None]
    if missing:
        raise ValidationError(f"ground truth MOS missing for {len(missing)} items, e.g. {missing[:5]}")
    return np.array([r.ground_truth_mos for r in records])


def synthesize_sos(
    records: Sequence[RatingRecord],
    protocol: str,
    rng: np.random.Generator,
    score_range: tuple[float, float] | None = None,
) -> np.ndarray:
    """Draw one opinion score per item under ``protocol``.

    raw-sample picks one subject's score, gaussian samples N(mos, std) and
    empirical samples the rating histogram.  Gaussian draws are not clipped;
    when ``score_range`` is given the number falling outside it is logged.
    """
    if protocol not in PROTOCOLS:
        raise ValidationError(f"unknown protocol {protocol!r}; choose from {', '.join(PROTOCOLS)}")
    need = _NEEDS[protocol]
    wrong = [r.item_id for r in records if r.kind != need]
    if wrong:
        raise ValidationError(f"protocol {protocol!r} needs {need} annotations; offending items: {wrong[:10]}")
    out = np.empty(len(records))
    for i, rec in enumerate(records):
        if protocol == "raw-sample":
            out[i] = rec.raw_scores[rng.integers(len(rec.raw_scores))]
        elif protocol == "gaussian":
            mos, std = rec.gaussian
            out[i] = mos + std * rng.standard_normal()
        else:
            values, counts = np.array(rec.histogram).T
            out[i] = values[rng.choice(len(values), p=counts / counts.sum())]
    if protocol == "gaussian" and score_range is not None:
        outside = int(np.sum((out < score_range[0]) | (out > score_range[1])))
        if outside:
            log.warning("%d gaussian SOS samples fall outside %s (not clipped)", outside, score_range)
    return out


def mix_bias_rate(mos, sos, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Replace a random ``round(rate * N)`` subset of MOS entries by their SOS."""
    mos = np.asarray(mos, dtype=np.float64)
    sos = np.asarray(sos, dtype=np.float64)
    if mos.shape != sos.shape:
        raise ValidationError(f"MOS and SOS lengths differ: {mos.shape[0]} vs {sos.shape[0]}")
    if not 0.0 <= rate <= 1.0:
        raise ValidationError(f"bias rate must lie in [0, 1], got {rate}")
    n_biased = int(np.floor(rate * mos.shape[0] + 0.5))
    chosen = rng.permutation(mos.shape[0])[:n_biased]
    out = mos.copy()
    out[chosen] = sos[chosen]
    return out


def fos_mean(records: Sequence[RatingRecord], k: int, rng: np.random.Generator) -> np.ndarray:
    """Mean of ``k`` distinct subjects' scores per item."""
    if k < 1:
        raise ValidationError(f"subject count must be >= 1, got {k}")
    short = [r.item_id for r in records if r.raw_scores is None or len(r.raw_scores) < k]
    if short:
        raise ValidationError(f"{len(short)} items have fewer than {k} raw scores, e.g. {short[:5]}")
    out = np.empty(len(records))
    for i, rec in enumerate(records):
        pick = rng.choice(len(rec.raw_scores), size=k, replace=False)
        out[i] = np.mean(np.asarray(rec.raw_scores)[pick])
    return out
