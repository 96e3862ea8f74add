"""Shared domain types, label normalization and the seeded randomness contract."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np


class ValidationError(ValueError):
    """Malformed input or a violated precondition."""


class NumericError(RuntimeError):
    """A non-finite value appeared during optimization."""


@dataclass(frozen=True)
class FeatureTable:
    """N items with one D-dimensional quality-aware descriptor each."""

    item_ids: tuple[str, ...]
    features: np.ndarray

    def __post_init__(self):
        ids = tuple(str(i) for i in self.item_ids)
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValidationError(f"features must be a 2-D matrix, got shape {feats.shape}")
        n, d = feats.shape
        if n < 2:
            raise ValidationError(f"need at least 2 items, got {n}")
        if d < 1:
            raise ValidationError("feature dimension must be >= 1")
        if len(ids) != n:
            raise ValidationError(f"{len(ids)} item ids for {n} feature rows")
        if len(set(ids)) != n:
            seen: set[str] = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise ValidationError(f"duplicate item id {dup!r}")
        if not np.all(np.isfinite(feats)):
            row = int(np.argwhere(~np.isfinite(feats))[0, 0])
            raise ValidationError(f"non-finite feature value for item {ids[row]!r}")
        feats.setflags(write=False)
        object.__setattr__(self, "item_ids", ids)
        object.__setattr__(self, "features", feats)

    @property
    def n_items(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index: Sequence[int]) -> "FeatureTable":
        index = np.asarray(index, dtype=np.int64)
        return FeatureTable(tuple(self.item_ids[i] for i in index), self.features[index])


@dataclass(frozen=True)
class LabelVector:
    """Labels on the normalized [0, 1] scale plus the affine map back to raw units."""

    values: np.ndarray
    scale: tuple[float, float]

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(vals)):
            raise ValidationError("label values must be finite")
        lo, hi = float(self.scale[0]), float(self.scale[1])
        if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
            raise ValidationError(f"invalid label scale ({lo}, {hi})")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "scale", (lo, hi))

    def __len__(self) -> int:
        return self.values.shape[0]

    def with_values(self, values: np.ndarray) -> "LabelVector":
        """Same scale, new normalized values."""
        return LabelVector(values, self.scale)


def normalize_labels(raw) -> LabelVector:
    """Min-max map a raw score vector onto [0, 1]."""
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    if raw.size == 0:
        raise ValidationError("cannot normalize an empty label vector")
    if not np.all(np.isfinite(raw)):
        raise ValidationError("raw labels must be finite")
    lo, hi = float(raw.min()), float(raw.max())
    if hi <= lo:
        raise ValidationError(f"degenerate label scale: all values equal {lo}")
    values = np.clip((raw - lo) / (hi - lo), 0.0, 1.0)
    return LabelVector(values, (lo, hi))


def denormalize_labels(lv: LabelVector) -> np.ndarray:
    lo, hi = lv.scale
    return lv.values * (hi - lo) + lo


@dataclass(frozen=True)
class CalibrationConfig:
    """Hyperparameters of one calibration run.

    ``lam`` is the learning rate of the relative-quality head (``lambda`` in
    config files) and ``warmup_epochs`` the number of epochs during which the
    MOS estimates stay pinned to the input scores.
    """

    alpha: float = 0.1
    beta: float = 1.0 / 9.0
    lam: float = 1e-4
    warmup_epochs: int = 1
    total_epochs: int = 60
    batch_size: int = 64
    hidden_dims: tuple[int, int] = (128, 64)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.beta >= 0.0:
            raise ValidationError(f"beta must be >= 0, got {self.beta}")
        if not self.lam >= 0.0:
            raise ValidationError(f"lambda must be >= 0, got {self.lam}")
        if int(self.warmup_epochs) != self.warmup_epochs or self.warmup_epochs < 0:
            raise ValidationError(f"warmup_epochs must be a non-negative integer, got {self.warmup_epochs}")
        if int(self.total_epochs) != self.total_epochs or self.total_epochs < 1:
            raise ValidationError(f"total_epochs must be a positive integer, got {self.total_epochs}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValidationError(f"batch_size must be a positive integer, got {self.batch_size}")
        if len(self.hidden_dims) != 2 or min(self.hidden_dims) < 1:
            raise ValidationError(f"hidden_dims must be two positive integers, got {self.hidden_dims}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def replace(self, **changes) -> "CalibrationConfig":
        values = {name: getattr(self, name) for name in self.field_names()}
        values.update(changes)
        return CalibrationConfig(**values)


@dataclass
class CalibrationState:
    """Current MOS estimates and the epoch counter of a running calibration."""

    mu: np.ndarray
    epoch: int = 0
    sos: np.ndarray = field(default=None, repr=False)

    @classmethod
    def initial(cls, sos: LabelVector) -> "CalibrationState":
        return cls(mu=sos.values.copy(), epoch=0, sos=sos.values)


# PCG64 via numpy's Generator: the one generator algorithm used everywhere.
def seeded_rng(seed: int, *stream: int) -> np.random.Generator:
    """Deterministic PCG64 stream for ``seed``.

    Extra integers select an independent sub-stream, so ``seeded_rng(s, 3)``
    is reproducible on its own and does not overlap ``seeded_rng(s, 4)``.
    """
    if int(seed) != seed or not 0 <= seed < 2**64:
        raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in stream))
    return np.random.Generator(np.random.PCG64(ss))
