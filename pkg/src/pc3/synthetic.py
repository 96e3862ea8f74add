"""Desk-scale datasets with known ground-truth MOS.

Ground truth is uniform on [0, 1].  Each item's feature row is a fixed,
smooth, injective embedding of its MOS plus isotropic Gaussian noise.  The
first ``min(D, 8)`` coordinates are ``sin(w_k * mos + p_k)`` at distinct
frequencies ``w_k = 1 + 1.5 k`` and phases ``p_k = 0.7 k``; coordinate 0 is
monotone on [0, 1], which makes the embedding injective.  Any further
coordinates are fixed random mixtures of those sinusoids, so they carry the
same information in a rotated form.  Raw opinion scores are
``mos + N(0, sos_noise_std^2)`` per subject.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sos import RatingRecord
from .types import FeatureTable, ValidationError, seeded_rng

N_SINUSOIDS = 8
# fixed mixing for coordinates beyond the sinusoids; independent of the dataset seed
_MIX_SEED = 20240611


@dataclass(frozen=True)
class SyntheticSpec:
    n_items: int = 500
    feature_dim: int = 32
    feature_noise: float = 0.05
    sos_noise_std: float = 0.15
    subjects_per_item: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.n_items < 2:
            raise ValidationError(f"n_items must be >= 2, got {self.n_items}")
        if self.feature_dim < 1:
            raise ValidationError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.feature_noise < 0 or self.sos_noise_std < 0:
            raise ValidationError("noise levels must be >= 0")
        if self.subjects_per_item < 1:
            raise ValidationError(f"subjects_per_item must be >= 1, got {self.subjects_per_item}")


def embed(mos, feature_dim: int) -> np.ndarray:
    """Noise-free feature rows for an array of MOS values."""
    mos = np.asarray(mos, dtype=np.float64).reshape(-1)
    k = np.arange(N_SINUSOIDS)
    base = np.sin(mos[:, None] * (1.0 + 1.5 * k)[None, :] + 0.7 * k[None, :])
    if feature_dim <= N_SINUSOIDS:
        return base[:, :feature_dim]
    mix = np.random.default_rng(_MIX_SEED).standard_normal((N_SINUSOIDS, feature_dim - N_SINUSOIDS))
    mix /= np.sqrt(N_SINUSOIDS)
    return np.hstack([base, base @ mix])


def generate(spec: SyntheticSpec) -> tuple[FeatureTable, list[RatingRecord]]:
    rng = seeded_rng(spec.seed)
    mos = rng.uniform(0.0, 1.0, size=spec.n_items)
    feats = embed(mos, spec.feature_dim) + spec.feature_noise * rng.standard_normal((spec.n_items, spec.feature_dim))
    scores = mos[:, None] + spec.sos_noise_std * rng.standard_normal((spec.n_items, spec.subjects_per_item))
    width = len(str(spec.n_items - 1))
    ids = tuple(f"item{i:0{width}d}" for i in range(spec.n_items))
    records = [
        RatingRecord(item_id=ids[i], raw_scores=tuple(scores[i]), ground_truth_mos=float(mos[i]))
        for i in range(spec.n_items)
    ]
    return FeatureTable(ids, feats), records
