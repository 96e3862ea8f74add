"""Alternating calibration loop.

Each epoch draws a fresh reference for every item, trains the relative
quality head for one pass over shuffled mini-batches with the MOS estimates
held fixed, and then moves every estimate toward ``S(x, r) + mu_r``.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .head import HeadParameters, Tape, backward_batch, forward_batch, head_init, optimizer_step
from .types import CalibrationConfig, CalibrationState, FeatureTable, LabelVector, NumericError, ValidationError, seeded_rng

log = logging.getLogger(__name__)

# sub-stream ids under the config seed
_STREAM_INIT = 0
_STREAM_LOOP = 1


@dataclass(frozen=True)
class EpochReport:
    epoch: int
    data_fit_loss: float
    constraint_loss: float
    total_loss: float
    mu_digest: str


@dataclass(frozen=True)
class BatchLoss:
    loss: float
    data_fit: float
    constraint: float
    score: np.ndarray
    data_residual: np.ndarray
    constraint_residual: np.ndarray
    tape: Tape


@dataclass
class CalibrationResult:
    labels: LabelVector
    trace: list[EpochReport]
    params: HeadParameters
    inputs: LabelVector

    def calibrated_raw(self, raw_inputs=None) -> np.ndarray:
        """Calibrated labels in raw units.

        With the raw input scores given, the normalized shift is added to them
        instead, so items whose estimate never moved come back bit-identical.
        """
        lo, hi = self.labels.scale
        if raw_inputs is None:
            return self.labels.values * (hi - lo) + lo
        shift = self.labels.values - self.inputs.values
        return np.asarray(raw_inputs, dtype=np.float64) + shift * (hi - lo)


def mu_digest(mu: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(mu, dtype="<f8").tobytes()).hexdigest()[:16]


def sample_references(n_items: int, rng: np.random.Generator) -> np.ndarray:
    """A uniformly random reference for each item, never the item itself."""
    if n_items < 2:
        raise ValidationError(f"need at least 2 items to draw references, got {n_items}")
    draw = rng.integers(0, n_items - 1, size=n_items)
    return draw + (draw >= np.arange(n_items))


def batch_loss(
    params: HeadParameters,
    features: FeatureTable,
    sos: np.ndarray,
    mu: np.ndarray,
    refs: np.ndarray,
    batch: np.ndarray,
    beta: float,
) -> BatchLoss:
    """Mean data-fit term plus ``beta`` times the mean constancy residual."""
    batch = np.asarray(batch, dtype=np.int64)
    r = refs[batch]
    feats = features.features
    score, tape = forward_batch(params, feats[batch] - feats[r])
    if not np.all(np.isfinite(score)):
        bad = batch[~np.isfinite(score)][0]
        raise NumericError(f"non-finite relative quality for item {features.item_ids[bad]!r}")
    data_res = sos[batch] - score - mu[r]
    cons_res = mu[batch] - score - mu[r]
    data_fit = float(np.mean(data_res**2))
    constraint = float(np.mean(cons_res**2))
    return BatchLoss(data_fit + beta * constraint, data_fit, constraint, score, data_res, cons_res, tape)


def loss_gradient(params: HeadParameters, bl: BatchLoss, beta: float) -> dict[str, np.ndarray]:
    """Gradient of ``bl.loss`` with respect to the head parameters (mu held constant)."""
    n = bl.score.shape[0]
    upstream = -2.0 * (bl.data_residual + beta * bl.constraint_residual) / n
    return backward_batch(params, bl.tape, upstream)


def theta_epoch(
    params: HeadParameters,
    features: FeatureTable,
    sos: np.ndarray,
    mu: np.ndarray,
    refs: np.ndarray,
    config: CalibrationConfig,
    rng: np.random.Generator,
) -> HeadParameters:
    """One shuffled pass of mini-batch Adam steps on the head."""
    order = rng.permutation(features.n_items)
    for start in range(0, order.shape[0], config.batch_size):
        batch = order[start : start + config.batch_size]
        bl = batch_loss(params, features, sos, mu, refs, batch, config.beta)
        params = optimizer_step(params, loss_gradient(params, bl, config.beta), config.lam)
    return params


def relative_quality(params: HeadParameters, features: FeatureTable, refs: np.ndarray) -> np.ndarray:
    feats = features.features
    score, _ = forward_batch(params, feats - feats[refs])
    return score


def mu_update(
    mu: np.ndarray,
    params: HeadParameters,
    features: FeatureTable,
    refs: np.ndarray,
    sos: np.ndarray,
    config: CalibrationConfig,
    epoch: int,
) -> np.ndarray:
    """Warm-up-gated synchronous refresh of all MOS estimates."""
    if epoch < config.warmup_epochs:
        return np.array(sos, dtype=np.float64, copy=True)
    delta = relative_quality(params, features, refs) + mu[refs]
    if not np.all(np.isfinite(delta)):
        bad = int(np.argwhere(~np.isfinite(delta))[0, 0])
        raise NumericError(f"non-finite MOS step for item {features.item_ids[bad]!r} at epoch {epoch}")
    return (1.0 - config.alpha) * mu + config.alpha * delta


def epoch_losses(params, features, sos, mu, refs, beta) -> tuple[float, float]:
    bl = batch_loss(params, features, sos, mu, refs, np.arange(features.n_items), beta)
    return bl.data_fit, bl.constraint


def calibrate(
    features: FeatureTable,
    sos: LabelVector,
    config: CalibrationConfig,
    params: HeadParameters | None = None,
    on_epoch: Callable[[int, CalibrationState, HeadParameters, np.ndarray], None] | None = None,
) -> CalibrationResult:
    """Calibrate normalized single opinion scores against the feature table.

    Returns the calibrated labels on the input's scale, the per-epoch trace and
    the trained head.  ``on_epoch(t, state, params, refs)`` is called after each
    epoch's MOS update, for monitoring only.
    """
    n = features.n_items
    if len(sos) != n:
        raise ValidationError(f"{len(sos)} labels for {n} feature rows")
    if params is None:
        params = head_init(features.dim, config.hidden_dims, seeded_rng(config.seed, _STREAM_INIT))
    elif params.feature_dim != features.dim:
        raise ValidationError(f"head expects D={params.feature_dim}, features have D={features.dim}")
    rng = seeded_rng(config.seed, _STREAM_LOOP)
    y = sos.values
    state = CalibrationState.initial(sos)
    trace: list[EpochReport] = []
    for t in range(config.total_epochs):
        refs = sample_references(n, rng)
        params = theta_epoch(params, features, y, state.mu, refs, config, rng)
        fit, cons = epoch_losses(params, features, y, state.mu, refs, config.beta)
        state.mu = mu_update(state.mu, params, features, refs, y, config, t)
        state.epoch = t + 1
        trace.append(EpochReport(t, fit, cons, fit + config.beta * cons, mu_digest(state.mu)))
        if on_epoch is not None:
            on_epoch(t, state, params, refs)
        log.debug("epoch %d data_fit=%.6f constraint=%.6f", t, fit, cons)
    return CalibrationResult(sos.with_values(state.mu), trace, params, sos)
