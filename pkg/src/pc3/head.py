"""Learnable relative quality measure.

The head maps the difference of two feature vectors through three fully
connected layers (ReLU, ReLU, linear) to a scalar: the predicted MOS of the
first item minus that of the second.  Forward and backward passes are written
out by hand and work on a batch of pairs at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .types import NumericError, ValidationError

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class HeadParameters:
    """Weights, biases and Adam moment accumulators.

    Treated as a value: ``optimizer_step`` returns a fresh instance.
    """

    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default=None)
    v: dict[str, np.ndarray] = field(default=None)
    step: int = 0

    def __post_init__(self):
        if self.m is None:
            self.m = {k: np.zeros_like(p) for k, p in self.params.items()}
        if self.v is None:
            self.v = {k: np.zeros_like(p) for k, p in self.params.items()}

    @property
    def feature_dim(self) -> int:
        return self.params["W1"].shape[0]

    @property
    def hidden_dims(self) -> tuple[int, int]:
        return self.params["W1"].shape[1], self.params["W2"].shape[1]

    def copy(self) -> "HeadParameters":
        return HeadParameters(
            {k: p.copy() for k, p in self.params.items()},
            {k: p.copy() for k, p in self.m.items()},
            {k: p.copy() for k, p in self.v.items()},
            self.step,
        )


@dataclass(frozen=True)
class Tape:
    """Activations cached by a forward pass, tied to the parameters used."""

    params: HeadParameters
    diff: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    h2: np.ndarray


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def head_init(feature_dim: int, hidden_dims: tuple[int, int], rng: np.random.Generator) -> HeadParameters:
    """Glorot-uniform weights, zero biases, zero moments."""
    d = int(feature_dim)
    h1, h2 = (int(h) for h in hidden_dims)
    if min(d, h1, h2) < 1:
        raise ValidationError(f"head dimensions must be >= 1, got D={d}, H=({h1}, {h2})")
    params = {
        "W1": _glorot(rng, d, h1),
        "b1": np.zeros(h1),
        "W2": _glorot(rng, h1, h2),
        "b2": np.zeros(h2),
        "W3": _glorot(rng, h2, 1),
        "b3": np.zeros(1),
    }
    return HeadParameters(params)


def forward_batch(params: HeadParameters, diff: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Scores for a (B, D) batch of feature differences."""
    diff = np.asarray(diff, dtype=np.float64)
    if diff.ndim != 2 or diff.shape[1] != params.feature_dim:
        raise ValidationError(
            f"expected feature differences of shape (B, {params.feature_dim}), got {diff.shape}"
        )
    p = params.params
    z1 = diff @ p["W1"] + p["b1"]
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ p["W2"] + p["b2"]
    h2 = np.maximum(z2, 0.0)
    score = (h2 @ p["W3"])[:, 0] + p["b3"][0]
    return score, Tape(params, diff, z1, h1, z2, h2)


def backward_batch(params: HeadParameters, tape: Tape, upstream: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient of ``sum(upstream * score)`` with respect to every parameter."""
    if tape.params is not params:
        raise ValidationError("tape was recorded with different head parameters")
    g = np.asarray(upstream, dtype=np.float64).reshape(-1)
    if g.shape[0] != tape.diff.shape[0]:
        raise ValidationError(f"upstream gradient has {g.shape[0]} entries for a batch of {tape.diff.shape[0]}")
    p = params.params
    d_h2 = g[:, None] * p["W3"][:, 0][None, :]
    d_z2 = d_h2 * (tape.z2 > 0.0)
    d_h1 = d_z2 @ p["W2"].T
    d_z1 = d_h1 * (tape.z1 > 0.0)
    return {
        "W1": tape.diff.T @ d_z1,
        "b1": d_z1.sum(axis=0),
        "W2": tape.h1.T @ d_z2,
        "b2": d_z2.sum(axis=0),
        "W3": tape.h2.T @ g[:, None],
        "b3": np.array([g.sum()]),
    }


def s_theta_forward(params: HeadParameters, feat_x, feat_r) -> tuple[float, Tape]:
    """Relative quality of item ``x`` against reference ``r``."""
    feat_x = np.asarray(feat_x, dtype=np.float64).reshape(-1)
    feat_r = np.asarray(feat_r, dtype=np.float64).reshape(-1)
    if feat_x.shape != feat_r.shape:
        raise ValidationError(f"feature length mismatch: {feat_x.shape[0]} vs {feat_r.shape[0]}")
    score, tape = forward_batch(params, (feat_x - feat_r)[None, :])
    return float(score[0]), tape


def s_theta_backward(params: HeadParameters, tape: Tape, upstream_grad: float) -> dict[str, np.ndarray]:
    return backward_batch(params, tape, np.array([float(upstream_grad)]))


def optimizer_step(params: HeadParameters, grads: dict[str, np.ndarray], lam: float) -> HeadParameters:
    """One Adam update; returns new parameters and leaves the input untouched."""
    if not lam >= 0.0:
        raise ValidationError(f"learning rate must be >= 0, got {lam}")
    for name in PARAM_NAMES:
        g = grads[name]
        if g.shape != params.params[name].shape:
            raise ValidationError(f"gradient for {name} has shape {g.shape}, expected {params.params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name} at optimizer step {params.step + 1}")
    new_p, new_m, new_v = adam_update(params.params, params.m, params.v, params.step + 1, grads, lam)
    return HeadParameters(new_p, new_m, new_v, params.step + 1)


def adam_update(params, m, v, t: int, grads, lr: float):
    """Bias-corrected Adam over dicts of arrays; ``t`` is the 1-based step number."""
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m1 = ADAM_BETA1 * m[name] + (1.0 - ADAM_BETA1) * g
        v1 = ADAM_BETA2 * v[name] + (1.0 - ADAM_BETA2) * g * g
        m_hat = m1 / (1.0 - ADAM_BETA1**t)
        v_hat = v1 / (1.0 - ADAM_BETA2**t)
        new_p[name] = p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        new_m[name] = m1
        new_v[name] = v1
    return new_p, new_m, new_v


def save_checkpoint(params: HeadParameters, path) -> None:
    """JSON checkpoint: shapes plus row-major float64 data for params and moments."""

    def pack(arrays):
        return {k: {"shape": list(arrays[k].shape), "data": [float(x) for x in arrays[k].ravel()]} for k in PARAM_NAMES}

    doc = {
        "format": "pc3-head/1",
        "step": params.step,
        "params": pack(params.params),
        "m": pack(params.m),
        "v": pack(params.v),
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> HeadParameters:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "pc3-head/1":
        raise ValidationError(f"{path}: not a head checkpoint")

    def unpack(section):
        out = {}
        for k in PARAM_NAMES:
            entry = doc[section][k]
            out[k] = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        return out

    return HeadParameters(unpack("params"), unpack("m"), unpack("v"), int(doc["step"]))
