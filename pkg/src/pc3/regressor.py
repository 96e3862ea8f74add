"""Small feed-forward quality regressor (D -> hidden -> 1) for downstream label comparisons."""

from __future__ import annotations

import numpy as np

from .head import adam_update

DEFAULT_HIDDEN = 64
DEFAULT_EPOCHS = 50
DEFAULT_LR = 1e-3
DEFAULT_BATCH = 32


class QualityRegressor:
    def __init__(self, feature_dim: int, rng: np.random.Generator, hidden: int = DEFAULT_HIDDEN):
        lim1 = np.sqrt(6.0 / (feature_dim + hidden))
        lim2 = np.sqrt(6.0 / (hidden + 1))
        self.params = {
            "W1": rng.uniform(-lim1, lim1, size=(feature_dim, hidden)),
            "b1": np.zeros(hidden),
            "W2": rng.uniform(-lim2, lim2, size=(hidden, 1)),
            "b2": np.zeros(1),
        }
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.step = 0

    def predict(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        h = np.maximum(x @ p["W1"] + p["b1"], 0.0)
        return (h @ p["W2"])[:, 0] + p["b2"][0]

    def _grads(self, x: np.ndarray, y: np.ndarray) -> dict[str, np.ndarray]:
        p = self.params
        z = x @ p["W1"] + p["b1"]
        h = np.maximum(z, 0.0)
        pred = (h @ p["W2"])[:, 0] + p["b2"][0]
        g = 2.0 * (pred - y) / y.shape[0]
        dz = (g[:, None] * p["W2"][:, 0][None, :]) * (z > 0.0)
        return {
            "W1": x.T @ dz,
            "b1": dz.sum(axis=0),
            "W2": h.T @ g[:, None],
            "b2": np.array([g.sum()]),
        }

    def fit(
        self,
        x: np.ndarray,
        y: np.ndarray,
        rng: np.random.Generator,
        epochs: int = DEFAULT_EPOCHS,
        lr: float = DEFAULT_LR,
        batch_size: int = DEFAULT_BATCH,
    ) -> "QualityRegressor":
        """Mean-squared-error training with shuffled mini-batch Adam."""
        for _ in range(epochs):
            order = rng.permutation(x.shape[0])
            for start in range(0, order.shape[0], batch_size):
                idx = order[start : start + batch_size]
                self.step += 1
                self.params, self.m, self.v = adam_update(
                    self.params, self.m, self.v, self.step, self._grads(x[idx], y[idx]), lr
                )
        return self
