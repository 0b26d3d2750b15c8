"""Vector quantization with EMA-maintained codebooks.

Nearest-neighbor assignment under L2 with lowest-index tie-breaking, a
straight-through gradient past the discretization, exponential-moving-average
code updates (codes are never touched by the optimizer), usage perplexity,
and re-seeding of dead codes from live encoder outputs.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeMismatchError, Tensor, register_op


class Codebook:
    """N codes of dimension C plus EMA accumulators.

    Invariant: ``codes[i] == ema_sums[i] / max(ema_counts[i], eps)`` after
    construction and after every update.
    """

    def __init__(self, rng, n_codes: int, dim: int, decay: float = 0.99, eps: float = 1e-5):
        if not 0.0 < decay < 1.0:
            raise ValueError(f"decay must lie in (0,1), got {decay}")
        self.n_codes = n_codes
        self.dim = dim
        self.decay = decay
        self.eps = eps
        self.codes = rng.normal(0.0, 0.5, size=(n_codes, dim)).astype(np.float32)
        # near-zero accumulator mass: the sums/counts ratio then tracks newly
        # assigned features almost immediately instead of the random init
        self.ema_counts = np.full(n_codes, 1e-3, dtype=np.float64)
        self.ema_sums = self.codes.astype(np.float64) * self.ema_counts[:, None]

    def assign(self, features: np.ndarray) -> np.ndarray:
        """Nearest code per row; ties go to the lowest index."""
        if features.shape[-1] != self.dim:
            raise ShapeMismatchError(f"feature dim {features.shape[-1]} does not match codebook dim {self.dim}")
        flat = features.reshape(-1, self.dim)
        d2 = (flat**2).sum(axis=1, keepdims=True) + (self.codes**2).sum(axis=1)[None] - 2.0 * flat @ self.codes.T
        return np.argmin(d2, axis=1).reshape(features.shape[:-1])

    def lookup(self, indices: np.ndarray) -> np.ndarray:
        return self.codes[np.asarray(indices, dtype=np.int64)]

    def quantize_st(self, feature: Tensor) -> tuple[Tensor, np.ndarray]:
        """Quantized values with a straight-through (identity) gradient."""
        indices = self.assign(feature.data)
        out = Tensor(self.lookup(indices).astype(feature.dtype))
        register_op(out, (feature,), lambda g: (g,))
        return out, indices

    def ema_update(self, features: np.ndarray, indices: np.ndarray):
        """Decay-blend per-code counts and sums, then refresh codes."""
        flat = features.reshape(-1, self.dim).astype(np.float64)
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        counts = np.bincount(idx, minlength=self.n_codes).astype(np.float64)
        sums = np.zeros_like(self.ema_sums)
        np.add.at(sums, idx, flat)
        self.ema_counts = self.decay * self.ema_counts + (1.0 - self.decay) * counts
        self.ema_sums = self.decay * self.ema_sums + (1.0 - self.decay) * sums
        self._refresh_codes()

    def _refresh_codes(self):
        denom = np.maximum(self.ema_counts, self.eps)[:, None]
        self.codes = (self.ema_sums / denom).astype(np.float32)

    def perplexity(self, indices: np.ndarray) -> float:
        """exp(entropy) of empirical code usage; 1 = collapsed, N = uniform."""
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        if idx.size == 0:
            return 0.0
        p = np.bincount(idx, minlength=self.n_codes) / idx.size
        nz = p[p > 0]
        return float(np.exp(-(nz * np.log(nz)).sum()))

    def reseed_dead(self, rng: np.random.Generator, feature_pool: np.ndarray, threshold: float = 1e-3) -> int:
        """Replace codes with EMA count below threshold by random pool rows."""
        dead = np.flatnonzero(self.ema_counts < threshold)
        if dead.size == 0:
            return 0
        pool = feature_pool.reshape(-1, self.dim)
        picks = rng.integers(0, pool.shape[0], size=dead.size)
        self.ema_counts[dead] = 0.1
        self.ema_sums[dead] = pool[picks].astype(np.float64) * 0.1
        self._refresh_codes()
        return int(dead.size)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            "codes": self.codes,
            "ema_counts": self.ema_counts.astype(np.float32),
            "ema_sums": self.ema_sums.astype(np.float32),
        }

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        self.codes = arrays["codes"].astype(np.float32)
        self.ema_counts = arrays["ema_counts"].astype(np.float64)
        self.ema_sums = arrays["ema_sums"].astype(np.float64)


def commitment_loss(feature: Tensor, quantized: Tensor) -> Tensor:
    """Mean squared pull of encoder features toward their (stop-grad) codes."""
    d = feature - Tensor(quantized.data)
    return T.mean(d * d)
