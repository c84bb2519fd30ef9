"""Small shared numeric helpers."""

from __future__ import annotations

import numpy as np


def as_batch(x, d):
    """Return (X as an (m, d) float array, was_single_point)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != d:
            raise ValueError(f"point has dimension {x.shape[0]}, expected {d}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"expected (m, {d}) batch, got shape {x.shape}")
    return x, False


def logsumexp(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))).squeeze(axis)


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def rademacher(rng, shape):
    return 2.0 * rng.integers(0, 2, size=shape).astype(float) - 1.0
