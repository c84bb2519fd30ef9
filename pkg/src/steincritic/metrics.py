"""Evaluation and validation metrics.

mse_q_hat / mse_p_hat measure how the scaled critic lam * f matches the
scaleless optimal critic f* on held-out samples.  monitor_mse is the
oracle-free stand-in, 2 lam * empirical loss, which tracks mse_p up to a
constant and drives model selection.  power_proxy compares witness
statistics between data and null samples when full testing is too
expensive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._util import as_batch
from .stein import witness_values

__all__ = ["MetricValue", "DegenerateWitnessError", "mse_q_hat", "mse_p_hat",
           "monitor_mse", "power_proxy"]

_DENOM_EPS = 1e-12


class DegenerateWitnessError(ValueError):
    """Both witness spreads vanished; the power proxy is undefined."""


@dataclass(frozen=True)
class MetricValue:
    name: str
    value: float
    n: int
    lam: float

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"metric {self.name} is not finite")
        if self.n < 1:
            raise ValueError("metric sample size must be positive")

    def to_json(self):
        return json.dumps(
            {"name": self.name, "value": self.value, "n": self.n,
             "lambda": self.lam}
        )


def _field_values(f_star, x):
    forward = getattr(f_star, "forward", f_star)
    return forward(x)


def _mse_against_oracle(critic, lam, f_star, samples):
    if lam <= 0:
        raise ValueError("the regularization weight must be positive")
    x, _ = as_batch(samples, critic.d)
    resid = lam * critic.forward(x) - _field_values(f_star, x)
    return float(np.einsum("mi,mi->", resid, resid) / x.shape[0])


def mse_q_hat(critic, lam, f_star, q_samples):
    """mean ||lam f(x) - f*(x)||^2 over model samples x ~ q."""
    return _mse_against_oracle(critic, lam, f_star, q_samples)


def mse_p_hat(critic, lam, f_star, p_samples):
    """mean ||lam f(x) - f*(x)||^2 over data samples x ~ p."""
    return _mse_against_oracle(critic, lam, f_star, p_samples)


def monitor_mse(critic, lam, score_q, p_samples, div_mode="exact", n_probes=1,
                rng=None):
    """Oracle-free training monitor: 2 lam * empirical loss, written out as
    mean(-2 lam w(x) + lam^2 ||f(x)||^2) so it cross-checks the stein module."""
    if lam <= 0:
        raise ValueError("the regularization weight must be positive")
    x, _ = as_batch(p_samples, critic.d)
    w = witness_values(critic, score_q, x, div_mode, n_probes, rng)
    f = critic.forward(x)
    sq = np.einsum("mi,mi->m", f, f)
    return float(np.mean(-2.0 * lam * w + lam**2 * sq))


def power_proxy(critic, score_q, p_samples, q_samples, div_mode="exact",
                n_probes=1, rng=None):
    """Witness separation score: mean data witness over the summed spreads.

    The spread convention follows sigma(w) = sqrt(sum (w_i - wbar)^2) / n,
    i.e. the 1/n-scaled root sum of squares on each side.
    """
    p, _ = as_batch(p_samples, critic.d)
    q, _ = as_batch(q_samples, critic.d)
    if p.shape[0] < 2 or q.shape[0] < 2:
        raise ValueError("power proxy needs at least two samples per side")
    w_p = witness_values(critic, score_q, p, div_mode, n_probes, rng)
    w_q = witness_values(critic, score_q, q, div_mode, n_probes, rng)

    def spread(w):
        return float(np.sqrt(np.sum((w - w.mean()) ** 2)) / w.size)

    denom = spread(w_p) + spread(w_q)
    if denom < _DENOM_EPS:
        raise DegenerateWitnessError(
            "witness values are constant on both sample sets"
        )
    return float(w_p.mean() / denom)
