"""Stein-operator evaluation: witness values, the empirical Stein
discrepancy, and the regularized empirical objective.

The witness of a sample x under critic f and model score s_q is

    w(x) = s_q(x) . f(x) + div f(x),

the empirical Stein discrepancy is the witness mean, and the empirical
loss adds the L2 penalty:  mean(-w(x_i) + lam/2 ||f(x_i)||^2).

Witness evaluation over a sample set is chunked so million-point sweeps
(bootstrap pools, fresh-null replicas) stay inside a bounded working set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import as_batch

__all__ = ["WitnessBatch", "witness_values", "witness", "sd_estimate",
           "empirical_loss"]

_CHUNK_ROWS = 200_000


def _divergence(critic, x, div_mode, n_probes, rng):
    if div_mode == "exact":
        return critic.divergence_exact(x)
    if div_mode == "hutchinson":
        if rng is None:
            raise ValueError("hutchinson witness values need an rng")
        return critic.divergence_hutchinson(x, n_probes, rng)
    raise ValueError(f"unknown divergence mode {div_mode!r}")


def witness_values(critic, score_q, x, div_mode="exact", n_probes=1, rng=None):
    """T_q f at each row of x; returns an (m,) vector."""
    x, _ = as_batch(x, critic.d)
    out = np.empty(x.shape[0])
    for lo in range(0, x.shape[0], _CHUNK_ROWS):
        chunk = x[lo:lo + _CHUNK_ROWS]
        f = critic.forward(chunk)
        div = _divergence(critic, chunk, div_mode, n_probes, rng)
        out[lo:lo + _CHUNK_ROWS] = np.einsum("mi,mi->m", score_q.score(chunk), f) + div
    return out


def witness(critic, score_q, x, div_mode="exact", n_probes=1, rng=None):
    """T_q f(x) for a single point."""
    vals = witness_values(critic, score_q, np.atleast_2d(x), div_mode, n_probes, rng)
    return float(vals[0])


def sd_estimate(critic, score_q, samples, div_mode="exact", n_probes=1, rng=None):
    """Sample-average estimator of SD[f]; the GoF test statistic."""
    vals = witness_values(critic, score_q, samples, div_mode, n_probes, rng)
    if vals.size < 1:
        raise ValueError("need at least one sample")
    return float(vals.mean())


def empirical_loss(critic, samples, score_q, lam, div_mode="exact", n_probes=1,
                   rng=None):
    """mean(-T_q f + lam/2 ||f||^2) over the sample set."""
    if lam <= 0:
        raise ValueError("the regularization weight must be positive")
    x, _ = as_batch(samples, critic.d)
    vals = witness_values(critic, score_q, x, div_mode, n_probes, rng)
    sq = 0.0
    for lo in range(0, x.shape[0], _CHUNK_ROWS):
        f = critic.forward(x[lo:lo + _CHUNK_ROWS])
        sq += float(np.einsum("mi,mi->", f, f))
    return float(-vals.mean() + 0.5 * lam * sq / x.shape[0])


@dataclass
class WitnessBatch:
    """Witness values for one sample set under one critic checkpoint.

    The bootstrap resamples these values thousands of times, so they are
    computed once and carried around with their provenance.
    """

    values: np.ndarray
    sample_set: str = ""
    checkpoint: str = ""
    div_mode: str = "exact"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("witness values form a vector")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("witness values must be finite")

    def __len__(self):
        return self.values.size

    def statistic(self):
        """Mean witness value (the Stein discrepancy estimate)."""
        return float(self.values.mean())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("index,witness\n")
            for i, v in enumerate(self.values):
                fh.write(f"{i},{v:.17g}\n")

    @classmethod
    def evaluate(cls, critic, score_q, x, div_mode="exact", n_probes=1,
                 rng=None, sample_set="", checkpoint=""):
        vals = witness_values(critic, score_q, x, div_mode, n_probes, rng)
        return cls(vals, sample_set=sample_set, checkpoint=checkpoint,
                   div_mode=div_mode)
