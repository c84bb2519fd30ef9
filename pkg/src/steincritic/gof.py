"""Goodness-of-fit testing around a trained critic.

The test statistic is the witness mean on the held-out data split.  The
null distribution comes from samples of the model q, either the expensive
way (every bootstrap replica gets fresh q samples) or through the efficient
pool: witness values are computed once on n_pool = r_pool * n_GoF model
samples and the replicas resample n_GoF of them with replacement.  The
threshold is the ceil((1 - alpha) n)-th order statistic of the null
statistics, and rejection is strict inequality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .stein import WitnessBatch, sd_estimate, witness_values
from .training import TrainConfig, train

__all__ = [
    "GofConfig",
    "TestOutcome",
    "PowerResult",
    "test_statistic",
    "null_pool",
    "efficient_null_stats",
    "fresh_null_stats",
    "threshold",
    "run_test",
    "estimate_power",
]


@dataclass(frozen=True)
class GofConfig:
    n_gof: int
    alpha: float = 0.05
    n_boot: int = 500
    r_pool: int = 50
    reuse_pool_across_runs: bool = True
    div_mode: str = "exact"
    n_probes: int = 1

    def __post_init__(self):
        if self.n_gof < 1:
            raise ValueError("n_gof must be positive")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if self.n_boot < 1:
            raise ValueError("n_boot must be positive")
        if self.r_pool < 1:
            raise ValueError("r_pool must be at least 1")

    @property
    def n_pool(self):
        return self.r_pool * self.n_gof


@dataclass
class TestOutcome:
    statistic: float
    threshold: float
    reject: bool
    null_stats: Optional[np.ndarray] = None


def test_statistic(critic, score_q, test_samples, div_mode="exact", n_probes=1,
                   rng=None):
    """Witness mean on the test split; identical to stein.sd_estimate."""
    return sd_estimate(critic, score_q, test_samples, div_mode, n_probes, rng)


def null_pool(critic, score_q, q_sampler, n_pool, rng, div_mode="exact",
              n_probes=1, checkpoint=""):
    """Witness values on n_pool fresh model samples, evaluated once."""
    if n_pool < 1:
        raise ValueError("n_pool must be positive")
    y = q_sampler.sample(n_pool, rng)
    return WitnessBatch.evaluate(
        critic, score_q, y, div_mode, n_probes, rng,
        sample_set=f"q-pool(n={n_pool})", checkpoint=checkpoint,
    )


def _pool_values(pool):
    return pool.values if isinstance(pool, WitnessBatch) else np.asarray(pool)


def efficient_null_stats(pool, n_gof, n_boot, rng):
    """n_boot means of n_gof uniform with-replacement draws from the pool."""
    values = _pool_values(pool)
    if values.size < 1:
        raise ValueError("the pool is empty")
    idx = rng.integers(0, values.size, size=(n_boot, n_gof))
    return values[idx].mean(axis=1)


def fresh_null_stats(critic, score_q, q_sampler, n_gof, n_boot, rng,
                     div_mode="exact", n_probes=1):
    """n_boot statistics, each from its own fresh n_gof model samples."""
    stats = np.empty(n_boot)
    # draw in blocks to bound the working set
    block = max(1, 200_000 // max(n_gof, 1))
    for lo in range(0, n_boot, block):
        hi = min(lo + block, n_boot)
        y = q_sampler.sample((hi - lo) * n_gof, rng)
        w = witness_values(critic, score_q, y, div_mode, n_probes, rng)
        stats[lo:hi] = w.reshape(hi - lo, n_gof).mean(axis=1)
    return stats


def threshold(null_stats, alpha):
    """The ceil((1 - alpha) n)-th order statistic of the null statistics."""
    stats = np.asarray(null_stats, dtype=float)
    if stats.size < 1:
        raise ValueError("need at least one null statistic")
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    rank = math.ceil((1.0 - alpha) * stats.size)
    rank = min(max(rank, 1), stats.size)
    return float(np.sort(stats)[rank - 1])


def run_test(critic, score_q, p_test_samples, q_sampler, cfg: GofConfig, rng,
             pool=None, keep_null_stats=False):
    """One GoF test: statistic on the data split, efficient-bootstrap
    threshold from the pool (built here if not supplied), strict rejection."""
    x = np.asarray(p_test_samples, dtype=float)
    if x.shape[0] != cfg.n_gof:
        raise ValueError(f"expected n_gof={cfg.n_gof} test samples, got {x.shape[0]}")
    stat = test_statistic(critic, score_q, x, cfg.div_mode, cfg.n_probes, rng)
    if pool is None:
        pool = null_pool(critic, score_q, q_sampler, cfg.n_pool, rng,
                         cfg.div_mode, cfg.n_probes)
    stats = efficient_null_stats(pool, cfg.n_gof, cfg.n_boot, rng)
    thresh = threshold(stats, cfg.alpha)
    return TestOutcome(
        statistic=stat,
        threshold=thresh,
        reject=bool(stat > thresh),
        null_stats=stats if keep_null_stats else None,
    )


@dataclass
class PowerResult:
    """Per-replica rejection frequencies; NaN marks a diverged replica."""

    powers: np.ndarray
    n_run: int
    n_gof: int
    alpha: float
    schedule_id: str = ""

    @property
    def n_failed(self):
        return int(np.sum(~np.isfinite(self.powers)))

    @property
    def mean(self):
        ok = self.powers[np.isfinite(self.powers)]
        return float(ok.mean()) if ok.size else math.nan

    @property
    def std(self):
        ok = self.powers[np.isfinite(self.powers)]
        return float(ok.std()) if ok.size else math.nan


def _replica_power(p_source, q_source, train_config, cfg, n_run, seed):
    rng = np.random.default_rng(seed)
    p_train = p_source.sample(train_config.n_tr, rng)
    report = train(p_train, q_source, train_config, rng)
    if report.diverged or report.best_params is None:
        return math.nan
    critic = report.best_critic()
    pool = None
    if cfg.reuse_pool_across_runs:
        pool = null_pool(critic, q_source, q_source, cfg.n_pool, rng,
                         cfg.div_mode, cfg.n_probes)
    rejections = 0
    for _ in range(n_run):
        p_test = p_source.sample(cfg.n_gof, rng)
        out = run_test(critic, q_source, p_test, q_source, cfg, rng, pool=pool)
        rejections += out.reject
    return rejections / n_run


def estimate_power(p_source, q_source, train_config: TrainConfig,
                   cfg: GofConfig, n_run, n_replica, seed=0, threads=1):
    """Monte-Carlo test power over independently trained replicas.

    Each replica trains on a fresh realization of the training split, builds
    one witness pool (reused across its n_run tests unless the config says
    otherwise), and runs n_run tests on fresh data splits, each with its own
    bootstrap threshold.  Replica k uses the seed stream (seed, k).
    """
    if n_run < 1 or n_replica < 1:
        raise ValueError("n_run and n_replica must be positive")
    seeds = [[seed, k] for k in range(n_replica)]
    args = [(p_source, q_source, train_config, cfg, n_run, s) for s in seeds]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            powers = list(pool.map(_replica_power_star, args))
    else:
        powers = [_replica_power(*a) for a in args]
    return PowerResult(
        powers=np.array(powers, dtype=float),
        n_run=n_run,
        n_gof=cfg.n_gof,
        alpha=cfg.alpha,
        schedule_id=train_config.schedule.describe(),
    )


def _replica_power_star(args):
    return _replica_power(*args)
