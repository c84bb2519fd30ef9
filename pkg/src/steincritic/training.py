"""Mini-batch training of the critic under fixed, staged, or adaptive
regularization-weight schedules.

The regularization weight changes only at interval boundaries (every B_w
batches).  At the end of each interval the oracle-free monitor is computed
on a held-out validation split, the learning curves are extended, and the
running best checkpoint (argmin monitor) is updated.  Everything -- the
train/validation split, shuffling, Hutchinson probes, and the adaptive
schedule -- is derived from one seed, so a run is a pure function of
(config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .critic import (MlpCritic, NonFiniteLossError, default_div_mode,
                     init_critic, loss_and_grad)
from .metrics import monitor_mse, mse_q_hat
from .stein import sd_estimate

__all__ = [
    "FixedSchedule",
    "StagedSchedule",
    "AdaptiveSchedule",
    "AdaptiveState",
    "lambda_at",
    "AdamState",
    "adam_update",
    "sgd_update",
    "TrainConfig",
    "IntervalRecord",
    "TrainReport",
    "train",
]


# -- schedules ---------------------------------------------------------------


@dataclass(frozen=True)
class FixedSchedule:
    lam: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")

    def describe(self):
        return f"fixed({self.lam:g})"


@dataclass(frozen=True)
class StagedSchedule:
    """Log-linear staging: interval i runs at max(lam_init beta^i, lam_term)."""

    lam_init: float
    lam_term: float
    beta: float

    def __post_init__(self):
        if not (0.0 < self.beta < 1.0):
            raise ValueError("beta must lie in (0, 1)")
        if self.lam_term <= 0 or self.lam_term > self.lam_init:
            raise ValueError("need 0 < lam_term <= lam_init")

    def describe(self):
        return f"staged({self.lam_init:g},{self.lam_term:g},{self.beta:g})"


@dataclass(frozen=True)
class AdaptiveSchedule:
    """Stage down by beta whenever the monitor worsens, but only after it has
    improved at least once within the current stage."""

    lam_init: float
    lam_term: float
    beta: float

    def __post_init__(self):
        if not (0.0 < self.beta < 1.0):
            raise ValueError("beta must lie in (0, 1)")
        if self.lam_term <= 0 or self.lam_term > self.lam_init:
            raise ValueError("need 0 < lam_term <= lam_init")

    def describe(self):
        return f"adaptive({self.lam_init:g},{self.lam_term:g},{self.beta:g})"


Schedule = Union[FixedSchedule, StagedSchedule, AdaptiveSchedule]


def lambda_at(schedule: StagedSchedule, i: int) -> float:
    """Weight for interval i of a staged schedule; i = 0 is lam_init."""
    if i < 0:
        raise ValueError("interval index must be nonnegative")
    if i == 0:
        return schedule.lam_init
    return max(schedule.lam_init * schedule.beta**i, schedule.lam_term)


class AdaptiveState:
    """Mutable runtime state of an adaptive schedule."""

    def __init__(self, schedule: AdaptiveSchedule):
        self.schedule = schedule
        self.current = schedule.lam_init
        self._prev = None
        self._improved = False

    def observe(self, new_monitor: float) -> float:
        """Feed the freshly computed monitor; returns the weight for the next
        interval."""
        s = self.schedule
        if self._prev is not None:
            if new_monitor > self._prev and self._improved:
                self.current = max(s.beta * self.current, s.lam_term)
                self._improved = False
            elif new_monitor < self._prev:
                self._improved = True
        self._prev = new_monitor
        return self.current


# -- optimizers ---------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment vectors and step counter, PyTorch defaults."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n_params):
        return cls(m=np.zeros(n_params), v=np.zeros(n_params))


def adam_update(state: AdamState, params, grad, lr):
    """One bias-corrected Adam step; returns the updated parameter vector."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient, and moment lengths must match")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad**2
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def sgd_update(params, grad, lr):
    return params - lr * grad


# -- configuration and report --------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run needs besides data and distributions.

    n_tr rows of the provided sample matrix are used; the last n_val of them
    (default: 20 percent) form the held-out validation split for the monitor.
    b_w defaults to the number of batches per epoch.  div_mode "auto" means
    exact divergence up to EXACT_DIM_LIMIT input dimensions, Hutchinson with
    n_probes fresh Rademacher probes per sample beyond it.
    """

    n_tr: int
    schedule: Schedule
    width: int = 512
    batch_size: int = 200
    lr: float = 1e-3
    epochs: int = 60
    n_val: Optional[int] = None
    b_w: Optional[int] = None
    div_mode: str = "auto"
    n_probes: int = 1
    optimizer: str = "adam"
    seed: int = 0
    n_te: int = 2000

    def __post_init__(self):
        if self.n_tr < 2:
            raise ValueError("need at least two training samples")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if self.batch_size < 1 or self.batch_size > self.n_tr:
            raise ValueError("batch size must lie in [1, n_tr]")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.div_mode not in ("auto", "exact", "hutchinson"):
            raise ValueError(f"unknown divergence mode {self.div_mode!r}")
        if self.n_val is not None and not (0 < self.n_val < self.n_tr):
            raise ValueError("n_val must lie strictly inside (0, n_tr)")
        if self.b_w is not None and self.b_w < 1:
            raise ValueError("b_w must be positive")

    def resolved_n_val(self):
        return self.n_val if self.n_val is not None else self.n_tr // 5


@dataclass
class IntervalRecord:
    interval: int
    epoch: float
    lam: float
    monitor: float
    mse_q: float  # NaN when no oracle was supplied
    sd: float


@dataclass
class TrainReport:
    """Per-interval curves plus the best (argmin monitor) and final state."""

    d: int
    width: int
    records: list = field(default_factory=list)
    best_params: Optional[np.ndarray] = None
    best_lam: float = math.nan
    best_interval: int = -1
    best_monitor: float = math.inf
    final_params: Optional[np.ndarray] = None
    final_lam: float = math.nan
    diverged: bool = False
    divergence_note: str = ""
    n_fit: int = 0
    n_val: int = 0
    b_w: int = 0
    div_mode: str = "exact"

    def best_critic(self):
        if self.best_params is None:
            raise ValueError("no checkpoint was recorded (run diverged early)")
        return MlpCritic(self.d, self.width, self.best_params.copy())

    def final_critic(self):
        if self.final_params is None:
            raise ValueError("no final parameters (run diverged early)")
        return MlpCritic(self.d, self.width, self.final_params.copy())

    def lambdas(self):
        return np.array([r.lam for r in self.records])

    def monitors(self):
        return np.array([r.monitor for r in self.records])


# -- the training loop -----------------------------------------------------------


def _schedule_lambda(schedule, interval, adaptive_state):
    if isinstance(schedule, FixedSchedule):
        return schedule.lam
    if isinstance(schedule, StagedSchedule):
        return lambda_at(schedule, interval)
    return adaptive_state.current


def train(p_samples, score_q, config: TrainConfig, rng=None, f_star=None):
    """Train a critic on data samples against the model score.

    p_samples must have at least config.n_tr rows; the first n_tr - n_val
    rows are fitted on, the next n_val drive the monitor.  When f_star is
    given and score_q can sample, an n_te model sample is drawn once and the
    oracle MSE curve is recorded each interval.  A non-finite loss aborts the
    run and marks the report diverged.
    """
    x = np.asarray(p_samples, dtype=float)
    if x.ndim != 2:
        raise ValueError("p_samples must be an (n, d) matrix")
    if x.shape[0] < config.n_tr:
        raise ValueError(f"need at least n_tr={config.n_tr} rows, got {x.shape[0]}")
    d = x.shape[1]

    if rng is None:
        rng = np.random.default_rng(config.seed)

    n_val = config.resolved_n_val()
    n_fit = config.n_tr - n_val
    if n_fit < config.batch_size:
        raise ValueError("the fitting split is smaller than one batch")
    fit = x[:n_fit]
    val = x[n_fit:config.n_tr]

    div_mode = (default_div_mode(d) if config.div_mode == "auto"
                else config.div_mode)
    batches_per_epoch = math.ceil(n_fit / config.batch_size)
    b_w = config.b_w if config.b_w is not None else batches_per_epoch
    total_batches = config.epochs * batches_per_epoch

    critic = init_critic(d, config.width, rng)
    adam = AdamState.zeros(critic.n_params) if config.optimizer == "adam" else None
    adaptive = (AdaptiveState(config.schedule)
                if isinstance(config.schedule, AdaptiveSchedule) else None)

    q_eval = f_star_on_q = None
    if f_star is not None and config.n_te > 0 and getattr(score_q, "can_sample", True):
        q_eval = score_q.sample(config.n_te, rng)
        forward = getattr(f_star, "forward", f_star)
        f_star_on_q = forward(q_eval)
    # Hutchinson monitors reuse one probe stream so curves are comparable
    # across intervals.
    monitor_probe_seed = int(rng.integers(0, 2**63 - 1))

    report = TrainReport(
        d=d, width=config.width, n_fit=n_fit, n_val=n_val, b_w=b_w,
        div_mode=div_mode,
    )

    def record_interval(interval, lam, batches_done):
        mon_rng = (np.random.default_rng(monitor_probe_seed)
                   if div_mode == "hutchinson" else None)
        monitor = monitor_mse(critic, lam, score_q, val, div_mode,
                              config.n_probes, mon_rng)
        sd_rng = (np.random.default_rng(monitor_probe_seed)
                  if div_mode == "hutchinson" else None)
        sd = sd_estimate(critic, score_q, val, div_mode, config.n_probes, sd_rng)
        mq = (mse_q_hat(critic, lam, lambda _x: f_star_on_q, q_eval)
              if q_eval is not None else math.nan)
        report.records.append(IntervalRecord(
            interval=interval,
            epoch=batches_done / batches_per_epoch,
            lam=lam,
            monitor=monitor,
            mse_q=mq,
            sd=sd,
        ))
        if monitor < report.best_monitor:
            report.best_monitor = monitor
            report.best_params = critic.params.copy()
            report.best_lam = lam
            report.best_interval = interval
        if adaptive is not None:
            adaptive.observe(monitor)

    batches_done = 0
    lam = _schedule_lambda(config.schedule, 0, adaptive)
    try:
        for _ in range(config.epochs):
            perm = rng.permutation(n_fit)
            for start in range(0, n_fit, config.batch_size):
                interval = batches_done // b_w
                lam = _schedule_lambda(config.schedule, interval, adaptive)
                batch = fit[perm[start:start + config.batch_size]]
                _, grad = loss_and_grad(
                    critic, batch, score_q, lam, div_mode, config.n_probes, rng
                )
                if config.optimizer == "adam":
                    critic.params = adam_update(adam, critic.params, grad,
                                                config.lr)
                else:
                    critic.params = sgd_update(critic.params, grad, config.lr)
                batches_done += 1
                if batches_done % b_w == 0 or batches_done == total_batches:
                    record_interval((batches_done - 1) // b_w, lam, batches_done)
    except NonFiniteLossError as err:
        report.diverged = True
        report.divergence_note = str(err)
        report.final_params = critic.params.copy()
        report.final_lam = lam
        return report

    report.final_params = critic.params.copy()
    report.final_lam = lam
    return report
