"""Neural Stein critics with staged L2 regularization.

Library + CLI for training neural Stein critics, running goodness-of-fit
tests against a model distribution with a known score, benchmarking
against the kernelized Stein discrepancy, and checking lazy-training
(tangent-kernel) predictions at desk scale.
"""

from .critic import (EXACT_DIM_LIMIT, MlpCritic, NonFiniteLossError,
                     default_div_mode, init_critic, loss_and_grad,
                     param_count)
from .distributions import (GaussBernoulliRBM, GaussianMixture, OptimalCritic,
                            ScaledCritic, ScoreField, make_1d_pair,
                            make_paper_mixture)
from .gof import (GofConfig, PowerResult, TestOutcome, efficient_null_stats,
                  estimate_power, fresh_null_stats, null_pool, run_test,
                  test_statistic, threshold)
from .ksd import (RbfKernel, bandwidth_sweep, estimate_ksd_power, ksd_test,
                  median_bandwidth, u_q, u_q_matrix, v_statistic,
                  wild_bootstrap_stats)
from .metrics import (DegenerateWitnessError, MetricValue, monitor_mse,
                      mse_p_hat, mse_q_hat, power_proxy)
from .ntk import (EigSystem, LazyRunReport, NtkGram, eig_sym_psd,
                  gd_trajectory, kernel_ode_euler, lazy_deviation, ntk_gram,
                  spectral_solution)
from .stein import WitnessBatch, empirical_loss, sd_estimate, witness_values
from .training import (AdamState, AdaptiveSchedule, AdaptiveState,
                       FixedSchedule, IntervalRecord, StagedSchedule,
                       TrainConfig, TrainReport, adam_update, lambda_at,
                       sgd_update, train)

__version__ = "0.1.0"
