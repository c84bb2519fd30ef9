"""Shared oracle helpers for the test suite.

These stay deliberately independent of the library's own derivative code:
finite differences, brute-force enumerations, and a tiny two-sample KS
statistic, used to check the analytic implementations.
"""

import numpy as np

from steincritic import MlpCritic


def fd_grad(fun, theta, eps_rel=1e-6):
    """Central finite differences of a scalar function of a flat vector."""
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for r in range(theta.size):
        e = eps_rel * max(1.0, abs(theta[r]))
        tp = theta.copy()
        tp[r] += e
        tm = theta.copy()
        tm[r] -= e
        g[r] = (fun(tp) - fun(tm)) / (2.0 * e)
    return g


def fd_gradient_at_point(fun, x, eps=1e-6):
    """Central finite differences of a scalar function of a point in R^d."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (fun(x + e) - fun(x - e)) / (2.0 * eps)
    return g


def fd_divergence(field, x, eps=1e-5):
    """Central-difference divergence of a vector field at batch rows."""
    x = np.asarray(x, dtype=float)
    m, d = x.shape
    out = np.zeros(m)
    for i in range(d):
        e = np.zeros(d)
        e[i] = eps
        out += (field(x + e)[:, i] - field(x - e)[:, i]) / (2.0 * eps)
    return out


def max_rel_err(a, b, floor=1e-3):
    """Per-coordinate relative error with an absolute floor on the scale."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / scale))


def rebuild_critic(template, theta):
    return MlpCritic(template.d, template.h, np.asarray(theta, dtype=float))


def ks_two_sample(a, b):
    """Two-sample Kolmogorov-Smirnov statistic."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))
