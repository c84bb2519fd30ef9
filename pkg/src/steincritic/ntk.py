"""Empirical checks of the lazy-training picture.

At initialization the critic induces the matrix-valued tangent kernel
K0(x, x') = J(x) J(x')^T built from per-point parameter Jacobians J(x) of
shape (d, M).  On n reference points the kernel operator against the
empirical measure is the (nd, nd) matrix A = G / n acting on stacked
vector fields.  Three dynamics are compared, all starting from the zero
function (output centering makes that exact):

* gradient descent on the reference-point objective driven by
  lam f(x) - f*(x), which is the network training the theory describes;
* the forward-Euler kernel flow  v <- v - eta A (lam v - f*);
* the closed-form spectral solution, where each eigen-coefficient of
  lam v(t) - f* decays as -c_k exp(-t lam mu_k) and null-space components
  persist.

The deviation || lam u(t) - lam v(t) || / ||f*|| at the rescaled time
t = c / lam shrinks as lam grows; lazy_deviation measures that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from .critic import MlpCritic, init_critic, value_grad
from .distributions import OptimalCritic, make_paper_mixture

__all__ = [
    "NtkGram",
    "EigSystem",
    "LazyRunReport",
    "ntk_gram",
    "eig_sym_psd",
    "kernel_ode_euler",
    "spectral_solution",
    "gd_trajectory",
    "lazy_deviation",
    "MAX_DENSE_SIZE",
]

# Dense (nd x nd) assembly and eigensolve are capped at desk scale.
MAX_DENSE_SIZE = 2000


@dataclass
class NtkGram:
    points: np.ndarray          # (n, d)
    gram: np.ndarray            # (n d, n d), block (i, j) = J(x_i) J(x_j)^T
    snapshot_id: str = ""

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]


def ntk_gram(critic, points, snapshot_id=""):
    """Zero-time tangent-kernel Gram matrix on the given reference points.

    The critic should be at the parameter snapshot of interest (typically
    its initialization).
    """
    x = np.asarray(points, dtype=float)
    if x.ndim != 2:
        raise ValueError("points must be an (n, d) matrix")
    n, d = x.shape
    if n * d > MAX_DENSE_SIZE:
        raise ValueError(
            f"dense Gram would be {n * d} x {n * d}; the cap is "
            f"{MAX_DENSE_SIZE}. Use fewer reference points."
        )
    jac = critic.param_jacobian(x)          # (n, d, M)
    flat = jac.reshape(n * d, -1)
    gram = flat @ flat.T
    gram = 0.5 * (gram + gram.T)
    return NtkGram(points=x, gram=gram, snapshot_id=snapshot_id)


@dataclass
class EigSystem:
    """Eigenvalues (descending, clamped at zero) and orthonormal
    eigenvectors of the empirical kernel operator G / n."""

    eigenvalues: np.ndarray     # (nd,)
    vectors: np.ndarray         # (nd, nd), columns
    n: int

    @property
    def mu_max(self):
        return float(self.eigenvalues[0])


def _gram_array(gram):
    return gram.gram if isinstance(gram, NtkGram) else np.asarray(gram, dtype=float)


def eig_sym_psd(gram, n):
    """Full symmetric eigendecomposition of G / n in descending order.

    Small negative eigenvalues within -1e-10 of the top one are clamped to
    zero; anything more negative, or a non-symmetric input, is an error.
    """
    g = _gram_array(gram)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError("the Gram matrix must be square")
    scale = float(np.max(np.abs(g))) or 1.0
    if np.max(np.abs(g - g.T)) > 1e-10 * scale:
        raise ValueError("the Gram matrix is not symmetric within tolerance")
    a = 0.5 * (g + g.T) / n
    vals, vecs = np.linalg.eigh(a)
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()
    top = max(vals[0], 0.0)
    if np.any(vals < -1e-8 * max(top, 1e-300)):
        raise ValueError("the Gram matrix is not positive semidefinite")
    vals[vals < 0.0] = 0.0
    return EigSystem(eigenvalues=vals, vectors=vecs, n=n)


def kernel_ode_euler(gram, n, f_star_values, lam, t_end, eta,
                     record_steps=None):
    """Forward-Euler integration of  v' = -(G/n)(lam v - f*),  v(0) = 0.

    Returns (times, values) with values[k] the stacked field at times[k].
    record_steps selects the step indices to keep (the final step is always
    included); by default about 64 evenly spaced snapshots are kept.
    Requires eta * lam * mu_max < 2 for stability and raises if the iterate
    norm blows up anyway.
    """
    a = _gram_array(gram) / n
    f_star = np.asarray(f_star_values, dtype=float).ravel()
    if f_star.size != a.shape[0]:
        raise ValueError("f* values must stack to the Gram size")
    if eta <= 0 or t_end <= 0:
        raise ValueError("need positive eta and t_end")
    mu_max = float(np.linalg.eigvalsh(a)[-1])
    if eta * lam * mu_max >= 2.0:
        raise ValueError(
            f"unstable step: eta lam mu_max = {eta * lam * mu_max:.3g} >= 2"
        )
    n_steps = max(1, int(round(t_end / eta)))
    if record_steps is None:
        stride = max(1, n_steps // 64)
        record_steps = list(range(stride, n_steps + 1, stride))
    keep = sorted(set(int(s) for s in record_steps) | {n_steps})

    v = np.zeros_like(f_star)
    limit = 1e6 * (1.0 + np.linalg.norm(f_star) / max(lam, 1e-300))
    times, values = [], []
    for step in range(1, n_steps + 1):
        v = v - eta * (a @ (lam * v - f_star))
        if step in keep:
            nv = float(np.linalg.norm(v))
            if not np.isfinite(nv) or nv > limit:
                raise FloatingPointError("kernel ODE integration blew up")
            times.append(step * eta)
            values.append(v.copy())
    return np.array(times), np.array(values)


def spectral_solution(eig: EigSystem, f_star_values, lam, t):
    """Closed-form kernel flow at time t: lam v(t) = f* - V e^{-t lam M} V^T f*.

    Null-space components of f* persist unchanged (their decay factor is 1).
    """
    f_star = np.asarray(f_star_values, dtype=float).ravel()
    if t < 0:
        raise ValueError("time must be nonnegative")
    c = eig.vectors.T @ f_star
    decay = np.exp(-t * lam * eig.eigenvalues)
    return (f_star - eig.vectors @ (decay * c)) / lam


def gd_trajectory(critic, points, f_star_values, lam, t_end, eta_lr,
                  record_steps=None):
    """Full-batch gradient descent of the critic toward f*/lam on the
    reference points, reported in continuous time t = steps * eta_lr.

    The loss being descended is the reference-point quadratic objective
    whose gradient is mean_i J(x_i)^T (lam f(x_i) - f*(x_i)) -- the
    finite-point realization of the gradient-flow dynamic the kernel ODE
    linearizes.  Output centering is applied internally so u(. , 0) = 0
    exactly.  Returns (times, values) with stacked u(t) snapshots.
    """
    x = np.asarray(points, dtype=float)
    n, d = x.shape
    f_star = np.asarray(f_star_values, dtype=float).reshape(n, d)
    if eta_lr <= 0 or t_end <= 0:
        raise ValueError("need positive eta_lr and t_end")
    work = critic.with_centering()
    n_steps = max(1, int(round(t_end / eta_lr)))
    if record_steps is None:
        stride = max(1, n_steps // 64)
        record_steps = list(range(stride, n_steps + 1, stride))
    keep = sorted(set(int(s) for s in record_steps) | {n_steps})

    times, values = [], []
    for step in range(1, n_steps + 1):
        f = work.forward(x)
        grad = value_grad(work, x, (lam * f - f_star) / n)
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError("gradient descent blew up")
        work.params = work.params - eta_lr * grad
        if step in keep:
            times.append(step * eta_lr)
            values.append(work.forward(x).ravel())
    return np.array(times), np.array(values)


@dataclass
class LazyRunReport:
    """Deviation curves for one (lambda, seed) cell."""

    lam: float
    seed: int
    times: np.ndarray
    dev_rel: np.ndarray         # ||lam u - lam v||_phat / ||f*||_phat
    ubar_err: np.ndarray        # ||lam v - f*||_phat / ||f*||_phat
    width: int
    n: int
    eta: float
    mu_max: float
    # diagnostics: share of ||f*||^2 captured by eigendirections above
    # 1e-6 * mu_max (the theory's tail mass is one minus this)
    f_star_captured: float = math.nan

    def final_dev(self):
        return float(self.dev_rel[-1])


def _phat_norm(stacked, n):
    return float(np.linalg.norm(stacked)) / math.sqrt(n)


def lazy_deviation(width, n, d, lam_grid, c=1.0, seeds=(0, 1, 2, 3, 4),
                   p=None, q=None, eta_factor=1e-3, n_record=8):
    """Deviation between network GD and the zero-time kernel flow at the
    rescaled time t = c / lam, per (lambda, seed) cell.

    Each seed fixes one draw of reference points and one initialization,
    shared across the lambda grid so the comparison is paired.  Both
    dynamics are integrated with the same step eta = eta_factor /
    (lam mu_max).  Defaults to the benchmark 2D-style mixture pair when no
    distributions are given.
    """
    lam_grid = list(lam_grid)
    if len(lam_grid) < 1:
        raise ValueError("the lambda grid is empty")
    if p is None or q is None:
        p, q = make_paper_mixture(d, 0.5, 0.8)
    f_star_field = OptimalCritic(p, q)

    reports = []
    for seed in seeds:
        rng = np.random.default_rng([int(seed), 0xEC])
        points = p.sample(n, rng)
        critic0 = init_critic(d, width, rng)
        gram = ntk_gram(critic0, points, snapshot_id=f"seed={seed}")
        eig = eig_sym_psd(gram, n)
        mu_max = eig.mu_max
        f_star = f_star_field.forward(points).ravel()
        norm_f = _phat_norm(f_star, n)
        coeff = eig.vectors.T @ f_star
        captured = float(
            np.sum(coeff[eig.eigenvalues > 1e-6 * mu_max] ** 2)
            / max(np.sum(coeff**2), 1e-300)
        )
        for lam in lam_grid:
            t_end = c / lam
            eta = eta_factor / (lam * mu_max)
            n_steps = max(1, int(round(t_end / eta)))
            stride = max(1, n_steps // n_record)
            record = list(range(stride, n_steps + 1, stride))
            times_u, u_vals = gd_trajectory(
                critic0, points, f_star, lam, t_end, eta, record)
            times_v, v_vals = kernel_ode_euler(
                gram, n, f_star, lam, t_end, eta, record)
            assert np.allclose(times_u, times_v)
            dev = np.array([
                lam * _phat_norm(u - v, n) / norm_f
                for u, v in zip(u_vals, v_vals)
            ])
            verr = np.array([
                _phat_norm(lam * v - f_star, n) / norm_f for v in v_vals
            ])
            reports.append(LazyRunReport(
                lam=float(lam), seed=int(seed), times=times_u, dev_rel=dev,
                ubar_err=verr, width=width, n=n, eta=eta, mu_max=mu_max,
                f_star_captured=captured,
            ))
    return reports
