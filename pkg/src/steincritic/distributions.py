"""Sampleable distributions with exact score functions.

Every distribution here exposes the same small surface: ``sample`` (when
available), ``log_density``, ``score`` (gradient of the log density) and
``score_div`` (divergence of the score, i.e. the Laplacian of the log
density).  Scores are what the Stein machinery consumes; log densities
exist so every score can be checked against finite differences of an
exactly normalized density.

All types are immutable after construction and safe to share across
threads.  Sampling takes an explicit ``numpy.random.Generator`` so callers
control the streams.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._util import as_batch as _as_batch
from ._util import logsumexp as _logsumexp

__all__ = [
    "GaussianMixture",
    "GaussBernoulliRBM",
    "ScoreField",
    "OptimalCritic",
    "ScaledCritic",
    "make_paper_mixture",
    "make_1d_pair",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


class GaussianMixture:
    """Finite Gaussian mixture with full covariances.

    Cholesky factors and precision matrices are computed eagerly at
    construction so sampling and scoring are allocation-light per call.
    Responsibilities are always formed in log space (log-sum-exp), which
    keeps scores stable far out in the tails.
    """

    def __init__(self, weights, means, covariances):
        w = np.asarray(weights, dtype=float)
        mu = np.asarray(means, dtype=float)
        cov = np.asarray(covariances, dtype=float)
        if mu.ndim != 2:
            raise ValueError("means must be a (K, d) array")
        k, d = mu.shape
        if w.shape != (k,):
            raise ValueError("weights must have one entry per component")
        if cov.shape != (k, d, d):
            raise ValueError("covariances must be a (K, d, d) array")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if np.max(np.abs(cov - cov.transpose(0, 2, 1))) > 1e-12:
            raise ValueError("covariances must be symmetric")

        self.weights = w
        self.means = mu
        self.covariances = cov
        self.d = d
        self.n_components = k

        # np.linalg.cholesky raises LinAlgError on non-SPD input.
        self._chol = np.linalg.cholesky(cov)
        prec = np.linalg.inv(cov)
        self._prec = 0.5 * (prec + prec.transpose(0, 2, 1))
        resid = np.einsum("kij,kjl->kil", self._prec, cov) - np.eye(d)
        if np.max(np.abs(resid)) > 1e-8:
            raise ValueError("precision * covariance deviates from identity")
        # log of the normalizing constant per component
        self._log_norm = -0.5 * d * _LOG_2PI - np.sum(
            np.log(np.diagonal(self._chol, axis1=1, axis2=2)), axis=1
        )
        with np.errstate(divide="ignore"):
            self._log_w = np.log(w)

        for arr in (self.weights, self.means, self.covariances,
                    self._chol, self._prec, self._log_norm, self._log_w):
            arr.setflags(write=False)

    # -- sampling ----------------------------------------------------------

    def sample(self, n, rng):
        """Draw n i.i.d. points, deterministic given the generator state."""
        return self.sample_with_components(n, rng)[0]

    def sample_with_components(self, n, rng):
        """Like ``sample`` but also returns the drawn component indices."""
        if n < 1:
            raise ValueError("need n >= 1")
        comps = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.d))
        x = self.means[comps] + np.einsum("nij,nj->ni", self._chol[comps], z)
        return x, comps

    # -- densities and scores ---------------------------------------------

    def _component_log_densities(self, x):
        diff = x[:, None, :] - self.means[None, :, :]          # (m, K, d)
        pdiff = np.einsum("kij,mkj->mki", self._prec, diff)    # (m, K, d)
        quad = np.einsum("mki,mki->mk", diff, pdiff)
        return self._log_norm[None, :] - 0.5 * quad, -pdiff

    def log_density(self, x):
        """Exact normalized log density, via log-sum-exp over components."""
        x, single = _as_batch(x, self.d)
        comp_ld, _ = self._component_log_densities(x)
        out = _logsumexp(self._log_w[None, :] + comp_ld, axis=1)
        return out[0] if single else out

    def score(self, x):
        """Gradient of the log density."""
        x, single = _as_batch(x, self.d)
        comp_ld, grads = self._component_log_densities(x)
        logits = self._log_w[None, :] + comp_ld
        logits -= np.max(logits, axis=1, keepdims=True)
        resp = np.exp(logits)
        resp /= resp.sum(axis=1, keepdims=True)
        out = np.einsum("mk,mki->mi", resp, grads)
        return out[0] if single else out

    def score_div(self, x):
        """Divergence of the score (Laplacian of the log density)."""
        x, single = _as_batch(x, self.d)
        comp_ld, grads = self._component_log_densities(x)
        logits = self._log_w[None, :] + comp_ld
        logits -= np.max(logits, axis=1, keepdims=True)
        resp = np.exp(logits)
        resp /= resp.sum(axis=1, keepdims=True)
        score = np.einsum("mk,mki->mi", resp, grads)
        tr_prec = np.trace(self._prec, axis1=1, axis2=2)
        out = (
            -resp @ tr_prec
            + np.einsum("mk,mki,mki->m", resp, grads, grads)
            - np.einsum("mi,mi->m", score, score)
        )
        return out[0] if single else out


class GaussBernoulliRBM:
    """Gauss-Bernoulli RBM with hidden units in {-1, +1}.

    The energy is E(x, h) = -x.B h - b.x - c.h + ||x||^2 / 2, which makes
    the visible score b - x + B tanh(B^T x + c) and the block-Gibbs
    conditionals h_j = +1 with probability sigmoid(2 (B^T x + c)_j) and
    x | h ~ N(Bh + b, I).  For H <= 12 hidden units the log density is
    computed exactly by enumerating the 2^H hidden patterns.
    """

    ENUM_LIMIT = 12

    def __init__(self, coupling, visible_bias, hidden_bias):
        B = np.asarray(coupling, dtype=float)
        b = np.asarray(visible_bias, dtype=float)
        c = np.asarray(hidden_bias, dtype=float)
        if B.ndim != 2:
            raise ValueError("coupling must be a (d, H) matrix")
        d, h = B.shape
        if b.shape != (d,) or c.shape != (h,):
            raise ValueError("bias shapes inconsistent with coupling")
        self.B = B
        self.b = b
        self.c = c
        self.d = d
        self.n_hidden = h
        for arr in (self.B, self.b, self.c):
            arr.setflags(write=False)

    @property
    def has_log_density(self):
        return self.n_hidden <= self.ENUM_LIMIT

    def energy(self, x, h):
        """E(x, h) for a single point and hidden pattern."""
        x = np.asarray(x, dtype=float)
        h = np.asarray(h, dtype=float)
        return float(-x @ self.B @ h - self.b @ x - self.c @ h + 0.5 * x @ x)

    def score(self, x):
        x, single = _as_batch(x, self.d)
        u = x @ self.B + self.c
        out = self.b - x + np.tanh(u) @ self.B.T
        return out[0] if single else out

    def score_div(self, x):
        x, single = _as_batch(x, self.d)
        u = x @ self.B + self.c
        sech2 = 1.0 / np.cosh(u) ** 2
        out = -float(self.d) + sech2 @ np.sum(self.B**2, axis=0)
        return out[0] if single else out

    def _hidden_patterns(self):
        if not self.has_log_density:
            raise ValueError(
                f"enumeration over 2^{self.n_hidden} hidden states refused; "
                f"limit is H <= {self.ENUM_LIMIT}"
            )
        n = self.n_hidden
        grid = np.indices((2,) * n).reshape(n, -1).T
        return 2.0 * grid - 1.0  # (2^H, H) in {-1, +1}

    def log_density(self, x):
        """Exact normalized log density by hidden-state enumeration (H <= 12)."""
        hs = self._hidden_patterns()
        x, single = _as_batch(x, self.d)
        # -E(x,h) = b.x - ||x||^2/2 + (x B + c).h
        act = (x @ self.B + self.c) @ hs.T                      # (m, 2^H)
        base = x @ self.b - 0.5 * np.sum(x**2, axis=1)
        # log Z = log sum_h (2 pi)^{d/2} exp(||Bh + b||^2 / 2 + c.h)
        mean_h = hs @ self.B.T + self.b                         # (2^H, d)
        log_z_terms = 0.5 * np.sum(mean_h**2, axis=1) + hs @ self.c
        log_z = 0.5 * self.d * _LOG_2PI + _logsumexp(log_z_terms, axis=0)
        out = base + _logsumexp(act, axis=1) - log_z
        return out[0] if single else out

    def exact_mean(self):
        """E[x] from the enumerated hidden marginal (H <= 12)."""
        hs = self._hidden_patterns()
        mean_h = hs @ self.B.T + self.b
        logits = 0.5 * np.sum(mean_h**2, axis=1) + hs @ self.c
        logits -= logits.max()
        w = np.exp(logits)
        w /= w.sum()
        return w @ mean_h

    def sample(self, n, rng, n_gibbs=200):
        """n independent chains: init x ~ N(b, I), n_gibbs block sweeps."""
        if n < 1 or n_gibbs < 1:
            raise ValueError("need n >= 1 and n_gibbs >= 1")
        x = self.b + rng.standard_normal((n, self.d))
        for _ in range(n_gibbs):
            p_up = 1.0 / (1.0 + np.exp(-2.0 * (x @ self.B + self.c)))
            h = np.where(rng.random((n, self.n_hidden)) < p_up, 1.0, -1.0)
            x = h @ self.B.T + self.b + rng.standard_normal((n, self.d))
        return x


@dataclass(frozen=True)
class ScoreField:
    """An evaluable score map x -> grad log density, with capability flags."""

    dim: int
    score_fn: Callable[[np.ndarray], np.ndarray]
    sample_fn: Optional[Callable] = None
    log_density_fn: Optional[Callable] = None
    score_div_fn: Optional[Callable] = None
    name: str = ""

    @property
    def d(self):
        return self.dim

    @property
    def can_sample(self):
        return self.sample_fn is not None

    @property
    def has_log_density(self):
        return self.log_density_fn is not None

    @property
    def has_score_div(self):
        return self.score_div_fn is not None

    def score(self, x):
        return self.score_fn(x)

    def sample(self, n, rng):
        if not self.can_sample:
            raise ValueError(f"score field {self.name!r} cannot sample")
        return self.sample_fn(n, rng)

    def log_density(self, x):
        if not self.has_log_density:
            raise ValueError(f"score field {self.name!r} has no log density")
        return self.log_density_fn(x)

    def score_div(self, x):
        if not self.has_score_div:
            raise ValueError(f"score field {self.name!r} has no score divergence")
        return self.score_div_fn(x)

    @classmethod
    def from_distribution(cls, dist, name=""):
        has_ld = getattr(dist, "has_log_density", True)
        return cls(
            dim=dist.d,
            score_fn=dist.score,
            sample_fn=getattr(dist, "sample", None),
            log_density_fn=dist.log_density if has_ld else None,
            score_div_fn=getattr(dist, "score_div", None),
            name=name or type(dist).__name__,
        )


class OptimalCritic:
    """The scaleless optimal critic s_q - s_p, with analytic divergence.

    Identically zero when p and q are the same object.
    """

    def __init__(self, p, q):
        if p.d != q.d:
            raise ValueError("p and q must share a dimension")
        self.p = p
        self.q = q
        self.d = p.d

    def forward(self, x):
        if self.p is self.q:
            x = np.asarray(x, dtype=float)
            return np.zeros_like(x)
        return self.q.score(x) - self.p.score(x)

    __call__ = forward

    def divergence_exact(self, x):
        x = np.asarray(x, dtype=float)
        if self.p is self.q:
            return np.zeros(x.shape[0] if x.ndim == 2 else ())
        return self.q.score_div(x) - self.p.score_div(x)


class ScaledCritic:
    """A critic multiplied by a fixed scalar (e.g. the optimum f*/lambda)."""

    def __init__(self, base, scale):
        self.base = base
        self.scale = float(scale)
        self.d = base.d

    def forward(self, x):
        return self.scale * self.base.forward(x)

    __call__ = forward

    def divergence_exact(self, x):
        return self.scale * self.base.divergence_exact(x)


def make_paper_mixture(d, rho1, omega):
    """The benchmark pair: q is the clean two-component mixture, p carries a
    covariance shift rho1 in the first 2 x 2 block of component 1 and a
    scaled, counter-shifted block (omega, rho2 = -rho1) in component 2.

    Returns (p, q).  Requires d >= 2 and parameters giving SPD covariances.
    """
    if d < 2:
        raise ValueError("the mixture family is defined for d >= 2")
    mu1 = np.zeros(d)
    mu2 = 0.5 * np.ones(d)
    weights = np.array([0.5, 0.5])

    q = GaussianMixture(weights, [mu1, mu2], [np.eye(d), np.eye(d)])

    rho2 = -rho1
    cov1 = np.eye(d)
    cov1[0, 1] = cov1[1, 0] = rho1
    cov2 = np.eye(d)
    cov2[0, 0] = omega**2
    cov2[0, 1] = cov2[1, 0] = omega * rho2
    p = GaussianMixture(weights, [mu1, mu2], [cov1, cov2])
    return p, q


def make_1d_pair():
    """The 1D pair with a closed-form optimal critic: q is an equal mixture
    of unit-variance Gaussians at -1 and 1; p moves the first component to
    -0.8 and shrinks the second to variance 0.25.

    Returns (p, q).
    """
    q = GaussianMixture(
        [0.5, 0.5], [[-1.0], [1.0]], [[[1.0]], [[1.0]]]
    )
    p = GaussianMixture(
        [0.5, 0.5], [[-0.8], [1.0]], [[[1.0]], [[0.25]]]
    )
    return p, q
