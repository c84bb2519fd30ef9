"""Two-hidden-layer Swish MLP critic with hand-derived derivatives.

The critic maps R^d -> R^d through three affine layers (d -> h -> h -> d)
with Swish activation s(z) = z * sigmoid(z) on the hidden layers.  All
training math is double precision and written out by hand: forward values,
the divergence (trace of the input Jacobian) in exact or Hutchinson-probed
form, the full parameter gradient of the regularized Stein loss including
the divergence cross term, and per-point parameter Jacobians.  There is no
autodiff anywhere.

Parameters live in one flat vector with layer-major, row-major packing:

    [W1 (h x d), b1 (h), W2 (h x h), b2 (h), W3 (d x h), b3 (d)]

so pack/unpack round trips are bit-exact by construction.
"""

from __future__ import annotations

import numpy as np

from ._util import as_batch, rademacher, sigmoid

__all__ = [
    "MlpCritic",
    "NonFiniteLossError",
    "init_critic",
    "param_count",
    "loss_and_grad",
    "value_grad",
    "default_div_mode",
    "EXACT_DIM_LIMIT",
]

# Exact divergence costs d forward-mode passes; beyond this input dimension
# the default switches to single-probe Hutchinson.
EXACT_DIM_LIMIT = 32


class NonFiniteLossError(FloatingPointError):
    """Raised when the Stein loss turns non-finite (training has diverged)."""


def _swish_family(z, derivs):
    """Return s(z) plus, when asked, s'(z) and s''(z)."""
    sg = sigmoid(z)
    s = z * sg
    if not derivs:
        return s, None, None
    d1 = sg * (1.0 + z * (1.0 - sg))
    d2 = sg * (1.0 - sg) * (2.0 + z * (1.0 - 2.0 * sg))
    return s, d1, d2


def param_count(d, h):
    return h * (d + 1) + h * (h + 1) + d * (h + 1)


def _stacked_matmul(a, b):
    """a (r, h) @ b (m, h, P) -> (m, r, P) as a single GEMM."""
    m, h, p = b.shape
    flat = a @ b.transpose(1, 0, 2).reshape(h, m * p)
    return flat.reshape(a.shape[0], m, p).transpose(1, 0, 2)


class _Act:
    """Per-batch activation bundle for one parameter vector."""

    __slots__ = ("a1", "d1", "e1", "a2", "d2", "e2", "y")

    def __init__(self, x, weights, derivs):
        w1, b1, w2, b2, w3, b3 = weights
        z1 = x @ w1.T + b1
        self.a1, self.d1, self.e1 = _swish_family(z1, derivs)
        z2 = self.a1 @ w2.T + b2
        self.a2, self.d2, self.e2 = _swish_family(z2, derivs)
        self.y = self.a2 @ w3.T + b3


class MlpCritic:
    """MLP critic over a flat parameter vector, with optional output
    centering against a frozen reference copy (f(x) = net(x, theta) -
    net(x, theta_ref), used to realize an exactly-zero initial function)."""

    def __init__(self, d, h, params=None, ref=None):
        self.d = int(d)
        self.h = int(h)
        if self.d < 1 or self.h < 1:
            raise ValueError("need d >= 1 and h >= 1")
        m = param_count(self.d, self.h)
        if params is None:
            params = np.zeros(m)
        params = np.asarray(params, dtype=float)
        if params.shape != (m,):
            raise ValueError(f"expected {m} parameters, got {params.shape}")
        self.params = params
        if ref is not None:
            ref = np.asarray(ref, dtype=float)
            if ref.shape != (m,):
                raise ValueError("reference parameters have the wrong length")
        self.ref = ref

    # -- packing -----------------------------------------------------------

    @property
    def n_params(self):
        return self.params.size

    def _slices(self):
        d, h = self.d, self.h
        sizes = [h * d, h, h * h, h, d * h, d]
        offs = np.cumsum([0] + sizes)
        return [slice(offs[i], offs[i + 1]) for i in range(6)]

    def unpack(self, flat=None):
        """View the flat vector as (W1, b1, W2, b2, W3, b3) without copying."""
        flat = self.params if flat is None else flat
        d, h = self.d, self.h
        s = self._slices()
        return (
            flat[s[0]].reshape(h, d),
            flat[s[1]],
            flat[s[2]].reshape(h, h),
            flat[s[3]],
            flat[s[4]].reshape(d, h),
            flat[s[5]],
        )

    @staticmethod
    def pack(w1, b1, w2, b2, w3, b3):
        return np.concatenate([w1.ravel(), b1, w2.ravel(), b2, w3.ravel(), b3])

    def copy(self):
        ref = None if self.ref is None else self.ref.copy()
        return MlpCritic(self.d, self.h, self.params.copy(), ref)

    def with_centering(self):
        """Copy whose output is centered at the current parameters."""
        return MlpCritic(self.d, self.h, self.params.copy(), self.params.copy())

    def scale_output(self, s):
        """Copy with the final affine layer scaled by s (realizes s * f)."""
        out = self.copy()
        for flat in ([out.params] if out.ref is None else [out.params, out.ref]):
            _, _, _, _, w3, b3 = out.unpack(flat)
            w3 *= s
            b3 *= s
        return out

    def _act(self, x, flat=None, derivs=False):
        return _Act(x, self.unpack(flat), derivs)

    # -- forward and divergence ---------------------------------------------

    def forward(self, x):
        x, single = as_batch(x, self.d)
        y = self._act(x).y
        if self.ref is not None:
            y = y - self._act(x, self.ref).y
        return y[0] if single else y

    __call__ = forward

    def _probe_qf(self, x, flat, c1, u3, act=None):
        """sum over the probe axis is NOT taken: returns (m, P) quadratic
        forms u_p . (J v_p), for c1 = W1 V and u3 = W3^T U as (m, h, P)."""
        w1, b1, w2, b2, w3, b3 = self.unpack(flat)
        if act is None:
            act = self._act(x, flat, derivs=True)
        t1 = act.d1[:, :, None] * c1
        c2 = _stacked_matmul(w2, t1)
        t2 = act.d2[:, :, None] * c2
        return np.einsum("mhp,mhp->mp", u3, t2)

    def _exact_probe_arrays(self, m, flat):
        w1, _, _, _, w3, _ = self.unpack(flat)
        c1 = np.broadcast_to(w1, (m, self.h, self.d))
        u3 = np.broadcast_to(w3.T, (m, self.h, self.d))
        return c1, u3

    def divergence_exact(self, x):
        """Trace of the input Jacobian via d forward-mode passes."""
        x, single = as_batch(x, self.d)
        m = x.shape[0]
        c1, u3 = self._exact_probe_arrays(m, None)
        div = self._probe_qf(x, None, c1, u3).sum(axis=1)
        if self.ref is not None:
            c1r, u3r = self._exact_probe_arrays(m, self.ref)
            div = div - self._probe_qf(x, self.ref, c1r, u3r).sum(axis=1)
        return div[0] if single else div

    def quadratic_forms(self, x, probes):
        """v^T J_f(x) v for explicit probes (m, P, d); returns (m, P)."""
        x, _ = as_batch(x, self.d)
        probes = np.asarray(probes, dtype=float)
        qf = self._qf_for_params(x, None, probes)
        if self.ref is not None:
            qf = qf - self._qf_for_params(x, self.ref, probes)
        return qf

    def _qf_for_params(self, x, flat, probes):
        w1, _, _, _, w3, _ = self.unpack(flat)
        c1 = np.einsum("hd,mpd->mhp", w1, probes)
        u3 = np.einsum("jh,mpj->mhp", w3, probes)
        return self._probe_qf(x, flat, c1, u3)

    def divergence_hutchinson(self, x, n_probes, rng):
        """Unbiased divergence estimate with i.i.d. Rademacher probes."""
        if n_probes < 1:
            raise ValueError("need at least one probe")
        x, single = as_batch(x, self.d)
        probes = rademacher(rng, (x.shape[0], n_probes, self.d))
        div = self.quadratic_forms(x, probes).mean(axis=1)
        return div[0] if single else div

    def divergence(self, x, div_mode="exact", n_probes=1, rng=None):
        if div_mode == "exact":
            return self.divergence_exact(x)
        if div_mode == "hutchinson":
            if rng is None:
                raise ValueError("hutchinson mode needs an rng for its probes")
            return self.divergence_hutchinson(x, n_probes, rng)
        raise ValueError(f"unknown divergence mode {div_mode!r}")

    # -- parameter Jacobian ---------------------------------------------------

    def param_jacobian(self, x):
        """d f(x) / d theta per point, shape (m, d, M) in packing order.

        The centering reference is constant in theta, so the Jacobian is the
        same with or without centering.
        """
        x, _ = as_batch(x, self.d)
        m = x.shape[0]
        d, h = self.d, self.h
        w1, b1, w2, b2, w3, b3 = self.unpack()
        act = self._act(x, derivs=True)

        z2bar = w3[None, :, :] * act.d2[:, None, :]          # (m, d, h)
        a1bar = np.einsum("mja,ab->mjb", z2bar, w2)
        z1bar = a1bar * act.d1[:, None, :]

        jac = np.empty((m, d, self.n_params))
        s = self._slices()
        jac[:, :, s[0]] = np.einsum("mjh,mi->mjhi", z1bar, x).reshape(m, d, h * d)
        jac[:, :, s[1]] = z1bar
        jac[:, :, s[2]] = np.einsum("mjh,mb->mjhb", z2bar, act.a1).reshape(m, d, h * h)
        jac[:, :, s[3]] = z2bar
        w3block = np.zeros((m, d, d, h))
        idx = np.arange(d)
        w3block[:, idx, idx, :] = act.a2[:, None, :]
        jac[:, :, s[4]] = w3block.reshape(m, d, d * h)
        jac[:, :, s[5]] = np.broadcast_to(np.eye(d), (m, d, d))
        return jac


def init_critic(d, h, rng, scheme="fan_in_uniform"):
    """Fresh critic: weights i.i.d. Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)),
    biases zero."""
    if scheme != "fan_in_uniform":
        raise ValueError(f"unknown init scheme {scheme!r}")
    critic = MlpCritic(d, h)
    w1, b1, w2, b2, w3, b3 = critic.unpack()
    for w, fan_in in ((w1, d), (w2, h), (w3, h)):
        bound = 1.0 / np.sqrt(fan_in)
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return critic


def default_div_mode(d):
    return "exact" if d <= EXACT_DIM_LIMIT else "hutchinson"


def value_grad(critic, x, cotangents, act=None):
    """Parameter gradient of sum_i r_i . f(x_i) for cotangents r (m, d).

    This is the plain backward pass; the divergence cross term is handled
    separately in loss_and_grad.
    """
    x, _ = as_batch(x, critic.d)
    r = np.asarray(cotangents, dtype=float)
    w1, b1, w2, b2, w3, b3 = critic.unpack()
    if act is None:
        act = critic._act(x, derivs=True)

    g_w3 = r.T @ act.a2
    g_b3 = r.sum(axis=0)
    gz2 = (r @ w3) * act.d2
    g_w2 = gz2.T @ act.a1
    g_b2 = gz2.sum(axis=0)
    gz1 = (gz2 @ w2) * act.d1
    g_w1 = gz1.T @ x
    g_b1 = gz1.sum(axis=0)
    return MlpCritic.pack(g_w1, g_b1, g_w2, g_b2, g_w3, g_b3)


def _div_and_grad(critic, x, probes_v, act):
    """Per-sample divergence values and the parameter gradient of their sum.

    probes_v None means exact mode (all d coordinate directions); otherwise
    probes_v is an (m, P, d) tensor and the per-sample divergence is the mean
    of the P quadratic forms.  Gradients are with respect to the live
    parameters only (the centering reference is constant).
    """
    m = x.shape[0]
    d, h = critic.d, critic.h
    w1, b1, w2, b2, w3, b3 = critic.unpack()

    if probes_v is None:
        v = None
        c1 = np.broadcast_to(w1, (m, h, d))
        u3 = np.broadcast_to(w3.T, (m, h, d))
        probe_scale = 1.0
    else:
        v = probes_v
        vt = np.ascontiguousarray(v.transpose(0, 2, 1))
        c1 = _stacked_matmul(w1, vt)
        u3 = _stacked_matmul(w3.T, vt)
        probe_scale = 1.0 / v.shape[1]

    t1 = act.d1[:, :, None] * c1
    c2 = _stacked_matmul(w2, t1)
    t2 = act.d2[:, :, None] * c2
    div = probe_scale * np.einsum("mhp,mhp->mp", u3, t2).sum(axis=1)

    c2bar = act.d2[:, :, None] * u3
    z2bar = act.e2[:, :, None] * u3 * c2
    t1bar = _stacked_matmul(w2.T, c2bar)
    a1bar = _stacked_matmul(w2.T, z2bar)
    z1bar = act.d1[:, :, None] * a1bar + act.e1[:, :, None] * t1bar * c1
    c1bar = act.d1[:, :, None] * t1bar

    def _contract_hh(lhs, rhs):
        # sum_{m,p} lhs[m,a,p] rhs[m,b,p] -> (a, b), as one GEMM
        p = lhs.shape[2]
        return (lhs.transpose(1, 0, 2).reshape(h, m * p)
                @ rhs.transpose(1, 0, 2).reshape(h, m * p).T)

    if v is None:
        g_w3 = t2.sum(axis=0).T
        g_w1 = c1bar.sum(axis=0)
    else:
        g_w3 = np.einsum("mpj,mhp->jh", v, t2)
        g_w1 = np.einsum("mhp,mpd->hd", c1bar, v)
    g_w2 = _contract_hh(c2bar, t1) + z2bar.sum(axis=2).T @ act.a1
    g_b2 = z2bar.sum(axis=(0, 2))
    g_w1 = g_w1 + z1bar.sum(axis=2).T @ x
    g_b1 = z1bar.sum(axis=(0, 2))
    g_b3 = np.zeros(d)

    grad = MlpCritic.pack(g_w1, g_b1, g_w2, g_b2, g_w3, g_b3)
    return div, probe_scale * grad


def loss_and_grad(critic, batch, score_q, lam, div_mode="exact", n_probes=1,
                  rng=None):
    """Empirical Stein loss mean(-T_q f + lam/2 ||f||^2) and its exact
    parameter gradient, including the theta-derivative of the divergence.

    In hutchinson mode the value and gradient are exact for the probe-smoothed
    objective; probes are drawn fresh from rng on every call.  Raises
    NonFiniteLossError when the loss leaves the reals, which callers treat as
    a diverged run.
    """
    x, _ = as_batch(batch, critic.d)
    if lam <= 0:
        raise ValueError("the regularization weight must be positive")
    m = x.shape[0]
    s = score_q.score(x)

    if div_mode == "exact":
        probes = None
    elif div_mode == "hutchinson":
        if rng is None:
            raise ValueError("hutchinson mode needs an rng for its probes")
        probes = rademacher(rng, (m, n_probes, critic.d))
    else:
        raise ValueError(f"unknown divergence mode {div_mode!r}")

    # overflow en route to a non-finite loss is the handled divergence signal
    with np.errstate(over="ignore", invalid="ignore"):
        act = critic._act(x, derivs=True)
        f = act.y
        div, div_grad = _div_and_grad(critic, x, probes, act)
        if critic.ref is not None:
            ref_view = MlpCritic(critic.d, critic.h, critic.ref)
            f = f - ref_view._act(x).y
            if probes is None:
                div = div - ref_view.divergence_exact(x)
            else:
                div = div - ref_view.quadratic_forms(x, probes).mean(axis=1)

        witness = np.einsum("mi,mi->m", s, f) + div
        loss = float(np.mean(-witness + 0.5 * lam * np.einsum("mi,mi->m", f, f)))
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"Stein loss is {loss!r}")

    cot = (lam * f - s) / m
    grad = value_grad(critic, x, cot, act=act) - div_grad / m
    return loss, grad
