import numpy as np
import pytest

from steincritic import (MlpCritic, OptimalCritic, ScoreField, eig_sym_psd,
                         gd_trajectory, init_critic, kernel_ode_euler,
                         lazy_deviation, make_paper_mixture, ntk_gram,
                         spectral_solution)
from steincritic.critic import value_grad
from steincritic.ntk import MAX_DENSE_SIZE, NtkGram

from util import fd_grad, max_rel_err, rebuild_critic


@pytest.fixture(scope="module")
def small_setting():
    rng = np.random.default_rng(0)
    p, q = make_paper_mixture(2, 0.5, 0.8)
    points = p.sample(50, rng)
    critic = init_critic(2, 32, rng)
    return p, q, points, critic


class LinearProbeCritic:
    """f_j(x) = theta_j . phi(x) with fixed features: the tangent kernel is
    phi(x).phi(x') times the identity block."""

    def __init__(self, features, d):
        self.features = features
        self.d = d

    def param_jacobian(self, x):
        phi = self.features(x)                      # (m, k)
        m, k = phi.shape
        jac = np.zeros((m, self.d, self.d * k))
        for j in range(self.d):
            jac[:, j, j * k:(j + 1) * k] = phi
        return jac


class TestNtkGram:
    def test_linear_probe_block_structure(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((6, 2))
        probe = LinearProbeCritic(lambda v: np.c_[v, np.ones(len(v))], d=2)
        gram = ntk_gram(probe, x)
        phi = np.c_[x, np.ones(6)]
        inner = phi @ phi.T
        for i in range(6):
            for j in range(6):
                block = gram.gram[2 * i:2 * i + 2, 2 * j:2 * j + 2]
                np.testing.assert_allclose(block, inner[i, j] * np.eye(2),
                                           atol=1e-12)

    def test_symmetry_and_psd(self, small_setting):
        _, _, points, critic = small_setting
        gram = ntk_gram(critic, points)
        assert np.max(np.abs(gram.gram - gram.gram.T)) < 1e-10
        vals = np.linalg.eigvalsh(gram.gram)
        assert vals.min() >= -1e-8 * vals.max()

    def test_blocks_match_finite_difference_jacobians(self):
        rng = np.random.default_rng(2)
        critic = init_critic(2, 6, rng)
        x = rng.standard_normal((3, 2))
        gram = ntk_gram(critic, x)

        def out_fn(th, i, j):
            return rebuild_critic(critic, th).forward(x[i])[j]

        jacs = np.empty((3, 2, critic.n_params))
        for i in range(3):
            for j in range(2):
                jacs[i, j] = fd_grad(lambda th: out_fn(th, i, j), critic.params)
        flat = jacs.reshape(6, -1)
        np.testing.assert_allclose(gram.gram, flat @ flat.T, rtol=1e-5, atol=1e-8)

    def test_dense_cap_enforced(self):
        critic = MlpCritic(3, 4)
        with pytest.raises(ValueError):
            ntk_gram(critic, np.zeros((MAX_DENSE_SIZE, 3)))


class TestEigSymPsd:
    def test_identity_matrix(self):
        eig = eig_sym_psd(np.eye(5), n=1)
        np.testing.assert_allclose(eig.eigenvalues, np.ones(5))

    def test_scaling_by_point_count(self):
        eig = eig_sym_psd(4.0 * np.eye(6), n=2)
        np.testing.assert_allclose(eig.eigenvalues, np.full(6, 2.0))

    def test_rank_bounded_by_parameter_count(self, small_setting):
        _, _, points, critic = small_setting
        gram = ntk_gram(critic, points)
        eig = eig_sym_psd(gram, len(points))
        rank = int(np.sum(eig.eigenvalues > 1e-8 * eig.mu_max))
        assert rank <= min(len(points) * 2, critic.n_params)

    def test_reconstruction(self, small_setting):
        _, _, points, critic = small_setting
        gram = ntk_gram(critic, points)
        n = len(points)
        eig = eig_sym_psd(gram, n)
        recon = (eig.vectors * eig.eigenvalues) @ eig.vectors.T
        assert np.max(np.abs(recon - gram.gram / n)) <= 1e-8 * np.max(np.abs(gram.gram))
        ortho = eig.vectors.T @ eig.vectors
        assert np.max(np.abs(ortho - np.eye(ortho.shape[0]))) < 1e-10

    def test_asymmetric_input_rejected(self):
        g = np.eye(4)
        g[0, 1] = 0.5
        with pytest.raises(ValueError):
            eig_sym_psd(g, 1)


class TestKernelOdeAndSpectral:
    def test_zero_target_stays_zero(self):
        g = np.eye(4)
        _, vals = kernel_ode_euler(g, 2, np.zeros(4), 1.0, 1.0, 0.01)
        assert np.all(vals == 0.0)

    def test_scalar_ode_against_exponential(self):
        # G = I, n = 1, lam = 1, f* = 1: lam v(t) = 1 - e^{-t}
        times, vals = kernel_ode_euler(np.eye(1), 1, np.ones(1), 1.0, 2.0, 1e-4)
        expect = 1.0 - np.exp(-times)
        assert np.max(np.abs(vals[:, 0] - expect)) < 1e-3

    def test_spectral_time_zero_is_zero(self, small_setting):
        _, _, points, critic = small_setting
        gram = ntk_gram(critic, points)
        eig = eig_sym_psd(gram, len(points))
        f_star = np.random.default_rng(3).standard_normal(100)
        v0 = spectral_solution(eig, f_star, 2.0, 0.0)
        np.testing.assert_allclose(v0, np.zeros(100), atol=1e-12)

    def test_spectral_long_time_projects_onto_range(self):
        # rank-deficient Gram with an exact null space: the surviving
        # component of f* is exactly its null-space part
        rng = np.random.default_rng(4)
        basis = np.linalg.qr(rng.standard_normal((12, 12)))[0]
        mu = np.array([3.0, 2.0, 1.0, 0.5, 0.1, 0.05] + [0.0] * 6)
        g = (basis * mu) @ basis.T
        g = 0.5 * (g + g.T)
        eig = eig_sym_psd(g, n=1)
        f_star = rng.standard_normal(12)
        lam = 1.0
        v_inf = spectral_solution(eig, f_star, lam, 1e9)
        pos = eig.eigenvalues > 1e-8
        proj = eig.vectors[:, pos] @ (eig.vectors[:, pos].T @ f_star)
        np.testing.assert_allclose(lam * v_inf, proj, atol=1e-7)

    def test_coefficient_level_decay(self, small_setting):
        _, _, points, critic = small_setting
        gram = ntk_gram(critic, points)
        n = len(points)
        eig = eig_sym_psd(gram, n)
        f_star = np.random.default_rng(5).standard_normal(2 * n)
        lam, t = 1.7, 0.8
        v = spectral_solution(eig, f_star, lam, t)
        resid_coeff = eig.vectors.T @ (lam * v - f_star)
        c = eig.vectors.T @ f_star
        keep = eig.eigenvalues > 1e-6
        want = -c[keep] * np.exp(-t * lam * eig.eigenvalues[keep])
        np.testing.assert_allclose(resid_coeff[keep], want, rtol=1e-10, atol=1e-12)

    def test_euler_matches_spectral_closed_form(self, small_setting):
        # the module's central oracle pair
        p, q, points, _ = small_setting
        rng = np.random.default_rng(6)
        critic = init_critic(2, 64, rng)
        gram = ntk_gram(critic, points)
        n = len(points)
        eig = eig_sym_psd(gram, n)
        f_star = OptimalCritic(p, q).forward(points).ravel()
        lam = 2.0
        eta = 1e-3 / (lam * eig.mu_max)
        for t_target in (0.1 / lam, 1.0 / lam, 5.0 / lam):
            step = max(1, round(t_target / eta))
            times, vals = kernel_ode_euler(gram, n, f_star, lam, t_target, eta,
                                           record_steps=[step])
            v_spec = spectral_solution(eig, f_star, lam, times[-1])
            rel = (np.linalg.norm(vals[-1] - v_spec)
                   / max(np.linalg.norm(v_spec), 1e-300))
            assert rel < 1e-3

    def test_unstable_step_rejected(self):
        with pytest.raises(ValueError):
            kernel_ode_euler(np.eye(3), 1, np.ones(3), 10.0, 1.0, 1.0)

    def test_mismatched_fstar_rejected(self):
        with pytest.raises(ValueError):
            kernel_ode_euler(np.eye(4), 2, np.ones(3), 1.0, 1.0, 0.01)


class TestGdTrajectory:
    def test_first_step_follows_negative_gradient(self, small_setting):
        p, q, points, critic = small_setting
        f_star = OptimalCritic(p, q).forward(points)
        lam = 4.0
        eta = 1e-4
        n = len(points)

        # independent FD gradient of the reference-point objective
        work = critic.with_centering()
        ref = work.ref

        def objective(th):
            c = MlpCritic(2, 32, th, ref.copy())
            f = c.forward(points)
            return float(np.sum((lam * f - f_star) ** 2) / (2 * lam * n))

        fd = fd_grad(objective, work.params)
        f0 = work.forward(points)
        analytic = value_grad(work, points, (lam * f0 - f_star) / n)
        assert max_rel_err(analytic, fd) < 1e-5

        # and the trajectory's first step is exactly -eta times that gradient
        _, vals = gd_trajectory(critic, points, f_star, lam, eta, eta)
        stepped = work.copy()
        stepped.params = stepped.params - eta * analytic
        np.testing.assert_allclose(vals[0], stepped.forward(points).ravel(),
                                   atol=1e-12)

    def test_zero_target_keeps_function_zero(self, small_setting):
        _, _, points, critic = small_setting
        lam = 2.0
        times, vals = gd_trajectory(critic, points, np.zeros_like(points),
                                    lam, 1.0 / lam, 1e-3)
        assert np.max(np.abs(lam * vals[-1])) <= 1e-3

    def test_deterministic(self, small_setting):
        p, q, points, critic = small_setting
        f_star = OptimalCritic(p, q).forward(points)
        a = gd_trajectory(critic, points, f_star, 1.0, 0.01, 1e-3)[1]
        b = gd_trajectory(critic, points, f_star, 1.0, 0.01, 1e-3)[1]
        assert np.array_equal(a, b)


@pytest.mark.slow
class TestLazyDeviation:
    def test_monotone_in_lambda_and_small_at_large_lambda(self):
        reports = lazy_deviation(width=64, n=200, d=2,
                                 lam_grid=[0.5, 2.0, 8.0, 128.0],
                                 seeds=(0, 1, 2, 3, 4))
        by_lam = {}
        for r in reports:
            by_lam.setdefault(r.lam, []).append(r.final_dev())
        medians = [float(np.median(by_lam[lam])) for lam in (0.5, 2.0, 8.0)]
        assert medians[0] > medians[1] > medians[2]
        assert float(np.median(by_lam[128.0])) < 0.05

    def test_reports_deterministic(self):
        a = lazy_deviation(width=16, n=30, d=2, lam_grid=[1.0], seeds=(3,),
                           n_record=4)
        b = lazy_deviation(width=16, n=30, d=2, lam_grid=[1.0], seeds=(3,),
                           n_record=4)
        assert np.array_equal(a[0].dev_rel, b[0].dev_rel)
        assert a[0].mu_max == b[0].mu_max

    def test_kernel_error_curve_nonincreasing(self):
        reports = lazy_deviation(width=32, n=50, d=2, lam_grid=[2.0],
                                 seeds=(0,), n_record=8)
        verr = reports[0].ubar_err
        assert np.all(np.diff(verr) <= 1e-12)
