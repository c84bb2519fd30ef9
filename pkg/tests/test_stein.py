import numpy as np
import pytest

from steincritic import (MlpCritic, OptimalCritic, ScaledCritic, ScoreField,
                         WitnessBatch, empirical_loss, init_critic,
                         loss_and_grad, make_paper_mixture, monitor_mse,
                         sd_estimate, witness_values)


@pytest.fixture(scope="module")
def pair2d():
    p, q = make_paper_mixture(2, 0.5, 0.8)
    return ScoreField.from_distribution(p, "p"), ScoreField.from_distribution(q, "q")


def constant_critic(d, c):
    """An MLP whose output is the constant vector c (zero divergence)."""
    crit = MlpCritic(d, 4)
    _, _, _, _, _, b3 = crit.unpack()
    b3[...] = c
    return crit


class TestWitness:
    def test_zero_critic_zero_witness(self, pair2d):
        _, qf = pair2d
        x = np.random.default_rng(0).standard_normal((10, 2))
        w = witness_values(MlpCritic(2, 4), qf, x)
        assert np.array_equal(w, np.zeros(10))

    def test_constant_critic_gives_score_inner_product(self, pair2d):
        _, qf = pair2d
        c = np.array([0.8, -1.2])
        crit = constant_critic(2, c)
        x = np.random.default_rng(1).standard_normal((20, 2))
        w = witness_values(crit, qf, x)
        np.testing.assert_allclose(w, qf.score(x) @ c, atol=1e-12)

    def test_linear_field_harness(self, pair2d):
        # witness machinery on an analytic linear critic f(x) = A x:
        # divergence is tr(A) everywhere
        _, qf = pair2d
        a_mat = np.array([[0.7, -0.3], [0.2, 1.1]])

        class LinearCritic:
            d = 2

            def forward(self, x):
                return x @ a_mat.T

            def divergence_exact(self, x):
                return np.full(x.shape[0], np.trace(a_mat))

        x = np.random.default_rng(20).standard_normal((12, 2))
        w = witness_values(LinearCritic(), qf, x)
        want = np.einsum("mi,mi->m", qf.score(x), x @ a_mat.T) + np.trace(a_mat)
        np.testing.assert_allclose(w, want, atol=1e-14)

    def test_recomposition(self, pair2d):
        _, qf = pair2d
        rng = np.random.default_rng(2)
        crit = init_critic(2, 16, rng)
        x = rng.standard_normal((15, 2))
        w = witness_values(crit, qf, x)
        manual = (np.sum(qf.score(x) * crit.forward(x), axis=1)
                  + crit.divergence_exact(x))
        np.testing.assert_allclose(w, manual, atol=1e-12)

    def test_chunking_matches_single_pass(self, pair2d):
        _, qf = pair2d
        rng = np.random.default_rng(3)
        crit = init_critic(2, 8, rng)
        x = rng.standard_normal((1000, 2))
        import steincritic.stein as stein_mod
        whole = witness_values(crit, qf, x)
        old = stein_mod._CHUNK_ROWS
        try:
            stein_mod._CHUNK_ROWS = 137
            chunked = witness_values(crit, qf, x)
        finally:
            stein_mod._CHUNK_ROWS = old
        np.testing.assert_array_equal(whole, chunked)


class TestSdEstimate:
    def test_mean_of_witness_values(self):
        batch = WitnessBatch(np.array([1.0, 2.0, 3.0]))
        assert batch.statistic() == 2.0

    def test_null_mean_within_monte_carlo_error(self, pair2d):
        # Stein identity: witness has zero mean under the model distribution
        _, qf = pair2d
        crit = init_critic(2, 32, np.random.default_rng(4))
        y = qf.sample(100_000, np.random.default_rng(5))
        w = witness_values(crit, qf, y)
        se = w.std() / np.sqrt(w.size)
        assert abs(w.mean()) <= 4.0 * se

    def test_inner_product_law_at_scaled_optimum(self, pair2d):
        # SD[alpha f*] on data samples approaches alpha ||f*||^2_p
        pf, qf = pair2d
        oc = OptimalCritic(pf, qf)
        x = pf.sample(100_000, np.random.default_rng(6))
        norm_sq = np.sum(oc.forward(x) ** 2, axis=1)
        for alpha in (0.5, 1.0, 2.0):
            crit = ScaledCritic(oc, alpha)
            w = witness_values(crit, qf, x)
            diff = w - alpha * norm_sq
            se = diff.std() / np.sqrt(diff.size)
            assert abs(diff.mean()) <= 4.0 * se

    def test_requires_samples(self, pair2d):
        _, qf = pair2d
        with pytest.raises(ValueError):
            sd_estimate(MlpCritic(2, 4), qf, np.zeros((0, 2)))


class TestEmpiricalLoss:
    def test_zero_critic(self, pair2d):
        _, qf = pair2d
        x = np.random.default_rng(7).standard_normal((10, 2))
        assert empirical_loss(MlpCritic(2, 4), x, qf, 1.0) == 0.0

    def test_agrees_with_loss_and_grad(self, pair2d):
        _, qf = pair2d
        rng = np.random.default_rng(8)
        crit = init_critic(2, 16, rng)
        x = rng.standard_normal((25, 2))
        lam = 0.37
        direct, _ = loss_and_grad(crit, x, qf, lam)
        assert empirical_loss(crit, x, qf, lam) == pytest.approx(direct, abs=1e-12)

    def test_monitor_identity(self, pair2d):
        _, qf = pair2d
        rng = np.random.default_rng(9)
        crit = init_critic(2, 16, rng)
        x = rng.standard_normal((30, 2))
        lam = 0.7
        assert monitor_mse(crit, lam, qf, x) == pytest.approx(
            2.0 * lam * empirical_loss(crit, x, qf, lam), abs=1e-12)

    def test_lambda_scaling(self, pair2d):
        _, qf = pair2d
        rng = np.random.default_rng(10)
        crit = init_critic(2, 16, rng)
        x = rng.standard_normal((30, 2))
        for lam in (0.05, 0.9, 4.0):
            lhs = empirical_loss(crit, x, qf, lam)
            rhs = empirical_loss(crit.scale_output(lam), x, qf, 1.0) / lam
            assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_loss_at_scaled_optimum_near_minimum_value(self, pair2d):
        # L(f*/lam) ~= -||f*||^2_phat / (2 lam) within Monte-Carlo error of
        # the witness-vs-inner-product gap
        pf, qf = pair2d
        oc = OptimalCritic(pf, qf)
        x = pf.sample(50_000, np.random.default_rng(11))
        lam = 0.6
        crit = ScaledCritic(oc, 1.0 / lam)
        norm_sq = np.sum(oc.forward(x) ** 2, axis=1)
        loss = empirical_loss(crit, x, qf, lam)
        target = -float(norm_sq.mean()) / (2.0 * lam)
        w = witness_values(crit, qf, x)
        resid = -w + norm_sq / (2.0 * lam)  # per-sample loss minus target part
        se = resid.std() / np.sqrt(resid.size)
        assert abs(loss - target) <= 4.0 * se


class TestWitnessBatch:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            WitnessBatch(np.array([1.0, np.inf]))

    def test_csv_export(self, tmp_path):
        batch = WitnessBatch(np.array([0.5, -1.25]), sample_set="s", checkpoint="c")
        path = tmp_path / "w.csv"
        batch.to_csv(path)
        text = path.read_text()
        assert text == "index,witness\n0,0.5\n1,-1.25\n"
        assert len(batch) == 2
