import datetime
import itertools
import unittest
import numpy as np
from scipy import stats
from pybns import (
    MODEL1,
    MODEL2,
    MODEL3,
    NsParams,
    Posterior,
    PriorModel,
    YieldPanel,
    builtin_fixture_may2018,
    inverse_gamma_cdf,
    log_likelihood,
    log_posterior,
    log_prior,
    ns_yield,
    poisson_likelihood_demo,
)
from pybns.errors import DomainError

# run all tests: python -m unittest -v


def random_point(model, rng):
    """
    Draws an unconstrained point in a plausible region of the May 2018 posterior
    """
    if model.hierarchical:
        z = np.array([
            rng.normal(3.0, 1.0),
            rng.normal(-1.4, 1.0),
            rng.normal(0.0, 1.0),
            rng.normal(0.0, 0.5),
            rng.normal(np.log(0.1), 0.5),
            rng.normal(np.log(1.5), 0.5),
        ])
    else:
        z = np.array([
            rng.normal(np.log(3.0), 0.3),
            rng.normal(np.log(0.5), 0.5),
            rng.normal(np.log(0.5), 0.5),
            rng.normal(0.0, 0.5),
            rng.normal(np.log(0.1), 0.5),
        ])
    return z


class TestModel(unittest.TestCase):
    def setUp(self):
        """
        Load the fixture and a reference parameter set
        """
        self.panel = builtin_fixture_may2018()
        self.params = NsParams(3.111, -1.440, -0.016, 0.950, 0.043, 1.636)
        self.rng = np.random.default_rng(11)

    def test_inverse_gamma_cdf(self):
        """
        P[X <= 30] under Inverse-Gamma(1, 1) is exp(-1/30)
        """
        self.assertAlmostEqual(inverse_gamma_cdf(30.0, 1.0, 1.0), np.exp(-1.0 / 30.0), places=12)
        self.assertAlmostEqual(inverse_gamma_cdf(30.0, 1.0, 1.0), 0.9672, places=4)

    def test_inverse_gamma_mode(self):
        """
        The Inverse-Gamma(1, 1) prior on lambda peaks at one half
        """
        def prior_at(lam):
            params = NsParams(1.0, 1.0, 1.0, lam, 1.0)
            return log_prior(MODEL1, params)

        self.assertGreater(prior_at(0.5), prior_at(0.49))
        self.assertGreater(prior_at(0.5), prior_at(0.51))

    def test_poisson_demo(self):
        """
        Likelihood of a count of 6 over rates 3 to 7
        """
        values = poisson_likelihood_demo(6, [3, 4, 5, 6, 7])
        np.testing.assert_allclose(values, [0.101, 0.156, 0.175, 0.161, 0.128], atol=5e-4)
        self.assertAlmostEqual(poisson_likelihood_demo(0, [1.0])[0], np.exp(-1.0), places=15)
        with self.assertRaises(DomainError):
            poisson_likelihood_demo(2, [0.0])
        with self.assertRaises(DomainError):
            poisson_likelihood_demo(-1, [1.0])

    def test_from_tag(self):
        """
        Tags resolve to the built-in models
        """
        self.assertIs(PriorModel.from_tag("m2"), MODEL2)
        self.assertIs(PriorModel.from_tag("Model3"), MODEL3)
        self.assertEqual(MODEL1.param_names, ["beta0", "beta1", "beta2", "lambda", "sigma"])
        self.assertEqual(MODEL2.dim, 6)
        with self.assertRaises(DomainError):
            PriorModel.from_tag("m4")

    def test_transform_round_trip(self):
        """
        Constraining undoes unconstraining for random parameter vectors
        """
        for model in (MODEL1, MODEL2, MODEL3):
            for _ in range(1000):
                theta = np.exp(self.rng.normal(0.0, 2.0, size=model.dim))
                if model.hierarchical:
                    theta[:3] = self.rng.normal(0.0, 3.0, size=3)
                z = model.unconstrain(theta)
                np.testing.assert_allclose(model.constrain(z), theta, rtol=1e-12)

    def test_unconstrain_rejects_non_positive(self):
        """
        Non-positive constrained values have no unconstrained image
        """
        with self.assertRaises(DomainError):
            MODEL1.unconstrain([3.0, -1.0, 0.5, 1.0, 0.1])
        with self.assertRaises(DomainError):
            MODEL2.unconstrain([3.0, -1.0, 0.5, 1.0, 0.1])

    def test_gradient_matches_finite_differences(self):
        """
        The analytic gradient agrees with central differences, including at small sigma
        """
        h = 1e-5
        for model in (MODEL1, MODEL2, MODEL3):
            posterior = Posterior(model, self.panel)
            for i in range(100):
                z = random_point(model, self.rng)
                if i == 0:
                    z[4] = np.log(0.01)
                lp, grad = posterior(z)
                numeric = np.zeros(model.dim)
                for j in range(model.dim):
                    step = np.zeros(model.dim)
                    step[j] = h
                    numeric[j] = (posterior(z + step)[0] - posterior(z - step)[0]) / (2 * h)
                np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8 * max(1.0, abs(lp)))

    def test_posterior_decomposition(self):
        """
        The log-posterior is likelihood plus prior plus log-Jacobian
        """
        for model in (MODEL1, MODEL2, MODEL3):
            z = random_point(model, self.rng)
            params = model.to_params(z)
            expected = log_likelihood(self.panel, params) + log_prior(model, params)
            without, _ = log_posterior(model, self.panel, z, jacobian=False)
            with_jacobian, _ = log_posterior(model, self.panel, z)
            self.assertAlmostEqual(without, expected, delta=1e-9 * max(1.0, abs(expected)))
            self.assertAlmostEqual(with_jacobian - without, model.log_jacobian(z), places=9)

    def test_non_finite_evaluation(self):
        """
        A point where the density overflows gives -inf and a NaN gradient
        """
        z = MODEL2.unconstrain(self.params)
        z[4] = -1000.0
        lp, grad = Posterior(MODEL2, self.panel)(z)
        self.assertEqual(lp, -np.inf)
        self.assertTrue(np.all(np.isnan(grad)))

    def test_model1_support(self):
        """
        Model 1 has zero prior mass wherever a component is non-positive
        """
        self.assertEqual(log_prior(MODEL1, NsParams(3.0, -1.0, 0.5, 1.0, 0.1)), -np.inf)
        self.assertEqual(log_prior(MODEL1, NsParams(3.0, 1.0, 0.0, 1.0, 0.1)), -np.inf)
        self.assertTrue(np.isfinite(log_prior(MODEL1, NsParams(3.0, 1.0, 0.5, 1.0, 0.1))))

    def test_hierarchical_normal_terms(self):
        """
        At zero betas each Normal term is -log(2 pi sigma_beta^2) / 2
        """
        params = NsParams(0.0, 0.0, 0.0, 1.0, 0.1, 2.0)
        scales = np.array([1.0, 0.1, 2.0])
        inverse_gamma = np.sum(stats.invgamma.logpdf(scales, 1.0, scale=1.0))
        normal = log_prior(MODEL2, params) - inverse_gamma
        self.assertAlmostEqual(normal, 3 * -0.5 * np.log(2 * np.pi * 4.0), places=12)
        with self.assertRaises(DomainError):
            log_prior(MODEL2, NsParams(0.0, 0.0, 0.0, 1.0, 0.1))

    def test_zero_residual_likelihood(self):
        """
        A single exactly fitted observation contributes -log(2 pi sigma^2) / 2
        """
        y = ns_yield(self.params, 1.0)
        panel = YieldPanel([datetime.date(2018, 5, 1)], [1.0], [[y]])
        expected = -0.5 * np.log(2 * np.pi * self.params.sigma ** 2)
        self.assertAlmostEqual(log_likelihood(panel, self.params), expected, places=9)

    def test_doubled_residuals(self):
        """
        Doubling every residual lowers the log-likelihood by 3 sum(r^2) / (2 sigma^2)
        """
        taus = self.panel.grid.taus
        mu = ns_yield(self.params, taus)
        r = self.rng.normal(0.0, 0.05, size=taus.size)
        date = [datetime.date(2018, 5, 1)]
        once = log_likelihood(YieldPanel(date, taus, [mu + r]), self.params)
        twice = log_likelihood(YieldPanel(date, taus, [mu + 2 * r]), self.params)
        self.assertAlmostEqual(once - twice, 3 * np.sum(r ** 2) / (2 * self.params.sigma ** 2), places=6)

    def test_permutation_invariance(self):
        """
        Reordering the observations leaves the likelihood unchanged
        """
        order = self.rng.permutation(self.panel.shape[0])
        shuffled = YieldPanel(self.panel.dates, self.panel.grid, self.panel.values[order])
        self.assertAlmostEqual(
            log_likelihood(shuffled, self.params), log_likelihood(self.panel, self.params), places=9
        )

    def test_missing_cells_skipped(self):
        """
        Missing cells contribute nothing
        """
        values = self.panel.values.copy()
        values[0, 3] = np.nan
        partial = YieldPanel(self.panel.dates, self.panel.grid, values)
        cell = YieldPanel([self.panel.dates[0]], [self.panel.grid.taus[3]], [[self.panel.values[0, 3]]])
        self.assertAlmostEqual(
            log_likelihood(partial, self.params) + log_likelihood(cell, self.params),
            log_likelihood(self.panel, self.params),
            places=9,
        )

    def test_grid_maximum_is_interior(self):
        """
        On a coarse grid around the Model 2 mode the maximum is not on the boundary
        """
        posterior = Posterior(MODEL2, self.panel, jacobian=False)
        axes = [
            3.111 + 0.05 * np.arange(-2, 3),
            -1.440 + 0.05 * np.arange(-2, 3),
            -0.016 + 0.1 * np.arange(-2, 3),
            0.950 + 0.1 * np.arange(-2, 3),
            0.043 + 0.01 * np.arange(-2, 3),
        ]
        best, best_index = -np.inf, None
        for index in itertools.product(range(5), repeat=5):
            theta = [axis[i] for axis, i in zip(axes, index)] + [1.636]
            lp = posterior.log_density(MODEL2.unconstrain(theta))
            if lp > best:
                best, best_index = lp, index
        self.assertTrue(all(0 < i < 4 for i in best_index))


if __name__ == "__main__":
    unittest.main()
