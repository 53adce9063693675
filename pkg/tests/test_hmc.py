import unittest
from unittest import mock
import numpy as np
from scipy import stats
from pybns import (
    MODEL2,
    MODEL3,
    HmcConfig,
    MapOptions,
    NsParams,
    PosteriorDraws,
    builtin_fixture_may2018,
    diagnostics,
    fit_map,
    leapfrog,
    sample,
    summarize,
)
from pybns.diagnostics import ess_bulk
from pybns.errors import DomainError, SamplingQualityError
from pybns.hmc import ChainResult, sample_density, summary_statistics

# run all tests: python -m unittest -v


def gaussian(variances):
    """
    Log-density and gradient of a centred Gaussian with diagonal covariance
    """
    precision = 1.0 / np.asarray(variances, dtype=float)

    def target(z):
        return -0.5 * np.sum(precision * z * z), -precision * z

    return target


class TestLeapfrog(unittest.TestCase):
    def setUp(self):
        """
        Initialise a three dimensional Gaussian target
        """
        self.target = gaussian([1.0, 0.5, 2.0])
        self.rng = np.random.default_rng(5)

    def test_reversibility(self):
        """
        Integrating forward and back with flipped momentum returns to the start
        """
        inv_metric = self.rng.uniform(0.5, 2.0, size=3)
        q0 = self.rng.normal(size=3)
        p0 = self.rng.normal(size=3)
        _, grad0 = self.target(q0)
        q1, p1, _, grad1 = leapfrog(self.target, q0, p0, grad0, 0.1, 25, inv_metric)
        q2, p2, _, _ = leapfrog(self.target, q1, -p1, grad1, 0.1, 25, inv_metric)
        np.testing.assert_allclose(q2, q0, atol=1e-8)
        np.testing.assert_allclose(-p2, p0, atol=1e-8)

    def test_energy_error_order(self):
        """
        Halving the step size cuts the energy error by about four
        """
        inv_metric = np.ones(3)
        errors = {}
        starts = [(self.rng.normal(size=3), self.rng.normal(size=3)) for _ in range(100)]
        for step_size, n_steps in ((0.1, 10), (0.05, 20)):
            total = 0.0
            for q, p in starts:
                lp, grad = self.target(q)
                _, p_new, lp_new, _ = leapfrog(self.target, q, p, grad, step_size, n_steps, inv_metric)
                total += abs((-lp_new + 0.5 * p_new @ p_new) - (-lp + 0.5 * p @ p))
            errors[step_size] = total / len(starts)
        ratio = errors[0.1] / errors[0.05]
        self.assertGreaterEqual(ratio, 3.0)
        self.assertLessEqual(ratio, 5.0)

    def test_stops_outside_domain(self):
        """
        A non-finite density ends the trajectory
        """
        def half_line(z):
            if z[0] < 0:
                return -np.inf, np.full(1, np.nan)
            return -0.5 * z[0] ** 2, -z

        _, _, lp, _ = leapfrog(half_line, np.array([0.1]), np.array([-5.0]), np.array([-0.1]), 0.1, 10, np.ones(1))
        self.assertEqual(lp, -np.inf)


class TestSampleDensity(unittest.TestCase):
    def test_standard_normal_moments(self):
        """
        Draws from a Gaussian have the right mean and scale
        """
        config = HmcConfig(chains=4, warmup=500, draws=1000, seed=2)
        chains = sample_density(gaussian([1.0, 4.0]), np.zeros(2), config)
        positions = np.stack([chain.positions for chain in chains])
        for j, sd in enumerate((1.0, 2.0)):
            values = positions[:, :, j]
            ess = ess_bulk(values)
            self.assertLess(abs(values.mean()), 3 * sd / np.sqrt(ess))
            self.assertAlmostEqual(values.std() / sd, 1.0, delta=0.05)
        self.assertEqual(sum(chain.divergent.sum() for chain in chains), 0)

    def test_kolmogorov_smirnov(self):
        """
        The empirical distribution of a long run matches N(0, 1)
        """
        config = HmcConfig(chains=4, warmup=1000, draws=10000, seed=3)
        chains = sample_density(gaussian([1.0]), np.zeros(1), config)
        values = np.concatenate([chain.positions[:, 0] for chain in chains])
        self.assertLess(stats.kstest(values, "norm").statistic, 0.02)

    def test_deterministic(self):
        """
        The same seed reproduces every draw, sequentially or threaded
        """
        config = HmcConfig(chains=2, warmup=100, draws=100, seed=9)
        first = sample_density(gaussian([1.0, 2.0]), np.ones(2), config)
        second = sample_density(gaussian([1.0, 2.0]), np.ones(2), config)
        threaded = sample_density(
            gaussian([1.0, 2.0]), np.ones(2), HmcConfig(chains=2, warmup=100, draws=100, seed=9, max_workers=2)
        )
        for a, b, c in zip(first, second, threaded):
            np.testing.assert_array_equal(a.positions, b.positions)
            np.testing.assert_array_equal(a.positions, c.positions)
        self.assertFalse(np.array_equal(first[0].positions, first[1].positions))

    def test_invalid_init(self):
        """
        A non-finite starting point is rejected
        """
        with self.assertRaises(DomainError):
            sample_density(gaussian([1.0]), [np.nan], HmcConfig(chains=1, warmup=10, draws=10))

    def test_invalid_config(self):
        """
        Invalid configurations are rejected
        """
        with self.assertRaises(DomainError):
            HmcConfig(chains=0)
        with self.assertRaises(DomainError):
            HmcConfig(target_accept=1.0)


class TestPosteriorDraws(unittest.TestCase):
    def setUp(self):
        """
        Build a small two-chain draw table
        """
        rng = np.random.default_rng(1)
        values = np.column_stack([
            rng.normal(3.1, 0.01, 10),
            rng.normal(-1.4, 0.02, 10),
            rng.normal(0.0, 0.1, 10),
            rng.uniform(0.8, 1.2, 10),
            rng.uniform(0.03, 0.06, 10),
            rng.uniform(1.0, 2.0, 10),
        ])
        self.draws = PosteriorDraws(
            MODEL2.param_names, values, log_post=rng.normal(size=10), chain=np.repeat([0, 1], 5)
        )

    def test_summary_of_known_sample(self):
        """
        Summaries of 1..5 are exact
        """
        stats_ = summary_statistics([1, 2, 3, 4, 5])
        self.assertEqual(stats_["mean"], 3.0)
        self.assertEqual(stats_["median"], 3.0)
        self.assertAlmostEqual(stats_["sd"], np.sqrt(2.5), places=12)
        self.assertAlmostEqual(stats_["2.5%"], 1.1, places=12)
        self.assertAlmostEqual(stats_["97.5%"], 4.9, places=12)

    def test_summary_of_constant_draws(self):
        """
        Constant draws have zero spread and equal quantiles
        """
        values = np.tile([3.0, -1.0, 0.5, 1.0, 0.05], (20, 1))
        summary = summarize(PosteriorDraws(["beta0", "beta1", "beta2", "lambda", "sigma"], values))
        row = summary["beta1"]
        self.assertEqual(row["sd"], 0.0)
        self.assertEqual(row["2.5%"], row["median"])
        self.assertEqual(row["median"], row["97.5%"])
        self.assertNotIn("lp", summary.frame.index)

    def test_summary_includes_lp(self):
        """
        A known log-density adds an lp row
        """
        frame = summarize(self.draws).to_frame()
        self.assertEqual(list(frame.index), MODEL2.param_names + ["lp"])
        self.assertEqual(list(frame.columns), ["mean", "sd", "2.5%", "median", "97.5%"])

    def test_positivity(self):
        """
        Non-positive scale draws are rejected
        """
        values = self.draws.values.copy()
        values[0, 4] = -0.01
        with self.assertRaises(DomainError):
            PosteriorDraws(MODEL2.param_names, values)

    def test_chain_access(self):
        """
        Chains split into equal blocks
        """
        self.assertEqual(self.draws.n_chains, 2)
        self.assertEqual(self.draws.chain_values("beta0").shape, (2, 5))
        self.assertEqual(self.draws.chain_bounds, [(0, 5), (5, 10)])
        self.assertEqual(self.draws.params(0).beta0, self.draws.values[0, 0])
        with self.assertRaises(DomainError):
            self.draws.column("gamma")

    def test_csv(self):
        """
        CSV output keeps the layout and 6-decimal values
        """
        parsed = PosteriorDraws.from_csv("# header\n" + self.draws.to_csv())
        self.assertEqual(parsed.names, self.draws.names)
        self.assertEqual(parsed.n_chains, 2)
        np.testing.assert_allclose(parsed.values, self.draws.values, atol=5e-7)


class TestSampleFixture(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        """
        Sample Models 2 and 3 on the fixture once
        """
        cls.panel = builtin_fixture_may2018()
        cls.draws = sample(MODEL2, cls.panel, HmcConfig(seed=20180509))
        cls.draws3 = sample(MODEL3, cls.panel, HmcConfig(seed=20180509))
        cls.summary = summarize(cls.draws)
        cls.summary3 = summarize(cls.draws3)

    def test_model2_location(self):
        """
        Posterior means and spreads of the betas
        """
        self.assertAlmostEqual(self.summary["beta0"]["mean"], 3.11, delta=0.03)
        self.assertLessEqual(self.summary["beta0"]["sd"], 0.03)
        self.assertAlmostEqual(self.summary["beta1"]["mean"], -1.44, delta=0.04)

    def test_model2_lambda(self):
        """
        The decay factor is centred near one year
        """
        row = self.summary["lambda"]
        self.assertAlmostEqual(row["median"], 0.96, delta=0.12)
        self.assertAlmostEqual(row["2.5%"], 0.76, delta=0.15)
        self.assertAlmostEqual(row["97.5%"], 1.23, delta=0.15)

    def test_model3_lambda(self):
        """
        Model 3 centres the decay factor near 0.97 with a similar interval
        """
        row = self.summary3["lambda"]
        self.assertAlmostEqual(row["median"], 0.97, delta=0.12)
        self.assertAlmostEqual(row["2.5%"], 0.79, delta=0.15)
        self.assertAlmostEqual(row["97.5%"], 1.18, delta=0.15)

    def test_convergence(self):
        """
        Chains mix
        """
        table = diagnostics(self.draws)
        self.assertTrue((table["r_hat"] < 1.05).all())
        self.assertTrue((table["ess_bulk"] > 100).all())
        self.assertLessEqual(self.draws.divergent_fraction, 0.25)

    def test_level_slope_correlation(self):
        """
        Level and slope trade off against each other
        """
        corr = np.corrcoef(self.draws.column("beta0"), self.draws.column("beta1"))[0, 1]
        self.assertLess(corr, 0.0)

    def test_draw_layout(self):
        """
        Draws are stacked by chain with positive scales
        """
        self.assertEqual(len(self.draws), 4000)
        self.assertEqual(self.draws.n_chains, 4)
        self.assertEqual(self.draws.model_tag, "m2")
        self.assertTrue(np.all(self.draws.column("lambda") > 0))
        self.assertTrue(np.all(self.draws.column("sigma_beta") > 0))
        self.assertEqual(len(self.draws.step_size), 4)


class TestSamplingQuality(unittest.TestCase):
    def test_divergent_draws_rejected(self):
        """
        Too many divergent draws raise SamplingQualityError carrying the draws
        """
        def divergent_chains(target, init, config):
            n = config.draws
            return [
                ChainResult(
                    positions=np.tile(init, (n, 1)) + np.random.default_rng(c).normal(0, 0.01, (n, init.size)),
                    log_density=np.zeros(n),
                    divergent=np.arange(n) % 2 == 0,
                    accept_stat=np.zeros(n),
                    n_leapfrog=np.ones(n, dtype=int),
                    step_size=0.1,
                    inv_metric=np.ones(init.size),
                    warmup_divergent=0,
                )
                for c in range(config.chains)
            ]

        init = NsParams(3.1, -1.4, 0.0, 1.0, 0.05, 1.6)
        config = HmcConfig(chains=2, warmup=10, draws=20)
        with mock.patch("pybns.hmc.sample_density", side_effect=divergent_chains):
            with self.assertRaises(SamplingQualityError) as context:
                sample(MODEL2, builtin_fixture_may2018(), config, init=init)
        self.assertEqual(len(context.exception.draws), 40)
        self.assertIn("r_hat", context.exception.diagnostics.columns)


class TestSampleInitialisation(unittest.TestCase):
    def test_map_options_reach_the_search(self):
        """
        The MAP search that centres the chains uses the given options
        """
        def still_chains(target, init, config):
            n = config.draws
            return [
                ChainResult(
                    positions=np.tile(init, (n, 1)),
                    log_density=np.zeros(n),
                    divergent=np.zeros(n, dtype=bool),
                    accept_stat=np.ones(n),
                    n_leapfrog=np.ones(n, dtype=int),
                    step_size=0.1,
                    inv_metric=np.ones(init.size),
                    warmup_divergent=0,
                )
                for _ in range(config.chains)
            ]

        options = MapOptions(restarts=2, seed=5)
        config = HmcConfig(chains=2, warmup=10, draws=10)
        with mock.patch("pybns.hmc.sample_density", side_effect=still_chains), \
                mock.patch("pybns.hmc.fit_map", wraps=fit_map) as search:
            draws = sample(MODEL2, builtin_fixture_may2018(), config, map_options=options)
        self.assertIs(search.call_args.kwargs["options"], options)
        self.assertEqual(len(draws), 20)
        self.assertAlmostEqual(draws.column("beta0")[0], 3.111, delta=0.05)


if __name__ == "__main__":
    unittest.main()
