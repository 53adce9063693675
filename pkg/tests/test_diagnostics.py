import unittest
import numpy as np
from pybns import PosteriorDraws, diagnostics
from pybns.diagnostics import ess_bulk, rhat

# run all tests: python -m unittest -v


class TestDiagnostics(unittest.TestCase):
    def setUp(self):
        """
        Initialise white-noise chains
        """
        self.rng = np.random.default_rng(42)
        self.noise = self.rng.normal(size=(4, 1000))

    def test_identical_chains(self):
        """
        Copies of one white-noise chain give R-hat close to one
        """
        chains = np.tile(self.rng.normal(size=2000), (4, 1))
        self.assertAlmostEqual(rhat(chains), 1.0, delta=0.01)

    def test_independent_chains(self):
        """
        Independent white-noise chains give R-hat close to one
        """
        self.assertAlmostEqual(rhat(self.noise), 1.0, delta=0.01)

    def test_separated_chains(self):
        """
        Chains with disjoint means are flagged
        """
        chains = self.noise.copy()
        chains[1] += 10.0
        self.assertGreater(rhat(chains), 1.1)

    def test_single_chain(self):
        """
        R-hat needs at least two chains
        """
        self.assertTrue(np.isnan(rhat(self.noise[:1])))
        self.assertTrue(np.isfinite(ess_bulk(self.noise[:1])))

    def test_degenerate_input(self):
        """
        Constant or non-finite draws give NaN
        """
        self.assertTrue(np.isnan(rhat(np.ones((4, 100)))))
        self.assertTrue(np.isnan(ess_bulk(np.ones((4, 100)))))
        chains = self.noise.copy()
        chains[0, 0] = np.nan
        self.assertTrue(np.isnan(rhat(chains)))

    def test_ess_white_noise(self):
        """
        Independent draws have an effective size close to their count
        """
        ess = ess_bulk(self.noise)
        self.assertGreater(ess, 0.8 * self.noise.size)
        self.assertLess(ess, 1.2 * self.noise.size)

    def test_ess_autocorrelated(self):
        """
        Strong autocorrelation shrinks the effective size
        """
        chains = np.zeros((4, 1000))
        for t in range(1, 1000):
            chains[:, t] = 0.9 * chains[:, t - 1] + self.noise[:, t]
        self.assertLess(ess_bulk(chains), 0.2 * chains.size)

    def test_diagnostics_frame(self):
        """
        One row per parameter with R-hat and bulk ESS
        """
        values = np.column_stack([self.noise.ravel(), np.exp(self.noise.ravel())])
        draws = PosteriorDraws(["beta0", "lambda"], values, chain=np.repeat(np.arange(4), 1000))
        frame = diagnostics(draws)
        self.assertEqual(list(frame.index), ["beta0", "lambda"])
        self.assertEqual(list(frame.columns), ["r_hat", "ess_bulk"])
        self.assertAlmostEqual(frame.loc["beta0", "r_hat"], frame.loc["lambda", "r_hat"], places=12)


if __name__ == "__main__":
    unittest.main()
