"""
This module provides convergence diagnostics for multi-chain MCMC output:
the rank-normalised split R-hat and the bulk effective sample size.

Both statistics take an array of shape (chains, draws) for one parameter.

Example:
	Diagnose two chains of white noise::

		import numpy as np
		from pybns.diagnostics import ess_bulk, rhat

		chains = np.random.default_rng(0).normal(size=(2, 1000))
		print(rhat(chains), ess_bulk(chains))
"""

import numpy as np
import pandas as pd
from scipy import stats


def _z_scale(ary: np.ndarray) -> np.ndarray:
	rank = stats.rankdata(ary, method="average")
	z = stats.norm.ppf((rank - 0.5) / ary.size)
	return z.reshape(ary.shape)


def _split_chains(ary: np.ndarray) -> np.ndarray:
	half = ary.shape[1] // 2
	return np.vstack((ary[:, :half], ary[:, -half:]))


def _is_degenerate(ary: np.ndarray) -> bool:
	return (
		not np.all(np.isfinite(ary))
		or ary.shape[1] < 4
		or np.ptp(ary) == 0
	)


def _rhat(ary: np.ndarray) -> float:
	n_draw = ary.shape[1]
	chain_mean = ary.mean(axis=1)
	within = np.mean(np.var(ary, axis=1, ddof=1))
	between = n_draw * np.var(chain_mean, ddof=1)
	if within == 0:
		return np.nan
	return float(np.sqrt((between / within + n_draw - 1) / n_draw))


def rhat(ary) -> float:
	"""
	Rank-normalised split R-hat: the larger of the split R-hat of the
	rank-normalised draws and of the rank-normalised folded draws
	|x - median(x)|.

	Args:
		ary (array-like): Draws of shape (chains, draws).

	Returns:
		float: R-hat, NaN for fewer than two chains, fewer than four draws
		per chain, constant or non-finite draws.
	"""
	ary = np.asarray(ary, dtype=float)
	if ary.ndim != 2 or ary.shape[0] < 2 or _is_degenerate(ary):
		return np.nan
	bulk = _rhat(_z_scale(_split_chains(ary)))
	folded = np.abs(ary - np.median(ary))
	tail = _rhat(_z_scale(_split_chains(folded)))
	return float(max(bulk, tail))


def _autocov(x: np.ndarray) -> np.ndarray:
	n = x.size
	size = 2 ** int(np.ceil(np.log2(2 * n)))
	centred = x - x.mean()
	spectrum = np.fft.rfft(centred, n=size)
	acov = np.fft.irfft(spectrum * np.conjugate(spectrum), n=size)[:n]
	return acov / n


def _ess(ary: np.ndarray) -> float:
	n_chain, n_draw = ary.shape
	acov = np.asarray([_autocov(chain) for chain in ary])
	chain_mean = ary.mean(axis=1)
	mean_var = np.mean(acov[:, 0]) * n_draw / (n_draw - 1.0)
	var_plus = mean_var * (n_draw - 1.0) / n_draw
	if n_chain > 1:
		var_plus += np.var(chain_mean, ddof=1)

	rho_hat = np.zeros(n_draw)
	rho_even = 1.0
	rho_hat[0] = rho_even
	rho_odd = 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
	rho_hat[1] = rho_odd

	# initial positive sequence
	t = 1
	while t < n_draw - 2 and rho_even + rho_odd >= 0.0:
		rho_even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
		rho_odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
		rho_hat[t + 1] = rho_even
		if rho_even + rho_odd >= 0:
			rho_hat[t + 2] = rho_odd
		t += 2
	max_t = t

	# initial monotone sequence
	t = 1
	while t <= max_t - 2:
		if rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t]:
			rho_hat[t + 1] = (rho_hat[t - 1] + rho_hat[t]) / 2.0
			rho_hat[t + 2] = rho_hat[t + 1]
		t += 2

	tau_hat = -1.0 + 2.0 * np.sum(rho_hat[:max_t]) + np.sum(rho_hat[max_t + 1:max_t + 2])
	tau_hat = max(tau_hat, 1.0 / np.log10(n_chain * n_draw))
	if np.isnan(rho_hat).any():
		return np.nan
	return float(n_chain * n_draw / tau_hat)


def ess_bulk(ary) -> float:
	"""
	Bulk effective sample size: the effective size of the rank-normalised
	split chains, with autocorrelations truncated by Geyer's initial
	monotone sequence.

	Args:
		ary (array-like): Draws of shape (chains, draws); one chain is allowed.

	Returns:
		float: The bulk ESS, NaN for constant or non-finite draws.
	"""
	ary = np.atleast_2d(np.asarray(ary, dtype=float))
	if ary.ndim != 2 or _is_degenerate(ary):
		return np.nan
	return _ess(_z_scale(_split_chains(ary)))


def diagnostics(draws) -> pd.DataFrame:
	"""
	Per-parameter convergence diagnostics of a set of posterior draws.

	Args:
		draws (PosteriorDraws): Sampler output.

	Returns:
		pd.DataFrame: Indexed by parameter with columns ``r_hat`` and
		``ess_bulk``. R-hat is NaN when there are fewer than two chains.
	"""
	rows = {}
	for name in draws.names:
		values = draws.chain_values(name)
		rows[name] = {"r_hat": rhat(values), "ess_bulk": ess_bulk(values)}
	frame = pd.DataFrame.from_dict(rows, orient="index", columns=["r_hat", "ess_bulk"])
	frame.index.name = "parameter"
	return frame
