"""
This module provides the Dynamic Nelson-Siegel (DNS) state-space model.

The factor vector beta_t = (level, slope, curvature) follows a diagonal
AR(1) system equation and the yields of date t are observed through the
Nelson-Siegel loadings:

	beta_t = theta0 + Z beta_{t-1} + eta_t,     eta_t ~ N(0, sigma_eta2 I_3)
	y_t    = Phi beta_t + W_t + eps_t,          eps_t ~ N(0, sigma_eps2 I_m)

where Phi = `dns_loadings(lam, grid)` and W_t ~ N(0, K) is an optional
Gaussian-process residual across maturities. The Kalman recursion gives the
filtered factors and the marginal log-likelihood of the panel with the
factors integrated out; lam is chosen by grid search on that likelihood.

Example:
	Filter a simulated panel and pick the decay factor::

		import numpy as np
		from pybns import DnsParams, MaturityGrid, grid_search_lambda, run_filter, simulate_dns

		params = DnsParams(
			theta0=[0.3, -0.1, 0.0], theta1=[0.9, 0.9, 0.8],
			sigma_eps2=0.01, sigma_eta2=0.05, lam=1.0,
		)
		grid = MaturityGrid([0.25, 0.5, 1, 2, 3, 5, 7, 10, 20, 30])
		panel, states = simulate_dns(params, grid, T=200, seed=1)
		lam, scores = grid_search_lambda(panel, params, [0.5, 1.0, 2.0])
		result = run_filter(params, panel)
		print(lam, result.log_likelihood)
"""

import datetime
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg

from .curve import MaturityGrid, dns_loadings
from .errors import DomainError, NumericalError, PybnsError
from .optimise import bfgs_minimise
from .panel import YieldPanel

logger = logging.getLogger(__name__)

FACTORS = ("level", "slope", "curvature")
MAX_CONDITION = 1e12
JITTERS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class DnsParams:
	"""
	Static parameters of the DNS model.

	Attributes:
		theta0 (np.ndarray): Intercepts of the three factor equations.
		theta1 (np.ndarray): Autoregressive coefficients, the diagonal of `Z`.
		sigma_eps2 (float): Observation noise variance.
		sigma_eta2 (float): Factor innovation variance.
		lam (float): Decay factor in years, known.
	"""
	theta0: np.ndarray
	theta1: np.ndarray
	sigma_eps2: float
	sigma_eta2: float
	lam: float

	def __post_init__(self):
		theta0 = np.array(self.theta0, dtype=float)
		theta1 = np.array(self.theta1, dtype=float)
		if theta1.shape == (3, 3):
			if np.any(theta1 != np.diag(np.diag(theta1))):
				raise DomainError("`Z` must be diagonal.")
			theta1 = np.diag(theta1).copy()
		if theta0.shape != (3,) or theta1.shape != (3,):
			raise DomainError("`theta0` and `theta1` must have three entries.")
		if not np.all(np.isfinite(np.concatenate([theta0, theta1]))):
			raise DomainError("`theta0` and `theta1` must be finite.")
		if not (np.isfinite(self.sigma_eps2) and np.isfinite(self.sigma_eta2)):
			raise DomainError("Variances must be finite.")
		if self.sigma_eps2 < 0 or self.sigma_eta2 < 0:
			raise DomainError("Variances must be non-negative.")
		if not np.isfinite(self.lam) or self.lam <= 0:
			raise DomainError("`lam` must be positive.")
		theta0.setflags(write=False)
		theta1.setflags(write=False)
		object.__setattr__(self, "theta0", theta0)
		object.__setattr__(self, "theta1", theta1)
		object.__setattr__(self, "sigma_eps2", float(self.sigma_eps2))
		object.__setattr__(self, "sigma_eta2", float(self.sigma_eta2))
		object.__setattr__(self, "lam", float(self.lam))

	@property
	def Z(self) -> np.ndarray:
		"""np.ndarray: The 3x3 diagonal transition matrix."""
		return np.diag(self.theta1)

	def with_lambda(self, lam: float) -> "DnsParams":
		"""Returns a copy with the decay factor replaced."""
		return replace(self, lam=lam)

	def stationary_mean(self) -> np.ndarray:
		"""
		Long-run factor mean theta0 / (1 - theta1) for stable factors, and
		theta0 where |theta1| >= 1.

		Returns:
			np.ndarray: The mean of each factor.
		"""
		stable = np.abs(self.theta1) < 1
		return np.where(stable, self.theta0 / np.where(stable, 1.0 - self.theta1, 1.0), self.theta0)

	def as_dict(self) -> dict:
		"""dict: The eight static parameters and lam, keyed by name."""
		row = {f"theta0_{i + 1}": v for i, v in enumerate(self.theta0)}
		row.update({f"theta1_{i + 1}": v for i, v in enumerate(self.theta1)})
		row.update(sigma_eps2=self.sigma_eps2, sigma_eta2=self.sigma_eta2, lam=self.lam)
		return row


@dataclass(frozen=True, eq=False)
class DnsState:
	"""
	Gaussian belief about the factor vector.

	Attributes:
		beta_hat (np.ndarray): Mean of (level, slope, curvature).
		sigma (np.ndarray): 3x3 covariance.
		asymmetry (float): Largest |Sigma - Sigma'| entry before the state
			was symmetrised, zero when not computed.
	"""
	beta_hat: np.ndarray
	sigma: np.ndarray
	asymmetry: float = 0.0

	def __post_init__(self):
		beta_hat = np.array(self.beta_hat, dtype=float)
		sigma = np.array(self.sigma, dtype=float)
		if beta_hat.shape != (3,) or sigma.shape != (3, 3):
			raise DomainError("A DNS state needs a 3-vector mean and a 3x3 covariance.")
		if not (np.all(np.isfinite(beta_hat)) and np.all(np.isfinite(sigma))):
			raise DomainError("A DNS state must be finite.")
		object.__setattr__(self, "beta_hat", beta_hat)
		object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True)
class GpKernelSpec:
	"""
	Covariance of the Gaussian-process residual across maturities.

	Attributes:
		kind (str): ``none`` or ``squared_exponential``.
		amplitude2 (float): Squared amplitude a^2, in percent squared.
		length_scale (float): Length scale l, in years.
	"""
	kind: str = "none"
	amplitude2: float = 0.01
	length_scale: float = 2.0

	def __post_init__(self):
		if self.kind not in ("none", "squared_exponential"):
			raise DomainError(f"Unknown kernel kind {self.kind!r}.")
		if self.kind != "none":
			if not np.isfinite(self.amplitude2) or self.amplitude2 < 0:
				raise DomainError("`amplitude2` must be non-negative.")
			if not np.isfinite(self.length_scale) or self.length_scale <= 0:
				raise DomainError("`length_scale` must be positive.")

	@classmethod
	def squared_exponential(cls, amplitude2: float = 0.01, length_scale: float = 2.0) -> "GpKernelSpec":
		"""Builds the kernel a^2 exp(-(tau - tau')^2 / (2 l^2))."""
		return cls("squared_exponential", amplitude2, length_scale)

	def matrix(self, taus: Union[MaturityGrid, Iterable[float]]) -> np.ndarray:
		"""
		Evaluates the kernel on a set of maturities.

		Args:
			taus (MaturityGrid | Iterable[float]): Maturities in years.

		Returns:
			np.ndarray: The m x m covariance, zero for kind ``none``.
		"""
		taus = taus.taus if isinstance(taus, MaturityGrid) else np.asarray(list(taus), dtype=float)
		if self.kind == "none":
			return np.zeros((taus.size, taus.size))
		diff = taus[:, None] - taus[None, :]
		return self.amplitude2 * np.exp(-diff ** 2 / (2.0 * self.length_scale ** 2))


NO_KERNEL = GpKernelSpec()


@dataclass
class FilterResult:
	"""
	Output of `run_filter`.

	Attributes:
		dates (list[datetime.date]): Dates of the panel.
		filtered (list[DnsState]): State after observing each date.
		predicted (list[DnsState]): State before observing each date.
		innovations (np.ndarray): T x m one-step prediction errors, NaN where missing.
		innovation_covariances (np.ndarray): T x m x m covariances of the
			innovations, NaN in missing rows and columns.
		log_likelihood_terms (np.ndarray): Log-density of each date's observations.
		log_likelihood (float): Marginal log-likelihood of the panel.
	"""
	dates: List[datetime.date]
	filtered: List[DnsState]
	predicted: List[DnsState]
	innovations: np.ndarray
	innovation_covariances: np.ndarray
	log_likelihood_terms: np.ndarray
	log_likelihood: float = field(init=False)

	def __post_init__(self):
		self.log_likelihood = float(np.sum(self.log_likelihood_terms))

	def states_frame(self) -> pd.DataFrame:
		"""
		Filtered factor means and standard deviations.

		Returns:
			pd.DataFrame: Indexed by date with columns per factor and ``<factor>_sd``.
		"""
		means = np.array([state.beta_hat for state in self.filtered])
		sds = np.sqrt(np.array([np.diag(state.sigma) for state in self.filtered]))
		frame = pd.DataFrame(means, columns=list(FACTORS), index=pd.Index(self.dates, name="date"))
		for i, factor in enumerate(FACTORS):
			frame[f"{factor}_sd"] = sds[:, i]
		return frame

	def whitened_innovations(self) -> np.ndarray:
		"""
		Innovations premultiplied by the inverse Cholesky factor of their
		covariance, so that under the model each observed row is standard
		normal.

		Returns:
			np.ndarray: T x m array, NaN where missing.
		"""
		result = np.full_like(self.innovations, np.nan)
		for t, (innovation, cov) in enumerate(zip(self.innovations, self.innovation_covariances)):
			observed = np.isfinite(innovation)
			if observed.any():
				lower = linalg.cholesky(cov[np.ix_(observed, observed)], lower=True)
				result[t, observed] = linalg.solve_triangular(lower, innovation[observed], lower=True)
		return result


def _factorise(cov: np.ndarray, index=None, date=None):
	"""
	Cholesky factor of `cov`, escalating a diagonal jitter through `JITTERS`
	until the matrix is both factorisable and conditioned below
	`MAX_CONDITION`. Returns the factor and the jitter used.
	"""
	if not np.all(np.isfinite(cov)):
		raise NumericalError("Innovation covariance is not finite", index=index, date=date)
	identity = np.eye(cov.shape[0])
	condition = np.inf
	for jitter in (0.0,) + JITTERS:
		candidate = cov + jitter * identity if jitter else cov
		condition = np.linalg.cond(candidate)
		if not np.isfinite(condition) or condition > MAX_CONDITION:
			continue
		try:
			factor = linalg.cho_factor(candidate, lower=True)
		except linalg.LinAlgError:
			continue
		if jitter:
			logger.debug("Innovation covariance factorised with jitter %.0e at time index %s", jitter, index)
		return factor, jitter
	raise NumericalError(
		f"Innovation covariance is singular (condition number {condition:.3g} with jitter {JITTERS[-1]:.0e})",
		index=index,
		date=date,
	)


def condition_gaussian(
	mean_x: np.ndarray,
	cov_x: np.ndarray,
	mean_y: np.ndarray,
	cov_y: np.ndarray,
	cov_xy: np.ndarray,
	y: np.ndarray,
	index: Optional[int] = None,
	date: Optional[datetime.date] = None,
	factor=None,
) -> Tuple[np.ndarray, np.ndarray]:
	"""
	Conditions a jointly Gaussian (x, y) on an observed y:

		E[x | y]   = mean_x + C_xy C_yy^-1 (y - mean_y)
		Cov[x | y] = C_xx - C_xy C_yy^-1 C_xy'

	Args:
		mean_x (np.ndarray): Mean of x.
		cov_x (np.ndarray): Covariance of x.
		mean_y (np.ndarray): Mean of y.
		cov_y (np.ndarray): Covariance of y.
		cov_xy (np.ndarray): Cross-covariance of x and y.
		y (np.ndarray): Observed y.
		index (int, optional): Time index reported on failure.
		date (datetime.date, optional): Date reported on failure.
		factor (tuple, optional): Cholesky factor of `cov_y` from
			`scipy.linalg.cho_factor`, when already computed.

	Returns:
		tuple[np.ndarray, np.ndarray]: Conditional mean and covariance of x.

	Raises:
		NumericalError: If `cov_y` is singular.
	"""
	if factor is None:
		factor, _ = _factorise(np.asarray(cov_y, dtype=float), index=index, date=date)
	gain = linalg.cho_solve(factor, np.asarray(cov_xy, dtype=float).T).T
	mean = mean_x + gain @ (np.asarray(y, dtype=float) - mean_y)
	cov = cov_x - gain @ np.asarray(cov_xy, dtype=float).T
	return mean, cov


def _tidy_covariance(cov: np.ndarray, index=None) -> Tuple[np.ndarray, float]:
	asymmetry = float(np.max(np.abs(cov - cov.T)))
	cov = 0.5 * (cov + cov.T)
	eigenvalues, eigenvectors = np.linalg.eigh(cov)
	if eigenvalues.min() < 0:
		if eigenvalues.min() < -1e-10:
			logger.warning("Clipped negative covariance eigenvalue %.3g at time index %s", eigenvalues.min(), index)
		cov = (eigenvectors * np.maximum(eigenvalues, 0.0)) @ eigenvectors.T
		cov = 0.5 * (cov + cov.T)
	return cov, asymmetry


def predict_state(params: DnsParams, state: DnsState) -> DnsState:
	"""
	Propagates the factor belief through the system equation: mean
	theta0 + Z beta_hat and covariance Z Sigma Z' + sigma_eta2 I.

	Args:
		params (DnsParams): Static parameters.
		state (DnsState): Belief at t - 1.

	Returns:
		DnsState: Belief at t before observing y_t.
	"""
	Z = params.Z
	mean = params.theta0 + Z @ state.beta_hat
	cov = Z @ state.sigma @ Z.T + params.sigma_eta2 * np.eye(3)
	return DnsState(mean, cov)


def _update(
	params: DnsParams,
	predicted: DnsState,
	y: np.ndarray,
	loadings: np.ndarray,
	noise_cov: np.ndarray,
	index=None,
	date=None,
):
	m = y.size
	innovation = np.full(m, np.nan)
	innovation_cov = np.full((m, m), np.nan)
	observed = np.isfinite(y)
	if not observed.any():
		return predicted, innovation, innovation_cov, 0.0

	phi = loadings[observed]
	y_obs = y[observed]
	noise = noise_cov[np.ix_(observed, observed)]
	R = predicted.sigma
	mean_y = phi @ predicted.beta_hat
	S = phi @ R @ phi.T + noise
	cross = R @ phi.T

	factor, jitter = _factorise(S, index=index, date=date)
	if jitter:
		S = S + jitter * np.eye(S.shape[0])
	e = y_obs - mean_y
	beta_hat, sigma = condition_gaussian(predicted.beta_hat, R, mean_y, S, cross, y_obs, factor=factor)
	sigma, asymmetry = _tidy_covariance(sigma, index=index)

	log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
	quad = e @ linalg.cho_solve(factor, e)
	term = -0.5 * (log_det + y_obs.size * _LOG_2PI + quad)
	logger.debug("t=%s: %d observed, |e|=%.4g, log-likelihood term %.6f", index, y_obs.size, np.linalg.norm(e), term)

	innovation[observed] = e
	innovation_cov[np.ix_(observed, observed)] = S
	return DnsState(beta_hat, sigma, asymmetry), innovation, innovation_cov, float(term)


def _noise_covariance(params: DnsParams, taus: np.ndarray, kernel: Optional[GpKernelSpec]) -> np.ndarray:
	kernel = NO_KERNEL if kernel is None else kernel
	return kernel.matrix(taus) + params.sigma_eps2 * np.eye(taus.size)


def update_state(
	params: DnsParams,
	prior_state: DnsState,
	y_t: Iterable[float],
	grid: Union[MaturityGrid, Iterable[float]],
	kernel: Optional[GpKernelSpec] = None,
	index: Optional[int] = None,
) -> Tuple[DnsState, np.ndarray]:
	"""
	Conditions the predicted factor belief on the yields of one date.

	With Phi the loadings, R the predicted covariance and
	S = Phi R Phi' + K + sigma_eps2 I, the innovation is
	e = y - Phi beta_pred, the gain R Phi' S^-1, the posterior mean
	beta_pred + gain e and the posterior covariance R - gain Phi R,
	symmetrised and clipped to positive semi-definite. Missing yields are
	dropped from the update.

	Args:
		params (DnsParams): Static parameters.
		prior_state (DnsState): Belief from `predict_state`.
		y_t (Iterable[float]): Yields at the grid maturities, NaN where missing.
		grid (MaturityGrid | Iterable[float]): Maturities in years.
		kernel (GpKernelSpec, optional): Residual kernel. Defaults to none.
		index (int, optional): Time index reported on failure.

	Returns:
		tuple[DnsState, np.ndarray]: Posterior belief and the innovation
		(NaN where missing).

	Raises:
		NumericalError: If S stays singular after the jitter ladder.
	"""
	grid = grid if isinstance(grid, MaturityGrid) else MaturityGrid(grid)
	y = np.asarray(list(y_t), dtype=float)
	if y.size != len(grid):
		raise DomainError(f"`y_t` has {y.size} entries for {len(grid)} maturities.")
	loadings = dns_loadings(params.lam, grid)
	state, innovation, _, _ = _update(
		params, prior_state, y, loadings, _noise_covariance(params, grid.taus, kernel), index=index
	)
	return state, innovation


def predict_yield(
	state: DnsState,
	lam: float,
	tau_star,
	sigma_eps2: float = 0.0,
):
	"""
	Predicts the yield at new maturities by plugging the factor mean into
	the loadings, with the predictive variance phi Sigma phi' + sigma_eps2.

	Args:
		state (DnsState): Factor belief.
		lam (float): Decay factor in years.
		tau_star (float | Iterable[float]): Maturities in years, positive.
		sigma_eps2 (float, optional): Observation noise variance. Default is 0.

	Returns:
		tuple: Mean and variance, floats for a scalar `tau_star`.
	"""
	taus = np.asarray(tau_star, dtype=float)
	if np.any(~np.isfinite(taus)) or np.any(taus <= 0):
		raise DomainError("`tau_star` must be positive and finite.")
	phi = dns_loadings(lam, np.atleast_1d(taus))
	mean = phi @ state.beta_hat
	variance = np.einsum("ij,jk,ik->i", phi, state.sigma, phi) + sigma_eps2
	if taus.ndim == 0:
		return float(mean[0]), float(variance[0])
	return mean, variance


def default_initial_state(panel: YieldPanel) -> DnsState:
	"""
	Diffuse initial belief: mean (mean long-end yield, mean short-minus-long
	spread, 0) and covariance 25 I.

	Args:
		panel (YieldPanel): Observed yields.

	Returns:
		DnsState: The initial belief.
	"""
	long_end = float(np.nanmean(panel.long_end()))
	short_end = float(np.nanmean(panel.short_end()))
	return DnsState([long_end, short_end - long_end, 0.0], 25.0 * np.eye(3))


def run_filter(
	params: DnsParams,
	panel: YieldPanel,
	init_state: Optional[DnsState] = None,
	kernel: Optional[GpKernelSpec] = None,
) -> FilterResult:
	"""
	Runs the Kalman recursion over every date of `panel`.

	Args:
		params (DnsParams): Static parameters.
		panel (YieldPanel): Observed yields.
		init_state (DnsState, optional): Belief before the first date.
			Defaults to `default_initial_state`.
		kernel (GpKernelSpec, optional): Residual kernel. Defaults to none.

	Returns:
		FilterResult: Filtered and predicted states, innovations and the
		marginal log-likelihood.

	Raises:
		NumericalError: If an innovation covariance is singular; the error
			names the date.
	"""
	state = default_initial_state(panel) if init_state is None else init_state
	loadings = dns_loadings(params.lam, panel.grid)
	noise_cov = _noise_covariance(params, panel.grid.taus, kernel)
	T, m = panel.shape
	filtered, predicted = [], []
	innovations = np.full((T, m), np.nan)
	covariances = np.full((T, m, m), np.nan)
	terms = np.zeros(T)
	for t, (date, y) in enumerate(zip(panel.dates, panel.values)):
		prior = predict_state(params, state)
		state, innovations[t], covariances[t], terms[t] = _update(
			params, prior, y, loadings, noise_cov, index=t, date=date
		)
		predicted.append(prior)
		filtered.append(state)
	return FilterResult(panel.dates, filtered, predicted, innovations, covariances, terms)


def marginal_log_likelihood(
	params: DnsParams,
	panel: YieldPanel,
	init_state: Optional[DnsState] = None,
	kernel: Optional[GpKernelSpec] = None,
) -> float:
	"""
	Log-density of the whole panel with the factors integrated out,
	accumulated date by date as
	l_t = l_{t-1} - (log|S_t| + m log 2 pi + e_t' S_t^-1 e_t) / 2.

	Args:
		params (DnsParams): Static parameters.
		panel (YieldPanel): Observed yields.
		init_state (DnsState, optional): Belief before the first date.
		kernel (GpKernelSpec, optional): Residual kernel.

	Returns:
		float: The marginal log-likelihood.
	"""
	return run_filter(params, panel, init_state, kernel).log_likelihood


def grid_search_lambda(
	panel: YieldPanel,
	params_ex_lambda: Union[DnsParams, Callable[[float], DnsParams]],
	lambda_grid: Iterable[float],
	kernel: Optional[GpKernelSpec] = None,
	init_state: Optional[DnsState] = None,
) -> Tuple[float, pd.Series]:
	"""
	Picks the decay factor that maximises the marginal log-likelihood.

	Args:
		panel (YieldPanel): Observed yields.
		params_ex_lambda (DnsParams | Callable): Static parameters whose `lam`
			is replaced by each grid value, or a function building the
			parameters for a given lam.
		lambda_grid (Iterable[float]): Candidate decay factors, positive.
		kernel (GpKernelSpec, optional): Residual kernel.
		init_state (DnsState, optional): Belief before the first date.

	Returns:
		tuple[float, pd.Series]: The selected lam (ties go to the smallest)
		and the score of every grid point, NaN where evaluation failed.

	Raises:
		NumericalError: If every grid point failed.
	"""
	grid = np.asarray(list(lambda_grid), dtype=float)
	if grid.size == 0 or np.any(~np.isfinite(grid)) or np.any(grid <= 0):
		raise DomainError("`lambda_grid` must be a non-empty list of positive values.")
	if isinstance(params_ex_lambda, DnsParams):
		params_for = params_ex_lambda.with_lambda
	else:
		params_for = params_ex_lambda

	scores = np.full(grid.size, np.nan)
	for i, lam in enumerate(grid):
		try:
			scores[i] = marginal_log_likelihood(params_for(lam), panel, init_state, kernel)
		except PybnsError as error:
			logger.warning("lambda=%g failed: %s", lam, error)
	if np.all(np.isnan(scores)):
		raise NumericalError("Every lambda on the grid failed")
	best = np.nanmax(scores)
	selected = float(np.min(grid[scores == best]))
	logger.info("Selected lambda=%g (log-likelihood %.6f)", selected, best)
	return selected, pd.Series(scores, index=pd.Index(grid, name="lambda"), name="log_likelihood")


def simulate_dns(
	params: DnsParams,
	grid: Union[MaturityGrid, Iterable[float]],
	T: int,
	seed: int,
	kernel: Optional[GpKernelSpec] = None,
	init_state: Optional[DnsState] = None,
) -> Tuple[YieldPanel, np.ndarray]:
	"""
	Forward-simulates the DNS model.

	The chain starts from `init_state.beta_hat` when given, otherwise from
	the stationary mean, and is observed on consecutive business days from
	3 January 2000.

	Args:
		params (DnsParams): Static parameters.
		grid (MaturityGrid | Iterable[float]): Maturities in years.
		T (int): Number of dates, at least 1.
		seed (int): Random seed.
		kernel (GpKernelSpec, optional): Residual kernel added to each date.
		init_state (DnsState, optional): Starting factors.

	Returns:
		tuple[YieldPanel, np.ndarray]: The simulated panel and the T x 3 true factors.
	"""
	if int(T) != T or T < 1:
		raise DomainError("`T` must be a positive integer.")
	grid = grid if isinstance(grid, MaturityGrid) else MaturityGrid(grid)
	kernel = NO_KERNEL if kernel is None else kernel
	rng = np.random.default_rng(seed)
	loadings = dns_loadings(params.lam, grid)
	K = kernel.matrix(grid)
	m = len(grid)

	beta = params.stationary_mean() if init_state is None else init_state.beta_hat.copy()
	states = np.empty((T, 3))
	yields = np.empty((T, m))
	for t in range(T):
		beta = params.theta0 + params.theta1 * beta + rng.normal(0.0, np.sqrt(params.sigma_eta2), 3)
		y = loadings @ beta + rng.normal(0.0, np.sqrt(params.sigma_eps2), m)
		if kernel.kind != "none":
			y = y + rng.multivariate_normal(np.zeros(m), K, method="eigh")
		states[t] = beta
		yields[t] = y
	dates = [timestamp.date() for timestamp in pd.bdate_range("2000-01-03", periods=T)]
	return YieldPanel(dates, grid, yields), states


def two_step_estimate(panel: YieldPanel, lam: float) -> DnsParams:
	"""
	Estimates the static parameters in two least-squares steps: a
	cross-sectional regression of each date's yields on the loadings, then
	an AR(1) regression of each factor series on its lag. With fewer than
	four dates every factor is taken as a random walk.

	Args:
		panel (YieldPanel): Observed yields.
		lam (float): Decay factor in years.

	Returns:
		DnsParams: The estimates.
	"""
	loadings = dns_loadings(lam, panel.grid)
	betas, residuals = [], []
	for y in panel.values:
		observed = np.isfinite(y)
		if observed.sum() < 3:
			continue
		coef, *_ = np.linalg.lstsq(loadings[observed], y[observed], rcond=None)
		betas.append(coef)
		residuals.append(y[observed] - loadings[observed] @ coef)
	if not betas:
		raise DomainError("No date has three or more observed yields.")
	betas = np.array(betas)
	sigma_eps2 = max(float(np.mean(np.concatenate(residuals) ** 2)), 1e-8)

	n = betas.shape[0]
	theta0, theta1, shocks = np.zeros(3), np.ones(3), []
	for i in range(3):
		series = betas[:, i]
		if n < 4:
			shocks.append(np.diff(series))
			continue
		design = np.column_stack([np.ones(n - 1), series[:-1]])
		(theta0[i], theta1[i]), *_ = np.linalg.lstsq(design, series[1:], rcond=None)
		shocks.append(series[1:] - design @ np.array([theta0[i], theta1[i]]))
	shocks = np.concatenate(shocks)
	sigma_eta2 = max(float(np.mean(shocks ** 2)) if shocks.size else 0.0, 1e-8)
	return DnsParams(theta0, theta1, sigma_eps2, sigma_eta2, lam)


@dataclass
class DnsFit:
	"""
	Maximum-likelihood estimate of the DNS static parameters.

	Attributes:
		params (DnsParams): The estimate.
		log_likelihood (float): Marginal log-likelihood at the estimate.
		converged (bool): Whether the optimiser met its gradient tolerance.
		iterations (int): Optimiser iterations.
	"""
	params: DnsParams
	log_likelihood: float
	converged: bool
	iterations: int


def fit_dns_params(
	panel: YieldPanel,
	lam: float,
	init: Optional[DnsParams] = None,
	kernel: Optional[GpKernelSpec] = None,
	init_state: Optional[DnsState] = None,
	gtol: float = 1e-4,
	max_iters: int = 200,
) -> DnsFit:
	"""
	Maximises the marginal log-likelihood over the eight static parameters
	at a fixed decay factor, starting from `init` (by default
	`two_step_estimate`). Variances are searched on the log scale and the
	gradient is taken by central differences.

	Args:
		panel (YieldPanel): Observed yields.
		lam (float): Decay factor in years.
		init (DnsParams, optional): Starting parameters.
		kernel (GpKernelSpec, optional): Residual kernel.
		init_state (DnsState, optional): Belief before the first date.
		gtol (float, optional): Gradient-norm tolerance. Default is 1e-4.
		max_iters (int, optional): Iteration cap. Default is 200.

	Returns:
		DnsFit: The estimate.
	"""
	init = two_step_estimate(panel, lam) if init is None else init.with_lambda(lam)

	def unpack(x):
		return DnsParams(x[0:3], x[3:6], np.exp(x[6]), np.exp(x[7]), lam)

	def negative_log_likelihood(x):
		try:
			return -marginal_log_likelihood(unpack(x), panel, init_state, kernel)
		except PybnsError:
			return np.inf

	def objective(x):
		value = negative_log_likelihood(x)
		if not np.isfinite(value):
			return np.inf, np.full(x.size, np.nan)
		grad = np.empty(x.size)
		for i in range(x.size):
			h = 1e-5 * max(1.0, abs(x[i]))
			step = np.zeros(x.size)
			step[i] = h
			grad[i] = (negative_log_likelihood(x + step) - negative_log_likelihood(x - step)) / (2.0 * h)
		return value, grad

	x0 = np.concatenate([
		init.theta0,
		init.theta1,
		np.log([max(init.sigma_eps2, 1e-8), max(init.sigma_eta2, 1e-8)]),
	])
	outcome = bfgs_minimise(objective, x0, gtol=gtol, max_iters=max_iters)
	if not np.isfinite(outcome.fun):
		raise NumericalError("Marginal likelihood is not finite at the starting parameters")
	logger.info(
		"DNS parameters at lambda=%g: log-likelihood %.6f after %d iterations",
		lam, -outcome.fun, outcome.iterations,
	)
	return DnsFit(unpack(outcome.x), -outcome.fun, outcome.converged, outcome.iterations)
