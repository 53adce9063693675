"""
This module defines the Bayesian Nelson-Siegel model: the Gaussian
likelihood of a yield panel, the three prior models, and the unnormalised
log-posterior on an unconstrained parameter vector together with its
analytic gradient.

The prior models are

	- ``m1``: (beta0, beta1, beta2, lam, sigma) each Inverse-Gamma(1, 1);
	- ``m2``: (beta0, beta1, beta2) ~ Normal(0, sigma_beta) and
	  (lam, sigma, sigma_beta) each Inverse-Gamma(1, 1);
	- ``m3``: as ``m2`` with Inverse-Gamma(0.1, 0.1).

Inverse-Gamma(a, b) has shape `a`, rate `b` and density
b^a / Gamma(a) x^(-a-1) e^(-b/x).

Samplers and optimisers work on an unconstrained point z: positive
parameters enter as their logarithm, the hierarchical betas as themselves.

Example:
	Evaluate the log-posterior of the May 2018 panel at a point::

		import numpy as np
		from pybns import MODEL2, Posterior, builtin_fixture_may2018

		posterior = Posterior(MODEL2, builtin_fixture_may2018())
		z = MODEL2.unconstrain([3.1, -1.4, 0.0, 1.0, 0.05, 1.6])
		log_post, gradient = posterior(z)
"""

from dataclasses import dataclass
from typing import Iterable, List, Tuple

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .curve import NsParams, slope_loading, slope_loading_derivative
from .errors import DomainError
from .panel import YieldPanel

# A point on R^p; see `PriorModel.constrain` for the mapping to parameters.
UnconstrainedPoint = np.ndarray

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class PriorModel:
	"""
	A prior model for the Nelson-Siegel parameters.

	Attributes:
		tag (str): One of ``m1``, ``m2``, ``m3``.
		a (float): Inverse-Gamma shape.
		b (float): Inverse-Gamma rate.
		hierarchical (bool): Whether the betas carry a Normal(0, sigma_beta) prior.
	"""
	tag: str
	a: float
	b: float
	hierarchical: bool

	@property
	def param_names(self) -> List[str]:
		"""list[str]: Parameter names in vector order."""
		names = ["beta0", "beta1", "beta2", "lambda", "sigma"]
		return names + ["sigma_beta"] if self.hierarchical else names

	@property
	def dim(self) -> int:
		"""int: Number of parameters."""
		return 6 if self.hierarchical else 5

	@property
	def positive(self) -> np.ndarray:
		"""np.ndarray: Indices of the parameters with positive support."""
		return np.array([3, 4, 5]) if self.hierarchical else np.arange(5)

	@classmethod
	def from_tag(cls, tag: str) -> "PriorModel":
		"""
		Looks up one of the built-in prior models.

		Args:
			tag (str): ``m1``, ``m2`` or ``m3`` (``model1`` etc. also accepted).

		Returns:
			PriorModel: The prior model.
		"""
		key = tag.lower().replace("model", "m")
		if key not in MODELS:
			raise DomainError(f"Unknown prior model {tag!r}; expected one of {sorted(MODELS)}.")
		return MODELS[key]

	def constrain(self, z: Iterable[float]) -> np.ndarray:
		"""
		Maps an unconstrained point to the parameter vector.

		Args:
			z (Iterable[float]): Unconstrained point of length `dim`.

		Returns:
			np.ndarray: Parameters in `param_names` order.
		"""
		theta = np.array(z, dtype=float)
		if theta.shape != (self.dim,):
			raise DomainError(f"Expected a point of length {self.dim}, got shape {theta.shape}.")
		theta[self.positive] = np.exp(theta[self.positive])
		return theta

	def unconstrain(self, theta) -> np.ndarray:
		"""
		Maps a parameter vector (or `NsParams`) to the unconstrained space.

		Args:
			theta (Iterable[float] | NsParams): Parameters in `param_names` order.

		Returns:
			np.ndarray: The unconstrained point.
		"""
		if isinstance(theta, NsParams):
			theta = theta.as_array()
		z = np.array(theta, dtype=float)
		if z.shape != (self.dim,):
			raise DomainError(f"Expected {self.dim} parameters, got shape {z.shape}.")
		if np.any(z[self.positive] <= 0):
			raise DomainError(f"Parameters {self.positive.tolist()} must be positive under {self.tag}.")
		z[self.positive] = np.log(z[self.positive])
		return z

	def log_jacobian(self, z: Iterable[float]) -> float:
		"""
		Log absolute determinant of the Jacobian of `constrain` at `z`.

		Args:
			z (Iterable[float]): Unconstrained point.

		Returns:
			float: The log-Jacobian.
		"""
		return float(np.sum(np.asarray(z, dtype=float)[self.positive]))

	def to_params(self, z: Iterable[float]) -> NsParams:
		"""Constrains `z` and wraps the result in `NsParams`."""
		return NsParams.from_array(self.constrain(z))


MODEL1 = PriorModel(tag="m1", a=1.0, b=1.0, hierarchical=False)
MODEL2 = PriorModel(tag="m2", a=1.0, b=1.0, hierarchical=True)
MODEL3 = PriorModel(tag="m3", a=0.1, b=0.1, hierarchical=True)
MODELS = {model.tag: model for model in (MODEL1, MODEL2, MODEL3)}


def inverse_gamma_cdf(x: float, a: float, b: float) -> float:
	"""
	Cumulative distribution function of Inverse-Gamma(a, b).

	Args:
		x (float): Evaluation point.
		a (float): Shape.
		b (float): Rate.

	Returns:
		float: P[X <= x].
	"""
	return float(stats.invgamma.cdf(x, a, scale=b))


def _inverse_gamma_logpdf(x: np.ndarray, a: float, b: float) -> np.ndarray:
	return a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(x) - b / x


def log_likelihood(panel: YieldPanel, params: NsParams) -> float:
	"""
	Gaussian log-likelihood of every observed cell of `panel` around the
	Nelson-Siegel curve, with independent errors of standard deviation
	`params.sigma`. Missing cells are skipped.

	Args:
		panel (YieldPanel): Observed yields.
		params (NsParams): Curve parameters.

	Returns:
		float: The log-likelihood.
	"""
	if params.sigma <= 0:
		raise DomainError("`sigma` must be positive.")
	taus, ys = panel.observed()
	if ys.size == 0:
		raise DomainError("The panel has no observed yields.")
	x = taus / params.lam
	f1 = slope_loading(x)
	mu = params.beta0 + params.beta1 * f1 + params.beta2 * (f1 - np.exp(-x))
	residuals = ys - mu
	return float(
		-0.5 * ys.size * (_LOG_2PI + 2.0 * np.log(params.sigma))
		- residuals @ residuals / (2.0 * params.sigma ** 2)
	)


def log_prior(model: PriorModel, params: NsParams) -> float:
	"""
	Log prior density of `params` under `model`.

	Parameters outside the support (any non-positive component under ``m1``)
	give ``-inf`` rather than an error, so optimisers and samplers can reject
	them.

	Args:
		model (PriorModel): Prior model.
		params (NsParams): Parameters; `sigma_beta` required for hierarchical models.

	Returns:
		float: The log prior density.
	"""
	if not model.hierarchical:
		theta = params.as_array()[:5]
		if np.any(theta <= 0):
			return -np.inf
		return float(np.sum(_inverse_gamma_logpdf(theta, model.a, model.b)))

	if params.sigma_beta is None:
		raise DomainError(f"Prior model {model.tag} needs `sigma_beta`.")
	scales = np.array([params.lam, params.sigma, params.sigma_beta])
	return float(
		np.sum(stats.norm.logpdf(params.betas, loc=0.0, scale=params.sigma_beta))
		+ np.sum(_inverse_gamma_logpdf(scales, model.a, model.b))
	)


class Posterior:
	"""
	Unnormalised log-posterior of a prior model given a yield panel, as a
	function of the unconstrained point.

	Calling the instance returns the log-density and its gradient. A
	non-finite evaluation returns ``(-inf, nan gradient)`` instead of raising.

	Attributes:
		model (PriorModel): Prior model.
		panel (YieldPanel): Observed yields.
		jacobian (bool): Whether the log-Jacobian of the constraining transform
			is included. Samplers need it; the posterior mode on the natural
			scale does not.
	"""
	def __init__(self, model: PriorModel, panel: YieldPanel, jacobian: bool = True):
		"""
		Initialises a Posterior instance.

		Args:
			model (PriorModel): Prior model.
			panel (YieldPanel): Observed yields.
			jacobian (bool, optional): Include the log-Jacobian. Default is True.
		"""
		taus, ys = panel.observed()
		if ys.size == 0:
			raise DomainError("The panel has no observed yields.")
		self.model = model
		self.panel = panel
		self.jacobian = jacobian
		self._taus = taus
		self._ys = ys

	@property
	def dim(self) -> int:
		"""int: Dimension of the unconstrained space."""
		return self.model.dim

	def log_density(self, z: UnconstrainedPoint) -> float:
		"""Returns the log-density only."""
		return self(z)[0]

	def __call__(self, z: UnconstrainedPoint) -> Tuple[float, np.ndarray]:
		model = self.model
		z = np.asarray(z, dtype=float)
		with np.errstate(all="ignore"):
			theta = model.constrain(z)
			beta0, beta1, beta2, lam, sigma = theta[:5]
			n = self._ys.size

			x = self._taus / lam
			decay = np.exp(-x)
			f1 = slope_loading(x)
			f2 = f1 - decay
			residuals = self._ys - (beta0 + beta1 * f1 + beta2 * f2)
			sum_sq = residuals @ residuals
			variance = sigma * sigma

			log_post = -0.5 * n * (_LOG_2PI + 2.0 * np.log(sigma)) - sum_sq / (2.0 * variance)
			d_f1 = slope_loading_derivative(x)
			d_mu_d_lam = (beta1 * d_f1 + beta2 * (d_f1 + decay)) * (-x / lam)
			grad = np.zeros(model.dim)
			grad[0] = residuals.sum() / variance
			grad[1] = residuals @ f1 / variance
			grad[2] = residuals @ f2 / variance
			grad[3] = residuals @ d_mu_d_lam / variance
			grad[4] = -n / sigma + sum_sq / (variance * sigma)

			a, b = model.a, model.b
			if model.hierarchical:
				sigma_beta = theta[5]
				betas = theta[:3]
				log_post += np.sum(
					-0.5 * _LOG_2PI - np.log(sigma_beta) - betas ** 2 / (2.0 * sigma_beta ** 2)
				)
				grad[:3] -= betas / sigma_beta ** 2
				grad[5] += -3.0 / sigma_beta + betas @ betas / sigma_beta ** 3
			scales = theta[model.positive]
			log_post += np.sum(_inverse_gamma_logpdf(scales, a, b))
			grad[model.positive] += -(a + 1.0) / scales + b / scales ** 2

			# chain rule through theta = exp(z) on the positive coordinates
			grad[model.positive] *= scales
			if self.jacobian:
				log_post += np.sum(z[model.positive])
				grad[model.positive] += 1.0

		if not np.isfinite(log_post) or not np.all(np.isfinite(grad)):
			return -np.inf, np.full(model.dim, np.nan)
		return float(log_post), grad


def log_posterior(
	model: PriorModel,
	panel: YieldPanel,
	point: UnconstrainedPoint,
	jacobian: bool = True,
) -> Tuple[float, np.ndarray]:
	"""
	Unnormalised log-posterior (log-likelihood + log-prior, plus the
	log-Jacobian of the constraining transform when `jacobian` is set) and its
	gradient with respect to the unconstrained point.

	Args:
		model (PriorModel): Prior model.
		panel (YieldPanel): Observed yields.
		point (UnconstrainedPoint): Unconstrained point.
		jacobian (bool, optional): Include the log-Jacobian. Default is True.

	Returns:
		tuple[float, np.ndarray]: Log-density and gradient; ``(-inf, nan)``
		for a non-finite evaluation.
	"""
	return Posterior(model, panel, jacobian=jacobian)(point)


def poisson_likelihood_demo(y: int, lambdas: Iterable[float]) -> List[float]:
	"""
	Likelihood of a single Poisson count `y` over candidate rates, that is
	e^-lam lam^y / y! for each rate. Tracing it over a range of rates draws
	the likelihood curve of the rate given the count.

	Args:
		y (int): Observed count, non-negative.
		lambdas (Iterable[float]): Candidate rates, positive.

	Returns:
		list[float]: The likelihood of each rate.
	"""
	if int(y) != y or y < 0:
		raise DomainError("`y` must be a non-negative integer.")
	lambdas = np.asarray(list(lambdas), dtype=float)
	if np.any(~np.isfinite(lambdas)) or np.any(lambdas <= 0):
		raise DomainError("Poisson rates must be positive and finite.")
	return stats.poisson.pmf(int(y), lambdas).tolist()
