"""
This module provides the Nelson-Siegel yield curve, its instantaneous forward
rate, and the factor loadings of the dynamic (state-space) form of the model.

Maturities are measured in years and yields in percent. All functions are
pure and accept scalars or numpy arrays of maturities.

Example:
	Evaluate a fitted curve along the treasury tenor grid::

		import numpy as np
		from pybns import NsParams, ns_yield, ns_forward_rate

		params = NsParams(beta0=3.111, beta1=-1.440, beta2=-0.016, lam=0.950, sigma=0.043)
		taus = np.array([1/12, 0.25, 0.5, 1, 2, 3, 5, 7, 10, 20, 30])
		print(ns_yield(params, taus))
		print(ns_forward_rate(params, taus))
"""

from dataclasses import dataclass, astuple
from typing import Iterable, Optional, Union

import numpy as np

from .errors import DomainError

# (1 - e^-x) / x loses digits to cancellation below this point.
SERIES_CUTOFF = 1e-4

ArrayLike = Union[float, Iterable[float], np.ndarray]


@dataclass(frozen=True)
class NsParams:
	"""
	Static parameters of the Nelson-Siegel curve and its observation model.

	Attributes:
		beta0 (float): Long-run level, in percent.
		beta1 (float): Short-term effect, in percent.
		beta2 (float): Medium-term effect, in percent.
		lam (float): Decay factor, in years.
		sigma (float): Observation noise standard deviation, in percent.
		sigma_beta (float, optional): Scale of the hierarchical prior on the
			betas. Only present for the hierarchical prior models.
	"""
	beta0: float
	beta1: float
	beta2: float
	lam: float
	sigma: float
	sigma_beta: Optional[float] = None

	def __post_init__(self):
		values = [v for v in astuple(self) if v is not None]
		if not np.all(np.isfinite(values)):
			raise DomainError(f"All parameters must be finite, got {self}.")
		if self.lam <= 0:
			raise DomainError("`lam` must be positive.")
		if self.sigma <= 0:
			raise DomainError("`sigma` must be positive.")
		if self.sigma_beta is not None and self.sigma_beta <= 0:
			raise DomainError("`sigma_beta` must be positive when present.")

	@property
	def betas(self) -> np.ndarray:
		"""np.ndarray: The factor vector (beta0, beta1, beta2)."""
		return np.array([self.beta0, self.beta1, self.beta2])

	def as_array(self) -> np.ndarray:
		"""
		Returns the parameters as a vector in declaration order, omitting
		`sigma_beta` when it is absent.

		Returns:
			np.ndarray: Vector of length 5 or 6.
		"""
		return np.array([v for v in astuple(self) if v is not None], dtype=float)

	@classmethod
	def from_array(cls, values: Iterable[float]) -> "NsParams":
		"""
		Builds parameters from a vector produced by `as_array`.

		Args:
			values (Iterable[float]): Vector of length 5 or 6.

		Returns:
			NsParams: The parameter set.
		"""
		values = [float(v) for v in values]
		if len(values) not in (5, 6):
			raise DomainError(f"Expected 5 or 6 parameter values, got {len(values)}.")
		return cls(*values)

	def __str__(self):
		text = (
			f"beta0: {self.beta0:.4f}; beta1: {self.beta1:.4f}; beta2: {self.beta2:.4f}; "
			f"lam: {self.lam:.4f}; sigma: {self.sigma:.4f}"
		)
		if self.sigma_beta is not None:
			text += f"; sigma_beta: {self.sigma_beta:.4f}"
		return text


class MaturityGrid:
	"""
	An ordered grid of maturities.

	Attributes:
		taus (np.ndarray): Strictly increasing, positive maturities in years.
	"""
	def __init__(self, taus: Iterable[float]):
		"""
		Initialises a MaturityGrid instance.

		Args:
			taus (Iterable[float]): Maturities in years.
		"""
		taus = np.asarray(list(taus), dtype=float)
		if taus.ndim != 1 or taus.size == 0:
			raise DomainError("`taus` must be a non-empty one-dimensional sequence.")
		if not np.all(np.isfinite(taus)) or np.any(taus <= 0):
			raise DomainError("Maturities must be positive and finite.")
		if np.any(np.diff(taus) <= 0):
			raise DomainError("Maturities must be strictly increasing.")
		taus.setflags(write=False)
		self.taus = taus

	def __len__(self):
		return self.taus.size

	def __iter__(self):
		return iter(self.taus.tolist())

	def __eq__(self, other):
		if not isinstance(other, MaturityGrid):
			return NotImplemented
		return np.array_equal(self.taus, other.taus)

	def __repr__(self):
		return f"MaturityGrid({np.round(self.taus, 6).tolist()})"


def _as_maturities(tau: ArrayLike) -> np.ndarray:
	tau = np.asarray(tau, dtype=float)
	if not np.all(np.isfinite(tau)):
		raise DomainError("Maturities must be finite.")
	if np.any(tau < 0):
		raise DomainError("Maturities must be non-negative.")
	return tau


def slope_loading(x: np.ndarray) -> np.ndarray:
	"""
	Evaluates f1(x) = (1 - e^-x) / x with its limit 1 at x = 0.

	Args:
		x (np.ndarray): Scaled maturities tau / lambda, non-negative.

	Returns:
		np.ndarray: The slope loading.
	"""
	x = np.asarray(x, dtype=float)
	small = x < SERIES_CUTOFF
	safe = np.where(small, 1.0, x)
	series = 1.0 - x / 2.0 + x ** 2 / 6.0 - x ** 3 / 24.0
	return np.where(small, series, -np.expm1(-safe) / safe)


def slope_loading_derivative(x: np.ndarray) -> np.ndarray:
	"""
	Evaluates df1/dx = (e^-x (1 + x) - 1) / x^2.

	Args:
		x (np.ndarray): Scaled maturities tau / lambda, non-negative.

	Returns:
		np.ndarray: The derivative of the slope loading.
	"""
	x = np.asarray(x, dtype=float)
	small = x < 1e-3
	safe = np.where(small, 1.0, x)
	series = -0.5 + x / 3.0 - x ** 2 / 8.0 + x ** 3 / 30.0
	return np.where(small, series, (np.exp(-safe) * (1.0 + safe) - 1.0) / safe ** 2)


def ns_curve(
	beta0: ArrayLike,
	beta1: ArrayLike,
	beta2: ArrayLike,
	lam: ArrayLike,
	tau: ArrayLike,
) -> np.ndarray:
	"""
	Broadcasting form of the Nelson-Siegel yield function.

	Parameters may be arrays (for example one entry per posterior draw with
	shape (M, 1)) as long as they broadcast against `tau`.

	Args:
		beta0 (ArrayLike): Long-run level.
		beta1 (ArrayLike): Short-term effect.
		beta2 (ArrayLike): Medium-term effect.
		lam (ArrayLike): Decay factor, positive.
		tau (ArrayLike): Maturities in years, non-negative.

	Returns:
		np.ndarray: Yields in percent.
	"""
	x = np.asarray(tau, dtype=float) / np.asarray(lam, dtype=float)
	decay = np.exp(-x)
	return beta0 + (np.asarray(beta1) + beta2) * slope_loading(x) - beta2 * decay


def ns_yield(params: NsParams, tau: ArrayLike) -> Union[float, np.ndarray]:
	"""
	Evaluates the Nelson-Siegel yield

	    y(tau) = b0 + (b1 + b2) (1 - e^(-tau/lam)) / (tau/lam) - b2 e^(-tau/lam)

	at one or more maturities. At tau = 0 the analytic limit b0 + b1 is
	returned.

	Args:
		params (NsParams): Curve parameters.
		tau (ArrayLike): Maturities in years.

	Returns:
		float | np.ndarray: Yields in percent, matching the shape of `tau`.

	Raises:
		DomainError: If any maturity is negative or non-finite.
	"""
	tau = _as_maturities(tau)
	result = ns_curve(params.beta0, params.beta1, params.beta2, params.lam, tau)
	return float(result) if result.ndim == 0 else result


def ns_forward_rate(params: NsParams, tau: ArrayLike) -> Union[float, np.ndarray]:
	"""
	Evaluates the instantaneous forward rate

	    r(tau) = b0 + b1 e^(-tau/lam) + b2 (tau/lam) e^(-tau/lam),

	whose running average over [0, tau] is the yield `ns_yield`.

	Args:
		params (NsParams): Curve parameters.
		tau (ArrayLike): Maturities in years.

	Returns:
		float | np.ndarray: Forward rates in percent.

	Raises:
		DomainError: If any maturity is negative or non-finite.
	"""
	tau = _as_maturities(tau)
	x = tau / params.lam
	decay = np.exp(-x)
	result = params.beta0 + params.beta1 * decay + params.beta2 * x * decay
	return float(result) if result.ndim == 0 else result


def dns_loadings(lam: float, grid: Union[MaturityGrid, ArrayLike]) -> np.ndarray:
	"""
	Builds the loading matrix of the dynamic Nelson-Siegel observation
	equation. Row j is (1, f1(tau_j), f2(tau_j)) with
	f1 = (1 - e^-x) / x, f2 = f1 - e^-x and x = tau_j / lam.

	Args:
		lam (float): Decay factor in years.
		grid (MaturityGrid | ArrayLike): Maturities in years.

	Returns:
		np.ndarray: Matrix of shape (m, 3).

	Raises:
		DomainError: If `lam` is not positive or a maturity is invalid.
	"""
	if not np.isfinite(lam) or lam <= 0:
		raise DomainError("`lam` must be positive and finite.")
	taus = grid.taus if isinstance(grid, MaturityGrid) else _as_maturities(grid)
	x = np.atleast_1d(taus) / lam
	f1 = slope_loading(x)
	f2 = f1 - np.exp(-x)
	return np.column_stack([np.ones_like(x), f1, f2])
