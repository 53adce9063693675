"""
This module prices fixed-coupon bonds off a Nelson-Siegel curve and
propagates posterior uncertainty in the curve into the price.

Each cash flow is discounted continuously at the curve's spot yield for its
payment time, P = sum_k CF_k exp(-y(t_k) / 100 * t_k). Pricing every
posterior draw gives a price distribution whose 2.5% and 97.5% quantiles
form the band a traded price is compared against.

Example:
	Price a 15 year 4% semi-annual bond over posterior draws::

		from pybns import BondSpec, price_monte_carlo, valuation_verdict

		bond = BondSpec(par=1000, coupon_rate=0.04, frequency=2, maturity=15)
		summary, prices = price_monte_carlo(draws, bond)
		print(summary)
		print(valuation_verdict(summary, traded=1080.0).valuation)
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Tuple

import numpy as np
import pandas as pd

from .curve import NsParams, ns_curve
from .errors import DomainError
from .hmc import PosteriorDraws, summary_statistics

logger = logging.getLogger(__name__)

FREQUENCIES = (1, 2, 4, 12)
CURVE_PARAMETERS = ["beta0", "beta1", "beta2", "lambda"]


@dataclass(frozen=True)
class BondSpec:
	"""
	A fixed-coupon bond.

	Attributes:
		par (float): Face value, paid at maturity.
		coupon_rate (float): Annual coupon as a fraction of par.
		frequency (int): Coupon payments per year, one of 1, 2, 4, 12.
		maturity (float): Time to maturity in years, a whole number of
			coupon periods.
	"""
	par: float
	coupon_rate: float
	frequency: int
	maturity: float

	def __post_init__(self):
		if not np.isfinite(self.par) or self.par <= 0:
			raise DomainError("`par` must be positive.")
		if not np.isfinite(self.coupon_rate) or self.coupon_rate < 0:
			raise DomainError("`coupon_rate` must be non-negative.")
		if self.frequency not in FREQUENCIES:
			raise DomainError(f"`frequency` must be one of {FREQUENCIES}.")
		if not np.isfinite(self.maturity) or self.maturity <= 0:
			raise DomainError("`maturity` must be positive.")
		periods = self.maturity * self.frequency
		if abs(periods - round(periods)) > 1e-9:
			raise DomainError("`maturity` must be a whole number of coupon periods.")

	@property
	def periods(self) -> int:
		"""int: Number of coupon payments."""
		return int(round(self.maturity * self.frequency))


@dataclass(frozen=True)
class PriceSummary:
	"""
	Distribution of a Monte Carlo price.

	Attributes:
		mean (float): Mean price.
		median (float): Median price.
		ci_low (float): 2.5% quantile.
		ci_high (float): 97.5% quantile.
		draws_used (int): Number of priced draws.
		sd (float): Standard deviation of the price.
	"""
	mean: float
	median: float
	ci_low: float
	ci_high: float
	draws_used: int
	sd: float = 0.0

	def __post_init__(self):
		if not self.ci_low <= self.median <= self.ci_high:
			raise DomainError("Expected ci_low <= median <= ci_high.")

	def as_dict(self) -> dict:
		"""dict: The summary keyed by field name."""
		return {
			"mean": self.mean,
			"sd": self.sd,
			"ci_low": self.ci_low,
			"median": self.median,
			"ci_high": self.ci_high,
			"draws_used": self.draws_used,
		}


class Valuation(Enum):
	"""Position of a traded price relative to the model price band."""
	UNDERVALUED = "undervalued"
	FAIR = "fair"
	OVERVALUED = "overvalued"


@dataclass(frozen=True)
class ValuationVerdict:
	"""
	Verdict on a traded price.

	Attributes:
		valuation (Valuation): The verdict.
		traded (float): Traded price.
		ci_low (float): Lower band edge.
		ci_high (float): Upper band edge.
	"""
	valuation: Valuation
	traded: float
	ci_low: float
	ci_high: float


def cash_flows(bond: BondSpec) -> Tuple[np.ndarray, np.ndarray]:
	"""
	Builds the payment schedule: a coupon of par * coupon_rate / frequency
	at every k / frequency years, plus par at maturity.

	Args:
		bond (BondSpec): The bond.

	Returns:
		tuple[np.ndarray, np.ndarray]: Payment times in years and amounts.
	"""
	times = np.arange(1, bond.periods + 1) / bond.frequency
	amounts = np.full(bond.periods, bond.par * bond.coupon_rate / bond.frequency)
	amounts[-1] += bond.par
	return times, amounts


def _discounted(beta0, beta1, beta2, lam, bond: BondSpec) -> np.ndarray:
	times, amounts = cash_flows(bond)
	yields = ns_curve(beta0, beta1, beta2, lam, times)
	return np.sum(amounts * np.exp(-yields / 100.0 * times), axis=-1)


def price_bond(params: NsParams, bond: BondSpec) -> float:
	"""
	Prices `bond` off the Nelson-Siegel curve of `params`.

	Args:
		params (NsParams): Curve parameters.
		bond (BondSpec): The bond.

	Returns:
		float: The price, in the units of `bond.par`.
	"""
	return float(_discounted(params.beta0, params.beta1, params.beta2, params.lam, bond))


def price_draws(draws: PosteriorDraws, bond: BondSpec) -> np.ndarray:
	"""
	Prices `bond` under every draw.

	Args:
		draws (PosteriorDraws): Draws with columns beta0, beta1, beta2 and lambda.
		bond (BondSpec): The bond.

	Returns:
		np.ndarray: One price per draw, in draw order.
	"""
	beta0, beta1, beta2, lam = (draws.column(name)[:, None] for name in CURVE_PARAMETERS)
	return _discounted(beta0, beta1, beta2, lam, bond)


def price_monte_carlo(draws: PosteriorDraws, bond: BondSpec) -> Tuple[PriceSummary, np.ndarray]:
	"""
	Prices `bond` under every posterior draw and summarises the result with
	the same quantile rule as posterior summaries.

	Fewer than 100 draws gives an unreliable band and is logged as a
	warning.

	Args:
		draws (PosteriorDraws): Posterior draws.
		bond (BondSpec): The bond.

	Returns:
		tuple[PriceSummary, np.ndarray]: The summary and the per-draw prices.
	"""
	if len(draws) < 100:
		logger.warning("Pricing over %d draws; the credible band is unreliable below 100", len(draws))
	prices = price_draws(draws, bond)
	stats = summary_statistics(prices)
	summary = PriceSummary(
		mean=float(np.mean(prices)),
		median=stats["median"],
		ci_low=stats["2.5%"],
		ci_high=stats["97.5%"],
		draws_used=int(prices.size),
		sd=stats["sd"],
	)
	return summary, prices


def valuation_verdict(summary: PriceSummary, traded: float) -> ValuationVerdict:
	"""
	Compares a traded price against the credible band: below it the bond is
	undervalued, above it overvalued, otherwise fairly priced.

	Args:
		summary (PriceSummary): Monte Carlo price summary.
		traded (float): Traded price.

	Returns:
		ValuationVerdict: The verdict.
	"""
	if traded < summary.ci_low:
		valuation = Valuation.UNDERVALUED
	elif traded > summary.ci_high:
		valuation = Valuation.OVERVALUED
	else:
		valuation = Valuation.FAIR
	return ValuationVerdict(valuation, float(traded), summary.ci_low, summary.ci_high)


def price_draws_frame(draws: PosteriorDraws, prices: Iterable[float]) -> pd.DataFrame:
	"""
	Pairs each draw's price with its curve parameters.

	Args:
		draws (PosteriorDraws): Posterior draws.
		prices (Iterable[float]): Per-draw prices from `price_monte_carlo`.

	Returns:
		pd.DataFrame: Columns ``price``, ``beta0``, ``beta1``, ``beta2``, ``lambda``.
	"""
	frame = pd.DataFrame({"price": np.asarray(prices, dtype=float)})
	for name in CURVE_PARAMETERS:
		frame[name] = draws.column(name)
	return frame


def price_histogram(prices: Iterable[float], bins: int = 30) -> pd.DataFrame:
	"""
	Bins per-draw prices.

	Args:
		prices (Iterable[float]): Per-draw prices.
		bins (int, optional): Number of equal-width bins. Default is 30.

	Returns:
		pd.DataFrame: Columns ``bin_low``, ``bin_high`` and ``count``.
	"""
	if bins < 1:
		raise DomainError("`bins` must be at least 1.")
	counts, edges = np.histogram(np.asarray(prices, dtype=float), bins=bins)
	return pd.DataFrame({"bin_low": edges[:-1], "bin_high": edges[1:], "count": counts})
