"""
PyBNS is a package for Bayesian Nelson-Siegel yield curve modelling: MAP and
Hamiltonian Monte Carlo fits of the static curve under three prior models,
the Dynamic Nelson-Siegel Kalman filter with its marginal likelihood, and
Monte Carlo bond pricing over posterior draws. It is licensed under the MIT License.
"""

__version__ = "0.1.0"

from .curve import MaturityGrid, NsParams, dns_loadings, ns_forward_rate, ns_yield
from .panel import TENOR_MAP, YieldPanel, builtin_fixture_may2018, parse_treasury_csv
from .model import (
	MODEL1,
	MODEL2,
	MODEL3,
	Posterior,
	PriorModel,
	inverse_gamma_cdf,
	log_likelihood,
	log_posterior,
	log_prior,
	poisson_likelihood_demo,
)
from .optimise import MapOptions, MapResult, bfgs_minimise, fit_map, rolling_map
from .hmc import HmcConfig, PosteriorDraws, PosteriorSummary, leapfrog, sample, summarize
from .diagnostics import diagnostics
from .dns import (
	DnsParams,
	DnsState,
	FilterResult,
	GpKernelSpec,
	condition_gaussian,
	default_initial_state,
	fit_dns_params,
	grid_search_lambda,
	marginal_log_likelihood,
	predict_state,
	predict_yield,
	run_filter,
	simulate_dns,
	two_step_estimate,
	update_state,
)
from .pricing import (
	BondSpec,
	PriceSummary,
	Valuation,
	ValuationVerdict,
	cash_flows,
	price_bond,
	price_histogram,
	price_monte_carlo,
	valuation_verdict,
)
