"""
This module provides maximum a posteriori (MAP) estimation of the
Nelson-Siegel parameters by quasi-Newton descent on the negative
log-posterior over the unconstrained parameter vector.

The optimiser is a plain BFGS routine with an Armijo backtracking line
search. It is run from a deterministic starting point and a number of
randomly jittered restarts, and the best restart is reported on the
constrained scale.

Example:
	Fit the hierarchical model to the May 2018 panel::

		from pybns import MODEL2, MapOptions, builtin_fixture_may2018, fit_map

		panel = builtin_fixture_may2018()
		result = fit_map(MODEL2, panel, options=MapOptions(seed=1))
		print(result.params)
		print(result.converged, result.grad_norm)
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .curve import NsParams, ns_curve
from .errors import ConvergenceError, DomainError, PybnsError
from .model import Posterior, PriorModel
from .panel import YieldPanel

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]

ARMIJO_CONSTANT = 1e-4
MAX_HALVINGS = 60


@dataclass
class MapOptions:
	"""
	Options for `fit_map`.

	Attributes:
		max_iters (int): Maximum BFGS iterations per restart.
		gtol (float): Gradient-norm tolerance for convergence.
		restarts (int): Number of starting points, the first unjittered.
		jitter (float): Standard deviation of the restart jitter on the
			unconstrained scale.
		seed (int): Seed of the restart jitter.
		max_workers (int): Threads used to run restarts concurrently.
	"""
	max_iters: int = 500
	gtol: float = 1e-8
	restarts: int = 8
	jitter: float = 0.5
	seed: int = 0
	max_workers: int = 1

	def __post_init__(self):
		if self.max_iters < 1 or self.restarts < 1 or self.max_workers < 1:
			raise DomainError("`max_iters`, `restarts` and `max_workers` must be at least 1.")
		if not self.gtol > 0:
			raise DomainError("`gtol` must be positive.")
		if self.jitter < 0:
			raise DomainError("`jitter` must be non-negative.")


@dataclass
class BfgsResult:
	"""
	Outcome of a single `bfgs_minimise` run.

	Attributes:
		x (np.ndarray): Final point.
		fun (float): Objective at `x`.
		grad (np.ndarray): Gradient at `x`.
		iterations (int): Accepted steps.
		grad_norm (float): Euclidean norm of `grad`.
		converged (bool): Whether `grad_norm` reached the tolerance.
	"""
	x: np.ndarray
	fun: float
	grad: np.ndarray
	iterations: int
	grad_norm: float
	converged: bool


@dataclass
class MapResult:
	"""
	A MAP estimate.

	Attributes:
		params (NsParams): Estimate on the constrained scale.
		log_post (float): Log-posterior at the estimate (without the
			change-of-variables Jacobian).
		converged (bool): True only when `grad_norm` is within tolerance.
		iterations (int): BFGS iterations of the winning restart.
		grad_norm (float): Gradient norm on the unconstrained scale.
		restart (int): Index of the winning restart.
		z (np.ndarray): Estimate on the unconstrained scale.
	"""
	params: Optional[NsParams]
	log_post: float
	converged: bool
	iterations: int
	grad_norm: float
	restart: int = 0
	z: np.ndarray = field(default=None, repr=False)

	def rmse(self, panel: YieldPanel) -> float:
		"""
		In-sample root mean squared error of the fitted curve.

		Args:
			panel (YieldPanel): Observed yields.

		Returns:
			float: RMSE in percent.
		"""
		taus, ys = panel.observed()
		p = self.params
		fitted = ns_curve(p.beta0, p.beta1, p.beta2, p.lam, taus)
		return float(np.sqrt(np.mean((ys - fitted) ** 2)))

	def as_dict(self) -> dict:
		"""dict: Parameters and fit statistics keyed by name."""
		row = {}
		if self.params is not None:
			names = ["beta0", "beta1", "beta2", "lambda", "sigma", "sigma_beta"]
			row.update(zip(names, self.params.as_array()))
		row.update(
			log_post=self.log_post,
			converged=self.converged,
			iterations=self.iterations,
			grad_norm=self.grad_norm,
		)
		return row


def _armijo_search(
	fun: Objective,
	x: np.ndarray,
	f: float,
	g: np.ndarray,
	p: np.ndarray,
	alpha: float,
):
	slope = g @ p
	g_norm = np.linalg.norm(g)
	for _ in range(MAX_HALVINGS):
		x_new = x + alpha * p
		f_new, g_new = fun(x_new)
		if np.isfinite(f_new) and np.all(np.isfinite(g_new)):
			if f_new <= f + ARMIJO_CONSTANT * alpha * slope:
				return x_new, f_new, g_new
			# decrease below rounding resolution: accept when the gradient shrinks
			if f_new - f <= 1e-12 * (1.0 + abs(f)) and np.linalg.norm(g_new) < g_norm:
				return x_new, f_new, g_new
		alpha *= 0.5
	return None


def bfgs_minimise(
	fun: Objective,
	x0: Iterable[float],
	gtol: float = 1e-8,
	max_iters: int = 500,
) -> BfgsResult:
	"""
	Minimises `fun` with the BFGS inverse-Hessian update and a backtracking
	Armijo line search (constant 1e-4, step halving).

	The first trial step is scaled to unit length and the initial inverse
	Hessian is rescaled by s'y / y'y once the first step is taken. Updates
	with insufficient curvature are skipped. The run stops when the gradient
	norm reaches `gtol`, the line search fails, or `max_iters` is reached.

	Args:
		fun (Callable): Returns the objective and its gradient at a point.
			Non-finite values are treated as outside the domain.
		x0 (Iterable[float]): Starting point.
		gtol (float, optional): Gradient-norm tolerance. Default is 1e-8.
		max_iters (int, optional): Iteration cap. Default is 500.

	Returns:
		BfgsResult: The final iterate.
	"""
	x = np.array(x0, dtype=float)
	f, g = fun(x)
	if not np.isfinite(f) or not np.all(np.isfinite(g)):
		return BfgsResult(x, np.inf, g, 0, np.inf, False)

	n = x.size
	identity = np.eye(n)
	hess_inv = identity.copy()
	iterations = 0
	g_norm = np.linalg.norm(g)
	while g_norm > gtol and iterations < max_iters:
		p = -hess_inv @ g
		if g @ p >= 0:
			hess_inv = identity.copy()
			p = -g
		alpha = min(1.0, 1.0 / g_norm) if iterations == 0 else 1.0
		step = _armijo_search(fun, x, f, g, p, alpha)
		if step is None:
			logger.debug("Line search failed at iteration %d (f=%.10g, |g|=%.3g)", iterations, f, g_norm)
			break
		x_new, f_new, g_new = step
		s = x_new - x
		y = g_new - g
		sy = s @ y
		if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
			if iterations == 0:
				hess_inv = (sy / (y @ y)) * identity
			rho = 1.0 / sy
			left = identity - rho * np.outer(s, y)
			hess_inv = left @ hess_inv @ left.T + rho * np.outer(s, s)
		x, f, g = x_new, f_new, g_new
		g_norm = np.linalg.norm(g)
		iterations += 1
		logger.debug("BFGS iteration %d: f=%.10g |g|=%.3g", iterations, f, g_norm)

	return BfgsResult(x, float(f), g, iterations, float(g_norm), bool(g_norm <= gtol))


def initial_params(model: PriorModel, panel: YieldPanel) -> np.ndarray:
	"""
	Deterministic starting point for `fit_map`: beta0 is the mean long-end
	yield, beta1 the mean short-minus-long spread, beta2 zero, lambda one
	year, sigma the standard deviation of the residuals from that curve and,
	for hierarchical models, sigma_beta the root mean square of the betas.
	Under ``m1`` the betas are floored at 0.1 to stay in the prior support.

	Args:
		model (PriorModel): Prior model.
		panel (YieldPanel): Observed yields.

	Returns:
		np.ndarray: Parameters in `model.param_names` order.
	"""
	long_end = float(np.nanmean(panel.long_end()))
	short_end = float(np.nanmean(panel.short_end()))
	betas = np.array([long_end, short_end - long_end, 0.0])
	if not model.hierarchical:
		betas = np.maximum(betas, 0.1)
	lam = 1.0
	taus, ys = panel.observed()
	residuals = ys - ns_curve(betas[0], betas[1], betas[2], lam, taus)
	sigma = max(float(np.std(residuals)), 1e-3)
	theta = [*betas, lam, sigma]
	if model.hierarchical:
		theta.append(max(float(np.sqrt(np.mean(betas ** 2))), 1e-3))
	return np.array(theta)


def _negated(posterior: Posterior) -> Objective:
	def objective(z):
		log_post, grad = posterior(z)
		if not np.isfinite(log_post):
			return np.inf, grad
		return -log_post, -grad
	return objective


def _to_map_result(model: PriorModel, outcome: BfgsResult, restart: int) -> MapResult:
	params = None
	if np.isfinite(outcome.fun):
		try:
			params = model.to_params(outcome.x)
		except DomainError:
			params = None
	if params is None:
		return MapResult(None, -np.inf, False, outcome.iterations, np.inf, restart, outcome.x)
	return MapResult(
		params=params,
		log_post=-outcome.fun,
		converged=outcome.converged,
		iterations=outcome.iterations,
		grad_norm=outcome.grad_norm,
		restart=restart,
		z=outcome.x,
	)


def fit_map(
	model: PriorModel,
	panel: YieldPanel,
	init: Union[NsParams, Iterable[float], None] = None,
	options: Optional[MapOptions] = None,
) -> MapResult:
	"""
	Finds the posterior mode of `model` given `panel`.

	The mode is taken on the natural parameter scale (log-likelihood plus
	log-prior, no change-of-variables Jacobian) while the search runs on the
	unconstrained vector. Restart 0 starts from `init`; the others from
	`init` plus N(0, jitter^2) noise on the unconstrained scale. The best
	restart wins by log-posterior, then smallest gradient norm, then lowest
	restart index.

	Args:
		model (PriorModel): Prior model.
		panel (YieldPanel): Observed yields.
		init (NsParams | Iterable[float], optional): Starting parameters.
			Defaults to `initial_params`.
		options (MapOptions, optional): Optimiser options.

	Returns:
		MapResult: The best restart.

	Raises:
		ConvergenceError: If every restart ended at a non-finite value.
	"""
	options = MapOptions() if options is None else options
	if init is None:
		init = initial_params(model, panel)
	z0 = model.unconstrain(init)
	if not np.all(np.isfinite(z0)):
		raise DomainError("`init` must be finite.")

	rng = np.random.default_rng(options.seed)
	jitters = rng.normal(0.0, options.jitter, size=(options.restarts - 1, z0.size))
	starts = [z0] + [z0 + jitter for jitter in jitters]
	objective = _negated(Posterior(model, panel, jacobian=False))

	def run(start):
		return bfgs_minimise(objective, start, gtol=options.gtol, max_iters=options.max_iters)

	if options.max_workers > 1:
		with ThreadPoolExecutor(max_workers=options.max_workers) as pool:
			outcomes = list(pool.map(run, starts))
	else:
		outcomes = [run(start) for start in starts]

	results = [_to_map_result(model, outcome, i) for i, outcome in enumerate(outcomes)]
	for result in results:
		if not np.isfinite(result.log_post):
			logger.warning("%s restart %d diverged", model.tag, result.restart)
		elif not result.converged:
			logger.warning(
				"%s restart %d stopped at |g|=%.3g after %d iterations",
				model.tag, result.restart, result.grad_norm, result.iterations,
			)
		else:
			logger.info(
				"%s restart %d converged: log_post=%.6f in %d iterations",
				model.tag, result.restart, result.log_post, result.iterations,
			)

	finite = [result for result in results if np.isfinite(result.log_post)]
	if not finite:
		raise ConvergenceError(f"All {len(results)} restarts of {model.tag} diverged", best=results[0])
	return min(finite, key=lambda r: (-r.log_post, r.grad_norm, r.restart))


def rolling_map(
	panels_by_date: Union[YieldPanel, Iterable[YieldPanel]],
	model: PriorModel,
	options: Optional[MapOptions] = None,
) -> pd.DataFrame:
	"""
	Fits one MAP estimate per date, warm-starting each date from the
	previous successful fit.

	A failed date is recorded with NaN parameters and its error message and
	the series continues with the last good warm start.

	Args:
		panels_by_date (YieldPanel | Iterable[YieldPanel]): A panel to split
			by date, or single-date panels in date order.
		model (PriorModel): Prior model.
		options (MapOptions, optional): Optimiser options.

	Returns:
		pd.DataFrame: Indexed by date, one column per parameter plus
		``log_post``, ``converged``, ``iterations``, ``grad_norm`` and ``error``.
	"""
	if isinstance(panels_by_date, YieldPanel):
		panels: List[YieldPanel] = panels_by_date.split_by_date()
	else:
		panels = list(panels_by_date)

	rows, dates = [], []
	warm_start = None
	for panel in panels:
		if panel.shape[0] != 1:
			raise DomainError("`rolling_map` expects single-date panels.")
		date = panel.dates[0]
		dates.append(date)
		row = {name: np.nan for name in model.param_names}
		try:
			result = fit_map(model, panel, init=warm_start, options=options)
		except PybnsError as error:
			logger.warning("MAP fit for %s failed: %s", date.isoformat(), error)
			row.update(log_post=np.nan, converged=False, iterations=0, grad_norm=np.nan, error=str(error))
		else:
			warm_start = result.params
			row.update(zip(model.param_names, result.params.as_array()))
			row.update(
				log_post=result.log_post,
				converged=result.converged,
				iterations=result.iterations,
				grad_norm=result.grad_norm,
				error="",
			)
		rows.append(row)

	return pd.DataFrame(rows, index=pd.Index(dates, name="date"))
