"""
This module provides a Hamiltonian Monte Carlo sampler for the Nelson-Siegel
posterior, the container for its draws, and posterior summaries.

The sampler integrates Hamiltonian dynamics with the leapfrog scheme under
a diagonal metric, draws the number of leapfrog steps uniformly from
[1, L_max] on every transition, and adapts the step size by dual averaging
toward a target acceptance statistic. Warmup runs in three windows: step
size only (15%), step size plus metric estimation (60%), then step size
refinement under the new metric (25%).

Every chain owns a counter-based random stream derived from (seed, chain
index), so output does not depend on how chains are scheduled.

Example:
	Sample the hierarchical model on the May 2018 panel and summarise::

		from pybns import HmcConfig, MODEL2, builtin_fixture_may2018, sample, summarize

		draws = sample(MODEL2, builtin_fixture_may2018(), HmcConfig(seed=7))
		print(summarize(draws).to_frame())
"""

import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .curve import NsParams
from .diagnostics import diagnostics
from .errors import DomainError, SamplingQualityError
from .model import Posterior, PriorModel
from .optimise import MapOptions, fit_map
from .panel import YieldPanel

logger = logging.getLogger(__name__)

LogDensity = Callable[[np.ndarray], Tuple[float, np.ndarray]]

DIVERGENCE_THRESHOLD = 1000.0
POSITIVE_PARAMETERS = ("lambda", "sigma", "sigma_beta")
SUMMARY_COLUMNS = ["mean", "sd", "2.5%", "median", "97.5%"]


@dataclass
class HmcConfig:
	"""
	Sampler configuration.

	Attributes:
		chains (int): Number of chains.
		warmup (int): Adaptation iterations per chain, discarded.
		draws (int): Retained iterations per chain.
		target_accept (float): Target mean acceptance statistic for step-size
			adaptation, in (0, 1).
		max_leapfrog (int): Cap on leapfrog steps per transition.
		seed (int): Base seed; chain c uses the stream of (seed, c).
		trajectory_length (float): Upper end of the jittered integration
			time; the step count is uniform on [1, ceil(trajectory_length / step_size)].
		init_jitter (float): Standard deviation of the per-chain jitter
			applied to the initial point on the unconstrained scale.
		max_workers (int): Threads used to run chains concurrently.
		max_divergent_fraction (float): Fraction of divergent draws above
			which sampling is rejected.
	"""
	chains: int = 4
	warmup: int = 1000
	draws: int = 1000
	target_accept: float = 0.8
	max_leapfrog: int = 1024
	seed: int = 0
	trajectory_length: float = 2.0
	init_jitter: float = 0.1
	max_workers: int = 1
	max_divergent_fraction: float = 0.25

	def __post_init__(self):
		counts = (self.chains, self.warmup, self.draws, self.max_leapfrog, self.max_workers)
		if any(count < 1 for count in counts):
			raise DomainError(
				"`chains`, `warmup`, `draws`, `max_leapfrog` and `max_workers` must be at least 1."
			)
		if not 0 < self.target_accept < 1:
			raise DomainError("`target_accept` must lie in (0, 1).")
		if not self.trajectory_length > 0:
			raise DomainError("`trajectory_length` must be positive.")
		if self.init_jitter < 0:
			raise DomainError("`init_jitter` must be non-negative.")


class PosteriorDraws:
	"""
	Draws from a posterior on the constrained scale.

	Attributes:
		names (list[str]): Parameter names, one per column of `values`.
		values (np.ndarray): Array of shape (M, p) of draws, chains stacked in order.
		log_post (np.ndarray): Log-density of the sampled target per draw.
		divergent (np.ndarray): Divergence flag per draw.
		chain (np.ndarray): Chain index per draw.
		model_tag (str | None): Tag of the prior model sampled.
		step_size (np.ndarray | None): Adapted step size per chain.
		accept_rate (np.ndarray | None): Mean acceptance statistic per chain.
	"""
	def __init__(
		self,
		names: Iterable[str],
		values: np.ndarray,
		log_post: Optional[np.ndarray] = None,
		chain: Optional[np.ndarray] = None,
		divergent: Optional[np.ndarray] = None,
		model_tag: Optional[str] = None,
		step_size: Optional[np.ndarray] = None,
		accept_rate: Optional[np.ndarray] = None,
	):
		"""
		Initialises a PosteriorDraws instance.

		Args:
			names (Iterable[str]): Parameter names.
			values (np.ndarray): Draws of shape (M, p).
			log_post (np.ndarray, optional): Per-draw log-density. Defaults to NaN.
			chain (np.ndarray, optional): Per-draw chain index, non-decreasing.
				Defaults to a single chain.
			divergent (np.ndarray, optional): Per-draw divergence flag.
				Defaults to False.
			model_tag (str, optional): Tag of the prior model.
			step_size (np.ndarray, optional): Step size per chain.
			accept_rate (np.ndarray, optional): Acceptance rate per chain.
		"""
		self.names = list(names)
		values = np.array(values, dtype=float, ndmin=2)
		if values.shape[1] != len(self.names):
			raise DomainError(f"`values` has {values.shape[1]} columns for {len(self.names)} names.")
		n = values.shape[0]
		if n < 1:
			raise DomainError("At least one draw is required.")
		for name in POSITIVE_PARAMETERS:
			if name in self.names and np.any(values[:, self.names.index(name)] <= 0):
				raise DomainError(f"Every draw of {name} must be positive.")

		self.values = values
		self.log_post = np.full(n, np.nan) if log_post is None else np.asarray(log_post, dtype=float)
		self.chain = np.zeros(n, dtype=int) if chain is None else np.asarray(chain, dtype=int)
		self.divergent = np.zeros(n, dtype=bool) if divergent is None else np.asarray(divergent, dtype=bool)
		if not (self.log_post.shape == self.chain.shape == self.divergent.shape == (n,)):
			raise DomainError("Per-draw columns must have one entry per draw.")
		if np.any(np.diff(self.chain) < 0):
			raise DomainError("Draws must be ordered by chain.")
		self.model_tag = model_tag
		self.step_size = step_size
		self.accept_rate = accept_rate

	def __len__(self):
		return self.values.shape[0]

	@property
	def n_chains(self) -> int:
		"""int: Number of chains."""
		return int(np.unique(self.chain).size)

	@property
	def chain_bounds(self) -> List[Tuple[int, int]]:
		"""list[tuple[int, int]]: Start and stop row of each chain."""
		_, starts = np.unique(self.chain, return_index=True)
		stops = list(starts[1:]) + [len(self)]
		return [(int(start), int(stop)) for start, stop in zip(starts, stops)]

	@property
	def n_divergent(self) -> int:
		"""int: Number of divergent draws."""
		return int(self.divergent.sum())

	@property
	def divergent_fraction(self) -> float:
		"""float: Fraction of divergent draws."""
		return self.n_divergent / len(self)

	def column(self, name: str) -> np.ndarray:
		"""
		Returns every draw of one parameter.

		Args:
			name (str): Parameter name, or ``log_post``.

		Returns:
			np.ndarray: Array of shape (M,).
		"""
		if name == "log_post":
			return self.log_post
		if name not in self.names:
			raise DomainError(f"Unknown parameter {name!r}; expected one of {self.names}.")
		return self.values[:, self.names.index(name)]

	def chain_values(self, name: str) -> np.ndarray:
		"""
		Returns the draws of one parameter split by chain.

		Args:
			name (str): Parameter name, or ``log_post``.

		Returns:
			np.ndarray: Array of shape (chains, draws per chain).
		"""
		column = self.column(name)
		bounds = self.chain_bounds
		lengths = {stop - start for start, stop in bounds}
		if len(lengths) != 1:
			raise DomainError("Chains have unequal lengths.")
		return np.vstack([column[start:stop] for start, stop in bounds])

	def params(self, index: int) -> NsParams:
		"""Returns draw `index` as `NsParams`."""
		return NsParams.from_array(self.values[index])

	def to_frame(self) -> pd.DataFrame:
		"""
		Returns one row per draw with the parameters, ``log_post``,
		``divergent`` (0/1) and ``chain``.

		Returns:
			pd.DataFrame: The draws.
		"""
		frame = pd.DataFrame(self.values, columns=self.names)
		frame["log_post"] = self.log_post
		frame["divergent"] = self.divergent.astype(int)
		frame["chain"] = self.chain
		return frame

	def to_csv(self) -> str:
		"""str: `to_frame` rendered as CSV with 6-decimal floats."""
		return self.to_frame().to_csv(index=False, float_format="%.6f", lineterminator="\n")

	@classmethod
	def from_frame(cls, frame: pd.DataFrame, model_tag: Optional[str] = None) -> "PosteriorDraws":
		"""
		Rebuilds draws from a frame in the `to_frame` layout. ``log_post``,
		``divergent`` and ``chain`` are optional.

		Args:
			frame (pd.DataFrame): Draws.
			model_tag (str, optional): Tag of the prior model.

		Returns:
			PosteriorDraws: The draws.
		"""
		extra = ["log_post", "divergent", "chain"]
		names = [column for column in frame.columns if column not in extra]
		return cls(
			names=names,
			values=frame[names].to_numpy(dtype=float),
			log_post=frame["log_post"].to_numpy(dtype=float) if "log_post" in frame else None,
			chain=frame["chain"].to_numpy(dtype=int) if "chain" in frame else None,
			divergent=frame["divergent"].to_numpy(dtype=bool) if "divergent" in frame else None,
			model_tag=model_tag,
		)

	@classmethod
	def from_csv(cls, text: str, model_tag: Optional[str] = None) -> "PosteriorDraws":
		"""Parses the output of `to_csv`; lines starting with ``#`` are skipped."""
		return cls.from_frame(pd.read_csv(io.StringIO(text), comment="#"), model_tag=model_tag)

	def __repr__(self):
		return f"PosteriorDraws({len(self)} draws x {len(self.names)} parameters, {self.n_chains} chains)"


class PosteriorSummary:
	"""
	Posterior mean, standard deviation and quantiles per parameter.

	Attributes:
		frame (pd.DataFrame): Indexed by parameter with columns ``mean``,
			``sd``, ``2.5%``, ``median`` and ``97.5%``.
	"""
	def __init__(self, frame: pd.DataFrame):
		self.frame = frame

	def __getitem__(self, name: str) -> pd.Series:
		return self.frame.loc[name]

	def to_frame(self) -> pd.DataFrame:
		"""pd.DataFrame: A copy of the summary table."""
		return self.frame.copy()

	def __repr__(self):
		return f"PosteriorSummary({list(self.frame.index)})"


def summary_statistics(values: Iterable[float]) -> Dict[str, float]:
	"""
	Mean, standard deviation and the 2.5%, 50% and 97.5% quantiles of a
	sample. Quantiles interpolate linearly between order statistics.

	Args:
		values (Iterable[float]): The sample, non-empty.

	Returns:
		dict[str, float]: Keyed by ``mean``, ``sd``, ``2.5%``, ``median``, ``97.5%``.
	"""
	values = np.asarray(values, dtype=float).ravel()
	if values.size == 0:
		raise DomainError("Cannot summarise an empty sample.")
	low, median, high = np.quantile(np.sort(values), [0.025, 0.5, 0.975])
	sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
	return dict(zip(SUMMARY_COLUMNS, [float(np.mean(values)), sd, float(low), float(median), float(high)]))


def summarize(draws: PosteriorDraws, include_lp: bool = True) -> PosteriorSummary:
	"""
	Summarises every parameter of `draws`.

	Args:
		draws (PosteriorDraws): Posterior draws.
		include_lp (bool, optional): Add an ``lp`` row for the log-density
			when it is known. Default is True.

	Returns:
		PosteriorSummary: The summary.
	"""
	rows = {name: summary_statistics(draws.column(name)) for name in draws.names}
	if include_lp and np.all(np.isfinite(draws.log_post)):
		rows["lp"] = summary_statistics(draws.log_post)
	frame = pd.DataFrame.from_dict(rows, orient="index", columns=SUMMARY_COLUMNS)
	frame.index.name = "parameter"
	return PosteriorSummary(frame)


def leapfrog(
	target: LogDensity,
	q: np.ndarray,
	p: np.ndarray,
	grad: np.ndarray,
	step_size: float,
	n_steps: int,
	inv_metric: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, float, np.ndarray]:
	"""
	Integrates Hamiltonian dynamics for `n_steps` leapfrog steps with kinetic
	energy p' M^-1 p / 2 and diagonal M^-1 = `inv_metric`.

	Integration stops early when the target becomes non-finite.

	Args:
		target (LogDensity): Returns the log-density and its gradient.
		q (np.ndarray): Initial position.
		p (np.ndarray): Initial momentum.
		grad (np.ndarray): Gradient of the log-density at `q`.
		step_size (float): Step size.
		n_steps (int): Number of steps.
		inv_metric (np.ndarray): Diagonal of the inverse metric.

	Returns:
		tuple: Final position, momentum, log-density and gradient.
	"""
	q = np.array(q, dtype=float)
	p = np.array(p, dtype=float) + 0.5 * step_size * grad
	log_density = -np.inf
	for step in range(n_steps):
		q = q + step_size * inv_metric * p
		log_density, grad = target(q)
		if not np.isfinite(log_density):
			return q, p, -np.inf, grad
		p = p + (step_size if step < n_steps - 1 else 0.5 * step_size) * grad
	return q, p, log_density, grad


def _hamiltonian(log_density: float, p: np.ndarray, inv_metric: np.ndarray) -> float:
	return -log_density + 0.5 * np.sum(inv_metric * p * p)


class _DualAveraging:
	def __init__(self, step_size: float, target_accept: float, gamma=0.05, t0=10.0, kappa=0.75):
		self.target_accept = target_accept
		self.gamma = gamma
		self.t0 = t0
		self.kappa = kappa
		self.restart(step_size)

	def restart(self, step_size: float):
		self.mu = np.log(10.0 * step_size)
		self.count = 0
		self.h_bar = 0.0
		self.log_step = np.log(step_size)
		self.log_step_bar = 0.0

	def update(self, accept_stat: float) -> float:
		self.count += 1
		eta = 1.0 / (self.count + self.t0)
		self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target_accept - accept_stat)
		self.log_step = self.mu - np.sqrt(self.count) / self.gamma * self.h_bar
		weight = self.count ** -self.kappa
		self.log_step_bar = weight * self.log_step + (1.0 - weight) * self.log_step_bar
		return float(np.exp(self.log_step))

	@property
	def final_step_size(self) -> float:
		if self.count == 0:
			return float(np.exp(self.log_step))
		return float(np.exp(self.log_step_bar))


def _reasonable_step_size(target, q, log_density, grad, inv_metric, rng) -> float:
	def log_accept(step_size):
		p = rng.standard_normal(q.size) / np.sqrt(inv_metric)
		_, p_new, log_density_new, _ = leapfrog(target, q, p, grad, step_size, 1, inv_metric)
		delta = _hamiltonian(log_density, p, inv_metric) - _hamiltonian(log_density_new, p_new, inv_metric)
		return delta if np.isfinite(delta) else -np.inf

	step_size = 1.0
	ratio = log_accept(step_size)
	direction = 1.0 if ratio > np.log(0.5) else -1.0
	for _ in range(60):
		if not direction * ratio > direction * np.log(0.5):
			break
		step_size *= 2.0 ** direction
		ratio = log_accept(step_size)
	return float(np.clip(step_size, 1e-10, 1e3))


def _max_steps(step_size: float, config: HmcConfig) -> int:
	return int(min(config.max_leapfrog, max(1, np.ceil(config.trajectory_length / step_size))))


@dataclass
class ChainResult:
	"""
	Output of one chain on the unconstrained scale.

	Attributes:
		positions (np.ndarray): Retained positions of shape (draws, p).
		log_density (np.ndarray): Target log-density per draw.
		divergent (np.ndarray): Divergence flag per draw.
		accept_stat (np.ndarray): Acceptance statistic per draw.
		n_leapfrog (np.ndarray): Leapfrog steps per draw.
		step_size (float): Adapted step size.
		inv_metric (np.ndarray): Adapted diagonal inverse metric.
		warmup_divergent (int): Divergent transitions during warmup.
	"""
	positions: np.ndarray
	log_density: np.ndarray
	divergent: np.ndarray
	accept_stat: np.ndarray
	n_leapfrog: np.ndarray
	step_size: float
	inv_metric: np.ndarray
	warmup_divergent: int


class _Chain:
	def __init__(self, target: LogDensity, config: HmcConfig, index: int):
		self.target = target
		self.config = config
		self.index = index
		self.rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([config.seed, index])))

	def _start(self, init: np.ndarray):
		for _ in range(100):
			q = init + self.rng.normal(0.0, self.config.init_jitter, size=init.size)
			log_density, grad = self.target(q)
			if np.isfinite(log_density):
				return q, log_density, grad
		log_density, grad = self.target(init)
		if not np.isfinite(log_density):
			raise DomainError("The initial point has zero posterior density.")
		return init.copy(), log_density, grad

	def _transition(self, q, log_density, grad, step_size, inv_metric):
		p = self.rng.standard_normal(q.size) / np.sqrt(inv_metric)
		n_steps = int(self.rng.integers(1, _max_steps(step_size, self.config) + 1))
		q_new, p_new, log_density_new, grad_new = leapfrog(
			self.target, q, p, grad, step_size, n_steps, inv_metric
		)
		delta = _hamiltonian(log_density_new, p_new, inv_metric) - _hamiltonian(log_density, p, inv_metric)
		log_u = np.log(self.rng.uniform())
		if not np.isfinite(delta) or abs(delta) > DIVERGENCE_THRESHOLD:
			return q, log_density, grad, 0.0, True, n_steps
		accept_stat = float(min(1.0, np.exp(-delta)))
		if log_u < -delta:
			return q_new, log_density_new, grad_new, accept_stat, False, n_steps
		return q, log_density, grad, accept_stat, False, n_steps

	def run(self, init: np.ndarray) -> ChainResult:
		config = self.config
		q, log_density, grad = self._start(np.asarray(init, dtype=float))
		inv_metric = np.ones(q.size)
		step_size = _reasonable_step_size(self.target, q, log_density, grad, inv_metric, self.rng)
		adapter = _DualAveraging(step_size, config.target_accept)

		fast_end = int(0.15 * config.warmup)
		slow_end = config.warmup - int(0.25 * config.warmup)
		window = []
		warmup_divergent = 0
		for i in range(config.warmup):
			q, log_density, grad, accept_stat, divergent, _ = self._transition(
				q, log_density, grad, step_size, inv_metric
			)
			warmup_divergent += divergent
			step_size = adapter.update(accept_stat)
			if fast_end <= i < slow_end:
				window.append(q)
			if i == slow_end - 1 and len(window) >= 3:
				n = len(window)
				variance = np.var(np.asarray(window), axis=0, ddof=1)
				inv_metric = (n / (n + 5.0)) * variance + 1e-3 * (5.0 / (n + 5.0))
				step_size = _reasonable_step_size(self.target, q, log_density, grad, inv_metric, self.rng)
				adapter.restart(step_size)
				logger.debug("chain %d: metric adapted to %s", self.index, np.round(inv_metric, 6).tolist())
		step_size = adapter.final_step_size
		if warmup_divergent:
			logger.warning("chain %d: %d divergent transitions during warmup", self.index, warmup_divergent)

		positions = np.empty((config.draws, q.size))
		log_densities = np.empty(config.draws)
		divergences = np.zeros(config.draws, dtype=bool)
		accept_stats = np.empty(config.draws)
		n_leapfrog = np.empty(config.draws, dtype=int)
		for i in range(config.draws):
			q, log_density, grad, accept_stats[i], divergences[i], n_leapfrog[i] = self._transition(
				q, log_density, grad, step_size, inv_metric
			)
			positions[i] = q
			log_densities[i] = log_density

		logger.info(
			"chain %d: step size %.4g, up to %d leapfrog steps, mean acceptance %.3f",
			self.index, step_size, _max_steps(step_size, config), accept_stats.mean(),
		)
		if divergences.any():
			logger.warning("chain %d: %d divergent transitions after warmup", self.index, divergences.sum())
		return ChainResult(
			positions=positions,
			log_density=log_densities,
			divergent=divergences,
			accept_stat=accept_stats,
			n_leapfrog=n_leapfrog,
			step_size=step_size,
			inv_metric=inv_metric,
			warmup_divergent=warmup_divergent,
		)


def sample_density(target: LogDensity, init: Iterable[float], config: HmcConfig) -> List[ChainResult]:
	"""
	Runs `config.chains` independent chains on an arbitrary log-density.

	Args:
		target (LogDensity): Returns the log-density and its gradient at a point
			of R^p; a non-finite log-density marks a divergent evaluation.
		init (Iterable[float]): Point every chain is jittered around.
		config (HmcConfig): Sampler configuration.

	Returns:
		list[ChainResult]: One result per chain, in chain order.
	"""
	init = np.asarray(init, dtype=float)
	if not np.all(np.isfinite(init)):
		raise DomainError("`init` must be finite.")

	def run(index):
		return _Chain(target, config, index).run(init)

	if config.max_workers > 1:
		with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
			return list(pool.map(run, range(config.chains)))
	return [run(index) for index in range(config.chains)]


def sample(
	model: PriorModel,
	panel: YieldPanel,
	config: Optional[HmcConfig] = None,
	init: Union[NsParams, Iterable[float], None] = None,
	map_options: Optional[MapOptions] = None,
) -> PosteriorDraws:
	"""
	Samples the posterior of `model` given `panel`.

	Chains start from the MAP estimate (or `init`) jittered on the
	unconstrained scale and target the posterior density of the
	unconstrained vector, Jacobian included. Draws are returned on the
	constrained scale.

	Args:
		model (PriorModel): Prior model.
		panel (YieldPanel): Observed yields.
		config (HmcConfig, optional): Sampler configuration.
		init (NsParams | Iterable[float], optional): Centre of the initial
			points. Defaults to the MAP estimate.
		map_options (MapOptions, optional): Options of the MAP search that
			centres the chains. Defaults to `MapOptions` seeded with `config.seed`.

	Returns:
		PosteriorDraws: `config.chains * config.draws` draws.

	Raises:
		SamplingQualityError: If more than `config.max_divergent_fraction`
			of the retained draws are divergent.
	"""
	config = HmcConfig() if config is None else config
	if init is None:
		map_options = MapOptions(seed=config.seed) if map_options is None else map_options
		z0 = fit_map(model, panel, options=map_options).z
	else:
		z0 = model.unconstrain(init)

	chains = sample_density(Posterior(model, panel, jacobian=True), z0, config)
	positions = np.vstack([chain.positions for chain in chains])
	values = positions.copy()
	values[:, model.positive] = np.exp(positions[:, model.positive])
	draws = PosteriorDraws(
		names=model.param_names,
		values=values,
		log_post=np.concatenate([chain.log_density for chain in chains]),
		chain=np.repeat(np.arange(config.chains), config.draws),
		divergent=np.concatenate([chain.divergent for chain in chains]),
		model_tag=model.tag,
		step_size=np.array([chain.step_size for chain in chains]),
		accept_rate=np.array([chain.accept_stat.mean() for chain in chains]),
	)
	if draws.divergent_fraction > config.max_divergent_fraction:
		raise SamplingQualityError(
			f"{draws.n_divergent} of {len(draws)} draws are divergent",
			draws=draws,
			diagnostics=diagnostics(draws),
		)
	return draws
