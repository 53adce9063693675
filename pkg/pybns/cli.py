"""
Command-line interface.

Commands:
	pybns fit     MAP estimates per prior model and fitted curves.
	pybns sample  Posterior summaries, diagnostics and draws.
	pybns filter  Decay-factor grid search and DNS Kalman filter.
	pybns price   Monte Carlo bond price band and valuation verdict.

Every file written starts with a provenance header line, and the process
exit code tells apart usage, I/O, format, convergence, sampling-quality,
numerical and validation failures.

Example:
	Reproduce the MAP table and price a bond under Model 3::

		pybns fit --fixture --model m1 m2 m3
		pybns price --fixture --model m3 --par 1000 --coupon 0.04 --freq 2 --maturity 15
"""

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from rich.console import Console
from rich.logging import RichHandler

from . import __version__
from .curve import ns_forward_rate, ns_yield
from .diagnostics import diagnostics
from .dns import (
	GpKernelSpec,
	NO_KERNEL,
	fit_dns_params,
	grid_search_lambda,
	predict_yield,
	run_filter,
	two_step_estimate,
)
from .errors import DomainError, ExitCode, FormatError, PybnsError, SamplingQualityError
from .hmc import HmcConfig, PosteriorDraws, sample, summarize
from .model import PriorModel
from .optimise import MapOptions, fit_map, rolling_map
from .panel import YieldPanel, builtin_fixture_may2018, parse_treasury_csv
from .pricing import (
	BondSpec,
	price_draws_frame,
	price_histogram,
	price_monte_carlo,
	valuation_verdict,
)
from .report import FORMATS, header_line, render, write_csv

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20180509
DEFAULT_OUTPUT_DIR = "./pybns-output"
OUTPUT_DIR_VARIABLE = "PYBNS_OUTPUT_DIR"
DEFAULT_LAMBDA_GRID = (0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0)
CURVE_TAUS = np.arange(1, 361) / 12

Report = List[Tuple[str, pd.DataFrame]]


@dataclass
class RunConfig:
	"""
	Settings of one command-line run.

	Attributes:
		command (str): One of ``fit``, ``sample``, ``filter``, ``price``.
		input_path (Path | None): Treasury CSV to read; None with `fixture`.
		fixture (bool): Use the built-in May 2018 panel.
		models (list[str]): Prior model tags.
		hmc (HmcConfig): Sampler settings.
		bond (BondSpec | None): Bond to price.
		lambda_grid (list[float]): Decay factors for the filter grid search.
		output_dir (Path): Directory receiving output files.
		seed (int): Seed of every random operation.
		output_format (str): Console format, ``table``, ``csv`` or ``json``.
		traded (float | None): Traded price for a valuation verdict.
		draws_file (Path | None): Draws CSV to price instead of sampling.
		kernel (GpKernelSpec): Residual kernel of the filter.
		refine_static (bool): Refine the filter's static parameters by
			maximum likelihood at the selected decay factor.
		rolling (bool): Also fit one MAP estimate per date.
		restarts (int): MAP restarts.
	"""
	command: str
	input_path: Optional[Path] = None
	fixture: bool = False
	models: List[str] = field(default_factory=lambda: ["m2"])
	hmc: HmcConfig = field(default_factory=HmcConfig)
	bond: Optional[BondSpec] = None
	lambda_grid: List[float] = field(default_factory=lambda: list(DEFAULT_LAMBDA_GRID))
	output_dir: Path = Path(DEFAULT_OUTPUT_DIR)
	seed: int = DEFAULT_SEED
	output_format: str = "table"
	traded: Optional[float] = None
	draws_file: Optional[Path] = None
	kernel: GpKernelSpec = NO_KERNEL
	refine_static: bool = False
	rolling: bool = False
	restarts: int = 8

	def __post_init__(self):
		if self.command not in COMMANDS:
			raise DomainError(f"Unknown command {self.command!r}.")
		if self.fixture == (self.input_path is not None) and self.draws_file is None:
			raise DomainError("Give exactly one of an input file or --fixture.")
		if self.output_format not in FORMATS:
			raise DomainError(f"`output_format` must be one of {FORMATS}.")
		self.hmc = replace(self.hmc, seed=self.seed)

	def map_options(self) -> MapOptions:
		"""MapOptions: MAP search options for `seed` and `restarts`."""
		return MapOptions(seed=self.seed, restarts=self.restarts)

	@classmethod
	def from_args(cls, args: argparse.Namespace) -> "RunConfig":
		"""Builds a RunConfig from parsed command-line arguments."""
		output_dir = args.output_dir or os.environ.get(OUTPUT_DIR_VARIABLE) or DEFAULT_OUTPUT_DIR
		settings = dict(
			command=args.command,
			input_path=Path(args.input) if args.input else None,
			fixture=args.fixture,
			models=args.model,
			output_dir=Path(output_dir),
			seed=args.seed,
			output_format=args.format,
			restarts=args.restarts,
		)
		if args.command in ("sample", "price"):
			settings["hmc"] = HmcConfig(
				chains=args.chains,
				warmup=args.warmup,
				draws=args.draws,
				target_accept=args.target_accept,
				seed=args.seed,
				max_workers=args.workers,
			)
		if args.command == "fit":
			settings["rolling"] = args.rolling
		if args.command == "filter":
			try:
				settings["lambda_grid"] = [float(value) for value in args.lambda_grid.split(",") if value.strip()]
			except ValueError as error:
				raise DomainError(f"Unreadable --lambda-grid: {error}") from error
			settings["refine_static"] = args.refine_static
			if args.gp_amplitude is not None:
				settings["kernel"] = GpKernelSpec.squared_exponential(args.gp_amplitude, args.gp_length_scale)
		if args.command == "price":
			settings["bond"] = BondSpec(args.par, args.coupon, args.freq, args.maturity)
			settings["traded"] = args.traded
			settings["draws_file"] = Path(args.draws_file) if args.draws_file else None
		return cls(**settings)


def _load_panel(config: RunConfig) -> YieldPanel:
	if config.fixture:
		return builtin_fixture_may2018()
	return parse_treasury_csv(config.input_path.read_bytes())


def _load_draws(path: Path, model_tag: str) -> PosteriorDraws:
	try:
		text = path.read_bytes().decode("utf-8-sig")
	except UnicodeDecodeError as error:
		raise FormatError(f"Draws file is not UTF-8 text: {error.reason} at byte {error.start}") from error
	try:
		return PosteriorDraws.from_csv(text, model_tag=model_tag)
	except (pd.errors.ParserError, pd.errors.EmptyDataError) as error:
		raise FormatError(f"Unreadable draws file: {error}") from error


def _prepare_output(config: RunConfig) -> Path:
	config.output_dir.mkdir(parents=True, exist_ok=True)
	return config.output_dir


def _header(config: RunConfig, model: str) -> str:
	return header_line(config.command, config.seed, model, __version__)


def cmd_fit(config: RunConfig) -> Report:
	"""
	Fits the MAP estimate of every requested prior model and writes
	``map_<m>.csv`` and ``curve_<m>.csv`` (yield and forward rate every
	month out to 30 years), plus ``rolling_<m>.csv`` with `config.rolling`.

	Args:
		config (RunConfig): Run settings.

	Returns:
		Report: One row per model with the estimates and fit statistics.
	"""
	panel = _load_panel(config)
	output_dir = _prepare_output(config)
	options = config.map_options()
	rows = {}
	for tag in config.models:
		model = PriorModel.from_tag(tag)
		result = fit_map(model, panel, options=options)
		row = result.as_dict()
		row["rmse"] = result.rmse(panel)
		params = result.params
		row["note"] = ""
		if not model.hierarchical and params.beta0 < params.beta2:
			row["note"] = "undesirable ordering: beta0 < beta2"
			logger.warning("%s MAP has beta0 < beta2", model.tag)
		rows[model.tag] = row
		header = _header(config, model.tag)
		write_csv(output_dir / f"map_{model.tag}.csv", pd.DataFrame([row]), header)
		curve = pd.DataFrame({
			"tau": CURVE_TAUS,
			"yield": ns_yield(params, CURVE_TAUS),
			"forward": ns_forward_rate(params, CURVE_TAUS),
		})
		write_csv(output_dir / f"curve_{model.tag}.csv", curve, header)
		if config.rolling:
			series = rolling_map(panel, model, options=options)
			write_csv(output_dir / f"rolling_{model.tag}.csv", series, header, index=True)

	table = pd.DataFrame.from_dict(rows, orient="index")
	table.index.name = "model"
	return [("MAP estimates", table)]


def cmd_sample(config: RunConfig) -> Report:
	"""
	Samples the posterior of every requested prior model and writes
	``summary_<m>.csv``, ``diagnostics_<m>.csv`` and ``draws_<m>.csv``.

	When the sampler rejects its own output the diagnostics and draws are
	still written before the error propagates.

	Args:
		config (RunConfig): Run settings.

	Returns:
		Report: Posterior summary and diagnostics per model.
	"""
	panel = _load_panel(config)
	output_dir = _prepare_output(config)
	report = []
	for tag in config.models:
		model = PriorModel.from_tag(tag)
		header = _header(config, model.tag)
		try:
			draws = sample(model, panel, config.hmc, map_options=config.map_options())
		except SamplingQualityError as error:
			write_csv(output_dir / f"diagnostics_{model.tag}.csv", error.diagnostics, header, index=True)
			write_csv(output_dir / f"draws_{model.tag}.csv", error.draws.to_frame(), header)
			raise
		summary = summarize(draws).to_frame()
		checks = diagnostics(draws)
		if draws.n_chains < 2:
			logger.info("R-hat unavailable with a single chain")
		write_csv(output_dir / f"summary_{model.tag}.csv", summary, header, index=True)
		write_csv(output_dir / f"diagnostics_{model.tag}.csv", checks, header, index=True)
		write_csv(output_dir / f"draws_{model.tag}.csv", draws.to_frame(), header)
		report.append((f"Posterior summary ({model.tag})", summary.join(checks)))
	return report


def _dns_params_for(panel: YieldPanel):
	def params_for(lam):
		return two_step_estimate(panel, lam)
	return params_for


def cmd_filter(config: RunConfig) -> Report:
	"""
	Selects the decay factor by marginal likelihood, runs the DNS filter at
	the selection and writes ``lambda_scores.csv``, ``filter_states.csv``,
	``filter_innovations.csv``, ``filter_curves.csv`` and
	``filter_summary.csv``.

	Static parameters come from `two_step_estimate` at each grid point,
	refined by maximum likelihood at the selected point with
	`config.refine_static`.

	Args:
		config (RunConfig): Run settings.

	Returns:
		Report: Filter summary and decay-factor scores.
	"""
	panel = _load_panel(config)
	if panel.shape[0] < 2:
		raise DomainError("Filtering needs a panel with at least two dates.")
	kernel = config.kernel
	lam, scores = grid_search_lambda(panel, _dns_params_for(panel), config.lambda_grid, kernel=kernel)
	params = two_step_estimate(panel, lam)
	if config.refine_static:
		params = fit_dns_params(panel, lam, init=params, kernel=kernel).params
	result = run_filter(params, panel, kernel=kernel)

	output_dir = _prepare_output(config)
	header = _header(config, "dns")
	write_csv(output_dir / "lambda_scores.csv", scores.to_frame(), header, index=True)
	states = result.states_frame()
	write_csv(output_dir / "filter_states.csv", states, header, index=True)
	innovations = pd.DataFrame(
		result.innovations,
		index=pd.Index(panel.dates, name="date"),
		columns=[repr(float(tau)) for tau in panel.grid.taus],
	)
	write_csv(output_dir / "filter_innovations.csv", innovations, header, index=True)

	curves = []
	for date, state in zip(panel.dates, result.filtered):
		mean, variance = predict_yield(state, params.lam, CURVE_TAUS, params.sigma_eps2)
		curves.append(pd.DataFrame({"date": date, "tau": CURVE_TAUS, "mean": mean, "variance": variance}))
	write_csv(output_dir / "filter_curves.csv", pd.concat(curves, ignore_index=True), header)

	summary = pd.DataFrame([{**params.as_dict(), "log_likelihood": result.log_likelihood}])
	summary.index = pd.Index(["dns"], name="model")
	write_csv(output_dir / "filter_summary.csv", summary, header)
	return [("Decay factor scores", scores.to_frame()), ("DNS filter", summary)]


def cmd_price(config: RunConfig) -> Report:
	"""
	Prices the bond over posterior draws (read from `config.draws_file` or
	sampled) and writes ``price_summary.csv``, ``price_draws.csv`` and
	``price_histogram.csv``.

	Args:
		config (RunConfig): Run settings.

	Returns:
		Report: The price summary with the verdict for `config.traded`.
	"""
	model = PriorModel.from_tag(config.models[0])
	if config.draws_file is not None:
		draws = _load_draws(config.draws_file, model.tag)
	else:
		draws = sample(model, _load_panel(config), config.hmc, map_options=config.map_options())
	output_dir = _prepare_output(config)
	header = _header(config, model.tag)

	summary, prices = price_monte_carlo(draws, config.bond)
	row = summary.as_dict()
	if config.traded is not None:
		verdict = valuation_verdict(summary, config.traded)
		row.update(traded=verdict.traded, verdict=verdict.valuation.value)
	table = pd.DataFrame([row], index=pd.Index([model.tag], name="model"))
	write_csv(output_dir / "price_summary.csv", table, header)
	write_csv(output_dir / "price_draws.csv", price_draws_frame(draws, prices), header)
	write_csv(output_dir / "price_histogram.csv", price_histogram(prices), header)
	return [("Bond price", table)]


COMMANDS = {
	"fit": cmd_fit,
	"sample": cmd_sample,
	"filter": cmd_filter,
	"price": cmd_price,
}


def _add_common(parser: argparse.ArgumentParser):
	source = parser.add_mutually_exclusive_group()
	source.add_argument("--input", "-i", help="Treasury yield-curve CSV")
	source.add_argument("--fixture", action="store_true", help="use the built-in May 2018 panel")
	parser.add_argument("--model", "-m", nargs="+", default=["m2"], choices=["m1", "m2", "m3"], help="prior model(s)")
	parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
	parser.add_argument("--output-dir", "-o", help=f"output directory (default ${OUTPUT_DIR_VARIABLE} or {DEFAULT_OUTPUT_DIR})")
	parser.add_argument("--format", choices=FORMATS, default="table", help="console output format")
	parser.add_argument("--restarts", type=int, default=8, help="MAP restarts")
	parser.add_argument("--verbose", "-v", action="count", default=0)


def _add_sampler(parser: argparse.ArgumentParser):
	parser.add_argument("--chains", type=int, default=4)
	parser.add_argument("--warmup", type=int, default=1000)
	parser.add_argument("--draws", type=int, default=1000)
	parser.add_argument("--target-accept", type=float, default=0.8)
	parser.add_argument("--workers", type=int, default=1, help="threads running chains")


def build_parser() -> argparse.ArgumentParser:
	"""Builds the argument parser of the ``pybns`` command."""
	parser = argparse.ArgumentParser(prog="pybns", description="Bayesian Nelson-Siegel yield curves")
	parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
	commands = parser.add_subparsers(dest="command", required=True)

	fit = commands.add_parser("fit", help="MAP estimates")
	_add_common(fit)
	fit.add_argument("--rolling", action="store_true", help="also fit one estimate per date")

	sample_parser = commands.add_parser("sample", help="posterior sampling")
	_add_common(sample_parser)
	_add_sampler(sample_parser)

	filter_parser = commands.add_parser("filter", help="dynamic Nelson-Siegel filter")
	_add_common(filter_parser)
	filter_parser.add_argument(
		"--lambda-grid",
		default=",".join(str(lam) for lam in DEFAULT_LAMBDA_GRID),
		help="comma-separated decay factors",
	)
	filter_parser.add_argument("--gp-amplitude", type=float, default=None, help="squared amplitude of the residual kernel")
	filter_parser.add_argument("--gp-length-scale", type=float, default=2.0)
	filter_parser.add_argument("--refine-static", action="store_true")

	price = commands.add_parser("price", help="Monte Carlo bond pricing")
	_add_common(price)
	_add_sampler(price)
	price.add_argument("--par", type=float, default=1000.0)
	price.add_argument("--coupon", type=float, default=0.04, help="annual coupon rate as a fraction")
	price.add_argument("--freq", type=int, default=2, choices=[1, 2, 4, 12])
	price.add_argument("--maturity", type=float, default=15.0)
	price.add_argument("--traded", type=float, default=None)
	price.add_argument("--draws-file", default=None, help="draws CSV from `pybns sample`")
	return parser


def _configure_logging(verbosity: int):
	level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
	logging.basicConfig(
		level=level,
		format="%(message)s",
		handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
		force=True,
	)


def main(argv: Optional[Sequence[str]] = None, console: Optional[Console] = None) -> int:
	"""
	Runs the ``pybns`` command.

	Args:
		argv (Sequence[str], optional): Arguments, defaults to `sys.argv[1:]`.
		console (Console, optional): Console receiving the report.

	Returns:
		int: Process exit code.
	"""
	parser = build_parser()
	try:
		args = parser.parse_args(argv)
	except SystemExit as exit_:
		return ExitCode.OK if exit_.code in (0, None) else ExitCode.USAGE
	_configure_logging(args.verbose)
	console = Console() if console is None else console
	error_console = Console(stderr=True)

	try:
		config = RunConfig.from_args(args)
		report = COMMANDS[config.command](config)
	except PybnsError as error:
		error_console.print(f"[red]error:[/red] {error}", highlight=False)
		return error.exit_code
	except OSError as error:
		error_console.print(f"[red]error:[/red] {error}", highlight=False)
		return ExitCode.IO
	except ValueError as error:
		error_console.print(f"[red]error:[/red] {error}", highlight=False)
		return ExitCode.DOMAIN

	for title, frame in report:
		render(frame, config.output_format, console, title=title)
	return ExitCode.OK


def run():
	"""Console-script entry point."""
	sys.exit(int(main()))


if __name__ == "__main__":
	run()
