"""
This module defines the exceptions raised by pybns and the exit codes the
command-line interface maps them to.

Validation failures subclass `ValueError`, so callers that already guard
against bad input with ``except ValueError`` keep working.

Example:
	Catch a malformed input file::

		from pybns import parse_treasury_csv
		from pybns.errors import FormatError

		try:
		   panel = parse_treasury_csv(b"Date\\n05/01/18\\n")
		except FormatError as error:
		   print(error.column, error)
"""

from enum import IntEnum


class ExitCode(IntEnum):
	"""Process exit codes used by ``pybns`` commands."""
	OK = 0
	USAGE = 2
	IO = 3
	FORMAT = 4
	CONVERGENCE = 5
	SAMPLING_QUALITY = 6
	NUMERICAL = 7
	DOMAIN = 8


class PybnsError(Exception):
	"""Base class for all pybns errors."""
	exit_code = ExitCode.DOMAIN


class DomainError(PybnsError, ValueError):
	"""Raised when a value lies outside the domain of an operation."""
	exit_code = ExitCode.DOMAIN


class FormatError(PybnsError, ValueError):
	"""
	Raised when an input file cannot be interpreted as a yield panel.

	Attributes:
		row (int | None): 1-based data row the problem was found on, if any.
		column (str | None): Column the problem was found in, if any.
	"""
	exit_code = ExitCode.FORMAT

	def __init__(self, message: str, row: int = None, column: str = None):
		self.row = row
		self.column = column
		context = []
		if row is not None:
			context.append(f"row {row}")
		if column is not None:
			context.append(f"column {column!r}")
		if context:
			message = f"{message} ({', '.join(context)})"
		super().__init__(message)


class ConvergenceError(PybnsError):
	"""
	Raised when every optimiser restart diverged.

	Attributes:
		best (MapResult | None): Best-effort result across the restarts.
	"""
	exit_code = ExitCode.CONVERGENCE

	def __init__(self, message: str, best=None):
		super().__init__(message)
		self.best = best


class SamplingQualityError(PybnsError):
	"""
	Raised when the sampler produced too many divergent transitions.

	Attributes:
		draws (PosteriorDraws): The draws that failed the quality gate.
		diagnostics (pd.DataFrame | None): Per-parameter diagnostics.
	"""
	exit_code = ExitCode.SAMPLING_QUALITY

	def __init__(self, message: str, draws=None, diagnostics=None):
		super().__init__(message)
		self.draws = draws
		self.diagnostics = diagnostics


class NumericalError(PybnsError):
	"""
	Raised when a linear-algebra step fails.

	Attributes:
		index (int | None): Zero-based time index of the failing step.
		date (datetime.date | None): Date of the failing step, when known.
	"""
	exit_code = ExitCode.NUMERICAL

	def __init__(self, message: str, index: int = None, date=None):
		if date is not None:
			message = f"{message} (date {date.isoformat()})"
		elif index is not None:
			message = f"{message} (time index {index})"
		super().__init__(message)
		self.index = index
		self.date = date
