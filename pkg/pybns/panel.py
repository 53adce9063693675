"""
This module provides an interface for reading yield-curve panels: a
date-by-tenor matrix of yields in percent, as published in US Treasury
daily par yield curve exports.

Example:
	Load a treasury export and render it in the canonical format::

		from pathlib import Path
		from pybns import parse_treasury_csv

		panel = parse_treasury_csv(Path("daily-treasury-rates.csv").read_bytes())
		print(panel.to_frame())
		Path("panel.csv").write_text(panel.to_csv())

	Or start from the built-in six-day panel of May 2018::

		from pybns import builtin_fixture_may2018

		panel = builtin_fixture_may2018()
"""

import datetime
import io
import re
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd

from .curve import MaturityGrid
from .errors import DomainError, FormatError

TENOR_MAP: Dict[str, float] = {
	"1 Mo": 1 / 12,
	"2 Mo": 2 / 12,
	"3 Mo": 3 / 12,
	"4 Mo": 4 / 12,
	"6 Mo": 6 / 12,
	"1 Yr": 1.0,
	"2 Yr": 2.0,
	"3 Yr": 3.0,
	"5 Yr": 5.0,
	"7 Yr": 7.0,
	"10 Yr": 10.0,
	"20 Yr": 20.0,
	"30 Yr": 30.0,
}

_TENOR_PATTERN = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(mo|mos|month|months|yr|yrs|year|years|wk|wks|week|weeks)\s*$", re.IGNORECASE)
_DATE_FORMATS = ("%m/%d/%y", "%m/%d/%Y", "%Y-%m-%d")

_FIXTURE_TENORS = ["1 Mo", "3 Mo", "6 Mo", "1 Yr", "2 Yr", "3 Yr", "5 Yr", "7 Yr", "10 Yr", "20 Yr", "30 Yr"]
_FIXTURE_ROWS = [
	("05/01/18", [1.68, 1.85, 2.05, 2.26, 2.50, 2.66, 2.82, 2.93, 2.97, 3.03, 3.13]),
	("05/02/18", [1.69, 1.84, 2.03, 2.24, 2.49, 2.64, 2.80, 2.92, 2.97, 3.04, 3.14]),
	("05/03/18", [1.68, 1.84, 2.02, 2.24, 2.49, 2.62, 2.78, 2.90, 2.94, 3.02, 3.12]),
	("05/04/18", [1.67, 1.84, 2.03, 2.24, 2.51, 2.63, 2.78, 2.90, 2.95, 3.02, 3.12]),
	("05/07/18", [1.69, 1.86, 2.05, 2.25, 2.49, 2.64, 2.78, 2.90, 2.95, 3.02, 3.12]),
	("05/08/18", [1.69, 1.87, 2.05, 2.26, 2.51, 2.66, 2.81, 2.93, 2.97, 3.04, 3.13]),
]


class YieldPanel:
	"""
	Represents observed yields on a set of dates and maturities.

	Attributes:
		dates (list[datetime.date]): Strictly increasing observation dates.
		grid (MaturityGrid): Maturities of the columns, in years.
		values (np.ndarray): Array of shape (n, m) of yields in percent, NaN where missing.
		mask (np.ndarray): Boolean array of shape (n, m), True where a yield was observed.
	"""
	def __init__(
		self,
		dates: Iterable[datetime.date],
		grid: Union[MaturityGrid, Iterable[float]],
		values: np.ndarray,
	):
		"""
		Initialises a YieldPanel instance.

		Args:
			dates (Iterable[datetime.date]): Observation dates, strictly increasing.
			grid (MaturityGrid | Iterable[float]): Column maturities in years.
			values (np.ndarray): Yields of shape (n, m); NaN marks a missing cell.
		"""
		dates = list(dates)
		if not isinstance(grid, MaturityGrid):
			grid = MaturityGrid(grid)
		values = np.array(values, dtype=float, ndmin=2)
		if values.shape != (len(dates), len(grid)):
			raise DomainError(
				f"`values` has shape {values.shape}, expected {(len(dates), len(grid))}."
			)
		if len(dates) == 0:
			raise DomainError("A panel needs at least one date.")
		if any(later <= earlier for earlier, later in zip(dates, dates[1:])):
			raise DomainError("`dates` must be strictly increasing.")
		if np.any(np.isinf(values)):
			raise DomainError("Yields must be finite or missing.")

		values.setflags(write=False)
		mask = np.isfinite(values)
		mask.setflags(write=False)
		self.dates = dates
		self.grid = grid
		self.values = values
		self.mask = mask

	@property
	def shape(self):
		"""tuple[int, int]: Number of dates and number of maturities."""
		return self.values.shape

	@property
	def n_observed(self) -> int:
		"""int: Number of observed cells."""
		return int(self.mask.sum())

	def observed(self):
		"""
		Flattens the observed cells.

		Returns:
			tuple[np.ndarray, np.ndarray]: Maturities and yields of every observed cell.
		"""
		taus = np.broadcast_to(self.grid.taus, self.values.shape)
		return taus[self.mask], self.values[self.mask]

	def value(self, date: datetime.date, tau: float) -> float:
		"""
		Looks up a single cell.

		Args:
			date (datetime.date): Observation date.
			tau (float): Maturity in years, matched to within 1e-9.

		Returns:
			float: The yield, NaN if missing.
		"""
		row = self.dates.index(date)
		(col,) = np.flatnonzero(np.isclose(self.grid.taus, tau, rtol=0, atol=1e-9))
		return float(self.values[row, col])

	def split_by_date(self) -> List["YieldPanel"]:
		"""
		Splits the panel into single-date panels.

		Returns:
			list[YieldPanel]: One panel per date, in date order.
		"""
		return [
			YieldPanel([date], self.grid, self.values[i:i + 1])
			for i, date in enumerate(self.dates)
		]

	def short_end(self) -> np.ndarray:
		"""np.ndarray: Per-date yield at the shortest observed maturity, NaN for an empty row."""
		return np.array([row[np.isfinite(row)][0] if np.isfinite(row).any() else np.nan for row in self.values])

	def long_end(self) -> np.ndarray:
		"""np.ndarray: Per-date yield at the longest observed maturity, NaN for an empty row."""
		return np.array([row[np.isfinite(row)][-1] if np.isfinite(row).any() else np.nan for row in self.values])

	def to_frame(self) -> pd.DataFrame:
		"""
		Returns the panel as a DataFrame indexed by date with one column per maturity.

		Returns:
			pd.DataFrame: The panel.
		"""
		return pd.DataFrame(
			self.values,
			index=pd.Index(self.dates, name="date"),
			columns=self.grid.taus.tolist(),
		)

	def to_csv(self) -> str:
		"""
		Renders the panel in the canonical CSV format: a `date` column of ISO
		dates followed by one column per maturity, headed by the maturity in
		years at full precision, with yields written to 6 decimals and
		missing cells left empty.

		Returns:
			str: The CSV text.
		"""
		frame = pd.DataFrame(
			self.values,
			columns=[repr(float(tau)) for tau in self.grid.taus],
		)
		frame.insert(0, "date", [date.isoformat() for date in self.dates])
		return frame.to_csv(index=False, float_format="%.6f", lineterminator="\n")

	def __eq__(self, other):
		if not isinstance(other, YieldPanel):
			return NotImplemented
		return (
			self.dates == other.dates
			and self.grid == other.grid
			and np.array_equal(self.values, other.values, equal_nan=True)
		)

	def __repr__(self):
		n, m = self.shape
		return f"YieldPanel({n} dates x {m} maturities, {self.dates[0]} to {self.dates[-1]})"


def _parse_date(text: str, row: int) -> datetime.date:
	for fmt in _DATE_FORMATS:
		try:
			return datetime.datetime.strptime(text.strip(), fmt).date()
		except ValueError:
			continue
	raise FormatError(f"Unrecognised date {text!r}", row=row, column="Date")


def _resolve_tenor(header: str, tenor_map: Dict[str, float]) -> Optional[float]:
	header = header.strip()
	if header in tenor_map:
		return float(tenor_map[header])
	try:
		years = float(header)
	except ValueError:
		match = _TENOR_PATTERN.match(header)
		if match is None:
			return None
		count, unit = float(match.group(1)), match.group(2).lower()
		if unit.startswith("mo"):
			return count / 12
		if unit.startswith("w"):
			return count / 52
		return count
	return years if np.isfinite(years) and years > 0 else None


def _parse_cell(text: str) -> float:
	try:
		value = float(text)
	except ValueError:
		return np.nan
	return value if np.isfinite(value) else np.nan


def parse_treasury_csv(
	data: Union[bytes, str],
	tenor_map: Optional[Dict[str, float]] = None,
) -> YieldPanel:
	"""
	Parses a treasury-style yield-curve CSV.

	The header must contain a date column (``Date`` in any case) and at least
	one tenor column. Tenor headers are resolved through `tenor_map`, then as
	a bare number of years, then by the pattern ``<n> Mo|Yr|Wk``; other
	columns are ignored. Rows are sorted by date. Empty or unparseable cells
	are marked missing, never zero.

	Args:
		data (bytes | str): CSV content.
		tenor_map (dict[str, float], optional): Tenor header to years. Defaults to `TENOR_MAP`.

	Returns:
		YieldPanel: The parsed panel.

	Raises:
		FormatError: If the date column is missing, a date is malformed or
			duplicated, no tenor column is recognised, or the bytes are not UTF-8.
	"""
	tenor_map = TENOR_MAP if tenor_map is None else tenor_map
	if isinstance(data, bytes):
		try:
			data = data.decode("utf-8-sig")
		except UnicodeDecodeError as error:
			raise FormatError(f"Input is not UTF-8 text: {error.reason} at byte {error.start}") from error
	try:
		frame = pd.read_csv(
			io.StringIO(data),
			dtype=str,
			keep_default_na=False,
			skipinitialspace=True,
			comment="#",
		)
	except (pd.errors.ParserError, pd.errors.EmptyDataError) as error:
		raise FormatError(f"Unreadable CSV: {error}") from error

	date_columns = [column for column in frame.columns if column.strip().lower() == "date"]
	if not date_columns:
		raise FormatError("Missing Date column", column="Date")
	date_column = date_columns[0]

	tenors = {}
	for column in frame.columns:
		if column == date_column:
			continue
		years = _resolve_tenor(column, tenor_map)
		if years is None:
			continue
		if any(np.isclose(years, other, rtol=0, atol=1e-12) for other in tenors.values()):
			raise FormatError("Duplicate tenor", column=column)
		tenors[column] = years
	if not tenors:
		raise FormatError("No recognisable tenor columns")

	columns = sorted(tenors, key=tenors.get)
	dates = [_parse_date(text, row=i + 1) for i, text in enumerate(frame[date_column])]
	seen = {}
	for i, date in enumerate(dates):
		if date in seen:
			raise FormatError(f"Duplicate date {date.isoformat()}", row=i + 1, column=date_column)
		seen[date] = i

	order = sorted(range(len(dates)), key=lambda i: dates[i])
	values = np.array([
		[_parse_cell(frame[column].iloc[i]) for column in columns]
		for i in order
	], dtype=float).reshape(len(order), len(columns))
	if values.shape[0] == 0:
		raise FormatError("No data rows")
	return YieldPanel(
		dates=[dates[i] for i in order],
		grid=MaturityGrid([tenors[column] for column in columns]),
		values=values,
	)


def builtin_fixture_may2018() -> YieldPanel:
	"""
	Returns the US Treasury par yield curve over the first six business days
	of May 2018 (6 dates by 11 tenors, 1 month to 30 years).

	Returns:
		YieldPanel: The fixture panel.
	"""
	return YieldPanel(
		dates=[datetime.datetime.strptime(date, "%m/%d/%y").date() for date, _ in _FIXTURE_ROWS],
		grid=MaturityGrid([TENOR_MAP[tenor] for tenor in _FIXTURE_TENORS]),
		values=np.array([row for _, row in _FIXTURE_ROWS]),
	)
