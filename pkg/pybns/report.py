"""
This module renders command results: CSV files with a provenance header
line, and console output as a rich table, CSV or JSON.
"""

import json
import logging
import math
from pathlib import Path
from typing import Optional

import pandas as pd
from rich.console import Console
from rich.table import Table

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.6f"
FORMATS = ("table", "csv", "json")


def header_line(command: str, seed: int, model: str, version: str) -> str:
	"""
	Builds the provenance header written at the top of every output file.

	Args:
		command (str): Command name.
		seed (int): Random seed of the run.
		model (str): Prior model tag, or ``dns`` for the filter.
		version (str): Package version.

	Returns:
		str: The header, without a trailing newline.
	"""
	return f"# pybns command={command} seed={seed} model={model} version={version}"


def frame_to_csv(frame: pd.DataFrame, index: bool = False) -> str:
	"""Renders `frame` as CSV with 6-decimal floats and ``\\n`` line endings."""
	return frame.to_csv(index=index, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_csv(path: Path, frame: pd.DataFrame, header: str, index: bool = False) -> Path:
	"""
	Writes `frame` to `path` below `header`.

	Args:
		path (Path): Destination file.
		frame (pd.DataFrame): Table to write.
		header (str): Header line from `header_line`.
		index (bool, optional): Whether to write the index. Default is False.

	Returns:
		Path: The path written.
	"""
	path = Path(path)
	path.write_text(f"{header}\n{frame_to_csv(frame, index=index)}", encoding="utf-8")
	logger.info("Wrote %s", path)
	return path


def _cell(value) -> str:
	if isinstance(value, bool):
		return str(value)
	if isinstance(value, float):
		return "NaN" if math.isnan(value) else f"{value:.6f}"
	return str(value)


def to_table(frame: pd.DataFrame, title: Optional[str] = None) -> Table:
	"""
	Converts `frame` into a rich table, index first.

	Args:
		frame (pd.DataFrame): Table to render.
		title (str, optional): Table title.

	Returns:
		Table: The rich table.
	"""
	table = Table(title=title)
	table.add_column(str(frame.index.name or ""), style="cyan")
	for column in frame.columns:
		table.add_column(str(column), justify="right")
	for label, row in frame.iterrows():
		table.add_row(_cell(label), *(_cell(value) for value in row.tolist()))
	return table


def render(frame: pd.DataFrame, output_format: str, console: Console, title: Optional[str] = None):
	"""
	Prints `frame` to `console` in one of the formats ``table``, ``csv`` or ``json``.

	Args:
		frame (pd.DataFrame): Table to print.
		output_format (str): Output format.
		console (Console): Destination console.
		title (str, optional): Title, shown for tables and as a JSON key.
	"""
	if output_format == "table":
		console.print(to_table(frame, title))
	elif output_format == "csv":
		console.print(frame_to_csv(frame, index=True), end="", markup=False, highlight=False, soft_wrap=True)
	elif output_format == "json":
		records = json.loads(frame.reset_index().to_json(orient="records", double_precision=6))
		console.print(
			json.dumps({"title": title, "rows": records}, allow_nan=True),
			markup=False, highlight=False, soft_wrap=True,
		)
	else:
		raise ValueError(f"Unknown output format {output_format!r}; expected one of {FORMATS}.")
