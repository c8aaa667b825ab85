"""Result writers for CSV tables and JSON documents."""

import math
import os
import tempfile
from abc import ABC, abstractmethod
from collections.abc import Mapping, Sequence
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import orjson
import structlog
from pydantic import BaseModel

from spinlab.exceptions import EmptyResults, IoFailure
from spinlab.schemas import Command, OutputFormat, ResultDocument

logger = structlog.get_logger(__name__)

Row = Mapping[str, Any] | BaseModel


def as_record(row: Row) -> dict[str, Any]:
    """Plain dict of a result row, keeping field order."""
    if isinstance(row, BaseModel):
        return row.model_dump()
    return dict(row)


def format_float(value: float) -> str:
    """17 significant digits; non-finite values as inf, -inf and nan."""
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, ".17g")


def flatten(record: Mapping[str, Any]) -> dict[str, str]:
    """CSV cells of a record; complex values split into _re and _im columns."""
    cells: dict[str, str] = {}
    for key, value in record.items():
        if isinstance(value, complex):
            cells[f"{key}_re"] = format_float(value.real)
            cells[f"{key}_im"] = format_float(value.imag)
        elif isinstance(value, bool):
            cells[key] = "true" if value else "false"
        elif isinstance(value, float):
            cells[key] = format_float(value)
        elif value is None:
            cells[key] = ""
        elif isinstance(value, list | tuple):
            cells[key] = " ".join(_cell(v, ":") for v in value)
        else:
            cells[key] = str(value)
    return cells


def _cell(value: Any, sep: str) -> str:
    if isinstance(value, complex):
        sign = "+" if value.imag >= 0 or math.isnan(value.imag) else ""
        return f"{format_float(value.real)}{sign}{format_float(value.imag)}j"
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, list | tuple):
        return sep.join(_cell(v, sep) for v in value)
    return str(value)


def sanitize(value: Any) -> Any:
    """JSON-safe copy: complex as {re, im}, non-finite floats as strings."""
    if isinstance(value, BaseModel):
        return sanitize(value.model_dump())
    if isinstance(value, complex):
        return {"re": sanitize(value.real), "im": sanitize(value.imag)}
    if isinstance(value, float):
        return value if math.isfinite(value) else format_float(value)
    if isinstance(value, Mapping):
        return {str(k): sanitize(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [sanitize(v) for v in value]
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.generic):
        return sanitize(value.item())
    return value


def atomic_write(path: Path, payload: bytes) -> None:
    """Write through a temp file in the target directory, then rename.

    Raises:
        IoFailure: The file could not be written
    """
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(payload)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}", path=str(path)) from exc


class ResultWriter(ABC):
    """Abstract base class for result writers."""

    suffix: str

    @abstractmethod
    def render(
        self,
        command: Command,
        rows: Sequence[Row],
        seed: int,
        metadata: Mapping[str, Any],
    ) -> bytes:
        """Serialize results.

        Args:
            command: Command that produced the rows
            rows: Nonempty result rows
            seed: Seed recorded with the run
            metadata: Run-level notes

        Returns:
            File content
        """
        pass

    def write(
        self,
        directory: str | Path,
        command: Command,
        rows: Sequence[Row],
        seed: int = 0,
        metadata: Mapping[str, Any] | None = None,
    ) -> Path:
        """Render and atomically write ``<directory>/<command>.<suffix>``.

        Raises:
            EmptyResults: No rows; no file is created
            IoFailure: The file could not be written
        """
        if not rows:
            raise EmptyResults(f"command '{command.value}' produced no rows")
        path = Path(directory) / f"{command.value}.{self.suffix}"
        atomic_write(path, self.render(command, rows, seed, metadata or {}))
        logger.info("results_written", path=str(path), rows=len(rows))
        return path


class CsvWriter(ResultWriter):
    """Comma-separated table, one header line and one line per row."""

    suffix = "csv"

    def render(
        self,
        command: Command,
        rows: Sequence[Row],
        seed: int,
        metadata: Mapping[str, Any],
    ) -> bytes:
        """Serialize rows; columns follow the first row's field order."""
        table = [flatten(as_record(row)) for row in rows]
        header: list[str] = []
        for cells in table:
            header.extend(key for key in cells if key not in header)
        # A complex field that is None in some rows keeps its split columns.
        header = [
            key for key in header if not {f"{key}_re", f"{key}_im"} <= set(header)
        ]
        lines = [",".join(header)]
        lines.extend(",".join(_quote(cells.get(key, "")) for key in header) for cells in table)
        return ("\n".join(lines) + "\n").encode()


def _quote(cell: str) -> str:
    if any(ch in cell for ch in ',"\n'):
        return '"' + cell.replace('"', '""') + '"'
    return cell


class JsonWriter(ResultWriter):
    """Versioned result document."""

    suffix = "json"

    def render(
        self,
        command: Command,
        rows: Sequence[Row],
        seed: int,
        metadata: Mapping[str, Any],
    ) -> bytes:
        """Serialize a ResultDocument with sorted keys."""
        document = ResultDocument(
            command=command,
            seed=seed,
            metadata=sanitize(dict(metadata)),
            rows=[sanitize(as_record(row)) for row in rows],
        )
        return orjson.dumps(
            sanitize(document.model_dump()),
            option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2,
        ) + b"\n"


WRITERS: dict[OutputFormat, type[ResultWriter]] = {
    OutputFormat.CSV: CsvWriter,
    OutputFormat.JSON: JsonWriter,
}


def emit(
    directory: str | Path,
    command: Command,
    rows: Sequence[Row],
    fmt: OutputFormat = OutputFormat.CSV,
    seed: int = 0,
    metadata: Mapping[str, Any] | None = None,
) -> Path:
    """Write results with the writer for ``fmt``."""
    return WRITERS[fmt]().write(directory, command, rows, seed, metadata)


def load_document(path: str | Path) -> ResultDocument:
    """Read a JSON result document back through its schema."""
    return ResultDocument.model_validate(orjson.loads(Path(path).read_bytes()))
