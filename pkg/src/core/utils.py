import csv
import json
import logging
import math
from pathlib import Path
from typing import Any

from .errors import ConfigError, ParseError

logger = logging.getLogger(__name__)


def format_float(value: float) -> str:
    """Shortest repr that round-trips exactly through float()."""
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(value)


def read_data_lines(path) -> list[tuple[int, str]]:
    """Non-blank lines of a text file with their 1-based line numbers.

    The first line is kept even when it is a ``#`` header; later comment
    lines are skipped.
    """
    path = Path(path)
    lines: list[tuple[int, str]] = []
    with open(path) as file:
        for line_no, raw in enumerate(file, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#") and lines:
                continue
            lines.append((line_no, line))
    if not lines:
        raise ParseError(f"{path} is empty", line=1)
    return lines


def _coerce(value: str) -> Any:
    """Interpret a key=value right-hand side as JSON when possible."""
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def load_config_file(config_path) -> dict[str, Any]:
    """Load run options from a JSON object or a key=value file."""
    path = Path(config_path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")

    text = path.read_text()
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            values = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON in {path}: {e.msg}", line=e.lineno) from None
        if not isinstance(values, dict):
            raise ConfigError(f"{path} must hold a JSON object", source="config")
        return {str(k).replace("-", "_"): v for k, v in values.items()}

    values: dict[str, Any] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {line!r}", line=line_no)
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = _coerce(value.strip())
    logger.debug(f"Loaded {len(values)} option(s) from {path}")
    return values


def write_json(data: Any, path) -> Path:
    """Write JSON with sorted keys so reruns produce identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True, allow_nan=True)
        f.write("\n")
    return path


def write_csv(path, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [format_float(v) if isinstance(v, float) else v for v in row]
            )
    return path


def read_csv(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    """Header and data rows (with 1-based line numbers) of a CSV file."""
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path} is empty", line=1) from None
        rows = [(reader.line_num, row) for row in reader if row]
    return header, rows
