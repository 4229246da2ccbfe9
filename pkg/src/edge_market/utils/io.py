import csv
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

from edge_market.utils.constants import CSV_FLOAT_FORMAT, DEFAULT_MAX_THREADS, THREADS_ENV_VAR

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


def load_json(path: Path) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def save_json(document: Mapping[str, Any], path: Path) -> Path:
    """
    Write a JSON document, creating parent directories

    Args:
        document: JSON-serializable mapping
        path: Destination file

    Returns:
        The path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(document, handle, indent=2)
        handle.write("\n")
    logger.debug(f"Wrote {path}")
    return path


def fixture_path(name: str) -> Path:
    """Path of a fixture shipped in the package data directory"""
    path = DATA_DIR / name
    if not path.exists():
        raise FileNotFoundError(f"Fixture {name} not found in {DATA_DIR}")
    return path


def load_fixture(name: str) -> Dict[str, Any]:
    return load_json(fixture_path(name))


def format_cell(value: Any) -> Any:
    """Floats are written with full double precision, everything else as is"""
    if isinstance(value, float):
        return CSV_FLOAT_FORMAT.format(value)
    return value


def write_csv(rows: Sequence[Mapping[str, Any]], path: Path, fieldnames: Optional[List[str]] = None) -> Path:
    """
    Write dictionaries as CSV rows with a header

    Args:
        rows: One mapping per row
        path: Destination file
        fieldnames: Column order; defaults to the keys of the first row

    Returns:
        The path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: format_cell(row.get(key)) for key in fieldnames})
    logger.debug(f"Wrote {len(rows)} rows to {path}")
    return path


def read_csv(path: Path) -> List[Dict[str, str]]:
    with open(path, "r", newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def worker_count(tasks: Optional[Iterable[Any]] = None) -> int:
    """
    Number of worker threads for sweeps

    Reads EDGEMARKET_THREADS, falling back to min(8, cpu_count).
    """
    raw = os.environ.get(THREADS_ENV_VAR)
    count = None
    if raw:
        try:
            count = int(raw)
        except ValueError:
            logger.warning(f"Ignoring non-integer {THREADS_ENV_VAR}={raw!r}")
    if count is None or count < 1:
        count = min(DEFAULT_MAX_THREADS, os.cpu_count() or 1)
    if tasks is not None:
        count = max(1, min(count, len(list(tasks))))
    return count
