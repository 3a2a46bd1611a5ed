"""
Report files. CSV files start with a `# schema_version: X.Y` line, JSON
files carry a top-level "schema_version"; readers reject unknown majors.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict

import pandas as pd

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

SCHEMA_VERSION = "1.0"
CSV_VERSION_PREFIX = "# schema_version: "


class SchemaVersionError(ValueError):
    """Exception raised when reading a report with an unsupported schema version."""

    def __init__(self, path: Path, version: str):
        self.path = path
        self.version = version
        super().__init__(
            f'Unsupported schema version "{version}" in "{path}" (supported: {SCHEMA_VERSION})'
        )


def _check_version(path: Path, version: str) -> None:
    if version.split(".")[0] != SCHEMA_VERSION.split(".")[0]:
        raise SchemaVersionError(path, version)


def write_csv(frame: pd.DataFrame, path: Path) -> None:
    """'.' decimals, '\\n' line ends, no index."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wt", newline="") as f:
        f.write(f"{CSV_VERSION_PREFIX}{SCHEMA_VERSION}\n")
        frame.to_csv(f, index=False, lineterminator="\n")
    logger.debug(f'Wrote {len(frame)} rows to "{path}"')


def read_csv(path: Path) -> pd.DataFrame:
    with open(path, "rt") as f:
        first_line = f.readline().rstrip("\n")
    if not first_line.startswith(CSV_VERSION_PREFIX):
        raise SchemaVersionError(path, "missing")
    _check_version(path, first_line[len(CSV_VERSION_PREFIX) :])
    return pd.read_csv(path, skiprows=1)


def write_json(payload: Dict[str, Any], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    content = {"schema_version": SCHEMA_VERSION, **payload}
    path.write_text(json.dumps(content, indent=2, sort_keys=True) + "\n")


def read_json(path: Path) -> Dict[str, Any]:
    content: Dict[str, Any] = json.loads(path.read_text())
    _check_version(path, str(content.get("schema_version", "missing")))
    return content
