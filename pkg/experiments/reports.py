"""
Artifact emission. Output bytes depend only on the scenario and the seed:
JSON keys are sorted, floats are written with repr precision and
non-finite numbers become null.
"""
import csv
import json
import logging
import math
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class ReportError(Exception):
    """An artifact could not be written."""

    def __init__(self, path, reason):
        super().__init__(f"Cannot write {path}: {reason}")
        self.path = path


def to_jsonable(value):
    if isinstance(value, dict):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, Path):
        return value.as_posix()
    return value


def dumps(document):
    return json.dumps(to_jsonable(document), ensure_ascii=False, indent=2, sort_keys=True, allow_nan=False) + '\n'


def _prepare(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(path, exc.strerror or exc) from exc
    return path


def write_json(path, document):
    path = _prepare(path)
    try:
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(dumps(document))
    except OSError as exc:
        raise ReportError(path, exc.strerror or exc) from exc
    logger.debug("Wrote %s", path)
    return path


def write_csv(path, header, rows):
    path = _prepare(path)
    try:
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(header)
            for row in rows:
                writer.writerow([value if isinstance(value, (int, str)) else repr(float(value)) for value in row])
    except OSError as exc:
        raise ReportError(path, exc.strerror or exc) from exc
    logger.debug("Wrote %d rows to %s", len(rows), path)
    return path


def emit_report(out_dir, summary, tables=None):
    """
    Write ``summary.json`` and one CSV per table into ``out_dir``.

    ``tables`` maps a file name to a (header, rows) pair. Returns the paths
    written, summary first.
    """
    out_dir = Path(out_dir)
    written = [write_json(out_dir / 'summary.json', summary)]
    for filename, (header, rows) in sorted((tables or {}).items()):
        written.append(write_csv(out_dir / filename, header, rows))
    return written
