"""Deterministic CSV and JSON emission for the command-line runner.

Floats are serialized with 17 significant digits so a round-trip through
the files is lossless, line endings are pinned to "\\n", and JSON keys are
sorted; identical inputs therefore produce byte-identical files.  Summaries
embed the resolved configuration, the package version, and every seed used,
and deliberately contain no timestamps.
"""

import csv
import json
import os

from . import __version__


def format_value(v):
    """CSV cell for v: floats at 17 significant digits, the rest as str."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def write_csv(path, header, rows):
    """Write rows (iterables of cells) under a header row.

    UTF-8, comma-separated, "\\n" line endings.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def _jsonable(obj):
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def write_json_summary(path, command, config, results):
    """Write the one-per-command JSON summary.

    Contains the command name, the package version, the full resolved
    configuration (seeds included), and the command's result table.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    doc = {
        "command": command,
        "version": __version__,
        "config": _jsonable(config.resolved),
        "results": _jsonable(results),
    }
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
