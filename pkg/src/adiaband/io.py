"""Run directories: ``report.json``, CSV tables and the failure manifest.

Outputs are deterministic: keys are sorted, floats are written with their
shortest round-trip representation, and nothing time-dependent is stored.
"""
from __future__ import annotations

import csv
import json
import math
import os
from fractions import Fraction
from pathlib import Path

import numpy as np

from .config import SCHEMA_VERSION, RunConfig
from .errors import AdiabandError

REPORT = "report.json"
FAILURES = "failures.json"


class IncompleteRunError(AdiabandError):
    """The directory does not hold a finished run."""


def jsonable(obj):
    """Plain JSON types; non-finite floats become the strings ``"inf"``, ``"-inf"``, ``"nan"``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": jsonable(obj.real), "im": jsonable(obj.imag)}
    if isinstance(obj, Fraction):
        return str(obj)
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def read_csv(path: Path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_run(out_dir, cfg: RunConfig, result) -> Path:
    """Write every artifact of a finished run; ``report.json`` goes last and marks completion."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / REPORT).unlink(missing_ok=True)
    for name, table in sorted(result.tables.items()):
        write_csv(out / name, table.header, table.rows)
    failed = [a.to_dict() for a in result.assertions if not a.passed]
    if failed:
        _atomic_write(out / FAILURES, dumps({"experiment": cfg.experiment,
                                             "config_hash": cfg.config_hash, "failures": failed}))
    else:
        (out / FAILURES).unlink(missing_ok=True)
    report = {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.experiment,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash,
        "passed": result.passed,
        "assertions": [a.to_dict() for a in result.assertions],
        "tables": sorted(result.tables),
        "results": result.report,
    }
    _atomic_write(out / REPORT, dumps(report))
    return out / REPORT


def read_run(out_dir) -> dict:
    """Load ``report.json`` of a completed run."""
    path = Path(out_dir) / REPORT
    if not path.is_file():
        raise IncompleteRunError(f"{out_dir}: no {REPORT}; the run is missing or did not finish")
    try:
        rep = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise IncompleteRunError(f"{path}: unreadable report ({exc})") from exc
    if rep.get("schema_version") != SCHEMA_VERSION:
        raise IncompleteRunError(f"{path}: unsupported schema version {rep.get('schema_version')}")
    missing = [t for t in rep.get("tables", []) if not (Path(out_dir) / t).is_file()]
    if missing:
        raise IncompleteRunError(f"{out_dir}: missing tables {missing}")
    return rep
