"""Command-line entry point ``adiaband``.

``adiaband run CONFIG [--out DIR] [--threads N] [--verbose]`` runs one
experiment; ``adiaband report DIR`` summarizes a finished run.  Exit codes:
0 when every assertion passes, 2 when an assertion fails, 1 on
configuration or runtime errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import config as config_mod
from .errors import AdiabandError
from .experiments import run_experiment
from .io import FAILURES, read_csv, read_run, write_run

log = logging.getLogger("adiaband")

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _default_out(cfg) -> Path:
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path("runs") / f"{cfg.experiment}-{cfg.config_hash[:12]}"


def cmd_run(args) -> int:
    cfg = config_mod.load(args.config)
    out = Path(args.out) if args.out else _default_out(cfg)
    log.info("experiment %s, config hash %s", cfg.experiment, cfg.config_hash)
    with threadpool_limits(limits=args.threads):
        result = run_experiment(cfg)
    write_run(out, cfg, result)
    for a in result.assertions:
        print(a.line())
    print(f"report: {out / 'report.json'}")
    if not result.passed:
        print(f"failure manifest: {out / FAILURES}")
        return EXIT_FAIL
    return EXIT_OK


def _slope_rows(rep: dict) -> list[str]:
    rows = []
    for a in rep["assertions"]:
        if "slope" in a["name"]:
            v = "floor" if a["saturated"] else f"{a['value']:.3f}"
            ctx = f" ({a['context']})" if a["context"] else ""
            rows.append(f"  {a['name']:<32} {v:>8}  >= {a['bound']}{ctx}")
    return rows


def cmd_report(args) -> int:
    out = Path(args.dir)
    rep = read_run(out)
    print(f"experiment {rep['experiment']}  config {rep['config_hash'][:12]}")
    for a in rep["assertions"]:
        print(a["line"])
    slopes = _slope_rows(rep)
    if slopes:
        print("slopes:")
        print("\n".join(slopes))
    if rep["experiment"] == "degennes" and "thresholds.csv" in rep["tables"]:
        header, rows = read_csv(out / "thresholds.csv")
        print("thresholds:")
        print("  " + "  ".join(f"{h:>12}" for h in header[:4]))
        for r in rows:
            print("  " + "  ".join(f"{c:>12}" for c in r[:2]) + "  "
                  + "  ".join(f"{float(c):>12.7f}" for c in r[2:4]))
    print("data files:")
    for t in rep["tables"]:
        print(f"  {out / t}")
    return EXIT_OK if rep["passed"] else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adiaband", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment from a JSON configuration")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: runs/<experiment>-<hash>)")
    r.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    r.add_argument("--verbose", action="store_true")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("report", help="summarize a finished run")
    s.add_argument("dir")
    s.add_argument("--verbose", action="store_true")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except AdiabandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # runtime failure inside a library call
        log.debug("traceback", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
