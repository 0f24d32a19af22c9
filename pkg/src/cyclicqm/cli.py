"""Command line: ``run``, ``sweep`` and ``validate`` over TOML experiment configs.

Exit codes: 0 when every invariant passes, 1 when any invariant fails or
the computation raises, 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import copy
import datetime as _dt
import json
import math
import platform
import re
import sys
import time
import traceback
import warnings
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .errors import ConfigError
from .experiments import fit_slope
from .io import write_csv, write_json
from .runners import (
    EXPERIMENTS,
    RUNNERS,
    SWEEP_ORDERS,
    Check,
    sweep_target,
    validate_config,
)

try:  # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as _toml

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


# --------------------------------------------------------------------------
# configuration


def load_raw(path: str | Path) -> dict:
    """Read TOML; syntax errors become :class:`ConfigError` naming the line."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}", [f"{path}: unreadable"]) from exc
    try:
        return _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = re.search(r"line (\d+)", str(exc))
            line = int(m.group(1)) if m else None
        where = f"line {line}" if line is not None else "unknown line"
        raise ConfigError(f"{path}: parse error at {where}: {exc}", [f"{where}: {exc}"]) from exc


def parse_config(path: str | Path, seed: int | None = None, out: str | None = None) -> dict:
    raw = load_raw(path)
    return _validated(raw, seed, out)


def _validated(raw: dict, seed: int | None, out: str | None) -> dict:
    raw = copy.deepcopy(raw)
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["output_dir"] = out
    return validate_config(raw)


# --------------------------------------------------------------------------
# running


def _versions() -> dict:
    return {"cyclicqm": __version__, "numpy": np.__version__, "python": platform.python_version()}


def new_run_dir(output_dir: str | Path, experiment: str, seed: int) -> Path:
    base = Path(output_dir) / experiment
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    for i in range(10_000):
        suffix = "" if i == 0 else f"-{i}"
        d = base / f"{stamp}-{seed}{suffix}"
        try:
            d.mkdir(parents=True, exist_ok=False)
            return d
        except FileExistsError:
            continue
    raise RuntimeError(f"could not create a fresh run directory under {base}")


def execute(cfg: dict, run_dir: Path, strict: bool = False) -> dict:
    """Run one validated config into ``run_dir``; always writes ``report.json``."""
    name, seed = cfg["experiment"], cfg["seed"]
    report: dict[str, Any] = {
        "experiment": name,
        "seed": seed,
        "strict": strict,
        "config": cfg,
        "versions": _versions(),
        "invariants": [],
        "metrics": {},
        "artifacts": [],
        "warnings": [],
        "notes": [],
        "error": None,
    }
    t0 = time.perf_counter()
    outcome = None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            outcome = RUNNERS[name](cfg, seed, strict)
        except ConfigError:
            raise
        except Exception as exc:  # failures are reported, not swallowed
            report["error"] = {
                "type": type(exc).__name__,
                "message": str(exc),
                "traceback": traceback.format_exc(limit=8),
            }
    report["warnings"] = sorted({f"{w.category.__name__}: {w.message}" for w in caught})
    if outcome is not None:
        report["invariants"] = [c.as_dict() for c in outcome.checks]
        report["metrics"] = outcome.metrics
        report["sweep_metric"] = outcome.sweep_metric
        report["notes"] = outcome.notes
        for table, (header, rows) in sorted(outcome.tables.items()):
            fname = f"{table}.csv"
            write_csv(run_dir / fname, header, rows)
            report["artifacts"].append(fname)
    passed = outcome is not None and outcome.passed
    report["status"] = "pass" if passed else ("error" if outcome is None else "fail")
    report["failed_invariants"] = [c["name"] for c in report["invariants"] if not c["passed"]]
    if outcome is None:
        report["failed_invariants"].append(f"error:{report['error']['type']}")
    report["wall_time_s"] = time.perf_counter() - t0
    write_json(run_dir / "report.json", report)
    return report


def run_experiment(cfg: dict, strict: bool = False) -> tuple[dict, Path]:
    run_dir = new_run_dir(cfg["output_dir"], cfg["experiment"], cfg["seed"])
    return execute(cfg, run_dir, strict), run_dir


def parse_values(text: str, param: str) -> list:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise ConfigError("--values is empty", ["--values: at least one value is required"])
    out = []
    for s in items:
        try:
            out.append(int(s) if param == "n_points" else float(s))
        except ValueError as exc:
            raise ConfigError(f"--values: {s!r} is not a number", [f"--values: {s!r} is not a number"]) from exc
    return out


def sweep(raw: dict, param: str, values: Sequence, strict: bool = False, seed=None, out=None) -> tuple[dict, Path]:
    """One sub-run per value, each in its own directory, plus an aggregate report."""
    base = _validated(raw, seed, out)
    table, key = sweep_target(base, param)
    if not values:
        raise ConfigError("sweep needs at least one value", ["--values: empty"])
    configs = []
    problems = []
    for v in values:
        r = copy.deepcopy(raw)
        r.setdefault(table, {})[key] = v
        try:
            configs.append(_validated(r, seed, out))
        except ConfigError as exc:
            problems.extend(f"value {v!r}: {p}" for p in exc.problems)
    if problems:
        raise ConfigError("invalid sweep values:\n  " + "\n  ".join(problems), problems)

    run_dir = new_run_dir(base["output_dir"], base["experiment"], base["seed"])
    runs = []
    for i, (v, cfg) in enumerate(zip(values, configs)):
        sub = run_dir / f"{i:02d}-{param}-{v}"
        sub.mkdir()
        rep = execute(cfg, sub, strict)
        runs.append({"value": v, "status": rep["status"], "sweep_metric": rep.get("sweep_metric"), "dir": sub.name})

    checks = [Check(f"run[{r['value']}]", 0.0 if r["status"] == "pass" else 1.0, 0.0) for r in runs]
    metrics = [r["sweep_metric"] for r in runs]
    aggregate: dict[str, Any] = {
        "experiment": base["experiment"],
        "parameter": param,
        "values": list(values),
        "seed": base["seed"],
        "strict": strict,
        "versions": _versions(),
        "runs": runs,
        "slope": None,
        "monotone_convergence": None,
    }
    usable = all(m is not None and math.isfinite(m) for m in metrics)
    order = SWEEP_ORDERS.get((base["experiment"], param))
    if order is not None and usable and len(values) >= 2 and all(m > 0 for m in metrics):
        slope = fit_slope([float(v) for v in values], metrics)
        aggregate["slope"] = slope
        aggregate["expected_order"] = order[0]
        checks.append(Check("slope_deviation", abs(slope - order[0]), order[1]))
    if usable and len(metrics) >= 3:
        diffs = np.abs(np.diff(metrics))
        slack = 1e-12 * max(1.0, float(np.max(np.abs(metrics))))
        aggregate["monotone_convergence"] = bool(np.all(diffs[1:] <= diffs[:-1] + slack))
    aggregate["invariants"] = [c.as_dict() for c in checks]
    aggregate["status"] = "pass" if all(c.passed for c in checks) else "fail"
    rows = [(r["value"], math.nan if r["sweep_metric"] is None else r["sweep_metric"]) for r in runs]
    write_csv(run_dir / "sweep.csv", [param, "metric"], rows)
    aggregate["artifacts"] = ["sweep.csv"]
    write_json(run_dir / "report.json", aggregate)
    return aggregate, run_dir


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--strict", action="store_true", help="turn boundary-mass warnings into errors")
    common.add_argument("--seed", type=_u64, default=None, help="override the config seed")
    common.add_argument("--out", default=None, help="override the output directory")

    p = argparse.ArgumentParser(prog="cyclicqm", description="Cyclic path-probability experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="run one experiment")
    r.add_argument("config")
    s = sub.add_parser("sweep", parents=[common], help="run one experiment over several parameter values")
    s.add_argument("config")
    s.add_argument("--param", required=True, help="epsilon, n_points, lambda or sigma")
    s.add_argument("--values", required=True, help="comma-separated list")
    v = sub.add_parser("validate", parents=[common], help="check a config without running it")
    v.add_argument("config")
    sub.add_parser("list", help="print the experiment names")
    return p


def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from exc
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _summary(report: dict) -> str:
    lines = [f"{report['experiment']}: {report['status'].upper()}"]
    for c in report.get("invariants", []):
        mark = "ok  " if c["passed"] else "FAIL"
        lines.append(f"  [{mark}] {c['name']} = {c['value']:.6g} ({c['comparison']} {c['threshold']:.3g})")
    if report.get("error"):
        lines.append(f"  error: {report['error']['type']}: {report['error']['message']}")
    if report.get("slope") is not None:
        lines.append(f"  fitted slope: {report['slope']:.4f}")
    return "\n".join(lines)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_CONFIG
    try:
        if args.command == "list":
            print("\n".join(EXPERIMENTS))
            return EXIT_PASS
        if args.command == "validate":
            cfg = parse_config(args.config, args.seed, args.out)
            print(f"valid {cfg['experiment']} config")
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return EXIT_PASS
        if args.command == "run":
            cfg = parse_config(args.config, args.seed, args.out)
            report, run_dir = run_experiment(cfg, args.strict)
        else:
            raw = load_raw(args.config)
            report, run_dir = sweep(raw, args.param, parse_values(args.values, args.param), args.strict, args.seed, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(_summary(report))
    print(f"report: {run_dir / 'report.json'}")
    return EXIT_PASS if report["status"] == "pass" else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
