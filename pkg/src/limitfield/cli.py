"""
Command-line front end.

    limitfield smooth FAMILY --t-range=-2:2:401 --a 1,0.1
    limitfield estimate FAMILY --at 0
    limitfield solve FAMILY --x0 3
    limitfield bench [--filter NAME]

FAMILY is a builtin name (``hat``, ``chen``, ``sin``, ...), a path to a JSON
family file, or an inline JSON object. Settings are layered: defaults, then a
TOML file given with ``--config``, then command-line flags.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .bench import config_for, probes_for, run_suite
from .expr import SmoothingFamily, builtin_family
from .field import EstimatorConfig, estimate_limit_field
from .solver import InnerMethod, Schedule, Status, certify_final, smoothing_solve

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

SCHEMA = "limitfield/v1"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SOLVER = 3
EXIT_BENCH = 4

DEFAULT_SEED = 0

log = logging.getLogger("limitfield")


class UsageError(Exception):
    pass


def load_family(source: str) -> SmoothingFamily:
    """Builtin name, JSON file path, or inline JSON object."""
    text = None
    if source.lstrip().startswith("{"):
        text = source
    elif os.path.exists(source):
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    if text is None:
        try:
            return builtin_family(source)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"family parse error: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return SmoothingFamily.from_json(data)
    except (ValueError, TypeError, KeyError) as exc:
        raise UsageError(f"family parse error: {exc}") from None


def _floats(text, what):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"could not parse {what} {text!r}") from None


def _load_config(path):
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"config error: {exc}") from None


def _estimator_config(args, file_cfg):
    data = dict(file_cfg.get("estimator", {}))
    for key in ("levels", "replicas", "sigma", "a0", "merge_radius", "blow_up_threshold", "value_tol"):
        v = getattr(args, key, None)
        if v is not None:
            data[key] = v
    data["seed"] = args.seed if args.seed is not None else file_cfg.get("seed", DEFAULT_SEED)
    try:
        return EstimatorConfig.from_mapping(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config error: {exc}") from None


def _schedule(args, file_cfg):
    data = dict(file_cfg.get("schedule", {}))
    for key in ("a0", "eps0", "gamma_a", "gamma_eps", "max_outer", "a_min", "eps_min"):
        v = getattr(args, f"sch_{key}", None)
        if v is not None:
            data[key] = v
    try:
        return Schedule.from_mapping(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config error: {exc}") from None


def _family_cfg(fam, cfg, args):
    """Builtin per-family overrides apply unless the user set the same field."""
    if fam.name is None:
        return cfg
    base = config_for(fam.name, EstimatorConfig())
    changes = {k: getattr(base, k) for k in ("levels",)
               if getattr(args, k, None) is None and getattr(base, k) != getattr(EstimatorConfig(), k)}
    return replace(cfg, **changes) if changes else cfg


def _envelope(command, result, started):
    return {
        "schema": SCHEMA,
        "command": command,
        "result": result,
        # excluded from reproducibility comparisons
        "metadata": {
            "version": __version__,
            "generated_at": started.isoformat(timespec="seconds"),
            "runtime_ms": round((_dt.datetime.now(_dt.timezone.utc) - started).total_seconds() * 1e3, 3),
        },
    }


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _rows_to_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def cmd_smooth(args, file_cfg):
    fam = load_family(args.family)
    if fam.dimension != 1:
        raise UsageError("smooth works on one-dimensional families")
    try:
        lo, hi, n = args.t_range.split(":")
        ts = np.linspace(float(lo), float(hi), int(n))
    except ValueError:
        raise UsageError(f"could not parse --t-range {args.t_range!r} (expected lo:hi:n)") from None
    a_list = _floats(args.a, "--a")
    rows = []
    for a in a_list:
        if not 0 < a <= fam.a_max:
            raise UsageError(f"a={a} outside (0, {fam.a_max}]")
        res = fam.evaluate(ts[:, None], a, grad=True)
        for t, v, g, ok in zip(ts, res.values, res.grads[:, 0], res.ok):
            rows.append([repr(float(t)), repr(float(a)), repr(float(v)) if ok else "nan",
                         repr(float(g)) if ok else "nan"])
    if args.format == "csv":
        return _rows_to_csv(["t", "a", "value", "deriv"], rows), EXIT_OK
    result = {"family": fam.name, "rows": [dict(zip(("t", "a", "value", "deriv"), r)) for r in rows]}
    return result, EXIT_OK


def cmd_estimate(args, file_cfg):
    fam = load_family(args.family)
    cfg = _family_cfg(fam, _estimator_config(args, file_cfg), args)
    x = _floats(args.at, "--at")
    if len(x) != fam.dimension:
        raise UsageError(f"--at needs {fam.dimension} coordinates")
    est = estimate_limit_field(fam, None, x, cfg, probes_for(fam.name), keep_samples=args.format == "csv")
    if args.format == "csv":
        return est.samples_csv(), EXIT_OK
    out = est.to_json()
    out["family"] = fam.name
    return out, EXIT_OK


def cmd_solve(args, file_cfg):
    fam = load_family(args.family)
    sch = _schedule(args, file_cfg)
    cfg = _family_cfg(fam, _estimator_config(args, file_cfg), args)
    x0 = _floats(args.x0, "--x0")
    if len(x0) != fam.dimension:
        raise UsageError(f"--x0 needs {fam.dimension} coordinates")
    try:
        trace = smoothing_solve(fam, x0, sch, InnerMethod(args.inner))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    code = EXIT_OK if trace.status is Status.CONVERGED else EXIT_SOLVER
    if args.format == "csv":
        return trace.to_csv(), code
    report = certify_final(trace, fam, None, cfg, tol=args.cert_tol, probes=probes_for(fam.name))
    out = {"family": fam.name, "trace": trace.to_json(), "schedule": sch.__dict__,
           "certificate": report.to_json(), "critical": report.critical, "warnings": report.warnings}
    return out, code


def _parse_tol_overrides(items):
    out = {}
    for item in items or []:
        try:
            key, value = item.split("=")
            case, witness = key.split(".", 1)
            out[(case, witness)] = float(value)
        except ValueError:
            raise UsageError(f"bad --tol override {item!r} (expected CASE.WITNESS=VALUE)") from None
    return out


def cmd_bench(args, file_cfg):
    from .bench import shipped_cases

    cfg = _estimator_config(args, file_cfg)
    overrides = _parse_tol_overrides(args.tol)
    cases = shipped_cases()
    for case in cases:
        for w in case.witnesses:
            if (case.name, w.key) in overrides:
                w.tol = overrides[(case.name, w.key)]
    reports = run_suite(args.filter, cfg, args.workers, cases)
    ok = all(r["status"] == "pass" for r in reports)
    code = EXIT_OK if ok else EXIT_BENCH
    if args.format == "csv":
        rows = [[r["case"], r["status"], r["metadata"]["runtime_ms"]] for r in reports]
        return _rows_to_csv(["case", "status", "runtime_ms"], rows), code
    return {"cases": reports, "passed": sum(r["status"] == "pass" for r in reports),
            "total": len(reports), "all_passed": ok}, code


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"RNG seed (default {DEFAULT_SEED})")
    common.add_argument("--config", help="TOML file with [estimator] and [schedule] tables")
    common.add_argument("--format", choices=("json", "csv"), default=None)
    common.add_argument("--output", "-o", help="write to this file instead of stdout")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    common.add_argument("-v", "--verbose", action="store_true")

    est = argparse.ArgumentParser(add_help=False)
    est.add_argument("--levels", type=int)
    est.add_argument("--replicas", type=int)
    est.add_argument("--sigma", type=float)
    est.add_argument("--a0", type=float)
    est.add_argument("--merge-radius", dest="merge_radius", type=float)
    est.add_argument("--blow-up-threshold", dest="blow_up_threshold", type=float)
    est.add_argument("--value-tol", dest="value_tol", type=float)

    p = argparse.ArgumentParser(prog="limitfield", description="Smoothing methods and limit-field estimation.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("smooth", parents=[common], help="grid dump of f_a and its derivative")
    s.add_argument("family")
    s.add_argument("--t-range", default="-2:2:401", help="lo:hi:n")
    s.add_argument("--a", default="1,0.1", help="comma-separated parameter values")
    s.set_defaults(func=cmd_smooth, default_format="csv")

    e = sub.add_parser("estimate", parents=[common, est], help="estimate the limit field at a point")
    e.add_argument("family")
    e.add_argument("--at", required=True, help="comma-separated coordinates")
    e.set_defaults(func=cmd_estimate, default_format="json")

    v = sub.add_parser("solve", parents=[common, est], help="run the smoothing method and certify the result")
    v.add_argument("family")
    v.add_argument("--x0", required=True, help="comma-separated start point")
    v.add_argument("--inner", choices=[m.value for m in InnerMethod], default=InnerMethod.DESCENT_ARMIJO.value)
    v.add_argument("--max-outer", dest="sch_max_outer", type=int)
    v.add_argument("--eps0", dest="sch_eps0", type=float)
    v.add_argument("--gamma-a", dest="sch_gamma_a", type=float)
    v.add_argument("--gamma-eps", dest="sch_gamma_eps", type=float)
    v.add_argument("--a-min", dest="sch_a_min", type=float)
    v.add_argument("--eps-min", dest="sch_eps_min", type=float)
    v.add_argument("--schedule-a0", dest="sch_a0", type=float)
    v.add_argument("--cert-tol", type=float, default=1e-3)
    v.set_defaults(func=cmd_solve, default_format="json")

    b = sub.add_parser("bench", parents=[common], help="run the reproduction suite")
    b.add_argument("--filter", default=None, help="substring of case names")
    b.add_argument("--tol", action="append", help="override a tolerance: CASE.WITNESS=VALUE")
    b.set_defaults(func=cmd_bench, default_format="json")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.format = args.format or args.default_format
    started = _dt.datetime.now(_dt.timezone.utc)
    try:
        file_cfg = _load_config(args.config)
        result, code = args.func(args, file_cfg)
    except (UsageError, ValueError) as exc:
        # library ValueErrors here come from bad user input (ranges, dimensions)
        print(f"limitfield: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if isinstance(result, str):
        text = result
    else:
        text = _dump_json(_envelope(args.command, result, started))
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
