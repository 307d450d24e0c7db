"""Command-line entry point: ``domainuq {cbc,run,field-diag}``.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O failure,
4 numerical failure during an experiment.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from sympy import isprime

from . import harness
from .errors import ConfigError, DomainUQError, ThetaTooSmall
from .lattice import SUPPORTED_ALPHA, build_spod_params, cbc_construct, write_cbc_csv, write_generating_vector
from .random_field import FieldSpec, b_sequence, sigma_bounds
from .svgplot import write_loglog_svg

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("DOMAINUQ_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"DOMAINUQ_THREADS must be an integer, got {env!r}") from None
    return 1


def load_config(path) -> tuple[harness.ExperimentConfig, dict]:
    """Parse a JSON config; returns the experiment config and the output-name block."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    version = raw.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    output = raw.pop("output", {})
    if not isinstance(output, dict) or set(output) - {"csv", "svg"}:
        raise ConfigError("output may only contain 'csv' and 'svg' file names")
    try:
        config = harness.ExperimentConfig.from_dict(raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return config, output


def cmd_cbc(args) -> int:
    if not isprime(args.n):
        return _fail(EXIT_USAGE, "n must be prime")
    if args.s < 1:
        return _fail(EXIT_USAGE, "s must be >= 1")
    if args.alpha not in SUPPORTED_ALPHA:
        return _fail(EXIT_USAGE, f"alpha must be one of {SUPPORTED_ALPHA}")
    try:
        b = b_sequence(FieldSpec(args.theta, 1.0, args.s))
    except ThetaTooSmall as exc:
        return _fail(EXIT_USAGE, str(exc))
    params = build_spod_params(b, args.alpha, 2, args.sigma_min, args.rho, args.c_weights)
    rule = cbc_construct(args.n, args.s, params, method=args.method)
    try:
        write_generating_vector(args.out, rule, args.alpha)
        if args.csv:
            write_cbc_csv(args.csv, rule)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write output: {exc}")
    print(f"e2 = {rule.e2_history[-1]!r}")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        config, output = load_config(args.config)
        threads = _threads(args)
    except ConfigError as exc:
        return _fail(EXIT_USAGE, str(exc))
    out = Path(args.out)
    name = config.experiment.value.lower()
    csv_path = out / output.get("csv", f"{name}.csv")
    svg_path = out / output.get("svg", f"{name}.svg")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot create output directory: {exc}")
    try:
        report = harness.run_experiment(config, threads)
    except DomainUQError as exc:
        detail = ""
        if getattr(exc, "sample_index", None) is not None:
            detail = f" (sample {exc.sample_index}, y = {list(exc.y)})"
        return _fail(EXIT_NUMERIC, f"{type(exc).__name__}: {exc}{detail}")
    title = f"{config.experiment.value} theta={config.field.theta} s={config.field.s} m={config.mesh_m}"
    try:
        harness.write_report_csv(csv_path, report, config)
        write_loglog_svg(svg_path, report.axis_values, report.errors, report.axis_name, report.fitted_rate, title, report.expected_rate)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write results: {exc}")
    print(f"fitted_rate = {report.fitted_rate!r}")
    if report.flags:
        print(f"flags = {','.join(sorted(report.flags))}")
    return EXIT_OK


def cmd_field_diag(args) -> int:
    try:
        spec = FieldSpec(args.theta, args.c, args.s)
        b = b_sequence(spec)
    except ThetaTooSmall as exc:
        return _fail(EXIT_USAGE, f"{exc} (the zeta series for xi_b diverges)")
    except ValueError as exc:
        return _fail(EXIT_USAGE, str(exc))
    bounds = sigma_bounds(spec, grid_resolution=args.grid)
    for j, bj in enumerate(b.b[:5], start=1):
        print(f"b_{j} = {bj!r}")
    print(f"xi_b = {b.xi_b!r}")
    print(f"sigma_min ~ {bounds.sigma_min!r}")
    print(f"sigma_max ~ {bounds.sigma_max!r}")
    print(f"det J > 0 on grid: {'yes' if bounds.det_positive else 'NO'}")
    if bounds.near_degenerate:
        print("warning: sigma_min is close to zero; the map is nearly degenerate")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="domainuq", description="Lattice QMC for the Poisson problem on random domains.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cbc", help="construct a generating vector")
    p.add_argument("--n", type=int, required=True, help="number of points (prime)")
    p.add_argument("--s", type=int, required=True, help="dimension")
    p.add_argument("--theta", type=float, default=2.1, help="decay rate of the fluctuations")
    p.add_argument("--c-weights", type=float, default=1e-6, help="amplitude used when building the weights")
    p.add_argument("--alpha", type=int, default=2)
    p.add_argument("--sigma-min", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--method", choices=("fft", "naive"), default="fft")
    p.add_argument("--out", required=True, help="generating-vector file")
    p.add_argument("--csv", help="optional per-step CSV of (j, z_j, e2)")
    p.set_defaults(func=cmd_cbc)

    p = sub.add_parser("run", help="run an experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $DOMAINUQ_THREADS or 1)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("field-diag", help="print decay and Jacobian diagnostics of the field")
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--c", type=float, default=math.sqrt(1.5))
    p.add_argument("--s", type=int, default=100)
    p.add_argument("--grid", type=int, default=33)
    p.set_defaults(func=cmd_field_diag)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        return _fail(EXIT_USAGE, "--threads must be >= 1")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
