"""``josc-vec`` command line: run experiments, verify, generate scenarios.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 refused request.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ConfigError, OracleLimitError, ScenarioError
from .scenario import bundled_config, generate, has_instance, load_config, load_params, save_config

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_REFUSED = 0, 1, 2, 3


class UsageError(Exception):
    pass


def parse_seeds(text: str) -> tuple:
    """``"1..20"`` (inclusive), ``"3,5,8"`` or a single integer."""
    text = text.strip()
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise UsageError(f"empty seed range {text!r}")
            return tuple(range(lo, hi + 1))
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise UsageError(f"malformed seeds {text!r}; use e.g. 1..20 or 1,2,3") from None
    if not seeds:
        raise UsageError("no seeds given")
    if any(s < 0 for s in seeds):
        raise UsageError("seeds must be non-negative")
    return seeds


def parse_sweep(text: str):
    """``"name=start:stop:step"`` (stop included) or ``"name=v1,v2,..."``."""
    from .harness import SWEEP_VARIABLES

    if "=" not in text:
        raise UsageError(f"malformed sweep {text!r}; use name=start:stop:step")
    name, values = (s.strip() for s in text.split("=", 1))
    if name not in SWEEP_VARIABLES:
        raise UsageError(f"cannot sweep {name!r}; expected one of {', '.join(SWEEP_VARIABLES)}")
    kind = SWEEP_VARIABLES[name]
    try:
        if ":" in values:
            parts = values.split(":")
            if len(parts) != 3:
                raise ValueError
            start, stop, step = (kind(p) for p in parts)
            if step <= 0 or stop < start:
                raise UsageError(f"sweep range {values!r} is empty")
            out, k = [], 0
            while True:
                v = start + k * step
                if v > stop + (1e-9 * abs(step) if kind is float else 0):
                    break
                out.append(kind(v))
                k += 1
        else:
            out = [kind(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"malformed sweep values {values!r} for {name}") from None
    if not out:
        raise UsageError("sweep has no values")
    return name, tuple(out)


def _config_path(config) -> Path:
    path = Path(config) if config else bundled_config("default")
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    return path


def _workers(default=None) -> int:
    from .harness import worker_count

    try:
        return worker_count(default)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _params(config):
    return load_params(_config_path(config))


def cmd_run(args) -> int:
    from .harness import ExperimentSpec, run

    path = _config_path(args.config)
    params = load_params(path)
    algos = tuple(a.strip() for a in args.algos.split(",") if a.strip())
    sweep_var, sweep_values = parse_sweep(args.sweep) if args.sweep else (None, ())
    seeds = parse_seeds(args.seeds) if args.seeds else (params.seed,)
    # a config holding an explicit instance is used as is unless a sweep or seed list is given
    fixed = None
    if has_instance(path) and not args.sweep and not args.seeds:
        fixed = load_config(path)
    spec = ExperimentSpec(params, algos, sweep_var, sweep_values, seeds, Path(args.out),
                          timing=not args.no_timing, scenario=fixed)
    try:
        spec.validate()
    except (ValueError, ScenarioError) as exc:
        raise UsageError(str(exc)) from None
    outcome = run(spec, _workers())
    print(f"wrote {len(outcome.rows)} rows to {Path(args.out) / 'results.csv'}")
    if outcome.refused:
        print(outcome.refused, file=sys.stderr)
        return EXIT_REFUSED
    return EXIT_OK


def cmd_verify(args) -> int:
    from .acceptance import REPORT_HEADER, format_row, run_suite

    workers = _workers(1)
    print(REPORT_HEADER, flush=True)
    results = run_suite(args.suite, workers, report=lambda r: print(format_row(r), flush=True))
    failed = [r.key for r in results if not r.passed]
    print(f"summary\t{len(results) - len(failed)}/{len(results)} passed"
          + (f"\tfailed={','.join(failed)}" if failed else ""))
    return EXIT_OK if not failed else EXIT_RUNTIME


def cmd_gen(args) -> int:
    params = _params(args.config)
    scn = generate(args.seed, params)
    save_config(scn, args.out)
    print(f"wrote scenario (seed {args.seed}, N={scn.num_vehicles}, M={scn.num_rsus}) to {args.out}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="josc-vec", description="Joint offloading and resource allocation experiments.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("run", help="run seeded experiments and write CSV files")
    p.add_argument("--config", help="scenario config (default: bundled default.cfg)")
    p.add_argument("--algos", default="josc,gs,ra", help="comma list of josc, gs, ra, oracle")
    p.add_argument("--sweep", help="e.g. num_vehicles=10:70:10, bandwidth_hz=1e6,2e6, rho=1:2:0.5")
    p.add_argument("--seeds", help="e.g. 1..20 or 1,2,3 (default: the config's seed)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-timing", action="store_true",
                   help="write wall_ms as 0 so repeated runs give byte-identical CSV files")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="run the acceptance checks")
    p.add_argument("--suite", required=True, choices=("core", "all"))
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen", help="generate a scenario and save it as a config file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="base parameters (default: bundled default.cfg)")
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("a command is required: run, verify or gen")
        return args.func(args)
    except UsageError as exc:
        print(f"josc-vec: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"josc-vec: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OracleLimitError as exc:
        print(f"josc-vec: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"josc-vec: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
