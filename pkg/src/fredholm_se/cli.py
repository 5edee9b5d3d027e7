"""Command-line entry point ``fredholm-se``.

Exit codes: 0 success, 2 configuration error, 3 numeric or divergence
failure in a single-run command (sweeps record NA rows instead), 4 I/O or
file-layout error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness
from .errors import ConfigurationError, NumericError, ParseError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _emit_json(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        harness.write_atomic(out, text)


def cmd_estimate(args) -> int:
    cfg = harness.load_config(args.config)
    _emit_json(harness.estimate(cfg), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = harness.load_config(args.config)
    out = args.out if args.out is not None else cfg.output
    if out is None:
        raise ConfigurationError("give --out or an 'output' entry in the config", key="output")
    rows = harness.simulate(cfg, out)
    print(f"wrote {len(rows)} rows to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    text, summary = harness.report(args.rows)
    sys.stdout.write(text)
    if args.json is not None:
        _emit_json(summary, args.json)
    return EXIT_OK


def cmd_trace(args) -> int:
    cfg = harness.load_config(args.config)
    text, _ = harness.trace(cfg, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_solve(args) -> int:
    result = harness.solve_analytic(args.problem, args.solver, nodes=args.nodes, seed=args.seed, steps=args.steps)
    _emit_json(result, args.out)
    return EXIT_OK


def cmd_generate(args) -> int:
    bundle = harness.get_bundle(args.example)
    if bundle.data_type is None:
        raise ConfigurationError(f"the {args.example} example has no dataset", key="example")
    n = bundle.default_n if args.n is None else args.n
    data = bundle.generate(n, args.seed)
    if not args.with_truth and hasattr(data, "estimator_view"):
        data = data.estimator_view()
    harness.write_atomic(args.out, data.to_csv())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fredholm-se", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="fit one dataset and print a JSON report")
    p.add_argument("--config", required=True, help="JSON file or inline JSON text")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="run replications and write the rows CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="summarize a rows CSV")
    p.add_argument("rows")
    p.add_argument("--json", help="also write the summary as JSON")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("trace", help="per-iteration trace of one neural fit")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("solve", help="solve a closed-form validation problem")
    p.add_argument("--problem", required=True, help="analytic:<degenerate|zero_kernel|tikhonov>")
    p.add_argument("--solver", required=True, help="neural or poly:<degree>")
    p.add_argument("--nodes", type=int, default=200, help="Gauss-Legendre nodes per grid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, help="Adam steps for the neural solver")
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("generate", help="write a simulated dataset as CSV")
    p.add_argument("--example", required=True, choices=["mnar", "sensitivity", "shift"])
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--with-truth", action="store_true", help="keep the _truth_ columns")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
