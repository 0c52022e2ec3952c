"""``oomsvd`` command line: ``gen``, ``decompose`` and ``bench``.

Exit codes: 0 success, 2 configuration or input error, 3 capacity error
(including degree-2 inputs), 4 numeric error, 1 anything else.  Failures
print one JSON object ``{"error": <category>, "message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import io as mio
from .errors import CapacityError, ConfigError, DegenerateInputError, NumericError, OomSvdError, ShapeError
from .metrics import RunMetrics, write_csv
from .power import PATHS
from .solver import truncated_svd

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_NUMERIC = 4


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, CapacityError):
        return EXIT_CAPACITY
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (ConfigError, ShapeError, DegenerateInputError, OSError)):
        return EXIT_CONFIG
    return EXIT_FAILURE


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def _input_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="dense .bin or Matrix Market file")
    p.add_argument("--gen", choices=("dense", "sparse"),
                   help="generate the input instead of reading --input")
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--cols", type=int, default=48)
    p.add_argument("--density", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)


def _solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rank", "-k", dest="k", type=int, default=-1)
    p.add_argument("--eps", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--fixed-iters", type=int, default=None,
                   help="run exactly this many power steps per component")
    p.add_argument("--path", choices=PATHS, default="auto")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--orientation", choices=("orthogonal", "collinear"), default="orthogonal")
    p.add_argument("--device-budget-bytes", type=int, default=None)
    p.add_argument("--transfer-cost-ns-per-byte", type=float, default=0.0)
    p.add_argument("--host-dir", default=None, help="back the host tier with files here")
    p.add_argument("--out-dir", default=".")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oomsvd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a seeded random matrix")
    g.add_argument("--gen", dest="kind", choices=("dense", "sparse"), default="dense")
    g.add_argument("--rows", type=int, required=True)
    g.add_argument("--cols", type=int, required=True)
    g.add_argument("--density", type=float, default=0.01)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output file")

    d = sub.add_parser("decompose", help="truncated SVD of one input")
    _input_args(d)
    _solver_args(d)
    d.add_argument("--batches", type=int, default=1)
    d.add_argument("--queue-size", type=int, default=1)
    d.add_argument("--metrics", choices=("json", "csv"), default="json")

    b = sub.add_parser("bench", help="sweep batch counts and queue sizes")
    _input_args(b)
    _solver_args(b)
    b.add_argument("--batches", type=_int_list, default=[2, 4, 8, 16])
    b.add_argument("--queue-size", type=_int_list, default=[1, 2, 4, 8])
    b.add_argument("--csv", default=None, help="CSV path (default: <out-dir>/bench.csv)")
    return parser


def _load_input(args):
    if args.gen:
        return mio.generate(args.rows, args.cols, args.gen, args.density, args.seed)
    if not args.input:
        raise ConfigError("either --input or --gen is required")
    return mio.read_matrix(args.input)


def _run(a, args, n_b, q_s):
    return truncated_svd(
        a,
        k=args.k,
        eps=args.eps,
        max_iter=args.max_iter,
        seed=args.seed,
        path=args.path,
        fixed_iters=args.fixed_iters,
        workers=args.workers,
        n_b=n_b,
        q_s=q_s,
        orientation=args.orientation,
        device_budget=args.device_budget_bytes,
        transfer_cost_ns_per_byte=args.transfer_cost_ns_per_byte,
        host_dir=args.host_dir,
    )


def cmd_gen(args) -> int:
    a = mio.generate(args.rows, args.cols, args.kind, args.density, args.seed)
    mio.write_matrix(args.out, a)
    return EXIT_OK


def cmd_decompose(args) -> int:
    a = _load_input(args)
    run = _run(a, args, args.batches, args.queue_size)
    mio.write_factors(args.out_dir, run.factors)
    metrics = RunMetrics.from_run(run, args.transfer_cost_ns_per_byte)
    if args.metrics == "json":
        with open(os.path.join(args.out_dir, "metrics.json"), "w") as fh:
            fh.write(metrics.to_json())
    else:
        with open(os.path.join(args.out_dir, "metrics.csv"), "w", newline="") as fh:
            write_csv(fh, [metrics])
    if run.report.notice:
        print(run.report.notice, file=sys.stderr)
    print(" ".join(f"{s:.12g}" for s in run.factors.sigma))
    return EXIT_OK


def cmd_bench(args) -> int:
    a = _load_input(args)
    rows = []
    for n_b in args.batches:
        for q_s in args.queue_size:
            if q_s > n_b:
                continue
            run = _run(a, args, n_b, q_s)
            rows.append(RunMetrics.from_run(run, args.transfer_cost_ns_per_byte))
            logging.getLogger(__name__).info("n_b=%d q_s=%d wall=%.3fs", n_b, q_s, run.wall_time_s)
    path = args.csv or os.path.join(args.out_dir, "bench.csv")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        write_csv(fh, rows)
    print(path)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "decompose": cmd_decompose, "bench": cmd_bench}


def main(argv=None) -> int:
    level = os.environ.get("OOMSVD_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (OomSvdError, OSError) as exc:
        category = exc.category if isinstance(exc, OomSvdError) else "io"
        print(json.dumps({"error": category, "message": str(exc)}), file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
