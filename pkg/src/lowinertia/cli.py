"""Command line interface: ``lowinertia run`` and ``lowinertia list-cases``."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import runner


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lowinertia", description="Transient and small-signal power system simulation.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one or more cases")
    r.add_argument("cases", nargs="+", help="case file path or bundled case name")
    r.add_argument("--tspan", nargs=2, type=float, metavar=("T0", "T1"))
    r.add_argument("--dtmax", type=float)
    r.add_argument("--rtol", type=float)
    r.add_argument("--atol", type=float)
    r.add_argument("--method", choices=("bdf", "trapezoid"))
    r.add_argument("--small-signal", action="store_true", help="write eigenvalues.csv at the initial equilibrium")
    r.add_argument("--out", type=Path, help=f"output directory (default ${runner.OUT_ENV}/<case> or results/<case>)")
    r.add_argument("--jobs", type=int, default=1, help="run several cases concurrently")

    sub.add_parser("list-cases", help="print bundled case names")
    return p


def _run_one(args_tuple):
    case, out, kwargs = args_tuple
    return runner.run_case_safe(case, out_dir=out, **kwargs)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list-cases":
        for name in runner.bundled_cases():
            print(name)
        return 0

    kwargs = dict(tspan=tuple(args.tspan) if args.tspan else None, dtmax=args.dtmax, rtol=args.rtol,
                  atol=args.atol, method=args.method, small_signal=args.small_signal)
    jobs = []
    for case in args.cases:
        if args.out is None:
            out = None
        elif len(args.cases) == 1:
            out = args.out
        else:
            out = args.out / Path(case).stem
        jobs.append((case, out, kwargs))

    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]

    code = 0
    for res in results:
        if res.exit_code == 0:
            print(f"{res.case}: ok ({res.elapsed:.2f} s) -> {res.out_dir}")
        else:
            print(f"{res.case}: {res.category} failure: {res.message}", file=sys.stderr)
            code = max(code, res.exit_code)
    return code


if __name__ == "__main__":
    sys.exit(main())
