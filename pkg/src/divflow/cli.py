"""Command-line interface: ``divflow solve|verify|gen|bench|check-lemmas``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .driver import CheckTally, RunConfig, augmenting_paths, maxflow_ipm, reference_maxflow
from .errors import DivflowError, ParseError
from .graph import parse_dimacs, random_instance, to_dimacs
from .ipm import PAPER_DELTA_CONST

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_SOLVER = 3
EXIT_MISMATCH = 4

log = logging.getLogger("divflow")


def sweep_instance(seed: int):
    """Instance ``seed`` of the seeded corpus (n <= 30, m <= 80, U <= 10)."""
    n = 5 + seed % 26
    m = 10 + (7 * seed) % 71
    U = 1 + seed % 10
    return random_instance(seed, n, m, U, directed=seed % 2 == 0)


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--delta-profile", choices=["adaptive", "paper"], default="adaptive")
    p.add_argument("--eta", type=float, default=None, help="override the progress exponent")
    p.add_argument("--p", type=int, default=None, help="even smoothing exponent")
    p.add_argument("--delta-const", type=float, default=PAPER_DELTA_CONST,
                   help="step-size constant of the fixed 'paper' profile")
    p.add_argument("--center-tol", type=float, default=1e-10)
    p.add_argument("--step-tol", type=float, default=1e-13)
    p.add_argument("--check-level", choices=["off", "assert", "record"], default="record")
    p.add_argument("--solver", choices=["newton", "refinement"], default="newton")
    p.add_argument("--max-steps", type=int, default=10_000_000)


def _config(args, **extra) -> RunConfig:
    return RunConfig(delta_profile=args.delta_profile, eta=args.eta, p=args.p,
                     delta_const=args.delta_const, center_tol=args.center_tol,
                     step_tol=args.step_tol, check_level=args.check_level,
                     solver=args.solver, max_steps=args.max_steps, **extra)


def _read_instance(path: str):
    if path == "-":
        text = sys.stdin.read()
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ParseError(f"cannot read {path}: {exc}") from exc
    return parse_dimacs(text)


def _instance_from_args(args):
    if getattr(args, "input", None):
        return _read_instance(args.input)
    if args.n is None or args.m is None or args.U is None:
        raise ParseError("give an input file or all of --n, --m, --U")
    return random_instance(args.seed, args.n, args.m, args.U, directed=not args.undirected)


def _fmt(x) -> str:
    return str(int(round(x))) if float(x).is_integer() else repr(float(x))


def cmd_solve(args) -> int:
    G, a, b = _read_instance(args.input)
    if args.mode == "reference":
        value, flow = reference_maxflow(G, a, b)
        print(_fmt(value))
        if args.print_flow:
            for e, x in enumerate(flow):
                print(f"f {e + 1} {_fmt(x)}")
        return EXIT_OK
    trace = open(args.trace, "w", encoding="utf-8") if args.trace else None
    try:
        verify = {"auto": None, "on": True, "off": False}[args.verify]
        report = maxflow_ipm(G, a, b, _config(args, verify=verify, trace=trace))
    finally:
        if trace is not None:
            trace.close()
    if args.json:
        print(report.to_json(timings=args.timings))
    else:
        print(report.value)
    if args.print_flow:
        # the solver works on a reduced graph; recover an input-graph flow of the same value
        flow, _ = augmenting_paths(G, np.zeros(G.m), a, b)
        for e, x in enumerate(flow):
            print(f"f {e + 1} {_fmt(x)}")
    return EXIT_OK


def cmd_verify(args) -> int:
    G, a, b = _instance_from_args(args)
    ref, _ = reference_maxflow(G, a, b)
    report = maxflow_ipm(G, a, b, _config(args, verify=False))
    match = int(round(ref)) == report.value
    print(f"ipm {report.value} reference {_fmt(ref)} {'match' if match else 'MISMATCH'}")
    return EXIT_OK if match else EXIT_MISMATCH


def cmd_gen(args) -> int:
    G, a, b = random_instance(args.seed, args.n, args.m, args.U, directed=not args.undirected)
    sys.stdout.write(to_dimacs(G, a, b))
    return EXIT_OK


def _bench_one(job):
    n, m, U, seed, cfg = job
    G, a, b = random_instance(seed, n, m, U)
    t0 = time.perf_counter()
    rep = maxflow_ipm(G, a, b, cfg)
    t1 = time.perf_counter()
    ref, _ = reference_maxflow(G, a, b)
    t2 = time.perf_counter()
    return n, m, U, rep.value, int(round(ref)), rep.steps, rep.probes, t1 - t0, t2 - t1


def _map(fn, jobs, workers):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def cmd_bench(args) -> int:
    cfg = _config(args, verify=False)
    ladder = [(10, 20), (20, 40), (30, 80), (60, 160), (120, 320)][: args.sizes]
    jobs = [(n, m, args.U, args.seed, cfg) for n, m in ladder]
    print(f"{'n':>5} {'m':>5} {'U':>4} {'value':>6} {'steps':>6} {'probes':>6} {'ipm_s':>8} {'ref_s':>8}")
    status = EXIT_OK
    for n, m, U, val, ref, steps, probes, t_ipm, t_ref in _map(_bench_one, jobs, args.jobs):
        print(f"{n:>5} {m:>5} {U:>4} {val:>6} {steps:>6} {probes:>6} {t_ipm:>8.3f} {t_ref:>8.3f}")
        if val != ref:
            status = EXIT_MISMATCH
    return status


def _lemma_run(job):
    seed, cfg = job
    G, a, b = sweep_instance(seed)
    return maxflow_ipm(G, a, b, cfg).checks


def cmd_check_lemmas(args) -> int:
    cfg = _config(args, verify=True)
    totals: dict[str, CheckTally] = {}
    for checks in _map(_lemma_run, [(s, cfg) for s in range(args.seed, args.seed + args.count)], args.jobs):
        for name, rec in checks.items():
            tally = totals.setdefault(name, CheckTally())
            tally.count += rec["count"]
            tally.violations += rec["violations"]
            if rec["min_margin"] is not None:
                tally.min_margin = min(tally.min_margin, rec["min_margin"])
    print(f"{'check':<18} {'count':>7} {'violations':>10} {'min_margin':>12}")
    for name in sorted(totals):
        t = totals[name]
        margin = f"{t.min_margin:.4g}" if np.isfinite(t.min_margin) else "-"
        print(f"{name:<18} {t.count:>7} {t.violations:>10} {margin:>12}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="divflow", description="Exact maximum flow via a weighted-barrier interior point method.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a DIMACS max-flow instance")
    p.add_argument("input", help="DIMACS file or - for stdin")
    p.add_argument("--mode", choices=["ipm", "reference"], default="ipm")
    p.add_argument("--json", action="store_true", help="print the run report as JSON")
    p.add_argument("--timings", action="store_true", help="include wall-clock phase timings in JSON")
    p.add_argument("--print-flow", action="store_true")
    p.add_argument("--trace", default=None, help="write per-step diagnostics as JSON lines")
    p.add_argument("--verify", choices=["auto", "on", "off"], default="auto")
    _add_config_flags(p)
    p.set_defaults(func=cmd_solve)

    for name, func, hlp in (("verify", cmd_verify, "compare the IPM against Dinic"),
                            ("gen", cmd_gen, "emit a seeded random instance as DIMACS")):
        p = sub.add_parser(name, help=hlp)
        if name == "verify":
            p.add_argument("input", nargs="?", default=None)
            _add_config_flags(p)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--n", type=int, required=name == "gen")
        p.add_argument("--m", type=int, required=name == "gen")
        p.add_argument("--U", type=int, required=name == "gen")
        p.add_argument("--undirected", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("bench", help="timing table over a size ladder")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--U", type=int, default=10)
    p.add_argument("--sizes", type=int, default=3, choices=range(1, 6))
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("check-lemmas", help="run the per-step invariant suite on a seeded corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_check_lemmas)
    return parser


def run(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DIVFLOW_LOG_LEVEL", "WARNING").upper())
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except DivflowError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
