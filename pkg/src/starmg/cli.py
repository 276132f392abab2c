"""Command-line entry point: ``starmg solve | bench-inverse | sweep``.

Exit codes: 0 success, 1 configuration error, 2 a case did not converge.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import asdict

from threadpoolctl import threadpool_limits

from .bench import (
    INVERSE_FIELDS,
    RECORD_FIELDS,
    SUITES,
    CaseConfig,
    ConfigError,
    CsvLog,
    bench_inverse,
    run_case,
    sweep,
    write_history,
)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


def _set_threads(n: int):
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    threadpool_limits(n)


def _cmd_solve(args) -> int:
    cfg = CaseConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    log = CsvLog(args.out, RECORD_FIELDS)
    rec, rep, _ = run_case(cfg, args.repeats)
    log.write(asdict(rec))
    if args.history:
        write_history(os.path.dirname(os.path.abspath(args.out)), "solve", cfg, rep)
    print(f"{rec.solver} p={rec.p} n10={rec.n10} rho={rec.rho:.3e} converged={rec.converged}")
    return EXIT_OK if rec.converged else EXIT_DIVERGED


def _cmd_bench_inverse(args) -> int:
    if args.p_min < 2 or args.p_max < args.p_min:
        raise ConfigError("need 2 <= p-min <= p-max")
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    ps = []
    p = args.p_min
    while p <= args.p_max:
        ps.append(p)
        p = p * 2 if args.doubling else p + 1
    log = CsvLog(args.out, INVERSE_FIELDS)
    try:
        rows = bench_inverse(ps, args.stars, variants, args.repeats, args.mmc_max_p,
                             args.seed or 0, log=log)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for r in rows:
        if r.get("skipped"):
            continue
        print(f"{r['variant']:>4} p={r['p']:>3} {r['t_per_dof_ns']:.2f} ns/dof")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    def progress(rec):
        print(f"{rec.solver:>5} p={rec.p:>2} k={rec.k0} alpha={rec.alpha} AR={rec.aspect} "
              f"n10={rec.n10} converged={rec.converged}", flush=True)

    path, recs = sweep(args.suite, args.out_dir, args.full, args.seed if args.seed is not None else 1,
                       args.repeats, args.history, progress)
    print(f"wrote {path}")
    return EXIT_OK if all(r.converged for r in recs) else EXIT_DIVERGED


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")

    ap = argparse.ArgumentParser(prog="starmg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="run one case from a YAML config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="CSV output path")
    s.add_argument("--repeats", type=int, default=1, help="timed repetitions (first is warm-up)")
    s.add_argument("--history", action="store_true", help="dump the residual history as JSON")
    s.set_defaults(func=_cmd_solve)

    b = sub.add_parser("bench-inverse", parents=[common], help="time the star inverses")
    b.add_argument("--p-min", type=int, default=2)
    b.add_argument("--p-max", type=int, default=16)
    b.add_argument("--doubling", action="store_true", help="step p by doubling instead of +1")
    b.add_argument("--stars", type=int, default=500)
    b.add_argument("--repeats", type=int, default=101)
    b.add_argument("--variants", default="tpc,tpf,mmc")
    b.add_argument("--mmc-max-p", type=int, default=12, help="skip mmc above this degree")
    b.add_argument("--out", required=True)
    b.set_defaults(func=_cmd_bench_inverse)

    w = sub.add_parser("sweep", parents=[common], help="run a parameter suite")
    w.add_argument("--suite", choices=SUITES, required=True)
    w.add_argument("--full", action="store_true", help="full parameter grid")
    w.add_argument("--out-dir", required=True)
    w.add_argument("--repeats", type=int, default=1)
    w.add_argument("--history", action="store_true")
    w.set_defaults(func=_cmd_sweep)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; 2 is reserved for divergence here
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        _set_threads(args.threads)
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
