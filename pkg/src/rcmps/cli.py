"""Command-line interface: solve, sweep, check, export.

Exit codes: 0 success, 1 invalid configuration, 2 numerical failure,
3 check-suite failure.
"""

from __future__ import annotations

import argparse
import sys

from .app import (
    ConfigError,
    NUMERICAL_ERRORS,
    export_records,
    load_config,
    load_record,
    load_records,
    run_sweep,
    solve_phi4,
)
from .optimizer import Numerics, OptimizerConfig


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcmps",
        description="Variational RCMPS ground states of the phi^4 model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="optimize a single (D, g) cell")
    solve.add_argument("--dim", type=int, required=True)
    solve.add_argument("--coupling", type=float, required=True)
    solve.add_argument("--mass", type=float, default=1.0)
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--warm-start", metavar="FILE", help="record to warm start from")
    solve.add_argument("--out", metavar="DIR", help="directory for the run record")
    solve.add_argument("--config", metavar="FILE", help="optimizer/numerics overrides")

    sweep = sub.add_parser("sweep", help="run a coupling/dimension sweep")
    sweep.add_argument("--config", metavar="FILE", required=True)
    sweep.add_argument("--out", metavar="DIR")
    sweep.add_argument("--workers", type=int, default=1,
                       help="accepted for compatibility; cells run sequentially")

    check = sub.add_parser("check", help="run the oracle/invariant suite")
    check.add_argument("--level", choices=("quick", "full"), default="quick")

    export = sub.add_parser("export", help="export run records")
    export.add_argument("--format", choices=("csv", "json"), required=True)
    export.add_argument("--in", dest="in_dir", metavar="DIR", required=True)
    export.add_argument("--out", metavar="PATH", required=True)
    return parser


def _cmd_solve(args) -> int:
    cfg = OptimizerConfig(seed=args.seed)
    numerics = Numerics()
    if args.config:
        _, cfg, numerics = load_config(args.config)
        cfg = type(cfg)(**{**cfg.__dict__, "seed": args.seed})
    init = None
    if args.warm_start:
        from .optimizer import embed_state

        rec = load_record(args.warm_start)
        init = embed_state(rec.state(), args.dim, cfg)
    record = solve_phi4(
        args.dim, args.mass, args.coupling, cfg, numerics,
        init_state=init, out_dir=args.out,
    )
    if record.status != "ok":
        print(f"FAILED: {record.status}: {record.termination}", file=sys.stderr)
        return 2
    obs = record.observables
    print(
        f"D={record.D} g={record.g:g} m={record.m:g} seed={record.seed}: "
        f"energy={record.energy:.10f} kinetic={obs.kinetic_part:.10f} "
        f"phi={obs.phi_moments[0]:+.6f} phi2={obs.phi_moments[1]:.6f} "
        f"iters={record.iterations} ({record.termination})"
    )
    return 0


def _cmd_sweep(args) -> int:
    spec, cfg, numerics = load_config(args.config)

    def progress(rec):
        print(
            f"  D={rec.D} g={rec.g:g} seed={rec.seed}: "
            + (f"E={rec.energy:.8f}" if rec.status == "ok" else rec.status),
            flush=True,
        )

    records = run_sweep(spec, cfg, numerics, out_dir=args.out, progress=progress)
    failed = [r for r in records if r.status != "ok"]
    print(f"{len(records)} cells, {len(failed)} failed")
    if failed and len(failed) == len(records):
        return 2
    return 0


def _cmd_check(args) -> int:
    from .oracle import run_checks

    reports = run_checks(args.level)
    bad = 0
    for rep in reports:
        print(rep.line())
        bad += not rep.passed
    print(f"{len(reports) - bad}/{len(reports)} checks passed")
    return 3 if bad else 0


def _cmd_export(args) -> int:
    records = load_records(args.in_dir)
    files = export_records(records, args.format, args.out)
    for f in files:
        print(f)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "solve": _cmd_solve,
        "sweep": _cmd_sweep,
        "check": _cmd_check,
        "export": _cmd_export,
    }[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
