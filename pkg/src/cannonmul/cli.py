"""Command-line surface: run, verify, bench, analyze.

Exit codes: 0 success, 2 configuration error (also used by argparse itself),
3 gang failure after all restarts, 4 result/oracle mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys

import numpy as np

from .analysis import fit_and_compare
from .driver import (
    RunConfig,
    RunReport,
    RepResult,
    generate_matrix,
    gathered_product,
    reports_to_csv,
    run_baseline_allgather,
    run_distributed,
)
from .errors import (
    AnalysisError,
    CannonError,
    ConfigError,
    ContractViolation,
    GangFailure,
    VerificationError,
)
from .tile import ElementType, oracle_multiply
from .transport import HostMap

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GANG = 3
EXIT_VERIFY = 4

# relative per-element tolerances, scaled by matrix order n
RTOL_F64 = 1e-12
RTOL_F32 = 1.2e-7

# default verification sweep: >=12 (n, q) float64 points spanning small,
# odd-ish, and large orders for every grid side, plus exact-integer spot checks
VERIFY_SWEEP_F64 = [
    (7, 1), (64, 1), (255, 1), (512, 1),
    (6, 2), (64, 2), (254, 2), (512, 2),
    (6, 3), (63, 3), (255, 3), (510, 3),
    (8, 4), (64, 4), (256, 4), (512, 4),
]
VERIFY_SWEEP_EXTRA = [
    (32, 2, ElementType.INT32),
    (36, 3, ElementType.INT32),
    (64, 2, ElementType.FLOAT32),
]


def _rtol_for(dtype: ElementType, n: int) -> float:
    if dtype is ElementType.FLOAT64:
        return RTOL_F64 * n
    if dtype is ElementType.FLOAT32:
        return RTOL_F32 * n
    return 0.0


def check_against_oracle(cfg: RunConfig):
    """Run one gathered product and compare elementwise against the oracle."""
    a = generate_matrix(cfg.n, cfg.dtype, cfg.seed)
    b = generate_matrix(cfg.n, cfg.dtype, cfg.seed + 1)
    expected = oracle_multiply(a, b)
    got = gathered_product(cfg)
    if cfg.dtype is ElementType.INT32:
        if not np.array_equal(got.array, expected.array):
            bad = int(np.count_nonzero(got.array != expected.array))
            raise VerificationError(
                f"n={cfg.n} q={cfg.q} i32: {bad} element(s) differ from oracle"
            )
        return
    rtol = _rtol_for(cfg.dtype, cfg.n)
    err = np.abs(got.array - expected.array)
    bound = rtol * np.abs(expected.array)
    if not np.all(err <= bound):
        worst = float(np.max(err / np.maximum(np.abs(expected.array), 1e-300)))
        raise VerificationError(
            f"n={cfg.n} q={cfg.q} {cfg.dtype.value}: worst relative error "
            f"{worst:.3e} exceeds {rtol:.3e}"
        )


def _load_hosts(path: str | None) -> HostMap | None:
    if path is None:
        return None
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read host map {path}: {e}") from e
    try:
        return HostMap.parse(text)
    except ContractViolation as e:
        raise ConfigError(f"{path}: {e}") from e


def _config_from(args, n: int | None = None, q: int | None = None) -> RunConfig:
    return RunConfig(
        n=n if n is not None else args.n,
        q=q if q is not None else args.grid,
        dtype=ElementType.parse(args.dtype),
        seed=args.seed,
        reps=getattr(args, "reps", 1),
        mode=args.mode,
        hosts=_load_hosts(getattr(args, "hosts", None)),
        corrupt=getattr(args, "inject_corruption", False),
    )


def _write(out_dir: str, name: str, text: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


def _report_stem(report: RunReport) -> str:
    return f"{report.impl}_n{report.n}_q{report.q}_{report.dtype}"


def _emit_report(report: RunReport, out_dir: str):
    jpath = _write(out_dir, f"report_{_report_stem(report)}.json", report.to_json() + "\n")
    cpath = _write(out_dir, f"report_{_report_stem(report)}.csv", reports_to_csv([report]))
    times = [r.dot_ms for r in report.reps]
    print(
        f"{report.impl}: n={report.n} q={report.q} dtype={report.dtype} "
        f"reps={len(report.reps)} median_dot_ms={statistics.median(times):.3f} "
        f"checksum={report.reps[0].checksum!r}"
    )
    print(f"wrote {jpath}")
    print(f"wrote {cpath}")


def cmd_run(args) -> int:
    cfg = _config_from(args)
    runner = run_distributed if args.impl == "cannon" else run_baseline_allgather
    report = runner(cfg)
    _emit_report(report, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.n is not None:
        points = [(args.n, args.grid, ElementType.parse(args.dtype))]
    else:
        points = [(n, q, ElementType.FLOAT64) for n, q in VERIFY_SWEEP_F64]
        points += VERIFY_SWEEP_EXTRA
    for n, q, dtype in points:
        cfg = RunConfig(
            n=n,
            q=q,
            dtype=dtype,
            seed=args.seed,
            reps=1,
            mode=args.mode,
            corrupt=args.inject_corruption,
        )
        check_against_oracle(cfg)
        print(f"verify ok: n={n} q={q} dtype={dtype.value}")
    print(f"verified {len(points)} point(s) against the oracle")
    return EXIT_OK


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated integers, got {text!r}") from None
    if not values:
        raise ConfigError(f"{flag} lists no values")
    return values


def cmd_bench(args) -> int:
    sizes = _parse_int_list(args.sizes, "--sizes")
    grids = _parse_int_list(args.grids, "--grids")
    dtype = ElementType.parse(args.dtype)

    # timing sweep over (n, q), both implementations
    time_rows = []
    for n in sizes:
        for q in grids:
            if n % q != 0:
                print(f"skip n={n} q={q}: n not divisible by q")
                continue
            pair = {}
            for impl, runner in (
                ("cannon", run_distributed),
                ("baseline", run_baseline_allgather),
            ):
                cfg = RunConfig(
                    n=n, q=q, dtype=dtype, seed=args.seed,
                    reps=args.reps, mode=args.mode,
                )
                report = runner(cfg)
                pair[impl] = statistics.median([r.dot_ms for r in report.reps])
            time_rows.append(
                {
                    "n": n,
                    "q": q,
                    "p": q * q,
                    "cannon_ms": round(pair["cannon"], 3),
                    "baseline_ms": round(pair["baseline"], 3),
                    "normalized_to_cannon": round(pair["baseline"] / pair["cannon"], 4),
                }
            )
    header = "n,q,p,cannon_ms,baseline_ms,normalized_to_cannon"
    lines = [header] + [
        f"{r['n']},{r['q']},{r['p']},{r['cannon_ms']},{r['baseline_ms']},{r['normalized_to_cannon']}"
        for r in time_rows
    ]
    times_csv = "\n".join(lines) + "\n"
    print(times_csv, end="")
    _write(args.out, "bench_times.csv", times_csv)

    # memory sweep: per-worker tile held fixed, grid side varies
    mem_reports = []
    for q in grids:
        cfg = RunConfig(
            n=args.tile * q, q=q, dtype=dtype, seed=args.seed,
            reps=max(1, min(args.reps, 3)), mode=args.mode,
        )
        mem_reports.append(run_distributed(cfg))
        mem_reports.append(run_baseline_allgather(cfg))
    if len(grids) >= 2:
        table = fit_and_compare(mem_reports)
        print(table.to_csv(), end="")
        _write(args.out, "bench_memory.csv", table.to_csv())
        _write(
            args.out,
            "bench_memory.json",
            json.dumps(table.to_json_series(), indent=2, sort_keys=True) + "\n",
        )
    else:
        print("memory table skipped: need at least two grid sides")
    return EXIT_OK


def report_from_dict(d: dict) -> RunReport:
    try:
        return RunReport(
            impl=d["impl"], n=d["n"], q=d["q"], p=d["p"],
            dtype=d["dtype"], seed=d["seed"], mode=d["mode"],
            reps=[
                RepResult(
                    rep=r["rep"],
                    dot_ms=r.get("dot_ms", 0.0),
                    checksum=r["checksum"],
                    attempts=r["attempts"],
                    workers=r.get("workers", []),
                )
                for r in d["reps"]
            ],
        )
    except (KeyError, TypeError) as e:
        raise ConfigError(f"not a run report: missing field {e}") from e


def cmd_analyze(args) -> int:
    reports = []
    for path in args.reports:
        try:
            with open(path, "r", encoding="utf-8") as f:
                reports.append(report_from_dict(json.load(f)))
        except OSError as e:
            raise ConfigError(f"cannot read {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from e
    table = fit_and_compare(reports)
    print(table.to_csv(), end="")
    for impl, stats in sorted(table.summary.items()):
        print(f"{impl}: {json.dumps(stats, sort_keys=True)}")
    _write(args.out, "analysis_memory.csv", table.to_csv())
    _write(
        args.out,
        "analysis_memory.json",
        json.dumps(table.to_json_series(), indent=2, sort_keys=True) + "\n",
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cannonmul",
        description="Distributed dense matrix multiply (Cannon's algorithm) "
        "over a TCP message-passing gang.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_reps: bool, reps_default: int = 10):
        p.add_argument("--dtype", choices=["f64", "f32", "i32"], default="f64")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--mode", choices=["threads", "processes"], default="threads")
        if with_reps:
            p.add_argument("--reps", type=int, default=reps_default,
                           help=f"repetitions per configuration (default {reps_default})")

    p_run = sub.add_parser("run", help="one timed configuration, report to disk")
    p_run.add_argument("--n", type=int, required=True, help="matrix order")
    p_run.add_argument("--grid", type=int, required=True, help="grid side q (p = q^2)")
    add_common(p_run, with_reps=True)
    p_run.add_argument("--hosts", help="host map file: one '<rank> <host>:<port>' per line")
    p_run.add_argument("--impl", choices=["cannon", "baseline"], default="cannon")
    p_run.add_argument("--out", default="runs", help="report directory (default ./runs)")
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser("verify", help="compare gathered products against the oracle")
    p_verify.add_argument("--n", type=int, help="single point: matrix order")
    p_verify.add_argument("--grid", type=int, default=2, help="single point: grid side")
    add_common(p_verify, with_reps=False)
    p_verify.add_argument("--inject-corruption", action="store_true",
                          help=argparse.SUPPRESS)  # test hook: force a mismatch
    p_verify.set_defaults(func=cmd_verify)

    p_bench = sub.add_parser("bench", help="sweep sizes/grids, emit timing + memory tables")
    p_bench.add_argument("--sizes", default="64,128", help="comma-separated matrix orders")
    p_bench.add_argument("--grids", default="1,2", help="comma-separated grid sides")
    add_common(p_bench, with_reps=True, reps_default=3)
    p_bench.add_argument("--tile", type=int, default=128,
                         help="per-worker tile side for the memory sweep (default 128)")
    p_bench.add_argument("--out", default="runs")
    p_bench.set_defaults(func=cmd_bench)

    p_an = sub.add_parser("analyze", help="model-vs-measurement table from saved reports")
    p_an.add_argument(
        "reports",
        nargs="+",
        help="report JSON files written by `run` (one tile size, varying grid)",
    )
    p_an.add_argument("--out", default="runs")
    p_an.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractViolation) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except GangFailure as e:
        print(f"gang failure: {e}", file=sys.stderr)
        return EXIT_GANG
    except VerificationError as e:
        print(f"verification failed: {e}", file=sys.stderr)
        return EXIT_VERIFY
    except AnalysisError as e:
        print(f"analysis error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CannonError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
