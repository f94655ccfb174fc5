"""Command-line interface.

Subcommands: run, gradcheck, verify, params, report.  Exit codes:
0 success, 1 failed cells or failed checks, 2 config errors.
"""

import os

# our worker pool supplies the parallelism; keep BLAS single-threaded
# so cells do not oversubscribe the machine (set before numpy loads)
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import argparse
import sys

from .config import load_config
from .counting import backbone_count, count_table, mlp_dims
from .errors import ConfigError, ShapeError
from .harness import (
    compare_methods,
    format_comparison,
    log_timings,
    read_csv_rows,
    run_experiment,
    write_csv,
    write_json,
)
from .verification import (
    GRADCHECK_METHODS,
    REL_TOL,
    combination_identity_residuals,
    equivalence_residual,
    fresh_state_residuals,
    gradcheck_method,
    scale_spectrum_residual,
    semi_orthogonality_residual,
    svd_invariant_residuals,
    truncation_optimality_residual,
)


def cmd_run(args):
    try:
        config = load_config(args.config)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    report = run_experiment(config, threads=args.threads)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "results.csv")
    json_path = os.path.join(args.out, "report.json")
    write_csv(report, csv_path)
    write_json(report, json_path)
    log_timings(report)
    try:
        comparison = compare_methods(report.rows, report.higher_is_better)
        print(format_comparison(comparison, report.higher_is_better))
    except ShapeError as err:
        print(f"no comparison: {err}", file=sys.stderr)
    print(f"wrote {csv_path} and {json_path}")
    if report.failures:
        for row in report.failures:
            print(
                f"FAILED cell {row.method} r={row.rank} seed={row.seed}: {row.error}",
                file=sys.stderr,
            )
        return 1
    return 0


def cmd_gradcheck(args):
    methods = [args.kind] if args.kind else list(GRADCHECK_METHODS)
    failed = False
    for method in methods:
        results = gradcheck_method(method, instances=args.instances)
        for res in results:
            ok = res.rel_err <= REL_TOL
            failed = failed or not ok
            status = "ok  " if ok else "FAIL"
            print(
                f"{status} {method}/{res.tensor}: rel {res.rel_err:.3e} "
                f"(tol {REL_TOL:.0e}, {res.instances} instances)"
            )
    return 1 if failed else 0


def cmd_verify(args):
    del args
    checks = []
    svd_res = svd_invariant_residuals()
    checks.append(("svd reconstruction", svd_res["recon"], 1e-10))
    checks.append(("svd left orthonormality", svd_res["u_orth"], 1e-10))
    checks.append(("svd right orthonormality", svd_res["v_orth"], 1e-10))
    checks.append(("svd descending order", svd_res["order"], 0.0))
    checks.append(("pseudo-inverse penrose", svd_res["penrose"], 1e-9))
    checks.append(("core collapse transform", equivalence_residual(), 1e-10))
    checks.append(("semi-orthogonal factors", semi_orthogonality_residual(), 1e-9))
    checks.append(("truncation optimality", truncation_optimality_residual(), 1e-10))
    checks.append(("two-sided scale spectrum", scale_spectrum_residual(), 1e-10))
    combo = combination_identity_residuals()
    checks.append(("spectral expansion vs blockwise", combo["spectral"], 1e-10))
    checks.append(("spectral shift two paths", combo["svdiff"], 1e-10))
    checks.append(("magnitude equals column norms", combo["dora_norms"], 1e-10))
    for method, residual in fresh_state_residuals().items():
        checks.append((f"fresh-state identity: {method}", residual, 1e-10))

    failed = False
    for name, value, tol in checks:
        ok = value <= tol
        failed = failed or not ok
        status = "PASS" if ok else "FAIL"
        print(f"{status} {name}: {value:.3e} (tol {tol:.0e})")
    return 1 if failed else 0


def _parse_shape(text):
    if text.startswith("mlp:"):
        widths = [int(v) for v in text[4:].split(",")]
        return mlp_dims(widths)
    dims = []
    for token in text.split(","):
        n, _, m = token.strip().partition("x")
        dims.append((int(n), int(m)))
    return tuple(dims)


def cmd_params(args):
    try:
        dims = _parse_shape(args.shape) * args.repeat
        ranks = tuple(int(v) for v in args.rank.split(","))
        backbone = args.backbone or backbone_count(dims)
        rows = count_table(dims, ranks=ranks, backbone=backbone)
    except (ValueError, ShapeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(f"{len(dims)} layers, backbone {backbone} parameters")
    print(f"{'method':18s} {'rank':>4s} {'params':>10s} {'permille':>9s}")
    for method, rank, count, pm in rows:
        rank_text = str(rank) if rank else "-"
        print(f"{method:18s} {rank_text:>4s} {count:>10d} {pm:>9.4f}")
    return 0


def cmd_report(args):
    try:
        rows = read_csv_rows(args.csv)
        comparison = compare_methods(rows, args.higher_is_better)
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(format_comparison(comparison, args.higher_is_better))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="peftlab",
        description="subspace tuners: experiments, gradient checks, identity suites",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config", help="path to a key=value config file")
    p_run.add_argument("--out", default=".", help="output directory")
    p_run.add_argument("--threads", type=int, default=1, help="worker pool size")
    p_run.set_defaults(func=cmd_run)

    p_grad = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p_grad.add_argument("--kind", choices=GRADCHECK_METHODS, help="single method")
    p_grad.add_argument("--instances", type=int, default=10)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_verify = sub.add_parser("verify", help="algebraic identity suite")
    p_verify.set_defaults(func=cmd_verify)

    p_params = sub.add_parser("params", help="trainable-parameter count table")
    p_params.add_argument(
        "shape",
        help="layer shapes '768x768,768x3072' or MLP widths 'mlp:2,256,256,2'",
    )
    p_params.add_argument("--repeat", type=int, default=1, help="repeat the shape list")
    p_params.add_argument("--rank", default="2,4,8,16", help="comma list of ranks")
    p_params.add_argument(
        "--backbone", type=int, default=0, help="override the backbone parameter count"
    )
    p_params.set_defaults(func=cmd_params)

    p_report = sub.add_parser("report", help="ordering summary from a results CSV")
    p_report.add_argument("csv", help="path to results.csv")
    p_report.add_argument(
        "--higher-is-better",
        action="store_true",
        help="metric is an accuracy, not a loss",
    )
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
