"""Command-line interface: forward simulation, inversion, rate studies,
kernel diagnostics, and matrix export.

All file outputs are written atomically (temp file + rename) and every
command produces a summary JSON carrying the full echoed configuration
and the library version, so runs are reproducible and diffable.  Exit
codes: 0 success, 1 validation error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .diagnostics import hs_condition_check
from .hilbert_scale import build_penalty, build_scale_operator
from .operators import (
    ConstantKernel,
    Grid,
    StereologyKernel,
    TabulatedKernel,
    apply_forward,
    build_abel_matrix,
    grid_norm,
)
from .solver import TikhonovProblem, solve
from .tuning import (
    NoiseModel,
    RatePlan,
    RateStudyError,
    TruthFunction,
    add_noise,
    apriori_alpha,
    discrepancy_alpha,
    oracle_alpha,
    run_rate_study,
    theoretical_slope,
)


class CliError(Exception):
    """Validation problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".abelscale-")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_vector_csv(path: str, t: np.ndarray, values: np.ndarray) -> None:
    lines = ["t,value"]
    lines += [f"{ti:.17g},{vi:.17g}" for ti, vi in zip(t, values)]
    _atomic_write(path, "\n".join(lines) + "\n")


def read_vector_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 2:
        raise CliError(f"{path}: expected two columns (t,value)")
    return data[:, 0], data[:, 1]


def write_matrix_csv(path: str, matrix: np.ndarray) -> None:
    lines = [",".join(f"{v:.17g}" for v in row) for row in matrix]
    _atomic_write(path, "\n".join(lines) + "\n")


def write_summary(path: str, payload: dict) -> None:
    payload = dict(payload)
    payload["library_version"] = __version__
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _grid_from_nodes(t: np.ndarray) -> Grid:
    n = len(t)
    grid = Grid(n)
    if not np.allclose(t, grid.nodes, atol=1e-9):
        raise CliError("input nodes must be t_i = i/n on [0, 1)")
    return grid


def _make_kernel(name: str, kernel_file: str | None):
    if name == "constant":
        return ConstantKernel()
    if name == "stereology":
        return StereologyKernel()
    if name == "file":
        if not kernel_file:
            raise CliError("--kernel file requires --kernel-file")
        return TabulatedKernel(np.loadtxt(kernel_file, delimiter=","))
    raise CliError(f"unknown kernel {name!r}")


def _add_kernel_args(sub):
    sub.add_argument("--kernel", default="constant",
                     choices=["constant", "stereology", "file"])
    sub.add_argument("--kernel-file", default=None,
                     help="CSV matrix of kernel node values (for --kernel file)")


def _echo(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_forward(args) -> int:
    t, x = read_vector_csv(args.input)
    grid = _grid_from_nodes(t)
    kernel = _make_kernel(args.kernel, args.kernel_file)
    op = build_abel_matrix(args.a, grid, kernel)
    y = apply_forward(op, x)
    if args.noise_delta > 0:
        y = add_noise(y, NoiseModel(args.noise_delta, args.seed))
    write_vector_csv(args.output, grid.nodes, y)
    write_summary(args.output + ".summary.json", {
        "command": "forward",
        "config": _echo(args),
        "n": grid.n,
        "output_norm": grid_norm(y, grid.dt),
    })
    return 0


def _cmd_invert(args) -> int:
    t, y = read_vector_csv(args.input)
    grid = _grid_from_nodes(t)
    kernel = _make_kernel(args.kernel, args.kernel_file)
    r = args.r if args.r is not None else math.ceil(args.a)
    if r < math.ceil(args.a):
        print(f"warning: r={r} is below ceil(a)={math.ceil(args.a)}; "
              "the scale is not adapted to this operator", file=sys.stderr)
    if grid.n < 2 * r + 2:
        raise CliError(f"n={grid.n} too small for scale index r={r}")

    forward = build_abel_matrix(args.a, grid, kernel)
    penalty = build_penalty(r, args.p, grid)
    if args.noise_delta > 0:
        y = add_noise(y, NoiseModel(args.noise_delta, args.seed))

    summary: dict = {"command": "invert", "config": _echo(args), "n": grid.n, "r": r}
    if args.alpha is not None:
        rule = "fixed"
        rec = solve(TikhonovProblem(forward, penalty, args.alpha, y), args.solver)
        alpha = args.alpha
    else:
        rule = args.alpha_rule
        if rule == "fixed":
            raise CliError("--alpha-rule fixed requires --alpha")
        if rule == "oracle":
            if args.truth is None:
                raise CliError("--alpha-rule oracle requires --truth")
            _t, x_true = read_vector_csv(args.truth)
            alpha, rec, err = oracle_alpha(x_true, y, forward, penalty,
                                           solver=args.solver)
            summary["oracle_error"] = err
        elif rule == "discrepancy":
            prefix = max(10, int(round(args.prefix_frac * grid.n)))
            alpha, rec, delta_hat = discrepancy_alpha(
                y, forward, penalty, quiet_prefix_len=prefix, tau=args.tau,
                solver=args.solver)
            summary["delta_hat"] = delta_hat
            summary["prefix_len"] = prefix
        elif rule == "apriori":
            if args.delta is None or args.q is None:
                raise CliError("--alpha-rule apriori requires --delta and --q")
            alpha = apriori_alpha(args.delta, args.a, args.p, args.q, args.c_const)
            rec = solve(TikhonovProblem(forward, penalty, alpha, y), args.solver)
        else:
            raise CliError(f"unknown alpha rule {rule!r}")

    write_vector_csv(args.output, grid.nodes, rec.x)
    summary.update({
        "alpha": alpha,
        "alpha_rule": rule,
        "residual_norm": rec.residual_norm,
        "penalty_value": rec.penalty_value,
        "solver_id": rec.solver_id,
        "iterations": rec.iterations,
        "warning": rec.warning,
    })
    if args.truth is not None:
        _t, x_true = read_vector_csv(args.truth)
        summary["reconstruction_error"] = grid_norm(rec.x - x_true, grid.dt)
    write_summary(args.output + ".summary.json", summary)
    return 0


def _plan_from_json(path: str) -> RatePlan:
    with open(path) as handle:
        raw = json.load(handle)
    deltas = raw.get("deltas", {"min": 0.005, "max": 0.1, "count": 8})
    if isinstance(deltas, dict):
        deltas = np.geomspace(deltas["min"], deltas["max"], deltas["count"]).tolist()
    tf_raw = raw.get("test_function", {})
    tf = TruthFunction(
        kind=tf_raw.get("kind", "centered_gaussian"),
        center=tf_raw.get("center"),
        sigma=tf_raw.get("sigma", 0.05),
        amplitude=tf_raw.get("amplitude"),
    )
    keys = ("a", "p", "r", "q", "replicates", "alpha_rule", "n", "seed", "solver",
            "kernel", "data_oversample", "alpha_fixed", "apriori_scale", "tau",
            "prefix_fraction", "alpha_min", "alpha_max")
    kwargs = {k: raw[k] for k in keys if k in raw}
    return RatePlan(deltas=tuple(deltas), test_function=tf, **kwargs)


def _cmd_rate_study(args) -> int:
    plan = _plan_from_json(args.plan)
    os.makedirs(args.out_dir, exist_ok=True)
    try:
        result = run_rate_study(plan)
    except RateStudyError as exc:
        write_summary(os.path.join(args.out_dir, "summary.json"), {
            "command": "rate-study",
            "error": str(exc),
            "partial_points": exc.partial_points,
        })
        raise

    lines = ["delta,mean_error,std_error,alpha"]
    for (delta, mean_err, std_err), alpha in zip(result.points, result.alpha_trace):
        lines.append(f"{delta:.17g},{mean_err:.17g},{std_err:.17g},{alpha:.17g}")
    _atomic_write(os.path.join(args.out_dir, "points.csv"), "\n".join(lines) + "\n")

    info = theoretical_slope(plan.a, plan.p, plan.q)
    write_summary(os.path.join(args.out_dir, "summary.json"), {
        "command": "rate-study",
        "config": {
            "plan_file": args.plan,
            "a": plan.a, "p": plan.p, "r": plan.scale_index, "q": plan.q,
            "n": plan.n, "seed": plan.seed, "solver": plan.solver,
            "kernel": plan.kernel, "alpha_rule": plan.alpha_rule,
            "replicates": plan.replicates, "deltas": list(plan.deltas),
            "test_function": {
                "kind": plan.test_function.kind,
                "center": plan.test_function.center,
                "sigma": plan.test_function.sigma,
                "amplitude": plan.test_function.amplitude,
            },
            "data_oversample": plan.data_oversample,
        },
        "fitted_slope": result.fitted_slope,
        "theoretical_slope": result.theoretical_slope,
        "p_star": info.p_star,
        "saturated": info.saturated,
    })
    return 0


def _cmd_diagnose_kernel(args) -> int:
    kernel = _make_kernel(args.kernel, args.kernel_file)
    report = hs_condition_check(kernel, args.a, fine_n=args.fine_n,
                                report_n=args.report_n)
    write_summary(args.output, {
        "command": "diagnose-kernel",
        "config": _echo(args),
        "a": report.a,
        "hs_norm_estimate": report.hs_norm_estimate,
        "band_bound": report.band_bound,
        "coarse_estimate": report.coarse_estimate,
        "condition_met": report.condition_met,
        "notes": list(report.notes),
    })
    if args.samples:
        lines = ["t,s,h"]
        lines += [f"{t:.17g},{s:.17g},{h:.17g}" for t, s, h in report.samples.rows()]
        _atomic_write(args.samples, "\n".join(lines) + "\n")
    return 0


def _cmd_make_matrix(args) -> int:
    grid = Grid(args.n)
    meta: dict = {"command": "make-matrix", "config": _echo(args), "n": args.n}
    if args.matrix == "scale":
        op = build_scale_operator(args.r, grid)
        matrix = op.matrix
        meta.update({"r": args.r, "experimental": op.experimental})
    elif args.matrix == "penalty":
        pen = build_penalty(args.r, args.p, grid)
        matrix = pen.matrix
        meta.update({"r": args.r, "p": args.p,
                     "experimental": args.r > 3})
    else:
        kernel = _make_kernel(args.kernel, args.kernel_file)
        fw = build_abel_matrix(args.a, grid, kernel)
        matrix = fw.matrix
        meta.update({"a": args.a, "kernel": fw.kernel_id})
    write_matrix_csv(args.output, matrix)
    write_summary(args.output + ".meta.json", meta)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="abelscale",
                     description="Tikhonov inversion of Abel-type operators "
                                 "in adapted Hilbert scales")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    fwd = sub.add_parser("forward", help="apply the forward operator to a signal")
    fwd.add_argument("--a", type=float, required=True)
    _add_kernel_args(fwd)
    fwd.add_argument("--input", required=True, help="CSV (t,value) of the signal x")
    fwd.add_argument("--output", required=True)
    fwd.add_argument("--noise-delta", type=float, default=0.0)
    fwd.add_argument("--seed", type=int, default=0)
    fwd.set_defaults(func=_cmd_forward)

    inv = sub.add_parser("invert", help="reconstruct a signal from noisy data")
    inv.add_argument("--a", type=float, required=True)
    inv.add_argument("--r", type=int, default=None,
                     help="scale index (default ceil(a))")
    inv.add_argument("--p", type=float, default=1.0, help="penalty order")
    inv.add_argument("--alpha", type=float, default=None)
    inv.add_argument("--alpha-rule", default="fixed",
                     choices=["fixed", "oracle", "discrepancy", "apriori"])
    _add_kernel_args(inv)
    inv.add_argument("--input", required=True, help="CSV (t,value) of the data y")
    inv.add_argument("--output", required=True)
    inv.add_argument("--truth", default=None,
                     help="CSV of the true signal (required for oracle rule)")
    inv.add_argument("--solver", default="auto", choices=["auto", "direct", "cg"])
    inv.add_argument("--seed", type=int, default=0)
    inv.add_argument("--noise-delta", type=float, default=0.0,
                     help="add synthetic noise to the input before inverting")
    inv.add_argument("--prefix-frac", type=float, default=0.1)
    inv.add_argument("--tau", type=float, default=1.1)
    inv.add_argument("--delta", type=float, default=None,
                     help="noise level for the a-priori rule")
    inv.add_argument("--q", type=float, default=None,
                     help="assumed smoothness for the a-priori rule")
    inv.add_argument("--c-const", type=float, default=1.0)
    inv.set_defaults(func=_cmd_invert)

    rate = sub.add_parser("rate-study", help="noise sweep and slope fit from a JSON plan")
    rate.add_argument("plan", help="JSON plan file")
    rate.add_argument("--out-dir", default=".")
    rate.set_defaults(func=_cmd_rate_study)

    diag = sub.add_parser("diagnose-kernel",
                          help="residual-kernel Hilbert-Schmidt diagnostics")
    diag.add_argument("--a", type=float, required=True)
    _add_kernel_args(diag)
    diag.add_argument("--fine-n", type=int, default=2000)
    diag.add_argument("--report-n", type=int, default=160)
    diag.add_argument("--output", required=True, help="report JSON path")
    diag.add_argument("--samples", default=None, help="optional CSV of h samples")
    diag.set_defaults(func=_cmd_diagnose_kernel)

    mk = sub.add_parser("make-matrix", help="dump operator matrices as CSV")
    mk.add_argument("--matrix", required=True, choices=["scale", "penalty", "forward"])
    mk.add_argument("--n", type=int, required=True)
    mk.add_argument("--r", type=int, default=1)
    mk.add_argument("--p", type=float, default=1.0)
    mk.add_argument("--a", type=float, default=1.0)
    _add_kernel_args(mk)
    mk.add_argument("--output", required=True)
    mk.set_defaults(func=_cmd_make_matrix)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (CliError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (np.linalg.LinAlgError, RateStudyError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
