"""Command-line surface: synth, train, predict, eval, sweep, approx-check, cv.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
All commands are deterministic under a fixed --seed; the one exception is
the wall_time_s column of sweep output, which measures real time.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._seeds import child_int
from .bags import BagCollection
from .data import gen_collection, read_bags, write_bags
from .errors import DataError, MargokitError, NumericalError, UsageError
from .features import approx_error_stats
from .kernels import KernelSpec
from .learner import evaluate, predict_bag, train
from .model_io import load_model, save_model
from .modelsel import GridAxis, GridSpec, run_model_selection, write_score_csv

#: Sweep defaults tuned once on held-out synthetic collections and frozen;
#: see README for the calibration run.
SWEEP_DEFAULTS = {
    "sigma_x": 0.5,
    "sigma_xp": 0.35,
    "sigma_p": 0.2,
    "lam": 1e-4,
    "L": 2048,
    "Q": 2048,
}

_METHOD_MAP = {
    ("mtl", "exact"): "exact_dual",
    ("mtl", "rff"): "rff_linear",
    ("mtl", "nystrom"): "nystrom_linear",
    ("pooling", "exact"): "pooling_exact",
    ("pooling", "rff"): "pooling_linear",
    ("pooling", "nystrom"): "pooling_linear",
}

_LOSS_MAP = {"hinge": "hinge", "eps": "eps_insensitive"}


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _resolve_method(method: str, trainer: str) -> tuple[str, str | None]:
    key = (method, trainer)
    if key not in _METHOD_MAP:
        raise UsageError(f"unsupported method/trainer combination {key!r}")
    linear_map = trainer if _METHOD_MAP[key] == "pooling_linear" else None
    return _METHOD_MAP[key], linear_map


def _spec_from_args(args) -> KernelSpec:
    return KernelSpec(
        kx_kind=args.kx, sigma_x=args.sigma_x,
        kxp_kind=args.kxp, sigma_xp=args.sigma_xp,
        kp_kind=args.kp, sigma_p=args.sigma_p, kappa=args.kappa,
    )


def _add_kernel_flags(p):
    p.add_argument("--kx", choices=["gaussian", "linear"], default="gaussian")
    p.add_argument("--kxp", choices=["gaussian", "linear"], default="gaussian")
    p.add_argument("--kp", choices=["gaussian_like", "exponential_inner", "linear_inner", "constant"],
                   default="gaussian_like")
    p.add_argument("--sigma-x", type=float, default=1.0)
    p.add_argument("--sigma-xp", type=float, default=1.0)
    p.add_argument("--sigma-p", type=float, default=1.0)
    p.add_argument("--kappa", type=float, default=1.0)


def _read_labeled(path) -> BagCollection:
    coll = read_bags(path)
    if not coll.labeled:
        raise DataError(f"{path}: data has no label column")
    return coll


def cmd_synth(args) -> int:
    if args.points < 1 or args.tasks < 1:
        raise UsageError("--tasks and --points must be >= 1")
    coll = gen_collection(args.tasks, args.points, seed=args.seed,
                          semi_major=args.a, semi_minor=args.b)
    write_bags(coll, args.out)
    return 0


def cmd_train(args) -> int:
    method, linear_map = _resolve_method(args.method, args.trainer)
    spec = _spec_from_args(args)
    coll = _read_labeled(args.data)
    model = train(
        coll, spec, args.lam, loss_kind=_LOSS_MAP[args.loss], method=method,
        seed=args.seed, L=args.L, Q=args.Q, n_landmarks=args.m, eps=args.eps,
        tol=args.tol, max_iter=args.max_iter, pooling_concat=args.pooling_concat,
        linear_map=linear_map,
    )
    save_model(model, args.out)
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    coll = read_bags(args.data)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["task_id", "row", "margin", "sign"])
        for bag in coll:
            margins = predict_bag(model, bag.points)
            for j, m in enumerate(margins):
                writer.writerow([bag.task_id, j, repr(float(m)), 1 if m >= 0 else -1])
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    coll = _read_labeled(args.data)
    report = evaluate(model, coll)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


@dataclass(frozen=True)
class ExperimentGrid:
    """One synthetic N x n sweep: task counts, bag sizes, methods, seeds."""

    Ns: tuple[int, ...]
    ns: tuple[int, ...]
    methods: tuple[str, ...]
    trainer: str
    repeats: int
    seed: int
    test_tasks: int = 10
    test_points: int = 20000

    def __post_init__(self):
        if not self.Ns or not self.ns or not self.methods:
            raise UsageError("sweep needs nonempty --Ns, --ns, --methods")
        if self.repeats < 1:
            raise UsageError("--repeats must be >= 1")
        if any(m not in ("mtl", "pooling") for m in self.methods):
            raise UsageError(f"methods must be among mtl,pooling: {self.methods}")


def _sweep_cell(job) -> tuple[str, float]:
    """Run one (N, n, method, repeat) cell; returns (error_rate_repr, seconds)."""
    (N, n, method, repeat, trainer, seed, test_tasks, test_points, params) = job
    t0 = time.perf_counter()
    try:
        train_coll = gen_collection(N, n, seed=child_int(seed, "train", N, n, repeat))
        test_coll = gen_collection(test_tasks, test_points,
                                   seed=child_int(seed, "test", N, n, repeat))
        spec = KernelSpec(
            kx_kind="gaussian", sigma_x=params["sigma_x"],
            kxp_kind="gaussian", sigma_xp=params["sigma_xp"],
            kp_kind="gaussian_like", sigma_p=params["sigma_p"],
        )
        lmethod, linear_map = _resolve_method(method, trainer)
        model = train(
            train_coll, spec, params["lam"], loss_kind="hinge", method=lmethod,
            seed=child_int(seed, "fit", N, n, method, repeat),
            L=params["L"], Q=params["Q"], n_landmarks=params.get("m"),
            linear_map=linear_map,
        )
        report = evaluate(model, test_coll)
        return repr(float(report.error_rate)), time.perf_counter() - t0
    except (MargokitError, np.linalg.LinAlgError, ValueError) as exc:
        sys.stderr.write(f"sweep cell N={N} n={n} {method} repeat={repeat} failed: {exc}\n")
        return "failed", time.perf_counter() - t0


def _thread_budget() -> int:
    raw = os.environ.get("MARGOKIT_THREADS", "0")
    try:
        v = int(raw)
    except ValueError:
        raise UsageError(f"MARGOKIT_THREADS must be an integer, got {raw!r}")
    if v < 0:
        raise UsageError("MARGOKIT_THREADS must be >= 0")
    return v if v > 0 else (os.cpu_count() or 1)


def cmd_sweep(args) -> int:
    grid = ExperimentGrid(
        Ns=tuple(args.Ns), ns=tuple(args.ns), methods=tuple(args.methods),
        trainer=args.trainer, repeats=args.repeats, seed=args.seed,
        test_tasks=args.test_tasks, test_points=args.test_points,
    )
    params = {
        "sigma_x": args.sigma_x, "sigma_xp": args.sigma_xp, "sigma_p": args.sigma_p,
        "lam": args.lam, "L": args.L, "Q": args.Q, "m": args.m,
    }
    groups = [(N, n, method) for N in grid.Ns for n in grid.ns for method in grid.methods]
    jobs = [
        (N, n, method, r, grid.trainer, grid.seed, grid.test_tasks, grid.test_points, params)
        for (N, n, method) in groups
        for r in range(grid.repeats)
    ]
    workers = _thread_budget()
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    if pool is not None:
        results = (f.result() for f in [pool.submit(_sweep_cell, job) for job in jobs])
    else:
        results = map(_sweep_cell, jobs)

    # Rows append in deterministic job order as soon as each result lands, so
    # an interrupted run still leaves a parseable prefix.
    try:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["N", "n", "method", "trainer", "repeat", "error_rate", "wall_time_s"])
            fh.flush()
            errs: list[float] = []
            for job, (err_repr, wall) in zip(jobs, results):
                N, n, method, r = job[:4]
                writer.writerow([N, n, method, grid.trainer, r, err_repr, f"{wall:.3f}"])
                fh.flush()
                if err_repr != "failed":
                    errs.append(float(err_repr))
                if r == grid.repeats - 1:
                    if errs:
                        sd = float(np.std(errs, ddof=1)) if len(errs) > 1 else 0.0
                        writer.writerow([N, n, method, grid.trainer, "mean", repr(float(np.mean(errs))), ""])
                        writer.writerow([N, n, method, grid.trainer, "sd", repr(sd), ""])
                        fh.flush()
                    errs = []
    finally:
        if pool is not None:
            pool.shutdown()
    return 0


def cmd_approx_check(args) -> int:
    spec = KernelSpec(
        kx_kind="gaussian", sigma_x=args.sigma_x,
        kxp_kind="gaussian", sigma_xp=args.sigma_xp,
        kp_kind="gaussian_like", sigma_p=args.sigma_p,
    )
    report = approx_error_stats(
        spec, args.L, args.Q, args.pairs, args.repeats, args.seed,
        bag_size=args.bag_size, dim=args.dim, eps_l=args.eps_l, eps_q=args.eps_q,
    )
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["repeat", "L", "Q", "eps_l", "eps_q", "bag_size",
                         "max_abs_err", "mean_abs_err", "n_exceed", "n_pairs", "bound"])
        for row in report.rows:
            writer.writerow([
                row.repeat, report.L, report.Q, repr(report.eps_l), repr(report.eps_q),
                report.bag_size, repr(row.max_abs_err), repr(row.mean_abs_err),
                row.n_exceed, report.n_pairs, repr(report.bound),
            ])
    print(json.dumps(
        {"exceed_frac": report.exceed_frac, "bound": report.bound,
         "median_max_err": report.median_max_err, "mean_abs_err": report.mean_abs_err},
        sort_keys=True,
    ))
    return 0


def _parse_axis(text: str, name: str) -> GridAxis:
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError(f"--grid-{name} wants LOW,HIGH,COUNT, got {text!r}")
    try:
        low, high, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UsageError(f"--grid-{name}: cannot parse {text!r}")
    return GridAxis(low=low, high=high, count=count, log=True)


def cmd_cv(args) -> int:
    coll = _read_labeled(args.data)
    method, linear_map = _resolve_method(args.method, args.trainer)
    axes: dict[str, GridAxis] = {}
    for flag, name in (
        (args.grid_sigma_x, "sigma_x"), (args.grid_sigma_xp, "sigma_xp"),
        (args.grid_sigma_p, "sigma_p"), (args.grid_lambda, "lambda"),
    ):
        if flag is not None:
            axes[name] = _parse_axis(flag, name.replace("_", "-"))
    if not axes:
        raise UsageError("cv needs at least one --grid-* axis")
    grid = GridSpec.from_dict(axes, folds=args.folds, repeats=args.repeats,
                              max_recenter=args.recenters, seed=args.seed)
    spec = _spec_from_args(args)
    best, rounds = run_model_selection(
        coll, spec, grid, method=method, loss_kind=_LOSS_MAP[args.loss], lam=args.lam,
        L=args.L, Q=args.Q, n_landmarks=args.m, linear_map=linear_map,
    )
    if args.scores:
        write_score_csv(rounds, grid.names, args.scores)
    print(json.dumps({"best_params": best, "cv_risk": rounds[-1].best_risk,
                      "rounds": len(rounds)}, sort_keys=True))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="margokit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic bag CSV")
    p.add_argument("--tasks", type=int, required=True)
    p.add_argument("--points", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--a", type=float, default=1.0, help="ellipse semi-major axis")
    p.add_argument("--b", type=float, default=0.5, help="ellipse semi-minor axis")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a labeled bag CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["mtl", "pooling"], default="mtl")
    p.add_argument("--trainer", choices=["exact", "rff", "nystrom"], default="rff")
    p.add_argument("--loss", choices=["hinge", "eps"], default="hinge")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    _add_kernel_flags(p)
    p.add_argument("--L", type=int, default=2048, help="inner RFF frequency count")
    p.add_argument("--Q", type=int, default=2048, help="outer RFF frequency count")
    p.add_argument("--m", type=int, default=None, help="Nystrom landmark count")
    p.add_argument("--eps", type=float, default=None, help="eps-insensitive tube half-width")
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--pooling-concat", action="store_true",
                   help="pooling via plain concatenation instead of 1/n_i weights")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="margins for every row of a bag CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="risk report (JSON on stdout) on labeled bags")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="N x n synthetic benchmark, results CSV")
    p.add_argument("--Ns", type=_int_list, required=True, help="comma list of task counts")
    p.add_argument("--ns", type=_int_list, required=True, help="comma list of bag sizes")
    p.add_argument("--methods", type=_str_list, default=("mtl", "pooling"))
    p.add_argument("--trainer", choices=["exact", "rff", "nystrom"], default="rff")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-tasks", type=int, default=10)
    p.add_argument("--test-points", type=int, default=20000)
    p.add_argument("--lambda", dest="lam", type=float, default=SWEEP_DEFAULTS["lam"])
    p.add_argument("--sigma-x", type=float, default=SWEEP_DEFAULTS["sigma_x"])
    p.add_argument("--sigma-xp", type=float, default=SWEEP_DEFAULTS["sigma_xp"])
    p.add_argument("--sigma-p", type=float, default=SWEEP_DEFAULTS["sigma_p"])
    p.add_argument("--L", type=int, default=SWEEP_DEFAULTS["L"])
    p.add_argument("--Q", type=int, default=SWEEP_DEFAULTS["Q"])
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("approx-check", help="two-stage RFF error vs the probabilistic bound")
    p.add_argument("--L", type=int, default=2048)
    p.add_argument("--Q", type=int, default=2048)
    p.add_argument("--eps-l", type=float, default=0.2)
    p.add_argument("--eps-q", type=float, default=0.1)
    p.add_argument("--pairs", type=int, default=20)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--bag-size", type=int, default=10)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--sigma-x", type=float, default=1.0)
    p.add_argument("--sigma-xp", type=float, default=1.0)
    p.add_argument("--sigma-p", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_approx_check)

    p = sub.add_parser("cv", help="repeated k-fold CV over a log grid, with recentering")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["mtl", "pooling"], default="mtl")
    p.add_argument("--trainer", choices=["exact", "rff", "nystrom"], default="exact")
    p.add_argument("--loss", choices=["hinge", "eps"], default="hinge")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-3,
                   help="fixed lambda when --grid-lambda is absent")
    _add_kernel_flags(p)
    p.add_argument("--grid-sigma-x", default=None, metavar="LOW,HIGH,COUNT")
    p.add_argument("--grid-sigma-xp", default=None, metavar="LOW,HIGH,COUNT")
    p.add_argument("--grid-sigma-p", default=None, metavar="LOW,HIGH,COUNT")
    p.add_argument("--grid-lambda", default=None, metavar="LOW,HIGH,COUNT")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--recenters", type=int, default=3)
    p.add_argument("--L", type=int, default=2048)
    p.add_argument("--Q", type=int, default=2048)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scores", default=None, help="path for the audit score CSV")
    p.set_defaults(func=cmd_cv)

    return parser


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text) -> tuple[str, ...]:
    if isinstance(text, tuple):
        return text
    return tuple(v for v in text.split(",") if v != "")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"margokit: {exc}\n")
        return 1
    except DataError as exc:
        sys.stderr.write(f"margokit: {exc}\n")
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"margokit: numerical failure: {exc}\n")
        return 3
    except OSError as exc:
        sys.stderr.write(f"margokit: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
