"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The synthetic benchmark sweep runs once (module fixture) through the real
CLI with a fixed master seed and the frozen sweep defaults; criterion tests
read its CSV.  Test bags use 2000 points per task (10 tasks), which puts
roughly 0.2% standard error on each cell mean, far inside every window
asserted here.
"""

import csv
import itertools
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from margokit import (
    Bag,
    BagCollection,
    KernelSpec,
    approx_error_stats,
    distribution_kernel,
    embedding_inner,
    evaluate,
    gen_collection,
    gram_matrix,
    load_model,
    predict_bag,
    product_kernel,
    read_bags,
    save_model,
    solve_dual_svm,
    solve_linear,
    train,
    write_bags,
)
from margokit.solver import costs_from_task_sizes

MASTER_SEED = 7
TEST_TASKS = 10
TEST_POINTS = 2000


def criterion(name, ok, detail=""):
    line = f"[acceptance] {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print(line, file=sys.stderr)
    assert ok, line


def run_cli(*args, env=None):
    import os

    full_env = dict(os.environ)
    full_env.setdefault("MARGOKIT_THREADS", "0")
    if env:
        full_env.update(env)
    return subprocess.run(
        [sys.executable, "-m", "margokit.cli", *map(str, args)],
        capture_output=True, text=True, env=full_env,
    )


def parse_sweep(path):
    """{(N, n, method): mean_error} from the aggregate rows."""
    out = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            if row["repeat"] == "mean" and row["error_rate"] != "failed":
                out[(int(row["N"]), int(row["n"]), row["method"])] = float(row["error_rate"])
    return out


@pytest.fixture(scope="module")
def sweep_results(tmp_path_factory):
    base = tmp_path_factory.mktemp("sweep")
    main_csv = base / "main.csv"
    mid_csv = base / "mid.csv"
    t0 = time.perf_counter()
    r1 = run_cli(
        "sweep", "--Ns", "16,256", "--ns", "8,256", "--methods", "mtl,pooling",
        "--trainer", "rff", "--repeats", 5, "--seed", MASTER_SEED,
        "--test-tasks", TEST_TASKS, "--test-points", TEST_POINTS, "--out", main_csv,
    )
    assert r1.returncode == 0, r1.stderr
    r2 = run_cli(
        "sweep", "--Ns", "64", "--ns", "32", "--methods", "mtl,pooling",
        "--trainer", "rff", "--repeats", 5, "--seed", MASTER_SEED,
        "--test-tasks", TEST_TASKS, "--test-points", TEST_POINTS, "--out", mid_csv,
    )
    assert r2.returncode == 0, r2.stderr
    elapsed = time.perf_counter() - t0
    print(f"[acceptance] sweep wall time: {elapsed / 60:.1f} min", file=sys.stderr)
    results = parse_sweep(main_csv)
    results.update(parse_sweep(mid_csv))
    return results


class TestCriterion1SyntheticReproduction:
    def test_mtl_error_at_largest_cell(self, sweep_results):
        err = sweep_results[(256, 256, "mtl")]
        criterion("1a mtl error at N=256, n=256 <= 5%", err <= 0.05, f"err={err:.4f}")

    def test_mtl_error_window_at_smallest_cell(self, sweep_results):
        err = sweep_results[(16, 8, "mtl")]
        criterion("1b mtl error at N=16, n=8 in [28%, 44%]", 0.28 <= err <= 0.44,
                  f"err={err:.4f}")

    def test_pooling_error_near_chance_everywhere(self, sweep_results):
        errs = {k: v for k, v in sweep_results.items() if k[2] == "pooling" and k[:2] != (64, 32)}
        ok = all(0.45 <= v <= 0.55 for v in errs.values())
        criterion("1c pooling error in [45%, 55%] at every cell", ok,
                  ", ".join(f"{k[0]}x{k[1]}={v:.3f}" for k, v in sorted(errs.items())))

    def test_mtl_error_monotone_in_sample_sizes(self, sweep_results):
        big = sweep_results[(256, 256, "mtl")]
        mid = sweep_results[(64, 32, "mtl")]
        small = sweep_results[(16, 8, "mtl")]
        criterion("1d mtl error monotone: (256,256) < (64,32) < (16,8)",
                  big < mid < small, f"{big:.4f} < {mid:.4f} < {small:.4f}")


class TestCriterion2KernelOracles:
    def test_worked_examples_to_1e6(self):
        spec = KernelSpec()
        a, b = Bag("a", [[0.0]]), Bag("b", [[0.0], [1.0]])
        g_ab = (1.0 + math.exp(-0.5)) / 2.0
        g_bb = (2.0 + 2.0 * math.exp(-0.5)) / 4.0
        kp = math.exp(-(1.0 + g_bb - 2.0 * g_ab) / 2.0)
        checks = [
            abs(embedding_inner(a, b, "gaussian", 1.0) - g_ab) <= 1e-6,
            abs(distribution_kernel(a, b, spec) - kp) <= 1e-6,
            abs(product_kernel((a, [0.0]), (b, [1.0]), spec) - kp * math.exp(-0.5)) <= 1e-6,
        ]
        criterion("2a kernel worked examples match hand oracles to 1e-6", all(checks))

    def test_gram_psd_on_20_seeded_sets(self):
        spec = KernelSpec()
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(9000 + seed)
            bags = [Bag(f"b{i}", rng.normal(size=(6, 2))) for i in range(5)]
            pts = [(bags[i % 5], rng.normal(size=2)) for i in range(50)]
            G = gram_matrix(pts, spec)
            floor = -1e-8 * np.trace(G) / G.shape[0]
            worst = min(worst, float(np.linalg.eigvalsh(G)[0]) - floor)
        criterion("2b gram PSD on 20 seeded 50-point sets", worst >= 0.0,
                  f"worst margin={worst:.2e}")


def brute_force_dual(K, y, c, rounds=40, points=7):
    M = len(y)
    lo, hi = np.zeros(M), np.asarray(c, dtype=float).copy()
    best = None
    for _ in range(rounds):
        axes = [np.linspace(lo[i], hi[i], points) for i in range(M)]
        grid = np.array(list(itertools.product(*axes)))
        ay = grid * y
        vals = grid.sum(axis=1) - 0.5 * np.einsum("ij,jk,ik->i", ay, K, ay)
        best = grid[int(np.argmax(vals))]
        span = (hi - lo) / (points - 1)
        lo = np.clip(best - span, 0.0, c)
        hi = np.clip(best + span, 0.0, c)
    ay = best * y
    return float(best.sum() - 0.5 * ay @ K @ ay)


class TestCriterion3SolverOracles:
    def test_dual_matches_brute_force(self):
        worst = 0.0
        tol = 1e-10
        kkt_ok = True
        for seed in range(20):
            rng = np.random.default_rng(seed)
            M = 2 + seed % 5
            A = rng.normal(size=(M, M + 2))
            K = A @ A.T / (M + 2)
            y = rng.choice([-1.0, 1.0], size=M)
            c = rng.uniform(0.3, 2.0, size=M)
            sol = solve_dual_svm(K, y, c, tol=tol)
            worst = max(worst, abs(sol.objective - brute_force_dual(K, y, c)))
            G = 1.0 - y * (K @ (sol.alphas * y))
            viol = np.where(sol.alphas <= 0, np.maximum(G, 0),
                            np.where(sol.alphas >= c, np.maximum(-G, 0), np.abs(G)))
            kkt_ok &= bool(np.max(viol) < 1e-8)
        criterion("3a dual objective matches brute-force QP oracle to 1e-4",
                  worst <= 1e-4, f"worst gap={worst:.2e}")
        criterion("3b KKT residual below tol at exit", kkt_ok)

    def test_kernel_linear_consistency(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(12, 3))
        y = rng.choice([-1.0, 1.0], size=12)
        lam = 0.05
        gram = X @ X.T
        costs = costs_from_task_sizes(lam, [12])
        dual = solve_dual_svm(gram, y, costs, tol=1e-12)
        lin = solve_linear(X, y, "hinge", lam, [12], tol=1e-12, max_iter=100000)
        dual_margins = gram @ (dual.alphas * y)
        lin_margins = X @ lin.weights
        worst = float(np.max(np.abs(dual_margins - lin_margins)))
        criterion("3c dual and linear paths agree on a linear kernel to 1e-3",
                  worst <= 1e-3, f"worst |diff|={worst:.2e}")


class TestCriterion4ApproximationConcentration:
    def test_exceedance_under_theorem_bound(self):
        spec = KernelSpec()
        ok = True
        details = []
        for eps_l, eps_q in ((0.2, 0.1), (0.25, 0.12)):
            report = approx_error_stats(
                spec, L=2048, Q=2048, n_pairs=20, n_repeats=50, seed=31,
                bag_size=10, dim=3, eps_l=eps_l, eps_q=eps_q,
            )
            assert report.bound < 1.0
            ok &= report.exceed_frac <= report.bound
            details.append(f"eps=({eps_l},{eps_q}): freq={report.exceed_frac:.4f}"
                           f" bound={report.bound:.4f}")
        criterion("4a empirical exceedance within the probabilistic bound", ok,
                  "; ".join(details))

    def test_median_max_error_non_increasing_when_doubled(self):
        spec = KernelSpec()
        small = approx_error_stats(spec, L=1024, Q=1024, n_pairs=20, n_repeats=50,
                                   seed=32, bag_size=10, dim=3)
        big = approx_error_stats(spec, L=2048, Q=2048, n_pairs=20, n_repeats=50,
                                 seed=32, bag_size=10, dim=3)
        criterion("4b median max-error non-increasing when L, Q double",
                  big.median_max_err <= small.median_max_err,
                  f"{small.median_max_err:.4f} -> {big.median_max_err:.4f}")


class TestCriterion5NystromExactness:
    def test_full_landmark_set_reproduces_gram(self):
        from margokit import fit_nystrom

        spec = KernelSpec()
        worst = 0.0
        for seed in (0, 1):
            rng = np.random.default_rng(40 + seed)
            bags = [Bag(f"b{i}", rng.normal(size=(5, 2))) for i in range(4)]
            pts = [(bags[i % 4], rng.normal(size=2)) for i in range(24)]
            G = gram_matrix(pts, spec)
            nmap = fit_nystrom(pts, spec, m=len(pts), seed=seed, eps_eig=0.0)
            Z = np.vstack([nmap.transform_bag(b.points, x.reshape(1, -1)) for b, x in pts])
            worst = max(worst, float(np.max(np.abs(Z @ Z.T - G))))
        criterion("5 Nystrom with m=M reproduces the exact Gram to 1e-6",
                  worst <= 1e-6, f"worst entry error={worst:.2e}")


class TestCriterion6PoolingReductions:
    def test_constant_kp_equals_plain_pooled_svm(self):
        coll = gen_collection(4, 10, seed=50)
        lam = 1e-2
        spec = KernelSpec(sigma_x=0.6, kp_kind="constant")
        model = train(coll, spec, lam, method="pooling_exact", tol=1e-12)
        pts = np.vstack([b.points for b in coll])
        y = np.concatenate([b.labels for b in coll])
        gram = np.exp(
            -((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1) / (2 * 0.6**2)
        )
        sol = solve_dual_svm(gram, y, costs_from_task_sizes(lam, [b.n for b in coll]), tol=1e-12)
        rng = np.random.default_rng(0)
        probe = rng.normal(size=(40, 2))
        kx = np.exp(-((probe[:, None, :] - pts[None, :, :]) ** 2).sum(-1) / (2 * 0.6**2))
        expected = kx @ (sol.alphas * y)
        worst = float(np.max(np.abs(predict_bag(model, probe) - expected)))
        criterion("6a pooling via constant distribution kernel equals plain pooled SVM",
                  worst <= 1e-8, f"worst |diff|={worst:.2e}")

    def test_pooling_predictions_ignore_bag_membership(self):
        coll = gen_collection(4, 10, seed=51)
        model = train(coll, KernelSpec(sigma_x=0.6), 1e-3, method="pooling_linear", L=256)
        rng = np.random.default_rng(1)
        probe = rng.normal(size=(16, 2))
        whole = predict_bag(model, probe)
        parts = np.concatenate([predict_bag(model, probe[:7]), predict_bag(model, probe[7:])])
        singles = np.array([predict_bag(model, probe[j : j + 1])[0] for j in range(16)])
        ok = np.array_equal(whole, parts) and np.array_equal(whole, singles)
        criterion("6b pooling predictions independent of bag grouping", ok)


class TestCriterion7DeterminismPersistence:
    def test_cli_byte_reproducibility(self, tmp_path):
        outs = []
        for tag in ("r1", "r2"):
            d = tmp_path / tag
            d.mkdir()
            data, model, pred, approx, scores = (
                d / "data.csv", d / "model.json", d / "pred.csv",
                d / "approx.csv", d / "scores.csv",
            )
            assert run_cli("synth", "--tasks", 4, "--points", 10, "--seed", 3,
                           "--out", data).returncode == 0
            assert run_cli("train", "--data", data, "--L", 64, "--Q", 64, "--seed", 5,
                           "--sigma-x", 0.5, "--sigma-xp", 0.35, "--sigma-p", 0.3,
                           "--out", model).returncode == 0
            assert run_cli("predict", "--model", model, "--data", data,
                           "--out", pred).returncode == 0
            ev = run_cli("eval", "--model", model, "--data", data)
            assert ev.returncode == 0
            assert run_cli("approx-check", "--L", 32, "--Q", 32, "--pairs", 4,
                           "--repeats", 2, "--seed", 1, "--out", approx).returncode == 0
            cv = run_cli("cv", "--data", data, "--trainer", "rff", "--L", 32, "--Q", 32,
                         "--grid-lambda", "0.001,0.1,2", "--folds", 2, "--repeats", 1,
                         "--sigma-x", 0.5, "--sigma-xp", 0.35, "--sigma-p", 0.3,
                         "--scores", scores)
            assert cv.returncode == 0
            outs.append((data.read_bytes(), model.read_bytes(), pred.read_bytes(),
                         ev.stdout, approx.read_bytes(), cv.stdout, scores.read_bytes()))
        criterion("7a CLI outputs byte-reproducible under a fixed seed", outs[0] == outs[1])

    def test_model_round_trip_on_500_point_probe(self, tmp_path):
        coll = gen_collection(4, 15, seed=52)
        spec = KernelSpec(sigma_x=0.5, sigma_xp=0.35, sigma_p=0.3)
        ok = True
        probe = gen_collection(1, 500, seed=99)[0].points
        for method, kw in (("exact_dual", {}), ("rff_linear", {"L": 128, "Q": 128}),
                           ("nystrom_linear", {"n_landmarks": 30}),
                           ("pooling_exact", {}), ("pooling_linear", {"L": 128})):
            model = train(coll, spec, 1e-3, method=method, seed=8, **kw)
            path = tmp_path / f"{method}.json"
            save_model(model, path)
            ok &= bool(np.array_equal(predict_bag(model, probe),
                                      predict_bag(load_model(path), probe)))
        criterion("7b save/load round trip predicts identically on a 500-point probe", ok)


class TestCriterion8RegressionIngestion:
    def test_csv_round_trip_and_regression_beats_zero_predictor(self, tmp_path):
        # heteroscedastic tasks: the label is the task's spread, readable only
        # from the marginal
        rng = np.random.default_rng(60)
        bags = []
        for i in range(12):
            s = rng.uniform(0.5, 2.0)
            pts = rng.normal(scale=s, size=(25, 2))
            bags.append(Bag(f"t{i}", pts, labels=np.full(25, s)))
        coll = BagCollection(bags)
        path = tmp_path / "regress.csv"
        write_bags(coll, path)
        back = read_bags(path)
        round_trip_ok = all(
            np.array_equal(b1.points, b2.points) and np.array_equal(b1.labels, b2.labels)
            for b1, b2 in zip(coll, back)
        )
        train_bags, test_bags = back.bags[:9], back.bags[9:]
        model = train(train_bags, KernelSpec(sigma_x=1.0, sigma_xp=1.0, sigma_p=0.5),
                      1e-4, loss_kind="eps_insensitive", method="rff_linear",
                      L=512, Q=512, eps=0.05, seed=2)
        report = evaluate(model, test_bags)
        zero_rmse = float(np.mean([np.sqrt(np.mean(b.labels**2)) for b in test_bags]))
        criterion("8 regression via CSV round trip beats the zero predictor",
                  round_trip_ok and report.rmse < zero_rmse,
                  f"rmse={report.rmse:.3f} vs zero={zero_rmse:.3f}")
