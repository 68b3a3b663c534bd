import math

import numpy as np
import pytest

from margokit import (
    Bag,
    KernelSpec,
    NumericalError,
    UsageError,
    approx_error_stats,
    base_kernel,
    embed_bag_rff,
    fit_nystrom,
    gram_matrix,
    product_feature,
    product_kernel,
    rff_transform,
    sample_product_rff,
    sample_rff,
    theorem_bound,
)
from conftest import random_bag, random_extended_points

SPEC = KernelSpec()


class TestSampleRff:
    def test_deterministic(self):
        m1 = sample_rff(42, 16, 1.5, 3)
        m2 = sample_rff(42, 16, 1.5, 3)
        assert np.array_equal(m1.frequencies, m2.frequencies)

    def test_seed_changes_output(self):
        assert not np.array_equal(
            sample_rff(1, 16, 1.0, 2).frequencies, sample_rff(2, 16, 1.0, 2).frequencies
        )

    def test_frequency_variance(self):
        m = sample_rff(7, 100_000, 2.0, 1)
        assert float(np.var(m.frequencies)) == pytest.approx(0.25, abs=0.01)

    def test_rejects_bad_args(self):
        with pytest.raises(UsageError):
            sample_rff(0, 0, 1.0, 2)
        with pytest.raises(UsageError):
            sample_rff(0, 4, -1.0, 2)


class TestRffTransform:
    def test_zero_point_layout(self):
        m = sample_rff(0, 8, 1.0, 2)
        z = rff_transform(m, [0.0, 0.0])
        expected = np.zeros(16)
        expected[0::2] = 1.0 / math.sqrt(8)
        assert np.allclose(z, expected, atol=1e-15)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_unit_norm(self, seed):
        rng = np.random.default_rng(seed)
        m = sample_rff(seed, 33, 0.7, 4)
        z = rff_transform(m, rng.normal(size=4))
        assert float(z @ z) == pytest.approx(1.0, abs=1e-12)

    def test_kernel_approximation(self):
        # 100 random pairs in [0,1]^3, L=4096, sigma=1
        rng = np.random.default_rng(3)
        m = sample_rff(99, 4096, 1.0, 3)
        worst = 0.0
        for _ in range(100):
            x, y = rng.uniform(size=3), rng.uniform(size=3)
            approx = float(rff_transform(m, x) @ rff_transform(m, y))
            worst = max(worst, abs(approx - base_kernel("gaussian", 1.0, x, y)))
        assert worst <= 0.08

    def test_inner_product_symmetry(self):
        rng = np.random.default_rng(5)
        m = sample_rff(5, 64, 1.0, 3)
        x, y = rng.normal(size=3), rng.normal(size=3)
        zx, zy = rff_transform(m, x), rff_transform(m, y)
        assert float(zx @ zy) == pytest.approx(float(zy @ zx), abs=1e-12)

    def test_dimension_mismatch(self):
        m = sample_rff(0, 4, 1.0, 2)
        with pytest.raises(Exception):
            rff_transform(m, [1.0, 2.0, 3.0])


class TestEmbedBagRff:
    def test_singleton_equals_transform(self, rng):
        m = sample_rff(11, 32, 1.0, 2)
        x = rng.normal(size=2)
        bag = Bag("s", x.reshape(1, -1))
        assert np.array_equal(embed_bag_rff(m, bag), rff_transform(m, x))

    def test_singleton_self_inner_is_one(self, rng):
        m = sample_rff(11, 32, 1.0, 2)
        z = embed_bag_rff(m, Bag("s", rng.normal(size=(1, 2))))
        assert float(z @ z) == pytest.approx(1.0, abs=1e-12)

    def test_matches_embedding_inner(self):
        # the worked pair, L=8192, tolerance 0.02
        m = sample_rff(123, 8192, 1.0, 1)
        za = embed_bag_rff(m, Bag("a", [[0.0]]))
        zb = embed_bag_rff(m, Bag("b", [[0.0], [1.0]]))
        assert float(za @ zb) == pytest.approx(0.803265, abs=0.02)

    def test_chunked_embedding_matches_direct(self, rng):
        m = sample_rff(4, 16, 1.0, 2)
        pts = rng.normal(size=(50, 2))
        direct = m.transform(pts).mean(axis=0)
        chunked = m.embed_bag(pts, chunk=7)
        assert np.allclose(direct, chunked, atol=1e-14)


class TestProductFeature:
    def test_unit_norm_and_self_inner(self, rng):
        pm = sample_product_rff(21, 64, 64, SPEC, 2)
        bag = random_bag(rng, 5, 2)
        z = product_feature(pm, bag, rng.normal(size=2))
        assert float(z @ z) == pytest.approx(1.0, abs=1e-12)

    def test_matches_product_kernel(self):
        pm = sample_product_rff(77, 8192, 8192, SPEC, 1)
        za = product_feature(pm, Bag("a", [[0.0]]), [0.0])
        zb = product_feature(pm, Bag("b", [[0.0], [1.0]]), [1.0])
        exact = product_kernel((Bag("a", [[0.0]]), [0.0]), (Bag("b", [[0.0], [1.0]]), [1.0]), SPEC)
        assert float(za @ zb) == pytest.approx(exact, abs=0.03)

    def test_large_sigma_p_reduces_to_point_kernel(self, rng):
        spec = KernelSpec(sigma_p=1e6)
        pm = sample_product_rff(31, 4096, 4096, spec, 2)
        bag_a, bag_b = random_bag(rng, 6, 2, "a"), random_bag(rng, 6, 2, "b")
        for _ in range(5):
            xa, xb = rng.uniform(size=2), rng.uniform(size=2)
            za = product_feature(pm, bag_a, xa)
            zb = product_feature(pm, bag_b, xb)
            assert float(za @ zb) == pytest.approx(
                base_kernel("gaussian", spec.sigma_x, xa, xb), abs=0.03
            )

    def test_requires_all_gaussian(self):
        with pytest.raises(UsageError):
            sample_product_rff(0, 8, 8, KernelSpec(kx_kind="linear"), 2)
        with pytest.raises(UsageError):
            sample_product_rff(0, 8, 8, KernelSpec(kp_kind="linear_inner"), 2)

    def test_deterministic(self, rng):
        bag = random_bag(rng, 4, 2)
        x = rng.normal(size=2)
        z1 = product_feature(sample_product_rff(9, 32, 32, SPEC, 2), bag, x)
        z2 = product_feature(sample_product_rff(9, 32, 32, SPEC, 2), bag, x)
        assert np.array_equal(z1, z2)

    def test_unbiased_over_maps(self, rng):
        # statistical unbiasedness: mean over 200 maps within 3 standard errors
        pairs = []
        for i in range(20):
            pairs.append((
                random_bag(rng, 4, 2, f"a{i}"), rng.uniform(size=2),
                random_bag(rng, 4, 2, f"b{i}"), rng.uniform(size=2),
            ))
        exact = np.array([
            product_kernel((a, xa), (b, xb), SPEC) for (a, xa, b, xb) in pairs
        ])
        vals = np.empty((200, 20))
        for r in range(200):
            pm = sample_product_rff(5000 + r, 64, 64, SPEC, 2)
            for j, (a, xa, b, xb) in enumerate(pairs):
                vals[r, j] = float(product_feature(pm, a, xa) @ product_feature(pm, b, xb))
        mean = vals.mean(axis=0)
        se = vals.std(axis=0, ddof=1) / math.sqrt(200)
        assert np.all(np.abs(mean - exact) <= 3.0 * se + 1e-12)


class TestNystrom:
    def test_full_rank_exactness(self, rng):
        pts = random_extended_points(rng, 3, 4, 2)
        G = gram_matrix(pts, SPEC)
        nmap = fit_nystrom(pts, SPEC, m=len(pts), seed=0, eps_eig=0.0)
        Z = np.vstack([nmap.transform_bag(b.points, x.reshape(1, -1)) for b, x in pts])
        assert np.max(np.abs(Z @ Z.T - G)) <= 1e-6

    def test_single_landmark_formula(self, rng):
        pts = random_extended_points(rng, 2, 3, 2)
        nmap = fit_nystrom(pts, SPEC, m=1, seed=3, eps_eig=0.0)
        lm_bag = nmap.landmark_bags[nmap.landmark_bag_idx[0]]
        lm_x = nmap.landmark_x[0]
        bag, x = pts[0]
        z = nmap.transform_bag(bag.points, x.reshape(1, -1))[0]
        k_x_lm = product_kernel((bag, x), (lm_bag, lm_x), SPEC)
        k_lm_lm = product_kernel((lm_bag, lm_x), (lm_bag, lm_x), SPEC)
        assert abs(z[0]) == pytest.approx(k_x_lm / math.sqrt(k_lm_lm), abs=1e-10)

    def test_rank_deficient_duplicates(self, rng):
        bag = random_bag(rng, 4, 2)
        x = rng.normal(size=2)
        pts = [(bag, x)] * 4  # identical landmarks: rank 1
        nmap = fit_nystrom(pts, SPEC, m=4, seed=0)
        assert nmap.output_dim < 4

    def test_all_eigenvalues_dropped(self, rng):
        pts = random_extended_points(rng, 2, 2, 2)
        with pytest.raises(NumericalError):
            fit_nystrom(pts, SPEC, m=4, seed=0, eps_eig=2.0)

    def test_no_positive_eigenvalues(self):
        spec = KernelSpec(kx_kind="linear", kp_kind="constant")
        bag = Bag("z", [[0.0, 0.0]])
        with pytest.raises(NumericalError):
            fit_nystrom([(bag, np.zeros(2))], spec, m=1, seed=0)

    def test_bad_m(self, rng):
        pts = random_extended_points(rng, 1, 2, 2)
        with pytest.raises(UsageError):
            fit_nystrom(pts, SPEC, m=0, seed=0)
        with pytest.raises(UsageError):
            fit_nystrom(pts, SPEC, m=3, seed=0)


class TestTheoremBound:
    def test_first_term_worked_example(self):
        # Q eps_q^2 / 2 = 200 * 0.04 / 2 = 4; second term forced to ~0 by huge L
        v = theorem_bound(L=10**6, Q=200, eps_l=0.2, eps_q=0.2, sigma_p=1.0, n1=10, n2=10)
        assert v == pytest.approx(2.0 * math.exp(-4.0), rel=1e-9)
        assert v == pytest.approx(0.036631, abs=1e-6)

    def test_second_term(self):
        eps = 0.5 * math.log(1.2)
        expected = 2.0 * math.exp(-8.0) + 6.0 * 50 * math.exp(-128 * eps * eps / 2.0)
        assert theorem_bound(128, 4, 0.2, 2.0, 1.0, 5, 10) == pytest.approx(expected, rel=1e-12)

    def test_rejects_degenerate(self):
        with pytest.raises(UsageError):
            theorem_bound(0, 1, 0.1, 0.1, 1.0, 1, 1)
        with pytest.raises(UsageError):
            theorem_bound(1, 1, 0.0, 0.1, 1.0, 1, 1)


class TestApproxErrorStats:
    def test_degenerate_sizes_run(self):
        report = approx_error_stats(SPEC, L=1, Q=1, n_pairs=3, n_repeats=2, seed=0)
        assert len(report.rows) == 2
        assert report.rows[0].max_abs_err >= report.rows[0].mean_abs_err >= 0.0

    def test_exceedance_below_bound(self):
        report = approx_error_stats(
            SPEC, L=512, Q=512, n_pairs=10, n_repeats=10, seed=1, eps_l=0.4, eps_q=0.3
        )
        assert report.bound < 1.0
        assert report.exceed_frac <= report.bound

    def test_errors_shrink_with_more_features(self):
        small = approx_error_stats(SPEC, L=64, Q=64, n_pairs=10, n_repeats=20, seed=2)
        big = approx_error_stats(SPEC, L=256, Q=256, n_pairs=10, n_repeats=20, seed=2)
        assert big.median_max_err <= small.median_max_err

    def test_deterministic(self):
        r1 = approx_error_stats(SPEC, L=16, Q=16, n_pairs=4, n_repeats=3, seed=9)
        r2 = approx_error_stats(SPEC, L=16, Q=16, n_pairs=4, n_repeats=3, seed=9)
        assert r1 == r2
