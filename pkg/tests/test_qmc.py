import numpy as np
import pytest

from conftest import make_linear_gaussian_1d, random_spd
from mixenkf import (
    GaussianMixture,
    QmcScheme,
    SchemeSpec,
    SpdMatrix,
    filter_step,
    initial_ensemble,
    inv_norm_cdf,
    owen_scramble,
    run_tqmc_filter,
    sobol,
    tqmc_filter_step,
    transport_to_mixture,
)
from mixenkf.errors import DimensionMismatch, OutOfDomain, UnsupportedDimension
from mixenkf.filters import WeightedEnsemble
from mixenkf.qmc import scrambled_sobol, tqmc_sample
from mixenkf.seeding import rng_from


def dyadic_counts(values, n_bins):
    return np.bincount(
        np.minimum((values * n_bins).astype(int), n_bins - 1), minlength=n_bins
    )


class TestSobol:
    def test_1d_prefix(self):
        pts = sobol(4, 1).points.ravel()
        np.testing.assert_array_equal(pts, [0.5, 0.75, 0.25, 0.375])

    def test_matches_scipy_reference(self):
        from scipy.stats import qmc as sqmc
        import warnings

        for dim in (1, 2, 5, 13, 40):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ref = sqmc.Sobol(d=dim, scramble=False).random(33)[1:]
            ours = sobol(32, dim).points
            np.testing.assert_array_equal(ours, ref)

    def test_points_in_open_unit_interval(self):
        pts = sobol(64, 8).points
        assert pts.min() > 0.0 and pts.max() < 1.0

    def test_net_balance_2d(self):
        pts = sobol(2**10, 2).points
        # axis 0: dropping the zero index swaps two points inside the lowest
        # stratum, so counts stay exact
        counts0 = dyadic_counts(pts[:, 0], 2**5)
        np.testing.assert_array_equal(counts0, np.full(2**5, 2**5))
        # higher axes: the swap moves one point across strata (at most +-1)
        counts1 = dyadic_counts(pts[:, 1], 2**5)
        assert np.abs(counts1 - 2**5).max() <= 1

    def test_net_balance_aligned_block(self):
        # restoring the zero point recovers the exact net balance on every
        # axis: the generator itself is perfectly stratified
        pts = sobol(2**10, 2).points[:-1]  # indices 1..1023
        block = np.vstack([np.zeros((1, 2)), pts])  # indices 0..1023
        for axis in range(2):
            counts = dyadic_counts(block[:, axis], 2**5)
            np.testing.assert_array_equal(counts, np.full(2**5, 2**5))

    def test_dimension_limit(self):
        with pytest.raises(UnsupportedDimension):
            sobol(8, 65)
        assert sobol(8, 64).dim == 64

    def test_power_of_two_required(self):
        with pytest.raises(ValueError):
            sobol(100, 2)


class TestOwenScramble:
    def test_seed_deterministic(self):
        base = sobol(128, 3)
        a = owen_scramble(base, 42)
        b = owen_scramble(base, 42)
        np.testing.assert_array_equal(a.points, b.points)
        assert a.scramble_seed == 42

    def test_different_seeds_same_stratification(self):
        base = sobol(2**8, 2)
        a = owen_scramble(base, 1)
        b = owen_scramble(base, 2)
        assert not np.array_equal(a.points, b.points)
        # axis 0 keeps exact stratification for every seed (the swapped pair
        # shares its leading digits with the scrambled zero point)
        np.testing.assert_array_equal(
            dyadic_counts(a.points[:, 0], 16), np.full(16, 16)
        )
        np.testing.assert_array_equal(
            dyadic_counts(b.points[:, 0], 16), np.full(16, 16)
        )
        # higher axes stay balanced up to the one swapped point
        for scr in (a, b):
            assert np.abs(dyadic_counts(scr.points[:, 1], 16) - 16).max() <= 1

    def test_mean_near_half(self):
        pts = scrambled_sobol(2**12, 1, seed=7).points.ravel()
        assert abs(pts.mean() - 0.5) <= 2.0**-12

    def test_marginal_uniformity(self):
        # pooled over seeds, each 1/16 cell receives its share of points
        counts = np.zeros(16)
        for seed in range(8):
            pts = scrambled_sobol(2**8, 1, seed).points.ravel()
            counts += dyadic_counts(pts, 16)
        np.testing.assert_array_equal(counts, np.full(16, 8 * 2**8 / 16))


class TestInvNormCdf:
    def test_median(self):
        assert inv_norm_cdf(0.5) == 0.0

    def test_high_precision_reference(self):
        assert inv_norm_cdf(0.975) == pytest.approx(1.959964, abs=1e-6)
        from scipy.special import ndtri

        u = np.linspace(1e-8, 1 - 1e-8, 10_001)
        np.testing.assert_allclose(inv_norm_cdf(u), ndtri(u), atol=1e-9)

    def test_round_trip(self):
        from scipy.special import erf

        u = np.linspace(1e-6, 1 - 1e-6, 10_000)
        x = inv_norm_cdf(u)
        forward = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
        np.testing.assert_allclose(forward, u, atol=1e-9)

    def test_domain(self):
        for bad in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(OutOfDomain):
                inv_norm_cdf(bad)


class TestTransport:
    def test_single_component_exact_map(self):
        cov = SpdMatrix(np.array([[2.0, 0.3], [0.3, 1.0]]))
        mean = np.array([1.0, -2.0])
        mix = GaussianMixture(mean[None, :], cov, np.array([1.0]))
        pts = scrambled_sobol(64, 3, seed=5)
        out = transport_to_mixture(pts, mix)
        expected = mean + inv_norm_cdf(pts.points[:, 1:]) @ cov.chol.T
        np.testing.assert_allclose(out, expected, rtol=1e-12)

    def test_equal_weight_two_component_counts(self):
        cov = SpdMatrix([[1.0]])
        mix = GaussianMixture(np.array([[-10.0], [10.0]]), cov)
        for seed in (0, 1, 2):
            out = transport_to_mixture(scrambled_sobol(2**8, 2, seed), mix)
            n_left = int((out < 0).sum())
            assert n_left == 2**7

    def test_dyadic_weight_counts_exact(self):
        cov = SpdMatrix([[1.0]])
        means = np.array([[-30.0], [0.0], [30.0]])
        weights = np.array([1 / 8, 3 / 8, 4 / 8])
        mix = GaussianMixture(means, cov, weights)
        n = 2**7
        out = transport_to_mixture(scrambled_sobol(n, 2, seed=3), mix)
        counts = [
            int((out < -15).sum()),
            int(((out >= -15) & (out < 15)).sum()),
            int((out >= 15).sum()),
        ]
        assert counts == [n // 8, 3 * n // 8, n // 2]

    def test_dimension_check(self):
        mix = GaussianMixture(np.zeros((2, 2)), SpdMatrix(np.eye(2)))
        with pytest.raises(DimensionMismatch):
            transport_to_mixture(sobol(16, 2), mix)

    def test_mean_error_beats_iid(self):
        cov = SpdMatrix(np.array([[1.0, 0.2], [0.2, 0.5]]))
        mix = GaussianMixture(
            np.array([[0.0, 0.0], [2.0, 1.0]]), cov, np.array([0.5, 0.5])
        )
        target = mix.mean
        n = 2**12
        qmc_errs, iid_errs = [], []
        for seed in range(20):
            out = tqmc_sample(mix, n, seed)
            qmc_errs.append(np.linalg.norm(out.mean(axis=0) - target))
            rng = rng_from(seed, "iid")
            comp = rng.random(n) < 0.5
            z = rng.standard_normal((n, 2)) @ cov.chol.T
            iid = np.where(comp[:, None], mix.means[0], mix.means[1]) + z
            iid_errs.append(np.linalg.norm(iid.mean(axis=0) - target))
        assert np.median(qmc_errs) < np.median(iid_errs) / 3.0

    def test_covariance_error_slope(self):
        cov_mat = random_spd(np.random.default_rng(0), 2)
        cov = SpdMatrix(cov_mat)
        mix = GaussianMixture(np.zeros((1, 2)), cov, np.array([1.0]))
        ns = 2 ** np.arange(6, 13)
        errs = []
        for n in ns:
            seed_errs = []
            for seed in range(5):
                out = tqmc_sample(mix, int(n), seed)
                emp = np.cov(out.T, ddof=1)
                seed_errs.append(np.linalg.norm(emp - cov_mat))
            errs.append(np.median(seed_errs))
        slope = np.polyfit(np.log(ns.astype(float)), np.log(errs), 1)[0]
        assert slope <= -0.6


class TestTqmcFilter:
    def test_scheme_parsing(self):
        for name in ("QMC-BPF", "QMC-EnKF_c", "QMC-EnKF_p", "QMC-MM_c", "QMC-MM_p"):
            assert QmcScheme.parse(name).label == name
        with pytest.raises(ValueError):
            QmcScheme.parse("QMC-II_c")

    def test_weights_sum_to_one(self):
        model = make_linear_gaussian_1d()
        sums = run_tqmc_filter(
            QmcScheme.parse("QMC-MM_c"), model, np.array([[0.5], [1.0]]), 64, 5
        )
        for s in sums:
            assert s.analysis.weights.sum() == pytest.approx(1.0, abs=1e-10)

    def test_same_seed_bitwise_identical(self):
        model = make_linear_gaussian_1d()
        ys = np.array([[0.5]])
        a = run_tqmc_filter(QmcScheme.parse("QMC-MM_p"), model, ys, 128, 9)
        b = run_tqmc_filter(QmcScheme.parse("QMC-MM_p"), model, ys, 128, 9)
        np.testing.assert_array_equal(
            a[0].analysis.particles, b[0].analysis.particles
        )
        np.testing.assert_array_equal(
            a[0].analysis.log_weights, b[0].analysis.log_weights
        )

    def test_enkf_weights_uniform(self):
        model = make_linear_gaussian_1d()
        sums = run_tqmc_filter(
            QmcScheme.parse("QMC-EnKF_p"), model, np.array([[0.3]]), 64, 2
        )
        assert sums[0].ess == 64.0
        assert sums[0].weight_cv_sq == 0.0

    def test_qmc_enkf_beats_iid_enkf(self):
        # paired seeds, one analysis step on the scalar model
        model = make_linear_gaussian_1d()
        y = np.array([1.2])
        n = 2**12
        from conftest import kalman_oracle

        m_exact, _ = kalman_oracle([1.2])[0]
        wins = 0
        for seed in range(20):
            qmc_sums = run_tqmc_filter(
                QmcScheme.parse("QMC-EnKF_p"), model, y[None, :], n, seed
            )
            qmc_err = abs(qmc_sums[0].analysis.mean()[0] - m_exact)
            rng = rng_from(seed, "mc")
            state = initial_ensemble(model, n, rng)
            _, mc_sum = filter_step(SchemeSpec.parse("EnKF"), state, y, model, rng)
            mc_err = abs(mc_sum.analysis.mean()[0] - m_exact)
            wins += qmc_err < mc_err
        assert wins >= 16

    def test_previous_scheme_requires_linear(self):
        from mixenkf import build_benchmark
        from mixenkf.errors import RequiresLinearObservation

        model = build_benchmark("lorenz63", "arctan")
        state = WeightedEnsemble.equal(np.zeros((16, 3)))
        with pytest.raises(RequiresLinearObservation):
            tqmc_filter_step(
                QmcScheme.parse("QMC-MM_p"), state, np.zeros(3), model, 0
            )

    def test_weighted_history_enters_mixture(self):
        # with a non-uniform previous ensemble the forecast mixture must use
        # the weights: moving weight onto one particle moves the forecast
        model = make_linear_gaussian_1d(a=1.0)
        particles = np.array([[-5.0], [5.0]] * 8)
        lw = np.log(np.array([0.999, 0.001] * 8) / 8)
        state = WeightedEnsemble(particles, lw - np.log(np.exp(lw).sum()))
        out, _ = tqmc_filter_step(
            QmcScheme.parse("QMC-EnKF_p"), state, np.array([-5.0]), model, 3
        )
        assert out.particles.mean() < 0.0
