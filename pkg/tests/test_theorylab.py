from fractions import Fraction

import numpy as np
import pytest

from conftest import random_spd
from mixenkf import SpdMatrix
from mixenkf.errors import AbsoluteContinuityViolated, IncompatibleInput
from mixenkf.gauss import log_gaussian_density
from mixenkf.theorylab import (
    ESTIMATOR_KINDS,
    DiscreteISInstance,
    check_matrix_identities,
    enkf_matrices,
    estimator_variance_table,
    exact_estimator_mean_var,
    filtering_component,
    log_mixture_evidence,
    quadratic_difference_decomposition,
    ratio_bound_terms,
    theory_report,
    weight_upper_bound,
)

F = Fraction


def example_one() -> DiscreteISInstance:
    return DiscreteISInstance(
        targets=((F(1, 10), F(9, 10)), (F(2, 5), F(3, 5))),
        proposals=((F(3, 10), F(7, 10)), (F(1, 5), F(4, 5))),
        g=(F(1), F(1)),
    )


def example_two() -> DiscreteISInstance:
    return DiscreteISInstance(
        targets=((F(4, 5), F(1, 5)), (F(1, 2), F(1, 2))),
        proposals=((F(2, 3), F(1, 3)), (F(1, 3), F(2, 3))),
        g=(F(1), F(2)),
    )


def random_instance(rng, n=2, s=2, denom=8) -> DiscreteISInstance:
    def vec():
        # strictly positive entries so absolute continuity always holds
        raw = rng.integers(1, denom, size=s)
        return tuple(F(int(v), int(raw.sum())) for v in raw)

    g = tuple(F(int(v), 4) for v in rng.integers(-8, 9, size=s))
    return DiscreteISInstance(
        targets=tuple(vec() for _ in range(n)),
        proposals=tuple(vec() for _ in range(n)),
        g=g,
    )


class TestDiscreteEstimators:
    def test_example_one_exact(self):
        table = estimator_variance_table(example_one())
        assert table["II"] == F(37, 336)
        assert table["IM"] == F(3, 50)
        assert table["MI"] == F(37, 5376)
        assert table["MM"] == F(0)
        assert table["MMstr"] == F(0)

    def test_example_two_exact(self):
        table = estimator_variance_table(example_two())
        assert table["MI"] == F(369, 3200)
        assert table["IM"] == F(41, 400)
        assert table["MM"] == F(1, 800)
        assert table["MMstr"] == F(1, 900)
        assert table["II"] == F(0)

    def test_unbiasedness_exact(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            inst = random_instance(rng, n=int(rng.integers(2, 4)),
                                   s=int(rng.integers(2, 4)))
            expected = inst.target_mean()
            for kind in ESTIMATOR_KINDS:
                mean, var = exact_estimator_mean_var(inst, kind)
                assert mean == expected
                assert var >= 0

    def test_ordering_holds(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            table = estimator_variance_table(random_instance(rng))
            assert table["MMstr"] <= table["MM"]
            assert table["MM"] <= min(table["IM"], table["MI"])

    def test_matched_proposals_reduce_to_stratified_mc(self):
        # proposals equal to targets: the individual-individual and the
        # stratified mixture-mixture estimators are plain stratified MC
        rng = np.random.default_rng(3)
        for _ in range(10):
            inst = random_instance(rng, n=2, s=3)
            matched = DiscreteISInstance(
                targets=inst.targets, proposals=inst.targets, g=inst.g
            )
            strat_var = sum(
                (
                    sum(p[x] * matched.g[x] ** 2 for x in range(3))
                    - sum(p[x] * matched.g[x] for x in range(3)) ** 2
                )
                for p in matched.targets
            ) / Fraction(4)
            assert exact_estimator_mean_var(matched, "II")[1] == strat_var
            assert exact_estimator_mean_var(matched, "MMstr")[1] == strat_var
            assert exact_estimator_mean_var(matched, "II")[0] == matched.target_mean()

    def test_no_further_ordering_witnessed(self):
        # the two worked two-point examples plus random search: every pair
        # not covered by the proven chain admits both strict directions
        rng = np.random.default_rng(5)
        unordered_pairs = [
            ("II", "MI"),
            ("II", "IM"),
            ("II", "MM"),
            ("II", "MMstr"),
            ("MI", "IM"),
        ]
        found = {(a, b, d): False for a, b in unordered_pairs for d in ("<", ">")}

        def scan(table):
            for a, b in unordered_pairs:
                if table[a] < table[b]:
                    found[(a, b, "<")] = True
                if table[a] > table[b]:
                    found[(a, b, ">")] = True

        scan(estimator_variance_table(example_one()))
        scan(estimator_variance_table(example_two()))
        for _ in range(60):
            if all(found.values()):
                break
            scan(estimator_variance_table(random_instance(rng)))
        assert all(found.values()), [k for k, v in found.items() if not v]

    def test_absolute_continuity_check(self):
        with pytest.raises(AbsoluteContinuityViolated):
            DiscreteISInstance(
                targets=((F(1, 2), F(1, 2)),),
                proposals=((F(1), F(0)),),
                g=(F(1), F(1)),
            )

    def test_float_inputs_still_exact(self):
        inst = DiscreteISInstance(
            targets=((0.5, 0.5), (0.25, 0.75)),
            proposals=((0.5, 0.5), (0.5, 0.5)),
            g=(1.0, 2.0),
        )
        mean, _ = exact_estimator_mean_var(inst, "MM")
        assert mean == inst.target_mean()


class TestMatrixIdentities:
    def test_identity_matrices_hand_values(self):
        q = SpdMatrix(np.eye(2))
        r = SpdMatrix(np.eye(2))
        mats = enkf_matrices(q, r, np.eye(2), np.zeros((2, 2)))
        np.testing.assert_allclose(mats.s, 2 * np.eye(2))
        np.testing.assert_allclose(mats.k, 0.5 * np.eye(2))
        np.testing.assert_allclose(mats.sigma, 0.5 * np.eye(2))
        # determinant identity: det(sigma) det(s) = det(q) det(r)
        assert np.linalg.det(mats.sigma) * np.linalg.det(mats.s) == pytest.approx(1.0)

    def test_zero_prev_cov_zero_deltas(self):
        q = SpdMatrix(np.diag([1.0, 2.0]))
        r = SpdMatrix([[0.5]])
        mats = enkf_matrices(q, r, np.array([[1.0, 0.0]]), np.zeros((2, 2)))
        np.testing.assert_array_equal(mats.delta_k, np.zeros((2, 1)))
        np.testing.assert_array_equal(mats.delta_sigma, np.zeros((2, 2)))

    def test_residuals_on_random_instances(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            d = int(rng.integers(1, 6))
            m = int(rng.integers(1, 6))
            q = SpdMatrix(random_spd(rng, d))
            r = SpdMatrix(random_spd(rng, m))
            h = rng.standard_normal((m, d))
            w = rng.standard_normal((d, d))
            residuals = check_matrix_identities(q, r, h, w @ w.T)
            assert max(residuals.values()) < 1e-10


class TestFilteringComponent:
    def test_zero_innovation(self):
        q = SpdMatrix(np.diag([1.0, 2.0]))
        r = SpdMatrix(np.diag([0.5, 0.5]))
        h = np.eye(2)
        z = np.array([0.3, -0.4])
        log_mass, post = filtering_component(z, h @ z, h, q, r)
        s = h @ q.entries @ h.T + r.entries
        expected = 0.5 * (np.log(np.linalg.det(r.entries)) - np.log(np.linalg.det(s)))
        assert log_mass == pytest.approx(expected, rel=1e-12)
        np.testing.assert_allclose(post.mean, z, atol=1e-14)

    def test_scalar_hand_values(self):
        q = SpdMatrix([[1.0]])
        r = SpdMatrix([[1.0]])
        log_mass, post = filtering_component([0.0], [2.0], [[1.0]], q, r)
        assert log_mass == pytest.approx(0.5 * np.log(0.5) - 1.0)
        assert post.mean[0] == pytest.approx(1.0)
        assert post.cov.entries[0, 0] == pytest.approx(0.5)

    def test_against_quadrature(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            qv = float(rng.uniform(0.2, 3.0))
            rv = float(rng.uniform(0.2, 3.0))
            hv = float(rng.uniform(-2.0, 2.0))
            if abs(hv) < 0.1:
                hv = 0.5
            z = float(rng.normal())
            y = float(rng.normal())
            q, r = SpdMatrix([[qv]]), SpdMatrix([[rv]])
            log_mass, post = filtering_component([z], [y], [[hv]], q, r)
            sd = np.sqrt(max(qv, post.cov.entries[0, 0]))
            xs = np.linspace(
                min(z, post.mean[0]) - 12 * sd, max(z, post.mean[0]) + 12 * sd, 60001
            )
            lik = np.exp(-0.5 * (y - hv * xs) ** 2 / rv)
            prior = np.exp(
                -0.5 * np.log(2 * np.pi * qv) - 0.5 * (xs - z) ** 2 / qv
            )
            integrand = lik * prior
            mass = np.trapezoid(integrand, xs)
            mean = np.trapezoid(xs * integrand, xs) / mass
            var = np.trapezoid((xs - mean) ** 2 * integrand, xs) / mass
            assert np.exp(log_mass) == pytest.approx(mass, rel=1e-8)
            assert post.mean[0] == pytest.approx(mean, abs=1e-6)
            assert post.cov.entries[0, 0] == pytest.approx(var, abs=1e-6)


class TestWeightBound:
    def test_zero_spread_unit_bound(self):
        q = SpdMatrix(np.eye(2))
        r = SpdMatrix(np.eye(2))
        z = np.tile([1.0, 2.0], (6, 1))
        y = z[0]  # exact observation of the common image
        assert weight_upper_bound(z, y, np.eye(2), q, r) == pytest.approx(1.0)

    def test_monotone_in_innovation(self):
        q = SpdMatrix([[1.0]])
        r = SpdMatrix([[1.0]])
        z = np.array([[0.0], [1.0]])
        bounds = [
            weight_upper_bound(z, [y], [[1.0]], q, r) for y in (0.5, 2.0, 5.0)
        ]
        assert bounds[0] < bounds[1] < bounds[2]

    def test_scalar_hand_value(self):
        q = SpdMatrix([[1.0]])
        r = SpdMatrix([[1.0]])
        z = np.array([[0.0], [2.0]])
        y = 1.0
        # prev covariance: var{0,2}=2, +Q -> 3; S = 2; innovations +-1
        expected = np.sqrt(3.0) / np.exp(-0.5 * 1.0 / 2.0)
        got = weight_upper_bound(z, [y], [[1.0]], q, r)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_evidence_matches_component_masses(self):
        rng = np.random.default_rng(4)
        q, r = SpdMatrix([[0.7]]), SpdMatrix([[0.4]])
        z = rng.normal(size=(5, 1))
        y = [0.3]
        masses = [
            filtering_component(zi, y, [[1.0]], q, r)[0] for zi in z
        ]
        from mixenkf.gauss import log_sum_exp

        expected = log_sum_exp(np.array(masses)) - np.log(5)
        assert log_mixture_evidence(z, y, [[1.0]], q, r) == pytest.approx(
            expected, rel=1e-12
        )


class TestQuadraticDifference:
    def test_equal_centers(self):
        a_mat = np.eye(2)
        b_mat = 2.0 * np.eye(2)
        b = np.array([0.5, -0.5])
        u, c = quadratic_difference_decomposition(a_mat, b_mat, b, b, np.zeros(2))
        np.testing.assert_allclose(u, b)
        assert c == pytest.approx(0.0)

    def test_scalar_hand_values(self):
        u, c = quadratic_difference_decomposition(
            np.eye(1), 2.0 * np.eye(1), [0.0], [1.0], [1.0]
        )
        assert u[0] == pytest.approx(-1.0)
        assert c == pytest.approx(-1.0)
        # spot check the identity at x = 0
        lhs = 0.0 - 0.5 * 1.0
        rhs = (0.0 - (-1.0)) ** 2 * (1.0 - 0.5) + c
        assert lhs == pytest.approx(rhs)

    def test_incompatible_rejected(self):
        with pytest.raises(IncompatibleInput):
            quadratic_difference_decomposition(
                np.eye(1), 2.0 * np.eye(1), [0.0], [1.0], [0.0]
            )

    def test_identity_on_random_instances(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            a_mat = random_spd(rng, 3)
            b_mat = a_mat + 0.5 * random_spd(rng, 3)
            a = rng.normal(size=3)
            v = rng.normal(size=3)
            b = a + (b_mat - a_mat) @ v
            u, c = quadratic_difference_decomposition(a_mat, b_mat, a, b, v)
            ai = np.linalg.inv(a_mat)
            bi = np.linalg.inv(b_mat)
            for _ in range(20):
                x = rng.normal(size=3)
                lhs = (x - a) @ ai @ (x - a) - (x - b) @ bi @ (x - b)
                rhs = (x - u) @ (ai - bi) @ (x - u) + c
                assert lhs == pytest.approx(rhs, abs=1e-8)


class TestRatioBoundAttainment:
    def _log_ratio(self, mats, z, y, x, q):
        innov = y - mats.h @ z
        m_hat = z + mats.k @ innov
        m_prop = z + mats.k_t @ innov
        s_chol = np.linalg.cholesky(mats.s)
        white = np.linalg.solve(s_chol, innov)
        _, logdet_r = np.linalg.slogdet(mats.r)
        _, logdet_s = np.linalg.slogdet(mats.s)
        log_mass = 0.5 * (logdet_r - logdet_s) - 0.5 * white @ white
        log_p = log_mass + log_gaussian_density(
            x, _gaussian(m_hat, mats.sigma)
        )
        log_q = log_gaussian_density(x, _gaussian(m_prop, mats.sigma_t))
        return log_p - log_q

    def test_equality_with_full_rank(self):
        rng = np.random.default_rng(9)
        q = SpdMatrix(random_spd(rng, 3))
        r = SpdMatrix(random_spd(rng, 3))
        h = rng.standard_normal((3, 3))  # full row rank a.s.
        prev = rng.standard_normal((10, 3))
        prev_cov = np.cov(prev.T, ddof=1)  # positive definite for n > d
        mats = enkf_matrices(q, r, h, prev_cov)
        z = rng.normal(size=3)
        y = rng.normal(size=3)
        terms = ratio_bound_terms(mats, z, y)
        assert terms.gap == pytest.approx(0.0, abs=1e-8)
        for _ in range(5):
            x = rng.normal(size=3)
            direct = self._log_ratio(mats, z, y, x, q)
            bound = terms.log_prefactor - 0.5 * (x - terms.u) @ terms.quad @ (
                x - terms.u
            )
            assert direct == pytest.approx(bound, abs=1e-8)

    def test_strict_with_rank_deficient_map(self):
        rng = np.random.default_rng(10)
        q = SpdMatrix(random_spd(rng, 3))
        r = SpdMatrix(random_spd(rng, 3))
        row = rng.standard_normal(3)
        h = np.vstack([row, row, rng.standard_normal(3)])  # rank 2
        prev = rng.standard_normal((10, 3))
        mats = enkf_matrices(q, r, h, np.cov(prev.T, ddof=1))
        z = rng.normal(size=3)
        y = rng.normal(size=3)
        terms = ratio_bound_terms(mats, z, y)
        assert terms.gap > 1e-9
        x = rng.normal(size=3)
        direct = self._log_ratio(mats, z, y, x, q)
        bound = terms.log_prefactor - 0.5 * (x - terms.u) @ terms.quad @ (x - terms.u)
        assert direct < bound - 1e-10


def _gaussian(mean, cov):
    from mixenkf.gauss import GaussianComponent

    return GaussianComponent(mean, SpdMatrix(0.5 * (cov + cov.T)))


class TestTheoryReport:
    def test_all_lines_pass(self):
        report = theory_report(n_random=10, seed=1)
        lines = [line for line in report.strip().splitlines()]
        assert lines and all(line.startswith("PASS") for line in lines)
