"""Exact verification lab: discrete estimator variances, gain/covariance
matrix identities, the closed-form filtering component, and weight bounds.

The discrete part works over finite state spaces in exact rational
arithmetic (``fractions.Fraction``): estimator means and variances are
computed by full enumeration of all joint draw outcomes, so equalities and
orderings can be asserted with zero tolerance.  Float inputs are converted
to their exact binary rationals, so enumeration stays exact either way.

The matrix part checks, in floating point with tight residuals, the
identities tying together the exact-model analysis covariance, the
ensemble-estimated analysis covariance, and their Kalman gains; these
identities underpin the closed-form weight bound exposed here as well.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    AbsoluteContinuityViolated,
    DimensionMismatch,
    IncompatibleInput,
)
from .gauss import GaussianComponent, SpdMatrix, empirical_cov, log_sum_exp

ESTIMATOR_KINDS = ("II", "MI", "IM", "MM", "MMstr")


def _to_fraction_vector(values) -> tuple[Fraction, ...]:
    vec = tuple(Fraction(v) for v in values)
    total = sum(vec)
    if abs(total - 1) > Fraction(1, 10**14):
        raise ValueError("probability vector does not sum to 1 within 1e-14")
    return tuple(v / total for v in vec)


@dataclass(frozen=True)
class DiscreteISInstance:
    """N target/proposal pairs on a finite space, plus an integrand.

    ``targets`` and ``proposals`` are sequences of probability vectors of a
    common length S; ``g`` is a real vector of length S.  The mixture target
    must be absolutely continuous with respect to every proposal.
    """

    targets: tuple[tuple[Fraction, ...], ...]
    proposals: tuple[tuple[Fraction, ...], ...]
    g: tuple[Fraction, ...]

    def __post_init__(self):
        targets = tuple(_to_fraction_vector(p) for p in self.targets)
        proposals = tuple(_to_fraction_vector(q) for q in self.proposals)
        g = tuple(Fraction(v) for v in self.g)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "proposals", proposals)
        object.__setattr__(self, "g", g)
        if len(targets) != len(proposals):
            raise DimensionMismatch("need as many proposals as targets")
        sizes = {len(v) for v in targets} | {len(v) for v in proposals} | {len(g)}
        if len(sizes) != 1:
            raise DimensionMismatch("all vectors must share one state-space size")
        pmix = self.mixture_target
        for i, q in enumerate(proposals):
            for x in range(len(g)):
                if pmix[x] > 0 and q[x] == 0:
                    raise AbsoluteContinuityViolated(
                        f"proposal {i} has zero mass at state {x} "
                        "where the mixture target is positive"
                    )

    @property
    def n_components(self) -> int:
        return len(self.targets)

    @property
    def space_size(self) -> int:
        return len(self.g)

    @property
    def mixture_target(self) -> tuple[Fraction, ...]:
        n = self.n_components
        return tuple(
            sum(p[x] for p in self.targets) / n for x in range(self.space_size)
        )

    @property
    def mixture_proposal(self) -> tuple[Fraction, ...]:
        n = self.n_components
        return tuple(
            sum(q[x] for q in self.proposals) / n for x in range(self.space_size)
        )

    def target_mean(self) -> Fraction:
        """E[g] under the mixture target (the common estimand)."""
        return sum(p * v for p, v in zip(self.mixture_target, self.g))


def exact_estimator_mean_var(
    inst: DiscreteISInstance, kind: str
) -> tuple[Fraction, Fraction]:
    """Exact mean and variance of one of the five mixture IS estimators.

    Draw laws: the individual-proposal estimators (II, MI) and the
    stratified mixture-mixture estimator draw one point from each proposal
    independently; IM and MM draw all points i.i.d. from the proposal
    mixture.  Mean and variance come from full enumeration over all S^N
    joint outcomes in exact rational arithmetic.
    """
    if kind not in ESTIMATOR_KINDS:
        raise ValueError(f"unknown estimator kind {kind!r}")
    n, s = inst.n_components, inst.space_size
    pmix, qmix = inst.mixture_target, inst.mixture_proposal

    if kind in ("II", "MI", "MMstr"):
        draw_laws = inst.proposals
    else:
        draw_laws = tuple(qmix for _ in range(n))

    def term(i: int, x: int) -> Fraction:
        if kind == "II":
            num, den = inst.targets[i][x], inst.proposals[i][x]
        elif kind == "MI":
            num, den = pmix[x], inst.proposals[i][x]
        elif kind == "IM":
            num, den = inst.targets[i][x], qmix[x]
        else:  # MM, MMstr
            num, den = pmix[x], qmix[x]
        return num / den * inst.g[x]

    mean = Fraction(0)
    second = Fraction(0)
    inv_n = Fraction(1, n)
    for outcome in itertools.product(range(s), repeat=n):
        prob = Fraction(1)
        for i, x in enumerate(outcome):
            prob *= draw_laws[i][x]
        if prob == 0:
            continue
        value = inv_n * sum(term(i, x) for i, x in enumerate(outcome))
        mean += prob * value
        second += prob * value * value
    return mean, second - mean * mean


def estimator_variance_table(inst: DiscreteISInstance) -> dict[str, Fraction]:
    """Variance of all five estimator kinds on one instance."""
    return {kind: exact_estimator_mean_var(inst, kind)[1] for kind in ESTIMATOR_KINDS}


@dataclass(frozen=True)
class EnkfMatrixSet:
    """Exact-model and ensemble-estimated update matrices side by side.

    The exact-model block uses the process-noise covariance alone; the
    estimated block replaces it with (previous-ensemble covariance +
    process noise).  Note the estimated analysis covariance is still built
    around the process-noise covariance; only the gain changes.
    """

    h: np.ndarray
    q: np.ndarray
    r: np.ndarray
    q_t: np.ndarray
    s: np.ndarray
    s_t: np.ndarray
    k: np.ndarray
    k_t: np.ndarray
    sigma: np.ndarray
    sigma_t: np.ndarray

    @property
    def delta_q(self) -> np.ndarray:
        return self.q_t - self.q

    @property
    def delta_k(self) -> np.ndarray:
        return self.k_t - self.k

    @property
    def delta_sigma(self) -> np.ndarray:
        return self.sigma_t - self.sigma


def enkf_matrices(
    q: SpdMatrix, r: SpdMatrix, h: np.ndarray, prev_cov: np.ndarray
) -> EnkfMatrixSet:
    """Build all matrices entering the analysis-update identities."""
    h = np.asarray(h, dtype=float)
    d = q.dim
    prev_cov = np.zeros((d, d)) if prev_cov is None else np.asarray(prev_cov, float)
    q_mat, r_mat = q.entries, r.entries
    q_t = prev_cov + q_mat

    def gain_and_cov(qc):
        s = h @ qc @ h.T + r_mat
        k = np.linalg.solve(s.T, (qc @ h.T).T).T
        a = np.eye(d) - k @ h
        sigma = a @ q_mat @ a.T + k @ r_mat @ k.T
        return s, k, sigma

    s, k, sigma = gain_and_cov(q_mat)
    s_t, k_t, sigma_t = gain_and_cov(q_t)
    return EnkfMatrixSet(
        h=h, q=q_mat, r=r_mat, q_t=q_t, s=s, s_t=s_t, k=k, k_t=k_t,
        sigma=sigma, sigma_t=sigma_t,
    )


def _rel_residual(lhs: np.ndarray, rhs: np.ndarray) -> float:
    lhs, rhs = np.atleast_1d(lhs), np.atleast_1d(rhs)
    scale = max(np.linalg.norm(lhs), np.linalg.norm(rhs), 1.0)
    return float(np.linalg.norm(lhs - rhs) / scale)


def check_matrix_identities(
    q: SpdMatrix, r: SpdMatrix, h: np.ndarray, prev_cov: np.ndarray
) -> dict[str, float]:
    """Relative residuals of the five analysis-update matrix identities.

    (i)   analysis covariance equals Q - K H Q;
    (ii)  analysis covariance times H^T equals K R;
    (iii) det(analysis cov) * det(innovation cov) = det Q * det R;
    (iv)  gain difference factors through the covariance difference;
    (v)   covariance difference is the gain difference congruated by the
          innovation covariance.
    """
    m = enkf_matrices(q, r, h, prev_cov)
    residuals = {
        "i": _rel_residual(m.sigma, m.q - m.k @ m.h @ m.q),
        "ii": _rel_residual(m.sigma @ m.h.T, m.k @ m.r),
        "iii": _rel_residual(
            np.linalg.det(m.sigma) * np.linalg.det(m.s),
            np.linalg.det(m.q) * np.linalg.det(m.r),
        ),
        "iv": _rel_residual(
            m.delta_k,
            (np.eye(q.dim) - m.k_t @ m.h)
            @ m.delta_q
            @ m.h.T
            @ np.linalg.inv(m.s),
        ),
        "v": _rel_residual(m.delta_sigma, m.delta_k @ m.s @ m.delta_k.T),
    }
    return residuals


def filtering_component(
    z: np.ndarray,
    y: np.ndarray,
    h: np.ndarray,
    q: SpdMatrix,
    r: SpdMatrix,
) -> tuple[float, GaussianComponent]:
    """Closed form of (likelihood times prior component) for linear maps.

    The product of the unnormalized likelihood exp(-|y - Hx|_R^2 / 2) with
    the Gaussian prior component centered at ``z`` is a scalar mass times a
    Gaussian.  Returns the log mass and that Gaussian; its mean is the
    gain-corrected ``z`` and its covariance the exact-model analysis
    covariance.
    """
    z = np.asarray(z, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    h = np.atleast_2d(np.asarray(h, dtype=float))
    if h.shape != (y.size, z.size):
        raise DimensionMismatch("observation matrix must map state to observation")
    s = SpdMatrix(h @ q.entries @ h.T + r.entries)
    k = s.solve(h @ q.entries.T).T
    sigma = q.entries - k @ h @ q.entries
    innov = y - h @ z
    white = solve_triangular(s.chol, innov, lower=True)
    log_mass = 0.5 * (r.log_det - s.log_det) - 0.5 * float(white @ white)
    mean = z + k @ innov
    return log_mass, GaussianComponent(mean, SpdMatrix(0.5 * (sigma + sigma.T)))


def log_mixture_evidence(
    flow_images: np.ndarray,
    y: np.ndarray,
    h: np.ndarray,
    q: SpdMatrix,
    r: SpdMatrix,
) -> float:
    """Log of the mixture normalizer: average component mass in closed form."""
    z = np.atleast_2d(np.asarray(flow_images, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    h = np.atleast_2d(np.asarray(h, dtype=float))
    s = SpdMatrix(h @ q.entries @ h.T + r.entries)
    innov = y[None, :] - z @ h.T
    white = solve_triangular(s.chol, innov.T, lower=True)
    half_m2 = 0.5 * (white**2).sum(axis=0)
    return (
        0.5 * (r.log_det - s.log_det)
        + float(log_sum_exp(-half_m2))
        - np.log(z.shape[0])
    )


def weight_upper_bound(
    flow_images: np.ndarray,
    y: np.ndarray,
    h: np.ndarray,
    q: SpdMatrix,
    r: SpdMatrix,
) -> float:
    """Uniform bound on normalized importance ratios for the
    previous-ensemble schemes with the previous-ensemble gain.

    Computed in the log domain:  half the log-determinant ratio of the
    (previous-ensemble covariance + Q) to Q, minus the log of the average
    innovation likelihood under the exact-model innovation covariance.
    """
    z = np.atleast_2d(np.asarray(flow_images, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    h = np.atleast_2d(np.asarray(h, dtype=float))
    c_prev = SpdMatrix(empirical_cov(z) + q.entries)
    s = SpdMatrix(h @ q.entries @ h.T + r.entries)
    innov = y[None, :] - z @ h.T
    white = solve_triangular(s.chol, innov.T, lower=True)
    half_m2 = 0.5 * (white**2).sum(axis=0)
    log_avg_lik = float(log_sum_exp(-half_m2)) - np.log(z.shape[0])
    return float(np.exp(0.5 * (c_prev.log_det - q.log_det) - log_avg_lik))


def _pinv_sym(mat: np.ndarray) -> np.ndarray:
    """Moore-Penrose pseudoinverse of a symmetric matrix via eigh."""
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    cut = 1e-12 * max(np.abs(vals).max(initial=0.0), np.finfo(float).tiny)
    inv_vals = np.where(np.abs(vals) > cut, 1.0 / np.where(vals == 0, 1.0, vals), 0.0)
    return (vecs * inv_vals) @ vecs.T


def quadratic_difference_decomposition(
    a_mat: np.ndarray,
    b_mat: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    v: np.ndarray,
) -> tuple[np.ndarray, float]:
    """Rewrite a difference of two squared covariance norms as one quadratic.

    Given SPD matrices A, B, centers a, b and a vector v with
    (B - A) v = b - a, returns (u, c) such that, for all x,

        |x - a|_A^2 - |x - b|_B^2 = (x - u)^T (A^-1 - B^-1) (x - u) + c,

    with u = b - B v and c = -(b - a)^T (B - A)^+ (b - a).
    """
    a_spd, b_spd = SpdMatrix(a_mat), SpdMatrix(b_mat)
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    diff = b_spd.entries - a_spd.entries
    resid = diff @ v - (b - a)
    scale = max(np.linalg.norm(b - a), np.linalg.norm(diff @ v), 1.0)
    if np.linalg.norm(resid) > 1e-10 * scale:
        raise IncompatibleInput("(B - A) v does not match b - a within 1e-10")
    u = b - b_spd.entries @ v
    c = -float((b - a) @ _pinv_sym(diff) @ (b - a))
    return u, c


@dataclass(frozen=True)
class RatioBoundTerms:
    """Pieces of the pointwise target/proposal ratio bound.

    log(target_i / proposal_i)(x) equals
    ``log_prefactor - (x-u)^T M (x-u) / 2 - gap / 2`` with
    ``M = sigma^-1 - sigma_t^-1``; the bound drops the nonnegative ``gap``.
    """

    u: np.ndarray
    quad: np.ndarray
    log_prefactor: float
    gap: float


def ratio_bound_terms(
    mats: EnkfMatrixSet, z: np.ndarray, y: np.ndarray
) -> RatioBoundTerms:
    """Decompose the i-th target/proposal log ratio around its maximizer."""
    z = np.asarray(z, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    innov = y - mats.h @ z
    m_hat = z + mats.k @ innov
    m_prop = z + mats.k_t @ innov
    v = _pinv_sym(mats.delta_sigma) @ (m_prop - m_hat)
    u = m_prop - mats.sigma_t @ v
    sigma_inv = np.linalg.inv(mats.sigma)
    sigma_t_inv = np.linalg.inv(mats.sigma_t)
    s_inv = np.linalg.inv(mats.s)
    gap_mat = s_inv - mats.delta_k.T @ _pinv_sym(mats.delta_sigma) @ mats.delta_k
    gap = float(innov @ gap_mat @ innov)
    _, logdet_sigma_t = np.linalg.slogdet(mats.sigma_t)
    _, logdet_q = np.linalg.slogdet(mats.q)
    return RatioBoundTerms(
        u=u,
        quad=sigma_inv - sigma_t_inv,
        log_prefactor=0.5 * (logdet_sigma_t - logdet_q),
        gap=gap,
    )


def _fraction_str(f: Fraction) -> str:
    return f"{f.numerator}/{f.denominator}" if f.denominator != 1 else str(f.numerator)


def theory_report(n_random: int = 20, seed: int = 0) -> str:
    """One line per checked identity/example with residual and pass/fail."""
    lines = []

    def record(name: str, ok: bool, detail: str):
        lines.append(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")

    # Two-point examples with known exact variances.
    ex1 = DiscreteISInstance(
        targets=((Fraction(1, 10), Fraction(9, 10)), (Fraction(2, 5), Fraction(3, 5))),
        proposals=(
            (Fraction(3, 10), Fraction(7, 10)),
            (Fraction(1, 5), Fraction(4, 5)),
        ),
        g=(Fraction(1), Fraction(1)),
    )
    expected1 = {
        "II": Fraction(37, 336),
        "IM": Fraction(3, 50),
        "MI": Fraction(37, 5376),
        "MM": Fraction(0),
        "MMstr": Fraction(0),
    }
    table1 = estimator_variance_table(ex1)
    record(
        "two-point-example-1",
        table1 == expected1,
        " ".join(f"{k}={_fraction_str(v)}" for k, v in table1.items()),
    )

    ex2 = DiscreteISInstance(
        targets=((Fraction(4, 5), Fraction(1, 5)), (Fraction(1, 2), Fraction(1, 2))),
        proposals=((Fraction(2, 3), Fraction(1, 3)), (Fraction(1, 3), Fraction(2, 3))),
        g=(Fraction(1), Fraction(2)),
    )
    expected2 = {
        "II": Fraction(0),
        "MI": Fraction(369, 3200),
        "IM": Fraction(41, 400),
        "MM": Fraction(1, 800),
        "MMstr": Fraction(1, 900),
    }
    table2 = estimator_variance_table(ex2)
    record(
        "two-point-example-2",
        table2 == expected2,
        " ".join(f"{k}={_fraction_str(v)}" for k, v in table2.items()),
    )

    rng = np.random.default_rng(seed)
    worst = {key: 0.0 for key in ("i", "ii", "iii", "iv", "v")}
    for _ in range(n_random):
        d = int(rng.integers(1, 6))
        m = int(rng.integers(1, 6))
        q = SpdMatrix(_random_spd(rng, d))
        r = SpdMatrix(_random_spd(rng, m))
        h = rng.standard_normal((m, d))
        w = rng.standard_normal((d, d))
        residuals = check_matrix_identities(q, r, h, w @ w.T)
        for key, val in residuals.items():
            worst[key] = max(worst[key], val)
    ok = all(v < 1e-10 for v in worst.values())
    record(
        "matrix-identities",
        ok,
        " ".join(f"{k}={v:.2e}" for k, v in worst.items()),
    )

    # closed-form filtering component against 1d quadrature
    worst_mass = 0.0
    for _ in range(5):
        qv, rv = float(rng.uniform(0.3, 2.0)), float(rng.uniform(0.3, 2.0))
        hv, z, y = float(rng.uniform(0.5, 2.0)), float(rng.normal()), float(
            rng.normal()
        )
        q1, r1 = SpdMatrix([[qv]]), SpdMatrix([[rv]])
        log_mass, post = filtering_component([z], [y], [[hv]], q1, r1)
        sd = np.sqrt(max(qv, post.cov.entries[0, 0]))
        xs = np.linspace(min(z, post.mean[0]) - 12 * sd,
                         max(z, post.mean[0]) + 12 * sd, 40001)
        vals = np.exp(-0.5 * (y - hv * xs) ** 2 / rv
                      - 0.5 * np.log(2 * np.pi * qv) - 0.5 * (xs - z) ** 2 / qv)
        worst_mass = max(worst_mass, abs(np.exp(log_mass) / np.trapezoid(vals, xs) - 1))
    record("filtering-component-mass", worst_mass < 1e-8, f"rel={worst_mass:.2e}")

    # weight bound holds pointwise at sampled states
    worst_gap = 0.0
    for _ in range(5):
        d = 2
        q2 = SpdMatrix(_random_spd(rng, d))
        r2 = SpdMatrix(_random_spd(rng, d))
        h2 = rng.standard_normal((d, d))
        zs = rng.standard_normal((8, d))
        y2 = rng.standard_normal(d)
        bound = weight_upper_bound(zs, y2, h2, q2, r2)
        log_z = log_mixture_evidence(zs, y2, h2, q2, r2)
        mats = enkf_matrices(q2, r2, h2, np.cov(zs.T, ddof=1))
        for i in range(8):
            innov = y2 - h2 @ zs[i]
            white = np.linalg.solve(np.linalg.cholesky(mats.s), innov)
            _, ld_r = np.linalg.slogdet(r2.entries)
            _, ld_s = np.linalg.slogdet(mats.s)
            log_mass = 0.5 * (ld_r - ld_s) - 0.5 * white @ white
            x = rng.standard_normal(d)
            m_hat = zs[i] + mats.k @ innov
            m_prop = zs[i] + mats.k_t @ innov
            from .gauss import GaussianComponent, log_gaussian_density

            log_ratio = (
                log_mass
                + log_gaussian_density(x, GaussianComponent(m_hat, SpdMatrix(
                    0.5 * (mats.sigma + mats.sigma.T))))
                - log_gaussian_density(x, GaussianComponent(m_prop, SpdMatrix(
                    0.5 * (mats.sigma_t + mats.sigma_t.T))))
            )
            worst_gap = max(worst_gap, np.exp(log_ratio - log_z) - bound)
    record("weight-bound", worst_gap <= 1e-9, f"max excess={worst_gap:.2e}")

    # quadratic-difference decomposition identity at random states
    worst_qd = 0.0
    for _ in range(5):
        a_mat = _random_spd(rng, 3)
        b_mat = a_mat + 0.5 * _random_spd(rng, 3)
        a = rng.standard_normal(3)
        v = rng.standard_normal(3)
        b = a + (b_mat - a_mat) @ v
        u, const = quadratic_difference_decomposition(a_mat, b_mat, a, b, v)
        ai, bi = np.linalg.inv(a_mat), np.linalg.inv(b_mat)
        for _ in range(20):
            x = rng.standard_normal(3)
            lhs = (x - a) @ ai @ (x - a) - (x - b) @ bi @ (x - b)
            rhs = (x - u) @ (ai - bi) @ (x - u) + const
            worst_qd = max(worst_qd, abs(lhs - rhs))
    record("quadratic-difference", worst_qd < 1e-8, f"residual={worst_qd:.2e}")
    return "\n".join(lines) + "\n"


def _random_spd(rng: np.random.Generator, dim: int) -> np.ndarray:
    m = rng.standard_normal((dim, dim))
    return m.T @ m + 0.1 * np.eye(dim)


if __name__ == "__main__":  # pragma: no cover
    print(theory_report(), end="")
