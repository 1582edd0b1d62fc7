"""Scrambled Sobol' points and their transport onto Gaussian mixtures.

The generator follows the classic Gray-code construction over 32-bit
direction integers, with initial values from the published Joe-Kuo D6 table
(shipped as ``data/joe_kuo_d6_64.txt``, layout ``d s a m_1..m_s``, covering
dimensions 2..64; dimension 1 is the base-2 radical inverse).  The zero
index of the sequence (the all-zeros point) is skipped: points are taken
from index 1, and coordinates are clamped to [2^-33, 1 - 2^-33] so that the
inverse normal CDF is always evaluated strictly inside (0, 1).

Scrambling is the affine matrix form of nested binary scrambling: per
dimension, a random lower-triangular bit matrix with unit diagonal acts on
the 32 leading digits, followed by a random digital shift.  This keeps the
elementary-interval balance of the net while making every point marginally
uniform.

Transport to a mixture uses one extra leading coordinate: it selects the
mixture component through the inverse CDF of the weight vector, and the
remaining coordinates map through the inverse normal CDF and the selected
component's mean and Cholesky factor.  The sampling law of each transported
point is therefore exactly the mixture.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erfc

from .diagnostics import ess as _ess
from .diagnostics import weight_cv_sq as _weight_cv_sq
from .errors import (
    AllWeightsZero,
    DegenerateProposal,
    DimensionMismatch,
    OutOfDomain,
    RequiresLinearObservation,
    UnsupportedDimension,
)
from .filters import (
    StepSummary,
    WeightedEnsemble,
    gain_current,
    gain_previous,
    proposals_current,
    proposals_previous,
    log_likelihood,
    _kahan_cumsum,
)
from .gauss import GaussianMixture, log_sum_exp
from .models import StateSpaceModel
from .seeding import derive_seed

_BITS = 32
_SCALE = float(2.0**-_BITS)
_CLAMP = float(2.0**-33)
MAX_DIM = 64

QMC_SCHEMES = ("QMC-BPF", "QMC-EnKF_c", "QMC-EnKF_p", "QMC-MM_c", "QMC-MM_p")


@lru_cache(maxsize=1)
def _direction_integers() -> np.ndarray:
    """(MAX_DIM, 32) array of direction integers, row j for dimension j+1."""
    table = np.zeros((MAX_DIM, _BITS), dtype=np.uint64)
    table[0] = [1 << (_BITS - k) for k in range(1, _BITS + 1)]
    text = (
        importlib.resources.files("mixenkf")
        .joinpath("data/joe_kuo_d6_64.txt")
        .read_text()
    )
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = [int(v) for v in line.split()]
        d, s, a, ms = fields[0], fields[1], fields[2], fields[3:]
        if d > MAX_DIM:
            continue
        v = np.zeros(_BITS, dtype=np.uint64)
        for k in range(1, min(s, _BITS) + 1):
            v[k - 1] = np.uint64(ms[k - 1] << (_BITS - k))
        for k in range(s + 1, _BITS + 1):
            prev = v[k - s - 1]
            acc = prev ^ (prev >> np.uint64(s))
            for i in range(1, s):
                if (a >> (s - 1 - i)) & 1:
                    acc ^= v[k - i - 1]
            v[k - 1] = acc
        table[d - 1] = v
    return table


@dataclass(frozen=True)
class LowDiscrepancySet:
    """A block of low-discrepancy points in (0,1)^dim.

    ``n`` must be a power of two (the balance guarantees used downstream
    hold for dyadic blocks).  The raw 32-bit lattice is kept alongside the
    float points so scrambling can act on exact digits.
    """

    n: int
    dim: int
    points: np.ndarray
    scramble_seed: int | None
    ints: np.ndarray

    def __post_init__(self):
        if self.n < 1 or (self.n & (self.n - 1)) != 0:
            raise ValueError("point count must be a power of two")
        pts = self.points
        if pts.shape != (self.n, self.dim):
            raise DimensionMismatch("points array has the wrong shape")
        if pts.min() <= 0.0 or pts.max() >= 1.0:
            raise ValueError("points must lie strictly inside (0, 1)")


def _ints_to_points(ints: np.ndarray) -> np.ndarray:
    return np.clip(ints.astype(np.float64) * _SCALE, _CLAMP, 1.0 - _CLAMP)


def sobol(n: int, dim: int) -> LowDiscrepancySet:
    """First ``n`` Sobol' points after the skipped zero index (unscrambled)."""
    if dim < 1 or dim > MAX_DIM:
        raise UnsupportedDimension(f"dimension must be in 1..{MAX_DIM}")
    if n < 1 or (n & (n - 1)) != 0:
        raise ValueError("point count must be a power of two")
    table = _direction_integers()[:dim]  # (dim, 32)
    r = np.arange(n, dtype=np.uint64)
    # Gray-code step r -> r+1 flips the digit at the lowest zero bit of r.
    lowbit = (~r) & (r + np.uint64(1))
    cols = np.frexp(lowbit.astype(np.float64))[1] - 1  # 0-based bit position
    ints = np.bitwise_xor.accumulate(table.T[cols], axis=0)
    return LowDiscrepancySet(
        n=n, dim=dim, points=_ints_to_points(ints), scramble_seed=None, ints=ints
    )


def _parity(values: np.ndarray) -> np.ndarray:
    v = values.copy()
    for shift in (16, 8, 4, 2, 1):
        v ^= v >> np.uint64(shift)
    return v & np.uint64(1)


def owen_scramble(points: LowDiscrepancySet, seed: int) -> LowDiscrepancySet:
    """Nested binary scrambling in affine matrix form, 32 bits per axis."""
    rng = np.random.default_rng(seed)
    scrambled = np.zeros_like(points.ints)
    for j in range(points.dim):
        raw = rng.integers(0, 1 << _BITS, size=_BITS + 1, dtype=np.uint64)
        x = points.ints[:, j]
        acc = np.zeros(points.n, dtype=np.uint64)
        for k in range(1, _BITS + 1):
            diag = np.uint64(1 << (_BITS - k))
            above = np.uint64(((1 << (k - 1)) - 1) << (_BITS - k + 1))
            row = diag | (raw[k - 1] & above)
            acc |= _parity(x & row) << np.uint64(_BITS - k)
        scrambled[:, j] = acc ^ raw[_BITS]
    return LowDiscrepancySet(
        n=points.n,
        dim=points.dim,
        points=_ints_to_points(scrambled),
        scramble_seed=int(seed),
        ints=scrambled,
    )


def scrambled_sobol(n: int, dim: int, seed: int) -> LowDiscrepancySet:
    return owen_scramble(sobol(n, dim), seed)


# Rational approximation of the standard normal quantile (Acklam's
# coefficients), polished with one Newton step on the erfc-based CDF.
_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_P_LOW = 0.02425


def inv_norm_cdf(u: np.ndarray | float) -> np.ndarray | float:
    """Standard normal quantile with absolute error well below 1e-9."""
    single = np.isscalar(u) or np.asarray(u).ndim == 0
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise OutOfDomain("quantile argument must lie strictly in (0, 1)")
    x = np.empty_like(u)

    low = u < _P_LOW
    high = u > 1.0 - _P_LOW
    central = ~(low | high)

    if np.any(central):
        q = u[central] - 0.5
        r = q * q
        num = ((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x[central] = num * q / den

    for mask, tail_u, sign in ((low, u[low], 1.0), (high, 1.0 - u[high], -1.0)):
        if np.any(mask):
            q = np.sqrt(-2.0 * np.log(tail_u))
            num = (
                (((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]
            ) * q + _C[5]
            den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
            x[mask] = sign * num / den

    # One Newton step: x <- x - (Phi(x) - u) / phi(x).
    cdf = 0.5 * erfc(-x / np.sqrt(2.0))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    x -= (cdf - u) / pdf
    return float(x[0]) if single else x


def transport_to_mixture(
    points: LowDiscrepancySet, mix: GaussianMixture
) -> np.ndarray:
    """Push a (d+1)-dimensional point set onto a d-dimensional mixture.

    Coordinate 0 picks the component (inverse CDF of the weights, smallest
    index whose cumulative weight reaches the coordinate); the rest map
    through the normal quantile and the component's affine factor.
    """
    if points.dim != mix.dim + 1:
        raise DimensionMismatch(
            f"need dim {mix.dim + 1} points for a mixture in dim {mix.dim}"
        )
    cum = _kahan_cumsum(mix.weights)
    cum[-1] = 1.0
    comp = np.searchsorted(cum, points.points[:, 0], side="left")
    z = inv_norm_cdf(points.points[:, 1:])
    if mix.shared_cov is not None:
        return mix.means[comp] + z @ mix.shared_cov.chol.T
    out = np.empty((points.n, mix.dim))
    for k in np.unique(comp):
        rows = comp == k
        out[rows] = mix.means[k] + z[rows] @ mix.covs[k].chol.T
    return out


def tqmc_sample(mix: GaussianMixture, n: int, seed: int) -> np.ndarray:
    """n exactly-mixture-distributed points from a freshly scrambled set."""
    pts = scrambled_sobol(n, mix.dim + 1, seed)
    return transport_to_mixture(pts, mix)


@dataclass(frozen=True)
class QmcScheme:
    """Low-discrepancy filter variant: plain particle filter, plain ensemble
    update, or the mixture-mixture reweighted update; conditioning as in the
    Monte Carlo schemes."""

    kind: str  # bpf | enkf | mm
    conditioning: str = "none"  # none | current | previous

    def __post_init__(self):
        if self.kind not in ("bpf", "enkf", "mm"):
            raise ValueError(f"unknown qmc scheme kind {self.kind!r}")
        if self.kind == "bpf" and self.conditioning != "none":
            raise ValueError("the particle-filter variant takes no conditioning")
        if self.kind != "bpf" and self.conditioning not in ("current", "previous"):
            raise ValueError("ensemble variants need a conditioning choice")

    @property
    def label(self) -> str:
        if self.kind == "bpf":
            return "QMC-BPF"
        base = "QMC-EnKF" if self.kind == "enkf" else "QMC-MM"
        return base + ("_c" if self.conditioning == "current" else "_p")

    @classmethod
    def parse(cls, name: str) -> "QmcScheme":
        token = name.strip()
        if token.upper() == "QMC-BPF":
            return cls("bpf")
        for kind, tag in (("enkf", "QMC-ENKF"), ("mm", "QMC-MM")):
            if token.upper().startswith(tag + "_"):
                cond = {"C": "current", "P": "previous"}.get(
                    token.upper()[len(tag) + 1 :]
                )
                if cond:
                    return cls(kind, cond)
        raise ValueError(f"unknown qmc scheme {name!r}")


def tqmc_filter_step(
    scheme: QmcScheme,
    state: WeightedEnsemble,
    y: np.ndarray,
    model: StateSpaceModel,
    qmc_seed: int,
) -> tuple[WeightedEnsemble, StepSummary]:
    """One low-discrepancy prediction/analysis cycle (no resampling).

    The forecast ensemble is transported from the weighted mixture of
    propagated components; the analysis ensemble is transported from the
    proposal mixture (except for the particle-filter variant, which keeps
    the forecast).  Forecast and analysis use independent scramble seeds
    derived from ``qmc_seed``.
    """
    if scheme.conditioning == "previous" and not model.is_linear_obs:
        raise RequiresLinearObservation(
            "previous-ensemble variants need a linear observation map"
        )
    y = np.asarray(y, dtype=float).ravel()
    flow_images = model.flow(state.particles)
    forecast_mix = GaussianMixture(flow_images, model.q, state.weights)
    forecast = tqmc_sample(forecast_mix, state.n, derive_seed(qmc_seed, "forecast"))

    if scheme.kind == "bpf":
        log_raw = log_likelihood(y, forecast, model)
        norm = log_sum_exp(log_raw)
        if not np.isfinite(norm):
            raise AllWeightsZero("all likelihood weights underflowed to zero")
        out = WeightedEnsemble(forecast, log_raw - norm)
        return out, StepSummary(
            label=scheme.label,
            analysis=out,
            raw_log_weights=log_raw,
            ess=_ess(out.weights),
            weight_cv_sq=_weight_cv_sq(log_raw),
        )

    if model.is_linear_obs:
        gain = gain_previous(flow_images, model, weights=state.weights)
    else:
        gain = gain_current(forecast, model)

    if scheme.conditioning == "current":
        prop = proposals_current(forecast, gain, y, model)
        proposal_mix = prop.mixture
    else:
        prop = proposals_previous(flow_images, gain, y, model)
        proposal_mix = GaussianMixture(prop.means, prop.cov, state.weights)
    if proposal_mix.shared_cov is None:
        raise DegenerateProposal("proposal mixture must share one covariance")

    analysis = tqmc_sample(proposal_mix, state.n, derive_seed(qmc_seed, "analysis"))

    if scheme.kind == "enkf":
        out = WeightedEnsemble.equal(analysis)
        return out, StepSummary(
            label=scheme.label,
            analysis=out,
            raw_log_weights=np.zeros(out.n),
            ess=float(out.n),
            weight_cv_sq=0.0,
            gain=gain,
        )

    log_raw = (
        log_likelihood(y, analysis, model)
        + forecast_mix.log_density(analysis)
        - proposal_mix.log_density(analysis)
    )
    norm = log_sum_exp(log_raw)
    if not np.isfinite(norm):
        raise AllWeightsZero("all importance weights underflowed to zero")
    out = WeightedEnsemble(analysis, log_raw - norm)
    return out, StepSummary(
        label=scheme.label,
        analysis=out,
        raw_log_weights=log_raw,
        ess=_ess(out.weights),
        weight_cv_sq=_weight_cv_sq(log_raw),
        gain=gain,
    )


def run_tqmc_filter(
    scheme: QmcScheme,
    model: StateSpaceModel,
    observations: np.ndarray,
    n_particles: int,
    run_seed: int,
) -> list[StepSummary]:
    """Run the low-discrepancy filter over a whole observation sequence."""
    prior = GaussianMixture(
        model.prior_mean[None, :], model.prior_cov, np.array([1.0])
    )
    particles = tqmc_sample(prior, n_particles, derive_seed(run_seed, 0, "init"))
    state = WeightedEnsemble.equal(particles)
    summaries = []
    for t, y in enumerate(np.atleast_2d(np.asarray(observations, dtype=float)), 1):
        state, summary = tqmc_filter_step(
            scheme, state, y, model, derive_seed(run_seed, t)
        )
        summaries.append(summary)
    return summaries
