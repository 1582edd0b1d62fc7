"""Particle and ensemble Kalman filters with importance-sampling reweighting.

One prediction/analysis cycle is shared by every method here:

1. propagate the ensemble through the dynamics with process noise,
2. estimate a Kalman gain (skipped by the plain particle filter),
3. transport forecast particles with the stochastic perturbed-observation
   update (skipped by the particle filter),
4. attach self-normalized importance weights (skipped by the plain ensemble
   Kalman filter, which keeps uniform weights),
5. systematic resampling back to an equally weighted ensemble.

The reweighting step admits six variants: the target density may be the
particle's own prior component or the prior mixture, the proposal density
may be the particle's own transport law or the proposal mixture, and the
transport law may be conditioned on the current forecast ensemble (works
for any observation map) or on the previous ensemble (closed form only for
linear observation maps, where the gain can be built independently of the
forecast noise).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from .diagnostics import ess as _ess
from .diagnostics import weight_cv_sq as _weight_cv_sq
from .errors import (
    AllWeightsZero,
    DegenerateProposal,
    DimensionMismatch,
    NonFiniteState,
    NotPositiveDefinite,
    RequiresLinearObservation,
    ShapeMismatch,
    TooFewSamples,
)
from .gauss import (
    GaussianMixture,
    SpdMatrix,
    empirical_cov,
    log_sum_exp,
    weighted_empirical_cov,
)
from .models import StateSpaceModel
from .seeding import standard_normals

WEIGHTED_METHODS = ("ii", "mi", "mm")

_METHOD_LABELS = {"bpf": "BPF", "enkf": "EnKF", "ii": "II", "mi": "MI", "mm": "MMstr"}


@dataclass(frozen=True)
class WeightedEnsemble:
    """N particles in R^d with normalized log weights (log-sum-exp == 0)."""

    particles: np.ndarray
    log_weights: np.ndarray

    def __post_init__(self):
        particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        lw = np.asarray(self.log_weights, dtype=float).ravel()
        object.__setattr__(self, "particles", particles)
        object.__setattr__(self, "log_weights", lw)
        if particles.shape[0] < 2:
            raise TooFewSamples("an ensemble needs at least 2 particles")
        if lw.size != particles.shape[0]:
            raise DimensionMismatch("one log weight per particle required")
        if np.any(np.isposinf(lw)) or np.any(np.isnan(lw)):
            raise ValueError("log weights must be finite or -inf")
        if abs(log_sum_exp(lw)) > 1e-10:
            raise ValueError("log weights are not normalized")

    @classmethod
    def equal(cls, particles: np.ndarray) -> "WeightedEnsemble":
        particles = np.atleast_2d(np.asarray(particles, dtype=float))
        n = particles.shape[0]
        return cls(particles, np.full(n, -np.log(n)))

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def is_equal_weighted(self) -> bool:
        return bool(np.max(np.abs(self.log_weights + np.log(self.n))) < 1e-9)

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles


@dataclass(frozen=True)
class SchemeSpec:
    """Which filter to run and how to build its gain and proposals.

    method: "bpf", "enkf", or one of the weighted schemes "ii", "mi", "mm"
        (target/proposal letters: I = per-particle component, M = mixture;
        "mm" is the stratified mixture-mixture variant).
    conditioning: "current" or "previous" ensemble for the proposal law
        ("none" for bpf/enkf).
    gain: "current", "previous", or None for the default rule (previous-
        ensemble gain when the observation map is linear, current otherwise).
    localization / inflation: optional Schur mask / variance factor applied
        to the empirical covariance entering the gain (linear maps only).
    """

    method: str
    conditioning: str = "none"
    gain: str | None = None
    localization: np.ndarray | None = None
    inflation: float | None = None

    def __post_init__(self):
        if self.method not in ("bpf", "enkf", "ii", "mi", "mm"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.conditioning not in ("current", "previous", "none"):
            raise ValueError(f"unknown conditioning {self.conditioning!r}")
        if self.gain not in ("current", "previous", None):
            raise ValueError(f"unknown gain {self.gain!r}")
        if self.method in WEIGHTED_METHODS and self.conditioning == "none":
            raise ValueError("weighted schemes need a conditioning choice")
        if self.inflation is not None and self.inflation < 1.0:
            raise ValueError("inflation factor must be >= 1")

    def validate_against(self, model: StateSpaceModel) -> None:
        if not model.is_linear_obs:
            if self.conditioning == "previous":
                raise RequiresLinearObservation(
                    "previous-ensemble proposals need a linear observation map"
                )
            if self.gain == "previous":
                raise RequiresLinearObservation(
                    "previous-ensemble gain needs a linear observation map"
                )

    def gain_kind(self, model: StateSpaceModel) -> str:
        if self.gain is not None:
            return self.gain
        return "previous" if model.is_linear_obs else "current"

    @property
    def label(self) -> str:
        base = _METHOD_LABELS[self.method]
        if self.conditioning != "none":
            base += "_c" if self.conditioning == "current" else "_p"
        if self.gain is not None:
            base += "+gc" if self.gain == "current" else "+gp"
        return base

    @classmethod
    def parse(cls, name: str) -> "SchemeSpec":
        """Parse labels like "BPF", "EnKF", "MMstr_c", "II_p+gc"."""
        token = name.strip()
        gain = None
        if "+" in token:
            token, gain_tag = token.split("+", 1)
            gain = {"gc": "current", "gp": "previous"}.get(gain_tag)
            if gain is None:
                raise ValueError(f"unknown gain tag in scheme {name!r}")
        lookup = {v.lower(): k for k, v in _METHOD_LABELS.items()}
        cond = "none"
        if "_" in token:
            token, cond_tag = token.rsplit("_", 1)
            cond = {"c": "current", "p": "previous"}.get(cond_tag)
            if cond is None:
                raise ValueError(f"unknown conditioning tag in scheme {name!r}")
        method = lookup.get(token.lower())
        if method is None:
            raise ValueError(f"unknown scheme {name!r}")
        return cls(method=method, conditioning=cond, gain=gain)


class TargetSet:
    """Per-particle prior components and the induced (unnormalized) targets.

    Holds the deterministic flow images of the previous ensemble; the i-th
    prior component is a Gaussian centered there with the process-noise
    covariance.  Multiplying by the likelihood of the current observation
    gives the per-particle unnormalized posterior targets and their mixture.
    The observation slot starts empty and is set once y_t is available.
    """

    def __init__(self, flow_images: np.ndarray, model: StateSpaceModel, y=None):
        self.flow_images = np.atleast_2d(np.asarray(flow_images, dtype=float))
        self.model = model
        self.y = None if y is None else np.asarray(y, dtype=float).ravel()
        self.prior_mixture = GaussianMixture(self.flow_images, model.q)

    @property
    def n(self) -> int:
        return self.flow_images.shape[0]

    def set_observation(self, y: np.ndarray) -> None:
        self.y = np.asarray(y, dtype=float).ravel()

    def log_likelihood(self, x: np.ndarray) -> np.ndarray:
        if self.y is None:
            raise ValueError("observation not set on this target set")
        return log_likelihood(self.y, x, self.model)

    def log_prior_diag(self, x: np.ndarray) -> np.ndarray:
        return self.prior_mixture.diagonal_log_densities(x)

    def log_prior_mix(self, x: np.ndarray) -> np.ndarray:
        return self.prior_mixture.log_density(np.atleast_2d(x))


@dataclass
class ProposalSet:
    """Per-particle Gaussian proposals sharing one covariance.

    ``transport``, when present, samples the i-th proposal by applying the
    stochastic analysis update to the i-th forecast particle; this is how
    the ensemble-conditioned proposals are realized so that the weighted
    filters consume randomness exactly like the plain filter.  Proposal sets
    without a transport are sampled directly (mean plus Cholesky factor).
    """

    means: np.ndarray
    cov: SpdMatrix
    transport: Callable[[np.ndarray, np.random.Generator], np.ndarray] | None = None
    mixture: GaussianMixture = field(init=False)

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.mixture = GaussianMixture(self.means, self.cov)

    @property
    def n(self) -> int:
        return self.means.shape[0]

    def sample(
        self, forecast_particles: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        if self.transport is not None:
            return self.transport(forecast_particles, rng)
        z = standard_normals(rng, self.means.shape)
        return self.means + z @ self.cov.chol.T

    def log_density_diag(self, x: np.ndarray) -> np.ndarray:
        return self.mixture.diagonal_log_densities(x)

    def log_density_mix(self, x: np.ndarray) -> np.ndarray:
        return self.mixture.log_density(np.atleast_2d(x))


@dataclass
class StepSummary:
    """Pre-resampling analysis ensemble and weight diagnostics for one step."""

    label: str
    analysis: WeightedEnsemble
    raw_log_weights: np.ndarray
    ess: float
    weight_cv_sq: float
    gain: np.ndarray | None = None


def predict(
    prev: WeightedEnsemble, model: StateSpaceModel, rng: np.random.Generator
) -> tuple[WeightedEnsemble, TargetSet]:
    """Propagate an equally weighted ensemble through the dynamics with noise.

    Returns the forecast ensemble and a target set recording the flow
    images (the observation slot stays empty until the caller sets it).
    """
    if not prev.is_equal_weighted:
        raise ValueError("prediction expects an equally weighted ensemble")
    flow_images = model.flow(prev.particles)
    noise = standard_normals(rng, (prev.n, model.d)) @ model.q.chol.T
    forecast = flow_images + noise
    if not np.all(np.isfinite(forecast)):
        raise NonFiniteState("forecast ensemble is not finite")
    return WeightedEnsemble.equal(forecast), TargetSet(flow_images, model)


def log_likelihood(y: np.ndarray, x: np.ndarray, model: StateSpaceModel) -> np.ndarray:
    """Log observation likelihood -0.5 * |y - h(x)|_R^2 for rows of ``x``.

    Always <= 0; the Gaussian normalization constant is deliberately
    omitted (it cancels in every self-normalized weight).
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.size != model.m:
        raise DimensionMismatch("observation length does not match the model")
    single = np.asarray(x).ndim == 1
    x = np.atleast_2d(np.asarray(x, dtype=float))
    resid = y[None, :] - np.atleast_2d(model.obs(x))
    z = solve_triangular(model.r.chol, resid.T, lower=True)
    out = -0.5 * (z**2).sum(axis=0)
    return float(out[0]) if single else out


def _modified_cov(
    cov: np.ndarray, localization: np.ndarray | None, inflation: float | None
) -> np.ndarray:
    if localization is not None:
        cov = localized_cov(cov, localization)
    if inflation is not None:
        cov = inflated_cov(cov, inflation)
    return cov


def _gain_from_state_cov(c: np.ndarray, model: StateSpaceModel) -> np.ndarray:
    h = model.linear_obs
    s = h @ c @ h.T + model.r.entries
    s_chol = SpdMatrix(0.5 * (s + s.T))
    return s_chol.solve(h @ c.T).T


def gain_current(
    forecast_particles: np.ndarray,
    model: StateSpaceModel,
    localization: np.ndarray | None = None,
    inflation: float | None = None,
) -> np.ndarray:
    """Kalman gain from the current forecast ensemble.

    For a linear observation map this is C_x H^T (H C_x H^T + R)^-1 with
    C_x the empirical forecast covariance; otherwise the generic
    cross-covariance form C_xy (C_hh + R)^-1.  Solves use the Cholesky
    factor of the innovation covariance; ill-conditioning is reported as a
    warning, never regularized away.
    """
    x = np.atleast_2d(np.asarray(forecast_particles, dtype=float))
    if x.shape[0] < 2:
        raise TooFewSamples("gain estimation needs at least 2 particles")
    if model.is_linear_obs:
        c = _modified_cov(empirical_cov(x), localization, inflation)
        return _gain_from_state_cov(c, model)
    if localization is not None or inflation is not None:
        raise RequiresLinearObservation(
            "covariance localization/inflation is only supported for linear maps"
        )
    hx = np.atleast_2d(model.obs(x))
    c_xy = empirical_cov(x, hx)
    c_y = empirical_cov(hx) + model.r.entries
    cond = np.linalg.cond(c_y)
    if cond > 1e12:
        warnings.warn(
            f"innovation covariance is ill-conditioned (cond ~ {cond:.2e})"
        )
    s_chol = SpdMatrix(0.5 * (c_y + c_y.T))
    return s_chol.solve(c_xy.T).T


def gain_previous(
    flow_images: np.ndarray,
    model: StateSpaceModel,
    localization: np.ndarray | None = None,
    inflation: float | None = None,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Kalman gain built from the previous ensemble only (linear maps).

    Uses the law-of-total-covariance estimate: empirical covariance of the
    deterministic flow images plus the exact process-noise covariance.  By
    construction the gain is independent of the current forecast noises.
    ``weights`` switches to the weight-corrected covariance for weighted
    previous ensembles.
    """
    if not model.is_linear_obs:
        raise RequiresLinearObservation("previous-ensemble gain needs linear h")
    z = np.atleast_2d(np.asarray(flow_images, dtype=float))
    if z.shape[0] < 2:
        raise TooFewSamples("gain estimation needs at least 2 particles")
    emp = empirical_cov(z) if weights is None else weighted_empirical_cov(z, weights)
    c = _modified_cov(emp, localization, inflation) + model.q.entries
    return _gain_from_state_cov(c, model)


def enkf_update(
    forecast_particles: np.ndarray,
    gain: np.ndarray,
    y: np.ndarray,
    model: StateSpaceModel,
    rng: np.random.Generator,
) -> np.ndarray:
    """Stochastic perturbed-observation analysis update.

    Each forecast particle is shifted by the gain applied to its innovation,
    with freshly drawn observation noise added to the observation.
    """
    x = np.atleast_2d(np.asarray(forecast_particles, dtype=float))
    gain = np.asarray(gain, dtype=float)
    if gain.shape != (model.d, model.m):
        raise DimensionMismatch(f"gain must be d x m, got {gain.shape}")
    y = np.asarray(y, dtype=float).ravel()
    perturbed = standard_normals(rng, (x.shape[0], model.m)) @ model.r.chol.T
    innov = y[None, :] + perturbed - np.atleast_2d(model.obs(x))
    return x + innov @ gain.T


def proposals_current(
    forecast_particles: np.ndarray,
    gain: np.ndarray,
    y: np.ndarray,
    model: StateSpaceModel,
) -> ProposalSet:
    """Proposal law of the analysis particles given the forecast ensemble.

    Mean: forecast particle shifted by the gain applied to its (noise-free)
    innovation.  Covariance: K R K^T, which is singular whenever the
    observation dimension is below the state dimension (and whenever the
    gain is rank-deficient, e.g. too few particles for the forecast-based
    gain); singularity is raised as ``DegenerateProposal``.
    """
    x = np.atleast_2d(np.asarray(forecast_particles, dtype=float))
    gain = np.asarray(gain, dtype=float)
    if model.m < model.d:
        raise DegenerateProposal(
            "current-ensemble proposal covariance K R K^T is singular when m < d"
        )
    cov = gain @ model.r.entries @ gain.T
    try:
        cov_spd = SpdMatrix(0.5 * (cov + cov.T))
    except NotPositiveDefinite as exc:
        raise DegenerateProposal(
            "current-ensemble proposal covariance K R K^T is singular "
            "(rank-deficient gain)"
        ) from exc
    y = np.asarray(y, dtype=float).ravel()
    means = x + (y[None, :] - np.atleast_2d(model.obs(x))) @ gain.T

    def transport(forecast, rng):
        return enkf_update(forecast, gain, y, model, rng)

    return ProposalSet(means, cov_spd, transport)


def proposals_previous(
    flow_images: np.ndarray,
    gain: np.ndarray,
    y: np.ndarray,
    model: StateSpaceModel,
) -> ProposalSet:
    """Proposal law of the analysis particles given the previous ensemble.

    Defined for linear observation maps: mean is the gain-corrected flow
    image, covariance (I - KH) Q (I - KH)^T + K R K^T, which is positive
    definite whenever Q is.
    """
    if not model.is_linear_obs:
        raise RequiresLinearObservation("previous-ensemble proposals need linear h")
    z = np.atleast_2d(np.asarray(flow_images, dtype=float))
    gain = np.asarray(gain, dtype=float)
    h = model.linear_obs
    y = np.asarray(y, dtype=float).ravel()
    a = np.eye(model.d) - gain @ h
    cov = a @ model.q.entries @ a.T + gain @ model.r.entries @ gain.T
    cov_spd = SpdMatrix(0.5 * (cov + cov.T))
    means = z + (y[None, :] - z @ h.T) @ gain.T

    def transport(forecast, rng):
        return enkf_update(forecast, gain, y, model, rng)

    return ProposalSet(means, cov_spd, transport)


@dataclass(frozen=True)
class SnisWeights:
    """Normalized log weights and the raw (unnormalized) log ratios."""

    log_normalized: np.ndarray
    log_raw: np.ndarray


def snis_weights(
    scheme: SchemeSpec,
    targets: TargetSet,
    proposals: ProposalSet | None,
    analysis_particles: np.ndarray,
) -> SnisWeights:
    """Self-normalized importance weights at the analysis particles.

    The raw weight of particle i is likelihood times target-over-proposal
    density ratio, where target and proposal are the per-particle component
    or the mixture according to the scheme; the particle-filter special case
    keeps the likelihood alone.  Raises ``AllWeightsZero`` when every raw
    weight underflows.
    """
    x = np.atleast_2d(np.asarray(analysis_particles, dtype=float))
    log_lik = targets.log_likelihood(x)
    if scheme.method == "bpf":
        log_raw = log_lik
    elif scheme.method == "ii":
        log_raw = log_lik + targets.log_prior_diag(x) - proposals.log_density_diag(x)
    elif scheme.method == "mi":
        log_raw = log_lik + targets.log_prior_mix(x) - proposals.log_density_diag(x)
    elif scheme.method == "mm":
        log_raw = log_lik + targets.log_prior_mix(x) - proposals.log_density_mix(x)
    else:
        raise ValueError(f"scheme {scheme.method!r} does not define weights")
    norm = log_sum_exp(log_raw)
    if not np.isfinite(norm):
        raise AllWeightsZero("all importance weights underflowed to zero")
    return SnisWeights(log_raw - norm, log_raw)


def _kahan_cumsum(values: np.ndarray) -> np.ndarray:
    out = np.empty_like(values)
    total = 0.0
    comp = 0.0
    for i, v in enumerate(values):
        y = v - comp
        t = total + y
        comp = (t - total) - y
        total = t
        out[i] = total
    return out


def systematic_resample_indices(weights: np.ndarray, u1: float) -> np.ndarray:
    """Index rule of systematic resampling for a given initial offset.

    Offsets u_i = u1 + (i-1)/N; index i maps to the smallest j whose
    cumulative weight reaches u_i.  The cumulative sum is compensated and
    its final entry clamped to exactly 1 so the last offset always lands.
    """
    w = np.asarray(weights, dtype=float).ravel()
    n = w.size
    cum = _kahan_cumsum(w)
    cum[-1] = 1.0
    u = u1 + np.arange(n) / n
    return np.searchsorted(cum, u, side="left")


def systematic_resample(
    ensemble: WeightedEnsemble, rng: np.random.Generator
) -> WeightedEnsemble:
    """Resample to equal weights with a single uniform draw."""
    u1 = rng.random() / ensemble.n
    idx = systematic_resample_indices(ensemble.weights, u1)
    return WeightedEnsemble.equal(ensemble.particles[idx])


def localized_cov(c: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Schur (elementwise) product of a covariance with a localization mask."""
    c = np.asarray(c, dtype=float)
    mask = np.asarray(mask, dtype=float)
    if c.shape != mask.shape:
        raise ShapeMismatch("mask shape must match the covariance")
    if not np.allclose(mask, mask.T) or not np.allclose(np.diag(mask), 1.0):
        raise ValueError("localization mask must be symmetric with unit diagonal")
    return mask * c


def inflated_cov(c: np.ndarray, delta: float) -> np.ndarray:
    """Variance inflation: multiply the covariance by delta^2 (delta >= 1)."""
    if delta < 1.0:
        raise ValueError("inflation factor must be >= 1")
    return (delta**2) * np.asarray(c, dtype=float)


def _compute_gain(
    scheme: SchemeSpec,
    targets: TargetSet,
    forecast: WeightedEnsemble,
    model: StateSpaceModel,
) -> np.ndarray:
    if scheme.gain_kind(model) == "previous":
        return gain_previous(
            targets.flow_images, model, scheme.localization, scheme.inflation
        )
    return gain_current(
        forecast.particles, model, scheme.localization, scheme.inflation
    )


def _build_proposals(
    scheme: SchemeSpec,
    targets: TargetSet,
    forecast: WeightedEnsemble,
    gain: np.ndarray,
    y: np.ndarray,
    model: StateSpaceModel,
) -> ProposalSet:
    if scheme.conditioning == "previous":
        return proposals_previous(targets.flow_images, gain, y, model)
    return proposals_current(forecast.particles, gain, y, model)


def _finish_weighted_step(
    scheme_label: str,
    flavor_spec: SchemeSpec,
    targets: TargetSet,
    proposals: ProposalSet,
    forecast: WeightedEnsemble,
    gain: np.ndarray | None,
    rng: np.random.Generator,
) -> tuple[WeightedEnsemble, StepSummary]:
    analysis = proposals.sample(forecast.particles, rng)
    weights = snis_weights(flavor_spec, targets, proposals, analysis)
    weighted = WeightedEnsemble(analysis, weights.log_normalized)
    resampled = systematic_resample(weighted, rng)
    summary = StepSummary(
        label=scheme_label,
        analysis=weighted,
        raw_log_weights=weights.log_raw,
        ess=_ess(weighted.weights),
        weight_cv_sq=_weight_cv_sq(weights.log_raw),
        gain=gain,
    )
    return resampled, summary


def filter_step(
    scheme: SchemeSpec,
    state: WeightedEnsemble,
    y: np.ndarray,
    model: StateSpaceModel,
    rng: np.random.Generator,
) -> tuple[WeightedEnsemble, StepSummary]:
    """One prediction/analysis cycle of the selected filter.

    Returns the new (equally weighted) ensemble and a summary holding the
    pre-resampling weighted analysis ensemble used by all diagnostics.
    """
    scheme.validate_against(model)
    forecast, targets = predict(state, model, rng)
    targets.set_observation(y)

    if scheme.method == "bpf":
        weights = snis_weights(scheme, targets, None, forecast.particles)
        weighted = WeightedEnsemble(forecast.particles, weights.log_normalized)
        resampled = systematic_resample(weighted, rng)
        summary = StepSummary(
            label=scheme.label,
            analysis=weighted,
            raw_log_weights=weights.log_raw,
            ess=_ess(weighted.weights),
            weight_cv_sq=_weight_cv_sq(weights.log_raw),
        )
        return resampled, summary

    gain = _compute_gain(scheme, targets, forecast, model)

    if scheme.method == "enkf":
        analysis = enkf_update(forecast.particles, gain, y, model, rng)
        equal = WeightedEnsemble.equal(analysis)
        summary = StepSummary(
            label=scheme.label,
            analysis=equal,
            raw_log_weights=np.zeros(equal.n),
            ess=float(equal.n),
            weight_cv_sq=0.0,
            gain=gain,
        )
        return equal, summary

    proposals = _build_proposals(scheme, targets, forecast, gain, y, model)
    return _finish_weighted_step(
        scheme.label, scheme, targets, proposals, forecast, gain, rng
    )


def generic_filter_step(
    proposal_fn: Callable[..., ProposalSet],
    flavor: str,
    state: WeightedEnsemble,
    y: np.ndarray,
    model: StateSpaceModel,
    rng: np.random.Generator,
) -> tuple[WeightedEnsemble, StepSummary]:
    """One cycle with a user-supplied proposal mechanism.

    ``proposal_fn(prev_particles, forecast_particles, y, model)`` must
    return a ``ProposalSet`` with everywhere-positive densities.  Proposal
    sets carrying a transport are sampled through it (so supplying the
    standard ensemble-conditioned proposals reproduces ``filter_step``
    draw-for-draw); plain proposal sets are sampled directly.
    """
    if flavor not in WEIGHTED_METHODS:
        raise ValueError(f"flavor must be one of {WEIGHTED_METHODS}")
    forecast, targets = predict(state, model, rng)
    targets.set_observation(y)
    proposals = proposal_fn(state.particles, forecast.particles, y, model)
    label = f"{_METHOD_LABELS[flavor]}_q"
    flavor_spec = SchemeSpec(method=flavor, conditioning="current")
    return _finish_weighted_step(
        label, flavor_spec, targets, proposals, forecast, None, rng
    )


def initial_ensemble(
    model: StateSpaceModel, n_particles: int, rng: np.random.Generator
) -> WeightedEnsemble:
    """Equally weighted ensemble of prior draws."""
    z = standard_normals(rng, (n_particles, model.d))
    particles = model.prior_mean[None, :] + z @ model.prior_cov.chol.T
    return WeightedEnsemble.equal(particles)


def run_filter(
    scheme: SchemeSpec,
    model: StateSpaceModel,
    observations: np.ndarray,
    n_particles: int,
    rng: np.random.Generator,
) -> list[StepSummary]:
    """Run the filter over a whole observation sequence."""
    state = initial_ensemble(model, n_particles, rng)
    summaries = []
    for y in np.atleast_2d(np.asarray(observations, dtype=float)):
        state, summary = filter_step(scheme, state, y, model, rng)
        summaries.append(summary)
    return summaries
