"""Dense SPD linear algebra and Gaussian / Gaussian-mixture log-densities.

Everything here is pure and reentrant: values are safe to share across
threads once constructed.  All weight and density arithmetic elsewhere in
the package happens in the log domain, built on :func:`log_sum_exp`; at the
observation-noise levels used by the benchmark models the likelihood
underflows in linear scale, so there is deliberately no linear-scale
density API.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    DimensionMismatch,
    EmptyInput,
    NotPositiveDefinite,
    TooFewSamples,
)

_LOG_2PI = float(np.log(2.0 * np.pi))


def chol(c: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises
    ------
    NotPositiveDefinite
        If a pivot is nonpositive.  No jitter is added: a failed
        factorization signals a genuinely degenerate covariance and callers
        are expected to surface that, not mask it.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {c.shape}")
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(
            f"matrix of dim {c.shape[0]} is not positive definite"
        ) from exc


@dataclass(frozen=True)
class SpdMatrix:
    """A symmetric positive definite matrix with its cached Cholesky factor.

    Construction validates symmetry (relative 1e-12), factorizes, and checks
    that ``L @ L.T`` reproduces the input to relative 1e-10.
    """

    entries: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        entries = np.atleast_2d(np.array(self.entries, dtype=float))
        object.__setattr__(self, "entries", entries)
        scale = max(float(np.abs(entries).max(initial=0.0)), np.finfo(float).tiny)
        if np.abs(entries - entries.T).max(initial=0.0) > 1e-12 * scale:
            raise NotPositiveDefinite("matrix is not symmetric to relative 1e-12")
        lower = chol(entries)
        recon = lower @ lower.T
        if np.abs(recon - entries).max() > 1e-10 * scale:
            raise NotPositiveDefinite("Cholesky reconstruction error above 1e-10")
        object.__setattr__(self, "chol", lower)
        entries.setflags(write=False)
        lower.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve ``entries @ x = b`` via the cached factor."""
        y = solve_triangular(self.chol, b, lower=True)
        return solve_triangular(self.chol.T, y, lower=False)

    def whiten(self, x: np.ndarray) -> np.ndarray:
        """Apply ``L^{-1}`` to vectors given as rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise DimensionMismatch(
                f"points of dim {x.shape[1]} vs matrix of dim {self.dim}"
            )
        return solve_triangular(self.chol, x.T, lower=True).T

    @classmethod
    def identity(cls, dim: int) -> "SpdMatrix":
        return cls(np.eye(dim))

    @classmethod
    def scaled_identity(cls, dim: int, scale: float) -> "SpdMatrix":
        return cls(scale * np.eye(dim))


def mahalanobis_sq(x: np.ndarray, mean: np.ndarray, cov: SpdMatrix) -> float:
    """Squared covariance-induced norm of ``x - mean``.

    Computed as ``||L^{-1}(x - mean)||^2`` via a triangular solve;
    nonnegative, and zero exactly when ``x == mean``.
    """
    x = np.asarray(x, dtype=float).ravel()
    mean = np.asarray(mean, dtype=float).ravel()
    if x.shape != mean.shape or x.size != cov.dim:
        raise DimensionMismatch(
            f"x {x.shape}, mean {mean.shape}, cov dim {cov.dim} do not agree"
        )
    z = solve_triangular(cov.chol, x - mean, lower=True)
    return float(z @ z)


@dataclass(frozen=True)
class GaussianComponent:
    """A single Gaussian, ``N(mean, cov)``."""

    mean: np.ndarray
    cov: SpdMatrix

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        object.__setattr__(self, "mean", mean)
        if mean.size != self.cov.dim:
            raise DimensionMismatch(
                f"mean of length {mean.size} vs cov of dim {self.cov.dim}"
            )

    @property
    def dim(self) -> int:
        return self.mean.size


def log_gaussian_density(x: np.ndarray, comp: GaussianComponent) -> float:
    """Log density of ``comp`` at ``x``."""
    m2 = mahalanobis_sq(x, comp.mean, comp.cov)
    return -0.5 * comp.dim * _LOG_2PI - 0.5 * comp.cov.log_det - 0.5 * m2


def log_sum_exp(values: np.ndarray, axis: int | None = None) -> np.ndarray | float:
    """Max-shifted, overflow-safe ``log(sum(exp(values)))``.

    Exact on constant vectors (returns ``value + log(n)``).  Returns ``-inf``
    for vectors that are identically ``-inf``.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise EmptyInput("log_sum_exp of an empty collection")
    shift = np.max(values, axis=axis, keepdims=True)
    shift_safe = np.where(np.isfinite(shift), shift, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(values - shift_safe), axis=axis)) + np.squeeze(
            shift_safe, axis=axis
        )
    out = np.where(np.squeeze(np.isfinite(shift), axis=axis), out, -np.inf)
    return float(out) if out.ndim == 0 else out


class GaussianMixture:
    """A weighted Gaussian mixture with a shared-covariance fast path.

    Parameters
    ----------
    means : (K, d) array
        Component means.
    cov : SpdMatrix or sequence of SpdMatrix
        One shared covariance (the common case in this package: all
        per-particle components share the process- or proposal-noise
        covariance, so a single Cholesky factor serves all K components and
        per-point density cost drops from O(K d^3) to O(K d^2)), or one
        covariance per component.
    weights : (K,) array, optional
        Mixture weights; uniform if omitted.  Must be nonnegative and sum
        to 1 within 1e-12.
    """

    def __init__(self, means, cov, weights=None):
        means = np.atleast_2d(np.asarray(means, dtype=float))
        self.means = means
        self.n_components = means.shape[0]
        self.dim = means.shape[1]
        if isinstance(cov, SpdMatrix):
            self.shared_cov: SpdMatrix | None = cov
            self.covs: list[SpdMatrix] | None = None
            if cov.dim != self.dim:
                raise DimensionMismatch("covariance dim does not match means")
        else:
            covs = list(cov)
            if len(covs) != self.n_components:
                raise DimensionMismatch("need one covariance per component")
            if any(c.dim != self.dim for c in covs):
                raise DimensionMismatch("covariance dim does not match means")
            self.shared_cov = None
            self.covs = covs
        if weights is None:
            weights = np.full(self.n_components, 1.0 / self.n_components)
        else:
            weights = np.asarray(weights, dtype=float).ravel()
            if weights.size != self.n_components:
                raise DimensionMismatch("need one weight per component")
            if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
                raise ValueError("mixture weights must be nonnegative and sum to 1")
        self.weights = weights
        with np.errstate(divide="ignore"):
            self.log_weights = np.log(weights)

    @classmethod
    def single(cls, comp: GaussianComponent) -> "GaussianMixture":
        return cls(comp.mean[None, :], comp.cov, np.array([1.0]))

    def component(self, k: int) -> GaussianComponent:
        cov = self.shared_cov if self.shared_cov is not None else self.covs[k]
        return GaussianComponent(self.means[k], cov)

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def _check_points(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise DimensionMismatch(
                f"points of dim {x.shape[1]} vs mixture of dim {self.dim}"
            )
        return x

    def component_log_densities(self, x) -> np.ndarray:
        """(n, K) matrix of per-component log densities at the rows of ``x``.

        Shared-covariance path: whiten points and means once, then expand
        the squared distances with one BLAS product.
        """
        x = self._check_points(x)
        if self.shared_cov is not None:
            cov = self.shared_cov
            z = cov.whiten(x)
            c = cov.whiten(self.means)
            sq = np.maximum(
                (z**2).sum(axis=1)[:, None]
                + (c**2).sum(axis=1)[None, :]
                - 2.0 * (z @ c.T),
                0.0,
            )
            const = -0.5 * self.dim * _LOG_2PI - 0.5 * cov.log_det
            return const - 0.5 * sq
        cols = []
        for k in range(self.n_components):
            covk = self.covs[k]
            z = covk.whiten(x - self.means[k])
            cols.append(
                -0.5 * self.dim * _LOG_2PI
                - 0.5 * covk.log_det
                - 0.5 * (z**2).sum(axis=1)
            )
        return np.column_stack(cols)

    def log_density(self, x) -> np.ndarray | float:
        """Log mixture density at ``x`` (a point or rows of points).

        Shared-covariance path is fused and chunked: the (points x
        components) matrix is processed in row blocks with preallocated
        buffers, which keeps the N^2 inner loop of the mixture-weighted
        filters inside cache instead of allocating full-size temporaries.
        """
        single = np.asarray(x).ndim == 1
        if self.shared_cov is None:
            comp = self.component_log_densities(x)
            out = log_sum_exp(comp + self.log_weights[None, :], axis=1)
            return float(out[0]) if single else out
        x = self._check_points(x)
        cov = self.shared_cov
        z = cov.whiten(x)
        c = cov.whiten(self.means)
        const = -0.5 * self.dim * _LOG_2PI - 0.5 * cov.log_det
        # per-component offset folds the squared norm and the mixture weight
        offset = self.log_weights - 0.5 * (c**2).sum(axis=1)
        zz = 0.5 * (z**2).sum(axis=1)
        n = z.shape[0]
        out = np.empty(n)
        chunk = max(1, min(n, 1 << 22) // max(self.n_components, 1))
        buf = np.empty((min(chunk, n), self.n_components))
        for i in range(0, n, chunk):
            j = min(i + chunk, n)
            b = buf[: j - i]
            np.dot(z[i:j], c.T, out=b)
            b += offset[None, :]
            shift = b.max(axis=1)
            b -= shift[:, None]
            np.exp(b, out=b)
            out[i:j] = np.log(b.sum(axis=1)) + shift
        out += const - zz
        return float(out[0]) if single else out

    def diagonal_log_densities(self, x) -> np.ndarray:
        """Log density of component i at point i (requires n == K).

        This is the per-particle "own component" evaluation used by the
        individual-target and individual-proposal weighting schemes.
        """
        x = self._check_points(x)
        if x.shape[0] != self.n_components:
            raise DimensionMismatch("diagonal evaluation needs one point per component")
        if self.shared_cov is not None:
            cov = self.shared_cov
            z = cov.whiten(x - self.means)
            return (
                -0.5 * self.dim * _LOG_2PI
                - 0.5 * cov.log_det
                - 0.5 * (z**2).sum(axis=1)
            )
        return np.array(
            [
                log_gaussian_density(x[k], self.component(k))
                for k in range(self.n_components)
            ]
        )


def log_mixture_density(x: np.ndarray, mix: GaussianMixture) -> float:
    """Log density of ``mix`` at the single point ``x``."""
    return mix.log_density(np.asarray(x, dtype=float).ravel())


def empirical_cov(xs: np.ndarray, ys: np.ndarray | None = None) -> np.ndarray:
    """Empirical (cross-)covariance with divisor ``N - 1``.

    ``xs`` and ``ys`` are (N, d) arrays of row vectors; ``ys`` defaults to
    ``xs``.  Symmetric PSD when ``ys is xs``.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = xs if ys is None else np.atleast_2d(np.asarray(ys, dtype=float))
    if xs.shape[0] != ys.shape[0]:
        raise DimensionMismatch("xs and ys must have the same number of samples")
    n = xs.shape[0]
    if n < 2:
        raise TooFewSamples("empirical covariance needs at least 2 samples")
    xc = xs - xs.mean(axis=0)
    yc = ys - ys.mean(axis=0)
    return (xc.T @ yc) / (n - 1)


def weighted_empirical_cov(xs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weight-corrected covariance; reduces to ``empirical_cov`` for uniform weights.

    Uses the standard unbiased correction ``1 / (1 - sum w^2)`` so that a
    weighted ensemble feeds the same gain formulas as an equally weighted
    one.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    w = np.asarray(weights, dtype=float).ravel()
    if xs.shape[0] != w.size:
        raise DimensionMismatch("one weight per sample required")
    if xs.shape[0] < 2:
        raise TooFewSamples("weighted covariance needs at least 2 samples")
    wsum = w.sum()
    w = w / wsum
    denom = 1.0 - float(w @ w)
    if denom <= 0.0:
        raise TooFewSamples("effective sample size too small for covariance")
    xc = xs - w @ xs
    return (xc.T * w) @ xc / denom
