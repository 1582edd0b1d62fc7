"""Evaluation metrics: MAE of a test integrand, squared MMD, ESS, weight CV.

The squared maximum mean discrepancy is the biased quadratic-form estimator
(diagonal terms included) with a Gaussian kernel whose bandwidth comes from
the reference ensemble only, via the median heuristic on pairwise squared
distances divided by log of the reference size.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import TooFewSamples, ZeroBandwidth, ZeroMeanWeight
from .gauss import log_sum_exp

#: CSV schema for sweep outputs. ``status`` is "ok" for completed runs and an
#: error tag (e.g. "AllWeightsZero") for runs recorded as failures.
RUN_RECORD_HEADER = (
    "method,N,t,rep,mae,mmd_sq,ess,weight_cv_sq,wall_ms,status"
)


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian RBF kernel exp(-||x-y||^2 / (2 * bandwidth_sq))."""

    bandwidth_sq: float

    def __post_init__(self):
        if not self.bandwidth_sq > 0:
            raise ZeroBandwidth("kernel bandwidth must be positive")


@dataclass
class RunRecord:
    """Per-(method, N, t, repetition) diagnostics row."""

    method: str
    n: int
    t: int
    rep: int
    mae: float = np.nan
    mmd_sq: float = np.nan
    ess: float = np.nan
    weight_cv_sq: float = np.nan
    wall_ms: float = np.nan
    status: str = "ok"

    def __post_init__(self):
        if self.status == "ok" and np.isfinite(self.mmd_sq) and self.mmd_sq < -1e-9:
            raise ValueError(f"mmd_sq {self.mmd_sq} below the -1e-9 numerical floor")

    def to_csv_row(self) -> str:
        def fmt(v):
            return "" if not np.isfinite(v) else repr(float(v))

        return ",".join(
            [
                self.method,
                str(self.n),
                str(self.t),
                str(self.rep),
                fmt(self.mae),
                fmt(self.mmd_sq),
                fmt(self.ess),
                fmt(self.weight_cv_sq),
                fmt(self.wall_ms),
                self.status,
            ]
        )

    @classmethod
    def from_csv_row(cls, row: list[str]) -> "RunRecord":
        def num(v):
            return float(v) if v != "" else np.nan

        status = row[9] if len(row) > 9 else "ok"
        return cls(
            method=row[0],
            n=int(row[1]),
            t=int(row[2]),
            rep=int(row[3]),
            mae=num(row[4]),
            mmd_sq=num(row[5]),
            ess=num(row[6]),
            weight_cv_sq=num(row[7]),
            wall_ms=num(row[8]),
            status=status,
        )


def mae(ens, ref, g) -> float:
    """Absolute difference of the weighted means of ``g`` under two ensembles.

    ``g`` maps (n, d) rows to (n,) values; both ensembles must carry
    normalized weights.
    """
    est = float(ens.weights @ np.asarray(g(ens.particles), dtype=float))
    ref_est = float(ref.weights @ np.asarray(g(ref.particles), dtype=float))
    return abs(est - ref_est)


def median_bandwidth(ref_particles: np.ndarray) -> KernelSpec:
    """Median heuristic bandwidth from the reference particles only.

    bandwidth_sq = median of pairwise squared distances (strict upper
    triangle) divided by log of the reference size.
    """
    x = np.atleast_2d(np.asarray(ref_particles, dtype=float))
    n = x.shape[0]
    if n < 2:
        raise TooFewSamples("median bandwidth needs at least 2 reference points")
    med = float(np.median(pdist(x, "sqeuclidean")))
    if med <= 0.0:
        raise ZeroBandwidth("all reference points coincide")
    return KernelSpec(med / np.log(n))


def _kernel_quad(
    x: np.ndarray,
    wx: np.ndarray,
    y: np.ndarray,
    wy: np.ndarray,
    ell_sq: float,
    block: int = 2048,
) -> float:
    """w_x^T K(x, y) w_y accumulated blockwise (memory capped)."""
    total = 0.0
    for i in range(0, x.shape[0], block):
        d2 = cdist(x[i : i + block], y, "sqeuclidean")
        total += float(wx[i : i + block] @ np.exp(-d2 / (2.0 * ell_sq)) @ wy)
    return total


def mmd_sq(ens, ref, kernel: KernelSpec) -> float:
    """Squared MMD between two weighted ensembles (biased V-statistic form).

    Symmetric in its arguments.  Tiny negative values (cancellation noise)
    are returned as-is but flagged with a warning below the -1e-9 floor.
    """
    x, wx = np.atleast_2d(ens.particles), ens.weights
    y, wy = np.atleast_2d(ref.particles), ref.weights
    ell_sq = kernel.bandwidth_sq
    value = (
        _kernel_quad(x, wx, x, wx, ell_sq)
        + _kernel_quad(y, wy, y, wy, ell_sq)
        - 2.0 * _kernel_quad(x, wx, y, wy, ell_sq)
    )
    if value < -1e-9:
        warnings.warn(f"mmd_sq = {value} fell below the numerical floor")
    return value


def ess(weights: np.ndarray) -> float:
    """Effective sample size 1 / sum(w^2) of normalized weights; in [1, N]."""
    w = np.asarray(weights, dtype=float).ravel()
    return 1.0 / float(w @ w)


def weight_cv_sq(log_raw_weights: np.ndarray, log_z: float | None = None) -> float:
    """Squared coefficient of variation of raw (unnormalized) weights.

    Sample variance (ddof=1) of the weights rescaled to mean one.  The exact
    normalizer of the weight ratios is an intractable integral, so by default
    it is estimated by the empirical mean of the raw weights; pass ``log_z``
    to rescale by a known normalizer instead.
    """
    lv = np.asarray(log_raw_weights, dtype=float).ravel()
    if lv.size < 2:
        raise TooFewSamples("need at least 2 weights")
    if log_z is None:
        lse = log_sum_exp(lv)
        if not np.isfinite(lse):
            raise ZeroMeanWeight("all raw weights are zero")
        log_z = lse - np.log(lv.size)
    ratios = np.exp(lv - log_z)
    return float(np.var(ratios, ddof=1))
