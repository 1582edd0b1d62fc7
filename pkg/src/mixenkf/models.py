"""Benchmark state-space models: flows, observation maps, truth simulation.

Three chaotic/oscillatory systems are provided (predator-prey in log
coordinates, the classic 3-variable convection system, and the 40-variable
cyclic atmosphere toy model), each with a linear (identity) or componentwise
arctan observation map.  The dynamics map is the flow of the underlying ODE
over a fixed window, integrated with fixed-step classical RK4 so that runs
are deterministic and reproducible.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import partial
from typing import Callable

import numpy as np

from .errors import (
    DimensionMismatch,
    DimensionTooSmall,
    NonFiniteState,
    UnknownName,
)
from .gauss import SpdMatrix
from .seeding import standard_normals

LORENZ63_SIGMA = 10.0
LORENZ63_RHO = 28.0
LORENZ63_BETA = 8.0 / 3.0


def lotka_volterra_rhs(z: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    """Predator-prey field in logarithmic coordinates (u, v) = (log N, log P)."""
    z = np.asarray(z, dtype=float)
    u, v = z[..., 0], z[..., 1]
    return np.stack([1.0 - np.exp(v), alpha * (np.exp(u) - 1.0)], axis=-1)


def lorenz63_rhs(z: np.ndarray) -> np.ndarray:
    """Three-variable convection system with the standard chaotic parameters."""
    z = np.asarray(z, dtype=float)
    u, v, w = z[..., 0], z[..., 1], z[..., 2]
    return np.stack(
        [
            LORENZ63_SIGMA * (v - u),
            LORENZ63_RHO * u - v - u * w,
            u * v - LORENZ63_BETA * w,
        ],
        axis=-1,
    )


def lorenz96_rhs(z: np.ndarray, forcing: float = 8.0) -> np.ndarray:
    """Cyclic advection-dissipation toy model, d >= 4 coupled scalars."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] < 4:
        raise DimensionTooSmall("this model needs dimension >= 4")
    zp1 = np.roll(z, -1, axis=-1)
    zm2 = np.roll(z, 2, axis=-1)
    zm1 = np.roll(z, 1, axis=-1)
    return (zp1 - zm2) * zm1 - z + forcing


def rk4_flow(
    rhs: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    total_time: float,
    substeps: int,
) -> np.ndarray:
    """Classical fourth-order Runge-Kutta flow over a fixed window.

    ``x0`` may be a single state or a batch of states (rows); ``rhs`` must
    broadcast accordingly.  Raises ``NonFiniteState`` if any intermediate
    state stops being finite (blow-up guard for chaotic systems).
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if total_time < 0:
        raise ValueError("total_time must be >= 0")
    x = np.asarray(x0, dtype=float).copy()
    h = total_time / substeps
    for _ in range(substeps):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * h * k1)
        k3 = rhs(x + 0.5 * h * k2)
        k4 = rhs(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NonFiniteState("state became non-finite during integration")
    return x


def obs_identity(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float)


def obs_arctan(x: np.ndarray, gamma: float) -> np.ndarray:
    """Componentwise saturating observation map arctan(gamma * x / 20)."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return np.arctan(gamma * np.asarray(x, dtype=float) / 20.0)


def test_integrand(x: np.ndarray, gamma: float) -> np.ndarray | float:
    """The scalar diagnostic integrand sin(4 * gamma * sum_j x_j)."""
    x = np.asarray(x, dtype=float)
    out = np.sin(4.0 * gamma * x.sum(axis=-1))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class StateSpaceModel:
    """Discrete-time state-space model with additive Gaussian noise.

    ``flow`` is the deterministic dynamics map, ``obs`` the observation map;
    ``linear_obs`` holds the matrix H exactly when ``obs`` is linear.
    """

    d: int
    m: int
    flow: Callable[[np.ndarray], np.ndarray]
    obs: Callable[[np.ndarray], np.ndarray]
    q: SpdMatrix
    r: SpdMatrix
    prior_mean: np.ndarray
    prior_cov: SpdMatrix
    linear_obs: np.ndarray | None = None
    name: str = "custom"
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(
            self, "prior_mean", np.asarray(self.prior_mean, dtype=float).ravel()
        )
        if self.q.dim != self.d or self.prior_cov.dim != self.d:
            raise DimensionMismatch("process-noise / prior covariance dim != d")
        if self.r.dim != self.m:
            raise DimensionMismatch("observation-noise covariance dim != m")
        if self.prior_mean.size != self.d:
            raise DimensionMismatch("prior mean length != d")
        if self.linear_obs is not None:
            h = np.asarray(self.linear_obs, dtype=float)
            if h.shape != (self.m, self.d):
                raise DimensionMismatch("linear observation matrix must be m x d")
            object.__setattr__(self, "linear_obs", h)

    @property
    def is_linear_obs(self) -> bool:
        return self.linear_obs is not None


@dataclass
class Trajectory:
    """A simulated truth: states x_0..x_T and observations y_1..y_T."""

    states: np.ndarray
    observations: np.ndarray

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=float))
        if self.states.shape[0] != self.observations.shape[0] + 1:
            raise DimensionMismatch("need exactly one more state than observations")

    @property
    def horizon(self) -> int:
        return self.observations.shape[0]

    def to_csv(self) -> str:
        """CSV with header ``t,x_1..x_d,y_1..y_m`` (y columns empty at t=0)."""
        d = self.states.shape[1]
        m = self.observations.shape[1]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["t"]
            + [f"x_{j + 1}" for j in range(d)]
            + [f"y_{j + 1}" for j in range(m)]
        )
        for t in range(self.states.shape[0]):
            row = [t] + [repr(float(v)) for v in self.states[t]]
            if t == 0:
                row += [""] * m
            else:
                row += [repr(float(v)) for v in self.observations[t - 1]]
            writer.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        d = sum(1 for name in header if name.startswith("x_"))
        states, observations = [], []
        for row in reader:
            states.append([float(v) for v in row[1 : 1 + d]])
            ys = row[1 + d :]
            if any(v != "" for v in ys):
                observations.append([float(v) for v in ys])
        return cls(np.array(states), np.array(observations))


_SUBSTEP_DEFAULTS = {"lotka_volterra": 500, "lorenz63": 200, "lorenz96": 50}


def build_benchmark(
    name: str, obs_kind: str = "linear", substeps: int | None = None
) -> StateSpaceModel:
    """Construct one of the three benchmark models.

    The scale parameter gamma fixes all covariances: the prior and process
    noise are ``gamma^-2 I``; observation noise is ``(10 gamma)^-2 I`` for
    the linear (identity) map and ``1e-4 I`` for the arctan map.
    """
    if name == "lotka_volterra":
        d, gamma, dtau = 2, 20.0, 5.0
        m0 = np.log(np.array([1.25, 0.66]))
        rhs = partial(lotka_volterra_rhs, alpha=1.0)
    elif name == "lorenz63":
        d, gamma, dtau = 3, 1.0, 2.0
        m0 = np.array([0.0, 0.0, 22.0])
        rhs = lorenz63_rhs
    elif name == "lorenz96":
        d, gamma, dtau = 40, 4.0, 0.5
        m0 = np.zeros(40)
        rhs = partial(lorenz96_rhs, forcing=8.0)
    else:
        raise UnknownName(f"unknown benchmark model {name!r}")

    if substeps is None:
        substeps = _SUBSTEP_DEFAULTS[name]
    flow = partial(rk4_flow, rhs, total_time=dtau, substeps=substeps)

    q = SpdMatrix.scaled_identity(d, gamma**-2)
    sigma0 = SpdMatrix.scaled_identity(d, gamma**-2)
    if obs_kind == "linear":
        obs = obs_identity
        linear_obs = np.eye(d)
        r = SpdMatrix.scaled_identity(d, (10.0 * gamma) ** -2)
    elif obs_kind == "arctan":
        obs = partial(obs_arctan, gamma=gamma)
        linear_obs = None
        r = SpdMatrix.scaled_identity(d, 1e-4)
    else:
        raise UnknownName(f"unknown observation kind {obs_kind!r}")

    return StateSpaceModel(
        d=d,
        m=d,
        flow=flow,
        obs=obs,
        q=q,
        r=r,
        prior_mean=m0,
        prior_cov=sigma0,
        linear_obs=linear_obs,
        name=f"{name}/{obs_kind}",
        gamma=gamma,
    )


def simulate_truth(
    model: StateSpaceModel, horizon: int, rng: np.random.Generator
) -> Trajectory:
    """Sample a truth trajectory and its noisy observations.

    x_0 from the prior, then x_t = flow(x_{t-1}) + process noise and
    y_t = obs(x_t) + observation noise; deterministic for a fixed generator
    state.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    states = np.empty((horizon + 1, model.d))
    observations = np.empty((horizon, model.m))
    states[0] = model.prior_mean + model.prior_cov.chol @ standard_normals(
        rng, model.d
    )
    for t in range(1, horizon + 1):
        drift = model.flow(states[t - 1])
        states[t] = drift + model.q.chol @ standard_normals(rng, model.d)
        observations[t - 1] = model.obs(states[t]) + model.r.chol @ standard_normals(
            rng, model.m
        )
        if not np.all(np.isfinite(states[t])):
            raise NonFiniteState(f"truth state at t={t} is not finite")
    return Trajectory(states, observations)
