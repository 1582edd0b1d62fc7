import numpy as np
import pytest

from mixenkf import SpdMatrix, StateSpaceModel


def make_linear_gaussian_1d(a=0.9, q=1.0, r=1.0, m0=0.0, p0=1.0) -> StateSpaceModel:
    """Scalar linear-Gaussian model with an exact Kalman recursion oracle."""
    return StateSpaceModel(
        d=1,
        m=1,
        flow=lambda x: a * np.asarray(x, dtype=float),
        obs=lambda x: np.asarray(x, dtype=float),
        q=SpdMatrix([[q]]),
        r=SpdMatrix([[r]]),
        prior_mean=[m0],
        prior_cov=SpdMatrix([[p0]]),
        linear_obs=[[1.0]],
        name="linear_gaussian_1d",
    )


def kalman_oracle(ys, a=0.9, q=1.0, r=1.0, m0=0.0, p0=1.0):
    """Exact filtering means/variances for the scalar linear-Gaussian model."""
    m, p = m0, p0
    out = []
    for y in np.asarray(ys, dtype=float).ravel():
        m, p = a * m, a * a * p + q
        k = p / (p + r)
        m, p = m + k * (y - m), (1.0 - k) * p
        out.append((m, p))
    return out


def random_spd(rng: np.random.Generator, dim: int) -> np.ndarray:
    m = rng.standard_normal((dim, dim))
    return m.T @ m + 0.1 * np.eye(dim)


@pytest.fixture
def rng():
    return np.random.default_rng(20240923)
