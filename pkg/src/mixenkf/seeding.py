"""Deterministic seed derivation and the Box-Muller Gaussian sampler.

All stochastic components of the package draw their randomness from
``numpy.random.Generator`` streams whose seeds are derived from a single run
seed with :func:`derive_seed`.  The derivation is a plain splitmix64 chain
(documented here so that manifests can name it): every component of the key
is folded into a 64-bit state, strings via their UTF-8 bytes, integers
directly, and the state is finalized with one extra mixing round.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

SEED_MIX_NAME = "splitmix64-fold-v1"


def _splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, (z ^ (z >> 31)) & _MASK64


def derive_seed(*components: int | str) -> int:
    """Fold components into a 64-bit sub-seed, deterministically.

    Accepts integers (e.g. the run seed, time indices, repetition counters)
    and strings (role labels such as ``"forecast"``).
    """
    state = 0x8C90FD9B1C9F3A61
    for comp in components:
        if isinstance(comp, str):
            for byte in comp.encode("utf-8"):
                state, out = _splitmix64(state ^ byte)
                state ^= out
        elif isinstance(comp, (int, np.integer)):
            state, out = _splitmix64(state ^ (int(comp) & _MASK64))
            state ^= out
        else:
            raise TypeError(f"seed components must be int or str, got {type(comp)!r}")
    _, out = _splitmix64(state)
    return out


def rng_from(*components: int | str) -> np.random.Generator:
    """Generator seeded with ``derive_seed(*components)``."""
    return np.random.default_rng(derive_seed(*components))


def standard_normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal draws via Box-Muller over the generator's uniforms.

    Uniforms are consumed in index order (one block for the radii, one for
    the angles), so the draw is reproducible for a given generator state.
    """
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    n = int(np.prod(shape)) if shape else 1
    pairs = (n + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # in (0, 1]; avoids log(0)
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:n]
    return z.reshape(shape)
