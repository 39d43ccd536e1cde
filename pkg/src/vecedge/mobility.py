"""Gauss-Markov vehicle mobility with reflecting area boundaries.

The velocity recursion is applied independently per axis with a shared
memory degree and innovation standard deviation.
"""

from __future__ import annotations

import numpy as np


def step_velocity(v, v_mean, omega: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """One Gauss-Markov velocity update; works on (2,) or (n, 2) arrays."""
    v = np.asarray(v, dtype=float)
    w = rng.normal(0.0, sigma, size=v.shape) if sigma > 0 else np.zeros(v.shape)
    return omega * v + (1.0 - omega) * np.asarray(v_mean, dtype=float) + np.sqrt(1.0 - omega ** 2) * w


def _reflect(x: np.ndarray, area: float) -> tuple[np.ndarray, np.ndarray]:
    """Fold coordinates back into [0, area]; also report which ones flipped direction."""
    period = 2.0 * area
    folded = np.mod(x, period)
    flipped_back = folded > area
    folded = np.where(flipped_back, period - folded, folded)
    # odd number of wall hits <=> direction reversed
    hits = np.floor_divide(x, area)
    flips = np.mod(hits, 2) == 1
    inside = (x >= 0) & (x <= area)
    return folded, flips & ~inside


def step_position(q, v, delta: float, area: float) -> tuple[np.ndarray, np.ndarray]:
    """Integrate position over one slot and reflect at the area edges.

    Returns the new position and the velocity with every reflected
    component negated.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    q_new, flips = _reflect(q + v * delta, area)
    return q_new, np.where(flips, -v, v)


def advance(q, v, v_mean, omega: float, sigma: float, delta: float, area: float,
            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Move vehicles for one slot, then draw next-slot velocities.

    Components that hit a wall have both their velocity and their asymptotic
    mean velocity negated so mean reversion keeps pointing inward.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    q_new, flips = _reflect(q + v * delta, area)
    v_now = np.where(flips, -v, v)
    v_mean = np.where(flips, -np.asarray(v_mean, dtype=float), v_mean)
    return q_new, step_velocity(v_now, v_mean, omega, sigma, rng), v_mean
