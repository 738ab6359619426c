"""Small numeric helpers shared across modules."""

import math

import numpy as np


def round_half_away(x: float) -> int:
    """Round to the nearest integer with ties away from zero.

    Python's built-in round() rounds half to even (round(0.5) == 0), which
    would make window steps and split sizes disagree with ordinary rounding.
    """
    if x >= 0:
        return int(math.floor(x + 0.5))
    return int(math.ceil(x - 0.5))


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float64) -> np.ndarray:
    """Normal(0, std) samples with anything beyond two deviations redrawn."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)
