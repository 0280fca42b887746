"""Weight initialization helpers (explicit rng, no global state)."""

import math

import numpy as np


def he_uniform(rng, shape, fan_in):
    """Uniform in [-sqrt(6/fan_in), +sqrt(6/fan_in)]."""
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform_range(-limit, limit, shape)


def orthogonal(rng, n):
    """Orthogonal n x n matrix via QR of a random normal matrix.

    The sign fix (diagonal of R forced positive) makes the result unique,
    so the same rng stream always gives the same matrix.
    """
    a = rng.normal((n, n))
    q, r = np.linalg.qr(a)
    return np.ascontiguousarray(q * np.sign(np.diag(r))[None, :])
