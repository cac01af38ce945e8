"""Shared test fixtures: deterministic synthetic field models."""

import numpy as np

from magnav.geomag import SphericalHarmonicModel


def make_test_model(max_degree=13, epoch=2025.0, seed=42):
    """Deterministic degree-13 coefficient set with dipole-like decay.

    Same construction as tests/_oracle_geomag.py, which was used to freeze
    the reference synthesis values.
    """
    rng = np.random.default_rng(seed)
    size = max_degree + 1
    g = np.zeros((size, size))
    h = np.zeros((size, size))
    g_dot = np.zeros((size, size))
    h_dot = np.zeros((size, size))
    for n in range(1, max_degree + 1):
        scale = 30_000.0 / n**2
        for m in range(0, n + 1):
            g[n, m] = round(scale * rng.standard_normal(), 1)
            if m > 0:
                h[n, m] = round(scale * rng.standard_normal(), 1)
            g_dot[n, m] = round(10.0 / n * rng.standard_normal(), 2)
            if m > 0:
                h_dot[n, m] = round(10.0 / n * rng.standard_normal(), 2)
    return SphericalHarmonicModel(epoch, g, h, g_dot, h_dot)
