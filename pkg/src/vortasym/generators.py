"""Random smooth, decaying, divergence-free test fields."""

from __future__ import annotations

import numpy as np

from . import biot_savart as bs
from . import field_core as fc


def filtered_noise(grid: fc.Grid3, rng: np.random.Generator, smoothing: float = 1.0, components: int = 3) -> np.ndarray:
    """White noise passed through the spectral filter exp(-smoothing^2 |k|^2)."""
    noise = rng.standard_normal((components,) + (grid.n,) * 3)
    c = fc.forward(noise) * np.exp(-(smoothing**2) * grid.k2) * grid.nyquist_free
    return fc.inverse(c, grid.n)


def gaussian_window(grid: fc.Grid3, width: float) -> np.ndarray:
    return np.exp(-grid.radius**2 / (2.0 * width**2))


def random_potential(grid: fc.Grid3, seed: int, width: float = 1.5, smoothing: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return filtered_noise(grid, rng, smoothing) * gaussian_window(grid, width)


def random_solenoidal(grid: fc.Grid3, seed: int, width: float = 1.5, smoothing: float = 1.0, laplacian_power: int = 0) -> fc.VectorFieldR:
    """curl of a Gaussian-windowed filtered-noise potential.

    Taking a curl (rather than Leray-projecting windowed noise) keeps the
    Gaussian decay, so weighted norms and moments are finite in the box.
    ``laplacian_power`` p applies (-Laplacian)^p to the potential first,
    which makes every monomial moment of order <= 2p of the result vanish.
    """
    a_hat = fc.forward(random_potential(grid, seed, width, smoothing))
    if laplacian_power:
        a_hat = a_hat * grid.k2**laplacian_power
    w_hat = bs.curl_hat(a_hat, grid)
    return fc.VectorFieldR(grid, fc.inverse(w_hat, grid.n))


def normalized(f: fc.VectorFieldR, target: float, m: float) -> fc.VectorFieldR:
    norm = fc.weighted_norm(f, m)
    if norm == 0.0:
        raise ValueError("cannot normalise the zero field")
    return f * (target / norm)


def non_solenoidal(grid: fc.Grid3, width: float = 2.0) -> fc.VectorFieldR:
    """xi times a Gaussian window (divergence strictly positive at the origin)."""
    win = gaussian_window(grid, width)
    x1, x2, x3 = grid.coords()
    return fc.VectorFieldR(grid, np.stack([x1 * win, x2 * win, x3 * win]))
