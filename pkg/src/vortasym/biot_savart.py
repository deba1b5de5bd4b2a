"""Velocity from vorticity, curl, divergence and Leray projection (spectral)."""

from __future__ import annotations

import numpy as np

from . import _backend
from . import field_core as fc


def _ks(grid: fc.Grid3):
    return grid.kx[:, None, None], grid.kx[None, :, None], grid.kz[None, None, :]


def velocity_hat(w_hat: np.ndarray, grid: fc.Grid3, out: np.ndarray | None = None) -> np.ndarray:
    """v_hat = i k x w_hat / |k|^2 on raw coefficient arrays (mean and Nyquist -> 0)."""
    if out is None:
        out = np.empty_like(w_hat)
    return _backend.biot_savart_hat(w_hat, grid.kx, grid.kx, grid.kz, grid.inv_k2, out)


def curl_hat(a_hat: np.ndarray, grid: fc.Grid3, mask: np.ndarray | None = None, out: np.ndarray | None = None) -> np.ndarray:
    if out is None:
        out = np.empty_like(a_hat)
    if mask is None:
        mask = grid.nyquist_free
    return _backend.curl_hat_masked(a_hat, grid.kx, grid.kx, grid.kz, mask, out)


def divergence_hat(a_hat: np.ndarray, grid: fc.Grid3) -> np.ndarray:
    k1, k2, k3 = _ks(grid)
    return 1j * (k1 * a_hat[0] + k2 * a_hat[1] + k3 * a_hat[2])


def leray_hat(a_hat: np.ndarray, grid: fc.Grid3) -> np.ndarray:
    """Remove k (k . a)/|k|^2; the mean mode is kept and Nyquist planes are zeroed."""
    k1, k2, k3 = _ks(grid)
    kdota = (k1 * a_hat[0] + k2 * a_hat[1] + k3 * a_hat[2]) * grid.inv_k2
    out = np.empty_like(a_hat)
    out[0] = a_hat[0] - k1 * kdota
    out[1] = a_hat[1] - k2 * kdota
    out[2] = a_hat[2] - k3 * kdota
    mean = a_hat[:, 0, 0, 0].copy()
    out *= grid.nyquist_free
    out[:, 0, 0, 0] = mean
    return out


def velocity_from_vorticity(w: fc.VectorFieldR) -> fc.VectorFieldR:
    """Periodic Biot-Savart velocity; a nonzero mean of w is ignored.

    Use ``mean_vorticity`` to see what was dropped.
    """
    grid = w.grid
    return fc.VectorFieldR(grid, fc.inverse(velocity_hat(fc.forward(w.data), grid), grid.n))


def mean_vorticity(w: fc.VectorFieldR) -> np.ndarray:
    return np.mean(w.data, axis=(1, 2, 3))


def curl(f: fc.VectorFieldR) -> fc.VectorFieldR:
    grid = f.grid
    return fc.VectorFieldR(grid, fc.inverse(curl_hat(fc.forward(f.data), grid), grid.n))


def divergence(f: fc.VectorFieldR) -> fc.ScalarFieldR:
    grid = f.grid
    return fc.ScalarFieldR(grid, fc.inverse(divergence_hat(fc.forward(f.data), grid), grid.n))


def leray_project(f: fc.VectorFieldR) -> fc.VectorFieldR:
    grid = f.grid
    return fc.VectorFieldR(grid, fc.inverse(leray_hat(fc.forward(f.data), grid), grid.n))


def gradient(grid: fc.Grid3, scalar: np.ndarray) -> fc.VectorFieldR:
    c = fc.forward(scalar)
    return fc.VectorFieldR(grid, np.stack([fc.inverse(1j * k * c, grid.n) for k in _ks(grid)]))


def partial(f: fc.VectorFieldR, axis: int) -> fc.VectorFieldR:
    """Spectral derivative along axis 0, 1 or 2."""
    grid = f.grid
    k = _ks(grid)[axis]
    return fc.VectorFieldR(grid, fc.inverse(1j * k * fc.forward(f.data), grid.n))


def divergence_residual(f: fc.VectorFieldR) -> float:
    """max |div f| / max |f| (0 for the zero field)."""
    top = f.max_abs()
    if top == 0.0:
        return 0.0
    return divergence(f).max_abs() / top
