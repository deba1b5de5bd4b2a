"""Backend selection and hot pointwise kernels.

The kernels below exist in two flavours: numba-compiled loops and plain
numpy expressions.  ``VORTASYM_BACKEND=numpy`` forces the numpy path; the
default is numba when it imports cleanly.  ``VORTASYM_THREADS`` caps the
worker count handed to the FFT library (default 1, which is the
reproducible mode).
"""

from __future__ import annotations

import os

import numpy as np

_requested = os.environ.get("VORTASYM_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"VORTASYM_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    if _requested == "numpy":
        raise ImportError
    from numba import njit

    BACKEND = "numba"
except ImportError:  # pragma: no cover - exercised only without numba
    BACKEND = "numpy"


def fft_workers() -> int:
    raw = os.environ.get("VORTASYM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"VORTASYM_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


# ---------------------------------------------------------------- numpy path

def _cross_np(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


def _biot_savart_hat_np(w_hat, kx, ky, kz, inv_k2, out):
    # v = i k x w / |k|^2
    kx = kx[:, None, None]
    ky = ky[None, :, None]
    kz = kz[None, None, :]
    out[0] = 1j * (ky * w_hat[2] - kz * w_hat[1]) * inv_k2
    out[1] = 1j * (kz * w_hat[0] - kx * w_hat[2]) * inv_k2
    out[2] = 1j * (kx * w_hat[1] - ky * w_hat[0]) * inv_k2
    return out


def _curl_hat_masked_np(a_hat, kx, ky, kz, mask, out):
    kx = kx[:, None, None]
    ky = ky[None, :, None]
    kz = kz[None, None, :]
    out[0] = 1j * (ky * a_hat[2] - kz * a_hat[1]) * mask
    out[1] = 1j * (kz * a_hat[0] - kx * a_hat[2]) * mask
    out[2] = 1j * (kx * a_hat[1] - ky * a_hat[0]) * mask
    return out


def _weighted_sq_sum_np(data, weight):
    sq = data[0] * data[0] + data[1] * data[1] + data[2] * data[2]
    return float(np.sum(sq * weight))


# ---------------------------------------------------------------- numba path

if BACKEND == "numba":

    @njit(cache=True)
    def _cross_nb(a, b, out):
        n0, n1, n2 = a.shape[1], a.shape[2], a.shape[3]
        for i in range(n0):
            for j in range(n1):
                for k in range(n2):
                    a0 = a[0, i, j, k]
                    a1 = a[1, i, j, k]
                    a2 = a[2, i, j, k]
                    b0 = b[0, i, j, k]
                    b1 = b[1, i, j, k]
                    b2 = b[2, i, j, k]
                    out[0, i, j, k] = a1 * b2 - a2 * b1
                    out[1, i, j, k] = a2 * b0 - a0 * b2
                    out[2, i, j, k] = a0 * b1 - a1 * b0
        return out

    @njit(cache=True)
    def _biot_savart_hat_nb(w_hat, kx, ky, kz, inv_k2, out):
        n0, n1, n2 = w_hat.shape[1], w_hat.shape[2], w_hat.shape[3]
        for i in range(n0):
            for j in range(n1):
                for k in range(n2):
                    s = inv_k2[i, j, k]
                    w0 = w_hat[0, i, j, k]
                    w1 = w_hat[1, i, j, k]
                    w2 = w_hat[2, i, j, k]
                    out[0, i, j, k] = 1j * (ky[j] * w2 - kz[k] * w1) * s
                    out[1, i, j, k] = 1j * (kz[k] * w0 - kx[i] * w2) * s
                    out[2, i, j, k] = 1j * (kx[i] * w1 - ky[j] * w0) * s
        return out

    @njit(cache=True)
    def _curl_hat_masked_nb(a_hat, kx, ky, kz, mask, out):
        n0, n1, n2 = a_hat.shape[1], a_hat.shape[2], a_hat.shape[3]
        for i in range(n0):
            for j in range(n1):
                for k in range(n2):
                    s = mask[i, j, k]
                    a0 = a_hat[0, i, j, k]
                    a1 = a_hat[1, i, j, k]
                    a2 = a_hat[2, i, j, k]
                    out[0, i, j, k] = 1j * (ky[j] * a2 - kz[k] * a1) * s
                    out[1, i, j, k] = 1j * (kz[k] * a0 - kx[i] * a2) * s
                    out[2, i, j, k] = 1j * (kx[i] * a1 - ky[j] * a0) * s
        return out

    @njit(cache=True)
    def _weighted_sq_sum_nb(data, weight):
        n0, n1, n2 = data.shape[1], data.shape[2], data.shape[3]
        acc = 0.0
        for i in range(n0):
            for j in range(n1):
                for k in range(n2):
                    d0 = data[0, i, j, k]
                    d1 = data[1, i, j, k]
                    d2 = data[2, i, j, k]
                    acc += (d0 * d0 + d1 * d1 + d2 * d2) * weight[i, j, k]
        return acc

    _IMPLS = {
        "numba": (_cross_nb, _biot_savart_hat_nb, _curl_hat_masked_nb, _weighted_sq_sum_nb),
        "numpy": (_cross_np, _biot_savart_hat_np, _curl_hat_masked_np, _weighted_sq_sum_np),
    }
else:  # pragma: no cover
    _IMPLS = {
        "numpy": (_cross_np, _biot_savart_hat_np, _curl_hat_masked_np, _weighted_sq_sum_np),
    }


def kernels(backend: str | None = None):
    """Return ``(cross, biot_savart_hat, curl_hat_masked, weighted_sq_sum)``."""
    name = BACKEND if backend is None else backend
    if name not in _IMPLS:
        raise ValueError(f"backend {name!r} unavailable (have {sorted(_IMPLS)})")
    return _IMPLS[name]


def available_backends() -> list[str]:
    return sorted(_IMPLS)


cross, biot_savart_hat, curl_hat_masked, weighted_sq_sum = kernels()
