"""Periodic grids, real and spectral vector fields, norms and quadrature.

Fields live on the box [-L, L)^3 sampled at N points per axis.  Spectral
coefficients use the real-to-complex layout (last axis halved) and are
normalised so that the mean mode equals the box average.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from . import _backend

SNAPSHOT_FORMAT = "vortasym-snapshot-v1"


@dataclass(frozen=True)
class Grid3:
    """Uniform periodic grid on [-L, L)^3 with N points per axis."""

    n: int
    half_width: float
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n <= 0 or self.n % 2:
            raise ValueError(f"points_per_axis must be a positive even integer, got {self.n!r}")
        if not (self.half_width > 0 and math.isfinite(self.half_width)):
            raise ValueError(f"half_width must be positive and finite, got {self.half_width!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "half_width", float(self.half_width))

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    @property
    def spectral_shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n // 2 + 1)

    @cached_property
    def x(self) -> np.ndarray:
        """1D coordinates -L + j h, j = 0..N-1; index N/2 is the origin."""
        return -self.half_width + self.spacing * np.arange(self.n)

    @cached_property
    def k_full(self) -> np.ndarray:
        """Wavenumbers along a full axis, Nyquist entry kept (value -N/2 * pi/L)."""
        return np.fft.fftfreq(self.n, d=1.0 / self.n) * (math.pi / self.half_width)

    @cached_property
    def kx(self) -> np.ndarray:
        """Differentiation wavenumbers along a full axis (Nyquist zeroed)."""
        k = self.k_full.copy()
        k[self.n // 2] = 0.0
        return k

    @cached_property
    def kz(self) -> np.ndarray:
        """Differentiation wavenumbers along the halved axis (Nyquist zeroed)."""
        k = np.arange(self.n // 2 + 1) * (math.pi / self.half_width)
        k[-1] = 0.0
        return k

    @cached_property
    def k2(self) -> np.ndarray:
        kx = self.kx
        return kx[:, None, None] ** 2 + kx[None, :, None] ** 2 + self.kz[None, None, :] ** 2

    @cached_property
    def inv_k2(self) -> np.ndarray:
        """1/|k|^2 off the mean mode and the Nyquist planes, 0 there."""
        k2 = self.k2
        out = np.zeros_like(k2)
        np.divide(1.0, k2, out=out, where=k2 > 0)
        out *= self.nyquist_free
        return out

    @cached_property
    def nyquist_free(self) -> np.ndarray:
        """1 on every mode outside the Nyquist planes, 0 on them."""
        m1 = np.ones(self.n)
        m1[self.n // 2] = 0.0
        mz = np.ones(self.n // 2 + 1)
        mz[-1] = 0.0
        return m1[:, None, None] * m1[None, :, None] * mz[None, None, :]

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: keep modes with |n_i| < N/3 on every axis.

        Each axis retains the 2*ceil(N/3) - 1 integer modes with |n| < N/3
        (43 of 64, 63 of 96, 85 of 128), so products of retained modes never
        alias back onto them.
        """
        cut = self.dealias_cutoff_index
        nfull = np.fft.fftfreq(self.n, d=1.0 / self.n)
        m1 = (np.abs(nfull) <= cut).astype(float)
        mz = (np.arange(self.n // 2 + 1) <= cut).astype(float)
        return m1[:, None, None] * m1[None, :, None] * mz[None, None, :]

    @property
    def dealias_cutoff_index(self) -> int:
        return math.ceil(self.n / 3) - 1

    @cached_property
    def radius(self) -> np.ndarray:
        """|xi| measured from the box centre (not periodically)."""
        x = self.x
        return np.sqrt(x[:, None, None] ** 2 + x[None, :, None] ** 2 + x[None, None, :] ** 2)

    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays (x1, x2, x3)."""
        x = self.x
        return x[:, None, None], x[None, :, None], x[None, None, :]

    def weight_sq(self, m: float) -> np.ndarray:
        """(1 + |xi|)^(2m), cached per exponent."""
        key = ("rho2", float(m))
        w = self._cache.get(key)
        if w is None:
            w = (1.0 + self.radius) ** (2.0 * m)
            self._cache[key] = w
        return w

    def core_mask(self, radius: float) -> np.ndarray:
        return self.radius <= radius

    def __reduce__(self):
        return (Grid3, (self.n, self.half_width))


def _check_weight(m: float) -> float:
    m = float(m)
    if not (m >= 0 and math.isfinite(m)):
        raise ValueError(f"weight exponent m must be a nonnegative real, got {m!r}")
    return m


@dataclass(frozen=True, eq=False)
class ScalarFieldR:
    grid: Grid3
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.shape != (self.grid.n,) * 3:
            raise ValueError(f"scalar samples must have shape {(self.grid.n,) * 3}, got {data.shape}")
        object.__setattr__(self, "data", data)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.data)))


@dataclass(frozen=True, eq=False)
class VectorFieldR:
    """Real-space samples, shape (3, N, N, N)."""

    grid: Grid3
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.shape != (3,) + (self.grid.n,) * 3:
            raise ValueError(f"vector samples must have shape {(3,) + (self.grid.n,) * 3}, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("vector field samples contain NaN or Inf")
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, grid: Grid3) -> "VectorFieldR":
        return cls(grid, np.zeros((3,) + (grid.n,) * 3))

    def _like(self, data) -> "VectorFieldR":
        return VectorFieldR(self.grid, data)

    def _other(self, other) -> np.ndarray:
        if not isinstance(other, VectorFieldR):
            return NotImplemented
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        return other.data

    def __add__(self, other):
        o = self._other(other)
        return NotImplemented if o is NotImplemented else self._like(self.data + o)

    def __sub__(self, other):
        o = self._other(other)
        return NotImplemented if o is NotImplemented else self._like(self.data - o)

    def __mul__(self, scalar):
        if isinstance(scalar, (int, float, np.floating, np.integer)):
            return self._like(self.data * float(scalar))
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def __neg__(self):
        return self._like(-self.data)

    def magnitude(self) -> np.ndarray:
        d = self.data
        return np.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2)

    def max_abs(self) -> float:
        return float(np.max(self.magnitude()))


@dataclass(frozen=True, eq=False)
class VectorFieldK:
    """Spectral coefficients, shape (3, N, N, N//2 + 1), mean mode = box average."""

    grid: Grid3
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (3,) + self.grid.spectral_shape:
            raise ValueError(f"coefficients must have shape {(3,) + self.grid.spectral_shape}, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @property
    def mean(self) -> np.ndarray:
        return self.coeffs[:, 0, 0, 0].real.copy()


# ------------------------------------------------------------------ transforms

def forward(data: np.ndarray) -> np.ndarray:
    """Raw real-to-spectral transform over the last three axes."""
    return sfft.rfftn(data, axes=(-3, -2, -1), norm="forward", workers=_backend.fft_workers())


def inverse(coeffs: np.ndarray, n: int) -> np.ndarray:
    return sfft.irfftn(coeffs, s=(n, n, n), axes=(-3, -2, -1), norm="forward", workers=_backend.fft_workers())


def to_spectral(f: VectorFieldR) -> VectorFieldK:
    return VectorFieldK(f.grid, forward(f.data))


def to_physical(fk: VectorFieldK) -> VectorFieldR:
    return VectorFieldR(fk.grid, inverse(fk.coeffs, fk.grid.n))


def spectral_energy(coeffs: np.ndarray, grid: Grid3) -> float:
    """(2L)^3 * sum over the full lattice of |c_k|^2, using the halved layout."""
    w = np.full(grid.n // 2 + 1, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    total = np.sum(np.abs(coeffs) ** 2 * w)
    return float(total) * (2.0 * grid.half_width) ** 3


def dealias(fk: VectorFieldK) -> VectorFieldK:
    return VectorFieldK(fk.grid, fk.coeffs * fk.grid.dealias_mask)


# ---------------------------------------------------------------------- norms

def _samples(f) -> np.ndarray:
    if isinstance(f, (VectorFieldR, ScalarFieldR)):
        return f.data
    raise TypeError(f"expected a real-space field, got {type(f).__name__}")


def weighted_norm(f: VectorFieldR, m: float) -> float:
    """(sum (1+|xi|)^(2m) |f|^2 h^3)^(1/2)."""
    m = _check_weight(m)
    grid = f.grid
    return math.sqrt(_backend.weighted_sq_sum(f.data, grid.weight_sq(m)) * grid.cell_volume)


def lp_norm(f, p: float) -> float:
    """Discrete L^p norm of the pointwise Euclidean magnitude; p = inf is the max."""
    p = float(p)
    if not p >= 1:
        raise ValueError(f"invalid parameter: p must be >= 1, got {p!r}")
    d = _samples(f)
    mag = np.sqrt(np.sum(d * d, axis=0)) if d.ndim == 4 else np.abs(d)
    if math.isinf(p):
        return float(np.max(mag))
    vol = f.grid.cell_volume
    if p == 2.0:
        return math.sqrt(float(np.sum(mag * mag)) * vol)
    # scale out the max first so large p does not overflow
    top = float(np.max(mag))
    if top == 0.0:
        return 0.0
    return top * (float(np.sum((mag / top) ** p)) * vol) ** (1.0 / p)


def quadrature(f) -> float:
    """h^3 times the sample sum of a scalar field (or raw N^3 array with grid)."""
    return float(np.sum(_samples(f))) * f.grid.cell_volume


def integrate(grid: Grid3, values: np.ndarray) -> float:
    """Trapezoid quadrature of a raw scalar sample array."""
    return float(np.sum(values)) * grid.cell_volume


def inner(f: VectorFieldR, g: VectorFieldR, m: float = 0.0) -> float:
    """Weighted L^2 pairing sum rho^(2m) f.g h^3."""
    prod = np.einsum("i...,i...->...", f.data, g.data)
    if m:
        prod = prod * f.grid.weight_sq(m)
    return integrate(f.grid, prod)


# -------------------------------------------------------------------- samplers

def sample(grid: Grid3, func) -> VectorFieldR:
    """Sample ``func(x1, x2, x3) -> (f1, f2, f3)`` on the grid."""
    x1, x2, x3 = grid.coords()
    comps = func(x1, x2, x3)
    data = np.empty((3,) + (grid.n,) * 3)
    for i in range(3):
        data[i] = np.broadcast_to(comps[i], (grid.n,) * 3)
    return VectorFieldR(grid, data)


# -------------------------------------------------------------------- file I/O

def save_snapshot(path, f: VectorFieldR, time: float | None = None, name: str = "w", extra: dict | None = None) -> Path:
    """Write a self-describing ``.npz`` snapshot atomically.

    Layout: ``header`` holds a JSON string with the format tag, N, L, the
    component order and the time stamp; ``samples`` is the float64 array of
    shape (3, N, N, N) in C (row-major) order, axis order (component, x1,
    x2, x3), sample (j1, j2, j3) sitting at xi = -L + h*(j1, j2, j3).
    """
    path = Path(path)
    header = {
        "format": SNAPSHOT_FORMAT,
        "points_per_axis": f.grid.n,
        "half_width": f.grid.half_width,
        "components": [f"{name}1", f"{name}2", f"{name}3"],
        "layout": "C-order (component, x1, x2, x3); xi_j = -L + j*2L/N",
        "dtype": "float64",
        "time": time,
    }
    if extra:
        header.update(extra)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), samples=np.ascontiguousarray(f.data))
    tmp.replace(path)
    return path


def load_snapshot(path) -> tuple[VectorFieldR, dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        samples = z["samples"]
    if header.get("format") != SNAPSHOT_FORMAT:
        raise ValueError(f"{path}: not a {SNAPSHOT_FORMAT} file")
    grid = Grid3(int(header["points_per_axis"]), float(header["half_width"]))
    return VectorFieldR(grid, samples), header


def slice_csv(f: VectorFieldR, axis: int = 0) -> str:
    """CSV of the field along one coordinate axis through the origin."""
    c = f.grid.n // 2
    idx = [c, c, c]
    rows = ["coordinate,f1,f2,f3"]
    for j, xj in enumerate(f.grid.x):
        idx[axis] = j
        vals = f.data[(slice(None), *idx)]
        rows.append(",".join(f"{v:.17e}" for v in (xj, *vals)))
    return "\n".join(rows) + "\n"


def radial_profile(f: VectorFieldR, bins: int = 48) -> tuple[np.ndarray, np.ndarray]:
    """Shell-averaged |f| against |xi| (shells of equal width up to L)."""
    grid = f.grid
    r = grid.radius.ravel()
    mag = f.magnitude().ravel()
    edges = np.linspace(0.0, grid.half_width, bins + 1)
    which = np.digitize(r, edges) - 1
    keep = (which >= 0) & (which < bins)
    sums = np.bincount(which[keep], weights=mag[keep], minlength=bins)
    counts = np.bincount(which[keep], minlength=bins)
    centres = 0.5 * (edges[1:] + edges[:-1])
    prof = np.divide(sums, counts, out=np.zeros(bins), where=counts > 0)
    return centres, prof


def radial_profile_csv(f: VectorFieldR, bins: int = 48) -> str:
    centres, prof = radial_profile(f, bins)
    rows = ["radius,mean_magnitude"]
    rows += [f"{r:.17e},{p:.17e}" for r, p in zip(centres, prof)]
    return "\n".join(rows) + "\n"
