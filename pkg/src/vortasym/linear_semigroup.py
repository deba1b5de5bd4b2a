"""Heat flow, the rescaled linear semigroup exp(tau Lambda), spectral splits and
the continuous-spectrum probe.

exp(tau Lambda) f = e^tau (exp((e^tau - 1) Delta) f)(xi e^(tau/2))
                  = e^tau exp(a Delta)[f(s .)],   s = e^(tau/2), a = 1 - e^-tau.

The second form is what we compute.  In Fourier variables it reads
g_hat(k) = e^(-tau/2) e^(-a|k|^2) F(k/s), where F is the continuous Fourier
transform of the sampled field (trapezoid sum, the field being negligible
outside the box).  Because F is evaluated off the lattice, no sample outside
the box is ever needed, and the whole map is a separable real N x N matrix
per axis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import eval_hermite

from . import biot_savart as bs
from . import eigenbasis as eb
from . import field_core as fc
from . import generators


class TruncationWarning(UserWarning):
    """Field mass sits where a dilation would need samples outside the box."""


BOUNDARY_TOLERANCE = 1e-10


def a_of_tau(tau: float) -> float:
    return -math.expm1(-tau)


# ------------------------------------------------------------------ heat flow

def heat_hat(coeffs: np.ndarray, grid: fc.Grid3, t: float) -> np.ndarray:
    return coeffs * np.exp(-grid.k2 * t)


def apply_heat(f: fc.VectorFieldR, t: float) -> fc.VectorFieldR:
    """exp(t Delta) f by spectral multiplication (periodic)."""
    if not t > 0:
        raise ValueError(f"heat time must be positive, got {t!r}")
    grid = f.grid
    return fc.VectorFieldR(grid, fc.inverse(heat_hat(fc.forward(f.data), grid, t), grid.n))


# ----------------------------------------------------------- dilation matrices

@lru_cache(maxsize=32)
def dilation_matrix(n: int, half_width: float, scale: float, heat: float = 0.0) -> np.ndarray:
    """Per-axis matrix M with (M f)(x) = exp(heat d^2)[f(scale .)](x), 1D.

    Row l, column j: (1/(N scale)) sum_k exp(-heat k^2) cos(k (x_l - x_j/scale)),
    over lattice wavenumbers without Nyquist.  For scale < 1 the sum is cut at
    |k/scale| < pi/h so that F is never read beyond the resolved band.
    The sample at x = -L stands for both faces, so its row and column average
    the two ends; this keeps M exactly equivariant under x -> -x.
    """
    grid = fc.Grid3(n, half_width)
    x = grid.x
    kmax = math.pi / grid.spacing
    k = np.arange(1, n // 2) * (math.pi / half_width)
    weights = np.exp(-heat * k * k)
    weights[np.abs(k / scale) >= kmax] = 0.0

    def kernel(xl, xj):
        phase = xl[:, None] - xj[None, :] / scale
        return 1.0 + 2.0 * np.einsum("k,ljk->lj", weights, np.cos(phase[:, :, None] * k[None, None, :]))

    mat = kernel(x, x)
    ends = np.array([-half_width, half_width])
    mat[:, 0] = kernel(x, ends).mean(axis=1)
    mat[0, :] = kernel(ends, x).mean(axis=0)
    mat[0, 0] = kernel(ends, ends).mean()
    return mat / (n * scale)


def apply_separable(data: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Apply the same per-axis matrix along each spatial axis of (3, N, N, N)."""
    n = mat.shape[0]
    lead = data.shape[:-3]
    out = (mat @ data.reshape(lead + (n, n * n))).reshape(data.shape)
    out = mat @ out
    return out @ mat.T


def _boundary_excess(data: np.ndarray, grid: fc.Grid3, inner_radius: float) -> float:
    """max |f| outside the cube [-inner, inner]^3 relative to max |f|."""
    top = float(np.max(np.abs(data)))
    if top == 0.0:
        return 0.0
    outside = np.abs(grid.x) > inner_radius
    o = outside[:, None, None] | outside[None, :, None] | outside[None, None, :]
    return float(np.max(np.abs(data[..., o]))) / top if np.any(o) else 0.0


def check_truncation(data: np.ndarray, grid: fc.Grid3, scale: float, what: str) -> float:
    """Warn when a dilation by ``scale`` needs field values the box cannot supply."""
    if scale >= 1.0:
        # f(scale x) reaches beyond the box: f must vanish at the faces
        inner = grid.half_width - 2.0 * grid.spacing
    else:
        # the compressed field only covers |y| < scale L
        inner = scale * grid.half_width
    excess = _boundary_excess(data, grid, inner)
    if excess > BOUNDARY_TOLERANCE:
        warnings.warn(
            f"{what}: field reaches {excess:.2e} of its maximum where the box cannot represent it",
            TruncationWarning,
            stacklevel=3,
        )
    return excess


def dilate(f: fc.VectorFieldR, scale: float, heat: float = 0.0, check: bool = True) -> fc.VectorFieldR:
    """g(x) = exp(heat Delta)[f(scale .)](x), band-limited evaluation."""
    grid = f.grid
    if check:
        check_truncation(f.data, grid, scale, "dilation")
    mat = dilation_matrix(grid.n, grid.half_width, float(scale), float(heat))
    return fc.VectorFieldR(grid, apply_separable(f.data, mat))


def lambda_matrix(grid: fc.Grid3, tau: float) -> np.ndarray:
    """Per-axis matrix of exp(tau Lambda); the overall factor e^tau is NOT included."""
    return dilation_matrix(grid.n, grid.half_width, math.exp(0.5 * tau), a_of_tau(tau))


def apply_lambda_semigroup(f: fc.VectorFieldR, tau: float, check: bool = True) -> fc.VectorFieldR:
    """exp(tau Lambda) f via the dilate-then-heat factorisation."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau!r}")
    grid = f.grid
    if check:
        check_truncation(f.data, grid, math.exp(0.5 * tau), "exp(tau Lambda)")
    out = apply_separable(f.data, lambda_matrix(grid, tau)) * math.exp(tau)
    return fc.VectorFieldR(grid, out)


def mehler_apply(f: fc.VectorFieldR, tau: float) -> fc.VectorFieldR:
    """exp(tau Lambda) f by direct quadrature of the Gaussian kernel.

    e^tau (4 pi T)^(-3/2) int exp(-|s xi - y|^2/(4T)) f(y) dy with
    T = e^tau - 1, s = e^(tau/2); the kernel is separable so the quadrature
    is done one axis at a time.  Used as an independent check.
    """
    grid = f.grid
    T = math.expm1(tau)
    s = math.exp(0.5 * tau)
    x = grid.x
    ker = grid.spacing * np.exp(-((s * x[:, None] - x[None, :]) ** 2) / (4.0 * T)) / math.sqrt(4.0 * math.pi * T)
    return fc.VectorFieldR(grid, apply_separable(f.data, ker) * math.exp(tau))


# ------------------------------------------------------------- spectral split

@dataclass
class SpectralSplit:
    n: int
    beta: np.ndarray
    gamma: np.ndarray
    zeta: np.ndarray
    remainder: fc.VectorFieldR
    discrete: fc.VectorFieldR = field(repr=False)

    @property
    def discrete_part(self) -> dict:
        return {"beta": self.beta, "gamma": self.gamma, "zeta": self.zeta}


def spectral_split(w: fc.VectorFieldR, n: int, m: float = 4.0) -> SpectralSplit:
    """Split w into its components on the shells up to n and the remainder in W_n."""
    if n not in (0, 1, 2):
        raise ValueError(f"unsupported shell count n={n!r}; expected 0, 1 or 2")
    if not m > n + 1.5:
        raise ValueError(f"weight m={m} too small: the split needs m > n + 3/2 = {n + 1.5}")
    grid = w.grid
    beta = np.zeros(3)
    gamma = np.zeros(3)
    zeta = np.zeros(5)
    disc = np.zeros_like(w.data)
    if n >= 1:
        for a, lb in enumerate(eb.family_labels("p")):
            beta[a] = fc.inner(eb.sample_basis(lb, grid), w)
    if n >= 2:
        for a, lb in enumerate(eb.family_labels("q")):
            gamma[a] = fc.inner(eb.sample_basis(lb, grid), w)
        for a, lb in enumerate(eb.family_labels("r")):
            zeta[a] = fc.inner(eb.sample_basis(lb, grid), w)
    for coeffs, fam in ((beta, "f"), (gamma, "g"), (zeta, "h")):
        for c, lb in zip(coeffs, eb.family_labels(fam)):
            if c != 0.0:
                disc += c * eb.sample_basis(lb, grid).data
    discrete = fc.VectorFieldR(grid, disc)
    return SpectralSplit(n, beta, gamma, zeta, w - discrete, discrete)


# ------------------------------------------------------- continuous spectrum

def eval_continuous_mode(lam: complex, grid: fc.Grid3, part: str = "real") -> fc.VectorFieldR:
    """Inverse transform of |p|^(-2(lam+1)) e^(-|p|^2) (-i p2, i p1, 0).

    For real lam the field is real; for complex lam the real (or imaginary)
    part is returned.
    """
    lam = complex(lam)
    if not lam.real < 0.25:
        raise ValueError(f"continuous modes need Re(lambda) < 1/4, got {lam}")
    nu = -(lam + 1.0)
    if abs(nu.imag) < 1e-14 and abs(nu.real - round(nu.real)) < 1e-12 and round(nu.real) >= 0:
        raise ValueError(f"lambda={lam} excluded: -(lambda+1) is a nonnegative integer")
    if part not in ("real", "imag"):
        raise ValueError("part must be 'real' or 'imag'")
    n = grid.n
    kf = grid.k_full
    p1 = kf[:, None, None]
    p2 = kf[None, :, None]
    p3 = kf[None, None, :]
    absp = np.sqrt(p1**2 + p2**2 + p3**2)
    amp = np.zeros_like(absp, dtype=complex)
    nz = absp > 0
    amp[nz] = absp[nz] ** (-2.0 * (lam + 1.0)) * np.exp(-absp[nz] ** 2)
    # full complex spectrum, then shift from the e^{ik xi} basis to the grid origin
    idx = np.fft.fftfreq(n, d=1.0 / n).astype(int)
    sign = (-1.0) ** (idx[:, None, None] + idx[None, :, None] + idx[None, None, :])
    nyq = np.ones(n)
    nyq[n // 2] = 0.0
    nyq3 = nyq[:, None, None] * nyq[None, :, None] * nyq[None, None, :]
    scale = sign * nyq3 / (2.0 * grid.half_width) ** 3
    comps = [-1j * p2 * amp * scale, 1j * p1 * amp * scale]
    out = np.zeros((3, n, n, n))
    for c in range(2):
        vals = np.fft.ifftn(comps[c]) * n**3
        out[c] = vals.real if part == "real" else vals.imag
    return fc.VectorFieldR(grid, out)


# ------------------------------------------------------- smoothing estimates

@dataclass
class SmoothingReport:
    p: float
    q: float
    alpha: tuple
    m: float
    taus: list
    ratios: list
    exponent: float

    @property
    def spread(self) -> float:
        """max/min of the compensated ratio across the tau list."""
        r = np.asarray(self.ratios)
        return float(r.max() / r.min())


def verify_smoothing_bound(p: float, q: float, alpha, taus, grid: fc.Grid3 | None = None, m: float = 1.0,
                           count: int = 4, seed: int = 0, fields=None) -> SmoothingReport:
    """Max over a random suite of |rho^m d^alpha e^{tau Lambda} f|_p a(tau)^e / |rho^m f|_q.

    e = 3/2 (1/q - 1/p) + |alpha|/2.
    """
    p, q = float(p), float(q)
    if not (1.0 <= q <= p):
        raise ValueError(f"need 1 <= q <= p, got p={p}, q={q}")
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != 3 or min(alpha) < 0:
        raise ValueError("alpha must be a multi-index of length 3")
    taus = [float(t) for t in taus]
    if any(t <= 0 for t in taus):
        raise ValueError("tau list must be positive")
    grid = grid or fc.Grid3(64, 12.0)
    order = sum(alpha)
    inv_p = 0.0 if math.isinf(p) else 1.0 / p
    expo = 1.5 * (1.0 / q - inv_p) + 0.5 * order
    if fields is None:
        fields = [generators.random_solenoidal(grid, seed + j, width=1.0, smoothing=0.35) for j in range(count)]
    rho_m = (1.0 + grid.radius) ** m
    ratios = []
    for tau in taus:
        worst = 0.0
        for f in fields:
            g = apply_lambda_semigroup(f, tau, check=False)
            for axis, times in enumerate(alpha):
                for _ in range(times):
                    g = bs.partial(g, axis)
            num = fc.lp_norm(fc.VectorFieldR(grid, g.data * rho_m), p)
            den = fc.lp_norm(fc.VectorFieldR(grid, f.data * rho_m), q)
            worst = max(worst, num * a_of_tau(tau) ** expo / den)
        ratios.append(worst)
    return SmoothingReport(p, q, alpha, m, taus, ratios, expo)


# ------------------------------------------------------------- multiplicity

def _hermite_derivative_G(grid: fc.Grid3, alpha) -> np.ndarray:
    """d^alpha G using d^n exp(-x^2/4) = (-1/2)^n H_n(x/2) exp(-x^2/4)."""
    x = grid.x
    out = eb.G0
    for axis, order in enumerate(alpha):
        prof = (-0.5) ** order * eval_hermite(order, x / 2.0) * np.exp(-x * x / 4.0)
        shape = [1, 1, 1]
        shape[axis] = grid.n
        out = out * prof.reshape(shape)
    return np.broadcast_to(out, (grid.n,) * 3)


def _multi_indices(k: int):
    return [(a, b, k - a - b) for a in range(k + 1) for b in range(k + 1 - a)]


def shell_basis(k: int, grid: fc.Grid3, tol: float = 1e-8) -> list[fc.VectorFieldR]:
    """Divergence-free fields in span{d^alpha G e_i : |alpha| = k}.

    The span is built from Hermite derivatives of G, the divergence map is
    sampled on the grid, and its numerical null space is returned.
    """
    if k < 0:
        raise ValueError("shell index must be nonnegative")
    cands = []
    for alpha in _multi_indices(k):
        base = _hermite_derivative_G(grid, alpha)
        for i in range(3):
            data = np.zeros((3,) + (grid.n,) * 3)
            data[i] = base
            cands.append(fc.VectorFieldR(grid, data))
    if not cands:
        return []
    divs = np.stack([bs.divergence(c).data.ravel() for c in cands], axis=1)
    norms = np.sqrt(np.sum(np.stack([c.data.ravel() for c in cands], axis=1) ** 2, axis=0))
    _, sing, vh = np.linalg.svd(divs / norms, full_matrices=False)
    rank = int(np.sum(sing > tol * sing.max())) if sing.size and sing.max() > 0 else 0
    null = vh[rank:]
    out = []
    for vec in null:
        data = sum((v / nrm) * c.data for v, nrm, c in zip(vec, norms, cands))
        out.append(fc.VectorFieldR(grid, data))
    return out


def shell_multiplicity(k: int, grid: fc.Grid3, tau: float = 0.5, tol: float = 1e-6) -> tuple[int, float]:
    """Dimension of the divergence-free shell-k eigenspace and the worst
    relative deviation from exp(tau Lambda) u = exp(-(k+1) tau/2) u."""
    basis = shell_basis(k, grid)
    worst = 0.0
    rate = math.exp(-0.5 * (k + 1) * tau)
    for u in basis:
        res = apply_lambda_semigroup(u, tau, check=False) - u * rate
        worst = max(worst, fc.weighted_norm(res, 0) / (rate * fc.weighted_norm(u, 0)))
    dim = len(basis) if worst < tol else -1
    return dim, worst
