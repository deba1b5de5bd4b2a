"""Closed-form Gaussian eigenfields, their polynomial duals and velocity profiles.

Everything here is evaluated analytically at arbitrary points; grids only
enter through ``sample_basis`` and the pairing/residual checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from . import field_core as fc

G0 = (4.0 * math.pi) ** -1.5
PHI0 = 1.0 / (4.0 * math.pi**1.5)

PAIRS = ((1, 1), (1, 2), (1, 3), (2, 2), (2, 3))
FAMILIES_VECTOR = ("f", "g", "p", "q", "vf", "vg")
FAMILIES_PAIR = ("h", "r", "vh")
EIGENVALUES = {"f": -1.0, "g": -1.5, "h": -1.5, "p": -1.0, "q": -1.5, "r": -1.5}

# series for r < _SERIES_RADIUS, closed form beyond; the closed forms lose
# about two digits to cancellation at the switch and far more below it
_SERIES_RADIUS = 2.0
_SERIES_TERMS = 48


@dataclass(frozen=True)
class BasisLabel:
    family: str
    index: int | tuple[int, int]

    def __post_init__(self):
        fam = self.family
        if fam in FAMILIES_VECTOR:
            if self.index not in (1, 2, 3):
                raise ValueError(f"family {fam!r} takes an index in 1..3, got {self.index!r}")
        elif fam in FAMILIES_PAIR:
            idx = tuple(self.index) if not isinstance(self.index, int) else None
            if idx not in PAIRS:
                raise ValueError(f"family {fam!r} takes a pair in {PAIRS}, got {self.index!r}")
            object.__setattr__(self, "index", idx)
        else:
            raise ValueError(f"unknown basis family {fam!r}")

    @classmethod
    def parse(cls, text: str) -> "BasisLabel":
        """'f1', 'g3', 'h12', 'vh23', 'r11' ..."""
        text = text.strip()
        fam = text.rstrip("0123456789")
        digits = text[len(fam):]
        if fam in FAMILIES_PAIR and len(digits) == 2:
            return cls(fam, (int(digits[0]), int(digits[1])))
        if fam in FAMILIES_VECTOR and len(digits) == 1:
            return cls(fam, int(digits))
        raise ValueError(f"cannot parse basis label {text!r}")

    def __str__(self):
        if isinstance(self.index, tuple):
            return f"{self.family}{self.index[0]}{self.index[1]}"
        return f"{self.family}{self.index}"


def family_labels(family: str) -> list[BasisLabel]:
    if family in FAMILIES_PAIR:
        return [BasisLabel(family, ij) for ij in PAIRS]
    return [BasisLabel(family, i) for i in (1, 2, 3)]


# ------------------------------------------------------------ scalar profiles

def _gauss(x1, x2, x3):
    return G0 * np.exp(-(x1 * x1 + x2 * x2 + x3 * x3) / 4.0)


def eval_G(xi) -> np.ndarray | float:
    """(4 pi)^(-3/2) exp(-|xi|^2/4) at points of shape (..., 3)."""
    xi = np.asarray(xi, dtype=float)
    out = _gauss(xi[..., 0], xi[..., 1], xi[..., 2])
    return float(out) if out.ndim == 0 else out


def _series_coeffs(order: int) -> np.ndarray:
    # E(s) = erf(sqrt(s)/2)/sqrt(s) = pi^(-1/2) sum (-1)^n s^n / (4^n n! (2n+1))
    n = np.arange(_SERIES_TERMS + order)
    c = np.array([(-1.0) ** k / (4.0**k * math.factorial(k) * (2 * k + 1)) for k in n]) / math.sqrt(math.pi)
    for _ in range(order):
        c = c[1:] * np.arange(1, len(c))
    return c[:_SERIES_TERMS]


_SERIES = [_series_coeffs(k) for k in range(4)]


def _radial_parts(r: np.ndarray):
    """E, A, B, C for E(r) = erf(r/2)/r.

    With s = r^2: A = 2E', B = 4E'', C = 8E''' (derivatives in s), so that
    d_i E = A x_i, d_i d_j E = A d_ij + B x_i x_j and
    d_i d_j d_k E = B (d_ij x_k + d_ik x_j + d_jk x_i) + C x_i x_j x_k.
    """
    r = np.asarray(r, dtype=float)
    s = r * r
    small = r < _SERIES_RADIUS
    E = np.empty_like(r)
    A = np.empty_like(r)
    B = np.empty_like(r)
    C = np.empty_like(r)
    if np.any(small):
        ss = s[small]
        E[small] = np.polynomial.polynomial.polyval(ss, _SERIES[0])
        A[small] = 2.0 * np.polynomial.polynomial.polyval(ss, _SERIES[1])
        B[small] = 4.0 * np.polynomial.polynomial.polyval(ss, _SERIES[2])
        C[small] = 8.0 * np.polynomial.polynomial.polyval(ss, _SERIES[3])
    big = ~small
    if np.any(big):
        rb = r[big]
        e = erf(rb / 2.0)
        ep = np.exp(-rb * rb / 4.0) / math.sqrt(math.pi)
        E[big] = e / rb
        A[big] = ep / rb**2 - e / rb**3
        B[big] = -ep / (2.0 * rb**2) - 3.0 * ep / rb**4 + 3.0 * e / rb**5
        C[big] = ep / (4.0 * rb**2) + 2.5 * ep / rb**4 + 15.0 * ep / rb**6 - 15.0 * e / rb**7
    return E, A, B, C


def eval_Phi(xi) -> np.ndarray | float:
    """erf(r/2)/(4 pi r), with the value 1/(4 pi^(3/2)) at the origin."""
    xi = np.asarray(xi, dtype=float)
    r = np.sqrt(np.sum(xi * xi, axis=-1))
    E, _, _, _ = _radial_parts(np.atleast_1d(r))
    out = E.reshape(np.shape(r)) / (4.0 * math.pi)
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------ vector families

def _cross_e(i, x1, x2, x3):
    # e_i ^ xi
    z = 0.0
    if i == 1:
        return (z, -x3, x2)
    if i == 2:
        return (x3, z, -x1)
    return (-x2, x1, z)


def _components(label: BasisLabel, x1, x2, x3):
    """Tuple of three broadcastable arrays for the labelled field."""
    fam, idx = label.family, label.index
    x = (x1, x2, x3)
    zero = 0.0 * (x1 + x2 + x3)

    if fam == "p":
        c = _cross_e(idx, x1, x2, x3)
        return tuple(0.5 * ci + zero for ci in c)
    if fam in ("f", "vg"):
        G = _gauss(x1, x2, x3)
        c = _cross_e(idx, x1, x2, x3)
        return tuple(0.5 * ci * G + zero for ci in c)
    if fam == "g":
        G = _gauss(x1, x2, x3)
        r2 = x1 * x1 + x2 * x2 + x3 * x3
        xi_i = x[idx - 1]
        out = []
        for ell in (1, 2, 3):
            val = xi_i * x[ell - 1]
            if ell == idx:
                val = val + 4.0 - r2
            out.append(0.25 * G * val + zero)
        return tuple(out)
    if fam == "q":
        xi_i = x[idx - 1]
        out = []
        for ell in (1, 2, 3):
            if ell == idx:
                out.append(0.5 * (2.0 - xi_i * xi_i) + zero)
            else:
                out.append(0.5 * xi_i * x[ell - 1] + zero)
        return tuple(out)
    if fam == "h":
        G = _gauss(x1, x2, x3)
        q = 0.25 * G
        if idx == (1, 1) or idx == (2, 2):
            i = idx[0]
            f = _components(BasisLabel("f", i), x1, x2, x3)
            return tuple(-x[i - 1] * fi + zero for fi in f)
        if idx == (1, 2):
            return (-q * x1 * x3 + zero, q * x2 * x3 + zero, q * (x1 * x1 - x2 * x2) + zero)
        if idx == (1, 3):
            return (q * x1 * x2 + zero, q * (x3 * x3 - x1 * x1) + zero, -q * x2 * x3 + zero)
        return (q * (x2 * x2 - x3 * x3) + zero, -q * x1 * x2 + zero, q * x1 * x3 + zero)
    if fam == "r":
        if idx == (1, 1):
            return (zero, 0.5 * x1 * x3 + zero, zero)
        if idx == (2, 2):
            return (-0.5 * x2 * x3 + zero, zero, zero)
        if idx == (1, 2):
            return (-0.5 * x1 * x3 + zero, 0.5 * x2 * x3 + zero, zero)
        if idx == (1, 3):
            return (0.5 * x1 * x2 + zero, zero, -0.5 * x2 * x3 + zero)
        return (zero, -0.5 * x1 * x2 + zero, 0.5 * x1 * x3 + zero)
    if fam == "vf":
        return _vf(idx, x1, x2, x3)
    if fam == "vh":
        return _vh(idx, x1, x2, x3)
    raise ValueError(f"unknown family {fam!r}")  # pragma: no cover


def _phi_derivs(x1, x2, x3):
    x1, x2, x3 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x1, x2, x3)))
    r = np.sqrt(x1 * x1 + x2 * x2 + x3 * x3)
    _, A, B, C = _radial_parts(np.atleast_1d(r).ravel())
    shape = r.shape
    k = 1.0 / (4.0 * math.pi)
    return (x1, x2, x3), k * A.reshape(shape), k * B.reshape(shape), k * C.reshape(shape)


def phi_hessian(x1, x2, x3):
    """Matrix H[i][j] = d_i d_j Phi as nested lists of arrays."""
    x, A, B, _ = _phi_derivs(x1, x2, x3)
    return [[(A if i == j else 0.0) + B * x[i] * x[j] for j in range(3)] for i in range(3)]


def phi_third(i, j, k, x1, x2, x3):
    """d_i d_j d_k Phi (indices 1-based)."""
    x, _, B, C = _phi_derivs(x1, x2, x3)
    i, j, k = i - 1, j - 1, k - 1
    val = C * x[i] * x[j] * x[k]
    if i == j:
        val = val + B * x[k]
    if i == k:
        val = val + B * x[j]
    if j == k:
        val = val + B * x[i]
    return val


def _vf(i, x1, x2, x3):
    H = phi_hessian(x1, x2, x3)
    G = _gauss(x1, x2, x3)
    return tuple(H[i - 1][ell] + (G if ell == i - 1 else 0.0) for ell in range(3))


def _vh(ij, x1, x2, x3):
    i, j = ij
    x = (x1, x2, x3)
    G = _gauss(x1, x2, x3)
    out = []
    for ell in (1, 2, 3):
        val = 2.0 * phi_third(i, j, ell, x1, x2, x3)
        if ell == j:
            val = val - 0.5 * x[i - 1] * G
        if ell == i:
            val = val - 0.5 * x[j - 1] * G
        out.append(val)
    return tuple(out)


def eval_basis(label, xi) -> np.ndarray:
    """Closed-form value of a labelled field at points of shape (..., 3)."""
    if isinstance(label, str):
        label = BasisLabel.parse(label)
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != 3:
        raise ValueError("points must have a trailing axis of length 3")
    comps = _components(label, xi[..., 0], xi[..., 1], xi[..., 2])
    return np.stack([np.broadcast_to(c, xi.shape[:-1]) for c in comps], axis=-1)


def sample_basis(label, grid: fc.Grid3) -> fc.VectorFieldR:
    if isinstance(label, str):
        label = BasisLabel.parse(label)
    return fc.sample(grid, lambda a, b, c: _components(label, a, b, c))


def sample_G(grid: fc.Grid3) -> np.ndarray:
    x1, x2, x3 = grid.coords()
    return _gauss(x1, x2, x3)


def sample_Phi(grid: fc.Grid3) -> np.ndarray:
    E, _, _, _ = _radial_parts(grid.radius.ravel())
    return E.reshape(grid.radius.shape) / (4.0 * math.pi)


# ------------------------------------------------------------ grid checks

_DUAL = {"p": "f", "q": "g", "r": "h"}
_CROSS = {("r", "g"), ("q", "h"), ("p", "g"), ("p", "h"), ("q", "f"), ("r", "f")}


def gram_matrix(primal: str, dual: str, grid: fc.Grid3) -> np.ndarray:
    """Matrix of pairings  int dual_a . primal_b  (rows dual, columns primal)."""
    if _DUAL.get(dual) != primal and (dual, primal) not in _CROSS:
        raise ValueError(f"unsupported pairing ({primal!r}, {dual!r})")
    prim = [sample_basis(lb, grid) for lb in family_labels(primal)]
    duals = [sample_basis(lb, grid) for lb in family_labels(dual)]
    return np.array([[fc.inner(d, p) for p in prim] for d in duals])


def paired_gram(grid: fc.Grid3) -> np.ndarray:
    """8x8 pairing of (q, r) against (g, h)."""
    prim = [sample_basis(lb, grid) for lb in family_labels("g") + family_labels("h")]
    duals = [sample_basis(lb, grid) for lb in family_labels("q") + family_labels("r")]
    return np.array([[fc.inner(d, p) for p in prim] for d in duals])


def _spectral_grad(grid: fc.Grid3, scalar: np.ndarray) -> np.ndarray:
    c = fc.forward(scalar)
    kx, kz = grid.kx, grid.kz
    ks = (kx[:, None, None], kx[None, :, None], kz[None, None, :])
    return np.stack([fc.inverse(1j * k * c, grid.n) for k in ks])


def _spectral_laplacian(grid: fc.Grid3, data: np.ndarray) -> np.ndarray:
    return fc.inverse(-grid.k2 * fc.forward(data), grid.n)


def apply_lambda_operator(f: fc.VectorFieldR, adjoint: bool = False) -> fc.VectorFieldR:
    """Lambda f = Laplacian f + (1/2) xi.grad f + f, or its adjoint.

    Derivatives are spectral; the drift factor xi is the box-centred
    coordinate, so this is meaningful only for fields decaying in the box.
    """
    grid = f.grid
    x = grid.coords()
    out = np.empty_like(f.data)
    sign, shift = (-1.0, -0.5) if adjoint else (1.0, 1.0)
    for c in range(3):
        grad = _spectral_grad(grid, f.data[c])
        drift = x[0] * grad[0] + x[1] * grad[1] + x[2] * grad[2]
        out[c] = _spectral_laplacian(grid, f.data[c]) + sign * 0.5 * drift + shift * f.data[c]
    return fc.VectorFieldR(grid, out)


def eigen_residual(label, grid: fc.Grid3, scale: float = 1.0) -> float:
    """||Lambda u - lambda u||_0 / ||u||_0 for u in {f, g, h}."""
    if isinstance(label, str):
        label = BasisLabel.parse(label)
    if label.family not in ("f", "g", "h"):
        raise ValueError("eigen_residual takes an f, g or h label")
    u = sample_basis(label, grid) * scale
    lam = EIGENVALUES[label.family]
    res = apply_lambda_operator(u) - u * lam
    return fc.weighted_norm(res, 0) / fc.weighted_norm(u, 0)


def window_width(grid: fc.Grid3) -> float:
    """Width sigma of the exp(-|xi|^2/sigma^2) window applied to polynomial duals.

    sigma = L/6 keeps a quadratic times the window below 1e-13 at the box
    face, so spectral derivatives of the windowed field are clean.
    """
    return grid.half_width / 6.0


def windowed_derivatives(u: np.ndarray, grid: fc.Grid3, sigma: float):
    """Gradient and Laplacian of each component of a polynomial field u.

    Spectral derivatives are taken of W u with W = exp(-|xi|^2/sigma^2); the
    analytic derivatives of W are then divided out, so the returned arrays
    approximate the derivatives of u itself where W is not tiny.
    """
    x = grid.coords()
    r2 = grid.radius**2
    W = np.exp(-r2 / sigma**2)
    gW = [-2.0 * xi / sigma**2 * W for xi in x]
    lapW = (4.0 * r2 / sigma**4 - 6.0 / sigma**2) * W
    grads, laps = [], []
    for c in range(3):
        wu = W * u[c]
        g = _spectral_grad(grid, wu)
        gu = [(g[a] - u[c] * gW[a]) / W for a in range(3)]
        lap_wu = _spectral_laplacian(grid, wu)
        lap = (lap_wu - 2.0 * sum(gW[a] * gu[a] for a in range(3)) - u[c] * lapW) / W
        grads.append(gu)
        laps.append(lap)
    return grads, laps


def adjoint_eigen_residual(label, grid: fc.Grid3, core_radius: float = 6.0) -> float:
    """Relative L^2 residual of Lambda* u = lambda u on |xi| <= core_radius."""
    if isinstance(label, str):
        label = BasisLabel.parse(label)
    if label.family not in ("p", "q", "r"):
        raise ValueError("adjoint_eigen_residual takes a p, q or r label")
    u = sample_basis(label, grid).data
    grads, laps = windowed_derivatives(u, grid, window_width(grid))
    x = grid.coords()
    lam = EIGENVALUES[label.family]
    core = grid.core_mask(core_radius)
    num = 0.0
    den = 0.0
    for c in range(3):
        drift = sum(x[a] * grads[c][a] for a in range(3))
        res = laps[c] - 0.5 * drift - 0.5 * u[c] - lam * u[c]
        num += float(np.sum(res[core] ** 2))
        den += float(np.sum(u[c][core] ** 2))
    return math.sqrt(num / den)


def windowed_curl(u: np.ndarray, grid: fc.Grid3) -> np.ndarray:
    """curl of a polynomial field via the windowed-derivative scheme."""
    grads, _ = windowed_derivatives(u, grid, window_width(grid))
    return np.stack([
        grads[2][1] - grads[1][2],
        grads[0][2] - grads[2][0],
        grads[1][0] - grads[0][1],
    ])
