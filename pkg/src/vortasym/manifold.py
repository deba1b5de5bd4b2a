"""Symmetric data, invariant subspaces and the strong-stable characterisation.

A velocity field is called symmetric when it is equivariant under the cyclic
permutation of coordinates (u1(x1,x2,x3) = u2(x3,x1,x2) = u3(x2,x3,x1)) and
under each coordinate reflection (u_i odd in x_i, even in the other two).
Such fields have all eleven slow moments equal to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import biot_savart as bs
from . import diagnostics as dg
from . import field_core as fc
from . import generators

CODIMENSION = {"beta": 3, "gamma": 3, "zeta": 5}


@dataclass(frozen=True)
class SymmetryReport:
    cyclic_residual: float
    parity_residual: float

    def ok(self, tol: float = 1e-12) -> bool:
        return self.cyclic_residual < tol and self.parity_residual < tol


def _reflect(a: np.ndarray, axis: int) -> np.ndarray:
    """Samples of a(x) at x with coordinate ``axis`` negated (j -> (N - j) mod N)."""
    return np.roll(np.flip(a, axis=axis), 1, axis=axis)


def symmetry_residual_array(u: np.ndarray) -> tuple[float, float]:
    top = float(np.max(np.abs(u)))
    if top == 0.0:
        return 0.0, 0.0
    # u2 evaluated at (x3, x1, x2) and u3 at (x2, x3, x1), indexed by (x1, x2, x3)
    u2c = np.einsum("kij->ijk", u[1])
    u3c = np.einsum("jki->ijk", u[2])
    cyc = max(float(np.max(np.abs(u[0] - u2c))), float(np.max(np.abs(u[0] - u3c))))
    par = 0.0
    for i in range(3):
        for a in range(3):
            sign = -1.0 if a == i else 1.0
            par = max(par, float(np.max(np.abs(_reflect(u[i], a) - sign * u[i]))))
    return cyc / top, par / top


def symmetry_residual(u: fc.VectorFieldR) -> SymmetryReport:
    """Max deviation from the cyclic and parity relations, relative to max |u|."""
    return SymmetryReport(*symmetry_residual_array(u.data))


def _parity_project(phi: np.ndarray) -> np.ndarray:
    """Part of phi that is odd in x1 and even in x2, x3."""
    out = phi - _reflect(phi, 0)
    out = out + _reflect(out, 1)
    out = out + _reflect(out, 2)
    return out / 8.0


def make_symmetric_field(seed: int, grid: fc.Grid3, width: float = 1.5, smoothing: float = 1.0):
    """Random symmetric divergence-free velocity and its vorticity.

    A windowed random scalar is projected onto the parity class of u1, the
    other components are its cyclic images, and the result is Leray
    projected (the projection commutes with every map of the symmetry group).
    """
    rng = np.random.default_rng(seed)
    phi = generators.filtered_noise(grid, rng, smoothing, components=1)[0] * generators.gaussian_window(grid, width)
    phi = _parity_project(phi)
    # u2(y) = phi(y2, y3, y1), u3(y) = phi(y3, y1, y2)
    u = np.stack([phi, np.einsum("jki->ijk", phi), np.einsum("kij->ijk", phi)])
    u = fc.inverse(bs.leray_hat(fc.forward(u), grid), grid.n)
    u = _symmetrise(u)
    uf = fc.VectorFieldR(grid, u)
    return uf, bs.curl(uf)


def _symmetrise(u: np.ndarray) -> np.ndarray:
    """Average over the symmetry group to clear round-off left by the FFTs."""
    phi = (u[0] + np.einsum("kij->ijk", u[1]) + np.einsum("jki->ijk", u[2])) / 3.0
    phi = _parity_project(phi)
    return np.stack([phi, np.einsum("jki->ijk", phi), np.einsum("kij->ijk", phi)])


# ------------------------------------------------------------ subspaces

@dataclass
class MembershipReport:
    member: bool
    residual: float
    degree: int


def subspace_membership(w: fc.VectorFieldR, n: int, tol: float = 1e-8) -> MembershipReport:
    """Do all monomial moments of degree <= n vanish (relative to ||w||_0)?"""
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    Z, F, M = dg.raw_moments(w.data, w.grid)
    parts = [np.abs(Z).max(), np.abs(F).max()]
    if n == 2:
        parts.append(np.abs(M).max())
    scale = fc.weighted_norm(w, 0)
    res = float(max(parts)) / scale if scale > 0 else 0.0
    return MembershipReport(res < tol, res, n)


# --------------------------------------------------- strong-stable verdicts

@dataclass
class StrongStableVerdict:
    decay_verdict: bool
    velocity_verdict: bool
    algebraic_verdict: bool
    decay_exponent: float
    velocity_exponent: float
    gamma_residual: float
    zeta_residual: float
    threshold: float
    window: tuple
    coefficients: dict
    flags: list = field(default_factory=list)

    @property
    def sub_verdicts(self) -> tuple[bool, bool, bool]:
        return self.decay_verdict, self.velocity_verdict, self.algebraic_verdict

    @property
    def agree(self) -> bool:
        return len(set(self.sub_verdicts)) == 1

    @property
    def verdict(self) -> bool | None:
        return self.decay_verdict if self.agree else None

    def to_dict(self) -> dict:
        return {
            "sub_verdicts": {
                "weighted_norm_decay": self.decay_verdict,
                "physical_velocity_decay": self.velocity_verdict,
                "moment_conditions": self.algebraic_verdict,
            },
            "agree": self.agree,
            "verdict": self.verdict,
            "decay_exponent": self.decay_exponent,
            "velocity_exponent": self.velocity_exponent,
            "gamma_residual": self.gamma_residual,
            "zeta_residual": self.zeta_residual,
            "threshold": self.threshold,
            "window": list(self.window),
            "conditions_tested": dict(CODIMENSION, total=sum(CODIMENSION.values())),
            "coefficients": self.coefficients,
            "flags": list(self.flags),
        }


def _first_moment_scale(traj) -> float:
    w0 = traj.snapshots[0][1]
    _, s1, s2 = dg.identity_scales(w0.data, w0.grid)
    return s1, s2


def strong_stable_test(traj, m: float, tol: float = 1e-2, window=(4.0, 8.0), margin: float = 0.25,
                       moment_tol: float = 1e-8) -> StrongStableVerdict:
    """Three independent tests of membership in the strong-stable manifold.

    (1) ||w(tau)||_m decays faster than e^{-3 tau/2}: fitted exponent on
        ``window`` at most -3/2 - margin.
    (2) t^{5/4} |u(t)|_2 -> 0 in physical variables, with
        |u(t)|_2 = (1 + t)^{1/4} |v(tau)|_2: fitted exponent of |u|_2
        against log(1 + t) at most -5/4 - margin.
    (3) gamma(0) = 0 and zeta(0) equals the velocity-moment combinations,
        i.e. every second-order coefficient d vanishes, to relative ``tol``.
    """
    if m <= 3.5:
        raise ValueError("the characterisation needs m > 7/2")
    tau = np.asarray(traj.times, dtype=float)
    beta0 = np.array([traj.series[f"beta{i}"][0] for i in (1, 2, 3)])
    s1, s2 = _first_moment_scale(traj)
    if s1 > 0 and np.max(np.abs(beta0)) > moment_tol * s1:
        raise ValueError(f"initial datum not in W_1: |beta(0)| = {np.max(np.abs(beta0)):.3e}")
    key = f"norm_m{m:g}"
    if key not in traj.series:
        raise ValueError(f"trajectory has no {key} series")
    flags = []
    threshold = -1.5 - margin
    norm = traj.column(key)
    if np.all(norm == 0):
        slope_w = slope_u = -math.inf
    else:
        slope_w = dg.fit_decay_rate(tau, norm, window)[0]
        u_l2 = np.exp(0.25 * tau) * traj.column("v_l2")
        slope_u = dg.fit_decay_rate(tau, u_l2, window)[0]
    coeffs = dg.asymptotic_coefficients(traj)
    flags.extend(coeffs.flags)
    gamma_res = float(np.max(np.abs(coeffs.c))) / s2 if s2 > 0 else 0.0
    zscale = max(float(np.max(np.abs(coeffs.c_matrix))), float(np.max(np.abs(coeffs.zeta0))))
    zeta_res = float(np.max(np.abs(coeffs.d))) / zscale if zscale > 0 else 0.0
    alg = gamma_res <= moment_tol and zeta_res <= tol
    return StrongStableVerdict(
        slope_w <= threshold,
        slope_u <= -1.25 - margin,
        alg,
        float(slope_w),
        float(slope_u),
        gamma_res,
        zeta_res,
        threshold,
        tuple(window),
        coeffs.to_dict(),
        flags,
    )


@dataclass
class MiyakawaSchonbekReport:
    applicable: bool
    verdict: bool | None
    b_matrix: np.ndarray
    c_matrix: np.ndarray
    b_residual: float
    c_offdiag_residual: float
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "applicable": self.applicable,
            "verdict": self.verdict,
            "b_matrix": self.b_matrix.tolist(),
            "c_matrix": self.c_matrix.tolist(),
            "b_residual": self.b_residual,
            "c_scalar_residual": self.c_offdiag_residual,
            "message": self.message,
        }


def miyakawa_schonbek_conditions(traj, tol: float = 1e-2, moment_tol: float = 1e-8, b_tol: float = 1e-6) -> MiyakawaSchonbekReport:
    """b_kl = 0 for all k, l and c_kl = c delta_kl.

    Only meaningful when rho v(0) is integrable, i.e. beta(0) = 0 and
    zeta(0) = 0; otherwise the report says the regime does not apply.
    """
    coeffs = dg.asymptotic_coefficients(traj)
    s1, s2 = _first_moment_scale(traj) if traj.snapshots else (0.0, 0.0)
    empty = np.zeros((3, 3))
    if s1 == 0.0:
        return MiyakawaSchonbekReport(True, True, empty, empty, 0.0, 0.0, "zero datum")
    if np.max(np.abs(coeffs.b)) > moment_tol * s1 or np.max(np.abs(coeffs.zeta0)) > moment_tol * s2:
        return MiyakawaSchonbekReport(False, None, coeffs.b_matrix, coeffs.c_matrix, float("nan"), float("nan"),
                                      "regime not applicable: rho v(0) is not integrable (beta or zeta nonzero)")
    b = coeffs.b_matrix_direct if coeffs.b_matrix_direct is not None else coeffs.b_matrix
    b_res = float(np.max(np.abs(b))) / s2
    c = coeffs.c_matrix
    cs = float(np.max(np.abs(c)))
    dev = c - np.eye(3) * np.trace(c) / 3.0
    c_res = float(np.max(np.abs(dev))) / cs if cs > 0 else 0.0
    return MiyakawaSchonbekReport(True, bool(b_res <= b_tol and c_res <= tol), b, c, b_res, c_res)
