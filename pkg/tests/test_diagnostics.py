import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from vortasym import diagnostics as dg
from vortasym import eigenbasis as eb
from vortasym import evolution as ev
from vortasym import field_core as fc
from vortasym import generators
from vortasym import linear_semigroup as ls

SMALL = dict(n=40, half_width=8.0)
# eigenfield data need the wider box: at L = 8 their Gaussian tails are cut at 1e-7
WIDE = dict(n=64, half_width=12.0)


def _run(initial, amplitude=0.05, t_end=1.0, dt=0.01, grid=SMALL, **kw):
    cfg = ev.RunConfig(**grid, initial=initial, amplitude=amplitude, dt=dt, t_end=t_end, diagnostics_stride=1, **kw)
    return ev.run_sv3(cfg)


@pytest.fixture(scope="module")
def grid():
    return fc.Grid3(**SMALL)


@pytest.fixture(scope="module")
def w1_run():
    # beta = 0, gamma and zeta generic
    return _run("random:width=1.2,split=1", t_end=1.0)


# ------------------------------------------------------------------ moments

def test_moments_of_h12(grid96):
    ms = dg.moments(eb.sample_basis("h12", grid96))
    assert np.allclose(ms.zeta, [0, 1, 0, 0, 0], atol=1e-8)
    assert np.allclose(ms.beta, 0, atol=1e-8) and np.allclose(ms.gamma, 0, atol=1e-8)


def test_moments_of_f2(grid96):
    ms = dg.moments(eb.sample_basis("f2", grid96))
    assert np.allclose(ms.beta, [0, 1, 0], atol=1e-8)
    assert np.allclose(np.concatenate([ms.gamma, ms.zeta]), 0, atol=1e-8)


def test_moments_of_zero(grid):
    assert not np.any(dg.moments(fc.VectorFieldR.zeros(grid)).as_vector())


@pytest.mark.parametrize("label", ["g1", "g2", "g3", "h11", "h13", "h22", "h23"])
def test_moments_of_basis_fields(label, grid96):
    target = np.zeros(11)
    target[dg.BASIS_LABELS.index(label)] = 1.0
    assert np.allclose(dg.moments(eb.sample_basis(label, grid96)).as_vector(), target, atol=1e-8)


def test_monomial_moments_match_dual_pairings(grid64):
    w = generators.random_solenoidal(grid64, 8, width=1.2)
    ms = dg.moments(w)
    sp = ls.spectral_split(w, 2)
    scale = fc.weighted_norm(w, 2.0)
    assert np.max(np.abs(ms.beta - sp.beta)) < 1e-10 * scale
    assert np.max(np.abs(ms.gamma - sp.gamma)) < 1e-10 * scale
    assert np.max(np.abs(ms.zeta - sp.zeta)) < 1e-10 * scale


def test_second_moment_tensor_symmetric(grid):
    M = dg.moments(generators.random_solenoidal(grid, 1)).M
    assert np.array_equal(M, np.swapaxes(M, 1, 2))


@given(st.floats(-3, 3), st.integers(0, 1000))
def test_moments_linear(alpha, seed):
    grid = fc.Grid3(24, 8.0)
    w1 = generators.random_solenoidal(grid, seed)
    w2 = generators.random_solenoidal(grid, seed + 1)
    lhs = dg.moments(w1 * alpha + w2).as_vector()
    rhs = alpha * dg.moments(w1).as_vector() + dg.moments(w2).as_vector()
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-15)


# --------------------------------------------------------------- identities

def test_identities_hold_for_f1(grid96):
    f1 = eb.sample_basis("f1", grid96)
    assert dg.check_moment_identities(f1).ok(1e-8)
    # only the symmetric part of the first moments vanishes
    _, F, _ = dg.raw_moments(f1.data, grid96)
    assert F[2, 1] == pytest.approx(1.0, abs=1e-8)
    assert F[1, 2] == pytest.approx(-1.0, abs=1e-8)


def test_identities_hold_for_random_fields(grid64):
    for seed in range(4):
        assert dg.check_moment_identities(generators.random_solenoidal(grid64, seed, width=1.2)).ok(1e-8)


def test_identities_detect_sources(grid64):
    rep = dg.check_moment_identities(generators.non_solenoidal(grid64))
    assert rep.worst > 1e-3


# ------------------------------------------------------------------- ODEs

def test_coefficient_odes_on_short_run(w1_run):
    rel = dg.coefficient_series(w1_run).relative_max()
    assert max(rel.values()) < 1e-3


def test_zeta_sources_enter_the_odes():
    # dropping the quadratic source must make the zeta residual visibly worse
    cs = dg.coefficient_series(_run("random:width=1.2,split=1", amplitude=2.0, t_end=0.2, enforce_smallness=False))
    naive = np.max(np.abs(cs.residual_zeta + cs.sources[1:-1]))
    assert naive > 10 * np.max(np.abs(cs.residual_zeta))


def test_linear_regime_moments_decay_exactly():
    def run(initial):
        cfg = ev.RunConfig(n=64, half_width=10.0, initial=initial, amplitude=1e-8, dt=0.01, t_end=0.3)
        tr = ev.run_sv3(cfg)
        return np.array(tr.times), dg._moment_arrays(tr), tr.column("norm_m0")[0]

    # data of size 1e-8; errors are also held to 1e-8 of the datum's own size
    tau, (_, gamma, _), scale = run("random:width=1.2,split=1")
    err = np.max(np.abs(gamma - gamma[0] * np.exp(-1.5 * tau)[:, None]))
    assert err < 1e-10 and err < 1e-8 * scale
    tau, (beta, _, _), scale = run("random:width=1.2")
    err = np.max(np.abs(beta - beta[0] * np.exp(-tau)[:, None]))
    assert err < 1e-10 and err < 1e-8 * scale


# ------------------------------------------------------------ coefficients

def test_zero_trajectory_coefficients():
    co = dg.asymptotic_coefficients(_run("zero", t_end=0.1))
    for part in (co.b, co.c, co.d, co.b_matrix, co.c_matrix):
        assert not np.any(part)


def test_gamma_mode_gives_c(grid):
    for eps in (1e-3, 2e-3):
        tr = _run(f"basis:{eps}*g1", amplitude=None, t_end=0.03)
        co = dg.asymptotic_coefficients(tr)
        assert np.allclose(co.c, [eps, 0, 0], atol=10 * eps**2)


def test_velocity_first_moments_are_skew(grid):
    tr = _run("basis:0.003*g1+0.001*g3", amplitude=None, t_end=0.03, grid=WIDE)
    co = dg.asymptotic_coefficients(tr)
    assert co.b_matrix_direct is not None
    scale = np.abs(co.b_matrix).max()
    assert np.max(np.abs(co.b_matrix_direct - co.b_matrix)) < 1e-4 * scale
    assert np.allclose(co.b_matrix, -co.b_matrix.T)


def test_c_matrix_positive_semidefinite(w1_run):
    c = dg.asymptotic_coefficients(w1_run).c_matrix
    assert np.allclose(c, c.T)
    assert np.linalg.eigvalsh(c).min() >= -1e-14 * np.abs(c).max()


def test_c_matrix_matches_physical_integral(w1_run):
    """int_0^T int u_k u_l dx dt from the physical solver vs the rescaled time integral."""
    co = dg.asymptotic_coefficients(w1_run)
    tau_max = w1_run.times[-1]
    w0 = w1_run.snapshots[0][1]
    T = ev.physical_time(tau_max)
    cfg = ev.RunConfig(**SMALL, equation="v3", dt=0.01, t_end=1.72, diagnostics_stride=1)
    phys = ev.run_v3(cfg, w0=w0, output_times=[T])
    t = np.array(phys.times)
    keep = t <= T + 1e-12
    for i, j in dg.SOURCE_PAIRS:
        val = integrate.simpson(np.asarray(phys.series[f"vv{i}{j}"])[keep], x=t[keep])
        assert val == pytest.approx(co.c_matrix[i - 1, j - 1], rel=0.02, abs=0.02 * np.abs(co.c_matrix).max())


def test_tail_flag_for_short_runs():
    co = dg.asymptotic_coefficients(_run("random:width=1.2", t_end=0.05))
    assert co.flags


# ------------------------------------------------------------- residuals

def test_first_order_residual_is_quadratic_in_amplitude():
    peaks = []
    for eps in (0.002, 0.004):
        tr = _run(f"basis:{eps}*f1", amplitude=None, t_end=0.3, residual_weights=(4.0,), grid=WIDE)
        res = dg.expansion_residual(tr, 1, 4.0)
        assert res.w_residual[0] < eps**2
        peaks.append(res.w_residual.max())
    assert peaks[1] / peaks[0] == pytest.approx(4.0, rel=0.05)


def test_residual_matches_direct_norm(w1_run):
    res = dg.expansion_residual(w1_run, 2, 4.0, window=(0.0, 1.0))
    co = dg.asymptotic_coefficients(w1_run)
    tau, snap = w1_run.snapshots[-1]
    grid = snap.grid
    app = np.zeros_like(snap.data)
    for coef, lb in zip(dg.expansion_coefficients(co, np.array([tau]), 2)[0], dg.BASIS_LABELS):
        app += coef * eb.sample_basis(lb, grid).data
    direct = fc.weighted_norm(snap - fc.VectorFieldR(grid, app), 4.0)
    assert res.w_residual[-1] == pytest.approx(direct, rel=1e-6)


def test_residual_rejects_bad_order(w1_run):
    with pytest.raises(ValueError):
        dg.expansion_residual(w1_run, 3, 4.0)
    with pytest.raises(ValueError):
        dg.expansion_residual(w1_run, 1, 7.0)


# ------------------------------------------------------------------ fits

TAU = np.linspace(0.0, 5.0, 101)


def test_fit_pure_exponential():
    slope, err = dg.fit_decay_rate(TAU, np.exp(-TAU))
    assert slope == pytest.approx(-1.0, abs=1e-12)


def test_fit_modulated_exponential():
    slope, _ = dg.fit_decay_rate(TAU, np.exp(-1.5 * TAU) * (1 + 0.01 * np.sin(TAU)))
    assert slope == pytest.approx(-1.5, abs=0.02)


def test_fit_constant():
    assert dg.fit_decay_rate(TAU, np.full_like(TAU, 3.0))[0] == pytest.approx(0.0, abs=1e-14)


def test_fit_window():
    vals = np.where(TAU < 2, np.exp(-TAU), np.exp(-2) * np.exp(-3 * (TAU - 2)))
    assert dg.fit_decay_rate(TAU, vals, (2.0, 5.0))[0] == pytest.approx(-3.0, abs=1e-10)


@pytest.mark.parametrize("vals", [np.exp(-TAU) * np.where(TAU > 3, -1, 1), np.zeros_like(TAU)])
def test_fit_rejects_nonpositive(vals):
    with pytest.raises(ValueError):
        dg.fit_decay_rate(TAU, vals)


def test_fit_needs_ten_samples():
    with pytest.raises(ValueError):
        dg.fit_decay_rate(TAU[:9], np.exp(-TAU[:9]))


# ------------------------------------------------------- physical profiles

def _coeffs(c=(0, 0, 0), cm=None, d=None, b=(0, 0, 0)):
    c = np.asarray(c, float)
    cm = np.zeros((3, 3)) if cm is None else np.asarray(cm, float)
    d = dg.d_from_c(np.zeros(5), cm) if d is None else np.asarray(d, float)
    return dg.AsymptoticCoefficients(np.asarray(b, float), c, d, dg.skew_from_gamma(c), cm, 0.0, 0.0, np.zeros(5))


@pytest.mark.parametrize("t", [1.5, 2.0, 4.0])
def test_profile_identity(t, grid64):
    rng = np.random.default_rng(3)
    a = rng.standard_normal((3, 3))
    co = _coeffs(c=rng.standard_normal(3), cm=a @ a.T)
    diff = dg.fm_profiles(co, t, grid64) - dg.u_app_physical(co, t, grid64)
    assert diff.max_abs() < 1e-8


def test_profiles_of_zero_coefficients(grid32):
    assert dg.fm_profiles(_coeffs(), 2.0, grid32).max_abs() == 0.0


def test_profiles_need_vanishing_b(grid32):
    with pytest.raises(ValueError):
        dg.fm_profiles(_coeffs(b=(1e-3, 0, 0)), 2.0, grid32)


def test_heat_profile_normalisation():
    # int x_k d_k E_t = -int E_t = -1; E_4 has standard deviation 2 sqrt 2, so widen the box
    grid = fc.Grid3(64, 24.0)
    t = 4.0
    x = grid.coords()
    for k in (1, 2, 3):
        val = fc.integrate(grid, x[k - 1] * dg.heat_profile_gradient(k, grid, t))
        assert val == pytest.approx(-1.0, abs=1e-8)


# --------------------------------------------------------------- sampler

def test_sampler_regime_one_bounded():
    rep = dg.weighted_bs_sampler(1.0, 1, count=4)
    assert rep.doubling_change < 0.10 and rep.control_growth is None


def test_sampler_regime_three_control_grows():
    rep = dg.weighted_bs_sampler(3.3, 3, count=4)
    assert rep.doubling_change < 0.10
    assert rep.control_growth > 0.25


def test_sampler_detects_first_moment():
    ratios = []
    for L in (8.0, 16.0):
        grid = fc.Grid3(int(4 * L), L)
        ratios.append(dg.weighted_ratio(eb.sample_basis("f1", grid), 3.0))
    # well outside the 10% band that cancelling fields stay in
    assert ratios[1] / ratios[0] - 1.0 > 0.15


@pytest.mark.parametrize("m,regime", [(1.5, 1), (2.5, 2), (3.0, 2), (4.5, 4), (1.0, 5)])
def test_sampler_rejects_mismatch(m, regime):
    with pytest.raises(ValueError):
        dg.check_regime(m, regime)


def test_velocity_integrability_detector():
    def plain(grid):
        return generators.random_solenoidal(grid, 0, width=1.0)

    def cancelled(grid):
        return ls.spectral_split(plain(grid), 1, 3.0).remainder

    grow_beta = dg.velocity_l1_growth(plain, half_widths=(6.0, 12.0))
    grow_zero = dg.velocity_l1_growth(cancelled, half_widths=(6.0, 12.0))
    assert grow_zero[1] / grow_zero[0] - 1.0 < 0.02
    assert grow_beta[1] / grow_beta[0] - 1.0 > 0.2
