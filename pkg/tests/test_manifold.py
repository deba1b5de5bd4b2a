import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vortasym import biot_savart as bs
from vortasym import diagnostics as dg
from vortasym import eigenbasis as eb
from vortasym import evolution as ev
from vortasym import field_core as fc
from vortasym import manifold as mf

# L = 8 cuts the symmetric window at 1e-6 and spoils second moments; L = 10 keeps them below 1e-8
SMALL = dict(n=48, half_width=10.0)


@pytest.fixture(scope="module")
def grid():
    return fc.Grid3(**SMALL)


@pytest.fixture(scope="module")
def sym(grid):
    return mf.make_symmetric_field(0, grid)


def _run(initial, amplitude=0.05, t_end=6.0, dt=0.02, grid=SMALL, **kw):
    cfg = ev.RunConfig(**grid, initial=initial, amplitude=amplitude, dt=dt, t_end=t_end, m=5.0,
                       diagnostics_stride=5, residual_weights=(5.0,), **kw)
    return ev.run_sv3(cfg)


@pytest.fixture(scope="module")
def sym_run():
    return _run("symmetric", snapshot_stride=50)


@pytest.fixture(scope="module")
def g1_run():
    return _run("basis:g1")


# -------------------------------------------------------------- symmetry

def test_symmetric_field_residuals(sym):
    u, w = sym
    assert mf.symmetry_residual(u).ok(1e-12)
    rep = mf.symmetry_residual(u)
    assert rep.cyclic_residual >= 0 and rep.parity_residual >= 0


def test_symmetric_vorticity_is_pseudo_symmetric(sym):
    # w1 is even in x1 and odd in x2, x3; the cyclic relation carries over
    _, w = sym
    a = w.data
    top = np.abs(a).max()
    for i in range(3):
        for ax in range(3):
            sign = 1.0 if ax == i else -1.0
            assert np.abs(mf._reflect(a[i], ax) - sign * a[i]).max() < 1e-12 * top
    assert np.abs(a[0] - np.einsum("kij->ijk", a[1])).max() < 1e-12 * top


def test_symmetric_field_has_no_slow_moments():
    grid = fc.Grid3(64, 12.0)
    _, w = mf.make_symmetric_field(1, grid)
    Z, F, M = dg.raw_moments(w.data, grid)
    scale = fc.weighted_norm(w, 0)
    assert max(np.abs(Z).max(), np.abs(F).max(), np.abs(M).max()) < 1e-10 * scale


def test_symmetric_velocity_source_integrals_vanish(sym, grid):
    u, _ = sym
    vv = np.einsum("iabc,jabc->ij", u.data, u.data) * grid.cell_volume
    scale = np.trace(vv)
    for i in range(3):
        for j in range(3):
            if i != j:
                assert abs(vv[i, j]) < 1e-10 * scale
        assert abs(vv[2, 2] - vv[i, i]) < 1e-10 * scale


def test_f1_is_not_cyclic(grid):
    f1 = eb.sample_basis("f1", grid)
    u = bs.velocity_from_vorticity(f1)
    assert mf.symmetry_residual(u).cyclic_residual > 0.1


@given(st.floats(1e-3, 1e3), st.integers(0, 3))
def test_residual_is_scale_invariant(scale, seed):
    grid = fc.Grid3(16, 6.0)
    rng = np.random.default_rng(seed)
    u = fc.VectorFieldR(grid, rng.standard_normal((3, 16, 16, 16)))
    a = mf.symmetry_residual(u)
    b = mf.symmetry_residual(u * scale)
    assert b.cyclic_residual == pytest.approx(a.cyclic_residual, rel=1e-12)
    assert b.parity_residual == pytest.approx(a.parity_residual, rel=1e-12)


def test_zero_field_residual(grid):
    assert mf.symmetry_residual(fc.VectorFieldR.zeros(grid)).ok()


def test_evolution_preserves_symmetry(sym_run):
    assert len(sym_run.snapshots) >= 4
    for _, w in sym_run.snapshots:
        u = bs.velocity_from_vorticity(w)
        rep = mf.symmetry_residual(u)
        assert rep.cyclic_residual < 1e-8 and rep.parity_residual < 1e-8


# ------------------------------------------------------------- subspaces

def test_membership_of_basis_fields():
    grid = fc.Grid3(64, 12.0)
    g1 = eb.sample_basis("g1", grid)
    assert mf.subspace_membership(g1, 1).member
    assert not mf.subspace_membership(g1, 2).member
    assert not mf.subspace_membership(eb.sample_basis("f1", grid), 1).member


def test_symmetric_vorticity_in_w2(sym):
    rep = mf.subspace_membership(sym[1], 2)
    assert rep.member and rep.degree == 2


def test_membership_rejects_bad_degree(sym):
    with pytest.raises(ValueError):
        mf.subspace_membership(sym[1], 3)


def test_evolution_preserves_w1(g1_run):
    s1 = dg.identity_scales(g1_run.snapshots[0][1].data, g1_run.snapshots[0][1].grid)[1]
    beta = np.array([g1_run.column(f"beta{i}") for i in (1, 2, 3)])
    assert np.abs(beta).max() < 1e-8 * s1


# ---------------------------------------------------------- strong stable

def test_symmetric_datum_all_true(sym_run):
    v = mf.strong_stable_test(sym_run, 5.0, window=(2.0, 5.0))
    assert v.sub_verdicts == (True, True, True)
    assert v.agree and v.verdict is True
    assert v.decay_exponent <= -1.8
    assert v.flags == []


def test_gamma_datum_all_false(g1_run):
    v = mf.strong_stable_test(g1_run, 5.0, window=(2.0, 5.0))
    assert v.sub_verdicts == (False, False, False)
    assert v.decay_exponent == pytest.approx(-1.5, abs=0.05)
    assert v.gamma_residual > 0.1


def test_precondition_rejects_beta():
    tr = _run("basis:f1", t_end=0.2)
    with pytest.raises(ValueError, match="W_1"):
        mf.strong_stable_test(tr, 5.0)


def test_requires_m_above_seven_halves(sym_run):
    with pytest.raises(ValueError, match="7/2"):
        mf.strong_stable_test(sym_run, 3.5)


def test_requires_norm_series(sym_run):
    with pytest.raises(ValueError, match="norm_m4"):
        mf.strong_stable_test(sym_run, 4.0)


def test_report_counts_eleven_conditions(sym_run):
    d = mf.strong_stable_test(sym_run, 5.0, window=(2.0, 5.0)).to_dict()
    assert d["conditions_tested"] == {"beta": 3, "gamma": 3, "zeta": 5, "total": 11}
    assert set(d["sub_verdicts"]) == {"weighted_norm_decay", "physical_velocity_decay", "moment_conditions"}


def test_zero_datum():
    tr = _run("zero", amplitude=None, t_end=0.4)
    v = mf.strong_stable_test(tr, 5.0, window=(0.1, 0.4))
    assert v.verdict is True
    ms = mf.miyakawa_schonbek_conditions(tr)
    assert ms.applicable and ms.verdict is True


def test_disagreement_is_reported_as_undecided():
    v = mf.StrongStableVerdict(True, False, True, -2.0, -1.0, 0.0, 0.0, -1.75, (2, 5), {})
    assert not v.agree and v.verdict is None


# ----------------------------------------------------- Miyakawa-Schonbek

def test_symmetric_datum_scalar_c(sym_run):
    ms = mf.miyakawa_schonbek_conditions(sym_run)
    assert ms.applicable and ms.verdict is True
    c = ms.c_matrix
    assert c[0, 0] > 0
    assert np.allclose(c, c[0, 0] * np.eye(3), rtol=0, atol=1e-10 * c[0, 0])
    assert np.abs(ms.b_matrix).max() < 1e-10


def test_gamma_datum_has_nonzero_b(g1_run):
    ms = mf.miyakawa_schonbek_conditions(g1_run)
    assert ms.applicable and ms.verdict is False
    assert ms.b_residual > 0.1


def test_second_moment_datum_not_applicable():
    tr = _run("basis:h12", t_end=0.4)
    ms = mf.miyakawa_schonbek_conditions(tr)
    assert not ms.applicable and ms.verdict is None
    assert "not applicable" in ms.message


def test_nonsymmetric_w2_datum_fails_both():
    # small amplitude: the moment test still sees d != 0 and c non-scalar
    tr = _run("random:laplacian=2,smoothing=2.0", amplitude=0.05, t_end=2.0, dt=0.02, grid=dict(n=64, half_width=12.0))
    ms = mf.miyakawa_schonbek_conditions(tr)
    assert ms.applicable and ms.verdict is False
    v = mf.strong_stable_test(tr, 5.0, window=(1.0, 2.0))
    assert v.algebraic_verdict is False
    assert v.zeta_residual > 0.05
