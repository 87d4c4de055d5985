import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from pnph.assembly import MaterialModel, SingularSystem
from pnph.cell_problems import (
    CertificationFailed,
    OutOfDomain,
    UnfoldedForce,
    compute_A0,
    compute_B,
    corrector_residual,
    solve_L,
    solve_M,
    solve_N,
    solve_cell_problems,
    unfold,
    verify_traction_expansion,
    verify_volume_expansion,
)
from pnph.geometry import CellGeometry, build_paving
from pnph.mesh import PORE, build_cell_mesh, jump_trace

C1 = CellGeometry.default(1)
C2 = CellGeometry.default(2)


def probe(x):
    return np.prod(np.sin(np.pi * np.asarray(x)), axis=-1)


@pytest.mark.parametrize("cell", [C1, C2])
@pytest.mark.parametrize("mat", [MaterialModel(), MaterialModel(3.0, 0.5, 7.0)])
def test_L_average(cell, mat):
    L = solve_L(build_cell_mesh(cell, 1 / 16), mat)
    assert L.meta["average"] == pytest.approx(2.0, abs=1e-9)


def test_L_zero_source():
    L = solve_L(build_cell_mesh(C2, 1 / 8), MaterialModel(), source=0.0)
    assert not np.any(L.values)


@pytest.mark.parametrize("scale", [1.0, 10.0])
def test_M_constant_force(scale):
    mesh = build_cell_mesh(C2, 1 / 16)
    force = UnfoldedForce(lambda x: np.ones(np.shape(x)[:-1]), 0.25)
    M = solve_M(mesh, MaterialModel().scaled(scale), force, (1, 2))
    assert M.meta["average"] == pytest.approx(0.75, abs=1e-9)


def test_M_average_identity_nonconstant_force():
    mesh = build_cell_mesh(C2, 1 / 16)
    force = UnfoldedForce(lambda x: 1 + x[..., 0] ** 2 + np.sin(3 * x[..., 1]), 0.25)
    M = solve_M(mesh, MaterialModel(2.0, 1.0), force, (3, 1))
    assert M.meta["average"] == pytest.approx(M.meta["force_pore_average"], abs=1e-9)
    zero = solve_M(mesh, MaterialModel(), UnfoldedForce(lambda x: 0.0 * x[..., 0], 0.25), (0, 0))
    assert not np.any(zero.values)


def test_N_1d_analytic():
    mesh = build_cell_mesh(C1, 1 / 32, periodic=True)
    mat = MaterialModel(1.0, 1.0, 2.0)
    N = solve_N(mesh, mat)
    A0, _ = compute_A0(N, mat)
    assert A0[0, 0] == pytest.approx(0.5, abs=1e-12)
    for f in range(mesh.n_facets):
        _, _, jump = jump_trace(N[0], f)
        assert jump * mesh.facet_normal[f, 0] == pytest.approx(0.25, abs=1e-12)
    # slope A0/A - 1 inside both phases
    x = mesh.vertices[mesh.elements, 0]
    v = N[0].values[mesh.elements]
    slope = (v[:, 1] - v[:, 0]) / (x[:, 1] - x[:, 0])
    assert np.allclose(slope, -0.5, atol=1e-10)
    assert abs(np.mean(N[0].values[mesh.elements])) < 1e-12


def test_N_dense_pipeline_oracle():
    mesh = build_cell_mesh(C1, 1 / 8, periodic=True)
    mat = MaterialModel(2.0, 1.0, 4.0)
    N = solve_N(mesh, mat)
    A0, _ = compute_A0(N, mat)
    N_ref, A0_ref = oracles.dense_corrector(mesh, {PORE: 1.0, 1: 2.0}, 4.0)
    assert np.allclose(N[0].values, N_ref[0], atol=1e-10)
    assert np.allclose(A0, A0_ref, atol=1e-10)


def test_N_dense_oracle_2d():
    mesh = build_cell_mesh(CellGeometry(2, (0.25, 0.5), (0.5, 0.75)), 1 / 4, periodic=True)
    mat = MaterialModel(3.0, 1.0, 1.5)
    N = solve_N(mesh, mat)
    A0, info = compute_A0(N, mat)
    N_ref, A0_ref = oracles.dense_corrector(mesh, {PORE: 1.0, 1: 3.0}, 1.5)
    for i in range(2):
        assert np.allclose(N[i].values, N_ref[i], atol=1e-10)
    assert np.allclose(info["flux_average"], A0_ref, atol=1e-10)


def test_N_requires_zero_mean():
    mesh = build_cell_mesh(C2, 1 / 8, periodic=True)
    with pytest.raises(SingularSystem):
        solve_N(mesh, MaterialModel(), zero_mean=False)
    with pytest.raises(ValueError):
        solve_N(build_cell_mesh(C2, 1 / 8), MaterialModel())


def test_N_residual_and_constant_shift():
    mesh = build_cell_mesh(C2, 1 / 16, periodic=True)
    mat = MaterialModel(2.0, 1.0, 3.0)
    N = solve_N(mesh, mat)
    assert np.abs(corrector_residual(mesh, mat, N)).max() <= 10 * 1e-10
    shifted = [type(n)(mesh, n.values + 5.0) for n in N]
    assert np.abs(corrector_residual(mesh, mat, shifted)).max() <= 10 * 1e-10


def test_N_vanishes_for_large_alpha():
    mesh = build_cell_mesh(C2, 1 / 16, periodic=True)
    norms = []
    for alpha in (1.0, 10.0, 100.0, 1000.0, 1e6):
        N = solve_N(mesh, MaterialModel(1.0, 1.0, alpha))
        norms.append(np.linalg.norm(N[0].values))
    assert all(b < a for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 1e-4


@pytest.mark.parametrize("alpha", [0.5, 2.0, 8.0])
@pytest.mark.parametrize("sig", [(1.0, 1.0), (2.0, 1.0), (0.3, 4.0)])
def test_A0_1d_formula(alpha, sig):
    mat = MaterialModel(sig[0], sig[1], alpha)
    N = solve_N(build_cell_mesh(C1, 1 / 16, periodic=True), mat)
    A0, _ = compute_A0(N, mat)
    exact = oracles.analytic_A0_1d(sig[1], sig[0], alpha)
    assert A0[0, 0] == pytest.approx(exact, rel=1e-12)
    harmonic = 1.0 / (0.5 / sig[1] + 0.5 / sig[0])
    assert A0[0, 0] < harmonic


def test_A0_monotone_in_alpha_2d():
    mesh = build_cell_mesh(C2, 1 / 16, periodic=True)
    diag = []
    for alpha in (0.5, 2.0, 8.0, 32.0):
        mat = MaterialModel(2.0, 1.0, alpha)
        A0, info = compute_A0(solve_N(mesh, mat), mat)
        assert abs(A0[0, 1]) < 1e-10 and A0[0, 0] == pytest.approx(A0[1, 1], abs=1e-10)
        assert 0 < info["min_eigenvalue"] <= mat.K_upper
        diag.append(A0[0, 0])
    assert all(b >= a for a, b in zip(diag, diag[1:]))


def test_certification_failure():
    mesh = build_cell_mesh(C2, 1 / 8, periodic=True)
    mat = MaterialModel()
    N = solve_N(mesh, mat)
    broken = [type(n)(mesh, n.values * 1.1) for n in N]
    with pytest.raises(CertificationFailed):
        compute_A0(broken, mat)


def test_B_1d_vanishes():
    mat = MaterialModel(2.0, 1.0, 4.0)
    N = solve_N(build_cell_mesh(C1, 1 / 64, periodic=True), mat)
    A0, _ = compute_A0(N, mat)
    B = compute_B(N, A0, mat)
    assert np.abs(B.values).max() < 1e-8
    assert B.diagnostics["interface_residual"] < 1e-10


def test_B_2d_diagnostics():
    mat = MaterialModel()
    N = solve_N(build_cell_mesh(C2, 1 / 16, periodic=True), mat)
    A0, _ = compute_A0(N, mat)
    B = compute_B(N, A0, mat)
    assert B.diagnostics["mean_B"] < 1e-9
    assert B.diagnostics["weak_divergence"] < 1e-9


def test_solve_cell_problems_record():
    cc = solve_cell_problems(C2, MaterialModel(), 1 / 8)
    assert cc.diagnostics["L_average"] == pytest.approx(2.0, abs=1e-9)
    assert cc.cell_mesh.periodic_pairs.size


def test_unfold_examples():
    f = lambda x: x[..., 0]  # noqa: E731
    assert unfold(f, 0.25, np.array([2, 0]), np.array([0.5, 0.5])) == pytest.approx(0.625)
    assert unfold(lambda x: 3.0 + 0 * x[..., 0], 0.1, np.array([4]), np.array([0.3])) == 3.0
    with pytest.raises(OutOfDomain):
        unfold(f, 0.25, np.array([4, 0]), np.array([0.5, 0.5]), domain=((0, 0), (1, 1)))


def test_unfolded_force_matches_pointwise():
    uf = UnfoldedForce(lambda x: np.sin(x[..., 0]) * x[..., 1], 0.125)
    x = np.array([[0.31, 0.77], [0.5, 0.125]])
    assert np.allclose(uf.at(x), np.sin(x[:, 0]) * x[:, 1], atol=1e-15)


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       st.integers(-5, 5), st.floats(0, 1, exclude_max=True))
def test_unfold_multiplicative(a, b, p, y):
    f = lambda x: np.polyval(a, x[..., 0])  # noqa: E731
    g = lambda x: np.polyval(b, x[..., 0])  # noqa: E731
    p, y = np.array([p]), np.array([y])
    lhs = unfold(f, 0.3, p, y) * unfold(g, 0.3, p, y)
    rhs = unfold(lambda x: f(x) * g(x), 0.3, p, y)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_expansion_trivial_cases():
    pav = build_paving((0, 0), (1, 1), 0.25, C2)
    assert verify_traction_expansion(pav, MaterialModel(g=0.0), probe)["residual"] == 0.0
    zero = lambda x: 0.0 * x[..., 0]  # noqa: E731
    assert verify_traction_expansion(pav, MaterialModel(), zero)["residual"] == 0.0
    assert verify_volume_expansion(pav, MaterialModel(), zero, probe)["residual"] == 0.0
    r = verify_volume_expansion(pav, MaterialModel(), lambda x: 1.0 + x[..., 0], probe)
    assert r["porosity"] == 0.75


def test_volume_expansion_decays():
    res = []
    for eps in (0.5, 0.25, 0.125):
        pav = build_paving((0, 0), (1, 1), eps, C2)
        res.append(abs(verify_volume_expansion(pav, MaterialModel(), lambda x: 1.0 + 0 * x[..., 0],
                                               probe)["residual"]))
    assert res[1] < res[0] and res[2] < res[1]
