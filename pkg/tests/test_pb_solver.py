import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from pnph.assembly import MaterialModel, assemble_mass
from pnph.cell_problems import solve_cell_problems
from pnph.geometry import CellGeometry, build_paving, measures
from pnph.mesh import PORE, BrokenField, build_box_mesh, build_domain_mesh
from pnph.pb_solver import (
    ClampActive,
    IonSystem,
    NewtonConfig,
    NewtonDiverged,
    NonPositive,
    energy_diagnostic,
    macro_problem,
    micro_problem,
    monotonicity_constant,
    recover_concentrations,
    solve_macro_pb,
    solve_micro_pb,
)
from pnph.study import interpolate_macro

C2 = CellGeometry.default(2)
PAIR = IonSystem((1, -1))


def domain_mesh(eps=0.5, h_cell=1 / 4, cell=C2):
    return build_domain_mesh(build_paving((0, 0), (1, 1), eps, cell), h_cell)


def test_ion_validation():
    with pytest.raises(ValueError):
        IonSystem((1, -1, 0.5))
    with pytest.raises(ValueError):
        IonSystem((1, 1), neutrality_tol=5)
    with pytest.raises(ValueError):
        IonSystem((1, -1), kT=0)
    IonSystem((2, -1, -1))
    IonSystem((1, 1, -2))


def test_newton_config_validation():
    with pytest.raises(ValueError):
        NewtonConfig(abs_tol=0)
    with pytest.raises(ValueError):
        NewtonConfig(exp_clamp=-1)


@pytest.mark.parametrize("eps", [0.5, 0.25])
def test_zero_data_micro(eps):
    phi = solve_micro_pb(domain_mesh(eps), MaterialModel(g=0.0), PAIR, eps)
    assert not np.any(phi.values)
    assert phi.meta["iterations"] <= 2


def test_zero_data_macro():
    phi = solve_macro_pb(build_box_mesh((0, 0), (1, 1), 1 / 8), np.eye(2), 0.75, 0.0, PAIR)
    assert not np.any(phi.values) and phi.meta["iterations"] <= 2


def fd_order(problem, rng):
    u = rng.uniform(-2, 2, problem.mesh.dof_count)
    # a large direction keeps the O(h^2) truncation above roundoff at h = 1e-5
    v = rng.uniform(-50, 50, problem.mesh.dof_count)
    Jv = problem.jacobian(u) @ v
    errs = [np.linalg.norm((problem.residual(u + h * v) - problem.residual(u - h * v)) / (2 * h) - Jv)
            for h in (1e-4, 1e-5)]
    return math.log10(errs[0] / errs[1])


def test_jacobian_finite_differences(rng):
    mesh = domain_mesh()
    assert fd_order(micro_problem(mesh, MaterialModel(2.0, 1.0), PAIR, 0.5), rng) >= 1.9
    macro = macro_problem(build_box_mesh((0, 0), (1, 1), 1 / 8), np.eye(2) * 0.8, 0.75, 2.0,
                          IonSystem((2, -1, -1)))
    assert fd_order(macro, rng) >= 1.9


def test_jacobian_structure(rng):
    prob = micro_problem(domain_mesh(), MaterialModel(), PAIR, 0.5)
    u = rng.uniform(-2, 2, prob.mesh.dof_count)
    J = prob.jacobian(u)
    assert abs(J - J.T).max() < 1e-12
    nonlinear = J - prob.linear
    assert nonlinear.diagonal().min() >= 0
    # only pore elements carry the reaction term
    solid_only = np.setdiff1d(np.arange(prob.mesh.dof_count),
                              prob.mesh.elements[prob.mesh.element_region == PORE].ravel())
    assert np.all(nonlinear.diagonal()[solid_only] == 0)


def test_solid_reaction_vanishes_by_neutrality(rng):
    value, _, _ = PAIR.reaction(np.zeros(5))
    assert np.all(value == 0)
    value, _, _ = IonSystem((2, -1, -1)).reaction(np.zeros(3))
    assert np.all(value == 0)


def test_small_g_matches_linearized_oracle():
    mesh = domain_mesh(0.5, 1 / 8)
    mat = MaterialModel(2.0, 1.0, 2.0, 1e-4)
    phi = solve_micro_pb(mesh, mat, PAIR, 0.5, NewtonConfig(abs_tol=1e-16))
    ref = oracles.dense_linearized_micro(mesh, {PORE: 1.0, 1: 2.0}, 2.0, 1e-4, (1, -1), 1.0, 0.5)
    err = oracles.broken_h1_sq(mesh, phi.values - ref)
    assert math.sqrt(err / oracles.broken_h1_sq(mesh, ref)) < 1e-6


@pytest.mark.parametrize("g, z", [(1.0, (1, -1)), (8.0, (1, -1)), (3.0, (2, -1, -1))])
def test_micro_matches_dense_newton(g, z):
    mesh = build_domain_mesh(build_paving((0, 0), (1, 1), 1.0, C2), 1 / 8)
    assert mesh.dof_count <= 200
    mat = MaterialModel(3.0, 1.0, 2.0, g)
    phi = solve_micro_pb(mesh, mat, IonSystem(z, kT=0.7), 1.0, NewtonConfig(abs_tol=1e-13))
    ref = oracles.dense_newton_micro(mesh, {PORE: 1.0, 1: 3.0}, 2.0, g, z, 0.7, 1.0)
    assert np.abs(phi.values - ref).max() <= 1e-9 * max(1.0, np.abs(ref).max())


def test_newton_residual_monotone():
    mesh = domain_mesh(0.25, 1 / 8)
    phi = solve_micro_pb(mesh, MaterialModel(g=20.0), PAIR, 0.25)
    hist = phi.meta["residual_history"]
    assert all(b < a for a, b in zip(hist, hist[1:]))
    assert hist[-1] <= 1e-10


def test_macro_1d_linearized_oracle():
    mesh = build_box_mesh((0.0,), (1.0,), 1 / 64)
    A0, por, g_eff = 0.8, 0.5, 2e-4
    phi = solve_macro_pb(mesh, [[A0]], por, g_eff, PAIR, NewtonConfig(abs_tol=1e-16))
    # independent dense solve of -A0 u'' + 2 por u = g_eff
    K = oracles.dense_stiffness(mesh, {0: A0, 1: A0}) + 2 * por * oracles.dense_mass(mesh)
    b = oracles.dense_mass(mesh) @ np.full(mesh.dof_count, g_eff)
    free = np.setdiff1d(np.arange(mesh.dof_count), mesh.dirichlet_dofs)
    ref = np.zeros(mesh.dof_count)
    ref[free] = np.linalg.solve(K[np.ix_(free, free)], b[free])
    assert np.linalg.norm(phi.values - ref) <= 1e-6 * np.linalg.norm(ref)


def test_macro_linear_mode_scaling():
    mesh = build_box_mesh((0, 0), (1, 1), 1 / 8)
    A0 = np.array([[0.8, 0.1], [0.1, 0.6]])
    a = solve_macro_pb(mesh, A0, 0.75, 1.0, PAIR, linear=True)
    b = solve_macro_pb(mesh, 2 * A0, 0.75, 2.0, PAIR, linear=True)
    assert np.allclose(a.values, b.values, rtol=1e-12, atol=1e-15)


def test_newton_diverged_and_clamp():
    mesh = domain_mesh()
    with pytest.raises(NewtonDiverged) as info:
        solve_micro_pb(mesh, MaterialModel(g=50.0), PAIR, 0.5, NewtonConfig(max_iter=1))
    assert len(info.value.residual_history) >= 1
    with pytest.warns(ClampActive):
        phi = solve_micro_pb(mesh, MaterialModel(g=50.0), PAIR, 0.5, NewtonConfig(exp_clamp=0.5))
    assert phi.meta["clamp_active"] and not phi.meta["trusted"]


def test_concentrations_examples():
    mesh = domain_mesh()
    zero = recover_concentrations(BrokenField(mesh, np.zeros(mesh.dof_count)), PAIR)
    assert all(np.all(c.values == 1.0) for c in zero)
    half = BrokenField(mesh, np.full(mesh.dof_count, 0.5))
    c0, c1 = recover_concentrations(half, PAIR)
    pore = mesh.dof_region == PORE
    assert np.allclose(c0.values[pore], math.exp(-0.5))
    assert np.allclose(c1.values[pore], math.exp(0.5))
    assert np.all(c0.values[~pore] == 1.0)


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=20))
def test_concentration_product_and_positivity(vals):
    mesh = build_box_mesh((0.0,), (1.0,), 1.0 / (len(vals) + 1))
    v = np.zeros(mesh.dof_count)
    v[1:-1] = vals
    c0, c1 = recover_concentrations(BrokenField(mesh, v), PAIR)
    assert np.all(c0.values > 0) and np.all(c1.values > 0)
    assert np.allclose(c0.values * c1.values, 1.0, rtol=0, atol=1e-12)


def test_energy_diagnostic_examples(rng):
    mesh = domain_mesh()
    assert energy_diagnostic(BrokenField(mesh, np.zeros(mesh.dof_count)), 0.5) == (0, 0, 0)
    x = mesh.vertices
    cont = BrokenField(mesh, np.sin(x[:, 0]) * x[:, 1])
    assert energy_diagnostic(cont, 0.5)[1] == 0.0


def test_monotonicity_constant():
    assert monotonicity_constant(PAIR, (-3, 3), 6001) >= 2 - 1e-9
    assert monotonicity_constant(IonSystem((2, -1, -1)), (-1e-3, 1e-3), 101) == pytest.approx(6, rel=1e-2)
    assert monotonicity_constant(IonSystem((1, 1, -2))) > 0
    with pytest.raises(NonPositive):
        monotonicity_constant(IonSystem((1, -1, 0.5), neutrality_tol=1.0))


def test_micro_macro_consistency_zero_data():
    small = CellGeometry(2, (0.45, 0.45), (0.55, 0.55))
    mat = MaterialModel(1.0, 1.0, 1e6, 0.0)
    mesh = build_domain_mesh(build_paving((0, 0), (1, 1), 0.25, small), 1 / 20)
    phi = solve_micro_pb(mesh, mat, PAIR, 0.25, NewtonConfig(linear_tol=1e-8))
    assert not np.any(phi.values)


def test_micro_macro_consistency_near_homogeneous():
    small = CellGeometry(2, (0.45, 0.45), (0.55, 0.55))
    mat = MaterialModel(1.0, 1.0, 1e6, 1.0)
    eps, h_cell = 0.125, 1 / 20
    mesh = build_domain_mesh(build_paving((0, 0), (1, 1), eps, small), h_cell)
    phi = solve_micro_pb(mesh, mat, PAIR, eps, NewtonConfig(linear_tol=1e-8))
    cc = solve_cell_problems(small, mat, h_cell)
    _, surf, pore = measures(small)
    phi0 = solve_macro_pb(build_box_mesh((0, 0), (1, 1), eps * h_cell), cc.A0, pore,
                          surf * mat.g, PAIR)
    d = phi.values - interpolate_macro(phi0, mesh).values
    M = assemble_mass(mesh)
    assert math.sqrt(d @ M @ d / (phi.values @ M @ phi.values)) < 0.05
