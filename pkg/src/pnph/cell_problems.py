"""Auxiliary cell problems and the effective permittivity tensor.

Three problems live on the unit cell:

* ``L`` redistributes the interface source over the cell volume,
* ``M`` does the same for a pore volume force unfolded from a given cell,
* ``N`` (periodic, zero mean) is the corrector that yields ``A0``.

The effective tensor is computed twice, from the flux average and from the
energy form with the interface term, and the two must agree.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    assemble_gradient_load,
    assemble_interface_penalty,
    assemble_load,
    assemble_mass,
    assemble_minus_boundary_source,
    assemble_stiffness,
    constrain,
    facet_elements,
    facet_jumps,
    facet_points,
    facet_quadrature,
    gradient_at_quadrature,
    integrate,
    quadrature_points,
    quadrature_rule,
    shape_gradients,
    solve_spd,
)
from .geometry import decompose_coordinates, measures
from .mesh import SOLID, BrokenField, build_cell_mesh, build_domain_mesh

logger = logging.getLogger(__name__)

__all__ = [
    "CertificationFailed",
    "OutOfDomain",
    "UnfoldedForce",
    "CellCorrectors",
    "unfold",
    "solve_L",
    "solve_M",
    "solve_N",
    "corrector_residual",
    "compute_A0",
    "compute_B",
    "solve_cell_problems",
    "verify_traction_expansion",
    "verify_volume_expansion",
]


class CertificationFailed(RuntimeError):
    """The two routes to ``A0`` disagree or ``A0`` is not positive definite."""


class OutOfDomain(ValueError):
    pass


def _cell_volume(mesh):
    return float(np.prod(mesh.grid_shape)) * mesh.element_volume()


def unfold(f, epsilon, p, y, domain=None):
    """Evaluate ``f(epsilon * p + epsilon * y)``.

    ``domain`` is an optional pair of box corners; points outside raise
    :class:`OutOfDomain`.
    """
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    x = epsilon * p + epsilon * y
    if domain is not None:
        lo, up = (np.asarray(c, dtype=float) for c in domain)
        tol = 1e-12 * float(np.max(up - lo))
        if np.any(x < lo - tol) or np.any(x > up + tol):
            raise OutOfDomain(f"unfolded point outside the domain for cell {p}")
    return f(x)


@dataclass(frozen=True)
class UnfoldedForce:
    """A force on the domain viewed cell by cell: ``(p, y) -> f(eps*p + eps*y)``."""

    f: object
    epsilon: float
    domain: tuple | None = None

    def __call__(self, p, y):
        return unfold(self.f, self.epsilon, p, y, self.domain)

    def at(self, x):
        """Value at a physical point through its own cell decomposition."""
        p, y = decompose_coordinates(x, self.epsilon)
        return self(p, y)


def _volume_system(cell_mesh, material, rhs, tolerance):
    A = assemble_stiffness(cell_mesh, material) + assemble_mass(cell_mesh)
    system, P, _ = constrain(cell_mesh, A, rhs)
    return P @ solve_spd(system, tolerance)


def solve_L(cell_mesh, material, tolerance=1e-10, source=1.0):
    """Cell boundary-traction problem.

    Finds ``L`` with ``int (grad L . A grad u + L u) dy = source * int u^- dS``
    for every discrete ``u``; the constant test function gives
    ``<L> = source * |d omega| / |Y|``.
    """
    rhs = assemble_minus_boundary_source(cell_mesh, source)
    L = _volume_system(cell_mesh, material, rhs, tolerance)
    vol = _cell_volume(cell_mesh)
    field_ = BrokenField(cell_mesh, L)
    field_.meta["average"] = integrate_field(cell_mesh, L) / vol
    return field_


def integrate_field(mesh, values, region="all"):
    """Integral of a nodal field over a region."""
    return float(assemble_load(mesh, lambda x: 1.0, region) @ values)


def solve_M(cell_mesh, material, force, cell_index, tolerance=1e-10):
    """Volume-force cell problem for the cell with index ``cell_index``.

    Right-hand side is ``int_{pore} T_eps f(p, y) u dy``.  The solution
    average equals the pore integral of the unfolded force.
    """
    p = np.asarray(cell_index, dtype=float)
    func = lambda y: force(p, y)  # noqa: E731
    rhs = assemble_load(cell_mesh, func, "pore")
    M = _volume_system(cell_mesh, material, rhs, tolerance)
    vol = _cell_volume(cell_mesh)
    out = BrokenField(cell_mesh, M)
    out.meta["average"] = integrate_field(cell_mesh, M) / vol
    out.meta["force_pore_average"] = integrate(cell_mesh, func, "pore") / vol
    out.meta["cell_index"] = tuple(int(v) for v in np.asarray(cell_index).ravel())
    return out


def _n_operator(cell_mesh, material):
    return (assemble_stiffness(cell_mesh, material)
            + assemble_interface_penalty(cell_mesh, material.alpha))


def _n_loads(cell_mesh, material):
    dim = cell_mesh.dim
    return np.stack([-assemble_gradient_load(cell_mesh, material, np.eye(dim)[i])
                     for i in range(dim)], axis=1)


def solve_N(cell_mesh, material, tolerance=1e-10, zero_mean=True):
    """Periodic broken corrector, one component per axis.

    Solves ``int (grad N_i + e_i) . A grad u + alpha [[N_i]] [[u]] = 0`` over
    periodic broken ``u`` with ``<N_i> = 0``.  All components share a
    single factorization.

    Raises
    ------
    SingularSystem
        When ``zero_mean`` is False, since constants stay in the kernel.
    """
    if not cell_mesh.periodic_pairs.size:
        raise ValueError("cell mesh must carry periodic pairs")
    K = _n_operator(cell_mesh, material)
    b = _n_loads(cell_mesh, material)
    mean = assemble_load(cell_mesh, lambda x: 1.0) if zero_mean else None
    system, P, _ = constrain(cell_mesh, K, b, zero_mean=mean)
    sol = P @ solve_spd(system, tolerance)
    return [BrokenField(cell_mesh, sol[:, i]) for i in range(cell_mesh.dim)]


def corrector_residual(cell_mesh, material, N):
    """Residual of the discrete corrector equations, one column per component.

    Entries correspond to the free periodic basis functions; the scale is
    relative to the load norm.
    """
    K = _n_operator(cell_mesh, material)
    b = _n_loads(cell_mesh, material)
    P = cell_mesh.prolongation()
    out = []
    for i, Ni in enumerate(N):
        r = P.T @ (K @ Ni.values - b[:, i])
        out.append(r / max(np.linalg.norm(P.T @ b[:, i]), 1e-300))
    return np.stack(out, axis=1)


def _flux_matrix(cell_mesh, material, N):
    """``D(N + y)`` and the element tensors ``A`` at Gauss points."""
    dim = cell_mesh.dim
    DN = np.stack([gradient_at_quadrature(cell_mesh, Ni.values) for Ni in N], axis=2)
    F = DN + np.eye(dim)[None, None]
    A = material.element_tensors(cell_mesh)
    return F, A


def compute_A0(N, material, cell_mesh=None, tolerance=1e-8):
    """Effective tensor by flux average and by energy form.

    Returns
    -------
    A0 : (dim, dim) ndarray
        Symmetrized flux average.
    info : dict
        ``flux_average``, ``energy_form`` (with the interface term), ``difference`` (max abs entrywise) and ``min_eigenvalue``.

    Raises
    ------
    CertificationFailed
        If the two values differ by more than ``tolerance`` or ``A0`` is not
        positive definite.
    """
    mesh = N[0].mesh if cell_mesh is None else cell_mesh
    vol = _cell_volume(mesh)
    _, w = quadrature_points(mesh)
    F, A = _flux_matrix(mesh, material, N)
    flux = np.einsum("eqik,ekj->eqij", F, A)
    avg = np.einsum("q,eqij->ij", w, flux) / vol
    energy = np.einsum("q,eqik,ekl,eqjl->ij", w, F, A, F) / vol
    _, wf = facet_quadrature(mesh)
    jumps = np.stack([facet_jumps(mesh, Ni.values) for Ni in N], axis=2)
    energy = energy + material.alpha * np.einsum("q,fqi,fqj->ij", wf, jumps, jumps) / vol
    diff = float(np.max(np.abs(avg - energy)))
    A0 = 0.5 * (avg + avg.T)
    min_eig = float(np.linalg.eigvalsh(A0).min())
    info = {"flux_average": avg, "energy_form": energy, "difference": diff, "min_eigenvalue": min_eig}
    if not diff <= tolerance:
        raise CertificationFailed(f"flux average and energy form differ by {diff:.3e}")
    if not min_eig > 0:
        raise CertificationFailed(f"A0 not positive definite (min eigenvalue {min_eig})")
    return A0, info


def _side_flux(mesh, values_list, elements, points, A):
    """``D(N+y) A`` at facet points evaluated inside the given elements."""
    rel = points / mesh.h - np.asarray(mesh.lattice_origin)
    nfq = points.shape[:2]
    shape = np.asarray(mesh.grid_shape)
    if mesh.dim == 1:
        corner = elements[:, None, None]
    else:
        corner = np.stack([elements % shape[0], elements // shape[0]], axis=1)[:, None, :]
    local = (rel - corner).reshape(-1, mesh.dim)
    G = shape_gradients(local).reshape(nfq + (2 ** mesh.dim, mesh.dim)) / mesh.h
    DN = np.stack([np.einsum("fa,fqak->fqk", v[mesh.elements[elements]], G)
                   for v in values_list], axis=2)
    F = DN + np.eye(mesh.dim)
    return np.einsum("fqik,fkj->fqij", F, A[elements])


@dataclass
class BField:
    """``B = D(N + y) A - A0`` sampled at element Gauss points."""

    values: np.ndarray
    weights: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _corner_distance(mesh, pts):
    """Distance of facet points to the nearest inclusion corner (2D)."""
    if mesh.dim == 1:
        return np.full(pts.shape[:2], np.inf)
    solid = mesh.elements[mesh.element_region == SOLID]
    x = mesh.vertices[solid.ravel()]
    lo, up = x.min(axis=0), x.max(axis=0)
    corners = [(a, b) for a in (lo[0], up[0]) for b in (lo[1], up[1])]
    return np.min([np.hypot(pts[..., 0] - a, pts[..., 1] - b) for a, b in corners], axis=0)


def compute_B(N, A0, material, cell_mesh=None, corner_radius=0.1):
    """Decomposition field and its certification diagnostics.

    Diagnostics
    -----------
    mean_B
        Max entry of the cell average of ``B``.
    max_abs_B
        Max entry of ``|B|`` over all Gauss points.
    interface_residual
        L2 norm over the interface of ``(A0 + B) nu - alpha [[N]]`` with the
        flux averaged from both sides, max over components.
    interface_residual_interior
        Same, restricted to points farther than ``corner_radius`` from the
        inclusion corners.
    jump_B_normal
        Max jump of the normal flux ``(A0 + B) nu`` across the interface.
    weak_divergence
        Max over periodic basis functions ``u`` of
        ``|int B grad u - int (A0 nu - alpha [[N]]) [[u]]|``.
    """
    mesh = N[0].mesh if cell_mesh is None else cell_mesh
    vol = _cell_volume(mesh)
    dim = mesh.dim
    _, w = quadrature_points(mesh)
    F, A = _flux_matrix(mesh, material, N)
    B = np.einsum("eqik,ekj->eqij", F, A) - A0
    mean_B = np.einsum("q,eqij->ij", w, B) / vol

    diag = {"mean_B": float(np.max(np.abs(mean_B))),
            "max_abs_B": float(np.max(np.abs(B)))}

    if mesh.n_facets:
        pts = facet_points(mesh)
        phi_f, wf = facet_quadrature(mesh)
        e_plus, e_minus = facet_elements(mesh)
        vals = [Ni.values for Ni in N]
        fp = _side_flux(mesh, vals, e_plus, pts, A)
        fm = _side_flux(mesh, vals, e_minus, pts, A)
        nu = mesh.facet_normal
        qn_p = np.einsum("fqij,fj->fqi", fp, nu)
        qn_m = np.einsum("fqij,fj->fqi", fm, nu)
        jumps = np.stack([facet_jumps(mesh, v) for v in vals], axis=2)
        res = 0.5 * (qn_p + qn_m) - material.alpha * jumps
        per_comp = np.sqrt(np.einsum("q,fqi->i", wf, res ** 2))
        diag["interface_residual"] = float(per_comp.max())
        diag["interface_residual_components"] = per_comp
        # the normal is undefined at inclusion corners and the gradient is
        # singular there, so also measure away from them
        away = _corner_distance(mesh, pts) > corner_radius
        per_comp = np.sqrt(np.einsum("q,fqi->i", wf, (res * away[..., None]) ** 2))
        diag["interface_residual_interior"] = float(per_comp.max())
        diag["jump_B_normal"] = float(np.max(np.abs(qn_p - qn_m)))

        # weak divergence against every periodic basis function
        ref_grad = _gradient_basis_integrals(mesh, B, w)
        A0nu = np.einsum("ij,fj->fi", A0, nu)
        coef = (A0nu[:, None, :] - material.alpha * jumps) * wf[None, :, None]
        surf = np.zeros((mesh.dof_count, dim))
        contrib = np.einsum("fqi,qa->fai", coef, phi_f)
        for i in range(dim):
            surf[:, i] += np.bincount(mesh.facet_plus.ravel(),
                                      weights=contrib[:, :, i].ravel(),
                                      minlength=mesh.dof_count)
            surf[:, i] -= np.bincount(mesh.facet_minus.ravel(),
                                      weights=contrib[:, :, i].ravel(),
                                      minlength=mesh.dof_count)
        P = mesh.prolongation() if mesh.periodic_pairs.size else None
        r = ref_grad - surf
        if P is not None:
            r = P.T @ r
        diag["weak_divergence"] = float(np.max(np.abs(r)))
    else:
        diag.update(interface_residual=0.0, interface_residual_interior=0.0,
                    jump_B_normal=0.0, weak_divergence=0.0)
    return BField(B, w, diag)


def _gradient_basis_integrals(mesh, B, w):
    """``int B_i . grad psi_a`` for every DOF ``a`` and row ``i``."""
    ref, _ = quadrature_rule(mesh.dim)
    G = shape_gradients(ref) / mesh.h
    local = np.einsum("q,eqik,qak->eai", w, B, G)
    out = np.zeros((mesh.dof_count, mesh.dim))
    for i in range(mesh.dim):
        out[:, i] = np.bincount(mesh.elements.ravel(), weights=local[:, :, i].ravel(),
                                minlength=mesh.dof_count)
    return out


@dataclass
class CellCorrectors:
    """Solved cell fields, effective tensor and certification record."""

    L: BrokenField
    N: list
    A0: np.ndarray
    B: BField
    diagnostics: dict

    @property
    def cell_mesh(self):
        return self.N[0].mesh


def solve_cell_problems(cell, material, h, tolerance=1e-10, certify_tol=1e-8):
    """Solve ``L`` and ``N``, compute and certify ``A0`` and ``B``."""
    plain = build_cell_mesh(cell, h, periodic=False, broken=True)
    periodic = build_cell_mesh(cell, h, periodic=True, broken=True)
    L = solve_L(plain, material, tolerance)
    N = solve_N(periodic, material, tolerance)
    A0, info = compute_A0(N, material, periodic, certify_tol)
    B = compute_B(N, A0, material, periodic)
    _, surf, _ = measures(cell)
    diagnostics = {
        "dual_formula_gap": info["difference"],
        "min_eigenvalue": info["min_eigenvalue"],
        "mean_B": B.diagnostics["mean_B"],
        "interface_residual": B.diagnostics["interface_residual"],
        "interface_residual_interior": B.diagnostics["interface_residual_interior"],
        "weak_divergence": B.diagnostics["weak_divergence"],
        "L_average": L.meta["average"],
        "L_average_expected": surf,
    }
    logger.debug("A0=%s certification=%s", A0.tolist(), diagnostics)
    return CellCorrectors(L, N, A0, B, diagnostics)


def verify_traction_expansion(paved, material, probe, h_cell=1 / 8):
    """Residual of the surface-to-volume expansion of the interface source.

    ``int_{interfaces} eps g phi^- dS - int_Omega (|d omega|/|Y|) g phi dx``
    for a probe function ``phi`` vanishing on the domain boundary.
    """
    mesh = build_domain_mesh(paved, h_cell)
    _, surf, _ = measures(paved.cell)
    g = material.g
    pts = facet_points(mesh)
    _, wf = facet_quadrature(mesh)
    surface = paved.epsilon * g * float(np.sum(np.asarray(probe(pts)) * wf))
    volume = surf * g * integrate(mesh, probe)
    r = surface - volume
    return {"epsilon": paved.epsilon, "surface": surface, "volume": volume,
            "residual": r, "residual_over_eps": abs(r) / paved.epsilon}


def verify_volume_expansion(paved, material, force, probe, h_cell=1 / 8):
    """Residual of the pore-to-domain expansion of a volume force.

    ``int_{pore} f phi dx - (|Y \\ omega|/|Y|) int_Omega f phi dx``.
    """
    mesh = build_domain_mesh(paved, h_cell)
    _, _, pore = measures(paved.cell)
    fp = lambda x: np.asarray(force(x)) * np.asarray(probe(x))  # noqa: E731
    pore_part = integrate(mesh, fp, "pore")
    whole = integrate(mesh, fp)
    r = pore_part - pore * whole
    return {"epsilon": paved.epsilon, "pore": pore_part, "volume": pore * whole,
            "residual": r, "residual_over_eps": abs(r) / paved.epsilon,
            "porosity": pore}
