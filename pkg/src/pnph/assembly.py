"""Sparse finite element operators on broken structured meshes.

Multilinear elements with 2-point Gauss quadrature per axis on elements and
on 2D facets; 1D interface facets are points.  All operators are assembled
through COO triplets and summed into CSR, which fixes the reduction order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import PORE, SOLID

logger = logging.getLogger(__name__)

__all__ = [
    "MaterialModel",
    "SparseSystem",
    "NotConverged",
    "SingularSystem",
    "GAUSS_POINTS",
    "GAUSS_WEIGHTS",
    "shape_values",
    "shape_gradients",
    "quadrature_rule",
    "quadrature_points",
    "field_at_quadrature",
    "gradient_at_quadrature",
    "facet_quadrature",
    "facet_points",
    "facet_elements",
    "facet_jumps",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_interface_penalty",
    "assemble_minus_boundary_source",
    "assemble_load",
    "assemble_weighted_mass",
    "assemble_quadrature_load",
    "assemble_gradient_load",
    "integrate",
    "constrain",
    "solve_spd",
]

GAUSS_POINTS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
GAUSS_WEIGHTS = np.array([0.5, 0.5])

_REGIONS = {"all": None, "pore": PORE, "solid": SOLID}


class NotConverged(RuntimeError):
    def __init__(self, iterations, residual):
        super().__init__(f"linear solver stopped after {iterations} iterations "
                         f"with relative residual {residual:.3e}")
        self.iterations = iterations
        self.residual = residual


class SingularSystem(RuntimeError):
    """The constrained operator still has a nontrivial kernel."""


@dataclass(frozen=True)
class MaterialModel:
    """Piecewise constant isotropic permittivity and interface data.

    ``sigma_solid`` acts inside the particle, ``sigma_pore`` in the pore
    space; ``alpha`` weights the potential jump and ``g`` is the surface
    source on the solid side of the interface.
    """

    sigma_solid: float = 1.0
    sigma_pore: float = 1.0
    alpha: float = 2.0
    g: float = 1.0
    K_lower: float | None = None
    K_upper: float | None = None

    def __post_init__(self):
        if not (self.sigma_solid > 0 and self.sigma_pore > 0):
            raise ValueError("permittivities must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        lo = min(self.sigma_solid, self.sigma_pore)
        hi = max(self.sigma_solid, self.sigma_pore)
        if self.K_lower is None:
            object.__setattr__(self, "K_lower", lo)
        if self.K_upper is None:
            object.__setattr__(self, "K_upper", hi)
        if not 0 < self.K_lower <= lo <= hi <= self.K_upper:
            raise ValueError("permittivity bounds violated")

    def scaled(self, factor):
        """Copy with both permittivities multiplied by ``factor``."""
        return MaterialModel(self.sigma_solid * factor, self.sigma_pore * factor,
                             self.alpha, self.g)

    def sigma(self, region):
        return np.where(np.asarray(region) == SOLID, self.sigma_solid, self.sigma_pore)

    def element_tensors(self, mesh):
        s = self.sigma(mesh.element_region)
        return s[:, None, None] * np.eye(mesh.dim)[None]


def _tensor_points(dim):
    if dim == 1:
        return GAUSS_POINTS[:, None], GAUSS_WEIGHTS.copy()
    x, y = np.meshgrid(GAUSS_POINTS, GAUSS_POINTS, indexing="xy")
    wx, wy = np.meshgrid(GAUSS_WEIGHTS, GAUSS_WEIGHTS, indexing="xy")
    return np.stack([x.ravel(), y.ravel()], axis=1), (wx * wy).ravel()


def quadrature_rule(dim):
    """Reference Gauss points in ``[0,1]^dim`` and weights summing to 1."""
    return _tensor_points(dim)


def shape_values(local):
    """Multilinear shape functions at reference points, tensor node order."""
    local = np.atleast_2d(local)
    if local.shape[1] == 1:
        t = local[:, 0]
        return np.stack([1 - t, t], axis=1)
    s, t = local[:, 0], local[:, 1]
    return np.stack([(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t], axis=1)


def shape_gradients(local):
    """Reference gradients, shape (n_points, n_nodes, dim)."""
    local = np.atleast_2d(local)
    if local.shape[1] == 1:
        n = local.shape[0]
        return np.broadcast_to(np.array([[-1.0], [1.0]]), (n, 2, 1)).copy()
    s, t = local[:, 0], local[:, 1]
    gs = np.stack([-(1 - t), 1 - t, -t, t], axis=1)
    gt = np.stack([-(1 - s), -s, 1 - s, s], axis=1)
    return np.stack([gs, gt], axis=2)


def _element_mask(mesh, region):
    if region not in _REGIONS:
        raise ValueError(f"unknown region {region!r}")
    code = _REGIONS[region]
    if code is None:
        return np.ones(mesh.n_elements, dtype=bool)
    return mesh.element_region == code


def _coefficient_tensors(mesh, coefficient):
    if isinstance(coefficient, MaterialModel):
        return coefficient.element_tensors(mesh)
    c = np.asarray(coefficient, dtype=float)
    d = mesh.dim
    if c.ndim == 0:
        return np.broadcast_to(c * np.eye(d), (mesh.n_elements, d, d))
    if c.shape == (d, d):
        return np.broadcast_to(c, (mesh.n_elements, d, d))
    if c.shape == (mesh.n_elements, d, d):
        return c
    raise ValueError(f"bad coefficient shape {c.shape}")


def _scatter(mesh_n, rows_local, cols_local, values):
    rows = np.broadcast_to(rows_local, values.shape).ravel()
    cols = np.broadcast_to(cols_local, values.shape).ravel()
    return sp.coo_matrix((values.ravel(), (rows, cols)), shape=(mesh_n, mesh_n)).tocsr()


def _scatter_elements(mesh, local, elements=None):
    el = mesh.elements if elements is None else elements
    return _scatter(mesh.dof_count, el[:, :, None], el[:, None, :], local)


def quadrature_points(mesh):
    """Physical Gauss points, shape (n_elements, n_q, dim), and weights.

    Weights include the element volume.
    """
    ref, w = quadrature_rule(mesh.dim)
    lower = mesh.vertices[mesh.elements[:, 0]]
    pts = lower[:, None, :] + mesh.h * ref[None, :, :]
    return pts, w * mesh.element_volume()


def field_at_quadrature(mesh, values):
    """Field values at element Gauss points, shape (n_elements, n_q)."""
    ref, _ = quadrature_rule(mesh.dim)
    return np.asarray(values)[mesh.elements] @ shape_values(ref).T


def gradient_at_quadrature(mesh, values):
    """Physical gradients at element Gauss points, (n_elements, n_q, dim)."""
    ref, _ = quadrature_rule(mesh.dim)
    G = shape_gradients(ref) / mesh.h
    return np.einsum("ea,qak->eqk", np.asarray(values)[mesh.elements], G)


def facet_quadrature(mesh):
    """Facet reference shape values (n_q, n_facet_nodes) and weights.

    Weights include the facet measure; in 1D a facet is a single point.
    """
    if mesh.dim == 1:
        return np.ones((1, 1)), np.ones(1)
    t = GAUSS_POINTS
    return np.stack([1 - t, t], axis=1), GAUSS_WEIGHTS * mesh.facet_measure()


def facet_points(mesh):
    """Physical facet quadrature points, shape (n_facets, n_q, dim)."""
    phi, _ = facet_quadrature(mesh)
    return np.einsum("qa,fak->fqk", phi, mesh.vertices[mesh.facet_plus])


def facet_elements(mesh):
    """Pore-side and solid-side element of every interface facet."""
    x = facet_points(mesh).mean(axis=1)
    shift = 0.25 * mesh.h * mesh.facet_normal
    e_plus, _ = mesh.locate(x + shift)
    e_minus, _ = mesh.locate(x - shift)
    return e_plus, e_minus


def facet_jumps(mesh, values):
    """Jump ``plus - minus`` of a nodal field at facet quadrature points."""
    phi, _ = facet_quadrature(mesh)
    v = np.asarray(values)
    return (v[mesh.facet_plus] - v[mesh.facet_minus]) @ phi.T


def assemble_stiffness(mesh, coefficient):
    """Matrix of ``int grad(psi_i)^T A grad(psi_j)`` over all elements.

    ``coefficient`` is a MaterialModel, a scalar, a (dim, dim) tensor or a
    per-element array of tensors.
    """
    A = _coefficient_tensors(mesh, coefficient)
    ref, w = quadrature_rule(mesh.dim)
    G = shape_gradients(ref)
    scale = mesh.h ** (mesh.dim - 2)
    local = scale * np.einsum("q,qak,ekl,qbl->eab", w, G, A, G, optimize=True)
    return _scatter_elements(mesh, local)


def assemble_mass(mesh, region="all"):
    """Mass matrix restricted to the elements of ``region``."""
    mask = _element_mask(mesh, region)
    ref, w = quadrature_rule(mesh.dim)
    N = shape_values(ref)
    me = mesh.element_volume() * np.einsum("q,qa,qb->ab", w, N, N)
    el = mesh.elements[mask]
    local = np.broadcast_to(me, (el.shape[0],) + me.shape)
    return _scatter_elements(mesh, local, el)


def _jump_local(mesh):
    phi, w = facet_quadrature(mesh)
    mf = np.einsum("q,qa,qb->ab", w, phi, phi)
    J = np.hstack([np.eye(phi.shape[1]), -np.eye(phi.shape[1])])
    return J.T @ mf @ J


def assemble_interface_penalty(mesh, weight):
    """Matrix of ``weight * int [[psi_i]] [[psi_j]] dS`` over interface facets."""
    if weight < 0:
        raise ValueError("penalty weight must be non-negative")
    dofs = np.hstack([mesh.facet_plus, mesh.facet_minus])
    local = weight * np.broadcast_to(_jump_local(mesh), (dofs.shape[0],) + (dofs.shape[1],) * 2)
    return _scatter(mesh.dof_count, dofs[:, :, None], dofs[:, None, :], local)


def assemble_minus_boundary_source(mesh, coefficient):
    """Vector of ``coefficient * int psi_i^- dS`` on the solid side."""
    phi, w = facet_quadrature(mesh)
    local = coefficient * (w @ phi)
    vals = np.broadcast_to(local, mesh.facet_minus.shape)
    return np.bincount(mesh.facet_minus.ravel(), weights=vals.ravel(),
                       minlength=mesh.dof_count)


def assemble_load(mesh, func, region="all"):
    """Vector of ``int f psi_i`` with ``f`` evaluated at Gauss points.

    ``func`` maps an array of points (..., dim) to values (...).
    """
    mask = _element_mask(mesh, region)
    ref, _ = quadrature_rule(mesh.dim)
    pts, w = quadrature_points(mesh)
    pts = pts[mask]
    fv = np.asarray(func(pts), dtype=float) * np.ones(pts.shape[:2])
    local = (fv * w) @ shape_values(ref)
    return np.bincount(mesh.elements[mask].ravel(), weights=local.ravel(),
                       minlength=mesh.dof_count)


def assemble_weighted_mass(mesh, weight, region="all"):
    """Matrix of ``int w psi_i psi_j`` with ``w`` given at Gauss points.

    ``weight`` has shape (n_region_elements, n_q) in element order.
    """
    mask = _element_mask(mesh, region)
    ref, w = quadrature_rule(mesh.dim)
    N = shape_values(ref)
    local = mesh.element_volume() * np.einsum("eq,q,qa,qb->eab", weight, w, N, N)
    return _scatter_elements(mesh, local, mesh.elements[mask])


def assemble_quadrature_load(mesh, values, region="all"):
    """Vector of ``int f psi_i`` with ``f`` given at Gauss points."""
    mask = _element_mask(mesh, region)
    ref, _ = quadrature_rule(mesh.dim)
    _, w = quadrature_points(mesh)
    local = (np.asarray(values) * w) @ shape_values(ref)
    return np.bincount(mesh.elements[mask].ravel(), weights=local.ravel(),
                       minlength=mesh.dof_count)


def element_mask(mesh, region):
    """Boolean mask of the elements belonging to ``region``."""
    return _element_mask(mesh, region)


def assemble_gradient_load(mesh, coefficient, vector):
    """Vector of ``int (A c) . grad(psi_i)`` for a constant vector ``c``."""
    A = _coefficient_tensors(mesh, coefficient)
    ref, w = quadrature_rule(mesh.dim)
    G = shape_gradients(ref)
    flux = A @ np.asarray(vector, dtype=float)
    local = mesh.h ** (mesh.dim - 1) * np.einsum("q,qak,ek->ea", w, G, flux)
    return np.bincount(mesh.elements.ravel(), weights=local.ravel(),
                       minlength=mesh.dof_count)


def integrate(mesh, func, region="all"):
    """Quadrature of a point function over the elements of ``region``."""
    mask = _element_mask(mesh, region)
    pts, w = quadrature_points(mesh)
    fv = np.asarray(func(pts[mask]), dtype=float) * np.ones(pts[mask].shape[:2])
    return float(np.sum(fv * w))


@dataclass
class SparseSystem:
    """Symmetric system ``matrix @ u = rhs`` with an optional constraint row.

    When ``constraint`` is given the solution also satisfies
    ``constraint @ u == 0``, enforced by a Lagrange multiplier.
    """

    matrix: sp.spmatrix
    rhs: np.ndarray
    constraint: np.ndarray | None = None


def constrain(mesh, matrix, rhs, dirichlet_values=None, zero_mean=None):
    """Eliminate Dirichlet DOFs and periodic slaves.

    Returns the reduced system and the prolongation ``P`` such that the full
    solution is ``P @ u_reduced + lifting``.
    """
    P = mesh.prolongation()
    rhs = np.asarray(rhs, dtype=float)
    lifting = np.zeros(mesh.dof_count)
    if dirichlet_values is not None:
        lifting[mesh.dirichlet_dofs] = dirichlet_values
        corr = matrix @ lifting
        rhs = rhs - (corr if rhs.ndim == 1 else corr[:, None])
    Ar = (P.T @ matrix @ P).tocsr()
    br = P.T @ rhs
    c = None if zero_mean is None else P.T @ np.asarray(zero_mean, dtype=float)
    return SparseSystem(Ar, br, c), P, lifting


def _relative_residual(A, x, b):
    r = A @ x - b
    nb = np.linalg.norm(b)
    nr = np.linalg.norm(r)
    return nr / nb if nb > 0 else nr


def _condition_estimate(A, lu, steps=2):
    """Lower bound of the 1-norm condition number by inverse iteration."""
    rng = np.random.default_rng(0)
    v = rng.standard_normal(A.shape[0])
    growth = 0.0
    for _ in range(steps):
        nv = np.linalg.norm(v)
        w = lu.solve(v / nv)
        if not np.all(np.isfinite(w)):
            return np.inf
        growth = max(growth, np.linalg.norm(w))
        v = w
    return spla.norm(A, 1) * growth


def solve_spd(system, tolerance=1e-10, direct_limit=200_000, maxiter=None):
    """Solve a constrained symmetric system.

    Direct sparse LU up to ``direct_limit`` unknowns, Jacobi-preconditioned
    conjugate gradients above.  Systems with a constraint row are always
    solved directly.  ``rhs`` may hold several columns.

    Raises
    ------
    SingularSystem
        If the factorization exposes a kernel.
    NotConverged
        If the relative residual exceeds ``tolerance``.
    """
    A = sp.csc_matrix(system.matrix)
    b = np.asarray(system.rhs, dtype=float)
    n = A.shape[0]
    if system.constraint is not None:
        c = np.asarray(system.constraint, dtype=float).reshape(n, 1)
        A = sp.bmat([[A, sp.csc_matrix(c)], [sp.csc_matrix(c.T), None]], format="csc")
        pad = np.zeros((1,) + b.shape[1:])
        b = np.concatenate([b, pad])
    if A.shape[0] <= direct_limit or system.constraint is not None:
        try:
            lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc
        cond = _condition_estimate(A, lu)
        if not cond < 1e12:
            raise SingularSystem(f"condition estimate {cond:.2e} indicates a kernel")
        x = lu.solve(b)
        res = _relative_residual(A, x, b)
        if res > tolerance:
            # one step of iterative refinement before giving up
            x = x + lu.solve(b - A @ x)
            res = _relative_residual(A, x, b)
            if res > tolerance:
                raise NotConverged(1, res)
    else:
        d = A.diagonal()
        if np.any(d <= 0):
            raise SingularSystem("non-positive diagonal entry")
        M = sp.diags(1.0 / d)
        cols = b.reshape(n, -1)
        x = np.empty_like(cols)
        for k in range(cols.shape[1]):
            x[:, k], info = spla.cg(A, cols[:, k], rtol=tolerance, atol=0.0, M=M,
                                   maxiter=maxiter or 10 * n)
            if info != 0:
                raise NotConverged(info, _relative_residual(A, x[:, k], cols[:, k]))
        x = x.reshape(b.shape)
        res = _relative_residual(A, x, b)
        if res > 10 * tolerance:
            raise NotConverged(maxiter or 10 * n, res)
    logger.debug("linear solve n=%d residual=%.2e", A.shape[0], res)
    if system.constraint is not None:
        return x[:n]
    return x
