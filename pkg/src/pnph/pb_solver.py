"""Newton solvers for the nonlinear Poisson-Boltzmann problem.

Both problems have the form ``K u + R(u) = b`` with a symmetric positive
semi-definite linear part ``K`` and the monotone reaction term

    R(u)_i = -c int sum_s z_s exp(-z_s u / kT) psi_i

evaluated by Gauss quadrature.  On the microscale ``c = 1`` and the term is
restricted to pore elements; on the macroscale ``c`` is the porosity.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .assembly import (
    SparseSystem,
    assemble_interface_penalty,
    assemble_load,
    assemble_mass,
    assemble_minus_boundary_source,
    assemble_quadrature_load,
    assemble_stiffness,
    assemble_weighted_mass,
    constrain,
    element_mask,
    facet_jumps,
    facet_quadrature,
    field_at_quadrature,
    gradient_at_quadrature,
    quadrature_points,
    solve_spd,
)
from .mesh import PORE, BrokenField

logger = logging.getLogger(__name__)

__all__ = [
    "IonSystem",
    "NewtonConfig",
    "NewtonDiverged",
    "ClampActive",
    "NonPositive",
    "PBProblem",
    "micro_problem",
    "macro_problem",
    "solve_micro_pb",
    "solve_macro_pb",
    "recover_concentrations",
    "energy_diagnostic",
    "monotonicity_constant",
]


class NewtonDiverged(RuntimeError):
    def __init__(self, iterations, history):
        last = history[-1] if history else float("nan")
        super().__init__(f"Newton stopped after {iterations} iterations, "
                         f"residual {last:.3e}")
        self.iterations = iterations
        self.residual_history = list(history)


class ClampActive(UserWarning):
    """The converged state touched the exponent clamp; the result is untrusted."""


class NonPositive(ValueError):
    pass


@dataclass(frozen=True)
class IonSystem:
    """Charge numbers of the ion species and the thermal scale ``kT``."""

    charges: tuple
    kT: float = 1.0
    neutrality_tol: float = 1e-12

    def __post_init__(self):
        z = tuple(float(v) for v in self.charges)
        object.__setattr__(self, "charges", z)
        if len(z) < 2:
            raise ValueError("need at least two species")
        if not self.kT > 0:
            raise ValueError("kT must be positive")
        if abs(sum(z)) > self.neutrality_tol:
            raise ValueError(f"charges {z} violate charge neutrality")
        if not min(z) < 0 < max(z):
            raise ValueError("charges must contain both signs")

    @property
    def z(self):
        return np.asarray(self.charges)

    def reaction(self, u, clamp=np.inf):
        """``-sum_s z_s exp(-z_s u/kT)``, its derivative and the clamp mask."""
        u = np.asarray(u, dtype=float)
        arg = -np.multiply.outer(self.z, u) / self.kT
        hit = np.abs(arg) > clamp
        e = np.exp(np.clip(arg, -clamp, clamp))
        zz = self.z.reshape((-1,) + (1,) * u.ndim)
        value = -np.sum(zz * e, axis=0)
        deriv = np.sum(np.where(hit, 0.0, zz ** 2 * e), axis=0) / self.kT
        return value, deriv, np.any(hit, axis=0)


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-10
    max_iter: int = 50
    exp_clamp: float = 50.0
    max_halvings: int = 20
    linear_tol: float = 1e-10

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")
        if not self.exp_clamp > 0:
            raise ValueError("exp_clamp must be positive")
        if self.max_iter < 1 or self.max_halvings < 0:
            raise ValueError("iteration limits must be positive")


class PBProblem:
    """Discrete Poisson-Boltzmann operator on a mesh with Dirichlet DOFs.

    Parameters
    ----------
    mesh : BrokenMesh
    linear : sparse matrix
        Stiffness plus interface penalty.
    load : ndarray
        Right-hand side vector.
    ions : IonSystem or None
        ``None`` drops the reaction term (linear mode).
    scale : float
        Factor in front of the reaction term.
    region : str
        Elements carrying the reaction term.
    """

    def __init__(self, mesh, linear, load, ions, scale=1.0, region="all",
                 clamp=50.0):
        self.mesh = mesh
        self.linear = linear.tocsr()
        self.load = np.asarray(load, dtype=float)
        self.ions = ions
        self.scale = float(scale)
        self.region = region
        self.clamp = clamp
        self._mask = element_mask(mesh, region)
        self.P = mesh.prolongation()

    def _reaction(self, u):
        uq = field_at_quadrature(self.mesh, u)[self._mask]
        return self.ions.reaction(uq, self.clamp)

    def residual(self, u):
        """Full-length residual vector ``K u + R(u) - b``."""
        r = self.linear @ u - self.load
        if self.ions is not None:
            value, _, _ = self._reaction(u)
            r = r + self.scale * assemble_quadrature_load(self.mesh, value, self.region)
        return r

    def jacobian(self, u):
        J = self.linear
        if self.ions is not None:
            _, deriv, _ = self._reaction(u)
            J = J + self.scale * assemble_weighted_mass(self.mesh, deriv, self.region)
        return J.tocsr()

    def clamp_active(self, u):
        if self.ions is None:
            return False
        return bool(np.any(self._reaction(u)[2]))

    def reduced_residual(self, u):
        return self.P.T @ self.residual(u)


def _norm(r):
    return float(np.linalg.norm(r))


def newton(problem, config=None, initial=None):
    """Damped Newton iteration from ``initial`` (zero by default).

    Convergence is declared when the Euclidean norm of the residual tested
    against all free basis functions is at most ``abs_tol``.  Each step halves
    the update until the residual norm decreases.
    """
    config = config or NewtonConfig()
    mesh = problem.mesh
    u = np.zeros(mesh.dof_count) if initial is None else np.array(initial, dtype=float)
    u[mesh.dirichlet_dofs] = 0.0
    r = problem.reduced_residual(u)
    history = [_norm(r)]
    it = 0
    while history[-1] > config.abs_tol:
        if it >= config.max_iter:
            raise NewtonDiverged(it, history)
        J = problem.jacobian(u)
        system, P, _ = constrain(mesh, J, np.zeros(mesh.dof_count))
        system = SparseSystem(system.matrix, -r)
        du = P @ solve_spd(system, config.linear_tol)
        t = 1.0
        for _ in range(config.max_halvings + 1):
            trial = u + t * du
            r_trial = problem.reduced_residual(trial)
            if _norm(r_trial) < history[-1]:
                break
            t *= 0.5
        else:
            raise NewtonDiverged(it + 1, history + [_norm(r_trial)])
        u, r = trial, r_trial
        history.append(_norm(r))
        it += 1
        logger.debug("newton it=%d step=%.3g residual=%.3e", it, t, history[-1])
    clamped = problem.clamp_active(u)
    if clamped:
        warnings.warn("exponent clamp active at the converged state", ClampActive,
                      stacklevel=2)
    field = BrokenField(mesh, u)
    field.meta.update(iterations=it, residual_history=history,
                      clamp_active=clamped, trusted=not clamped)
    return field


def micro_problem(mesh, material, ions, epsilon, config=None):
    """Operator of the heterogeneous problem on an epsilon-paved domain mesh."""
    config = config or NewtonConfig()
    K = (assemble_stiffness(mesh, material)
         + assemble_interface_penalty(mesh, material.alpha / epsilon))
    b = assemble_minus_boundary_source(mesh, epsilon * material.g)
    return PBProblem(mesh, K, b, ions, 1.0, "pore", config.exp_clamp)


def macro_problem(mesh, A0, porosity, g_eff, ions, config=None):
    """Operator of the homogenized problem on a continuous box mesh."""
    config = config or NewtonConfig()
    A0 = np.atleast_2d(np.asarray(A0, dtype=float))
    K = assemble_stiffness(mesh, A0)
    b = assemble_load(mesh, lambda x: g_eff)
    return PBProblem(mesh, K, b, ions, porosity, "all", config.exp_clamp)


def solve_micro_pb(mesh, material, ions, epsilon, config=None):
    """Solve the heterogeneous problem with zero Dirichlet data.

    The reaction term acts on pore elements; in the solid it vanishes
    identically for neutral charges.

    Raises
    ------
    NewtonDiverged
    """
    field = newton(micro_problem(mesh, material, ions, epsilon, config), config)
    field.meta["epsilon"] = epsilon
    return field


def solve_macro_pb(mesh, A0, porosity, g_eff, ions, config=None, linear=False):
    """Solve the homogenized problem with zero Dirichlet data.

    ``linear=True`` drops the reaction term; it is a diagnostic mode.
    """
    problem = macro_problem(mesh, A0, porosity, g_eff, None if linear else ions, config)
    return newton(problem, config)


def recover_concentrations(phi, ions):
    """Boltzmann concentrations per species as nodal fields.

    Pore DOFs get ``exp(-z_s phi / kT)``; solid DOFs get the bath value 1.
    """
    pore = phi.mesh.dof_region == PORE
    out = []
    for z in ions.charges:
        # clip keeps the value finite and positive for absurd potentials
        arg = np.clip(-z * phi.values / ions.kT, -700.0, 700.0)
        c = np.where(pore, np.exp(arg), 1.0)
        out.append(BrokenField(phi.mesh, c, {"charge": z}))
    return out


def energy_diagnostic(phi, epsilon):
    """Squared gradient norm, squared jump norm over epsilon, squared pore L2 norm."""
    mesh = phi.mesh
    _, w = quadrature_points(mesh)
    grad = gradient_at_quadrature(mesh, phi.values)
    grad_sq = float(np.einsum("q,eqk,eqk->", w, grad, grad))
    if mesh.n_facets:
        _, wf = facet_quadrature(mesh)
        jump_sq = float(np.einsum("q,fq->", wf, facet_jumps(mesh, phi.values) ** 2))
    else:
        jump_sq = 0.0
    pore = float(phi.values @ (assemble_mass(mesh, "pore") @ phi.values))
    return grad_sq, jump_sq / epsilon, pore


def monotonicity_constant(ions, xi_range=(-3.0, 3.0), samples=6001):
    """Smallest sampled value of ``-sum_s z_s xi exp(-z_s xi) / xi^2``.

    Evaluated as ``-(sum_s z_s expm1(-z_s xi) + sum_s z_s) / xi`` to avoid
    cancellation near zero.

    Raises
    ------
    NonPositive
        If the minimum is not positive.
    """
    xi = np.linspace(xi_range[0], xi_range[1], samples)
    xi = xi[np.abs(xi) > 1e-300]
    z = ions.z[:, None]
    val = -(np.sum(z * np.expm1(-z * xi), axis=0) + z.sum()) / xi
    K = float(val.min())
    if not K > 0:
        raise NonPositive(f"monotonicity constant {K} is not positive")
    return K
