"""First-order corrector, energy error and epsilon sweeps."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import facet_jumps, facet_quadrature, gradient_at_quadrature, quadrature_points
from .cell_problems import OutOfDomain, solve_cell_problems
from .geometry import build_paving, measures
from .mesh import BrokenField, build_box_mesh, build_domain_mesh
from .pb_solver import energy_diagnostic, solve_macro_pb, solve_micro_pb

logger = logging.getLogger(__name__)

__all__ = [
    "MeshMismatch",
    "InsufficientData",
    "DegenerateErrors",
    "StudyRow",
    "ConvergenceReport",
    "CSV_COLUMNS",
    "recovered_gradient",
    "build_corrector",
    "interpolate_macro",
    "energy_error",
    "fit_rate",
    "run_convergence_study",
]

CSV_COLUMNS = ("epsilon", "grad_err_sq", "jump_err_sq_over_eps", "energy_err",
               "micro_dofs", "macro_dofs", "newton_micro", "newton_macro", "wall_s")


class MeshMismatch(ValueError):
    pass


class InsufficientData(ValueError):
    pass


class DegenerateErrors(UserWarning):
    """Some error in a rate fit is numerically zero; the rate is NaN."""


def recovered_gradient(phi0):
    """Vertex gradients of a continuous field by averaging element gradients.

    On a uniform mesh the volume weights are equal, so each vertex receives
    the mean of the centroid gradients of its adjacent elements.
    """
    mesh = phi0.mesh
    g = gradient_at_quadrature(mesh, phi0.values).mean(axis=1)
    out = np.zeros((mesh.dof_count, mesh.dim))
    count = np.bincount(mesh.elements.ravel(), minlength=mesh.dof_count)
    for k in range(mesh.dim):
        w = np.repeat(g[:, k], mesh.elements.shape[1])
        out[:, k] = np.bincount(mesh.elements.ravel(), weights=w, minlength=mesh.dof_count)
    return out / np.maximum(count, 1)[:, None]


def _check_inside(macro_mesh, x):
    tol = 1e-12 * float(np.max(macro_mesh.upper - macro_mesh.lower))
    if np.any(x < macro_mesh.lower - tol) or np.any(x > macro_mesh.upper + tol):
        raise OutOfDomain("domain DOF outside the macro mesh")


def interpolate_macro(phi0, domain_mesh):
    """Macro field evaluated at every DOF of a domain mesh."""
    x = domain_mesh.vertices
    _check_inside(phi0.mesh, x)
    return BrokenField(domain_mesh, phi0.evaluate(x))


def _cell_dof_lookup(cell_mesh, domain_mesh):
    """Cell-mesh DOF for each domain DOF by local vertex and region, or -1."""
    n = np.asarray(cell_mesh.grid_shape)
    nv = n + 1
    table = -np.ones((int(np.prod(nv)), 2), dtype=np.int64)
    vi = cell_mesh.vertex_index
    flat = vi[:, 0] if cell_mesh.dim == 1 else vi[:, 0] + nv[0] * vi[:, 1]
    table[flat, cell_mesh.dof_region] = np.arange(cell_mesh.dof_count)
    local = np.mod(domain_mesh.vertex_index, n)
    lflat = local[:, 0] if cell_mesh.dim == 1 else local[:, 0] + nv[0] * local[:, 1]
    return table[lflat, domain_mesh.dof_region]


def build_corrector(phi0, N, epsilon, domain_mesh, gradient=None):
    """First-order two-scale approximation on the domain mesh.

    ``phi1(x) = phi0(x) + epsilon * grad phi0(x) . N(x / epsilon)`` at every
    domain DOF, with ``N`` read from the cell-mesh DOF of the same region so
    that ``phi1`` carries the interface jumps of ``N``.  ``gradient`` may
    override the recovered macro gradient with a callable ``x -> (n, dim)``.
    DOFs whose local position has no matching cell DOF, which happens only
    in cells without an inclusion, get no correction.

    The domain lattice must refine the cell lattice by the same factor,
    i.e. ``domain_mesh.h == epsilon * cell_mesh.h``.
    """
    cell_mesh = N[0].mesh
    if not math.isclose(domain_mesh.h, epsilon * cell_mesh.h, rel_tol=1e-9):
        raise MeshMismatch("domain mesh spacing is not epsilon times the cell spacing")
    x = domain_mesh.vertices
    _check_inside(phi0.mesh, x)
    base = phi0.evaluate(x)
    if gradient is None:
        g_vert = recovered_gradient(phi0)
        grad = np.stack([BrokenField(phi0.mesh, g_vert[:, k]).evaluate(x)
                         for k in range(domain_mesh.dim)], axis=1)
    else:
        grad = np.asarray(gradient(x), dtype=float).reshape(-1, domain_mesh.dim)
    dof = _cell_dof_lookup(cell_mesh, domain_mesh)
    has = dof >= 0
    Nvals = np.zeros((domain_mesh.dof_count, domain_mesh.dim))
    for k, Nk in enumerate(N):
        Nvals[has, k] = Nk.values[dof[has]]
    values = base + epsilon * np.einsum("nk,nk->n", grad, Nvals)
    out = BrokenField(domain_mesh, values)
    out.meta["epsilon"] = epsilon
    return out


def energy_error(phi_eps, phi1, epsilon):
    """Squared broken gradient error and squared jump error over epsilon."""
    mesh = phi_eps.mesh
    other = phi1.mesh
    if other is not mesh and (other.dof_count != mesh.dof_count
                              or not np.array_equal(other.elements, mesh.elements)
                              or not np.array_equal(other.vertices, mesh.vertices)):
        raise MeshMismatch("fields live on different meshes")
    e = phi_eps.values - phi1.values
    _, w = quadrature_points(mesh)
    grad = gradient_at_quadrature(mesh, e)
    grad_sq = float(np.einsum("q,eqk,eqk->", w, grad, grad))
    if mesh.n_facets:
        _, wf = facet_quadrature(mesh)
        jump_sq = float(np.einsum("q,fq->", wf, facet_jumps(mesh, e) ** 2))
    else:
        jump_sq = 0.0
    return grad_sq, jump_sq / epsilon


def fit_rate(rows):
    """Least-squares slope of ``log(energy_error)`` against ``log(epsilon)``.

    ``rows`` holds ``(epsilon, energy_error)`` pairs or :class:`StudyRow`
    objects.  Returns NaN, with a :class:`DegenerateErrors` warning, when an
    error is at most 1e-14.

    Raises
    ------
    InsufficientData
        With fewer than two rows.
    """
    pairs = [(r.epsilon, r.energy_err) if isinstance(r, StudyRow) else tuple(r)
             for r in rows]
    if len(pairs) < 2:
        raise InsufficientData("need at least two rows to fit a rate")
    eps, err = (np.asarray(v, dtype=float) for v in zip(*pairs))
    if np.any(err <= 1e-14):
        import warnings
        warnings.warn("errors too small to fit a rate", DegenerateErrors, stacklevel=2)
        return float("nan")
    slope, _ = np.polyfit(np.log(eps), np.log(err), 1)
    return float(slope)


@dataclass
class StudyRow:
    epsilon: float
    grad_err_sq: float
    jump_err_sq_over_eps: float
    energy_err: float
    micro_dofs: int
    macro_dofs: int
    newton_micro: int
    newton_macro: int
    wall_s: float
    extra: dict = field(default_factory=dict)

    def as_tuple(self):
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class ConvergenceReport:
    """Rows of an epsilon sweep, ordered by decreasing epsilon."""

    rows: list
    fitted_rate: float
    config_hash: str
    config_echo: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    complete: bool = True

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([_fmt(v) for v in r.as_tuple()])
        return buf.getvalue()

    def to_json(self):
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            if isinstance(v, np.generic):
                return clean(v.item())
            if isinstance(v, np.ndarray):
                return [clean(x) for x in v.tolist()]
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v
        payload = {
            "columns": list(CSV_COLUMNS),
            "rows": [dict(zip(CSV_COLUMNS, r.as_tuple()), **r.extra) for r in self.rows],
            "fitted_rate": self.fitted_rate,
            "complete": self.complete,
            "config_hash": self.config_hash,
            "config": self.config_echo,
            "diagnostics": self.diagnostics,
        }
        return json.dumps(clean(payload), indent=2, sort_keys=True) + "\n"


def _macro_gradient_gap(fine, coarse):
    """Broken-free energy norm of the difference of two nested macro fields."""
    diff = fine.values - coarse.evaluate(fine.mesh.vertices)
    _, w = quadrature_points(fine.mesh)
    g = gradient_at_quadrature(fine.mesh, diff)
    return math.sqrt(float(np.einsum("q,eqk,eqk->", w, g, g)))


def run_convergence_study(config):
    """Epsilon sweep comparing the heterogeneous solution with its corrector.

    Cell problems and the macro problem are solved once.  The macro mesh
    spacing defaults to the finest micro spacing, so every micro lattice is
    a coarsening of it.  A macro solve at twice the spacing estimates the
    macro discretization error (recorded in ``diagnostics``).

    ``wall_s`` holds NaN unless ``config.study.timing`` is set, so that
    repeated runs produce identical CSV bytes.
    """
    from .config import config_hash, config_to_dict

    g, mat, ions, solver, st = (config.geometry, config.material_model(),
                                config.ion_system(), config.newton_config(), config.study)
    cell = g.cell()
    eps_list = sorted(st.epsilons, reverse=True)
    t0 = time.perf_counter()
    cc = solve_cell_problems(cell, mat, st.h_cell, tolerance=solver.linear_tol)
    _, surf, pore = measures(cell)
    macro_h = st.macro_h or min(eps_list) * st.h_cell
    macro_mesh = build_box_mesh(g.domain_lower, g.domain_upper, macro_h)
    phi0 = solve_macro_pb(macro_mesh, cc.A0, pore, surf * mat.g, ions, solver)
    coarse = solve_macro_pb(build_box_mesh(g.domain_lower, g.domain_upper, 2 * macro_h),
                            cc.A0, pore, surf * mat.g, ions, solver)
    macro_gap = _macro_gradient_gap(phi0, coarse)
    setup_s = time.perf_counter() - t0
    logger.info("cell problems and macro solve done: A0=%s", cc.A0.tolist())

    rows = []
    complete = True
    for eps in eps_list:
        t = time.perf_counter()
        try:
            paved = build_paving(g.domain_lower, g.domain_upper, eps, cell, g.boundary_gap)
            mesh = build_domain_mesh(paved, st.h_cell)
            phi = solve_micro_pb(mesh, mat, ions, eps, solver)
        except Exception:
            logger.exception("row epsilon=%g failed; sweep aborted", eps)
            complete = False
            break
        phi1 = build_corrector(phi0, cc.N, eps, mesh)
        grad_sq, jump_sq = energy_error(phi, phi1, eps)
        plain_g, plain_j = energy_error(phi, interpolate_macro(phi0, mesh), eps)
        a_priori = energy_diagnostic(phi, eps)
        wall = time.perf_counter() - t
        rows.append(StudyRow(
            epsilon=eps, grad_err_sq=grad_sq, jump_err_sq_over_eps=jump_sq,
            energy_err=math.sqrt(grad_sq + jump_sq), micro_dofs=mesh.dof_count,
            macro_dofs=macro_mesh.dof_count, newton_micro=phi.meta["iterations"],
            newton_macro=phi0.meta["iterations"],
            wall_s=wall if st.timing else float("nan"),
            extra={"energy_err_no_corrector": math.sqrt(plain_g + plain_j),
                   "a_priori_grad_sq": a_priori[0],
                   "a_priori_jump_sq_over_eps": a_priori[1],
                   "a_priori_pore_l2_sq": a_priori[2],
                   "clamp_active": phi.meta["clamp_active"],
                   "wall_time_s": wall}))
        logger.info("epsilon=%g energy_err=%.4e dofs=%d", eps, rows[-1].energy_err,
                    mesh.dof_count)

    rate = fit_rate(rows) if len(rows) >= 2 else float("nan")
    smallest = min((r.energy_err for r in rows), default=float("nan"))
    diagnostics = {
        "A0": cc.A0,
        "cell_certification": {k: v for k, v in cc.diagnostics.items()},
        "macro_h": macro_h,
        "macro_discretization_estimate": macro_gap,
        "macro_resolution_ok": bool(macro_gap <= 0.1 * smallest),
        "setup_wall_time_s": setup_s,
    }
    return ConvergenceReport(rows, rate, config_hash(config), config_to_dict(config),
                             diagnostics, complete)
