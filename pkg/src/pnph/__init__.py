"""Homogenization of a Poisson-Boltzmann problem in a periodic porous medium.

Broken finite element spaces on structured meshes carry the potential jump
across particle interfaces.  The package solves the periodic cell problems,
certifies the effective permittivity, solves the microscopic and homogenized
nonlinear problems and measures the two-scale corrector error.
"""

from .geometry import CellGeometry, PavedDomain, EmptyPaving, build_paving, measures
from .mesh import BrokenMesh, BrokenField, build_cell_mesh, build_domain_mesh, build_box_mesh
from .assembly import MaterialModel, NotConverged, SingularSystem

__version__ = "0.1.0"

__all__ = [
    "CellGeometry",
    "PavedDomain",
    "EmptyPaving",
    "build_paving",
    "measures",
    "BrokenMesh",
    "BrokenField",
    "build_cell_mesh",
    "build_domain_mesh",
    "build_box_mesh",
    "MaterialModel",
    "NotConverged",
    "SingularSystem",
]
