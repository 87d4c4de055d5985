"""Ion concentrations around charged inclusions.

Run with ``python demos/ion_concentrations.py``.

A surface current ``g`` on every inclusion boundary raises the potential in
the electrolyte.  With a symmetric monovalent pair the cation is depleted and
the anion enriched by the same Boltzmann factor, so their product stays 1.
The script prints potential and concentration ranges for increasing ``g``
together with the Newton iteration counts.
"""

import logging

import numpy as np

from pnph import CellGeometry
from pnph.assembly import MaterialModel
from pnph.geometry import build_paving
from pnph.mesh import PORE, build_domain_mesh
from pnph.pb_solver import IonSystem, recover_concentrations, solve_micro_pb

logging.basicConfig(level=logging.WARNING)

eps = 0.25
ions = IonSystem((1, -1))
mesh = build_domain_mesh(build_paving((0, 0), (1, 1), eps, CellGeometry.default(2)), 1 / 16)
pore = mesh.dof_region == PORE

print(f"{'g':>5} {'newton':>6} {'max phi':>8} {'min c+':>7} {'max c-':>7} {'max|c+c- - 1|':>14}")
for g in (0.5, 2.0, 8.0, 32.0):
    phi = solve_micro_pb(mesh, MaterialModel(g=g), ions, eps)
    cp, cm = recover_concentrations(phi, ions)
    print(f"{g:5.1f} {phi.meta['iterations']:6d} {phi.values.max():8.4f} "
          f"{cp.values[pore].min():7.4f} {cm.values[pore].max():7.4f} "
          f"{np.abs(cp.values * cm.values - 1).max():14.1e}")
