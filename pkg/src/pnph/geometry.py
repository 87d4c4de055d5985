"""Unit cell with a box inclusion and its epsilon-paving of a box domain.

Cells are the unit cube ``(0, 1)**dim``; the solid particle is an
axis-aligned box strictly inside.  A paving of a box domain keeps only whole
cells whose particle stays a fixed multiple of ``epsilon`` away from the
domain boundary.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CellGeometry",
    "PavedDomain",
    "EmptyPaving",
    "decompose_coordinates",
    "build_paving",
    "measures",
]


class EmptyPaving(ValueError):
    """No cell of the paving survives; epsilon must be reduced."""


def _as_tuple(values, dim=None):
    out = tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float)))
    if dim is not None and len(out) != dim:
        raise ValueError(f"expected {dim} components, got {len(out)}")
    return out


@dataclass(frozen=True)
class CellGeometry:
    """Unit cell ``(0,1)^dim`` with an axis-aligned box inclusion.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    lower, upper : sequence of float
        Corners of the inclusion in cell coordinates.
    clearance : float
        Minimum admissible distance between the inclusion and the cell faces.
    """

    dim: int
    lower: tuple
    upper: tuple
    clearance: float = 0.05

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        object.__setattr__(self, "lower", _as_tuple(self.lower, self.dim))
        object.__setattr__(self, "upper", _as_tuple(self.upper, self.dim))
        if not self.clearance > 0:
            raise ValueError("clearance must be positive")
        for lo, up in zip(self.lower, self.upper):
            if not lo < up:
                raise ValueError(f"empty inclusion along an axis: ({lo}, {up})")
            if lo < self.clearance or 1.0 - up < self.clearance:
                raise ValueError(
                    f"inclusion ({lo}, {up}) closer than clearance "
                    f"{self.clearance} to the cell boundary")
        vol = float(np.prod(np.subtract(self.upper, self.lower)))
        if not 0.0 < vol < 1.0:
            raise ValueError("inclusion volume must lie in (0, 1)")

    @classmethod
    def default(cls, dim=2):
        """Centered inclusion ``(0.25, 0.75)^dim``."""
        return cls(dim, (0.25,) * dim, (0.75,) * dim)

    def contains(self, y):
        """Open-box membership test for points ``y`` of shape (..., dim)."""
        y = np.asarray(y, dtype=float)
        inside = np.ones(y.shape[:-1], dtype=bool)
        for i in range(self.dim):
            inside &= (y[..., i] > self.lower[i]) & (y[..., i] < self.upper[i])
        return inside

    def distance_to_boundary(self):
        """Smallest gap between the inclusion and the faces of the cell."""
        return min(min(self.lower), min(1.0 - u for u in self.upper))


def measures(cell):
    """Volume of the inclusion, its surface measure and the pore volume.

    In 1D the surface measure counts the two interface points.

    Returns
    -------
    vol_omega, surf_omega, vol_pore : float
    """
    widths = np.subtract(cell.upper, cell.lower)
    vol = float(np.prod(widths))
    if cell.dim == 1:
        surf = 2.0
    else:
        surf = 2.0 * float(widths[0] + widths[1])
    return vol, surf, 1.0 - vol


def decompose_coordinates(x, epsilon):
    """Split ``x`` into integer cell index and local coordinate in ``[0,1)``.

    ``x == epsilon * index + epsilon * y`` up to rounding.  Points on lattice
    hyperplanes get ``y == 0``.
    """
    x = np.asarray(x, dtype=float)
    scaled = x / epsilon
    index = np.floor(scaled)
    y = scaled - index
    # floor of values just below an integer can yield y == 1.0 after rounding
    wrap = y >= 1.0
    if np.any(wrap):
        index = np.where(wrap, index + 1, index)
        y = np.where(wrap, 0.0, y)
    return index.astype(np.int64), y


@dataclass(frozen=True)
class PavedDomain:
    """Retained epsilon-cells of a box domain.

    Attributes
    ----------
    retained_cells : tuple of tuple of int
        Integer multi-indices ``p``; cell ``p`` occupies ``epsilon*(p + (0,1)^dim)``.
    """

    cell: CellGeometry
    epsilon: float
    domain_lower: tuple
    domain_upper: tuple
    retained_cells: tuple
    boundary_gap: float

    @property
    def dim(self):
        return self.cell.dim

    @property
    def n_cells(self):
        return len(self.retained_cells)

    def is_whole_cell_union(self, rtol=1e-12):
        """True when the domain is tiled exactly by the retained cells."""
        extent = np.subtract(self.domain_upper, self.domain_lower) / self.epsilon
        n = np.rint(extent)
        if not np.allclose(extent, n, rtol=0, atol=rtol * max(1.0, extent.max())):
            return False
        return int(np.prod(n)) == self.n_cells

    def cell_bounds(self, p):
        p = np.asarray(p, dtype=float)
        return self.epsilon * p, self.epsilon * (p + 1.0)

    def inclusion_bounds(self, p):
        p = np.asarray(p, dtype=float)
        return (self.epsilon * (p + np.asarray(self.cell.lower)),
                self.epsilon * (p + np.asarray(self.cell.upper)))


def build_paving(domain_lower, domain_upper, epsilon, cell, boundary_gap=0.2):
    """Enumerate whole cells of the epsilon-lattice that fit into the domain.

    A cell is retained when it lies inside the box and its inclusion keeps a
    distance of at least ``boundary_gap * epsilon`` from the box boundary.

    Raises
    ------
    EmptyPaving
        If no cell is retained.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if boundary_gap < 0:
        raise ValueError("boundary_gap must be non-negative")
    lo = np.asarray(_as_tuple(domain_lower, cell.dim))
    up = np.asarray(_as_tuple(domain_upper, cell.dim))
    if np.any(up <= lo):
        raise ValueError("degenerate domain")
    tol = 1e-12 * float(np.max(up - lo))

    first = np.ceil((lo - tol) / epsilon).astype(np.int64)
    last = np.floor((up + tol) / epsilon).astype(np.int64) - 1
    ranges = [range(int(a), int(b) + 1) for a, b in zip(first, last)]
    inc_lo = np.asarray(cell.lower)
    inc_up = np.asarray(cell.upper)
    gap = boundary_gap * epsilon

    retained = []
    # axis 0 fastest, matching the vertex numbering of the meshes
    for rev in itertools.product(*reversed(ranges)):
        p = np.asarray(rev[::-1])
        c_lo = epsilon * p
        c_up = epsilon * (p + 1)
        if np.any(c_lo < lo - tol) or np.any(c_up > up + tol):
            continue
        w_lo = epsilon * (p + inc_lo)
        w_up = epsilon * (p + inc_up)
        dist = min(np.min(w_lo - lo), np.min(up - w_up))
        if dist + tol < gap:
            continue
        retained.append(tuple(int(v) for v in p))
    if not retained:
        raise EmptyPaving(
            f"no cell retained for epsilon={epsilon}; reduce epsilon")
    return PavedDomain(cell, float(epsilon), tuple(lo.tolist()),
                       tuple(up.tolist()), tuple(retained), float(boundary_gap))
