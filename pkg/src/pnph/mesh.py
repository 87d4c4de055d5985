"""Structured meshes with duplicated interface degrees of freedom.

Every lattice vertex on the particle boundary carries two DOFs, one for the
pore side and one for the solid side, so that piecewise multilinear fields
may jump across the interface.  Elements are segments (1D) or axis-aligned
squares (2D) whose local nodes are stored in tensor order::

    1D: (0,) (1,)
    2D: (0,0) (1,0) (0,1) (1,1)

Interface facets are stored as pairs of coincident DOF tuples; the plus side
lies in the pore, the minus side in the solid, and the normal points from
solid to pore.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


__all__ = [
    "PORE",
    "SOLID",
    "REGION_NAMES",
    "MisalignedInclusion",
    "BrokenMesh",
    "BrokenField",
    "build_cell_mesh",
    "build_domain_mesh",
    "build_box_mesh",
    "jump_trace",
    "write_mesh",
    "read_mesh",
]

PORE = 0
SOLID = 1
REGION_NAMES = {PORE: "pore", SOLID: "solid"}
_REGION_CODES = {v: k for k, v in REGION_NAMES.items()}


class MisalignedInclusion(ValueError):
    """Inclusion corners or domain corners are not lattice points."""


@dataclass(frozen=True, eq=False)
class BrokenMesh:
    """Structured mesh of a box whose interface DOFs are duplicated.

    Attributes
    ----------
    vertices : (n_dofs, dim) ndarray
        Coordinates of every DOF; duplicates are bitwise identical.
    vertex_index : (n_dofs, dim) ndarray of int
        Global lattice index of each DOF's vertex, ``x = vertex_index * h``.
    elements : (n_elements, 2**dim) ndarray of int
        DOF connectivity in tensor order; elements are numbered with axis 0
        fastest.
    facet_plus, facet_minus : (n_facets, 2**(dim-1)) ndarray of int
        Pore-side and solid-side DOFs of each interface facet.
    periodic_pairs : (n_pairs, 2) ndarray of int
        ``(master, slave)`` identifications across opposite cell faces.
    """

    dim: int
    h: float
    lattice_origin: tuple
    grid_shape: tuple
    vertices: np.ndarray
    vertex_index: np.ndarray
    dof_region: np.ndarray
    elements: np.ndarray
    element_region: np.ndarray
    facet_plus: np.ndarray
    facet_minus: np.ndarray
    facet_normal: np.ndarray
    dirichlet_dofs: np.ndarray
    periodic_pairs: np.ndarray

    @property
    def dof_count(self):
        return self.vertices.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def n_facets(self):
        return self.facet_plus.shape[0]

    @property
    def is_broken(self):
        return bool(np.any(self.facet_plus != self.facet_minus))

    @property
    def lower(self):
        return np.asarray(self.lattice_origin, dtype=float) * self.h

    @property
    def upper(self):
        return (np.asarray(self.lattice_origin) + np.asarray(self.grid_shape)) * self.h

    def element_volume(self):
        return self.h ** self.dim

    def facet_measure(self):
        return self.h ** (self.dim - 1)

    def free_dofs(self):
        """DOFs that are neither Dirichlet nor periodic slaves."""
        mask = np.ones(self.dof_count, dtype=bool)
        mask[self.dirichlet_dofs] = False
        if self.periodic_pairs.size:
            mask[self.periodic_pairs[:, 1]] = False
        return np.flatnonzero(mask)

    def prolongation(self):
        """Sparse map from free DOF values to all DOF values.

        Periodic slaves copy their master; Dirichlet DOFs get zero.
        """
        free = self.free_dofs()
        col = -np.ones(self.dof_count, dtype=np.int64)
        col[free] = np.arange(free.size)
        rows = list(free)
        cols = list(range(free.size))
        if self.periodic_pairs.size:
            master, slave = self.periodic_pairs[:, 0], self.periodic_pairs[:, 1]
            keep = col[master] >= 0
            rows += list(slave[keep])
            cols += list(col[master[keep]])
        data = np.ones(len(rows))
        return sp.csr_matrix((data, (rows, cols)),
                             shape=(self.dof_count, free.size))

    def locate(self, points):
        """Element index and reference coordinates in ``[0,1]^dim``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        rel = points / self.h - np.asarray(self.lattice_origin)
        shape = np.asarray(self.grid_shape)
        cell = np.clip(np.floor(rel).astype(np.int64), 0, shape - 1)
        local = rel - cell
        if np.any(local < -1e-9) or np.any(local > 1 + 1e-9):
            raise ValueError("point outside the mesh")
        elem = cell[:, 0].copy()
        if self.dim == 2:
            elem += shape[0] * cell[:, 1]
        return elem, np.clip(local, 0.0, 1.0)


@dataclass(eq=False)
class BrokenField:
    """Nodal values of a piecewise multilinear, possibly broken, field."""

    mesh: BrokenMesh
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.dof_count,):
            raise ValueError(
                f"expected {self.mesh.dof_count} values, got {self.values.shape}")

    def traces(self):
        """Plus and minus DOF values at the facet vertices."""
        return self.values[self.mesh.facet_plus], self.values[self.mesh.facet_minus]

    def evaluate(self, points):
        """Point values; points on element faces use the lower-left element."""
        from .assembly import shape_values
        elem, local = self.mesh.locate(points)
        phi = shape_values(local)
        return np.einsum("pa,pa->p", phi, self.values[self.mesh.elements[elem]])


def jump_trace(field, facet, t=0.5):
    """One-sided traces and jump of ``field`` on interface facet ``facet``.

    ``t`` is the position along a 2D facet in ``[0, 1]``; it is ignored in 1D.

    Returns
    -------
    plus, minus, jump : float
    """
    mesh = field.mesh
    if not 0 <= facet < mesh.n_facets:
        raise IndexError(f"facet {facet} not in mesh")
    if mesh.dim == 1:
        w = np.array([1.0])
    else:
        w = np.array([1.0 - t, t])
    plus = float(w @ field.values[mesh.facet_plus[facet]])
    minus = float(w @ field.values[mesh.facet_minus[facet]])
    return plus, minus, plus - minus


def _check_lattice(value, h, what):
    k = np.rint(np.asarray(value, dtype=float) / h)
    if not np.allclose(k * h, value, rtol=0, atol=1e-9 * h):
        raise MisalignedInclusion(f"{what} {value} not on lattice of spacing {h}")
    return k.astype(np.int64)


def _structured_mesh(h, origin, shape, solid, broken, periodic, dirichlet):
    """Assemble a BrokenMesh from element region tags on a lattice.

    ``solid`` is a boolean array over elements (axis 0 fastest).
    """
    shape = tuple(int(n) for n in shape)
    dim = len(shape)
    origin = np.asarray(origin, dtype=np.int64)
    nv = tuple(n + 1 for n in shape)
    n_vert = int(np.prod(nv))
    n_el = int(np.prod(shape))
    solid = np.asarray(solid, dtype=bool).reshape(n_el)

    # lattice vertices of each element, tensor order
    if dim == 1:
        base = np.arange(shape[0])
        elem_vert = np.stack([base, base + 1], axis=1)
    else:
        i, j = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="xy")
        base = (i + nv[0] * j).ravel()
        elem_vert = np.stack([base, base + 1, base + nv[0], base + nv[0] + 1], axis=1)
    region = np.where(solid, SOLID, PORE).astype(np.int8)

    touch = np.zeros((n_vert, 2), dtype=bool)
    for r in (PORE, SOLID):
        touch[elem_vert[region == r].ravel(), r] = True

    dof_of = -np.ones((n_vert, 2), dtype=np.int64)
    if broken:
        flat = touch.ravel()
        dof_of.ravel()[flat] = np.arange(int(flat.sum()))
    else:
        ids = np.arange(n_vert)
        dof_of[:, PORE] = ids
        dof_of[:, SOLID] = ids
    n_dofs = int(dof_of.max()) + 1

    dof_vertex = np.empty(n_dofs, dtype=np.int64)
    dof_region = np.empty(n_dofs, dtype=np.int8)
    for r in (PORE, SOLID):
        has = dof_of[:, r] >= 0
        dof_vertex[dof_of[has, r]] = np.flatnonzero(has)
        dof_region[dof_of[has, r]] = r
    if not broken:
        dof_region[:] = np.where(touch[:, PORE], PORE, SOLID)

    elements = dof_of[elem_vert, region[:, None]]

    if dim == 1:
        vidx = dof_vertex[:, None]
    else:
        vidx = np.stack([dof_vertex % nv[0], dof_vertex // nv[0]], axis=1)
    vertex_index = vidx + origin
    vertices = vertex_index * float(h)

    # interface facets between elements of different regions
    plus, minus, normal = [], [], []
    el_ids = np.arange(n_el).reshape(shape[::-1])
    for axis in range(dim):
        grid_axis = dim - 1 - axis  # el_ids is indexed [j, i]
        a = np.take(el_ids, np.arange(shape[axis] - 1), axis=grid_axis).ravel()
        b = np.take(el_ids, np.arange(1, shape[axis]), axis=grid_axis).ravel()
        diff = region[a] != region[b]
        a, b = a[diff], b[diff]
        if dim == 1:
            shared = elem_vert[a][:, [1]]
        elif axis == 0:
            shared = elem_vert[a][:, [1, 3]]
        else:
            shared = elem_vert[a][:, [2, 3]]
        plus.append(dof_of[shared, PORE])
        minus.append(dof_of[shared, SOLID])
        nvec = np.zeros((a.size, dim))
        # +e_axis when a (lower side) is solid
        nvec[:, axis] = np.where(region[a] == SOLID, 1.0, -1.0)
        normal.append(nvec)
    facet_plus = np.concatenate(plus) if plus else np.zeros((0, 2 ** (dim - 1)), np.int64)
    facet_minus = np.concatenate(minus) if minus else np.zeros_like(facet_plus)
    facet_normal = np.concatenate(normal) if normal else np.zeros((0, dim))

    on_boundary = np.zeros(n_dofs, dtype=bool)
    for axis in range(dim):
        on_boundary |= (vidx[:, axis] == 0) | (vidx[:, axis] == shape[axis])
    dirichlet_dofs = np.flatnonzero(on_boundary) if dirichlet else np.zeros(0, np.int64)

    pairs = np.zeros((0, 2), dtype=np.int64)
    if periodic:
        slave = np.zeros(n_dofs, dtype=bool)
        for axis in range(dim):
            slave |= vidx[:, axis] == shape[axis]
        s = np.flatnonzero(slave)
        mvidx = vidx[s].copy()
        for axis in range(dim):
            mvidx[:, axis] = np.where(mvidx[:, axis] == shape[axis], 0, mvidx[:, axis])
        mvert = mvidx[:, 0] if dim == 1 else mvidx[:, 0] + nv[0] * mvidx[:, 1]
        m = dof_of[mvert, dof_region[s]]
        if np.any(m < 0):
            raise MisalignedInclusion("periodic faces carry mismatched regions")
        pairs = np.stack([m, s], axis=1)

    return BrokenMesh(
        dim=dim, h=float(h), lattice_origin=tuple(int(v) for v in origin),
        grid_shape=shape, vertices=vertices, vertex_index=vertex_index,
        dof_region=dof_region, elements=elements, element_region=region,
        facet_plus=facet_plus, facet_minus=facet_minus, facet_normal=facet_normal,
        dirichlet_dofs=dirichlet_dofs, periodic_pairs=pairs)


def _cell_lattice(cell, h):
    n = int(np.rint(1.0 / h))
    if n < 1 or abs(n * h - 1.0) > 1e-9:
        raise MisalignedInclusion(f"1/h must be an integer, got h={h}")
    lo = _check_lattice(cell.lower, 1.0 / n, "inclusion corner")
    up = _check_lattice(cell.upper, 1.0 / n, "inclusion corner")
    return n, lo, up


def _solid_mask(idx, lo, up):
    """Elements (by per-axis lattice index arrays) inside the inclusion box."""
    mask = np.ones(idx[0].shape, dtype=bool)
    for i, (a, b) in enumerate(zip(lo, up)):
        mask &= (idx[i] >= a) & (idx[i] < b)
    return mask


def _element_indices(shape):
    if len(shape) == 1:
        return [np.arange(shape[0])]
    i, j = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="xy")
    return [i.ravel(), j.ravel()]


def build_cell_mesh(cell, h, periodic=False, broken=True):
    """Mesh of the unit cell with element faces along the inclusion boundary.

    Raises
    ------
    MisalignedInclusion
        If ``1/h`` is not an integer or the inclusion corners are off-lattice.
    """
    n, lo, up = _cell_lattice(cell, h)
    shape = (n,) * cell.dim
    solid = _solid_mask(_element_indices(shape), lo, up)
    return _structured_mesh(1.0 / n, (0,) * cell.dim, shape, solid,
                            broken=broken, periodic=periodic, dirichlet=False)


def build_domain_mesh(paved, h_cell):
    """Replicate the cell mesh into every retained cell of the paving.

    Cell boundaries are stitched continuously; only particle boundaries carry
    duplicated DOFs.  All DOFs on the domain boundary are Dirichlet DOFs.
    """
    n, lo, up = _cell_lattice(paved.cell, h_cell)
    h = paved.epsilon / n
    k_lo = _check_lattice(paved.domain_lower, h, "domain corner")
    k_up = _check_lattice(paved.domain_upper, h, "domain corner")
    shape = tuple(int(v) for v in k_up - k_lo)
    idx = [k + k_lo[a] for a, k in enumerate(_element_indices(shape))]
    cell_idx = [np.floor_divide(k, n) for k in idx]
    local = [np.mod(k, n) for k in idx]
    solid = _solid_mask(local, lo, up)
    cells = np.asarray(paved.retained_cells, dtype=np.int64).reshape(-1, len(shape))
    c_lo = np.minimum(cells.min(axis=0), [c.min() for c in cell_idx])
    c_hi = np.maximum(cells.max(axis=0), [c.max() for c in cell_idx])
    table = np.zeros(tuple(c_hi - c_lo + 1), dtype=bool)
    table[tuple((cells - c_lo).T)] = True
    solid &= table[tuple(c - c_lo[a] for a, c in enumerate(cell_idx))]
    return _structured_mesh(h, k_lo, shape, solid, broken=True,
                            periodic=False, dirichlet=True)


def build_box_mesh(lower, upper, h):
    """Continuous mesh of a box (no inclusions), Dirichlet on the boundary."""
    k_lo = _check_lattice(np.atleast_1d(lower), h, "domain corner")
    k_up = _check_lattice(np.atleast_1d(upper), h, "domain corner")
    shape = tuple(int(v) for v in k_up - k_lo)
    solid = np.zeros(int(np.prod(shape)), dtype=bool)
    return _structured_mesh(h, k_lo, shape, solid, broken=False,
                            periodic=False, dirichlet=True)


def _atomic_write(path, text):
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_mesh(mesh, path):
    """Dump a mesh to the plain-text exchange format.

    Header ``dim n_vertices n_elements n_facetpairs`` followed by vertex,
    element and facet-pair lines.  Trailing ``dirichlet`` and ``periodic``
    lines carry the constraint sets.  Floats use ``repr`` so the round trip
    is bit exact.  A final ``lattice`` line records the spacing and the
    integer origin of the vertex lattice.
    """
    lines = [f"{mesh.dim} {mesh.dof_count} {mesh.n_elements} {mesh.n_facets}"]
    for i, x in enumerate(mesh.vertices):
        lines.append(" ".join([str(i)] + [repr(float(c)) for c in x]))
    for e, (conn, r) in enumerate(zip(mesh.elements, mesh.element_region)):
        lines.append(" ".join([str(e), REGION_NAMES[int(r)]] + [str(int(v)) for v in conn]))
    for f in range(mesh.n_facets):
        lines.append(" ".join(
            [str(f)] + [str(int(v)) for v in mesh.facet_plus[f]] + ["|"]
            + [str(int(v)) for v in mesh.facet_minus[f]] + ["|"]
            + [repr(float(c)) for c in mesh.facet_normal[f]]))
    lines.append(" ".join(["dirichlet"] + [str(int(v)) for v in mesh.dirichlet_dofs]))
    for m, s in mesh.periodic_pairs:
        lines.append(f"periodic {int(m)} {int(s)}")
    lines.append(" ".join(["lattice", repr(mesh.h)]
                          + [str(v) for v in mesh.lattice_origin]
                          + [str(v) for v in mesh.grid_shape]))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_mesh(path):
    """Inverse of :func:`write_mesh`."""
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip()]
    dim, nv, ne, nf = (int(v) for v in rows[0])
    pos = 1
    vertices = np.array([[float(c) for c in r[1:]] for r in rows[pos:pos + nv]])
    pos += nv
    el_rows = rows[pos:pos + ne]
    pos += ne
    region = np.array([_REGION_CODES[r[1]] for r in el_rows], dtype=np.int8)
    elements = np.array([[int(v) for v in r[2:]] for r in el_rows], dtype=np.int64)
    nloc = 2 ** (dim - 1)
    plus, minus, normal = [], [], []
    for r in rows[pos:pos + nf]:
        plus.append([int(v) for v in r[1:1 + nloc]])
        minus.append([int(v) for v in r[2 + nloc:2 + 2 * nloc]])
        normal.append([float(v) for v in r[3 + 2 * nloc:]])
    pos += nf
    dirichlet = np.zeros(0, dtype=np.int64)
    pairs = []
    lattice = None
    for r in rows[pos:]:
        if r[0] == "dirichlet":
            dirichlet = np.array([int(v) for v in r[1:]], dtype=np.int64)
        elif r[0] == "periodic":
            pairs.append([int(r[1]), int(r[2])])
        elif r[0] == "lattice":
            lattice = r[1:]

    if lattice is not None:
        h = float(lattice[0])
        origin = np.array([int(v) for v in lattice[1:1 + dim]])
        shape = tuple(int(v) for v in lattice[1 + dim:1 + 2 * dim])
        vertex_index = np.rint(vertices / h).astype(np.int64)
    else:
        h = float(vertices[elements[0, 1], 0] - vertices[elements[0, 0], 0])
        vertex_index = np.rint(vertices / h).astype(np.int64)
        origin = vertex_index.min(axis=0)
        shape = tuple(int(v) for v in vertex_index.max(axis=0) - origin)
    dof_region = np.empty(nv, dtype=np.int8)
    dof_region[elements.ravel()] = np.repeat(region, elements.shape[1])
    if not np.any(np.asarray(plus) != np.asarray(minus)) and nv:
        # continuous mesh: region of a shared vertex defaults to pore
        touch_pore = np.zeros(nv, dtype=bool)
        touch_pore[elements[region == PORE].ravel()] = True
        dof_region = np.where(touch_pore, PORE, SOLID).astype(np.int8)
    return BrokenMesh(
        dim=dim, h=h, lattice_origin=tuple(int(v) for v in origin), grid_shape=shape,
        vertices=vertices, vertex_index=vertex_index, dof_region=dof_region,
        elements=elements, element_region=region,
        facet_plus=np.array(plus, dtype=np.int64).reshape(nf, nloc),
        facet_minus=np.array(minus, dtype=np.int64).reshape(nf, nloc),
        facet_normal=np.array(normal, dtype=float).reshape(nf, dim),
        dirichlet_dofs=dirichlet,
        periodic_pairs=np.array(pairs, dtype=np.int64).reshape(-1, 2))
