"""Atomic file output and CSV dumps of nodal fields."""

from __future__ import annotations

import csv
import io
import os
import tempfile

from .mesh import REGION_NAMES

__all__ = ["atomic_write", "solution_csv", "concentrations_csv", "read_solution_csv"]

_AXES = ("x", "y", "z")


def atomic_write(path, text):
    """Write ``text`` to a temporary file next to ``path`` and rename it."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _rows(mesh, columns):
    for i in range(mesh.dof_count):
        yield ([str(i)] + [repr(float(c)) for c in mesh.vertices[i]]
               + [repr(float(col[i])) for col in columns]
               + [REGION_NAMES[int(mesh.dof_region[i])]])


def _table(mesh, names, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dof_id", *_AXES[:mesh.dim], *names, "region"])
    w.writerows(_rows(mesh, columns))
    return buf.getvalue()


def solution_csv(field):
    """``dof_id,x[,y],value,region`` table of a nodal field."""
    return _table(field.mesh, ["value"], [field.values])


def concentrations_csv(fields):
    """One ``c<s>`` column per species."""
    mesh = fields[0].mesh
    return _table(mesh, [f"c{s}" for s in range(len(fields))], [f.values for f in fields])


def read_solution_csv(path):
    """Header and rows of a solution table as strings."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
