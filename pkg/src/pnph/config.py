"""Toolkit configuration: a flat INI-style file with ``key = value`` lines.

Example::

    [geometry]
    dim = 2
    inclusion_lower = [0.25, 0.25]
    inclusion_upper = [0.75, 0.75]

    [ions]
    charges = [1, -1]

Numbers may be written as fractions (``1/8``).  Unknown sections or keys,
malformed values and violated constraints are all collected and reported
together with their line numbers.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction

from .assembly import MaterialModel
from .geometry import CellGeometry
from .pb_solver import IonSystem, NewtonConfig

__all__ = [
    "ParseError",
    "ValidationError",
    "ConfigErrors",
    "GeometrySection",
    "MaterialSection",
    "IonsSection",
    "SolverSection",
    "StudySection",
    "ToolkitConfig",
    "parse_config",
    "parse_config_text",
    "serialize_config",
    "config_to_dict",
    "config_hash",
    "with_overrides",
]


class ParseError(ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


class ValidationError(ValueError):
    def __init__(self, field_name, constraint, line=None):
        where = f"line {line}: " if line else ""
        super().__init__(f"{where}{field_name}: {constraint}")
        self.field = field_name
        self.constraint = constraint
        self.line = line


class ConfigErrors(ValueError):
    """All problems found in one configuration file."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(str(e) for e in self.errors))


@dataclass(frozen=True)
class GeometrySection:
    dim: int = 2
    inclusion_lower: tuple = (0.25, 0.25)
    inclusion_upper: tuple = (0.75, 0.75)
    clearance: float = 0.05
    domain_lower: tuple = (0.0, 0.0)
    domain_upper: tuple = (1.0, 1.0)
    boundary_gap: float = 0.2

    def cell(self):
        return CellGeometry(self.dim, self.inclusion_lower, self.inclusion_upper,
                            self.clearance)


@dataclass(frozen=True)
class MaterialSection:
    sigma_solid: float = 1.0
    sigma_pore: float = 1.0
    alpha: float = 2.0
    g: float = 1.0


@dataclass(frozen=True)
class IonsSection:
    charges: tuple = (1.0, -1.0)
    kT: float = 1.0
    neutrality_tol: float = 1e-12


@dataclass(frozen=True)
class SolverSection:
    abs_tol: float = 1e-10
    max_iter: int = 50
    exp_clamp: float = 50.0
    max_halvings: int = 20
    linear_tol: float = 1e-10


@dataclass(frozen=True)
class StudySection:
    epsilons: tuple = (0.5, 0.25, 0.125)
    h_cell: float = 0.0625
    macro_h: float = 0.0
    epsilon: float = 0.25
    timing: bool = False
    csv_name: str = "convergence.csv"
    json_name: str = "convergence.json"


_SECTIONS = {
    "geometry": GeometrySection,
    "material": MaterialSection,
    "ions": IonsSection,
    "solver": SolverSection,
    "study": StudySection,
}


@dataclass(frozen=True)
class ToolkitConfig:
    geometry: GeometrySection = field(default_factory=GeometrySection)
    material: MaterialSection = field(default_factory=MaterialSection)
    ions: IonsSection = field(default_factory=IonsSection)
    solver: SolverSection = field(default_factory=SolverSection)
    study: StudySection = field(default_factory=StudySection)

    def material_model(self):
        m = self.material
        return MaterialModel(m.sigma_solid, m.sigma_pore, m.alpha, m.g)

    def ion_system(self):
        return IonSystem(self.ions.charges, self.ions.kT, self.ions.neutrality_tol)

    def newton_config(self):
        s = self.solver
        return NewtonConfig(s.abs_tol, s.max_iter, s.exp_clamp, s.max_halvings, s.linear_tol)


def _number(text):
    return float(Fraction(text.strip()))


def _convert(kind, text):
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind is int:
        v = _number(text)
        if v != int(v):
            raise ValueError(f"expected an integer, got {text!r}")
        return int(v)
    if kind is float:
        return _number(text)
    if kind is tuple:
        inner = text[1:-1] if text.startswith("[") and text.endswith("]") else text
        parts = [p for p in re.split(r"[,\s]+", inner.strip()) if p]
        if not parts:
            raise ValueError("empty list")
        return tuple(_number(p.replace("−", "-")) for p in parts)
    return text


def _field_types(cls):
    defaults = cls()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(cls)}


def _validate(cfg, lines):
    """Cross-field checks; returns a list of ValidationError."""
    errs = []

    def bad(name, constraint):
        errs.append(ValidationError(name, constraint, lines.get(name)))

    g = cfg.geometry
    if g.dim not in (1, 2):
        bad("geometry.dim", "must be 1 or 2")
    else:
        for name in ("inclusion_lower", "inclusion_upper", "domain_lower", "domain_upper"):
            if len(getattr(g, name)) != g.dim:
                bad(f"geometry.{name}", f"needs {g.dim} components")
    if not errs:
        try:
            g.cell()
        except ValueError as exc:
            bad("geometry.inclusion", str(exc))
        if any(u <= lo for lo, u in zip(g.domain_lower, g.domain_upper)):
            bad("geometry.domain", "upper corner must exceed lower corner")
    if g.clearance <= 0:
        bad("geometry.clearance", "must be positive")
    if g.boundary_gap < 0:
        bad("geometry.boundary_gap", "must be non-negative")

    m = cfg.material
    for name in ("sigma_solid", "sigma_pore"):
        if not getattr(m, name) > 0:
            bad(f"material.{name}", "permittivity must be positive")
    if not m.alpha > 0:
        bad("material.alpha", "alpha must be positive")
    if not math.isfinite(m.g):
        bad("material.g", "must be finite")

    i = cfg.ions
    if len(i.charges) < 2:
        bad("ions.charges", "need at least two species")
    if abs(sum(i.charges)) > i.neutrality_tol:
        bad("ions.charges", f"charge neutrality violated (sum {sum(i.charges):g})")
    if i.charges and not min(i.charges) < 0 < max(i.charges):
        bad("ions.charges", "both signs must occur")
    if not i.kT > 0:
        bad("ions.kT", "must be positive")
    if i.neutrality_tol < 0:
        bad("ions.neutrality_tol", "must be non-negative")

    s = cfg.solver
    for name in ("abs_tol", "exp_clamp", "linear_tol"):
        if not getattr(s, name) > 0:
            bad(f"solver.{name}", "must be positive")
    if s.max_iter < 1:
        bad("solver.max_iter", "must be at least 1")
    if s.max_halvings < 0:
        bad("solver.max_halvings", "must be non-negative")

    st = cfg.study
    if any(not e > 0 for e in st.epsilons):
        bad("study.epsilons", "must be positive")
    if len(set(st.epsilons)) != len(st.epsilons):
        bad("study.epsilons", "must be distinct")
    if not st.epsilon > 0:
        bad("study.epsilon", "must be positive")
    if not 0 < st.h_cell <= 1:
        bad("study.h_cell", "must lie in (0, 1]")
    else:
        n = 1.0 / st.h_cell
        if abs(n - round(n)) > 1e-9:
            bad("study.h_cell", "1/h_cell must be an integer")
        elif g.dim in (1, 2):
            for c in g.inclusion_lower + g.inclusion_upper:
                if abs(c * n - round(c * n)) > 1e-9:
                    bad("study.h_cell", "inclusion corners must lie on the cell lattice")
                    break
    if st.macro_h < 0:
        bad("study.macro_h", "must be non-negative (0 selects the finest micro spacing)")
    return errs


def parse_config_text(text):
    """Parse configuration text; raises ConfigErrors listing every problem."""
    errors = []
    values = {name: {} for name in _SECTIONS}
    lines = {}
    section = None
    unknown = False  # inside a section already reported as unknown
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                errors.append(ParseError(no, f"malformed section header {raw.strip()!r}"))
                section, unknown = None, True
                continue
            name = line[1:-1].strip()
            unknown = name not in _SECTIONS
            section = None if unknown else name
            if unknown:
                errors.append(ParseError(no, f"unknown section [{name}]"))
            continue
        if "=" not in line:
            errors.append(ParseError(no, f"expected 'key = value', got {raw.strip()!r}"))
            continue
        if section is None:
            if not unknown:
                errors.append(ParseError(no, "key outside a section"))
            continue
        key, val = (p.strip() for p in line.split("=", 1))
        types = _field_types(_SECTIONS[section])
        if key not in types:
            errors.append(ParseError(no, f"unknown key {key!r} in [{section}]"))
            continue
        if key in values[section]:
            errors.append(ParseError(no, f"duplicate key {key!r} in [{section}]"))
            continue
        try:
            values[section][key] = _convert(types[key], val.replace("−", "-"))
            lines[f"{section}.{key}"] = no
        except (ValueError, ZeroDivisionError) as exc:
            errors.append(ParseError(no, f"{section}.{key}: {exc}"))

    dim = values["geometry"].get("dim", GeometrySection.dim)
    if dim == 1:
        # 1D defaults
        for key, v in (("inclusion_lower", (0.25,)), ("inclusion_upper", (0.75,)),
                       ("domain_lower", (0.0,)), ("domain_upper", (1.0,))):
            values["geometry"].setdefault(key, v)
    cfg = ToolkitConfig(**{name: cls(**values[name]) for name, cls in _SECTIONS.items()})
    # record the section line for grouped constraints
    for sec, keys in (("geometry", ("inclusion_lower", "inclusion_upper")),
                      ("geometry", ("domain_lower", "domain_upper"))):
        for k in keys:
            if f"{sec}.{k}" in lines:
                grp = "geometry.inclusion" if "inclusion" in k else "geometry.domain"
                lines.setdefault(grp, lines[f"{sec}.{k}"])
    errors.extend(_validate(cfg, lines))
    if errors:
        raise ConfigErrors(errors)
    return cfg


def parse_config(path):
    """Read and validate a configuration file."""
    with open(path) as fh:
        return parse_config_text(fh.read())


def _render(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return "[" + ", ".join(repr(float(x)) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg):
    """Text form that parses back to an equal configuration."""
    out = []
    for name in _SECTIONS:
        out.append(f"[{name}]")
        sec = getattr(cfg, name)
        for f in fields(sec):
            out.append(f"{f.name} = {_render(getattr(sec, f.name))}")
        out.append("")
    return "\n".join(out)


def config_to_dict(cfg):
    return {name: asdict(getattr(cfg, name)) for name in _SECTIONS}


def config_hash(cfg):
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]


def with_overrides(cfg, **sections):
    """Copy of ``cfg`` with fields replaced, e.g. ``study={"h_cell": 1/8}``."""
    return replace(cfg, **{k: replace(getattr(cfg, k), **v) for k, v in sections.items()})
