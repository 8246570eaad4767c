"""Symbolic scalar fields for configs: constants, polynomials, tables.

Three spec forms cover every bundled study without an expression
engine:

* a bare number, or ``{"kind": "constant", "value": v}``;
* ``{"kind": "poly", "terms": [[c, px], ...]}`` for sums of
  c * x^px (1D) or ``[[c, px, py], ...]`` for c * x^px * y^py (2D);
* ``{"kind": "table", "values": [...]}`` with one value per node (or
  per element when the consumer samples midpoints).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import assembly
from .assembly import LoadFunctional
from .errors import ConfigError
from .mesh import Mesh

__all__ = ["Constant", "Polynomial", "Table", "FieldSpec", "parse_field",
           "nodal_values", "element_values", "load_functional"]


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True, eq=False)
class Polynomial:
    terms: tuple  # ((coeff, px) or (coeff, px, py), ...)

    def __call__(self, x, y=None):
        out = 0.0
        for term in self.terms:
            if len(term) == 2:
                c, px = term
                out += c * x ** px
            else:
                c, px, py = term
                out += c * x ** px * (y if y is not None else 0.0) ** py
        return out


@dataclass(frozen=True, eq=False)
class Table:
    values: np.ndarray


FieldSpec = Union[Constant, Polynomial, Table]


def parse_field(obj, where: str = "field") -> FieldSpec:
    """Parse a config fragment into a field spec; loud on bad shapes."""
    if isinstance(obj, (int, float)) and not isinstance(obj, bool):
        return Constant(float(obj))
    if not isinstance(obj, dict):
        raise ConfigError([f"{where}: expected a number or an object, "
                           f"got {type(obj).__name__}"])
    kind = obj.get("kind")
    if kind == "constant":
        if set(obj) != {"kind", "value"}:
            raise ConfigError([f"{where}: constant takes exactly 'value'"])
        v = obj["value"]
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError([f"{where}: constant value must be a number"])
        return Constant(float(v))
    if kind == "poly":
        if set(obj) != {"kind", "terms"}:
            raise ConfigError([f"{where}: poly takes exactly 'terms'"])
        terms = obj["terms"]
        if not isinstance(terms, list) or not terms:
            raise ConfigError([f"{where}: poly terms must be a nonempty list"])
        parsed = []
        for t in terms:
            if (not isinstance(t, list) or len(t) not in (2, 3)
                    or not all(isinstance(u, (int, float))
                               and not isinstance(u, bool) for u in t)):
                raise ConfigError(
                    [f"{where}: each poly term is [coeff, px] or "
                     f"[coeff, px, py]"])
            parsed.append(tuple(float(u) for u in t))
        return Polynomial(tuple(parsed))
    if kind == "table":
        if set(obj) != {"kind", "values"}:
            raise ConfigError([f"{where}: table takes exactly 'values'"])
        vals = obj["values"]
        if (not isinstance(vals, list) or not vals
                or not all(isinstance(u, (int, float))
                           and not isinstance(u, bool) for u in vals)):
            raise ConfigError([f"{where}: table values must be a nonempty "
                               f"list of numbers"])
        arr = np.asarray(vals, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ConfigError([f"{where}: table values must be finite"])
        return Table(arr)
    raise ConfigError([f"{where}: unknown field kind {kind!r} "
                       f"(use constant, poly, or table)"])


def _table_sized(field: Table, size: int, what: str) -> np.ndarray:
    if field.values.shape != (size,):
        raise ConfigError([f"{what}: table has {field.values.size} values, "
                           f"need {size}"])
    return field.values.copy()


def nodal_values(field: FieldSpec, mesh: Mesh) -> np.ndarray:
    """Field sampled at mesh nodes (tables must be node-sized)."""
    if isinstance(field, Constant):
        return np.full(mesh.n_nodes, field.value)
    if isinstance(field, Table):
        return _table_sized(field, mesh.n_nodes, "nodal field")
    return np.array([field(*p) for p in mesh.nodes])


def element_values(field: FieldSpec, mesh: Mesh) -> np.ndarray:
    """Field sampled at element midpoints (tables: per-element or nodal)."""
    if isinstance(field, Constant):
        return np.full(mesh.n_elems, field.value)
    if isinstance(field, Table):
        if field.values.shape == (mesh.n_elems,):
            return field.values.copy()
        vals = _table_sized(field, mesh.n_nodes, "element field")
        return np.mean(vals[mesh.elements], axis=1)
    return np.array([field(*p) for p in mesh.midpoints])


def load_functional(field: FieldSpec, mesh: Mesh) -> LoadFunctional:
    """Midpoint-rule load functional of the field."""
    if isinstance(field, Constant):
        return assembly.assemble_load(mesh, field.value)
    if isinstance(field, Table):
        mid = element_values(field, mesh)
        contrib = mesh.element_sizes * mid / (mesh.dim + 1)
        vals = np.zeros(mesh.n_nodes)
        np.add.at(vals, mesh.elements.ravel(),
                  np.repeat(contrib, mesh.dim + 1))
        return LoadFunctional(vals[mesh.free_nodes], mesh)
    return assembly.assemble_load(mesh, field)
