"""Config-driven experiment runner.

Commands:

* ``run <config.json> [--dry-run] [--out DIR] [--plot]``
* ``list``
* ``describe <kind>``

Configs are JSON objects; every key is schema-checked before any
computation and unknown keys are rejected with field-level messages.
Results land in one CSV per run (fixed column set, metadata as '#'
comments) plus an optional log-log SVG plot.  Exit codes: 0 all flags
pass, 1 a convergence flag failed, 2 config problem, 3 solver failure.
The ``MOVINGSETS_THREADS`` environment variable caps worker threads
for studies with independent schedule entries.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, assembly, constraints, fields, mosco, qvi
from . import regularization as reg
from . import report as report_mod
from . import vi
from .errors import (ConfigError, ConvergenceError, MovingSetsError,
                     PreconditionError, SolverError)
from .mesh import (Mesh, NodalVector, build_interval_mesh,
                   build_triangle_mesh, interpolate_nodal, read_mesh_file)
from .report import StudyRecord, StudyReport

__all__ = ["main", "run", "list_studies", "describe", "load_config"]

STUDY_KINDS = ("vi", "qvi", "mosco", "recovery", "gamma", "fem",
               "stability", "impulse")

_STUDY_BLURBS = {
    "vi": "obstacle VI on a mesh hierarchy; both solvers cross-checked",
    "qvi": "implicit-obstacle QVI; minimal/maximal gap per mesh level",
    "mosco": "drifting constraint sets; solution errors vs the limit",
    "recovery": "feasible-approximant constructions along a set drift",
    "gamma": "penalty/damping schedules; minimizers vs the constrained one",
    "fem": "mesh refinement of a constrained continuum problem",
    "stability": "extremal QVI solutions under vanishing load drift",
    "impulse": "1D impulse QVI; complementarity checks per level",
}


# ---------------------------------------------------------------------------
# schema validation (messages carry dotted paths; nothing is built here)

def _bad(path, msg):
    return [f"{path}: {msg}"]


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_num(v, path, lo=None, lo_strict=None):
    if not _is_num(v):
        return _bad(path, "must be a number")
    if lo is not None and v < lo:
        return _bad(path, f"must be >= {lo:g}")
    if lo_strict is not None and v <= lo_strict:
        return _bad(path, f"must be > {lo_strict:g}")
    return []


def _check_int(v, path, lo=1):
    if not isinstance(v, int) or isinstance(v, bool) or v < lo:
        return _bad(path, f"must be an integer >= {lo}")
    return []


def _check_pair(v, path):
    if (not isinstance(v, list) or len(v) != 2
            or not all(_is_num(u) for u in v) or not v[0] < v[1]):
        return _bad(path, "must be [a, b] with a < b")
    return []


def _check_keys(obj, path, required, optional):
    if not isinstance(obj, dict):
        return _bad(path, "must be an object")
    errs = []
    for k in required:
        if k not in obj:
            errs += _bad(f"{path}.{k}" if path else k, "is required")
    for k in obj:
        if k not in required and k not in optional:
            errs += _bad(f"{path}.{k}" if path else k,
                         f"unknown key (allowed: "
                         f"{', '.join(sorted(required | optional))})")
    return errs


def _check_field(v, path):
    try:
        fields.parse_field(v, where=path)
    except ConfigError as e:
        return list(e.messages)
    return []


def _check_mesh(v, path):
    if not isinstance(v, dict):
        return _bad(path, "must be an object")
    kind = v.get("kind")
    if kind == "interval":
        errs = _check_keys(v, path, {"kind", "n"}, {"span"})
        if "n" in v:
            errs += _check_int(v["n"], f"{path}.n")
        if "span" in v:
            errs += _check_pair(v["span"], f"{path}.span")
        return errs
    if kind == "rectangle":
        errs = _check_keys(v, path, {"kind", "nx", "ny"},
                           {"xspan", "yspan"})
        for k in ("nx", "ny"):
            if k in v:
                errs += _check_int(v[k], f"{path}.{k}")
        for k in ("xspan", "yspan"):
            if k in v:
                errs += _check_pair(v[k], f"{path}.{k}")
        return errs
    if kind == "file":
        errs = _check_keys(v, path, {"kind", "path"}, set())
        if "path" in v and not isinstance(v["path"], str):
            errs += _bad(f"{path}.path", "must be a string")
        return errs
    return _bad(f"{path}.kind",
                "must be one of interval, rectangle, file")


def _check_operator(v, path):
    errs = _check_keys(v, path, set(),
                       {"diffusion", "advection", "reaction"})
    if errs:
        return errs
    if "diffusion" in v:
        errs += _check_num(v["diffusion"], f"{path}.diffusion", lo_strict=0.0)
    if "reaction" in v:
        errs += _check_num(v["reaction"], f"{path}.reaction", lo=0.0)
    if "advection" in v:
        a = v["advection"]
        if (not isinstance(a, list) or not 1 <= len(a) <= 2
                or not all(_is_num(u) for u in a)):
            errs += _bad(f"{path}.advection",
                         "must be a list of 1 or 2 numbers")
    return errs


def _check_constraint(v, path):
    if not isinstance(v, dict):
        return _bad(path, "must be an object")
    kind = v.get("kind")
    if kind == "none":
        return _check_keys(v, path, {"kind"}, set())
    if kind not in ("nodal", "midpoint", "gradient"):
        return _bad(f"{path}.kind",
                    "must be one of nodal, midpoint, gradient, none")
    allowed = {"psi_abs", "nu"} if kind != "gradient" else {"p", "nu"}
    errs = _check_keys(v, path, {"kind", "bound"}, allowed)
    if "bound" in v:
        errs += _check_field(v["bound"], f"{path}.bound")
    if "nu" in v:
        errs += _check_num(v["nu"], f"{path}.nu", lo=0.0)
    if "p" in v:
        errs += _check_num(v["p"], f"{path}.p", lo_strict=0.0)
    if "psi_abs" in v and not isinstance(v["psi_abs"], bool):
        errs += _bad(f"{path}.psi_abs", "must be true or false")
    return errs


def _check_map(v, path, impulse_only=False):
    if not isinstance(v, dict):
        return _bad(path, "must be an object")
    kind = v.get("kind")
    if impulse_only and kind != "impulse":
        return _bad(f"{path}.kind", "must be impulse for this study")
    if kind == "superposition":
        errs = _check_keys(v, path, {"kind", "floor"}, {"c", "p"})
        if "floor" in v:
            errs += _check_num(v["floor"], f"{path}.floor", lo_strict=0.0)
        if "c" in v:
            errs += _check_num(v["c"], f"{path}.c", lo=0.0)
        if "p" in v:
            errs += _check_num(v["p"], f"{path}.p", lo_strict=0.0)
        return errs
    if kind == "impulse":
        errs = _check_keys(v, path, {"kind", "k0"},
                           {"c_lin", "boundary_value"})
        if "k0" in v:
            errs += _check_num(v["k0"], f"{path}.k0", lo_strict=0.0)
        if "c_lin" in v:
            errs += _check_num(v["c_lin"], f"{path}.c_lin", lo=0.0)
        if "boundary_value" in v:
            errs += _check_num(v["boundary_value"], f"{path}.boundary_value")
        return errs
    if kind == "compliant":
        errs = _check_keys(v, path,
                           {"kind", "g1", "g2", "cap", "l0", "l1",
                            "aux_load"},
                           {"aux_operator", "floor"})
        for k in ("g1", "g2", "cap", "l1"):
            if k in v:
                errs += _check_num(v[k], f"{path}.{k}")
        if "l0" in v:
            errs += _check_num(v["l0"], f"{path}.l0", lo_strict=0.0)
        if "floor" in v:
            errs += _check_num(v["floor"], f"{path}.floor", lo_strict=0.0)
        if "aux_load" in v:
            errs += _check_field(v["aux_load"], f"{path}.aux_load")
        if "aux_operator" in v:
            errs += _check_operator(v["aux_operator"], f"{path}.aux_operator")
        return errs
    return _bad(f"{path}.kind",
                "must be one of superposition, impulse, compliant")


def _check_schedule(v, path, positive=True):
    if isinstance(v, list):
        if not v or not all(_is_num(u) for u in v):
            return _bad(path, "must be a nonempty list of numbers")
        if positive and any(u < 0 for u in v):
            return _bad(path, "entries must be >= 0")
        return []
    if not isinstance(v, dict):
        return _bad(path, "must be a list or a schedule object")
    kind = v.get("kind")
    if kind == "dyadic":
        errs = _check_keys(v, path, {"kind", "count"}, {"scale"})
        if "count" in v:
            errs += _check_int(v["count"], f"{path}.count")
        if "scale" in v:
            errs += _check_num(v["scale"], f"{path}.scale", lo_strict=0.0)
        return errs
    if kind == "harmonic":
        errs = _check_keys(v, path, {"kind", "count"}, {"scale"})
        if "count" in v:
            errs += _check_int(v["count"], f"{path}.count")
        if "scale" in v:
            errs += _check_num(v["scale"], f"{path}.scale", lo_strict=0.0)
        return errs
    if kind == "geometric":
        errs = _check_keys(v, path, {"kind", "count", "start"}, {"factor"})
        if "count" in v:
            errs += _check_int(v["count"], f"{path}.count")
        if "start" in v:
            errs += _check_num(v["start"], f"{path}.start", lo_strict=0.0)
        if "factor" in v:
            errs += _check_num(v["factor"], f"{path}.factor", lo_strict=1.0)
        return errs
    return _bad(f"{path}.kind",
                "must be one of dyadic, harmonic, geometric")


def _check_drift(v, path):
    errs = _check_keys(v, path, {"deltas"}, {"direction"})
    if errs:
        return errs
    errs += _check_schedule(v["deltas"], f"{path}.deltas")
    if "direction" in v:
        errs += _check_field(v["direction"], f"{path}.direction")
    return errs


def _check_levels(v, path):
    if (not isinstance(v, list) or len(v) < 1
            or not all(isinstance(u, int) and not isinstance(u, bool)
                       and u >= 1 for u in v)):
        return _bad(path, "must be a list of positive integers")
    if any(b <= a for a, b in zip(v, v[1:])):
        return _bad(path, "must be strictly increasing")
    return []


def _check_scheme(v, path):
    if not isinstance(v, dict):
        return _bad(path, "must be an object")
    kind = v.get("kind")
    specs = {
        "tikhonov": ({"kind", "gamma_prime"}, set()),
        "moreau_yosida": ({"kind", "gamma"}, set()),
        "tikhonov_my": ({"kind", "gamma", "gamma_prime"}, set()),
        "galerkin_my": ({"kind", "gamma", "spaces"}, set()),
    }
    if kind not in specs:
        return _bad(f"{path}.kind",
                    "must be one of tikhonov, moreau_yosida, tikhonov_my, "
                    "galerkin_my")
    req, opt = specs[kind]
    errs = _check_keys(v, path, req, opt)
    for k in ("gamma", "gamma_prime"):
        if k in v:
            errs += _check_schedule(v[k], f"{path}.{k}")
    if "spaces" in v:
        errs += _check_levels(v["spaces"], f"{path}.spaces")
    return errs


_SHARED_OPT = {"name": "short label used for output file names",
               "seed": "RNG seed for sampled hypothesis checks (default 0)",
               "tol": "solver tolerance (default 1e-10; 1e-8 for QVI kinds)"}

# kind -> {key: (required, help text)}
SCHEMAS = {
    "vi": {
        "levels": (True, "mesh hierarchy, strictly increasing cell counts"),
        "load": (True, "field spec for the right-hand side"),
        "constraint": (True, "constraint-set spec (kind nodal/midpoint/"
                             "gradient/none + bound field)"),
        "dim": (False, "1 (default) or 2"),
        "span": (False, "[a, b] interval / x-extent (default [0, 1])"),
        "yspan": (False, "[a, b] y-extent for dim 2"),
        "operator": (False, "diffusion/advection/reaction coefficients"),
        "agreement_tol": (False, "cross-method agreement gate "
                                 "(default 1e-8)"),
    },
    "fem": {
        "levels": (True, "nested hierarchy: each count divides the next"),
        "load": (True, "field spec for the right-hand side"),
        "constraint": (True, "constraint-set spec"),
        "dim": (False, "1 (default) or 2"),
        "span": (False, "[a, b] (default [0, 1])"),
        "yspan": (False, "[a, b] y-extent for dim 2"),
        "operator": (False, "coefficient spec"),
    },
    "mosco": {
        "mesh": (True, "mesh spec (interval/rectangle/file)"),
        "load": (True, "field spec for the limit right-hand side"),
        "constraint": (True, "limit constraint-set spec"),
        "drift": (True, "bound drift: {deltas, direction?}"),
        "load_drift": (False, "simultaneous load drift "
                              "{deltas, direction?}"),
        "operator": (False, "coefficient spec"),
    },
    "recovery": {
        "mesh": (True, "mesh spec"),
        "constraint": (True, "limit constraint-set spec"),
        "drift": (True, "bound drift: {deltas, direction?}"),
        "construction": (True, "scale | truncate | singular_perturbation"),
        "target": (True, "\"solve\" (VI solution) or a field spec"),
        "load": (False, "needed when target is \"solve\""),
        "operator": (False, "coefficient spec (also the auxiliary Q)"),
    },
    "gamma": {
        "mesh": (True, "mesh spec"),
        "load": (True, "field spec"),
        "constraint": (True, "constraint-set spec"),
        "scheme": (True, "perturbation scheme spec (kind + schedules)"),
        "operator": (False, "coefficient spec"),
    },
    "qvi": {
        "levels": (True, "mesh hierarchy"),
        "load": (True, "field spec (nonnegative)"),
        "map": (True, "obstacle-map spec (superposition/impulse/compliant)"),
        "dim": (False, "1 (default) or 2"),
        "span": (False, "[a, b]"),
        "yspan": (False, "[a, b] for dim 2"),
        "operator": (False, "coefficient spec"),
    },
    "stability": {
        "mesh": (True, "mesh spec"),
        "load": (True, "limit load field (must stay above the floor)"),
        "map": (True, "obstacle-map spec"),
        "epsilons": (True, "nonincreasing drift schedule"),
        "floor": (True, "positive lower bound c for every load"),
        "operator": (False, "coefficient spec"),
    },
    "impulse": {
        "levels": (True, "1D mesh hierarchy"),
        "load": (True, "field spec (nonnegative)"),
        "map": (True, "impulse map spec ({kind: impulse, k0, ...})"),
        "span": (False, "[a, b] (default [0, 1])"),
        "operator": (False, "coefficient spec"),
    },
}


def validate_config(cfg) -> list:
    """All schema violations as dotted-path messages (empty = valid)."""
    if not isinstance(cfg, dict):
        return ["config: top level must be an object"]
    kind = cfg.get("study")
    if kind not in STUDY_KINDS:
        return [f"study: must be one of {', '.join(STUDY_KINDS)}"]
    schema = SCHEMAS[kind]
    required = {k for k, (req, _) in schema.items() if req}
    optional = {k for k, (req, _) in schema.items() if not req}
    optional |= set(_SHARED_OPT) | {"study"}
    errs = _check_keys(cfg, "", required, optional)
    if errs:
        return errs
    if "name" in cfg and not isinstance(cfg["name"], str):
        errs += _bad("name", "must be a string")
    if "seed" in cfg:
        errs += _check_int(cfg["seed"], "seed", lo=0)
    if "tol" in cfg:
        errs += _check_num(cfg["tol"], "tol", lo_strict=0.0)
    checkers = {
        "mesh": _check_mesh,
        "operator": _check_operator,
        "load": _check_field,
        "constraint": _check_constraint,
        "drift": _check_drift,
        "load_drift": _check_drift,
        "levels": _check_levels,
        "scheme": _check_scheme,
        "epsilons": _check_schedule,
    }
    for key, checker in checkers.items():
        if key in cfg and key in schema:
            errs += checker(cfg[key], key)
    if "map" in cfg:
        errs += _check_map(cfg["map"], "map",
                           impulse_only=(kind == "impulse"))
    if "dim" in cfg and cfg["dim"] not in (1, 2):
        errs += _bad("dim", "must be 1 or 2")
    for k in ("span", "yspan"):
        if k in cfg:
            errs += _check_pair(cfg[k], k)
    if "agreement_tol" in cfg:
        errs += _check_num(cfg["agreement_tol"], "agreement_tol",
                           lo_strict=0.0)
    if "floor" in cfg:
        errs += _check_num(cfg["floor"], "floor", lo_strict=0.0)
    if "construction" in cfg and cfg["construction"] not in (
            "scale", "truncate", "singular_perturbation"):
        errs += _bad("construction", "must be scale, truncate, or "
                                     "singular_perturbation")
    if "target" in cfg and cfg["target"] != "solve":
        errs += _check_field(cfg["target"], "target")
    if kind == "recovery" and cfg.get("target") == "solve" \
            and "load" not in cfg:
        errs += _bad("load", "is required when target is \"solve\"")
    return errs


def load_config(path) -> dict:
    """Read and validate a config file; raises ConfigError on problems."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError([f"config: cannot read {path}: {e}"])
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"config: invalid JSON: {e}"])
    errs = validate_config(cfg)
    if errs:
        raise ConfigError(errs)
    return cfg


# ---------------------------------------------------------------------------
# builders (validated config fragments -> domain objects)

def build_mesh(spec) -> Mesh:
    if spec["kind"] == "interval":
        span = spec.get("span", [0.0, 1.0])
        return build_interval_mesh(spec["n"], span[0], span[1])
    if spec["kind"] == "rectangle":
        return build_triangle_mesh(spec["nx"], spec["ny"],
                                   tuple(spec.get("xspan", [0.0, 1.0])),
                                   tuple(spec.get("yspan", [0.0, 1.0])))
    try:
        return read_mesh_file(spec["path"])
    except (OSError, ValueError) as e:
        raise ConfigError([f"mesh.path: {e}"])


def build_operator(spec, mesh: Mesh):
    spec = spec or {}
    adv = spec.get("advection")
    if adv is not None:
        if len(adv) != mesh.dim:
            raise ConfigError([f"operator.advection: needs {mesh.dim} "
                               f"components for a {mesh.dim}D mesh"])
        adv = tuple(float(a) for a in adv)
    return assembly.assemble_operator(
        mesh, diffusion=float(spec.get("diffusion", 1.0)),
        advection=adv, reaction=float(spec.get("reaction", 0.0)),
        description="configured operator")


def build_constraint(spec, mesh: Mesh):
    kind = spec["kind"]
    if kind == "none":
        return constraints.unbounded(mesh)
    bound = fields.parse_field(spec["bound"], where="constraint.bound")
    nu = float(spec.get("nu", 0.0))
    if kind == "nodal":
        return constraints.nodal_obstacle(
            mesh, fields.nodal_values(bound, mesh),
            psi_abs=bool(spec.get("psi_abs", False)), nu=nu)
    if kind == "midpoint":
        return constraints.midpoint_obstacle(
            mesh, fields.element_values(bound, mesh),
            psi_abs=bool(spec.get("psi_abs", False)), nu=nu)
    return constraints.gradient_bound(
        mesh, fields.element_values(bound, mesh),
        p=float(spec.get("p", 2.0)), nu=nu)


def build_map(spec, mesh: Mesh):
    kind = spec["kind"]
    if kind == "superposition":
        return qvi.Superposition(floor=float(spec["floor"]),
                                 c=float(spec.get("c", 0.0)),
                                 p=float(spec.get("p", 1.0)))
    if kind == "impulse":
        return qvi.Impulse(k0=float(spec["k0"]),
                           c_lin=float(spec.get("c_lin", 0.0)),
                           boundary_value=float(
                               spec.get("boundary_value", 0.0)))
    aux_op = build_operator(spec.get("aux_operator"), mesh)
    aux_field = fields.parse_field(spec["aux_load"], where="map.aux_load")
    return qvi.Compliant(B=aux_op,
                         g=fields.load_functional(aux_field, mesh),
                         g1=float(spec["g1"]), g2=float(spec["g2"]),
                         cap=float(spec["cap"]), l0=float(spec["l0"]),
                         l1=float(spec["l1"]),
                         floor=spec.get("floor"))


def build_schedule(spec) -> tuple:
    if isinstance(spec, list):
        return tuple(float(v) for v in spec)
    if spec["kind"] == "dyadic":
        s = float(spec.get("scale", 1.0))
        return tuple(s * 2.0 ** (-k) for k in range(1, spec["count"] + 1))
    if spec["kind"] == "harmonic":
        s = float(spec.get("scale", 1.0))
        return tuple(s / k for k in range(1, spec["count"] + 1))
    start = float(spec["start"])
    factor = float(spec.get("factor", 2.0))
    return tuple(start * factor ** k for k in range(spec["count"]))


def _build_problem(cfg) -> mosco.ContinuumProblem:
    op = cfg.get("operator", {})
    load_field = fields.parse_field(cfg["load"], where="load")
    if isinstance(load_field, fields.Table):
        raise ConfigError(["load: table fields need a fixed mesh; use a "
                           "constant or poly for level studies"])
    cons = cfg["constraint"]
    bound_field = None
    if cons["kind"] != "none":
        bound_field = fields.parse_field(cons["bound"],
                                         where="constraint.bound")
        if isinstance(bound_field, fields.Table):
            raise ConfigError(["constraint.bound: table fields need a "
                               "fixed mesh; use a constant or poly"])

    def as_callable(f):
        if isinstance(f, fields.Constant):
            return f.value
        return f

    adv = op.get("advection")
    return mosco.ContinuumProblem(
        dim=int(cfg.get("dim", 1)),
        span=tuple(cfg.get("span", [0.0, 1.0])),
        yspan=tuple(cfg.get("yspan", [0.0, 1.0])),
        diffusion=float(op.get("diffusion", 1.0)),
        advection=tuple(adv) if adv is not None else None,
        reaction=float(op.get("reaction", 0.0)),
        load=as_callable(load_field),
        bound=as_callable(bound_field) if bound_field is not None else 1.0,
        p=float(cons.get("p", 2.0)),
        psi_abs=bool(cons.get("psi_abs", False)),
        nu=float(cons.get("nu", 0.0)))


def _workers() -> int:
    raw = os.environ.get("MOVINGSETS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        print(f"warning: ignoring MOVINGSETS_THREADS={raw!r}",
              file=sys.stderr)
        return 1


def _build_sequence(cfg, mesh: Mesh, limit) -> mosco.SetSequence:
    drift = cfg["drift"]
    deltas = build_schedule(drift["deltas"])
    direction = fields.parse_field(drift.get("direction", 1.0),
                                   where="drift.direction")
    if isinstance(limit, constraints.NodalObstacle):
        return mosco.obstacle_sequence(
            limit, fields.nodal_values(direction, mesh), deltas)
    if isinstance(limit, constraints.MidpointObstacle):
        return mosco.midpoint_sequence(
            limit, fields.element_values(direction, mesh), deltas)
    if isinstance(limit, constraints.GradientBound):
        return mosco.gradient_sequence(
            limit, fields.element_values(direction, mesh), deltas)
    raise ConfigError(["constraint.kind: a drifting study needs a bounded "
                       "constraint set (nodal, midpoint, or gradient)"])


# ---------------------------------------------------------------------------
# study runners (each returns a StudyReport and a plot hint)

def _run_vi(cfg):
    tol = float(cfg.get("tol", 1e-10))
    agree_tol = float(cfg.get("agreement_tol", 1e-8))
    problem = _build_problem(cfg)
    records = []
    all_ok = True
    for n in cfg["levels"]:
        mesh = problem.build_mesh(n)
        op = problem.operator(mesh)
        f = problem.load_on(mesh)
        K = problem.constraint_on(mesh, cfg["constraint"]["kind"])
        sol = vi.solve_vi(op, f, K, tol=tol)
        nodal = isinstance(K, constraints.NodalObstacle)
        if nodal and op.symmetric:
            other = vi.solve_obstacle_vi(op, f, K, method="relaxation",
                                         tol=tol)
            diff = sol.y.values - other.y.values
            agree = assembly.sup_norm(diff)
            rec = StudyRecord(
                study="vi", n=n, h=mesh.h,
                err_sup=agree,
                err_l2=assembly.l2_norm(mesh, diff),
                err_energy=assembly.energy_norm(op, diff),
                violation=max(constraints.violation(sol.y, K),
                              constraints.violation(other.y, K)),
                iterations=sol.iterations + other.iterations,
                residual=max(sol.residual, other.residual),
                flag=agree <= agree_tol)
        else:
            # penalty-path solves satisfy the bound to O(1/gamma_max),
            # not to nodal feasibility tolerance
            excess = constraints.violation(sol.y, K)
            rec = StudyRecord(
                study="vi", n=n, h=mesh.h,
                violation=excess,
                iterations=sol.iterations, residual=sol.residual,
                flag=sol.converged and excess <= 1e-6)
        all_ok = all_ok and bool(rec.flag)
        records.append(rec)
    rep = StudyReport(study="vi", records=records,
                      metadata={"study": "vi",
                                "agreement_tol": f"{agree_tol:g}"},
                      passed=all_ok)
    return rep, ("h", "err_sup")


def _run_fem(cfg):
    problem = _build_problem(cfg)
    mrep = mosco.fem_constraint_study(problem, cfg["constraint"]["kind"],
                                      cfg["levels"],
                                      tol=float(cfg.get("tol", 1e-10)),
                                      workers=_workers())
    records = [StudyRecord(study="fem", n=r.n, h=r.delta,
                           err_sup=r.err_sup, err_l2=r.err_l2,
                           err_energy=r.err_energy,
                           violation=r.violation_own,
                           iterations=r.iterations, residual=r.residual,
                           flag=r.ok)
               for r in mrep.records]
    rep = StudyReport(study="fem", records=records,
                      metadata={"study": "fem",
                                "slope_vs_h": f"{mrep.slope:.6g}",
                                "errors_decreasing":
                                    str(mrep.convergence_ok)},
                      passed=mrep.passed)
    return rep, ("h", "err_sup")


def _run_mosco(cfg):
    mesh = build_mesh(cfg["mesh"])
    op = build_operator(cfg.get("operator"), mesh)
    load_field = fields.parse_field(cfg["load"], where="load")
    load = fields.load_functional(load_field, mesh)
    limit = build_constraint(cfg["constraint"], mesh)
    seq = _build_sequence(cfg, mesh, limit)
    loads = None
    if "load_drift" in cfg:
        ld = cfg["load_drift"]
        ds = build_schedule(ld["deltas"])
        if len(ds) != len(seq):
            raise ConfigError(["load_drift.deltas: length must match "
                               "drift.deltas"])
        gfield = fields.parse_field(ld.get("direction", 1.0),
                                    where="load_drift.direction")
        g = fields.load_functional(gfield, mesh)
        loads = [load.replace(load.values + d * g.values) for d in ds]
    mrep = mosco.mosco_study(op, load, seq, loads=loads,
                             tol=float(cfg.get("tol", 1e-10)),
                             workers=_workers())
    records = [StudyRecord(study="mosco", n=r.n, h=mesh.h, delta=r.delta,
                           err_sup=r.err_sup, err_l2=r.err_l2,
                           err_energy=r.err_energy,
                           violation=r.violation_own,
                           iterations=r.iterations,
                           residual=r.residual, flag=r.ok)
               for r in mrep.records]
    rep = StudyReport(
        study="mosco", records=records,
        metadata={"study": "mosco",
                  "slope_vs_delta": f"{mrep.slope:.6g}",
                  "errors_converged": str(mrep.convergence_ok),
                  "limit_admissibility":
                      str(mrep.condition_ii_ok)},
        passed=mrep.passed)
    return rep, ("delta", "err_sup")


def _run_recovery(cfg):
    mesh = build_mesh(cfg["mesh"])
    op = build_operator(cfg.get("operator"), mesh)
    limit = build_constraint(cfg["constraint"], mesh)
    seq = _build_sequence(cfg, mesh, limit)
    if cfg["target"] == "solve":
        load_field = fields.parse_field(cfg["load"], where="load")
        load = fields.load_functional(load_field, mesh)
        w = vi.solve_vi(op, load, limit).y
    else:
        tfield = fields.parse_field(cfg["target"], where="target")
        w = NodalVector(fields.nodal_values(tfield, mesh), mesh)
    trace = mosco.recovery_study(w, seq, cfg["construction"], Q=op)
    records = [StudyRecord(study="recovery", n=s.n, h=mesh.h,
                           delta=s.delta, err_energy=s.distance,
                           violation=s.violation, flag=s.feasible)
               for s in trace.steps]
    rep = StudyReport(
        study="recovery", records=records,
        metadata={"study": "recovery",
                  "construction": trace.construction,
                  "initial_distance": f"{trace.initial_distance:.12g}",
                  "final_distance": f"{trace.final_distance:.12g}"},
        passed=trace.passed)
    return rep, ("delta", "err_energy")


def _run_gamma(cfg):
    mesh = build_mesh(cfg["mesh"])
    op = build_operator(cfg.get("operator"), mesh)
    load_field = fields.parse_field(cfg["load"], where="load")
    load = fields.load_functional(load_field, mesh)
    K = build_constraint(cfg["constraint"], mesh)
    spec = cfg["scheme"]
    kind = spec["kind"]
    if kind == "tikhonov":
        scheme = reg.Tikhonov(build_schedule(spec["gamma_prime"]))
    elif kind == "moreau_yosida":
        scheme = reg.MoreauYosida(build_schedule(spec["gamma"]))
    elif kind == "tikhonov_my":
        scheme = reg.TikhonovMY(build_schedule(spec["gamma"]),
                                build_schedule(spec["gamma_prime"]))
    else:
        if cfg["mesh"]["kind"] == "file":
            raise ConfigError(["scheme.spaces: coarse spaces need a "
                               "generated mesh (interval or rectangle)"])
        spaces = []
        for n in spec["spaces"]:
            sub = dict(cfg["mesh"])
            if sub["kind"] == "interval":
                sub["n"] = n
            else:
                sub["nx"] = sub["ny"] = n
            spaces.append(build_mesh(sub))
        scheme = reg.GalerkinMY(build_schedule(spec["gamma"]),
                                tuple(spaces))
    grep = reg.gamma_study(op, load, K, scheme,
                           tol=float(cfg.get("tol", 1e-10)))
    records = [StudyRecord(
        study="gamma", n=r.n, h=mesh.h,
        gamma=r.gamma if r.gamma is not None else r.gamma_prime,
        err_sup=r.err_sup, err_l2=r.err_l2, err_energy=r.err_energy,
        violation=r.violation,
        residual=r.objective - grep.reference_energy,
        flag=None) for r in grep.records]
    rep = StudyReport(
        study="gamma", records=records,
        metadata={"study": "gamma", "scheme": grep.scheme,
                  "reference_energy": f"{grep.reference_energy:.12g}",
                  "distances_converged": str(grep.converged)},
        passed=grep.converged)
    return rep, ("gamma", "err_sup")


def _qvi_level_records(cfg, study: str, extra_flag=None):
    tol = float(cfg.get("tol", 1e-8))
    records = []
    span = tuple(cfg.get("span", [0.0, 1.0]))
    for n in cfg["levels"]:
        if cfg.get("dim", 1) == 2 and study == "qvi":
            mesh = build_triangle_mesh(n, n, span,
                                       tuple(cfg.get("yspan", [0.0, 1.0])))
        else:
            mesh = build_interval_mesh(n, *span)
        op = build_operator(cfg.get("operator"), mesh)
        load_field = fields.parse_field(cfg["load"], where="load")
        load = fields.load_functional(load_field, mesh)
        m = build_map(cfg["map"], mesh)
        lo = qvi.minimal_solution(op, load, m, tol=tol)
        hi = qvi.maximal_solution(op, load, m, tol=tol)
        gap = lo.y.values - hi.y.values
        excess = float(np.max(np.maximum(
            lo.y.values - lo.obstacle.values, 0.0)))
        flag = (lo.converged and hi.converged and lo.within_interval
                and hi.within_interval
                and bool(np.all(gap <= 1e-7 * (1.0 + hi.y.sup_norm()))))
        if extra_flag is not None:
            flag = flag and extra_flag(lo)
        records.append(StudyRecord(
            study=study, n=n, h=mesh.h,
            err_sup=assembly.sup_norm(gap),
            err_l2=assembly.l2_norm(mesh, gap),
            err_energy=assembly.energy_norm(op, gap),
            violation=excess,
            iterations=lo.iterations + hi.iterations,
            residual=max(lo.vi_residual, hi.vi_residual),
            flag=flag))
    return records


def _run_qvi(cfg):
    records = _qvi_level_records(cfg, "qvi")
    rep = StudyReport(study="qvi", records=records,
                      metadata={"study": "qvi",
                                "map_kind": cfg["map"]["kind"]},
                      passed=all(bool(r.flag) for r in records))
    return rep, ("h", "err_sup")


def _run_impulse(cfg):
    def complementarity_ok(sol):
        return sol.vi_residual <= 1e-6 and bool(
            np.all(sol.y.values <= sol.obstacle.values + 1e-8))

    records = _qvi_level_records(cfg, "impulse",
                                 extra_flag=complementarity_ok)
    rep = StudyReport(study="impulse", records=records,
                      metadata={"study": "impulse",
                                "k0": f"{cfg['map']['k0']:g}"},
                      passed=all(bool(r.flag) for r in records))
    return rep, ("h", "residual")


def _run_stability(cfg):
    mesh = build_mesh(cfg["mesh"])
    op = build_operator(cfg.get("operator"), mesh)
    load_field = fields.parse_field(cfg["load"], where="load")
    load = fields.load_functional(load_field, mesh)
    m = build_map(cfg["map"], mesh)
    rep = qvi.stability_study(op, m, load, build_schedule(cfg["epsilons"]),
                              floor_c=float(cfg["floor"]),
                              tol=float(cfg.get("tol", 1e-8)),
                              seed=int(cfg.get("seed", 0)))
    return rep, ("delta", "err_sup")


_RUNNERS = {
    "vi": _run_vi, "fem": _run_fem, "mosco": _run_mosco,
    "recovery": _run_recovery, "gamma": _run_gamma, "qvi": _run_qvi,
    "stability": _run_stability, "impulse": _run_impulse,
}


# ---------------------------------------------------------------------------
# artifacts

def _plot(rep: StudyReport, hint, path: Path) -> Optional[Path]:
    xcol, ycol = hint
    xs, ys = [], []
    for r in rep.records:
        x, y = getattr(r, xcol), getattr(r, ycol)
        if x is not None and y is not None and x > 0 and y > 0 \
                and math.isfinite(x) and math.isfinite(y):
            xs.append(x)
            ys.append(y)
    if len(xs) < 2:
        return None
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.loglog(xs, ys, "o-", lw=1.2)
    ax.set_xlabel(xcol)
    ax.set_ylabel(ycol)
    ax.set_title(f"{rep.study} study")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _config_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def run(config_path, out_dir=None, dry_run: bool = False,
        plot: bool = False) -> int:
    """Execute one study config; returns the process exit code."""
    try:
        cfg = load_config(config_path)
    except ConfigError as e:
        for msg in e.messages:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    name = cfg.get("name") or Path(config_path).stem
    out = Path(out_dir) if out_dir else Path.cwd()
    csv_path = out / f"{name}.csv"
    plot_path = out / f"{name}.svg"
    if dry_run:
        print(f"study:   {cfg['study']}")
        print(f"config:  {config_path} (hash {_config_hash(config_path)})")
        print(f"csv:     {csv_path}")
        if plot:
            print(f"plot:    {plot_path}")
        print("dry run: validated, nothing executed or written")
        return 0
    t0 = time.perf_counter()
    try:
        rep, hint = _RUNNERS[cfg["study"]](cfg)
    except ConfigError as e:
        for msg in e.messages:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    except (PreconditionError, SolverError, ConvergenceError,
            NotImplementedError) as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return 3
    wall = time.perf_counter() - t0
    meta = {"config": str(config_path),
            "config_hash": _config_hash(config_path),
            "package_version": __version__,
            "wall_time_s": f"{wall:.3f}",
            "seed": str(cfg.get("seed", 0))}
    rep.write(csv_path, extra_metadata=meta)
    print(f"wrote {csv_path} ({len(rep.records)} rows)")
    if plot:
        made = _plot(rep, hint, plot_path)
        if made is not None:
            print(f"wrote {made}")
        else:
            print("plot skipped: no positive (x, y) pairs to draw")
    if not rep.passed:
        print("study flags failed; see the CSV flag column and metadata",
              file=sys.stderr)
        return 1
    return 0


def list_studies() -> str:
    lines = ["available studies:"]
    for kind in STUDY_KINDS:
        lines.append(f"  {kind:<10} {_STUDY_BLURBS[kind]}")
    return "\n".join(lines)


def describe(kind: str) -> str:
    if kind not in STUDY_KINDS:
        raise ConfigError([f"unknown study {kind!r}; valid kinds: "
                           f"{', '.join(STUDY_KINDS)}"])
    schema = SCHEMAS[kind]
    lines = [f"study \"{kind}\": {_STUDY_BLURBS[kind]}", "",
             "required keys:"]
    for key, (req, help_text) in sorted(schema.items()):
        if req:
            lines.append(f"  {key:<14} {help_text}")
    lines.append("optional keys:")
    for key, (req, help_text) in sorted(schema.items()):
        if not req:
            lines.append(f"  {key:<14} {help_text}")
    for key, help_text in _SHARED_OPT.items():
        lines.append(f"  {key:<14} {help_text}")
    lines.append("")
    lines.append("shared sub-specs: mesh {kind: interval|rectangle|file},")
    lines.append("fields (number | {kind: constant|poly|table}), schedules")
    lines.append("(list | {kind: dyadic|harmonic|geometric}).")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="movingsets",
        description="constrained-problem studies with moving sets")
    sub = parser.add_subparsers(dest="command")
    p_run = sub.add_parser("run", help="execute a study config")
    p_run.add_argument("config", help="path to a JSON study config")
    p_run.add_argument("--dry-run", action="store_true",
                       help="validate and print the plan, write nothing")
    p_run.add_argument("--out", default=None, metavar="DIR",
                       help="output directory (default: cwd)")
    p_run.add_argument("--plot", action="store_true",
                       help="also write a log-log SVG plot")
    sub.add_parser("list", help="list available study kinds")
    p_desc = sub.add_parser("describe", help="show a study kind's schema")
    p_desc.add_argument("kind")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config, out_dir=args.out, dry_run=args.dry_run,
                   plot=args.plot)
    if args.command == "list":
        print(list_studies())
        return 0
    if args.command == "describe":
        try:
            print(describe(args.kind))
        except ConfigError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        return 0
    parser.print_help()
    return 2


if __name__ == "__main__":
    sys.exit(main())
