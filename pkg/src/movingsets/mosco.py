"""Set-convergence experiments: perturbed constraint sequences, recovery
traces, and mesh-refinement studies for the constrained solution map.

The central object is a sequence of constraint sets on one mesh whose
bounds drift toward a limit set.  Studies solve the VI against each
member, compare with the limit solve, and summarize trends.  Weak-limit
admissibility cannot be observed directly at this scale; its surrogate
is "the finest computed solution is admissible for the limit set", and
every study records that flag rather than asserting silently.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import assembly, constraints, vi
from .assembly import DiscreteOperator, LoadFunctional
from .constraints import (ConstraintSet, GradientBound, MidpointObstacle,
                          NodalObstacle, RecoveryStep, RecoveryTrace,
                          Unbounded, gradient_bound, midpoint_obstacle,
                          nodal_obstacle, unbounded)
from .errors import ConvergenceError, PreconditionError, SolverError
from .mesh import (Mesh, NodalVector, build_interval_mesh,
                   build_triangle_mesh, prolongation_matrix)

__all__ = [
    "SetSequence",
    "obstacle_sequence",
    "midpoint_sequence",
    "gradient_sequence",
    "MoscoRecord",
    "MoscoReport",
    "mosco_study",
    "recovery_study",
    "ContinuumProblem",
    "fem_constraint_study",
    "DEFAULT_DELTAS",
]

# Default drift schedule: clean dyadic decay over ten steps.
DEFAULT_DELTAS = tuple(2.0 ** (-n) for n in range(1, 11))


@dataclass(frozen=True, eq=False)
class SetSequence:
    """A drifting family of constraint sets with a designated limit.

    ``make(n)`` builds the n-th set (1-based); all sets share the limit
    set's mesh.  ``deltas`` is the drift schedule: nonnegative,
    nonincreasing, and decayed by at least 4x over the horizon unless
    identically zero (a constant sequence).
    """

    limit: ConstraintSet
    deltas: tuple
    make: Callable[[int], ConstraintSet]
    label: str = ""

    def __post_init__(self):
        d = tuple(float(x) for x in self.deltas)
        if not d:
            raise PreconditionError("drift schedule is empty")
        if any(not math.isfinite(x) or x < 0.0 for x in d):
            raise PreconditionError("drift schedule must be finite and >= 0")
        if any(b > a for a, b in zip(d, d[1:])):
            raise PreconditionError("drift schedule must be nonincreasing")
        if d[0] > 0.0 and d[-1] > d[0] / 4.0:
            raise PreconditionError(
                "drift schedule must decay by at least 4x over the horizon")
        object.__setattr__(self, "deltas", d)

    def __len__(self) -> int:
        return len(self.deltas)

    def set_at(self, n: int) -> ConstraintSet:
        if not (1 <= n <= len(self.deltas)):
            raise IndexError(f"sequence step {n} out of range")
        K = self.make(n)
        constraints.require_same_mesh(
            constraints.mesh_of(K), constraints.mesh_of(self.limit),
            "sequence member and limit set")
        return K


def _direction_array(direction, size: int) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(direction, dtype=float), (size,)).copy()
    if not np.all(np.isfinite(arr)):
        raise PreconditionError("drift direction must be finite")
    return arr


def obstacle_sequence(K: NodalObstacle, direction=1.0,
                      deltas: Sequence[float] = DEFAULT_DELTAS,
                      label: str = "") -> SetSequence:
    """Nodal obstacle drift phi_n = phi + delta_n * g."""
    mesh = K.mesh
    g = _direction_array(direction, mesh.n_nodes)
    base = K.phi.values

    def make(n: int) -> ConstraintSet:
        return nodal_obstacle(mesh, base + deltas[n - 1] * g,
                              psi_abs=K.psi_abs, nu=K.nu)

    return SetSequence(limit=K, deltas=tuple(deltas), make=make,
                       label=label or "nodal drift")


def midpoint_sequence(K: MidpointObstacle, direction=1.0,
                      deltas: Sequence[float] = DEFAULT_DELTAS,
                      label: str = "") -> SetSequence:
    """Element-midpoint bound drift."""
    mesh = K.mesh
    g = _direction_array(direction, mesh.n_elems)
    base = K.values

    def make(n: int) -> ConstraintSet:
        return midpoint_obstacle(mesh, base + deltas[n - 1] * g,
                                 psi_abs=K.psi_abs, nu=K.nu)

    return SetSequence(limit=K, deltas=tuple(deltas), make=make,
                       label=label or "midpoint drift")


def gradient_sequence(K: GradientBound, direction=1.0,
                      deltas: Sequence[float] = DEFAULT_DELTAS,
                      label: str = "") -> SetSequence:
    """Gradient-bound drift alpha_n = alpha + delta_n * g."""
    mesh = K.mesh
    g = _direction_array(direction, mesh.n_elems)
    base = K.alpha

    def make(n: int) -> ConstraintSet:
        return gradient_bound(mesh, base + deltas[n - 1] * g,
                              p=K.p, nu=K.nu)

    return SetSequence(limit=K, deltas=tuple(deltas), make=make,
                       label=label or "gradient drift")


# ---------------------------------------------------------------------------
# bound geometry helpers

def _bound_array(K: ConstraintSet) -> Optional[np.ndarray]:
    if isinstance(K, NodalObstacle):
        return K.phi.values
    if isinstance(K, MidpointObstacle):
        return K.values
    if isinstance(K, GradientBound):
        return K.alpha
    return None


def bound_sup_distance(K1: ConstraintSet, K2: ConstraintSet) -> float:
    """Sup distance between the bound data of two same-family sets."""
    a, b = _bound_array(K1), _bound_array(K2)
    if a is None or b is None:
        return 0.0
    if type(K1) is not type(K2) or a.shape != b.shape:
        raise PreconditionError("sets are not comparable members of a family")
    return assembly.sup_norm(a - b)


def bound_l1_distance(K1: ConstraintSet, K2: ConstraintSet) -> float:
    """Discrete L1 distance between bound data (lumped / element-size)."""
    a, b = _bound_array(K1), _bound_array(K2)
    if a is None or b is None:
        return 0.0
    if type(K1) is not type(K2) or a.shape != b.shape:
        raise PreconditionError("sets are not comparable members of a family")
    mesh = constraints.mesh_of(K1)
    if isinstance(K1, NodalObstacle):
        w = assembly.lumped_mass_weights(mesh)
    else:
        w = mesh.element_sizes
    return float(np.sum(w * np.abs(a - b)))


# ---------------------------------------------------------------------------
# study records

@dataclass(frozen=True, eq=False)
class MoscoRecord:
    n: int
    delta: float
    err_sup: float
    err_l2: float
    err_energy: float
    violation_own: float
    violation_limit: float
    iterations: int
    residual: float
    ok: bool
    note: str = ""


@dataclass(eq=False)
class MoscoReport:
    """Summary of a perturbed-set (or refinement) solve series.

    ``condition_ii_ok`` is the admissibility surrogate: True/False when
    the bound drift vanished in discrete L1 and the finest solution was
    checked against the limit set; None when the gate never triggered.
    """

    kind: str
    records: list
    limit_solution: NodalVector
    limit_iterations: int
    limit_residual: float
    slope: float
    convergence_ok: bool
    condition_ii_ok: Optional[bool]

    @property
    def passed(self) -> bool:
        return self.convergence_ok and self.condition_ii_ok is not False


def _fit_slope(deltas, errors) -> float:
    xs = [math.log(d) for d, e in zip(deltas, errors)
          if d > 0 and e > 0 and math.isfinite(e)]
    ys = [math.log(e) for d, e in zip(deltas, errors)
          if d > 0 and e > 0 and math.isfinite(e)]
    if len(xs) < 2 or max(xs) == min(xs):
        return math.nan
    return float(np.polyfit(xs, ys, 1)[0])


def _map_maybe_parallel(fn, args, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, args))
    return [fn(a) for a in args]


def mosco_study(op: DiscreteOperator, load: LoadFunctional,
                seq: SetSequence,
                loads: Optional[Sequence[LoadFunctional]] = None,
                tol: float = 1e-10, method: Optional[str] = None,
                workers: int = 1) -> MoscoReport:
    """Solve against every set in the sequence and compare to the limit.

    ``loads`` optionally perturbs the right-hand side per step (the
    simultaneous data-and-set drift); ``load`` is always the limit
    problem's functional.  Per-step solver failures are recorded and
    the study continues.
    """
    if loads is not None and len(loads) != len(seq):
        raise PreconditionError("need one load per sequence step")
    limit_sol = vi.solve_vi(op, load, seq.limit, method=method, tol=tol)
    y = limit_sol.y.values

    def run(n: int):
        K_n = seq.set_at(n)
        f_n = loads[n - 1] if loads is not None else load
        delta = bound_sup_distance(K_n, seq.limit)
        l1 = bound_l1_distance(K_n, seq.limit)
        try:
            sol = vi.solve_vi(op, f_n, K_n, method=method, tol=tol)
        except (ConvergenceError, SolverError) as exc:
            rec = MoscoRecord(n=n, delta=delta, err_sup=math.nan,
                              err_l2=math.nan, err_energy=math.nan,
                              violation_own=math.nan,
                              violation_limit=math.nan,
                              iterations=0, residual=math.nan,
                              ok=False, note=str(exc))
            return rec, l1, None
        e = sol.y.values - y
        rec = MoscoRecord(
            n=n, delta=delta,
            err_sup=assembly.sup_norm(e),
            err_l2=assembly.l2_norm(op.mesh, e),
            err_energy=assembly.energy_norm(op, e),
            violation_own=constraints.violation(sol.y, K_n),
            violation_limit=constraints.violation(sol.y, seq.limit),
            iterations=sol.iterations, residual=sol.residual, ok=True)
        return rec, l1, sol.y

    results = _map_maybe_parallel(run, range(1, len(seq) + 1), workers)
    records = [r[0] for r in results]
    good = [r for r in records if r.ok]
    if good:
        e1, eL = good[0].err_sup, good[-1].err_sup
        floor = 1e-9 * (1.0 + assembly.sup_norm(y))
        convergence_ok = (e1 <= floor and eL <= floor) or eL <= e1 / 10.0
    else:
        convergence_ok = False
    # Admissibility surrogate: when the bound drift vanishes in
    # discrete L1, the finest solution may exceed the limit set only by
    # the drift still left at the horizon (exactly 1e-6 in the limit).
    l1s = [r[1] for r in results]
    finest = results[-1]
    gate = l1s[-1] <= max(l1s[0] / 2.0, 1e-12)
    condition_ii_ok: Optional[bool] = None
    if gate and finest[2] is not None:
        residual_drift = finest[0].delta
        condition_ii_ok = bool(
            constraints.violation(finest[2], seq.limit)
            <= 1e-6 + residual_drift)
    slope = _fit_slope([r.delta for r in good], [r.err_sup for r in good])
    return MoscoReport(kind="set drift" if not seq.label else seq.label,
                       records=records,
                       limit_solution=limit_sol.y,
                       limit_iterations=limit_sol.iterations,
                       limit_residual=limit_sol.residual,
                       slope=slope, convergence_ok=convergence_ok,
                       condition_ii_ok=condition_ii_ok)


# ---------------------------------------------------------------------------
# recovery traces

def _strong_norm(mesh: Mesh, values: np.ndarray) -> float:
    """Discrete full H1 norm: sqrt(|v|_H1^2 + ||v||_L2^2)."""
    return math.hypot(assembly.h1_seminorm(mesh, values),
                      assembly.l2_norm(mesh, values))


def recovery_study(w: NodalVector, seq: SetSequence, construction: str,
                   Q: Optional[DiscreteOperator] = None) -> RecoveryTrace:
    """Trace one recovery construction along the whole sequence.

    ``construction`` is "scale", "truncate", or "singular_perturbation"
    (the last needs the auxiliary coercive M-matrix operator ``Q``).
    Per-step construction failures are recorded as infeasible steps;
    the trace keeps going so the report shows where things broke.
    """
    if construction not in ("scale", "truncate", "singular_perturbation"):
        raise ValueError(f"unknown construction {construction!r}")
    limit = seq.limit
    mesh = constraints.mesh_of(limit)
    if constraints.violation(w, limit) > constraints.FEASIBILITY_TOL:
        raise PreconditionError(
            "recovery target must be admissible for the limit set")
    mass = None
    if construction == "singular_perturbation":
        if Q is None:
            raise PreconditionError(
                "singular perturbation needs the auxiliary operator Q")
        if not isinstance(limit, NodalObstacle) or limit.psi_abs:
            raise PreconditionError(
                "singular perturbation applies to one-sided nodal obstacles")
        mass = assembly.assemble_mass(mesh, lumped=True)

    steps = []
    for n in range(1, len(seq) + 1):
        K_n = seq.set_at(n)
        shift = bound_sup_distance(K_n, limit)
        try:
            if construction == "scale":
                nu = getattr(limit, "nu", 0.0)
                w_n = constraints.scale_recovery(
                    w, _bound_array(limit), _bound_array(K_n), nu)
            elif construction == "truncate":
                w_n = constraints.truncation_recovery(w, shift)
            else:
                phi_n = K_n.phi
                w_n = constraints.singular_perturbation_recovery(
                    w, phi_n, Q, mass)
        except (PreconditionError, SolverError):
            steps.append(RecoveryStep(n=n, delta=seq.deltas[n - 1],
                                      distance=math.inf,
                                      violation=math.inf, feasible=False))
            continue
        viol = constraints.violation(w_n, K_n)
        steps.append(RecoveryStep(
            n=n, delta=seq.deltas[n - 1],
            distance=_strong_norm(mesh, w_n.values - w.values),
            violation=viol,
            feasible=viol <= constraints.FEASIBILITY_TOL))
    return RecoveryTrace(construction=construction, steps=steps)


# ---------------------------------------------------------------------------
# mesh refinement studies

@dataclass(frozen=True, eq=False)
class ContinuumProblem:
    """Problem data given as fields on the domain, not on a mesh.

    ``load`` and ``bound`` are scalars or callables of the coordinates;
    ``bound`` feeds whichever constraint family the study requests.
    """

    dim: int = 1
    span: tuple = (0.0, 1.0)
    yspan: tuple = (0.0, 1.0)
    diffusion: float = 1.0
    advection: Optional[tuple] = None
    reaction: float = 0.0
    load: Union[float, Callable] = 1.0
    bound: Union[float, Callable] = 1.0
    p: float = 2.0
    psi_abs: bool = False
    nu: float = 0.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise PreconditionError("dim must be 1 or 2")

    def build_mesh(self, n: int) -> Mesh:
        if self.dim == 1:
            return build_interval_mesh(n, *self.span)
        return build_triangle_mesh(n, n, self.span, self.yspan)

    def _eval(self, field, points) -> np.ndarray:
        if callable(field):
            return np.array([field(*p) for p in np.atleast_2d(points)])
        return np.full(len(np.atleast_2d(points)), float(field))

    def operator(self, mesh: Mesh) -> DiscreteOperator:
        return assembly.assemble_operator(
            mesh, diffusion=self.diffusion, advection=self.advection,
            reaction=self.reaction)

    def load_on(self, mesh: Mesh) -> LoadFunctional:
        return assembly.assemble_load(mesh, self.load)

    def constraint_on(self, mesh: Mesh, kind: str) -> ConstraintSet:
        if kind == "none":
            return unbounded(mesh)
        if kind == "nodal":
            vals = self._eval(self.bound, mesh.nodes)
            return nodal_obstacle(mesh, vals, psi_abs=self.psi_abs,
                                  nu=self.nu)
        if kind == "midpoint":
            vals = self._eval(self.bound, mesh.midpoints)
            return midpoint_obstacle(mesh, vals, psi_abs=self.psi_abs,
                                     nu=self.nu)
        if kind == "gradient":
            vals = self._eval(self.bound, mesh.midpoints)
            if np.min(vals) <= 0.0:
                raise PreconditionError(
                    "gradient bound must be positive at every sample point")
            return gradient_bound(mesh, vals, p=self.p, nu=self.nu)
        raise ValueError(f"unknown constraint kind {kind!r}")


def fem_constraint_study(problem: ContinuumProblem, constraint: str,
                         levels: Sequence[int], tol: float = 1e-10,
                         method: Optional[str] = None,
                         workers: int = 1) -> MoscoReport:
    """Refinement study: one VI per mesh level, errors vs a finer reference.

    ``levels`` must be strictly increasing with each count dividing the
    next (a nested hierarchy); the reference runs one dyadic level past
    the finest entry.
    """
    levels = [int(n) for n in levels]
    if len(levels) < 2:
        raise PreconditionError("need at least two refinement levels")
    for a, b in zip(levels, levels[1:]):
        if not (b > a and b % a == 0):
            raise PreconditionError(
                "hierarchy not nested: each level must divide the next")
    ref_n = 2 * levels[-1]

    def solve_level(n: int):
        mesh = problem.build_mesh(n)
        op = problem.operator(mesh)
        f = problem.load_on(mesh)
        K = problem.constraint_on(mesh, constraint)
        sol = vi.solve_vi(op, f, K, method=method, tol=tol)
        return mesh, op, K, sol

    results = _map_maybe_parallel(solve_level, levels + [ref_n], workers)
    ref_mesh, ref_op, ref_K, ref_sol = results[-1]
    y_ref = ref_sol.y.values

    records = []
    for n, (mesh, op, K, sol) in zip(levels, results[:-1]):
        P = prolongation_matrix(mesh, ref_mesh)
        lifted = P @ sol.y.values
        e = lifted - y_ref
        records.append(MoscoRecord(
            n=n, delta=mesh.h,
            err_sup=assembly.sup_norm(e),
            err_l2=assembly.l2_norm(ref_mesh, e),
            err_energy=assembly.energy_norm(ref_op, e),
            violation_own=constraints.violation(sol.y, K),
            violation_limit=constraints.violation(
                NodalVector(lifted, ref_mesh), ref_K),
            iterations=sol.iterations, residual=sol.residual, ok=True))
    errs = [r.err_sup for r in records]
    convergence_ok = all(b < a for a, b in zip(errs, errs[1:]))
    slope = _fit_slope([r.delta for r in records], errs)
    return MoscoReport(kind=f"refinement/{constraint}", records=records,
                       limit_solution=ref_sol.y,
                       limit_iterations=ref_sol.iterations,
                       limit_residual=ref_sol.residual,
                       slope=slope, convergence_ok=convergence_ok,
                       condition_ii_ok=None)
