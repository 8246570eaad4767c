"""Quasi-variational inequalities: implicit obstacles and ordered fixed
points.

The constraint set depends on the unknown through an obstacle map; a
solution is a fixed point of v -> solution_map(f, {w <= map(v)}).  With
an M-matrix operator, a nonnegative load, and an increasing map, the
plain iteration started from zero (respectively from the unconstrained
solve of the dominating load) produces a nodewise monotone history and
lands on the minimal (maximal) fixed point between those brackets.
Monotonicity is enforced, not assumed: any violation aborts the run,
because it signals a broken map or solver rather than a modeling
choice.

Three obstacle-map families are provided:

* ``Superposition``  map(v) = floor + c * (v^+)^(1/p), nodewise;
* ``Compliant``      map(v) = l0 + l1 * z(v) where z solves an
  auxiliary discrete equation coupled to v through a capped source;
* ``Impulse``        1D intervention obstacle: cheapest jump-right
  cost min over nodes x_j >= x_i of v(x_j) + k0 + c_lin (x_j - x_i),
  with v continued past the last node by a fixed boundary value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from . import assembly, constraints, report, vi
from .assembly import DiscreteOperator, LoadFunctional
from .constraints import nodal_obstacle
from .errors import ConvergenceError, PreconditionError, SolverError
from .mesh import NodalVector, require_same_mesh

__all__ = [
    "Superposition",
    "Compliant",
    "Impulse",
    "ObstacleMap",
    "evaluate_obstacle",
    "map_floor",
    "check_increasing",
    "check_scaling_condition",
    "QVISolution",
    "qvi_fixed_point",
    "minimal_solution",
    "maximal_solution",
    "stability_study",
]


@dataclass(frozen=True, eq=False)
class Superposition:
    """map(v) = floor + c * (v^+)^(1/p) nodewise.

    p >= 1 keeps the map sublinear, which the stability theory's
    scaling hypothesis needs; p in (0, 1) is accepted so that the
    hypothesis checker has something real to reject.
    """

    floor: float
    c: float = 0.0
    p: float = 1.0

    def __post_init__(self):
        if not (self.floor > 0.0):
            raise PreconditionError("obstacle map floor must be positive")
        if self.c < 0.0:
            raise PreconditionError("superposition gain c must be >= 0")
        if not (self.p > 0.0):
            raise PreconditionError("superposition exponent p must be > 0")


@dataclass(frozen=True, eq=False)
class Compliant:
    """Obstacle from an auxiliary state: map(v) = l0 + l1 * z(v).

    z solves (B + g1*l1*M) z = g - g1*l0*m + g2*M*min(v, cap) over the
    free nodes, M the lumped mass.  This realizes the coupled rule
    "B z + g1*(affine obstacle) - g2*min(v, cap) = g" in weak form.
    Hypotheses that make the map increasing and floored (g1, g2, l1
    >= 0, B an M-matrix, z >= 0) are verified when evaluating, so a
    misconfigured instance fails loudly with the hypothesis named.
    """

    B: DiscreteOperator
    g: LoadFunctional
    g1: float
    g2: float
    cap: float
    l0: float
    l1: float
    floor: Optional[float] = None

    def __post_init__(self):
        require_same_mesh(self.B.mesh, self.g.mesh, "auxiliary operator/load")
        if not (self.l0 > 0.0):
            raise PreconditionError("compliant offset l0 must be positive")
        if not math.isfinite(self.cap):
            raise PreconditionError("compliant source cap must be finite")
        if self.floor is None:
            object.__setattr__(self, "floor", self.l0)
        if not (0.0 < self.floor <= self.l0):
            raise PreconditionError(
                "compliant floor must satisfy 0 < floor <= l0")


@dataclass(frozen=True, eq=False)
class Impulse:
    """1D intervention obstacle with fixed cost plus linear shift cost.

    Ties between shift candidates break toward the smallest shift
    (taking the running minimum scans left-to-right in shift size).
    """

    k0: float
    c_lin: float = 0.0
    boundary_value: float = 0.0

    def __post_init__(self):
        if not (self.k0 > 0.0):
            raise PreconditionError("intervention cost k0 must be positive")
        if self.c_lin < 0.0:
            raise PreconditionError("per-size cost c_lin must be >= 0")


ObstacleMap = Union[Superposition, Compliant, Impulse]


def map_floor(m: ObstacleMap) -> float:
    """Configured lower bound of the map's range (k0 for impulse)."""
    if isinstance(m, Impulse):
        return m.k0
    return m.floor


def evaluate_obstacle(m: ObstacleMap, v: NodalVector) -> NodalVector:
    """Obstacle generated by v; a full nodal vector on v's mesh."""
    mesh = v.mesh
    if isinstance(m, Superposition):
        out = m.floor + m.c * np.maximum(v.values, 0.0) ** (1.0 / m.p)
        return NodalVector(out, mesh)
    if isinstance(m, Compliant):
        require_same_mesh(mesh, m.B.mesh, "state and auxiliary operator")
        if m.g1 < 0.0 or m.g2 < 0.0 or m.l1 < 0.0:
            raise PreconditionError(
                "compliant map hypothesis violated: increasing coupling "
                "needs g1 >= 0, g2 >= 0, l1 >= 0 "
                f"(got g1={m.g1:g}, g2={m.g2:g}, l1={m.l1:g})")
        if not m.B.is_m_matrix:
            raise PreconditionError(
                "compliant map hypothesis violated: the auxiliary operator "
                "must be an M-matrix for the comparison principle")
        free = mesh.free_nodes
        mw = assembly.lumped_mass_weights(mesh)[free]
        mat = (m.B.matrix + sp.diags(m.g1 * m.l1 * mw)).tocsr()
        aux_op = DiscreteOperator(
            matrix=mat, mesh=mesh, symmetric=m.B.symmetric,
            is_m_matrix=assembly.check_m_matrix(mat),
            coercivity_estimate=m.B.coercivity_estimate,
            description="compliant auxiliary system")
        rhs = m.g.values - m.g1 * m.l0 * mw \
            + m.g2 * mw * np.minimum(v.values[free], m.cap)
        z = assembly.solve_linear(aux_op, LoadFunctional(rhs, mesh))
        scale = 1.0 + assembly.sup_norm(z.values)
        if np.min(z.values) < -1e-10 * scale:
            raise PreconditionError(
                "compliant map hypothesis violated: auxiliary state went "
                f"negative (min z = {np.min(z.values):.3e}), so the "
                "obstacle would drop below its floor")
        return NodalVector(m.l0 + m.l1 * z.values, mesh)
    # Impulse
    if mesh.dim != 1:
        raise PreconditionError("impulse obstacle is one-dimensional")
    x = mesh.nodes[:, 0]
    if not np.all(np.diff(x) > 0):
        raise PreconditionError("impulse obstacle needs sorted 1D nodes")
    cand = v.values + m.c_lin * x
    suffix = np.minimum.accumulate(cand[::-1])[::-1]
    virtual = m.boundary_value + m.c_lin * x[-1]
    out = m.k0 + np.minimum(suffix, virtual) - m.c_lin * x
    return NodalVector(out, mesh)


def check_increasing(m: ObstacleMap, lo: NodalVector, hi: NodalVector,
                     trials: int = 20, seed: int = 0,
                     tol: float = 1e-10) -> bool:
    """Sampled monotonicity: v <= w nodewise implies map(v) <= map(w)."""
    require_same_mesh(lo.mesh, hi.mesh, "sampling bounds")
    rng = np.random.default_rng(seed)
    a = np.minimum(lo.values, hi.values)
    b = np.maximum(lo.values, hi.values)
    n = lo.mesh.n_nodes
    for _ in range(trials):
        v = a + rng.random(n) * (b - a)
        w = v + rng.random(n) * (b - v)
        pv = evaluate_obstacle(m, NodalVector(v, lo.mesh)).values
        pw = evaluate_obstacle(m, NodalVector(w, lo.mesh)).values
        if np.any(pv > pw + tol * (1.0 + np.abs(pw))):
            return False
    return True


def check_scaling_condition(m: ObstacleMap, samples: Sequence[NodalVector],
                            lambdas: Sequence[float] = (1.1, 2.0, 10.0),
                            tol: float = 1e-9) -> bool:
    """Sampled check of lam * map(v) >= map(lam * v) for lam > 1."""
    for v in samples:
        pv = evaluate_obstacle(m, v).values
        for lam in lambdas:
            if lam <= 1.0:
                raise PreconditionError("scaling factors must exceed 1")
            scaled = evaluate_obstacle(m, v.replace(lam * v.values)).values
            if np.any(lam * pv < scaled - tol * (1.0 + np.abs(scaled))):
                return False
    return True


# ---------------------------------------------------------------------------
# the ordered fixed-point iteration

@dataclass(eq=False)
class QVISolution:
    """Fixed-point record.

    ``kind`` is "minimal", "maximal", or "plain" (custom start).
    ``history`` contains every iterate including the start.
    ``vi_residual`` is the complementarity residual of y against the
    obstacle it generates.
    """

    y: NodalVector
    kind: str
    history: list
    iterations: int
    increments: list
    fixed_point_residual: float
    vi_residual: float
    obstacle: NodalVector
    converged: bool = True
    within_interval: bool = True
    info: dict = field(default_factory=dict)


def _check_load_bounds(load: LoadFunctional, f_max: LoadFunctional) -> None:
    scale = 1.0 + assembly.sup_norm(f_max.values)
    if np.min(load.values) < -1e-12 * scale:
        raise PreconditionError(
            f"load must be nonnegative (min entry {np.min(load.values):.3e})")
    if np.any(load.values > f_max.values + 1e-12 * scale):
        raise PreconditionError("load exceeds the configured dominating load")


def qvi_fixed_point(op: DiscreteOperator, load: LoadFunctional,
                    m: ObstacleMap, start="sub",
                    f_max: Optional[LoadFunctional] = None,
                    tol: float = 1e-8, max_iter: int = 200,
                    inner_tol: Optional[float] = None,
                    method: Optional[str] = None) -> QVISolution:
    """Iterate y -> solution_map(load, {w <= map(y)}) to a fixed point.

    ``start`` is "sub" (zero, minimal kind), "super" (unconstrained
    solve of ``f_max``, maximal kind), or a NodalVector (plain kind,
    no monotonicity enforcement).  Stops when the sup increment falls
    below ``tol`` and the fixed-point residual below 10*tol.
    """
    mesh = op.mesh
    require_same_mesh(mesh, load.mesh, "operator and load")
    if not op.is_m_matrix:
        raise PreconditionError(
            "the ordered iteration needs an M-matrix operator "
            "(comparison principle)")
    f_max = load if f_max is None else f_max
    _check_load_bounds(load, f_max)
    upper = assembly.solve_linear(op, f_max)

    direction = 0
    if isinstance(start, NodalVector):
        y = start
        kind = "plain"
    elif start == "sub":
        y = NodalVector(np.zeros(mesh.n_nodes), mesh)
        kind, direction = "minimal", +1
    elif start == "super":
        y = upper
        kind, direction = "maximal", -1
    else:
        raise ValueError(f"unknown start {start!r}")
    inner = inner_tol if inner_tol is not None else max(tol * 1e-2, 1e-13)

    def step(v: NodalVector):
        phi = evaluate_obstacle(m, v)
        K = nodal_obstacle(mesh, phi.values)
        sol = vi.solve_vi(op, load, K, method=method, tol=inner)
        return sol.y, phi

    history = [y]
    increments = []
    within = _inside_interval(y, upper)
    fp_residual = math.inf
    y_next, phi = step(y)
    iterations = 1
    while True:
        inc = assembly.sup_norm(y_next.values - y.values)
        increments.append(inc)
        _enforce_monotone(direction, y, y_next)
        within = within and _inside_interval(y_next, upper)
        history.append(y_next)
        y = y_next
        if inc <= tol:
            y_probe, phi = step(y)
            iterations += 1
            fp_residual = assembly.sup_norm(y_probe.values - y.values)
            if fp_residual <= 10.0 * tol:
                break
            y_next = y_probe
        else:
            if iterations >= max_iter:
                raise ConvergenceError(
                    "fixed-point iteration did not converge",
                    residual=inc, iterations=iterations)
            y_next, phi = step(y)
            iterations += 1

    obstacle = evaluate_obstacle(m, y)
    K_final = nodal_obstacle(mesh, obstacle.values)
    vi_res = vi.complementarity_residual(y, op, load, K_final,
                                         feasibility_tol=1e-6)
    return QVISolution(y=y, kind=kind, history=history,
                       iterations=iterations, increments=increments,
                       fixed_point_residual=fp_residual,
                       vi_residual=vi_res, obstacle=obstacle,
                       converged=True, within_interval=within,
                       info={"inner_tol": inner})


def _inside_interval(y: NodalVector, upper: NodalVector) -> bool:
    slack = 1e-9 * (1.0 + upper.sup_norm())
    return bool(np.all(y.values >= -slack)
                and np.all(y.values <= upper.values + slack))


def _enforce_monotone(direction: int, prev: NodalVector,
                      new: NodalVector) -> None:
    if direction == 0:
        return
    slack = 1e-9 * (1.0 + prev.sup_norm())
    drift = (new.values - prev.values) * direction
    worst = float(np.min(drift))
    if worst < -slack:
        raise SolverError(
            "fixed-point history lost monotonicity "
            f"(worst step {worst:.3e} against direction "
            f"{'up' if direction > 0 else 'down'}); the obstacle map is "
            "not increasing or the inner solver failed")


def minimal_solution(op: DiscreteOperator, load: LoadFunctional,
                     m: ObstacleMap, **kwargs) -> QVISolution:
    """Smallest fixed point bracketed by [0, unconstrained dominating solve]."""
    return qvi_fixed_point(op, load, m, start="sub", **kwargs)


def maximal_solution(op: DiscreteOperator, load: LoadFunctional,
                     m: ObstacleMap,
                     f_max: Optional[LoadFunctional] = None,
                     **kwargs) -> QVISolution:
    """Largest fixed point, found from the dominating unconstrained solve."""
    return qvi_fixed_point(op, load, m, start="super", f_max=f_max, **kwargs)


# ---------------------------------------------------------------------------
# stability of the extremal solution maps

def _scaling_samples(upper: NodalVector, count: int = 5,
                     seed: int = 0) -> list:
    mesh = upper.mesh
    rng = np.random.default_rng(seed)
    samples = [upper.replace(t * upper.values) for t in (0.25, 0.6, 1.0)]
    for _ in range(count):
        samples.append(upper.replace(rng.random(mesh.n_nodes)
                                     * upper.values))
    return samples


def stability_study(op: DiscreteOperator, m: ObstacleMap,
                    f_star: LoadFunctional,
                    epsilons: Sequence[float],
                    floor_c: float,
                    tol: float = 1e-8,
                    seed: int = 0) -> report.StudyReport:
    """Convergence of the extremal solutions under load drift.

    Loads are f_n = f_star + eps_n * (functional of the constant 1).
    Every f_n, and f_star itself, must stay above the positive floor
    ``floor_c`` as a field; that hypothesis aborts when violated.  The
    scaling hypothesis of the map is checked on sampled vectors and
    only flagged: a failing map still produces records (the negative
    control), but the study cannot pass.

    CSV row semantics: err_* columns track the minimal solutions; the
    ``residual`` column carries the maximal-solution sup error.
    """
    mesh = op.mesh
    require_same_mesh(mesh, f_star.mesh, "operator and load")
    eps = [float(e) for e in epsilons]
    if not eps:
        raise PreconditionError("need a nonempty drift schedule")
    if any(not math.isfinite(e) or e < 0.0 for e in eps):
        raise PreconditionError("drift schedule must be finite and >= 0")
    if any(b > a for a, b in zip(eps, eps[1:])):
        raise PreconditionError("drift schedule must be nonincreasing")
    if not (floor_c > 0.0):
        raise PreconditionError("load floor must be positive")

    ones = assembly.assemble_load(mesh, 1.0)
    mw = assembly.lumped_mass_weights(mesh)[mesh.free_nodes]

    def check_floor(f: LoadFunctional, label: str) -> None:
        fields = f.values / mw
        if np.min(fields) < floor_c - 1e-12 * (1.0 + floor_c):
            raise PreconditionError(
                f"floor hypothesis violated: {label} dips to "
                f"{np.min(fields):.3e} < c = {floor_c:g}")

    check_floor(f_star, "the limit load")
    loads = [f_star.replace(f_star.values + e * ones.values) for e in eps]
    for f_n, e in zip(loads, eps):
        check_floor(f_n, f"the perturbed load (eps={e:g})")
    f_max = loads[0].replace(1.01 * loads[0].values)

    upper = assembly.solve_linear(op, f_max)
    if not check_increasing(m, upper.replace(np.zeros(mesh.n_nodes)),
                            upper, seed=seed):
        raise PreconditionError(
            "obstacle map is not increasing on sampled ordered pairs; "
            "the ordered iteration hypotheses fail")
    scaling_ok = check_scaling_condition(m, _scaling_samples(upper,
                                                             seed=seed))

    ref_min = minimal_solution(op, f_star, m, f_max=f_max, tol=tol)
    ref_max = maximal_solution(op, f_star, m, f_max=f_max, tol=tol)

    records = []
    min_errs = []
    for i, (f_n, e) in enumerate(zip(loads, eps), start=1):
        sol_min = minimal_solution(op, f_n, m, f_max=f_max, tol=tol)
        sol_max = maximal_solution(op, f_n, m, f_max=f_max, tol=tol)
        e_min = sol_min.y.values - ref_min.y.values
        e_max = sol_max.y.values - ref_max.y.values
        min_errs.append(assembly.sup_norm(e_min))
        records.append(report.StudyRecord(
            study="stability", n=i, h=mesh.h, gamma=None, delta=e,
            err_sup=assembly.sup_norm(e_min),
            err_l2=assembly.l2_norm(mesh, e_min),
            err_energy=assembly.energy_norm(op, e_min),
            violation=max(sol_min.fixed_point_residual,
                          sol_max.fixed_point_residual),
            iterations=sol_min.iterations + sol_max.iterations,
            residual=assembly.sup_norm(e_max),
            flag=sol_min.converged and sol_max.converged
            and sol_min.within_interval and sol_max.within_interval))

    floor_err = 1e-9 * (1.0 + ref_min.y.sup_norm())
    if all(e <= floor_err for e in min_errs):
        trend_ok, shrink_ok = True, True
    else:
        tail = min_errs[1:]
        trend_ok = all(b < a or b <= floor_err
                       for a, b in zip(tail, tail[1:]))
        shrink_ok = min_errs[-1] <= min_errs[0] / 5.0
    passed = scaling_ok and trend_ok and shrink_ok \
        and all(r.flag for r in records)
    metadata = {
        "study": "stability",
        "scaling_hypothesis_ok": str(scaling_ok),
        "map_kind": type(m).__name__.lower(),
        "error_trend_monotone_after_2": str(trend_ok),
        "final_le_first_over_5": str(shrink_ok),
        "minimal_final_err_sup": f"{min_errs[-1]:.12g}",
        "minimal_first_err_sup": f"{min_errs[0]:.12g}",
    }
    return report.StudyReport(study="stability", records=records,
                              metadata=metadata, passed=passed)
