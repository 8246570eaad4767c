"""Solvers for discrete variational inequalities over the constraint sets.

The model problem: find y admissible with  (A y - f, v - y) >= 0 for all
admissible v.  For upper nodal obstacles (v <= phi) two methods are
provided and cross-checked in the test suite:

* ``active_set`` - primal-dual active set / semismooth Newton on the
  complementarity system min(phi - y, f - A y) = 0.  Finite termination
  on M-matrix problems.
* ``relaxation`` - projected Gauss-Seidel/SOR sweeps with relaxation
  factor omega in (0, 2).

Midpoint and gradient constraint sets are handled by penalty
path-following on a hinge-penalized energy (see :mod:`movingsets.newton`);
their final iterates satisfy the constraints up to O(1/gamma_final),
reported in ``VISolution.residual``, rather than exactly.

Bilateral nodal sets (the |v| <= phi variant) are out of scope for the
solvers; they participate in feasibility checks and recovery maps only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly, constraints
from .constraints import (ConstraintSet, GradientBound, MidpointObstacle,
                          NodalObstacle, Unbounded)
from .errors import ConvergenceError, PreconditionError
from .mesh import NodalVector, require_same_mesh
from .newton import minimize_quadratic

__all__ = [
    "VISolution",
    "DEFAULT_GAMMA_SCHEDULE",
    "solve_obstacle_vi",
    "solve_midpoint_vi",
    "solve_gradient_vi",
    "solution_map",
    "solve_vi",
    "complementarity_residual",
    "energy_value",
]

DEFAULT_GAMMA_SCHEDULE = (1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8)


@dataclass(eq=False)
class VISolution:
    """Solution record of a discrete VI solve.

    ``active_set`` holds global node indices where the obstacle is
    attained (for nodal sets) or element indices where the constraint
    is tight (for midpoint/gradient sets).  ``residual`` is the
    complementarity residual for nodal sets and the largest constraint
    excess for penalty-solved sets.
    """

    y: NodalVector
    active_set: np.ndarray
    iterations: int
    residual: float
    method: str
    converged: bool = True
    info: dict = field(default_factory=dict)


def _check_solvable_obstacle(K):
    if isinstance(K, NodalObstacle) and K.psi_abs:
        raise NotImplementedError(
            "bilateral nodal obstacles (|v| <= phi) are not solvable here; "
            "one-sided sets only")


def energy_value(op: assembly.DiscreteOperator, load: assembly.LoadFunctional,
                 values: np.ndarray) -> float:
    """Quadratic energy 1/2 y.Ay - f.y of full or free nodal values."""
    v = assembly._as_free(op, values)
    return 0.5 * float(v @ (op.matrix @ v)) - float(load.values @ v)


# ---------------------------------------------------------------------------
# nodal obstacle methods

def _pdas(A, f, phi, tol_abs, max_iter, x0_active=None):
    """Primal-dual active set iteration on the reduced free-node system."""
    n = f.size
    idx = np.arange(n)
    active = np.zeros(n, dtype=bool) if x0_active is None else x0_active.copy()
    y = np.zeros(n)
    lam = np.zeros(n)
    last_residual = np.inf
    for it in range(1, max_iter + 1):
        inact = ~active
        ii = idx[inact]
        aa = idx[active]
        y = np.empty(n)
        y[aa] = phi[aa]
        if ii.size:
            Aii = A[ii][:, ii]
            rhs = f[ii] - (A[ii][:, aa] @ phi[aa] if aa.size else 0.0)
            y[ii] = np.atleast_1d(spla.spsolve(Aii.tocsc(), rhs))
        lam = f - A @ y
        residual = float(np.max(np.abs(np.minimum(phi - y, lam)))) if n else 0.0
        last_residual = residual
        new_active = (lam + (y - phi)) > 0.0
        if np.array_equal(new_active, active) or residual <= tol_abs:
            if residual <= tol_abs:
                return y, lam, active, it, residual
            # stable active set but residual above tolerance: ties
            break
        active = new_active
    raise ConvergenceError(
        f"active set method did not converge in {max_iter} iterations "
        f"(last residual {last_residual:.3e})",
        residual=last_residual, iterations=max_iter)


def _psor(A, f, phi, omega, tol_abs, max_iter, y0):
    """Projected SOR sweeps; returns when the complementarity residual
    drops below tol_abs."""
    n = f.size
    y = np.minimum(y0.copy(), phi)
    Ac = A.tocsr()
    indptr, indices, data = Ac.indptr, Ac.indices, Ac.data
    diag = Ac.diagonal()
    if np.any(diag <= 0):
        raise PreconditionError("projected relaxation needs positive diagonal")
    for sweep in range(1, max_iter + 1):
        for i in range(n):
            sl = slice(indptr[i], indptr[i + 1])
            ri = f[i] - data[sl] @ y[indices[sl]]
            y[i] = min(phi[i], y[i] + omega * ri / diag[i])
        lam = f - Ac @ y
        residual = float(np.max(np.abs(np.minimum(phi - y, lam)))) if n else 0.0
        if residual <= tol_abs:
            return y, lam, sweep, residual
    raise ConvergenceError(
        f"projected relaxation did not reach tolerance in {max_iter} sweeps "
        f"(last residual {residual:.3e})",
        residual=residual, iterations=max_iter)


def solve_obstacle_vi(op: assembly.DiscreteOperator,
                      load: assembly.LoadFunctional,
                      K: NodalObstacle | Unbounded,
                      method: str = "active_set",
                      tol: float = 1e-10,
                      max_iter: int | None = None,
                      omega: float = 1.5,
                      x0: NodalVector | None = None) -> VISolution:
    """Solve the VI over a one-sided nodal obstacle set.

    ``tol`` is relative: the accepted complementarity residual is
    tol * (1 + ||f||_inf).  Defaults: 10 * n_free iterations for the
    active set method, 1e5 sweeps for relaxation.
    """
    require_same_mesh(op.mesh, load.mesh, "operator and load")
    if isinstance(K, Unbounded):
        y = assembly.solve_linear(op, load)
        res = float(np.max(np.abs(op.matrix @ y.values[op.mesh.free_nodes]
                                  - load.values))) if load.values.size else 0.0
        return VISolution(y=y, active_set=np.array([], dtype=np.int64),
                          iterations=1, residual=res, method="linear")
    require_same_mesh(op.mesh, K.mesh, "operator and constraint set")
    _check_solvable_obstacle(K)

    mesh = op.mesh
    free = mesh.free_nodes
    f = load.values
    phi = K.phi.values[free]
    tol_abs = tol * (1.0 + (np.max(np.abs(f)) if f.size else 0.0))

    if method == "active_set":
        if not op.is_m_matrix:
            warnings.warn("active set method on a non-M-matrix operator; "
                          "finite termination is not guaranteed",
                          stacklevel=2)
        max_it = max_iter if max_iter is not None else max(10 * f.size, 10)
        x0_active = None
        if x0 is not None:
            x0_active = x0.values[free] >= phi - 1e-12
        y, lam, active, its, res = _pdas(op.matrix, f, phi, tol_abs, max_it,
                                         x0_active)
    elif method == "relaxation":
        if not (0.0 < omega < 2.0):
            raise ValueError(f"omega must lie in (0, 2), got {omega}")
        if not op.symmetric:
            warnings.warn("projected relaxation on a nonsymmetric operator; "
                          "convergence theory assumes symmetry", stacklevel=2)
        max_it = max_iter if max_iter is not None else 10 ** 5
        y0 = x0.values[free] if x0 is not None else np.zeros(f.size)
        y, lam, its, res = _psor(op.matrix, f, phi, omega, tol_abs, max_it, y0)
        active = (phi - y) <= 1e-12 * (1.0 + np.abs(phi))
    else:
        raise ValueError(f"unknown method {method!r}; "
                         "use 'active_set' or 'relaxation'")

    yfull = assembly.extend_free(mesh, np.minimum(y, phi))
    return VISolution(
        y=NodalVector(yfull, mesh),
        active_set=np.sort(free[active]),
        iterations=its,
        residual=res,
        method=method,
    )


# ---------------------------------------------------------------------------
# penalty path-following for midpoint and gradient sets

def _solve_penalty(op, load, K, gamma_schedule, newton_tol):
    mesh = op.mesh
    sh, vh = constraints._constraint_hinges(K, mesh)
    x = np.zeros(load.values.size)
    total_its = 0
    for gamma in gamma_schedule:
        if gamma <= 0:
            raise ValueError("penalty parameters must be positive")
        x, info = minimize_quadratic(
            op.matrix, load.values, x0=x,
            scalar_hinges=sh.scaled(gamma) if sh is not None else None,
            vector_hinges=vh.scaled(gamma) if vh is not None else None,
            tol=newton_tol)
        total_its += info["iterations"]
    y = NodalVector(assembly.extend_free(mesh, x), mesh)
    viol = constraints.violation(y, K)
    return y, viol, total_its


def _tight_elements(mesh, y, K, tol=1e-8):
    if isinstance(K, MidpointObstacle):
        mid = constraints._midpoint_values(mesh, y.values)
        lhs = np.abs(mid) if K.psi_abs else mid
        return np.nonzero(lhs >= K.values - tol * (1.0 + np.abs(K.values)))[0]
    g = assembly.element_gradients(mesh, y.values)
    t = constraints._lp_norms(g, K.p)
    return np.nonzero(t >= K.alpha - tol * (1.0 + K.alpha))[0]


def solve_midpoint_vi(op, load, K: MidpointObstacle,
                      gamma_schedule=DEFAULT_GAMMA_SCHEDULE,
                      tol: float = 1e-10) -> VISolution:
    """Penalty path-following solve over a midpoint obstacle set."""
    require_same_mesh(op.mesh, load.mesh, "operator and load")
    require_same_mesh(op.mesh, K.mesh, "operator and constraint set")
    y, viol, its = _solve_penalty(op, load, K, gamma_schedule, tol)
    return VISolution(y=y, active_set=_tight_elements(op.mesh, y, K),
                      iterations=its, residual=viol,
                      method="midpoint_penalty",
                      info={"gamma_final": float(gamma_schedule[-1])})


def solve_gradient_vi(op, load, K: GradientBound,
                      gamma_schedule=DEFAULT_GAMMA_SCHEDULE,
                      tol: float = 1e-10) -> VISolution:
    """Penalty path-following solve over an elementwise gradient bound.

    1D supports every l^p bound (the gradient is scalar); 2D supports
    p = 2.  The final violation scales like O(1/gamma_final).
    """
    require_same_mesh(op.mesh, load.mesh, "operator and load")
    require_same_mesh(op.mesh, K.mesh, "operator and constraint set")
    y, viol, its = _solve_penalty(op, load, K, gamma_schedule, tol)
    return VISolution(y=y, active_set=_tight_elements(op.mesh, y, K),
                      iterations=its, residual=viol,
                      method="gradient_penalty",
                      info={"gamma_final": float(gamma_schedule[-1])})


# ---------------------------------------------------------------------------
# dispatch

def solve_vi(op, load, K: ConstraintSet, method: str | None = None,
             tol: float = 1e-10, **kwargs) -> VISolution:
    """Solve the VI over any supported constraint set (full record)."""
    if isinstance(K, (Unbounded, NodalObstacle)):
        if method is None:
            method = "active_set" if (op.is_m_matrix or not op.symmetric) \
                else "relaxation"
        return solve_obstacle_vi(op, load, K, method=method, tol=tol, **kwargs)
    if isinstance(K, MidpointObstacle):
        return solve_midpoint_vi(op, load, K, tol=tol, **kwargs)
    if isinstance(K, GradientBound):
        return solve_gradient_vi(op, load, K, tol=tol, **kwargs)
    raise TypeError(f"unsupported constraint set {type(K).__name__}")


def solution_map(load: assembly.LoadFunctional, K: ConstraintSet,
                 op: assembly.DiscreteOperator, **kwargs) -> NodalVector:
    """The solution operator S(f, K) as a plain vector-valued map."""
    return solve_vi(op, load, K, **kwargs).y


# ---------------------------------------------------------------------------
# diagnostics

def complementarity_residual(y: NodalVector, op: assembly.DiscreteOperator,
                             load: assembly.LoadFunctional,
                             K: NodalObstacle | Unbounded,
                             feasibility_tol: float = 1e-6) -> float:
    """Sup norm of min(phi - y, f - A y) over the free nodes.

    Zero exactly at the VI solution.  Raises when ``y`` is infeasible
    beyond ``feasibility_tol``; the measure is meaningless there.
    """
    require_same_mesh(y.mesh, op.mesh, "vector and operator")
    free = op.mesh.free_nodes
    lam = load.values - op.matrix @ y.values[free]
    if isinstance(K, Unbounded):
        return float(np.max(np.abs(lam))) if lam.size else 0.0
    _check_solvable_obstacle(K)
    gap = constraints.violation(y, K)
    if gap > feasibility_tol:
        raise PreconditionError(
            f"complementarity residual of an infeasible point "
            f"(violation {gap:.3e} > {feasibility_tol:.1e})")
    slack = K.phi.values[free] - y.values[free]
    return float(np.max(np.abs(np.minimum(slack, lam)))) if lam.size else 0.0
