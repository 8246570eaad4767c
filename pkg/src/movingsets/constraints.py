"""Constraint sets for VIs with moving obstacles, and recovery maps.

Three concrete set families over a fixed mesh, all of the form
"pointwise functional of the P1 function stays below a bound":

* ``NodalObstacle``      v(x) <= phi(x)   (or |v(x)| <= phi(x)) at nodes;
* ``MidpointObstacle``   the P1 value at element barycenters stays below
  a per-element bound (again optionally through the absolute value);
* ``GradientBound``      the elementwise gradient satisfies
  |grad v|_{l^p} <= alpha(x_T).

``Unbounded`` is the reserved "no constraint" marker; it is a real
variant rather than a large-float obstacle so that solvers can dispatch
to plain linear solves.

Sets are scalar-valued; for vector-valued extensions every bound below
would act componentwise through the same pointwise functionals.

The three recovery constructions map a function that is admissible for
a limit set to nearby functions admissible for perturbed sets:

* ``scale_recovery``: multiply by (1 + ||phi_n - phi||_inf / nu)^(-1),
  for bounds uniformly >= nu > 0 (the gradient-bound case);
* ``truncation_recovery``: shrink values toward 0 by the sup distance
  between the bounds (obstacle case with nu = 0);
* ``singular_perturbation_recovery``: solve (r Q + M) w_n = M min(w, phi_n)
  with r = ||min(w, phi_n) - w||_{L2,lumped}; requires Q to be a coercive
  M-matrix with Q phi_n >= 0, and the output is verified admissible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly
from .errors import PreconditionError, SolverError
from .mesh import Mesh, NodalVector, require_same_mesh
from .newton import ScalarHinges, VectorHinges, minimize_quadratic

__all__ = [
    "Unbounded",
    "NodalObstacle",
    "MidpointObstacle",
    "GradientBound",
    "nodal_obstacle",
    "midpoint_obstacle",
    "gradient_bound",
    "unbounded",
    "mesh_of",
    "violation",
    "is_feasible",
    "pos_part",
    "sup",
    "inf",
    "scale_recovery",
    "truncation_recovery",
    "singular_perturbation_recovery",
    "project_mass",
    "mass_distance",
    "penalty_sq",
    "RecoveryStep",
    "RecoveryTrace",
]

FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Unbounded:
    """No constraint: the feasible set is the whole space."""
    mesh: Mesh


@dataclass(frozen=True, eq=False)
class NodalObstacle:
    """v <= phi (psi_abs: |v| <= phi) at every node."""
    phi: NodalVector
    psi_abs: bool = False
    nu: float = 0.0

    @property
    def mesh(self) -> Mesh:
        return self.phi.mesh


@dataclass(frozen=True, eq=False)
class MidpointObstacle:
    """P1 value at element barycenters <= per-element bound."""
    values: np.ndarray
    mesh: Mesh
    psi_abs: bool = False
    nu: float = 0.0


@dataclass(frozen=True, eq=False)
class GradientBound:
    """Elementwise |grad v|_{l^p} <= alpha, alpha given at barycenters."""
    alpha: np.ndarray
    mesh: Mesh
    p: float = 2.0
    nu: float = 0.0


ConstraintSet = Unbounded | NodalObstacle | MidpointObstacle | GradientBound


def unbounded(mesh: Mesh) -> Unbounded:
    return Unbounded(mesh)


def nodal_obstacle(mesh: Mesh, values, psi_abs: bool = False,
                   nu: float = 0.0, require_nonneg: bool = False
                   ) -> NodalObstacle:
    """Validated nodal obstacle; ``values`` may be scalar or per node."""
    arr = np.broadcast_to(np.asarray(values, dtype=float),
                          (mesh.n_nodes,)).copy()
    phi = NodalVector(arr, mesh)
    _check_bound(arr, nu, require_nonneg, "obstacle")
    return NodalObstacle(phi, psi_abs=bool(psi_abs), nu=float(nu))


def midpoint_obstacle(mesh: Mesh, values, psi_abs: bool = False,
                      nu: float = 0.0, require_nonneg: bool = False
                      ) -> MidpointObstacle:
    arr = np.broadcast_to(np.asarray(values, dtype=float),
                          (mesh.n_elems,)).copy()
    if not np.all(np.isfinite(arr)):
        raise ValueError("midpoint obstacle contains non-finite values")
    _check_bound(arr, nu, require_nonneg, "midpoint obstacle")
    arr.setflags(write=False)
    return MidpointObstacle(arr, mesh, psi_abs=bool(psi_abs), nu=float(nu))


def gradient_bound(mesh: Mesh, alpha, p: float = 2.0,
                   nu: float = 0.0) -> GradientBound:
    arr = np.broadcast_to(np.asarray(alpha, dtype=float),
                          (mesh.n_elems,)).copy()
    if not np.all(np.isfinite(arr)):
        raise ValueError("gradient bound contains non-finite values")
    if np.any(arr <= 0):
        raise PreconditionError(
            "gradient bound must be strictly positive at every barycenter")
    if not (p >= 1.0 or np.isinf(p)):
        raise ValueError(f"p must be >= 1 or inf, got {p}")
    _check_bound(arr, nu, False, "gradient bound")
    arr.setflags(write=False)
    return GradientBound(arr, mesh, p=float(p), nu=float(nu))


def _check_bound(arr, nu, require_nonneg, what):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    if nu > 0 and np.min(arr) < nu - 1e-14:
        raise PreconditionError(
            f"{what} must stay >= nu = {nu}, min is {np.min(arr):.6g}")
    if require_nonneg and np.min(arr) < 0:
        raise PreconditionError(
            f"{what} must be nonnegative, min is {np.min(arr):.6g}")


def mesh_of(K: ConstraintSet) -> Mesh:
    return K.mesh


# ---------------------------------------------------------------------------
# feasibility

def _midpoint_values(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    # P1 value at a simplex barycenter is the vertex average
    return values[mesh.elements].mean(axis=1)


def _lp_norms(g: np.ndarray, p: float) -> np.ndarray:
    if np.isinf(p):
        return np.max(np.abs(g), axis=1)
    return np.linalg.norm(g, ord=p, axis=1)


def violation(v: NodalVector, K: ConstraintSet) -> float:
    """Largest constraint excess of v over K (0 when admissible)."""
    if isinstance(K, Unbounded):
        require_same_mesh(v.mesh, K.mesh, "vector and constraint set")
        return 0.0
    require_same_mesh(v.mesh, mesh_of(K), "vector and constraint set")
    if isinstance(K, NodalObstacle):
        lhs = np.abs(v.values) if K.psi_abs else v.values
        excess = lhs - K.phi.values
    elif isinstance(K, MidpointObstacle):
        mid = _midpoint_values(K.mesh, v.values)
        lhs = np.abs(mid) if K.psi_abs else mid
        excess = lhs - K.values
    elif isinstance(K, GradientBound):
        g = assembly.element_gradients(K.mesh, v.values)
        excess = _lp_norms(g, K.p) - K.alpha
    else:
        raise TypeError(f"unknown constraint set {type(K).__name__}")
    return float(max(np.max(excess), 0.0)) if excess.size else 0.0


def is_feasible(v: NodalVector, K: ConstraintSet,
                tol: float = FEASIBILITY_TOL) -> bool:
    """True when every constraint holds up to the additive tolerance."""
    return violation(v, K) <= tol


# ---------------------------------------------------------------------------
# lattice operations

def pos_part(v: NodalVector) -> NodalVector:
    return v.replace(np.maximum(v.values, 0.0))


def sup(v: NodalVector, w: NodalVector) -> NodalVector:
    """Nodewise maximum, via v + (w - v)^+."""
    require_same_mesh(v.mesh, w.mesh, "lattice operands")
    return v.replace(v.values + np.maximum(w.values - v.values, 0.0))


def inf(v: NodalVector, w: NodalVector) -> NodalVector:
    """Nodewise minimum, via v - (v - w)^+."""
    require_same_mesh(v.mesh, w.mesh, "lattice operands")
    return v.replace(v.values - np.maximum(v.values - w.values, 0.0))


# ---------------------------------------------------------------------------
# recovery constructions

def _bound_data(x) -> np.ndarray:
    return x.values if isinstance(x, NodalVector) else np.asarray(x, float)


def scale_recovery(w: NodalVector, phi, phi_n, nu: float) -> NodalVector:
    """Recovery by uniform scaling, for bounds uniformly >= nu > 0.

    Returns beta * w with beta = (1 + ||phi_n - phi||_inf / nu)^(-1).
    If w is admissible for the phi-set then beta * w is admissible for
    the phi_n-set whenever both bounds stay >= nu.
    """
    if nu <= 0:
        raise PreconditionError(
            "scale recovery needs a uniform lower bound nu > 0 on the bounds")
    a, b = _bound_data(phi), _bound_data(phi_n)
    if a.shape != b.shape:
        raise ValueError("bound arrays have different shapes")
    if min(a.min(initial=np.inf), b.min(initial=np.inf)) < nu - 1e-14:
        raise PreconditionError(
            f"scale recovery: bounds drop below nu = {nu}")
    shift = float(np.max(np.abs(b - a))) if a.size else 0.0
    beta = 1.0 / (1.0 + shift / nu)
    return w.replace(beta * w.values)


def truncation_recovery(w: NodalVector, shift: float) -> NodalVector:
    """Recovery by truncation toward zero.

    Nodewise: 0 where w = 0, else sign(w) * max(|w| - shift, 0).  Takes
    admissible points of {|v| <= phi} into {|v| <= phi_n} whenever
    ||phi - phi_n||_inf <= shift and phi_n >= 0; for one-sided upper
    obstacles with phi_n >= 0 the same output is admissible too.
    """
    if shift < 0:
        raise PreconditionError("truncation needs a nonnegative shift")
    vals = w.values
    out = np.sign(vals) * np.maximum(np.abs(vals) - shift, 0.0)
    return w.replace(out)


def singular_perturbation_recovery(w: NodalVector, phi_n: NodalVector,
                                   Q: assembly.DiscreteOperator,
                                   mass: assembly.DiscreteOperator,
                                   tol: float = FEASIBILITY_TOL
                                   ) -> NodalVector:
    """Recovery through a vanishing singular perturbation.

    Solves (r Q + M) w_n = M * min(w, phi_n) on the free nodes, where
    r = || min(w, phi_n) - w ||_{L2,lumped}.  Requires Q to be a
    coercive M-matrix with Q phi_n >= 0 (checked on the reduced matrix
    up to 1e-10 relative); the mass must be lumped (diagonal).  The
    output is admissible for the phi_n obstacle up to ``tol``; this is
    verified, not assumed.
    """
    require_same_mesh(w.mesh, phi_n.mesh, "target and obstacle")
    require_same_mesh(w.mesh, Q.mesh, "target and Q operator")
    require_same_mesh(w.mesh, mass.mesh, "target and mass")
    if not Q.is_m_matrix:
        raise PreconditionError(
            "singular perturbation recovery requires Q to be an M-matrix")
    M = mass.matrix
    if (M - sp.diags(M.diagonal())).nnz != 0:
        raise PreconditionError(
            "singular perturbation recovery requires a lumped (diagonal) mass")

    mesh = w.mesh
    free = mesh.free_nodes
    wtil = np.minimum(w.values, phi_n.values)
    r = assembly.l2_norm(mesh, wtil - w.values)
    if r == 0.0:
        return w.replace(wtil)

    qphi = Q.matrix @ phi_n.values[free]
    qscale = float(np.max(np.abs(qphi))) if qphi.size else 0.0
    if qphi.size and np.min(qphi) < -1e-10 * max(qscale, 1e-300):
        raise PreconditionError(
            "singular perturbation recovery: hypothesis Q phi_n >= 0 fails "
            f"(min reduced residual {np.min(qphi):.3e})")

    sys = (r * Q.matrix + M).tocsc()
    rhs = M @ wtil[free]
    x = spla.spsolve(sys, rhs)
    # zero Dirichlet values: the recovery stays in V
    out = assembly.extend_free(mesh, x)
    w_n = w.replace(out)
    excess = float(np.max(out - phi_n.values))
    if excess > tol:
        raise SolverError(
            f"singular perturbation output violates the obstacle by "
            f"{excess:.3e} (tolerance {tol:.1e})")
    return w_n


# ---------------------------------------------------------------------------
# lumped-metric projections

def project_mass(v: NodalVector, K: ConstraintSet) -> NodalVector:
    """Nearest admissible point in the lumped-mass metric.

    Nodal obstacles decouple and are projected exactly:
    min(v, phi), or sign(v) * min(|v|, phi) for the |.| variant.
    Midpoint and gradient sets are projected by penalty iteration
    (accuracy around 1e-8 in the constraint residual).
    """
    if isinstance(K, Unbounded):
        require_same_mesh(v.mesh, K.mesh, "vector and constraint set")
        return v
    require_same_mesh(v.mesh, mesh_of(K), "vector and constraint set")
    if isinstance(K, NodalObstacle):
        phi = K.phi.values
        if K.psi_abs:
            out = np.sign(v.values) * np.minimum(np.abs(v.values), phi)
        else:
            out = np.minimum(v.values, phi)
        return v.replace(out)
    return _project_penalty(v, K)


def _constraint_hinges(K: ConstraintSet, mesh: Mesh):
    """Hinge encodings of a constraint set over the free nodes."""
    free = mesh.free_nodes
    weights = mesh.element_sizes.copy()
    if isinstance(K, MidpointObstacle):
        nv = mesh.dim + 1
        E = mesh.n_elems
        rows = np.repeat(np.arange(E), nv)
        cols = mesh.elements.ravel()
        data = np.full(E * nv, 1.0 / nv)
        C = sp.coo_matrix((data, (rows, cols)),
                          shape=(E, mesh.n_nodes)).tocsr()[:, free]
        offset = K.values.astype(float)
        if K.psi_abs:
            C = sp.vstack([C, -C]).tocsr()
            offset = np.concatenate([offset, offset])
            weights = np.concatenate([weights, weights])
        return ScalarHinges(C, offset, weights), None
    if isinstance(K, GradientBound):
        if mesh.dim > 1 and not np.isclose(K.p, 2.0):
            raise NotImplementedError(
                "penalty handling of gradient bounds in 2D supports p = 2 "
                "only; feasibility checks support all p")
        G = assembly.gradient_operator(mesh)[:, free]
        return None, VectorHinges(G, K.alpha.astype(float), weights, mesh.dim)
    raise TypeError(f"no hinge encoding for {type(K).__name__}")


def _project_penalty(v: NodalVector, K: ConstraintSet) -> NodalVector:
    mesh = mesh_of(K)
    free = mesh.free_nodes
    mw = assembly.lumped_mass_weights(mesh)[free]
    A = sp.diags(mw).tocsr()
    b = mw * v.values[free]
    sh, vh = _constraint_hinges(K, mesh)
    x = v.values[free].copy()
    for gamma in (1e4, 1e6, 1e8, 1e10):
        x, _ = minimize_quadratic(
            A, b, x0=x,
            scalar_hinges=sh.scaled(gamma) if sh is not None else None,
            vector_hinges=vh.scaled(gamma) if vh is not None else None,
            tol=1e-12)
    return v.replace(assembly.extend_free(mesh, x))


def mass_distance(v: NodalVector, K: ConstraintSet) -> float:
    """Lumped-mass distance from v to the constraint set."""
    proj = project_mass(v, K)
    return assembly.l2_norm(v.mesh, v.values - proj.values)


def penalty_sq(v: NodalVector, K: ConstraintSet) -> float:
    """Squared penalty functional behind the distance-type schemes.

    For nodal sets this is the exact squared lumped-mass distance.
    Midpoint and gradient sets get the quadrature-weighted squared
    constraint excess, which is what the hinge machinery penalizes
    (cheap, convex, and zero exactly on the set).
    """
    if isinstance(K, Unbounded):
        require_same_mesh(v.mesh, K.mesh, "vector and constraint set")
        return 0.0
    mesh = mesh_of(K)
    require_same_mesh(v.mesh, mesh, "vector and constraint set")
    if isinstance(K, NodalObstacle):
        m = assembly.lumped_mass_weights(mesh)
        base = np.abs(v.values) if K.psi_abs else v.values
        ex = np.maximum(base - K.phi.values, 0.0)
        return float(np.sum(m * ex * ex))
    if isinstance(K, MidpointObstacle):
        mid = _midpoint_values(mesh, v.values)
        base = np.abs(mid) if K.psi_abs else mid
        ex = np.maximum(base - K.values, 0.0)
        return float(np.sum(mesh.element_sizes * ex * ex))
    g = assembly.element_gradients(mesh, v.values)
    ex = np.maximum(_lp_norms(g, K.p) - K.alpha, 0.0)
    return float(np.sum(mesh.element_sizes * ex * ex))


# ---------------------------------------------------------------------------
# recovery traces

@dataclass(frozen=True)
class RecoveryStep:
    n: int
    delta: float
    distance: float
    violation: float
    feasible: bool


@dataclass
class RecoveryTrace:
    """Per-step record of a recovery construction along a set sequence."""

    construction: str
    steps: list[RecoveryStep]

    @property
    def initial_distance(self) -> float:
        return self.steps[0].distance

    @property
    def final_distance(self) -> float:
        return self.steps[-1].distance

    @property
    def all_feasible(self) -> bool:
        return all(s.feasible for s in self.steps)

    @property
    def passed(self) -> bool:
        if not self.steps or not self.all_feasible:
            return False
        if self.initial_distance == 0.0:
            return self.final_distance == 0.0
        return self.final_distance <= self.initial_distance / 10.0
