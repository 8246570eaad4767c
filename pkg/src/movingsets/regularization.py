"""Penalty-style perturbations of a constrained quadratic energy.

Each scheme attaches a schedule-indexed extra term R_n to the base
energy F(u) = 1/2 a(u, u) - f(u).  Minimizers of F + R_n are computed
exactly (as linear or obstacle solves) or by the damped Newton driver,
and a study records how they approach the constrained minimizer as the
schedule diverges.  Every scheme also exposes a monotone "sandwich":
a nondecreasing lower family and a nonincreasing upper family that
pin R_n between limits with the same constrained minimizer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from . import assembly, constraints, vi
from .assembly import DiscreteOperator, LoadFunctional
from .constraints import ConstraintSet, NodalObstacle, Unbounded
from .errors import PreconditionError, SolverError
from .mesh import Mesh, NodalVector, is_nested, nested_node_map, prolongation_matrix
from .newton import ScalarHinges, VectorHinges, minimize_quadratic

__all__ = [
    "Tikhonov",
    "MoreauYosida",
    "TikhonovMY",
    "GalerkinMY",
    "PerturbationScheme",
    "scheme_length",
    "scheme_label",
    "evaluate_perturbation",
    "minimize_perturbed",
    "GammaRecord",
    "GammaStudyReport",
    "gamma_study",
    "NoRecoveryLevel",
    "NoRecoveryReport",
    "no_recovery_demo",
]

# Membership slack for "u lies in the coarse subspace" checks.
_SUBSPACE_TOL = 1e-10


def _check_schedule(name: str, values: Sequence[float]) -> tuple:
    vals = tuple(float(v) for v in values)
    if len(vals) == 0:
        raise PreconditionError(f"{name} schedule is empty")
    if any(not math.isfinite(v) or v <= 0.0 for v in vals):
        raise PreconditionError(f"{name} schedule must be positive and finite")
    if any(b < a for a, b in zip(vals, vals[1:])):
        raise PreconditionError(f"{name} schedule must be nondecreasing")
    if vals[-1] < 1e3 * vals[0]:
        raise PreconditionError(
            f"{name} schedule must grow by at least 1e3 over the horizon "
            f"(got {vals[0]:g} .. {vals[-1]:g})")
    return vals


@dataclass(frozen=True, eq=False)
class Tikhonov:
    """R_n(u) = i_K(u) + 1/(2 g'_n) |u|_{H1}^power (power fixed at 2)."""

    gamma_prime: tuple
    power: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "gamma_prime",
                           _check_schedule("gamma_prime", self.gamma_prime))
        if not (self.power > 1.0):
            raise PreconditionError("Tikhonov power must exceed 1")


@dataclass(frozen=True, eq=False)
class MoreauYosida:
    """R_n(u) = g_n/2 * dist(u, K)^2 in the lumped-mass metric."""

    gamma: tuple

    def __post_init__(self):
        object.__setattr__(self, "gamma",
                           _check_schedule("gamma", self.gamma))


@dataclass(frozen=True, eq=False)
class TikhonovMY:
    """Sum of the distance penalty and the seminorm damping term."""

    gamma: tuple
    gamma_prime: tuple
    power: float = 2.0

    def __post_init__(self):
        g = _check_schedule("gamma", self.gamma)
        gp = _check_schedule("gamma_prime", self.gamma_prime)
        if len(g) != len(gp):
            raise PreconditionError(
                "gamma and gamma_prime schedules must have equal length")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "gamma_prime", gp)
        if not (self.power > 1.0):
            raise PreconditionError("Tikhonov power must exceed 1")


@dataclass(frozen=True, eq=False)
class GalerkinMY:
    """Distance penalty plus the indicator of a nested coarse subspace.

    ``spaces[n-1]`` is the generator of the subspace used at step n;
    the chain must be nested into the working mesh and into itself.
    """

    gamma: tuple
    spaces: tuple

    def __post_init__(self):
        object.__setattr__(self, "gamma",
                           _check_schedule("gamma", self.gamma))
        spaces = tuple(self.spaces)
        if len(spaces) != len(self.gamma):
            raise PreconditionError(
                "need one subspace generator per schedule entry")
        for a, b in zip(spaces, spaces[1:]):
            if not is_nested(a, b):
                raise PreconditionError(
                    "subspace generators must form a nested chain")
        object.__setattr__(self, "spaces", spaces)


PerturbationScheme = Union[Tikhonov, MoreauYosida, TikhonovMY, GalerkinMY]


def scheme_length(scheme: PerturbationScheme) -> int:
    if isinstance(scheme, Tikhonov):
        return len(scheme.gamma_prime)
    return len(scheme.gamma)


def scheme_label(scheme: PerturbationScheme) -> str:
    return {Tikhonov: "tikhonov", MoreauYosida: "moreau_yosida",
            TikhonovMY: "tikhonov_my", GalerkinMY: "galerkin_my"}[type(scheme)]


def _check_working_mesh(scheme: PerturbationScheme, mesh: Mesh) -> None:
    if isinstance(scheme, GalerkinMY):
        for space in scheme.spaces:
            if not is_nested(space, mesh):
                raise PreconditionError(
                    "every subspace generator must nest into the working mesh")


# ---------------------------------------------------------------------------
# pointwise evaluation and the monotone sandwich

def _indicator(u: NodalVector, K: ConstraintSet) -> float:
    return 0.0 if constraints.is_feasible(u, K) else math.inf


def _subspace_defect(u: NodalVector, coarse: Mesh, fine: Mesh) -> float:
    """Sup distance from u to its coarse re-interpolation."""
    idx = nested_node_map(coarse, fine)
    P = prolongation_matrix(coarse, fine)
    recon = P @ u.values[idx]
    return assembly.sup_norm(recon - u.values)


def _tikhonov_term(u: NodalVector, gamma_prime: float, power: float) -> float:
    semi = assembly.h1_seminorm(u.mesh, u.values)
    return semi ** power / (2.0 * gamma_prime)


def evaluate_perturbation(u: NodalVector, scheme: PerturbationScheme,
                          n: int, K: ConstraintSet,
                          bound: str = "value") -> float:
    """Value of R_n at u, or of its lower/upper envelope at step n.

    ``bound`` is "value", "lower", or "upper".  The lower family is
    nondecreasing in n, the upper family nonincreasing, and both trap
    R_n.  Indicator terms use the shared feasibility tolerance.
    """
    if bound not in ("value", "lower", "upper"):
        raise ValueError(f"unknown bound {bound!r}")
    if not (1 <= n <= scheme_length(scheme)):
        raise IndexError(f"schedule step {n} out of range")
    _check_working_mesh(scheme, u.mesh)
    if isinstance(scheme, Tikhonov):
        # The term itself decreases in n, so it doubles as its own
        # upper cap; the distance part of the lower family is zero.
        if bound == "lower":
            return 0.0
        return _indicator(u, K) + _tikhonov_term(
            u, scheme.gamma_prime[n - 1], scheme.power)
    if isinstance(scheme, MoreauYosida):
        if bound == "upper":
            return _indicator(u, K)
        return 0.5 * scheme.gamma[n - 1] * constraints.penalty_sq(u, K)
    if isinstance(scheme, TikhonovMY):
        my = 0.5 * scheme.gamma[n - 1] * constraints.penalty_sq(u, K)
        if bound == "lower":
            return my
        tik = _tikhonov_term(u, scheme.gamma_prime[n - 1], scheme.power)
        if bound == "upper":
            return _indicator(u, K) + tik
        return my + tik
    # GalerkinMY
    my = 0.5 * scheme.gamma[n - 1] * constraints.penalty_sq(u, K)
    defect = _subspace_defect(u, scheme.spaces[n - 1], u.mesh)
    member = defect <= _SUBSPACE_TOL * (1.0 + u.sup_norm())
    if bound == "lower":
        return my
    if bound == "upper":
        # Indicator of K intersected with the step-n subspace; the
        # nested chain makes this family nonincreasing.
        return (_indicator(u, K) if member else math.inf)
    return my + (0.0 if member else math.inf)


# ---------------------------------------------------------------------------
# minimization per scheme

def _damped_operator(op: DiscreteOperator, gamma_prime: float) -> DiscreteOperator:
    stiff = assembly.assemble_operator(op.mesh, diffusion=1.0 / gamma_prime)
    mat = (op.matrix + stiff.matrix).tocsr()
    return DiscreteOperator(
        matrix=mat, mesh=op.mesh,
        symmetric=op.symmetric,
        is_m_matrix=assembly.check_m_matrix(mat),
        coercivity_estimate=op.coercivity_estimate
        + stiff.coercivity_estimate,
        description=f"{op.description or 'operator'}+seminorm/{gamma_prime:g}")


def _my_hinges(mesh: Mesh, K: ConstraintSet, gamma: float):
    """(scalar, vector) hinge pair whose energy is gamma/2 * penalty_sq."""
    if isinstance(K, Unbounded):
        return None, None
    if isinstance(K, NodalObstacle):
        free = mesh.free_nodes
        m = assembly.lumped_mass_weights(mesh)[free]
        C = sp.identity(free.size, format="csr")
        offset = K.phi.values[free]
        if K.psi_abs:
            C = sp.vstack([C, -C]).tocsr()
            offset = np.concatenate([offset, offset])
            m = np.concatenate([m, m])
        return ScalarHinges(C, offset, gamma * m), None
    sh, vh = constraints._constraint_hinges(K, mesh)
    return (sh.scaled(gamma) if sh is not None else None,
            vh.scaled(gamma) if vh is not None else None)


def _newton_start(op: DiscreteOperator, load: LoadFunctional) -> np.ndarray:
    return assembly.restrict_free(op.mesh,
                                  assembly.solve_linear(op, load).values)


def minimize_perturbed(op: DiscreteOperator, load: LoadFunctional,
                       scheme: PerturbationScheme, n: int,
                       K: ConstraintSet,
                       tol: float = 1e-10) -> NodalVector:
    """Minimizer of F + R_n over the free nodes.

    Tikhonov steps stay constrained (an obstacle solve with the damped
    operator); the distance penalties are smooth and go through the
    semismooth Newton driver.  Galerkin steps solve in the coarse
    degrees of freedom and prolong back.
    """
    if not (1 <= n <= scheme_length(scheme)):
        raise IndexError(f"schedule step {n} out of range")
    _check_working_mesh(scheme, op.mesh)
    if not op.symmetric:
        raise PreconditionError(
            "perturbation schemes need a symmetric energy; "
            "use the plain solver for nonsymmetric operators")
    mesh = op.mesh
    if isinstance(scheme, Tikhonov):
        if scheme.power != 2.0:
            raise NotImplementedError(
                "only the quadratic seminorm damping is minimized exactly")
        op2 = _damped_operator(op, scheme.gamma_prime[n - 1])
        return vi.solve_vi(op2, load, K, tol=tol).y
    if isinstance(scheme, MoreauYosida):
        sh, vh = _my_hinges(mesh, K, scheme.gamma[n - 1])
        x, _ = minimize_quadratic(op.matrix, load.values,
                                  _newton_start(op, load),
                                  scalar_hinges=sh, vector_hinges=vh,
                                  tol=tol)
        return NodalVector(assembly.extend_free(mesh, x), mesh)
    if isinstance(scheme, TikhonovMY):
        if scheme.power != 2.0:
            raise NotImplementedError(
                "only the quadratic seminorm damping is minimized exactly")
        op2 = _damped_operator(op, scheme.gamma_prime[n - 1])
        sh, vh = _my_hinges(mesh, K, scheme.gamma[n - 1])
        x, _ = minimize_quadratic(op2.matrix, load.values,
                                  _newton_start(op2, load),
                                  scalar_hinges=sh, vector_hinges=vh,
                                  tol=tol)
        return NodalVector(assembly.extend_free(mesh, x), mesh)
    return _minimize_galerkin(op, load, K, scheme.gamma[n - 1],
                              scheme.spaces[n - 1], tol)


def _minimize_galerkin(op: DiscreteOperator, load: LoadFunctional,
                       K: ConstraintSet, gamma: float, coarse: Mesh,
                       tol: float) -> NodalVector:
    """Penalized minimization restricted to a nested coarse subspace.

    The fine hinges are composed with the prolongation, so the coarse
    problem penalizes exactly the fine-space constraint excess.
    """
    mesh = op.mesh
    P = prolongation_matrix(coarse, mesh)
    P_red = P[mesh.free_nodes][:, coarse.free_nodes].tocsr()
    A_c = (P_red.T @ op.matrix @ P_red).tocsr()
    b_c = P_red.T @ load.values
    sh, vh = _my_hinges(mesh, K, gamma)
    if sh is not None:
        sh = ScalarHinges((sh.C @ P_red).tocsr(), sh.offset, sh.weight)
    if vh is not None:
        vh = VectorHinges((vh.G @ P_red).tocsr(), vh.bound, vh.weight, vh.m)
    x, _ = minimize_quadratic(A_c, b_c, np.zeros(A_c.shape[0]),
                              scalar_hinges=sh, vector_hinges=vh, tol=tol)
    return NodalVector(assembly.extend_free(mesh, P_red @ x), mesh)


# ---------------------------------------------------------------------------
# schedule study

@dataclass(frozen=True, eq=False)
class GammaRecord:
    n: int
    gamma: Optional[float]
    gamma_prime: Optional[float]
    objective: float
    err_sup: float
    err_l2: float
    err_energy: float
    violation: float
    distance: float


@dataclass(frozen=True, eq=False)
class GammaStudyReport:
    scheme: str
    records: tuple
    reference_energy: float
    converged: bool

    @property
    def final_record(self) -> GammaRecord:
        return self.records[-1]


def _schedule_entry(scheme: PerturbationScheme, n: int):
    gamma = None
    gamma_prime = None
    if isinstance(scheme, (MoreauYosida, TikhonovMY, GalerkinMY)):
        gamma = scheme.gamma[n - 1]
    if isinstance(scheme, (Tikhonov, TikhonovMY)):
        gamma_prime = scheme.gamma_prime[n - 1]
    return gamma, gamma_prime


def gamma_study(op: DiscreteOperator, load: LoadFunctional,
                K: ConstraintSet, scheme: PerturbationScheme,
                tol: float = 1e-10) -> GammaStudyReport:
    """Track minimizers of F + R_n along the whole schedule.

    The convergence flag compares the sup distance at the last step
    against the step half-way through: divergent schedules must at
    least halve nothing, so the flag asks final <= halfway.
    """
    _check_working_mesh(scheme, op.mesh)
    reference = vi.solve_vi(op, load, K, tol=tol)
    y_star = reference.y.values
    f_star = vi.energy_value(op, load, y_star)
    diff_op = op
    records = []
    for n in range(1, scheme_length(scheme) + 1):
        u_n = minimize_perturbed(op, load, scheme, n, K, tol=tol)
        gamma, gamma_prime = _schedule_entry(scheme, n)
        e = u_n.values - y_star
        rec = GammaRecord(
            n=n, gamma=gamma, gamma_prime=gamma_prime,
            objective=vi.energy_value(op, load, u_n.values)
            + evaluate_perturbation(u_n, scheme, n, K),
            err_sup=assembly.sup_norm(e),
            err_l2=assembly.l2_norm(op.mesh, e),
            err_energy=assembly.energy_norm(diff_op, e),
            violation=constraints.violation(u_n, K),
            distance=math.sqrt(constraints.penalty_sq(u_n, K)))
        records.append(rec)
    last = records[-1]
    mid = records[max(0, (len(records) - 1) // 2)]
    floor = 1e-12 * (1.0 + assembly.sup_norm(y_star))
    converged = last.err_sup <= max(mid.err_sup, floor)
    return GammaStudyReport(scheme=scheme_label(scheme),
                            records=tuple(records),
                            reference_energy=f_star,
                            converged=converged)


# ---------------------------------------------------------------------------
# the no-recovery pathology

@dataclass(frozen=True, eq=False)
class NoRecoveryLevel:
    n: int
    n_cells: int
    distance: float
    gamma: float
    objective_gap: float


@dataclass(frozen=True, eq=False)
class NoRecoveryReport:
    """Outcome of the adversarial schedule demonstration.

    ``applicable`` is False when the scenario secretly admits recovery
    (the subspace distances decay), in which case the gaps say nothing.
    """

    levels: tuple
    applicable: bool
    gap_persists: bool
    target_energy: float
    note: str


def _subspace_distance_qp(w_free: np.ndarray, phi_free: np.ndarray,
                          Q: np.ndarray, m: np.ndarray,
                          rho: float) -> float:
    """min ||v - Pi_n v||_M over v <= phi, ||v - w||_M <= rho."""
    import scipy.optimize as opt

    def fun(v):
        return float(v @ (Q @ v))

    def jac(v):
        return 2.0 * (Q @ v)

    def ball(v):
        d = v - w_free
        return rho * rho - float(d @ (m * d))

    def ball_jac(v):
        return -2.0 * m * (v - w_free)

    res = opt.minimize(
        fun, w_free, jac=jac, method="SLSQP",
        bounds=[(-np.inf, ub) for ub in phi_free],
        constraints=[{"type": "ineq", "fun": ball, "jac": ball_jac}],
        options={"maxiter": 600, "ftol": 1e-14})
    if not res.success and res.status != 4:  # 4: positive dir derivative
        raise SolverError(f"distance subproblem failed: {res.message}")
    return math.sqrt(max(float(res.fun), 0.0))


def no_recovery_demo(op: DiscreteOperator, load: LoadFunctional,
                     K: NodalObstacle, hierarchy: Sequence[Mesh],
                     rho: float, w: NodalVector,
                     tol: float = 1e-10) -> NoRecoveryReport:
    """Adversarial penalty schedule against a fixed subspace chain.

    For each coarse space the demo measures the mass-metric distance
    from the neighborhood of ``w`` inside the constraint set to that
    space, then picks gamma_n large against the squared distance, so
    the penalized coarse minimizers cannot approach the energy at
    ``w``.  If the distances decay, density holds for this scenario
    and the report is flagged not applicable.
    """
    mesh = op.mesh
    if not isinstance(K, NodalObstacle):
        raise PreconditionError("the demonstration needs a nodal obstacle")
    if constraints.violation(w, K) > constraints.FEASIBILITY_TOL:
        raise PreconditionError("w must lie in the constraint set")
    if not (rho > 0.0):
        raise PreconditionError("need a positive neighborhood radius")
    spaces = tuple(hierarchy)
    for space in spaces:
        if not is_nested(space, mesh):
            raise PreconditionError("subspaces must nest into the fine mesh")
        if space.n_nodes >= mesh.n_nodes:
            raise PreconditionError("subspaces must be strictly coarser")

    m = assembly.lumped_mass_weights(mesh)[mesh.free_nodes]
    w_free = assembly.restrict_free(mesh, w.values)
    phi_free = assembly.restrict_free(mesh, K.phi.values)
    f_w = vi.energy_value(op, load, w.values)

    distances = []
    for space in spaces:
        P = prolongation_matrix(space, mesh)
        P_red = np.asarray(
            P[mesh.free_nodes][:, space.free_nodes].todense())
        G = P_red.T @ (m[:, None] * P_red)
        # mass-orthogonal projector onto the coarse range
        Q = np.diag(m) - (m[:, None] * P_red) @ np.linalg.solve(
            G, P_red.T * m[None, :])
        Q = 0.5 * (Q + Q.T)
        distances.append(_subspace_distance_qp(w_free, phi_free, Q, m, rho))

    d_floor = 1e-8 * (1.0 + assembly.sup_norm(w.values))
    applicable = all(d > d_floor for d in distances) and \
        distances[-1] > distances[0] / 8.0

    levels = []
    gamma_prev = 0.0
    for i, (space, d) in enumerate(zip(spaces, distances), start=1):
        if d <= d_floor:
            gamma = max(2.0 * gamma_prev, 1.0)
        else:
            gamma = max(2.0 / (d * d), 2.0 * gamma_prev)
        # collapsed distances would request gammas past what double
        # precision can minimize against; beyond 1e10 the penalty is
        # numerically the constraint itself
        gamma = min(gamma, 1e10)
        gamma_prev = gamma
        u_n = _minimize_galerkin(op, load, K, gamma, space, tol)
        total = vi.energy_value(op, load, u_n.values) \
            + 0.5 * gamma * constraints.penalty_sq(u_n, K)
        levels.append(NoRecoveryLevel(
            n=i,
            n_cells=space.structure[1] if space.structure else space.n_elems,
            distance=d, gamma=gamma, objective_gap=total - f_w))
    gaps = [lv.objective_gap for lv in levels]
    gap_scale = 1e-2 * (1.0 + abs(f_w))
    gap_persists = applicable and all(g >= gap_scale for g in gaps) \
        and gaps[-1] >= 0.25 * gaps[0]
    note = ("perturbed energies stay above the target on every level"
            if applicable and gap_persists else
            "density holds here"
            if not applicable else
            "gap collapsed; scenario inconclusive")
    return NoRecoveryReport(levels=tuple(levels), applicable=applicable,
                            gap_persists=gap_persists,
                            target_energy=f_w, note=note)
