"""Galerkin assembly of P1 operators and load functionals.

The bilinear form is

    a(u, v) = int  diffusion * grad u . grad v
            + (advection . grad u) v  +  reaction * u * v

with scalar diffusion (constant or per element), a constant advection
vector, and a nonnegative constant reaction coefficient.  Homogeneous
Dirichlet data is eliminated: operator matrices and load vectors live on
the free nodes only.

Quadrature conventions, fixed package-wide:

* loads use the midpoint rule, entry_i = sum_T |T| * f(x_T) * phi_i(x_T);
* the reaction term and all pivot-space (L2-like) norms use the lumped
  mass, which keeps reaction-augmented operators M-matrices and makes
  nodal obstacle projections decouple.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError
from .mesh import Mesh, NodalVector, require_same_mesh

__all__ = [
    "DiscreteOperator",
    "LoadFunctional",
    "assemble_operator",
    "assemble_mass",
    "lumped_mass_weights",
    "assemble_load",
    "load_from_values",
    "solve_linear",
    "check_m_matrix",
    "estimate_coercivity",
    "gradient_operator",
    "element_gradients",
    "restrict_free",
    "extend_free",
    "energy_norm",
    "l2_norm",
    "sup_norm",
    "h1_seminorm",
]


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Sparse operator over the free nodes of a mesh.

    ``coercivity_estimate`` is the smallest Rayleigh quotient seen over
    a fixed-seed sample of random unit vectors; it upper-bounds nothing
    and is recorded for reporting, not for proofs.
    """

    matrix: sp.csr_matrix
    mesh: Mesh
    symmetric: bool
    is_m_matrix: bool
    coercivity_estimate: float
    description: str = ""

    @property
    def n_free(self) -> int:
        return self.matrix.shape[0]

    def __repr__(self) -> str:
        return (f"DiscreteOperator({self.description or 'custom'}, "
                f"n_free={self.n_free}, symmetric={self.symmetric}, "
                f"m_matrix={self.is_m_matrix})")


@dataclass(frozen=True, eq=False)
class LoadFunctional:
    """Right-hand-side vector over the free nodes of a mesh."""

    values: np.ndarray
    mesh: Mesh

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if v.shape != (self.mesh.free_nodes.size,):
            raise ValueError(
                f"load has {v.shape} entries for {self.mesh.free_nodes.size} "
                f"free nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("load contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def replace(self, values: np.ndarray) -> "LoadFunctional":
        return LoadFunctional(values, self.mesh)


def load_from_values(mesh: Mesh, values) -> LoadFunctional:
    """Wrap an array of free-node coefficients as a load functional."""
    arr = np.broadcast_to(np.asarray(values, dtype=float),
                          (mesh.free_nodes.size,)).copy()
    return LoadFunctional(arr, mesh)


# ---------------------------------------------------------------------------
# element quantities

def _element_gradient_maps(mesh: Mesh) -> np.ndarray:
    """Per-element gradient coefficient arrays, shape (E, dim, dim+1).

    Row block G_T maps the element's vertex values to the constant
    gradient of the P1 interpolant on that element.
    """
    p = mesh.nodes[mesh.elements]
    E = mesh.n_elems
    out = np.empty((E, mesh.dim, mesh.dim + 1))
    if mesh.dim == 1:
        ell = (p[:, 1, 0] - p[:, 0, 0])
        out[:, 0, 0] = -1.0 / ell
        out[:, 0, 1] = 1.0 / ell
        return out
    B = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # (E,2,2)
    Binv_t = np.linalg.inv(B).transpose(0, 2, 1)
    D = np.array([[-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
    return Binv_t @ D


def gradient_operator(mesh: Mesh) -> sp.csr_matrix:
    """Sparse map from all nodal values to stacked element gradients.

    Shape is (n_elems * dim, n_nodes); rows of element T occupy the
    block T*dim .. T*dim + dim - 1.
    """
    G = _element_gradient_maps(mesh)
    E, d, nv = G.shape
    rows = np.repeat(np.arange(E * d), nv)
    cols = np.repeat(mesh.elements, d, axis=0).ravel()
    data = G.reshape(E * d, nv).ravel()
    return sp.coo_matrix((data, (rows, cols)),
                         shape=(E * d, mesh.n_nodes)).tocsr()


def element_gradients(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Per-element gradient of the P1 function with given nodal values."""
    vals = np.asarray(values, dtype=float)
    G = _element_gradient_maps(mesh)
    return np.einsum("edv,ev->ed", G, vals[mesh.elements])


def lumped_mass_weights(mesh: Mesh) -> np.ndarray:
    """Diagonal (lumped) mass weights at every node."""
    w = np.zeros(mesh.n_nodes)
    share = np.repeat(mesh.element_sizes / (mesh.dim + 1), mesh.dim + 1)
    np.add.at(w, mesh.elements.ravel(), share)
    return w


# ---------------------------------------------------------------------------
# assembly

def _full_operator_matrix(mesh: Mesh, diffusion, advection, reaction):
    E, d = mesh.n_elems, mesh.dim
    nv = d + 1
    diff = np.broadcast_to(np.asarray(diffusion, dtype=float), (E,))
    if np.any(diff <= 0):
        raise ValueError("diffusion must be positive")
    if reaction < 0:
        raise ValueError("reaction must be nonnegative")
    adv = None
    if advection is not None:
        adv = np.asarray(advection, dtype=float).reshape(-1)
        if adv.shape != (d,):
            raise ValueError(f"advection must have {d} components")
        if not np.any(adv):
            adv = None

    G = _element_gradient_maps(mesh)                       # (E, d, nv)
    sizes = mesh.element_sizes
    # stiffness: diff * |T| * G^T G
    K = np.einsum("e,edi,edj->eij", diff * sizes, G, G)
    if adv is not None:
        # row i gets (b . grad phi_j) * int phi_i = (b . G_j) * |T|/nv
        bG = np.einsum("d,edj->ej", adv, G)                # (E, nv)
        K += (sizes / nv)[:, None, None] * bG[:, None, :]
    if reaction > 0:
        lump = reaction * sizes / nv
        K[:, np.arange(nv), np.arange(nv)] += lump[:, None]

    rows = np.repeat(mesh.elements, nv, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, nv)).ravel()
    A = sp.coo_matrix((K.ravel(), (rows, cols)),
                      shape=(mesh.n_nodes, mesh.n_nodes))
    A.sum_duplicates()
    return A.tocsr()


def assemble_operator(mesh: Mesh, diffusion=1.0, advection=None,
                      reaction: float = 0.0,
                      description: str = "") -> DiscreteOperator:
    """Assemble the P1 operator on the free nodes of ``mesh``."""
    A = _full_operator_matrix(mesh, diffusion, advection, reaction)
    free = mesh.free_nodes
    Ared = A[free][:, free].tocsr()
    Ared.sum_duplicates()
    sym = _is_symmetric(Ared)
    return DiscreteOperator(
        matrix=Ared,
        mesh=mesh,
        symmetric=sym,
        is_m_matrix=check_m_matrix(Ared),
        coercivity_estimate=estimate_coercivity(Ared),
        description=description or _describe(diffusion, advection, reaction),
    )


def _describe(diffusion, advection, reaction) -> str:
    parts = [f"diffusion={diffusion!r}"]
    if advection is not None:
        parts.append(f"advection={list(np.atleast_1d(advection))!r}")
    if reaction:
        parts.append(f"reaction={reaction!r}")
    return ", ".join(parts)


def assemble_mass(mesh: Mesh, lumped: bool = True) -> DiscreteOperator:
    """Mass matrix over the free nodes (lumped by default)."""
    if lumped:
        w = lumped_mass_weights(mesh)[mesh.free_nodes]
        M = sp.diags(w).tocsr()
    else:
        nv = mesh.dim + 1
        base = (np.ones((nv, nv)) + np.eye(nv)) / (nv * (nv + 1))
        K = mesh.element_sizes[:, None, None] * base[None]
        rows = np.repeat(mesh.elements, nv, axis=1).ravel()
        cols = np.tile(mesh.elements, (1, nv)).ravel()
        Mfull = sp.coo_matrix((K.ravel(), (rows, cols)),
                              shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
        M = Mfull[mesh.free_nodes][:, mesh.free_nodes].tocsr()
    return DiscreteOperator(
        matrix=M, mesh=mesh, symmetric=True,
        is_m_matrix=check_m_matrix(M),
        coercivity_estimate=estimate_coercivity(M),
        description="lumped mass" if lumped else "consistent mass",
    )


def assemble_load(mesh: Mesh, f) -> LoadFunctional:
    """Load functional of ``f`` by the midpoint rule.

    ``f`` may be a constant or a callable of ``dim`` coordinates.
    Entry i collects sum over elements T containing node i of
    |T| * f(x_T) / (dim + 1), restricted to the free nodes.
    """
    if callable(f):
        fm = np.array([float(f(*m)) for m in mesh.midpoints])
    else:
        fm = np.full(mesh.n_elems, float(f))
    if not np.all(np.isfinite(fm)):
        raise ValueError("load function produced non-finite values")
    vec = np.zeros(mesh.n_nodes)
    share = np.repeat(mesh.element_sizes * fm / (mesh.dim + 1), mesh.dim + 1)
    np.add.at(vec, mesh.elements.ravel(), share)
    return LoadFunctional(vec[mesh.free_nodes], mesh)


# ---------------------------------------------------------------------------
# matrix property checks

def _is_symmetric(A: sp.csr_matrix, tol: float = 1e-12) -> bool:
    d = (A - A.T).tocoo()
    if d.nnz == 0:
        return True
    scale = max(np.abs(A.data).max(), 1.0) if A.nnz else 1.0
    return bool(np.max(np.abs(d.data)) <= tol * scale)


def check_m_matrix(A: sp.csr_matrix, tol: float = 1e-12) -> bool:
    """Sufficient M-matrix test used as the order-preservation guard.

    Checks: positive diagonal, nonpositive off-diagonal entries, weak
    row diagonal dominance with at least one strictly dominant row.
    """
    A = A.tocsr()
    n = A.shape[0]
    if n == 0:
        return False
    diag = A.diagonal()
    scale = max(np.abs(A.data).max(), 1.0) if A.nnz else 1.0
    if np.any(diag <= 0):
        return False
    C = A.tocoo()
    off = C.row != C.col
    if np.any(C.data[off] > tol * scale):
        return False
    offsums = np.zeros(n)
    np.add.at(offsums, C.row[off], np.abs(C.data[off]))
    slack = diag - offsums
    if np.any(slack < -tol * scale * n):
        return False
    return bool(np.any(slack > tol * scale * n))


def estimate_coercivity(A: sp.csr_matrix, trials: int = 32,
                        seed: int = 0) -> float:
    """Smallest Rayleigh quotient v.Av / v.v over random unit vectors.

    A sampled surrogate, deterministic via the fixed seed.  It can only
    overestimate the true smallest eigenvalue of the symmetric part.
    """
    n = A.shape[0]
    if n == 0:
        return float("nan")
    rng = np.random.default_rng(seed)
    best = np.inf
    for _ in range(trials):
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        best = min(best, float(v @ (A @ v)))
    return best


# ---------------------------------------------------------------------------
# solves and norms

def restrict_free(mesh: Mesh, full_values: np.ndarray) -> np.ndarray:
    """Values at free nodes, from a full nodal array."""
    return np.asarray(full_values, dtype=float)[mesh.free_nodes]


def extend_free(mesh: Mesh, free_values: np.ndarray) -> np.ndarray:
    """Full nodal array with zeros on the Dirichlet boundary."""
    out = np.zeros(mesh.n_nodes)
    out[mesh.free_nodes] = free_values
    return out


def _as_free(op_or_mesh, values: np.ndarray) -> np.ndarray:
    mesh = op_or_mesh.mesh if hasattr(op_or_mesh, "mesh") else op_or_mesh
    v = np.asarray(values, dtype=float)
    if v.shape == (mesh.n_nodes,):
        return v[mesh.free_nodes]
    if v.shape == (mesh.free_nodes.size,):
        return v
    raise ValueError(f"values of shape {v.shape} match neither all nodes "
                     f"({mesh.n_nodes}) nor free nodes ({mesh.free_nodes.size})")


def solve_linear(op: DiscreteOperator, load: LoadFunctional) -> NodalVector:
    """Direct sparse solve A u = f with a hard residual check.

    The residual must satisfy ||A u - f||_inf <= 1e-10 * (1 + ||f||_inf)
    or a SolverError carrying a condition estimate is raised.
    """
    require_same_mesh(op.mesh, load.mesh, "operator and load")
    f = load.values
    if f.size == 0:
        return NodalVector(np.zeros(op.mesh.n_nodes), op.mesh)
    try:
        u = spla.spsolve(op.matrix.tocsc(), f)
    except RuntimeError as exc:  # SuperLU signals singularity this way
        raise SolverError(f"direct solve failed: {exc}; "
                          f"condition estimate {_cond_estimate(op.matrix):.3e}")
    if not np.all(np.isfinite(u)):
        raise SolverError("direct solve produced non-finite values; "
                          f"condition estimate {_cond_estimate(op.matrix):.3e}")
    res = np.max(np.abs(op.matrix @ u - f)) if f.size else 0.0
    fn = np.max(np.abs(f)) if f.size else 0.0
    if res > 1e-10 * (1.0 + fn):
        raise SolverError(
            f"linear solve residual {res:.3e} exceeds tolerance; "
            f"condition estimate {_cond_estimate(op.matrix):.3e}")
    return NodalVector(extend_free(op.mesh, u), op.mesh)


def _cond_estimate(A: sp.csr_matrix) -> float:
    n = A.shape[0]
    if n == 0:
        return 0.0
    if n <= 1500:
        try:
            return float(np.linalg.cond(A.toarray()))
        except np.linalg.LinAlgError:
            return float("inf")
    return float("nan")


def sup_norm(values: np.ndarray) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.max(np.abs(v))) if v.size else 0.0


def l2_norm(mesh: Mesh, values: np.ndarray) -> float:
    """Lumped-mass L2 norm of a full nodal array."""
    v = np.asarray(values, dtype=float)
    if v.shape != (mesh.n_nodes,):
        raise ValueError("l2_norm expects a full nodal array")
    w = lumped_mass_weights(mesh)
    return float(np.sqrt(np.sum(w * v * v)))


def energy_norm(op: DiscreteOperator, values: np.ndarray) -> float:
    """Energy norm sqrt(v . A_sym v); accepts full or free-node arrays."""
    v = _as_free(op, values)
    q = float(v @ (op.matrix @ v))
    return float(np.sqrt(max(q, 0.0)))


def h1_seminorm(mesh: Mesh, values: np.ndarray) -> float:
    """Broken H1 seminorm of a P1 function from its nodal values."""
    g = element_gradients(mesh, values)
    return float(np.sqrt(np.sum(mesh.element_sizes
                                * np.sum(g * g, axis=1))))
