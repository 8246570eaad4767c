"""Simplicial meshes and piecewise linear (P1) nodal fields.

Uniform interval meshes and structured triangulations of axis-aligned
rectangles, plus the P1 machinery the rest of the package builds on:
nodal interpolation, pointwise reconstruction, shape regularity metrics,
uniform refinement with nested prolongation, and a plain-text mesh file
reader.

Conventions
-----------
* Nodes are stored as an ``(n_nodes, dim)`` float array, elements as an
  ``(n_elems, dim + 1)`` integer array of node indices.
* ``boundary_nodes`` lists the nodes carrying homogeneous Dirichlet data;
  every other node is free.
* The rectangle generator splits each grid cell along the diagonal from
  the lower-left to the upper-right corner, producing nonobtuse right
  triangles (the stiffness matrices they generate are M-matrices).
* The mesh size ``h`` is the largest element diameter.  The inscribed
  diameter of an element is the diameter of its largest inscribed ball;
  in 1D it is defined as the element diameter itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import MeshMismatchError

__all__ = [
    "Mesh",
    "NodalVector",
    "build_interval_mesh",
    "build_triangle_mesh",
    "read_mesh_file",
    "refine",
    "mesh_size",
    "element_diameters",
    "inscribed_diameters",
    "shape_regularity",
    "same_mesh",
    "require_same_mesh",
    "nodal",
    "interpolate_nodal",
    "evaluate_p1",
    "interpolation_error",
    "is_nested",
    "nested_node_map",
    "prolongation_matrix",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable simplicial mesh.

    Attributes
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    nodes : ndarray, shape (n_nodes, dim)
        Node coordinates.
    elements : ndarray, shape (n_elems, dim + 1)
        Node indices of each simplex.
    boundary_nodes : ndarray
        Sorted indices of Dirichlet nodes.
    h : float
        Largest element diameter.
    midpoints : ndarray, shape (n_elems, dim)
        Element barycenters.
    element_sizes : ndarray, shape (n_elems,)
        Lengths (1D) or areas (2D).
    structure : tuple or None
        Generator fingerprint for meshes built by this module; ``None``
        for meshes loaded from file.  Used by :func:`refine` and the
        nestedness checks.
    """

    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary_nodes: np.ndarray
    h: float
    midpoints: np.ndarray
    element_sizes: np.ndarray
    structure: tuple | None = None
    free_nodes: np.ndarray = field(init=False)

    def __post_init__(self):
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        object.__setattr__(self, "free_nodes", _readonly(np.nonzero(mask)[0]))

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elems(self) -> int:
        return self.elements.shape[0]

    def __repr__(self) -> str:  # keep study logs short
        return (f"Mesh(dim={self.dim}, nodes={self.n_nodes}, "
                f"elems={self.n_elems}, h={self.h:.6g})")


@dataclass(frozen=True, eq=False)
class NodalVector:
    """Values of a P1 function at every node of a mesh.

    The mesh reference is part of the value's identity: operations
    between nodal vectors attached to different meshes raise
    :class:`MeshMismatchError`.
    """

    values: np.ndarray
    mesh: Mesh

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.mesh.n_nodes,):
            raise ValueError(
                f"nodal vector has {v.shape} values for a mesh with "
                f"{self.mesh.n_nodes} nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("nodal vector contains non-finite values")
        object.__setattr__(self, "values", _readonly(v))

    def replace(self, values: np.ndarray) -> "NodalVector":
        """Return a new vector with the same mesh and new values."""
        return NodalVector(values, self.mesh)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def nodal(mesh: Mesh, values) -> NodalVector:
    """Wrap values (scalar or array) as a NodalVector on ``mesh``."""
    arr = np.broadcast_to(np.asarray(values, dtype=float),
                          (mesh.n_nodes,)).copy()
    return NodalVector(arr, mesh)


def same_mesh(a: Mesh, b: Mesh) -> bool:
    """True when two meshes are the same object or bitwise identical."""
    if a is b:
        return True
    return (a.dim == b.dim and a.nodes.shape == b.nodes.shape
            and a.elements.shape == b.elements.shape
            and np.array_equal(a.nodes, b.nodes)
            and np.array_equal(a.elements, b.elements)
            and np.array_equal(a.boundary_nodes, b.boundary_nodes))


def require_same_mesh(a: Mesh, b: Mesh, what: str = "operands") -> None:
    if not same_mesh(a, b):
        raise MeshMismatchError(f"{what} live on different meshes: {a} vs {b}")


# ---------------------------------------------------------------------------
# generators

def build_interval_mesh(n_cells: int, a: float = 0.0, b: float = 1.0) -> Mesh:
    """Uniform mesh of the interval (a, b) with ``n_cells`` cells.

    Nodes are ``a + k*(b-a)/n_cells`` for k = 0..n_cells; the two end
    nodes are the Dirichlet boundary.
    """
    if n_cells < 1:
        raise ValueError(f"n_cells must be >= 1, got {n_cells}")
    if not (np.isfinite(a) and np.isfinite(b) and a < b):
        raise ValueError(f"invalid interval ({a}, {b})")
    x = np.linspace(a, b, n_cells + 1)
    nodes = x.reshape(-1, 1)
    elements = np.column_stack([np.arange(n_cells), np.arange(1, n_cells + 1)])
    hs = np.diff(x)
    return Mesh(
        dim=1,
        nodes=_readonly(nodes),
        elements=_readonly(elements.astype(np.int64)),
        boundary_nodes=_readonly(np.array([0, n_cells], dtype=np.int64)),
        h=float(hs.max()),
        midpoints=_readonly(0.5 * (nodes[:-1] + nodes[1:])),
        element_sizes=_readonly(hs),
        structure=("interval", n_cells, float(a), float(b)),
    )


def build_triangle_mesh(nx: int, ny: int,
                        xspan: tuple[float, float] = (0.0, 1.0),
                        yspan: tuple[float, float] = (0.0, 1.0)) -> Mesh:
    """Structured triangulation of a rectangle with nx-by-ny grid cells.

    Each cell is split along its lower-left to upper-right diagonal into
    two right triangles.  All rectangle-boundary nodes are Dirichlet.
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"grid counts must be >= 1, got ({nx}, {ny})")
    ax, bx = map(float, xspan)
    ay, by = map(float, yspan)
    if not (ax < bx and ay < by):
        raise ValueError(f"invalid spans {xspan} x {yspan}")
    xs = np.linspace(ax, bx, nx + 1)
    ys = np.linspace(ay, by, ny + 1)
    X, Y = np.meshgrid(xs, ys)          # row iy, column ix
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(ix, iy):
        return iy * (nx + 1) + ix

    tris = []
    for iy in range(ny):
        for ix in range(nx):
            ll, lr = nid(ix, iy), nid(ix + 1, iy)
            ul, ur = nid(ix, iy + 1), nid(ix + 1, iy + 1)
            tris.append((ll, lr, ur))   # below the diagonal
            tris.append((ll, ur, ul))   # above the diagonal
    elements = np.array(tris, dtype=np.int64)

    on_boundary = ((np.isclose(nodes[:, 0], ax)) | (np.isclose(nodes[:, 0], bx))
                   | (np.isclose(nodes[:, 1], ay)) | (np.isclose(nodes[:, 1], by)))
    boundary = np.nonzero(on_boundary)[0]

    mids = nodes[elements].mean(axis=1)
    sizes = _triangle_areas(nodes, elements)
    diams = _triangle_diameters(nodes, elements)
    return Mesh(
        dim=2,
        nodes=_readonly(nodes),
        elements=_readonly(elements),
        boundary_nodes=_readonly(boundary.astype(np.int64)),
        h=float(diams.max()),
        midpoints=_readonly(mids),
        element_sizes=_readonly(sizes),
        structure=("rectangle", nx, ny, ax, bx, ay, by),
    )


def refine(mesh: Mesh) -> Mesh:
    """Uniformly refined mesh (doubled resolution, h exactly halved).

    Only meshes produced by the generators in this module can be
    refined; file-loaded meshes carry no generator fingerprint.
    """
    if mesh.structure is None:
        raise ValueError("cannot refine a mesh without generator structure")
    kind = mesh.structure[0]
    if kind == "interval":
        _, n, a, b = mesh.structure
        return build_interval_mesh(2 * n, a, b)
    _, nx, ny, ax, bx, ay, by = mesh.structure
    return build_triangle_mesh(2 * nx, 2 * ny, (ax, bx), (ay, by))


# ---------------------------------------------------------------------------
# geometry metrics

def _triangle_areas(nodes, elements) -> np.ndarray:
    p = nodes[elements]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _triangle_diameters(nodes, elements) -> np.ndarray:
    p = nodes[elements]
    e0 = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    e1 = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
    e2 = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    return np.maximum(e0, np.maximum(e1, e2))


def element_diameters(mesh: Mesh) -> np.ndarray:
    """Diameter of every element."""
    if mesh.dim == 1:
        return np.abs(mesh.nodes[mesh.elements[:, 1], 0]
                      - mesh.nodes[mesh.elements[:, 0], 0])
    return _triangle_diameters(mesh.nodes, mesh.elements)


def inscribed_diameters(mesh: Mesh) -> np.ndarray:
    """Diameter of the largest inscribed ball of every element.

    For triangles this is twice the inradius, 4*area/perimeter.  For 1D
    elements the inscribed diameter is the element length by convention.
    """
    if mesh.dim == 1:
        return element_diameters(mesh)
    p = mesh.nodes[mesh.elements]
    e0 = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    e1 = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
    e2 = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    per = e0 + e1 + e2
    return 4.0 * _triangle_areas(mesh.nodes, mesh.elements) / per


def shape_regularity(mesh: Mesh) -> float:
    """Largest ratio of element diameter to inscribed-ball diameter.

    Uniform interval meshes give exactly 1; the structured rectangle
    generator gives a constant independent of the resolution.
    """
    return float(np.max(element_diameters(mesh) / inscribed_diameters(mesh)))


def mesh_size(mesh: Mesh) -> float:
    """Largest element diameter, recomputed from the geometry."""
    return float(np.max(element_diameters(mesh)))


# ---------------------------------------------------------------------------
# interpolation and reconstruction

def interpolate_nodal(f, mesh: Mesh) -> NodalVector:
    """Nodal interpolant of a callable: evaluate f at every node.

    ``f`` takes ``dim`` scalar coordinates and returns a finite scalar.
    """
    vals = np.array([float(f(*p)) for p in mesh.nodes])
    if not np.all(np.isfinite(vals)):
        raise ValueError("interpolated function produced non-finite values")
    return NodalVector(vals, mesh)


def _locate(mesh: Mesh, points: np.ndarray, tol: float = 1e-12):
    """Containing element and barycentric weights for each point.

    Returns ``(elem_index, weights)`` with weights of shape
    ``(n_points, dim + 1)``.  Points outside the mesh raise ValueError.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != mesh.dim:
        raise ValueError(f"points have dim {pts.shape[1]}, mesh dim {mesh.dim}")
    n = pts.shape[0]
    elem = np.full(n, -1, dtype=np.int64)
    w = np.zeros((n, mesh.dim + 1))

    if mesh.dim == 1 and np.all(np.diff(mesh.nodes[:, 0]) > 0):
        x = mesh.nodes[:, 0]
        a, b = x[0], x[-1]
        scale = b - a
        xi = pts[:, 0]
        if np.any(xi < a - tol * scale) or np.any(xi > b + tol * scale):
            raise ValueError("point outside mesh domain")
        idx = np.clip(np.searchsorted(x, xi, side="right") - 1, 0, len(x) - 2)
        x0, x1 = x[idx], x[idx + 1]
        t = np.clip((xi - x0) / (x1 - x0), 0.0, 1.0)
        elem[:] = idx
        w[:, 0] = 1.0 - t
        w[:, 1] = t
        return elem, w

    structure = mesh.structure
    if structure is not None and structure[0] == "rectangle":
        _, nx, ny, ax, bx, ay, by = structure
        hx, hy = (bx - ax) / nx, (by - ay) / ny
        scale = max(bx - ax, by - ay)
        X, Y = pts[:, 0], pts[:, 1]
        inside = ((X >= ax - tol * scale) & (X <= bx + tol * scale)
                  & (Y >= ay - tol * scale) & (Y <= by + tol * scale))
        if not np.all(inside):
            raise ValueError("point outside mesh domain")
        ix = np.clip(((X - ax) / hx).astype(np.int64), 0, nx - 1)
        iy = np.clip(((Y - ay) / hy).astype(np.int64), 0, ny - 1)
        # local coordinates in the cell; the lower-left/upper-right split
        # puts (s >= t) in the lower triangle
        s = (X - (ax + ix * hx)) / hx
        t = (Y - (ay + iy * hy)) / hy
        lower = s >= t
        elem[:] = 2 * (iy * nx + ix) + np.where(lower, 0, 1)
        # lower triangle (ll, lr, ur): weights (1-s, s-t, t)
        # upper triangle (ll, ur, ul): weights (1-t, s, t-s)
        w[lower, 0] = 1.0 - s[lower]
        w[lower, 1] = s[lower] - t[lower]
        w[lower, 2] = t[lower]
        up = ~lower
        w[up, 0] = 1.0 - t[up]
        w[up, 1] = s[up]
        w[up, 2] = t[up] - s[up]
        w = np.clip(w, 0.0, 1.0)
        w /= w.sum(axis=1, keepdims=True)
        return elem, w

    # generic fallback: scan elements, vectorised over unplaced points
    remaining = np.arange(n)
    p = mesh.nodes[mesh.elements]
    for e in range(mesh.n_elems):
        if remaining.size == 0:
            break
        a2 = p[e, 0]
        T = (p[e, 1:] - a2).T               # dim x dim
        rhs = pts[remaining] - a2
        lam = np.linalg.solve(T, rhs.T).T
        lam0 = 1.0 - lam.sum(axis=1)
        ok = (lam0 >= -1e-10) & np.all(lam >= -1e-10, axis=1)
        hit = remaining[ok]
        elem[hit] = e
        w[hit, 0] = lam0[ok]
        w[hit, 1:] = lam[ok]
        remaining = remaining[~ok]
    if np.any(elem < 0):
        raise ValueError("point outside mesh domain")
    return elem, np.clip(w, 0.0, 1.0)


def evaluate_p1(mesh: Mesh, values: np.ndarray, points) -> np.ndarray:
    """Evaluate the P1 reconstruction of nodal values at given points."""
    vals = np.asarray(values, dtype=float)
    if vals.shape != (mesh.n_nodes,):
        raise ValueError("values length does not match node count")
    elem, w = _locate(mesh, points)
    return np.sum(vals[mesh.elements[elem]] * w, axis=1)


def interpolation_error(f, mesh: Mesh, n_samples: int = 10000) -> float:
    """Sup-norm gap between f and its nodal interpolant, sampled densely.

    Samples live on a uniform grid over the coordinate bounding box,
    which equals the domain for the structured generators.
    """
    vals = interpolate_nodal(f, mesh).values
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    if mesh.dim == 1:
        pts = np.linspace(lo[0], hi[0], n_samples)[:, None]
    else:
        k = max(2, int(np.sqrt(n_samples)))
        xs = np.linspace(lo[0], hi[0], k)
        ys = np.linspace(lo[1], hi[1], k)
        X, Y = np.meshgrid(xs, ys)
        pts = np.column_stack([X.ravel(), Y.ravel()])
    recon = evaluate_p1(mesh, vals, pts)
    exact = np.array([f(*p) for p in pts])
    return float(np.max(np.abs(recon - exact)))


# ---------------------------------------------------------------------------
# hierarchies

def is_nested(coarse: Mesh, fine: Mesh) -> bool:
    """True when the coarse P1 space is a subspace of the fine one.

    Decidable only for generator-built meshes: same kind, same span,
    and fine cell counts that are integer multiples of the coarse ones.
    """
    cs, fs = coarse.structure, fine.structure
    if cs is None or fs is None or cs[0] != fs[0]:
        return False
    if cs[0] == "interval":
        _, nc, ac, bc = cs
        _, nf, af, bf = fs
        return (ac, bc) == (af, bf) and nf % nc == 0
    _, ncx, ncy, *span_c = cs
    _, nfx, nfy, *span_f = fs
    return span_c == span_f and nfx % ncx == 0 and nfy % ncy == 0 \
        and nfx // ncx == nfy // ncy


def nested_node_map(coarse: Mesh, fine: Mesh) -> np.ndarray:
    """Fine-node index of every coarse node, for a nested pair."""
    if not is_nested(coarse, fine):
        raise ValueError("node map requires a nested generator pair")
    scale = max(np.max(np.abs(fine.nodes)), 1.0)
    lookup = {tuple(np.round(p / scale, 12)): i
              for i, p in enumerate(fine.nodes)}
    out = np.empty(coarse.n_nodes, dtype=np.int64)
    for j, p in enumerate(coarse.nodes):
        key = tuple(np.round(p / scale, 12))
        if key not in lookup:
            raise ValueError("coarse node missing from fine mesh")
        out[j] = lookup[key]
    return out


def prolongation_matrix(coarse: Mesh, fine: Mesh) -> sp.csr_matrix:
    """Sparse P1 interpolation matrix from coarse nodes to fine nodes.

    For nested meshes the prolongation is exact: prolonging a coarse
    function and restricting it back reproduces the coarse values.
    """
    if not is_nested(coarse, fine):
        raise ValueError("prolongation requires a nested generator pair")
    elem, w = _locate(coarse, fine.nodes)
    rows = np.repeat(np.arange(fine.n_nodes), coarse.dim + 1)
    cols = coarse.elements[elem].ravel()
    data = w.ravel()
    P = sp.coo_matrix((data, (rows, cols)),
                      shape=(fine.n_nodes, coarse.n_nodes))
    P.sum_duplicates()
    P = P.tocsr()
    P.data[np.abs(P.data) < 1e-14] = 0.0
    P.eliminate_zeros()
    return P


# ---------------------------------------------------------------------------
# file format

def read_mesh_file(path) -> Mesh:
    """Read a mesh from the plain-text exchange format.

    Line 1: ``dim n_nodes n_elems``.  Then ``n_nodes`` coordinate lines,
    ``n_elems`` element lines of 0-based node indices, and one final
    line listing the boundary node indices (possibly empty).
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh]
    lines = [ln for ln in lines if ln and not ln.startswith("#")] or [""]
    head = lines[0].split()
    if len(head) != 3:
        raise ValueError(f"bad mesh header {lines[0]!r}: want 'dim n_nodes n_elems'")
    dim, n_nodes, n_elems = (int(t) for t in head)
    if dim not in (1, 2):
        raise ValueError(f"unsupported mesh dimension {dim}")
    want = 1 + n_nodes + n_elems
    if len(lines) < want:
        raise ValueError(f"mesh file truncated: {len(lines)} lines, need >= {want}")

    nodes = np.array([[float(t) for t in ln.split()]
                      for ln in lines[1:1 + n_nodes]])
    if nodes.shape != (n_nodes, dim):
        raise ValueError("node block has wrong shape")
    elements = np.array([[int(t) for t in ln.split()]
                         for ln in lines[1 + n_nodes:1 + n_nodes + n_elems]],
                        dtype=np.int64)
    if elements.shape != (n_elems, dim + 1):
        raise ValueError("element block has wrong shape")
    if elements.min() < 0 or elements.max() >= n_nodes:
        raise ValueError("element indices out of range")

    if len(lines) > want:
        boundary = np.array(sorted({int(t) for t in lines[want].split()}),
                            dtype=np.int64)
    else:
        boundary = np.array([], dtype=np.int64)
    if boundary.size and (boundary.min() < 0 or boundary.max() >= n_nodes):
        raise ValueError("boundary indices out of range")

    if dim == 1:
        sizes = np.abs(nodes[elements[:, 1], 0] - nodes[elements[:, 0], 0])
        diam = sizes
    else:
        sizes = _triangle_areas(nodes, elements)
        diam = _triangle_diameters(nodes, elements)
    if np.any(sizes <= 0):
        raise ValueError("degenerate element in mesh file")
    mids = nodes[elements].mean(axis=1)
    return Mesh(
        dim=dim,
        nodes=_readonly(nodes),
        elements=_readonly(elements),
        boundary_nodes=_readonly(boundary),
        h=float(diam.max()),
        midpoints=_readonly(mids),
        element_sizes=_readonly(sizes),
        structure=None,
    )
