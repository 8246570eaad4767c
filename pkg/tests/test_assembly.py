import math

import numpy as np
import pytest

from movingsets.assembly import (assemble_load, assemble_mass,
                                 assemble_operator, check_m_matrix,
                                 element_gradients, energy_norm,
                                 estimate_coercivity, extend_free,
                                 h1_seminorm, l2_norm, load_from_values,
                                 lumped_mass_weights, restrict_free,
                                 solve_linear, sup_norm)
from movingsets.errors import MeshMismatchError
from movingsets.mesh import (build_interval_mesh, build_triangle_mesh,
                             interpolate_nodal)


def test_1d_stiffness_matrix_entries():
    mesh = build_interval_mesh(4)
    op = assemble_operator(mesh)
    A = np.asarray(op.matrix.todense())
    h = 0.25
    expect = (1.0 / h) * (2.0 * np.eye(3) - np.eye(3, k=1) - np.eye(3, k=-1))
    assert np.allclose(A, expect)
    assert op.symmetric
    assert op.is_m_matrix
    assert op.n_free == 3


def test_reaction_adds_lumped_mass():
    mesh = build_interval_mesh(4)
    plain = assemble_operator(mesh)
    reacted = assemble_operator(mesh, reaction=3.0)
    diff = np.asarray((reacted.matrix - plain.matrix).todense())
    m = lumped_mass_weights(mesh)[mesh.free_nodes]
    assert np.allclose(diff, np.diag(3.0 * m))


def test_advection_breaks_symmetry_keeps_m_matrix():
    mesh = build_interval_mesh(8)
    op = assemble_operator(mesh, advection=(1.0,))
    assert not op.symmetric
    assert op.is_m_matrix  # upwinding keeps signs right at this Peclet
    assert check_m_matrix(op.matrix)


def test_poisson_solution_matches_exact():
    # -u'' = 1 on (0,1), u = x(1-x)/2; P1 on a uniform mesh is nodally
    # exact for this right-hand side
    mesh = build_interval_mesh(32)
    op = assemble_operator(mesh)
    u = solve_linear(op, assemble_load(mesh, 1.0))
    xs = mesh.nodes[:, 0]
    assert np.allclose(u.values, 0.5 * xs * (1.0 - xs), atol=1e-12)


def test_2d_poisson_converges():
    exact = lambda x, y: math.sin(math.pi * x) * math.sin(math.pi * y)
    f = lambda x, y: 2.0 * math.pi ** 2 * exact(x, y)
    errs = []
    for n in (4, 8, 16):
        mesh = build_triangle_mesh(n, n)
        u = solve_linear(assemble_operator(mesh), assemble_load(mesh, f))
        ref = interpolate_nodal(exact, mesh)
        errs.append(sup_norm(u.values - ref.values))
    assert errs[0] > errs[1] > errs[2]
    assert math.log2(errs[1] / errs[2]) > 1.5


def test_load_assembly_constant():
    mesh = build_interval_mesh(4)
    load = assemble_load(mesh, 2.0)
    # each interior hat integrates to h against a constant
    assert np.allclose(load.values, 2.0 * 0.25)
    table = load_from_values(mesh, np.full(mesh.free_nodes.size, 2.0 * 0.25))
    assert np.allclose(table.values, load.values)


def test_mass_lumping_sums_to_domain():
    for mesh in (build_interval_mesh(7), build_triangle_mesh(3, 5)):
        m = lumped_mass_weights(mesh)
        assert m.sum() == pytest.approx(1.0)
        assert np.all(m > 0.0)
    M = assemble_mass(build_interval_mesh(7))
    assert M.symmetric


def test_element_gradients_of_linear():
    mesh = build_triangle_mesh(3, 3)
    v = interpolate_nodal(lambda x, y: 4.0 * x - 2.0 * y, mesh).values
    g = element_gradients(mesh, v)
    assert np.allclose(g, np.array([4.0, -2.0]))


def test_coercivity_estimate_positive_and_bounded():
    mesh = build_interval_mesh(16)
    op = assemble_operator(mesh)
    c = estimate_coercivity(op.matrix)
    assert c > 0.0
    # Rayleigh quotient of the 1D Laplacian is at least pi^2
    assert c >= 0.5 * math.pi ** 2


def test_restrict_extend_roundtrip():
    mesh = build_interval_mesh(6)
    full = np.arange(mesh.n_nodes, dtype=float)
    free = restrict_free(mesh, full)
    back = extend_free(mesh, free)
    assert np.allclose(back[mesh.free_nodes], full[mesh.free_nodes])
    assert np.allclose(np.delete(back, mesh.free_nodes), 0.0)


def test_norms_on_known_function():
    mesh = build_interval_mesh(200)
    v = interpolate_nodal(lambda x: x, mesh).values
    assert sup_norm(v) == pytest.approx(1.0)
    assert l2_norm(mesh, v) == pytest.approx(1.0 / math.sqrt(3.0), rel=1e-2)
    assert h1_seminorm(mesh, v) == pytest.approx(1.0, rel=1e-12)
    # for pure diffusion the energy norm is the H1 seminorm of the
    # interior part; use a function vanishing on the boundary
    w = interpolate_nodal(lambda x: x * (1.0 - x), mesh).values
    op = assemble_operator(mesh)
    assert energy_norm(op, w) == pytest.approx(h1_seminorm(mesh, w),
                                               rel=1e-12)


def test_solve_linear_rejects_foreign_mesh():
    op = assemble_operator(build_interval_mesh(4))
    other = assemble_load(build_interval_mesh(5), 1.0)
    with pytest.raises(MeshMismatchError):
        solve_linear(op, other)
