import numpy as np
import pytest

from movingsets.assembly import (assemble_mass, assemble_operator,
                                 lumped_mass_weights)
from movingsets.constraints import (FEASIBILITY_TOL, gradient_bound, inf,
                                    is_feasible, mass_distance,
                                    midpoint_obstacle, nodal_obstacle,
                                    penalty_sq, pos_part, project_mass,
                                    scale_recovery,
                                    singular_perturbation_recovery, sup,
                                    truncation_recovery, unbounded,
                                    violation)
from movingsets.errors import PreconditionError
from movingsets.mesh import (build_interval_mesh, build_triangle_mesh,
                             interpolate_nodal, nodal)


@pytest.fixture
def mesh():
    return build_interval_mesh(16)


def test_nodal_feasibility_one_sided(mesh):
    K = nodal_obstacle(mesh, 0.2)
    assert is_feasible(nodal(mesh, 0.1), K)
    assert is_feasible(nodal(mesh, -5.0), K)  # one-sided: below is fine
    v = nodal(mesh, 0.25)
    assert not is_feasible(v, K)
    assert violation(v, K) == pytest.approx(0.05)


def test_nodal_feasibility_two_sided(mesh):
    K = nodal_obstacle(mesh, 0.2, psi_abs=True)
    assert is_feasible(nodal(mesh, -0.15), K)
    assert violation(nodal(mesh, -0.3), K) == pytest.approx(0.1)


def test_midpoint_obstacle_sees_element_means(mesh):
    K = midpoint_obstacle(mesh, 0.5)
    v = interpolate_nodal(lambda x: x, mesh)
    # midpoint values run up to 1 - h/2
    assert violation(v, K) == pytest.approx(0.5 - mesh.h / 2.0)
    assert is_feasible(nodal(mesh, 0.5), K)


def test_gradient_bound_checks_slopes(mesh):
    K = gradient_bound(mesh, 1.0, p=2.0)
    assert is_feasible(interpolate_nodal(lambda x: 0.9 * x, mesh), K)
    steep = interpolate_nodal(lambda x: 2.0 * x, mesh)
    assert violation(steep, K) == pytest.approx(1.0)
    with pytest.raises(PreconditionError):
        gradient_bound(mesh, -1.0)


def test_unbounded_always_feasible(mesh):
    K = unbounded(mesh)
    assert is_feasible(nodal(mesh, 1e9), K)
    assert violation(nodal(mesh, 1e9), K) == 0.0
    assert penalty_sq(nodal(mesh, 1e9), K) == 0.0


def test_lattice_operations(mesh):
    a = nodal(mesh, 0.3)
    b = interpolate_nodal(lambda x: x - 0.5, mesh)
    hi = sup(a, b)
    lo = inf(a, b)
    assert np.all(hi.values >= a.values - 1e-15)
    assert np.all(lo.values <= b.values + 1e-15)
    assert np.allclose(hi.values + lo.values, a.values + b.values)
    p = pos_part(b)
    assert np.all(p.values >= 0.0)


def test_project_mass_is_idempotent_and_feasible(mesh):
    K = nodal_obstacle(mesh, 0.1)
    v = interpolate_nodal(lambda x: np.sin(3.0 * x), mesh)
    p = project_mass(v, K)
    assert is_feasible(p, K)
    again = project_mass(p, K)
    assert np.allclose(again.values, p.values, atol=1e-14)
    assert mass_distance(v, K) > 0.0
    assert mass_distance(p, K) == pytest.approx(0.0, abs=1e-14)


def test_penalty_sq_matches_mass_distance_for_nodal(mesh):
    K = nodal_obstacle(mesh, 0.05)
    v = interpolate_nodal(lambda x: 0.3 * np.sin(np.pi * x), mesh)
    assert penalty_sq(v, K) == pytest.approx(mass_distance(v, K) ** 2,
                                             rel=1e-12)
    # hand value on a tiny mesh: single interior node exceeding by e
    small = build_interval_mesh(2)
    Ks = nodal_obstacle(small, 0.1)
    w = nodal(small, 0.0).replace(np.array([0.0, 0.1 + 0.2, 0.0]))
    m = lumped_mass_weights(small)[1]
    assert penalty_sq(w, Ks) == pytest.approx(m * 0.2 ** 2)


def test_penalty_sq_quadrature_for_gradient(mesh):
    K = gradient_bound(mesh, 0.5)
    v = interpolate_nodal(lambda x: x, mesh)  # slope 1 everywhere
    # every element contributes |T| * (1 - 0.5)^2
    assert penalty_sq(v, K) == pytest.approx(0.25)


def test_scale_recovery_restores_feasibility(mesh):
    phi = nodal(mesh, 0.1)
    phi_n = nodal(mesh, 0.08)
    K_n = nodal_obstacle(mesh, phi_n.values)
    w = nodal(mesh, 0.1)
    out = scale_recovery(w, phi, phi_n, nu=0.08)
    assert is_feasible(out, K_n)
    # scaling factor is 1/(1 + 0.02/0.08) = 0.8
    assert np.allclose(out.values, 0.08)
    with pytest.raises(PreconditionError):
        scale_recovery(w, phi, phi_n, nu=0.0)


def test_truncation_recovery_shifts_toward_zero(mesh):
    w = interpolate_nodal(lambda x: x - 0.5, mesh)
    out = truncation_recovery(w, 0.2)
    assert out.values.max() == pytest.approx(0.3)
    assert out.values.min() == pytest.approx(-0.3)
    # values inside the band collapse onto zero
    assert np.all(out.values[np.abs(w.values) <= 0.2] == 0.0)
    with pytest.raises(PreconditionError):
        truncation_recovery(w, -0.1)


def test_singular_perturbation_recovery_feasible(mesh):
    Q = assemble_operator(mesh)
    M = assemble_mass(mesh)
    phi_n = nodal(mesh, 0.05)
    K_n = nodal_obstacle(mesh, phi_n.values)
    w = interpolate_nodal(lambda x: 0.4 * np.sin(np.pi * x), mesh)
    out = singular_perturbation_recovery(w, phi_n, Q, M)
    assert is_feasible(out, K_n, tol=FEASIBILITY_TOL)
    # if w is already admissible the output stays close to w
    w2 = nodal(mesh, 0.0)
    out2 = singular_perturbation_recovery(w2, phi_n, Q, M)
    assert np.allclose(out2.values, 0.0, atol=1e-12)


def test_constraints_reject_mesh_mismatch():
    a = build_interval_mesh(8)
    K = nodal_obstacle(a, 0.1)
    v = nodal(build_interval_mesh(9), 0.0)
    with pytest.raises(Exception):
        violation(v, K)


def test_2d_gradient_bound():
    mesh = build_triangle_mesh(4, 4)
    K = gradient_bound(mesh, 1.5, p=2.0)
    v = interpolate_nodal(lambda x, y: x + y, mesh)  # |grad| = sqrt(2)
    assert is_feasible(v, K)
    tight = gradient_bound(mesh, 1.0, p=2.0)
    assert violation(v, tight) == pytest.approx(np.sqrt(2.0) - 1.0)
