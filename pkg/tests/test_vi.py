import numpy as np
import pytest

from conftest import brute_force_obstacle, random_obstacle_problem

from movingsets.assembly import (assemble_load, assemble_operator,
                                 restrict_free, solve_linear, sup_norm)
from movingsets.constraints import (gradient_bound, is_feasible,
                                    midpoint_obstacle, nodal_obstacle,
                                    unbounded, violation)
from movingsets.errors import PreconditionError
from movingsets.mesh import build_interval_mesh, build_triangle_mesh
from movingsets.vi import (complementarity_residual, energy_value,
                           solution_map, solve_obstacle_vi, solve_vi)


def test_active_set_matches_enumeration(contact_small):
    mesh, op, load, K, phi_free = contact_small
    oracle = brute_force_obstacle(op, load, phi_free)
    sol = solve_vi(op, load, K, method="active_set")
    assert sup_norm(restrict_free(mesh, sol.y.values) - oracle) < 1e-10


def test_relaxation_matches_enumeration(contact_small):
    mesh, op, load, K, phi_free = contact_small
    oracle = brute_force_obstacle(op, load, phi_free)
    sol = solve_obstacle_vi(op, load, K, method="relaxation")
    assert sup_norm(restrict_free(mesh, sol.y.values) - oracle) < 1e-9


def test_methods_agree_on_randomized_problems():
    rng = np.random.default_rng(7)
    for _ in range(10):
        n = int(rng.integers(8, 65))
        mesh, op, load, K = random_obstacle_problem(rng, n)
        a = solve_obstacle_vi(op, load, K, method="active_set")
        b = solve_obstacle_vi(op, load, K, method="relaxation")
        assert sup_norm(a.y.values - b.y.values) < 1e-8


def test_comparison_principle_ordered_loads(contact_1d):
    mesh, op, _, K = contact_1d
    rng = np.random.default_rng(3)
    for _ in range(10):
        f1 = rng.uniform(-4.0, 10.0, size=op.n_free)
        f2 = f1 + rng.uniform(0.0, 5.0, size=op.n_free)
        y1 = solve_vi(op, assemble_load(mesh, 1.0).replace(f1), K).y
        y2 = solve_vi(op, assemble_load(mesh, 1.0).replace(f2), K).y
        assert np.all(y1.values <= y2.values + 1e-12)


def test_unconstrained_reduces_to_linear_solve(contact_1d):
    mesh, op, load, _ = contact_1d
    sol = solve_vi(op, load, unbounded(mesh))
    lin = solve_linear(op, load)
    assert np.allclose(sol.y.values, lin.values, atol=1e-12)
    assert complementarity_residual(sol.y, op, load,
                                    unbounded(mesh)) < 1e-10


def test_inactive_obstacle_is_invisible(contact_1d):
    mesh, op, load, _ = contact_1d
    tall = nodal_obstacle(mesh, 100.0)
    sol = solve_vi(op, load, tall)
    lin = solve_linear(op, load)
    assert np.allclose(sol.y.values, lin.values, atol=1e-12)
    assert sol.active_set.size == 0


def test_complementarity_residual_flags_onesided(contact_1d):
    mesh, op, load, K = contact_1d
    sol = solve_vi(op, load, K)
    assert complementarity_residual(sol.y, op, load, K) < 1e-9
    # an infeasible point is rejected outright
    bad = sol.y.replace(sol.y.values + 1.0)
    with pytest.raises(PreconditionError):
        complementarity_residual(bad, op, load, K)


def test_energy_value_is_minimal_at_solution(contact_1d):
    mesh, op, load, K = contact_1d
    sol = solve_vi(op, load, K)
    e_star = energy_value(op, load, sol.y.values)
    rng = np.random.default_rng(11)
    for _ in range(20):
        trial = np.minimum(sol.y.values
                           + rng.normal(0.0, 0.02, mesh.n_nodes),
                           K.phi.values)
        trial[0] = trial[-1] = 0.0
        assert energy_value(op, load, trial) >= e_star - 1e-12


def test_two_sided_obstacle_is_refused(contact_1d):
    # bilateral nodal sets are handled by the feasibility and recovery
    # machinery but the direct solvers take one-sided sets only
    mesh, op, _, _ = contact_1d
    K = nodal_obstacle(mesh, 0.05, psi_abs=True)
    pull = assemble_load(mesh, -8.0)
    with pytest.raises(NotImplementedError):
        solve_vi(op, pull, K)


def test_midpoint_and_gradient_penalty_solves(contact_1d):
    mesh, op, load, _ = contact_1d
    Km = midpoint_obstacle(mesh, 0.1)
    sm = solve_vi(op, load, Km, tol=1e-8)
    assert violation(sm.y, Km) < 1e-6
    Kg = gradient_bound(mesh, 0.6)
    sg = solve_vi(op, load, Kg, tol=1e-7)
    assert violation(sg.y, Kg) < 1e-6
    # the gradient constraint binds: slopes clipped near 0.6
    slopes = np.diff(sg.y.values) / mesh.h
    assert slopes.max() == pytest.approx(0.6, abs=1e-4)


def test_default_method_dispatch(contact_1d):
    mesh, op, load, K = contact_1d
    assert solve_vi(op, load, K).method == "active_set"
    # non-M-matrix symmetric operators go through relaxation
    drift = assemble_operator(mesh, advection=(8.0,))
    sol = solve_vi(drift, load, K)
    assert sol.method == "active_set"  # M-matrix wins even unsymmetric


def test_solution_map_partial_application(contact_1d):
    mesh, op, load, K = contact_1d
    y1 = solution_map(load, K, op)
    y2 = solve_vi(op, load, K).y
    assert np.allclose(y1.values, y2.values)


def test_2d_obstacle_feasible_and_complementary():
    mesh = build_triangle_mesh(12, 12)
    op = assemble_operator(mesh)
    load = assemble_load(mesh, 32.0)
    K = nodal_obstacle(mesh, 0.05)
    sol = solve_vi(op, load, K)
    assert is_feasible(sol.y, K)
    assert complementarity_residual(sol.y, op, load, K) < 1e-9
    assert sol.active_set.size > 0
