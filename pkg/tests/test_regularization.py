import math

import numpy as np
import pytest

from conftest import mass_free, quasi_newton_penalized

from movingsets.assembly import (assemble_load, assemble_operator,
                                 restrict_free, sup_norm)
from movingsets.constraints import is_feasible, nodal_obstacle, violation
from movingsets.errors import PreconditionError
from movingsets.mesh import build_interval_mesh, nodal
from movingsets.regularization import (GalerkinMY, MoreauYosida, Tikhonov,
                                       TikhonovMY, evaluate_perturbation,
                                       gamma_study, minimize_perturbed,
                                       no_recovery_demo, scheme_label,
                                       scheme_length)
from movingsets.vi import solve_vi

GAMMAS = tuple(1e2 * 4.0 ** k for k in range(6))
PRIMES = tuple(1e1 * 4.0 ** k for k in range(6))


def _schemes(mesh):
    return [
        Tikhonov(PRIMES),
        MoreauYosida(GAMMAS),
        TikhonovMY(GAMMAS, PRIMES),
        GalerkinMY((1e3, 1e4, 1e5, 1e6), (build_interval_mesh(8),
                                          build_interval_mesh(16),
                                          build_interval_mesh(32),
                                          build_interval_mesh(64))),
    ]


def test_schedule_validation_rejects_bad_input():
    with pytest.raises(PreconditionError):
        MoreauYosida((0.0, 1.0))
    with pytest.raises(PreconditionError):
        MoreauYosida((1e4, 1e3, 1e8))  # not nondecreasing
    with pytest.raises(PreconditionError):
        MoreauYosida((1.0, 2.0))  # never grows enough to matter


def test_nonquadratic_power_evaluates_but_does_not_solve(contact_1d):
    mesh, op, load, K = contact_1d
    cubic = Tikhonov(PRIMES, power=3.0)
    xs = mesh.nodes[:, 0]
    u = nodal(mesh, 0.0).replace(0.05 * xs * (1.0 - xs))
    assert evaluate_perturbation(u, cubic, 1, K) > 0.0
    with pytest.raises(NotImplementedError):
        minimize_perturbed(op, load, cubic, 1, K)


def test_sandwich_property_random_points(contact_1d):
    mesh, op, load, K = contact_1d
    rng = np.random.default_rng(5)
    schemes = _schemes(mesh)
    for _ in range(100):
        u = nodal(mesh, 0.0).replace(
            rng.normal(0.0, 0.15, size=mesh.n_nodes))
        for scheme in schemes:
            n = int(rng.integers(1, scheme_length(scheme) + 1))
            lo = evaluate_perturbation(u, scheme, n, K, bound="lower")
            mid = evaluate_perturbation(u, scheme, n, K, bound="value")
            hi = evaluate_perturbation(u, scheme, n, K, bound="upper")
            assert lo <= mid + 1e-12 * (1.0 + abs(mid))
            assert mid <= hi + 1e-12 * (1.0 + abs(mid))


def test_upper_envelope_is_indicator_for_my(contact_1d):
    mesh, op, load, K = contact_1d
    scheme = MoreauYosida(GAMMAS)
    inside = nodal(mesh, 0.05)
    outside = nodal(mesh, 0.15)
    assert evaluate_perturbation(inside, scheme, 2, K,
                                 bound="upper") == 0.0
    assert math.isinf(evaluate_perturbation(outside, scheme, 2, K,
                                            bound="upper"))
    # the value itself is finite and positive outside the set
    assert 0.0 < evaluate_perturbation(outside, scheme, 2, K) < math.inf


def test_galerkin_value_infinite_off_subspace(contact_1d):
    mesh, op, load, K = contact_1d
    coarse = build_interval_mesh(8)
    scheme = GalerkinMY((1e3, 1e6), (coarse, mesh))
    # a fine-mesh wiggle is not representable on 8 cells
    wiggle = nodal(mesh, 0.0).replace(
        np.sin(np.arange(mesh.n_nodes) * 2.1) * 0.01)
    assert math.isinf(evaluate_perturbation(wiggle, scheme, 1, K))
    flat = nodal(mesh, 0.0)
    assert evaluate_perturbation(flat, scheme, 1, K) == 0.0


def test_my_violation_halves_at_doubling(contact_1d):
    mesh, op, load, K = contact_1d
    gammas = tuple(1e2 * 2.0 ** k for k in range(11))
    report = gamma_study(op, load, K, MoreauYosida(gammas))
    v = [r.violation for r in report.records]
    ratios = [b / a for a, b in zip(v, v[1:]) if a > 0.0]
    assert len(ratios) >= 5
    assert all(0.35 <= r <= 0.65 for r in ratios)
    assert report.converged


def test_tikhonov_keeps_constraint_exact(contact_1d):
    mesh, op, load, K = contact_1d
    report = gamma_study(op, load, K, Tikhonov(PRIMES))
    assert all(r.violation <= 1e-12 for r in report.records)
    errs = [r.err_sup for r in report.records]
    assert errs[-1] < errs[0] / 100.0
    assert report.converged


def test_combined_scheme_converges(contact_1d):
    mesh, op, load, K = contact_1d
    report = gamma_study(op, load, K, TikhonovMY(GAMMAS, PRIMES))
    assert report.converged
    assert report.records[-1].err_sup < report.records[0].err_sup / 10.0


def test_galerkin_minimizer_lives_in_subspace(contact_1d):
    mesh, op, load, K = contact_1d
    coarse = build_interval_mesh(8)
    scheme = GalerkinMY((1e5, 1e8), (coarse, mesh))
    y = minimize_perturbed(op, load, scheme, 1, K)
    # representable on the coarse mesh: finite perturbation value
    assert evaluate_perturbation(y, scheme, 1, K) < math.inf
    # final space reproduces the MY minimizer on the full mesh
    y2 = minimize_perturbed(op, load, scheme, 2, K)
    ymy = minimize_perturbed(op, load, MoreauYosida((1e4, 1e8)), 2, K)
    assert sup_norm(y2.values - ymy.values) < 1e-8


def test_minimize_perturbed_matches_quasi_newton_oracle():
    mesh = build_interval_mesh(16)
    op = assemble_operator(mesh)
    load = assemble_load(mesh, 8.0)
    K = nodal_obstacle(mesh, 0.1)
    phi_free = restrict_free(mesh, K.phi.values)
    m = mass_free(mesh)
    for n, gamma in ((1, 1e2), (2, 1e3), (3, 1e4)):
        scheme = MoreauYosida((1e2, 1e3, 1e4, 1e5, 1e6))
        mine = minimize_perturbed(op, load, scheme, n, K)
        oracle = quasi_newton_penalized(op, load, phi_free, m, gamma)
        assert sup_norm(restrict_free(mesh, mine.values) - oracle) < 1e-6


def test_minimize_perturbed_tikhonov_is_feasible(contact_1d):
    mesh, op, load, K = contact_1d
    y = minimize_perturbed(op, load, Tikhonov(PRIMES), 3, K)
    assert is_feasible(y, K)
    # damping pulls the solution below the undamped one
    y_star = solve_vi(op, load, K).y
    assert np.all(y.values <= y_star.values + 1e-10)


def test_no_recovery_spike_scenario():
    fine = build_interval_mesh(64)
    xs = fine.nodes[:, 0]
    op = assemble_operator(fine)
    phi = np.full(fine.n_nodes, 0.01)
    spike = int(np.argmin(np.abs(xs - 33.0 / 64.0)))
    phi[spike] = 0.5
    K = nodal_obstacle(fine, phi)
    load = assemble_load(fine, 8.0)
    vals = load.values.copy()
    vals[int(np.where(fine.free_nodes == spike)[0][0])] += 40.0
    load = load.replace(vals)
    w = solve_vi(op, load, K).y
    hierarchy = [build_interval_mesh(8), build_interval_mesh(16)]

    report = no_recovery_demo(op, load, K, hierarchy, rho=0.02, w=w)
    assert report.applicable
    assert report.gap_persists
    gap_scale = 1e-2 * (1.0 + abs(report.target_energy))
    assert all(lv.objective_gap >= gap_scale for lv in report.levels)

    # control: flat bound, approximation works, demo reports that
    K_flat = nodal_obstacle(fine, 0.1)
    load_flat = assemble_load(fine, 8.0)
    w_flat = solve_vi(op, load_flat, K_flat).y
    control = no_recovery_demo(op, load_flat, K_flat, hierarchy,
                               rho=0.02, w=w_flat)
    assert not control.applicable
    assert not control.gap_persists


def test_no_recovery_demo_preconditions(contact_1d):
    mesh, op, load, K = contact_1d
    w = solve_vi(op, load, K).y
    coarse = [build_interval_mesh(8)]
    with pytest.raises(PreconditionError):
        no_recovery_demo(op, load, K, coarse, rho=-1.0, w=w)
    with pytest.raises(PreconditionError):
        no_recovery_demo(op, load, K, [build_interval_mesh(7)],
                         rho=0.1, w=w)
    bad_w = w.replace(w.values + 1.0)
    with pytest.raises(PreconditionError):
        no_recovery_demo(op, load, K, coarse, rho=0.1, w=bad_w)


def test_scheme_labels():
    assert scheme_label(MoreauYosida(GAMMAS)) == "moreau_yosida"
    assert scheme_label(Tikhonov(PRIMES)) == "tikhonov"
    assert scheme_label(TikhonovMY(GAMMAS, PRIMES)) == "tikhonov_my"
