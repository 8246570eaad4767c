import math

import numpy as np
import pytest

from movingsets.assembly import assemble_load, assemble_operator, sup_norm
from movingsets.constraints import (gradient_bound, is_feasible,
                                    midpoint_obstacle, nodal_obstacle)
from movingsets.errors import PreconditionError
from movingsets.mesh import build_interval_mesh, build_triangle_mesh
from movingsets.mosco import (ContinuumProblem, bound_l1_distance,
                              bound_sup_distance, fem_constraint_study,
                              gradient_sequence, midpoint_sequence,
                              mosco_study, obstacle_sequence,
                              recovery_study)
from movingsets.vi import solve_vi

DYADIC = tuple(2.0 ** -k for k in range(1, 11))


def test_sequence_validation():
    mesh = build_interval_mesh(16)
    K = nodal_obstacle(mesh, 0.1)
    with pytest.raises(PreconditionError):
        obstacle_sequence(K, 1.0, ())
    with pytest.raises(PreconditionError):
        obstacle_sequence(K, 1.0, (0.5, 0.6))  # not nonincreasing
    with pytest.raises(PreconditionError):
        obstacle_sequence(K, 1.0, (0.5, 0.4, 0.3))  # decays too slowly
    seq = obstacle_sequence(K, 1.0, DYADIC)
    assert len(seq) == 10
    K1 = seq.set_at(1)
    assert np.allclose(K1.phi.values, 0.1 + 0.5)


def test_bound_distances(contact_1d):
    mesh, op, load, K = contact_1d
    seq = obstacle_sequence(K, 1.0, DYADIC)
    K1 = seq.set_at(1)
    assert bound_sup_distance(K1, K) == pytest.approx(0.5)
    # L1 distance integrates the drift over the domain
    assert bound_l1_distance(K1, K) == pytest.approx(0.5, rel=1e-12)


def test_mosco_study_converges_to_limit(contact_1d):
    mesh, op, load, K = contact_1d
    seq = obstacle_sequence(K, 1.0, DYADIC)
    report = mosco_study(op, load, seq)
    errs = [r.err_sup for r in report.records]
    assert errs[0] / errs[-1] >= 10.0
    assert report.slope >= 0.9
    assert report.convergence_ok
    assert report.condition_ii_ok
    assert report.passed
    # each approximating solution solves its own set
    assert all(r.violation_own <= 1e-9 for r in report.records)


def test_mosco_study_with_drifting_loads(contact_1d):
    mesh, op, load, K = contact_1d
    seq = obstacle_sequence(K, 1.0, DYADIC)
    loads = [load.replace(load.values + d * load.values) for d in DYADIC]
    report = mosco_study(op, load, seq, loads=loads)
    assert report.convergence_ok
    errs = [r.err_sup for r in report.records]
    assert errs[0] > errs[-1]


def test_mosco_study_shrinking_sets(contact_1d):
    # sets approach from inside: phi_n = phi - delta
    mesh, op, load, K = contact_1d
    deltas = tuple(0.05 * 2.0 ** -k for k in range(10))
    seq = obstacle_sequence(K, -1.0, deltas)
    report = mosco_study(op, load, seq)
    assert report.convergence_ok
    # inside approximants can never violate the limit set
    assert all(r.violation_limit <= 1e-12 for r in report.records)


def test_mosco_study_records_step_failures(contact_1d):
    mesh, op, load, K = contact_1d
    # a drift that makes early bounds negative is unsolvable for the
    # one-sided problem with this load, but later steps still run
    deltas = (0.5, 0.25, 0.125, 0.0625, 0.03125)
    seq = obstacle_sequence(K, -1.0, deltas)
    report = mosco_study(op, load, seq)
    assert len(report.records) == len(deltas)
    # nothing blew up: the failed steps carry notes instead
    bad = [r for r in report.records if not r.ok]
    good = [r for r in report.records if r.ok]
    assert all(r.note for r in bad)
    assert good, "late steps with positive bounds should solve"


def test_gradient_and_midpoint_sequences(contact_1d):
    mesh, op, load, _ = contact_1d
    Km = midpoint_obstacle(mesh, 0.1)
    seqm = midpoint_sequence(Km, 1.0, DYADIC)
    rep = mosco_study(op, load, seqm, tol=1e-8)
    assert rep.convergence_ok

    Kg = gradient_bound(mesh, 0.6, nu=0.3)
    seqg = gradient_sequence(Kg, 1.0, tuple(0.2 * 2.0 ** -k
                                            for k in range(1, 9)))
    repg = mosco_study(op, load, seqg, tol=1e-7)
    errs = [r.err_sup for r in repg.records]
    assert errs[0] > errs[-1]


def test_recovery_study_all_constructions(contact_1d):
    mesh, op, load, _ = contact_1d
    K = nodal_obstacle(mesh, 0.1, nu=0.05)
    w = solve_vi(op, load, K).y
    shrink = obstacle_sequence(K, -1.0, tuple(0.1 * 2.0 ** -k
                                              for k in range(1, 9)))
    for construction in ("scale", "truncate", "singular_perturbation"):
        trace = recovery_study(w, shrink, construction, Q=op)
        assert trace.all_feasible
        assert trace.final_distance <= trace.initial_distance / 10.0
        assert trace.passed


def test_recovery_rejects_inadmissible_target(contact_1d):
    mesh, op, load, _ = contact_1d
    K = nodal_obstacle(mesh, 0.1, nu=0.05)
    shrink = obstacle_sequence(K, -1.0, (0.05, 0.025, 0.0125))
    from movingsets.mesh import nodal
    w_bad = nodal(mesh, 0.5)
    with pytest.raises(PreconditionError):
        recovery_study(w_bad, shrink, "scale")


def test_fem_study_requires_nested_levels():
    problem = ContinuumProblem(load=8.0, bound=0.1)
    with pytest.raises(PreconditionError):
        fem_constraint_study(problem, "nodal", [8, 12])
    with pytest.raises(PreconditionError):
        fem_constraint_study(problem, "nodal", [8])


def test_fem_study_converges_1d():
    problem = ContinuumProblem(load=8.0, bound=0.1)
    report = fem_constraint_study(problem, "nodal", [8, 16, 32])
    errs = [r.err_sup for r in report.records]
    assert errs[0] > errs[1] > errs[2]
    assert report.slope > 1.5
    assert report.passed


def test_fem_study_unconstrained_2d():
    problem = ContinuumProblem(
        dim=2,
        load=lambda x, y: 2.0 * math.pi ** 2 * math.sin(math.pi * x)
        * math.sin(math.pi * y))
    report = fem_constraint_study(problem, "none", [4, 8, 16])
    errs = [r.err_sup for r in report.records]
    assert errs[0] > errs[1] > errs[2]


def test_continuum_problem_gradient_needs_positive_bound():
    problem = ContinuumProblem(load=8.0, bound=lambda x: x - 0.5)
    mesh = problem.build_mesh(8)
    with pytest.raises(PreconditionError):
        problem.constraint_on(mesh, "gradient")
