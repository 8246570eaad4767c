"""Shared fixtures and independent oracles for the test suite.

The oracles deliberately avoid the library's own solver paths: the
obstacle oracle enumerates every candidate active set and solves the
reduced linear systems directly, and the penalized-minimization oracle
hands the smooth objective to scipy's quasi-Newton minimizer.
"""

import numpy as np
import pytest
import scipy.optimize

from movingsets import (assemble_load, assemble_operator,
                        build_interval_mesh, nodal_obstacle)
from movingsets.assembly import lumped_mass_weights, restrict_free


def brute_force_obstacle(op, load, phi_free):
    """Global minimum of 1/2 y.Ay - f.y subject to y <= phi.

    Enumerates all 2^k active sets, solves the equality-constrained
    system for each, and keeps the feasible candidate with the lowest
    energy.  Exponential; only usable for a handful of free nodes.
    """
    A = np.asarray(op.matrix.todense())
    f = load.values
    k = A.shape[0]
    if k > 16:
        raise ValueError("enumeration oracle limited to 16 free nodes")
    best = None
    best_energy = np.inf
    for mask in range(2 ** k):
        act = np.array([(mask >> i) & 1 for i in range(k)], dtype=bool)
        y = np.empty(k)
        y[act] = phi_free[act]
        inact = ~act
        if inact.any():
            rhs = f[inact] - A[np.ix_(inact, act)] @ y[act]
            try:
                y[inact] = np.linalg.solve(A[np.ix_(inact, inact)], rhs)
            except np.linalg.LinAlgError:
                continue
        if np.any(y > phi_free + 1e-12):
            continue
        energy = 0.5 * y @ (A @ y) - f @ y
        if energy < best_energy - 1e-15:
            best_energy = energy
            best = y
    assert best is not None
    return best


def quasi_newton_penalized(op, load, phi_free, m_free, gamma, x0=None):
    """scipy L-BFGS-B on F(y) + gamma/2 sum m ((y - phi)^+)^2."""
    A = np.asarray(op.matrix.todense())
    f = load.values

    def fun(y):
        e = np.maximum(y - phi_free, 0.0)
        val = 0.5 * y @ (A @ y) - f @ y \
            + 0.5 * gamma * float(np.sum(m_free * e * e))
        grad = A @ y - f + gamma * m_free * e
        return val, grad

    res = scipy.optimize.minimize(
        fun, np.zeros_like(f) if x0 is None else x0, jac=True,
        method="L-BFGS-B",
        options={"maxiter": 20000, "ftol": 1e-16, "gtol": 1e-12})
    return res.x


@pytest.fixture
def contact_1d():
    """The standard 1D contact setup on 64 cells."""
    mesh = build_interval_mesh(64)
    op = assemble_operator(mesh)
    load = assemble_load(mesh, 8.0)
    K = nodal_obstacle(mesh, 0.1)
    return mesh, op, load, K


@pytest.fixture
def contact_small():
    """Same problem, small enough for the enumeration oracle."""
    mesh = build_interval_mesh(8)
    op = assemble_operator(mesh)
    load = assemble_load(mesh, 8.0)
    K = nodal_obstacle(mesh, 0.1)
    phi_free = restrict_free(mesh, K.phi.values)
    return mesh, op, load, K, phi_free


def random_obstacle_problem(rng, n):
    """A randomized 1D obstacle problem with M-matrix operator."""
    mesh = build_interval_mesh(n)
    op = assemble_operator(mesh, reaction=float(rng.uniform(0.0, 2.0)))
    f_vals = rng.uniform(-5.0, 20.0, size=mesh.free_nodes.size)
    load = assemble_load(mesh, 1.0).replace(f_vals)
    phi = rng.uniform(0.02, 0.3, size=mesh.n_nodes)
    K = nodal_obstacle(mesh, phi)
    return mesh, op, load, K


def mass_free(mesh):
    return lumped_mass_weights(mesh)[mesh.free_nodes]
