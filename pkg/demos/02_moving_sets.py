#!/usr/bin/env python3
# Moving constraint sets: solve a family of obstacle problems whose
# bound drifts toward a limit, watch the solutions converge to the
# limit solution, then rebuild feasible approximants of a target
# function with the three recovery constructions.

import numpy as np

from movingsets import (assemble_load, assemble_operator,
                        build_interval_mesh, nodal_obstacle, solve_vi)
from movingsets.mosco import mosco_study, obstacle_sequence, recovery_study

mesh = build_interval_mesh(64)
op = assemble_operator(mesh)
load = assemble_load(mesh, 8.0)

# bounds phi_n = 0.1 + 2^-n sink onto the limit bound 0.1
K = nodal_obstacle(mesh, 0.1)
seq = obstacle_sequence(K, 1.0, tuple(2.0 ** -k for k in range(1, 11)))
report = mosco_study(op, load, seq)

print("bound drift 2^-n, solution error against the limit solution:")
print(f"{'n':>3} {'delta':>12} {'err_sup':>12} {'err_energy':>12}")
for r in report.records:
    print(f"{r.n:>3} {r.delta:>12.5e} {r.err_sup:>12.5e} "
          f"{r.err_energy:>12.5e}")
print(f"log-log slope vs delta: {report.slope:.3f}")
print(f"errors converged: {report.convergence_ok}, "
      f"limit admissibility check: {report.condition_ii_ok}")

# recovery: start from the limit solution, shrink the bound toward it,
# and build feasible approximants inside each shrunken set
w = solve_vi(op, load, K).y
K_nu = nodal_obstacle(mesh, 0.1, nu=0.05)
shrink = obstacle_sequence(K_nu, -1.0,
                           tuple(0.1 * 2.0 ** -k for k in range(1, 9)))
for construction in ("scale", "truncate", "singular_perturbation"):
    trace = recovery_study(w, shrink, construction, Q=op)
    print(f"{construction:>22}: initial distance "
          f"{trace.initial_distance:.3e} -> final "
          f"{trace.final_distance:.3e}, all feasible: "
          f"{trace.all_feasible}")
