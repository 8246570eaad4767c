#!/usr/bin/env python3
"""When approximation from a subspace chain genuinely fails.

Usually one can approach any admissible target with functions from
finer and finer subspaces while paying a vanishing penalty.  This
script builds a scenario where that is impossible: the bound permits a
tall spike at a single fine-mesh node, a point load rewards reaching
it, and no coarse piecewise-linear function can follow.  An
adversarial penalty schedule tuned against the subspace distances then
keeps every perturbed minimum strictly above the target energy.

A control run with a flat bound shows the same machinery reporting
that approximation works fine there.
"""

import numpy as np

from movingsets import (assemble_load, assemble_operator,
                        build_interval_mesh, no_recovery_demo,
                        nodal_obstacle, solve_vi)

fine = build_interval_mesh(64)
xs = fine.nodes[:, 0]
op = assemble_operator(fine)
hierarchy = [build_interval_mesh(8), build_interval_mesh(16)]

# restrictive bound 0.01 everywhere, permissive 0.5 at one node that
# no coarse mesh owns
phi = np.full(fine.n_nodes, 0.01)
spike = int(np.argmin(np.abs(xs - 33.0 / 64.0)))
phi[spike] = 0.5
K = nodal_obstacle(fine, phi)

load = assemble_load(fine, 8.0)
vals = load.values.copy()
vals[int(np.where(fine.free_nodes == spike)[0][0])] += 40.0
load = load.replace(vals)

w = solve_vi(op, load, K).y
print(f"target: constrained minimizer with w(spike) = "
      f"{w.values[spike]:.4f}")

report = no_recovery_demo(op, load, K, hierarchy, rho=0.02, w=w)
print(f"target energy F(w) = {report.target_energy:.6f}")
print(f"adversarial scenario applicable: {report.applicable}")
for lev in report.levels:
    print(f"  level {lev.n} ({lev.n_cells} cells): subspace distance "
          f"{lev.distance:.3e}, gamma {lev.gamma:.3e}, energy gap "
          f"{lev.objective_gap:+.4f}")
print(f"gap persists across levels: {report.gap_persists}")
print(f"note: {report.note}")

print()
print("control with a flat bound (no spike):")
K_flat = nodal_obstacle(fine, 0.1)
load_flat = assemble_load(fine, 8.0)
w_flat = solve_vi(op, load_flat, K_flat).y
control = no_recovery_demo(op, load_flat, K_flat, hierarchy,
                           rho=0.02, w=w_flat)
for lev in control.levels:
    print(f"  level {lev.n}: subspace distance {lev.distance:.3e}, "
          f"energy gap {lev.objective_gap:+.4e}")
print(f"applicable: {control.applicable}  note: {control.note}")
