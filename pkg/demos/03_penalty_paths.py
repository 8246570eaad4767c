#!/usr/bin/env python3
"""Penalty and damping schedules for the constrained minimization.

Three ways to approximate the obstacle problem by unconstrained or
softer problems:

* quadratic distance penalty (violation decays like 1/gamma),
* extra damping of the operator (keeps the constraint exactly),
* both at once.

The script prints the violation at consecutive penalty doublings; the
ratio should hover near 1/2.
"""

import numpy as np

from movingsets import (MoreauYosida, Tikhonov, TikhonovMY, assemble_load,
                        assemble_operator, build_interval_mesh, gamma_study,
                        nodal_obstacle, solve_vi)

mesh = build_interval_mesh(64)
op = assemble_operator(mesh)
load = assemble_load(mesh, 8.0)
K = nodal_obstacle(mesh, 0.1)
exact = solve_vi(op, load, K).y

gammas = tuple(1e2 * 2.0 ** k for k in range(12))
report = gamma_study(op, load, K, MoreauYosida(gammas))
print("distance penalty: violation at consecutive gamma doublings")
prev = None
for r in report.records:
    ratio = "" if prev in (None, 0.0) else f"  ratio {r.violation / prev:.3f}"
    print(f"  gamma {r.gamma:>10.3e}  violation {r.violation:.4e}{ratio}")
    prev = r.violation
print(f"final sup error vs constrained solution: "
      f"{report.records[-1].err_sup:.3e}")

damped = gamma_study(op, load, K, Tikhonov(tuple(10.0 * 4.0 ** k
                                                 for k in range(8))))
print("\nextra damping (constraint kept exact): sup error vs gamma'")
for r in damped.records:
    print(f"  gamma' {r.gamma_prime:>10.3e}  err_sup {r.err_sup:.4e}  "
          f"violation {r.violation:.1e}")

both = gamma_study(op, load, K,
                   TikhonovMY(tuple(1e2 * 4.0 ** k for k in range(8)),
                              tuple(10.0 * 4.0 ** k for k in range(8))))
print("\nboth at once:")
for r in both.records[-3:]:
    print(f"  gamma {r.gamma:>10.3e}  gamma' {r.gamma_prime:>10.3e}  "
          f"err_sup {r.err_sup:.4e}")
