"""Damped semismooth Newton for convex quadratic-plus-hinge energies.

Minimizes

    J(x) = 1/2 x.Ax - b.x
         + sum_r w_r/2 * ((C x - d)_r^+)^2                 (scalar hinges)
         + sum_r w_r/2 * ((|G_r x|_2 - a_r)^+)^2           (vector hinges)

with A sparse symmetric positive definite.  Each vector hinge group
``G_r`` is a block of ``m`` consecutive rows of G.  The energy is C^1
and piecewise quadratic; Newton steps use the generalized Hessian and a
backtracking line search, which is globally convergent for SPD A.

This is the single workhorse behind penalty path-following for gradient
and midpoint constraints and behind Moreau-Yosida minimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError

__all__ = ["ScalarHinges", "VectorHinges", "minimize_quadratic"]


@dataclass(frozen=True, eq=False)
class ScalarHinges:
    """Penalty rows (C x - offset)^+ with per-row weights."""

    C: sp.csr_matrix
    offset: np.ndarray
    weight: np.ndarray

    def scaled(self, factor: float) -> "ScalarHinges":
        return ScalarHinges(self.C, self.offset, self.weight * factor)


@dataclass(frozen=True, eq=False)
class VectorHinges:
    """Penalty groups (|G_r x|_2 - bound_r)^+ with per-group weights.

    G stacks the groups: rows m*r .. m*r + m - 1 belong to group r.
    """

    G: sp.csr_matrix
    bound: np.ndarray
    weight: np.ndarray
    m: int

    def scaled(self, factor: float) -> "VectorHinges":
        return VectorHinges(self.G, self.bound, self.weight * factor, self.m)


def _scalar_parts(h: ScalarHinges, x):
    r = h.C @ x - h.offset
    act = r > 0
    e = np.where(act, r, 0.0)
    energy = 0.5 * float(np.sum(h.weight * e * e))
    grad = h.C.T @ (h.weight * e)
    return energy, grad, act


def _vector_parts(h: VectorHinges, x):
    g = (h.G @ x).reshape(-1, h.m)
    t = np.linalg.norm(g, axis=1)
    e = t - h.bound
    act = e > 0
    ep = np.where(act, e, 0.0)
    energy = 0.5 * float(np.sum(h.weight * ep * ep))
    # d/dg of w/2 e^2 = w * e * g/t  (t > 0 whenever active, bounds > 0)
    coef = np.zeros_like(t)
    coef[act] = h.weight[act] * ep[act] / t[act]
    grad = h.G.T @ (coef[:, None] * g).ravel()
    return energy, grad, act, g, t


def _vector_hessian(h: VectorHinges, act, g, t, n):
    rows_idx = np.nonzero(act)[0]
    if rows_idx.size == 0:
        return None
    blocks_r, blocks_c, blocks_v = [], [], []
    G = h.G.tocsr()
    m = h.m
    for r in rows_idx:
        tr = t[r]
        gr = g[r] / tr
        ar = h.bound[r]
        # w * [ (a/t) * ghat ghat^T + (1 - a/t) * I ]
        frac = ar / tr
        B = h.weight[r] * (frac * np.outer(gr, gr)
                           + (1.0 - frac) * np.eye(m))
        sub = G[m * r: m * r + m]
        dense_cols = np.unique(sub.indices)
        S = sub[:, dense_cols].toarray()       # m x k
        H_loc = S.T @ B @ S                    # k x k
        k = dense_cols.size
        blocks_r.append(np.repeat(dense_cols, k))
        blocks_c.append(np.tile(dense_cols, k))
        blocks_v.append(H_loc.ravel())
    return sp.coo_matrix(
        (np.concatenate(blocks_v),
         (np.concatenate(blocks_r), np.concatenate(blocks_c))),
        shape=(n, n)).tocsr()


def minimize_quadratic(A: sp.csr_matrix, b: np.ndarray, x0=None,
                       scalar_hinges: ScalarHinges | None = None,
                       vector_hinges: VectorHinges | None = None,
                       tol: float = 1e-10, max_iter: int = 80):
    """Minimize the hinge-penalized quadratic; returns (x, info).

    Stops when the gradient sup norm drops below tol * (1 + ||b||_inf).
    Raises ConvergenceError when max_iter Newton steps do not suffice.
    """
    n = A.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    tol_abs = tol * (1.0 + (np.max(np.abs(b)) if b.size else 0.0))

    def energy_grad(xv):
        e = 0.5 * float(xv @ (A @ xv)) - float(b @ xv)
        gr = A @ xv - b
        act_s = act_v = None
        gv = tv = None
        if scalar_hinges is not None:
            es, gs, act_s = _scalar_parts(scalar_hinges, xv)
            e += es
            gr = gr + gs
        if vector_hinges is not None:
            ev, gvec, act_v, gv, tv = _vector_parts(vector_hinges, xv)
            e += ev
            gr = gr + gvec
        return e, gr, act_s, act_v, gv, tv

    J, grad, act_s, act_v, gv, tv = energy_grad(x)
    for it in range(1, max_iter + 1):
        gnorm = np.max(np.abs(grad)) if n else 0.0
        if gnorm <= tol_abs:
            return x, {"iterations": it - 1, "grad_norm": float(gnorm)}
        H = A
        if scalar_hinges is not None and np.any(act_s):
            C = scalar_hinges.C
            wa = np.where(act_s, scalar_hinges.weight, 0.0)
            H = H + C.T @ sp.diags(wa) @ C
        if vector_hinges is not None and np.any(act_v):
            Hv = _vector_hessian(vector_hinges, act_v, gv, tv, n)
            if Hv is not None:
                H = H + Hv
        dx = spla.spsolve(H.tocsc(), -grad)
        # backtracking on the (convex) energy
        step = 1.0
        descent = float(grad @ dx)
        # Large hinge weights put a rounding floor of roughly
        # weight * eps under the computed gradient; once the model
        # predicts a decrease below roundoff there is nothing
        # representable left to gain, provided the gradient is already
        # small at problem scale.
        if (-descent <= 64.0 * np.finfo(float).eps * (1.0 + abs(J))
                and gnorm <= 1e-5 * (tol_abs / tol)):
            return x, {"iterations": it - 1, "grad_norm": float(gnorm),
                       "at_float_floor": True}
        for _ in range(60):
            xn = x + step * dx
            Jn, gn, as_n, av_n, gv_n, tv_n = energy_grad(xn)
            if Jn <= J + 1e-4 * step * descent or step < 1e-14:
                x, J, grad = xn, Jn, gn
                act_s, act_v, gv, tv = as_n, av_n, gv_n, tv_n
                break
            step *= 0.5
    gnorm = float(np.max(np.abs(grad))) if n else 0.0
    if gnorm <= tol_abs:
        return x, {"iterations": max_iter, "grad_norm": gnorm}
    raise ConvergenceError(
        f"semismooth Newton stalled at gradient norm {gnorm:.3e} "
        f"(tolerance {tol_abs:.3e})", residual=gnorm, iterations=max_iter)
