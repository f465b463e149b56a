"""Levenberg-Marquardt driver with dense and Schur-complement normal equations.

A problem supplies three callables:

``linearize(x) -> (cost, system)``
    cost at ``x`` and a normal-equation system exposing ``gradient`` and
    ``solve(lam)`` (returns the damped Gauss-Newton step).
``evaluate(x) -> cost``
    cost only, used to test a trial step.
``update(x, step) -> x``
    applies a step (manifold retraction, bound projection, ...).

The damping schedule and stopping rules are fixed: initial lambda 1e-3,
x10 on a rejected step, /10 on an accepted one; stop when an accepted step
lowers the cost by less than ``rel_tol`` relative, when the gradient
infinity-norm drops below ``grad_tol``, or after ``max_iterations``.  Three
further stops guard round-off territory: zero cost, a step whose largest
component is below ``step_tol``, and damping beyond 1e16 ("stalled").
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, List

import numpy as np

from .errors import NoConvergence, NumericalFailure

LAMBDA_INIT = 1e-3
LAMBDA_UP = 10.0
LAMBDA_DOWN = 10.0
LAMBDA_MAX = 1e16


@dataclass
class LMResult:
    x: Any
    cost: float
    initial_cost: float
    iterations: int
    converged: bool
    reason: str
    history: List[float] = field(default_factory=list)


def _damped_diag(diag):
    floor = max(float(np.max(diag)) * 1e-12, 1e-12) if diag.size else 1e-12
    return np.maximum(diag, floor)


class DenseSystem:
    """Normal equations ``J^T J`` of a dense Jacobian."""

    def __init__(self, J, r):
        J = np.asarray(J, dtype=float)
        r = np.asarray(r, dtype=float)
        self.H = J.T @ J
        self.gradient = J.T @ r
        self._diag = _damped_diag(np.diag(self.H).copy())

    def solve(self, lam):
        A = self.H + lam * np.diag(self._diag)
        return -_solve_spd(A, self.gradient)


class SchurSystem:
    """Block system with global parameters and independent 6-DOF local blocks.

    Each residual block touches the global vector (through ``J_global``,
    given for a subset ``gidx`` of global columns) and exactly one local
    block.  Local blocks are eliminated before solving.
    """

    def __init__(self, n_global, n_local_blocks, local_dim=6):
        self.n_global = n_global
        self.local_dim = local_dim
        self.H_gg = np.zeros((n_global, n_global))
        self.g_g = np.zeros(n_global)
        self.H_ll = np.zeros((n_local_blocks, local_dim, local_dim))
        self.g_l = np.zeros((n_local_blocks, local_dim))
        # local block -> dense (n_global x local_dim) coupling
        self.H_gl = np.zeros((n_local_blocks, n_global, local_dim))

    def add(self, local, J_local, r, gidx=None, J_global=None):
        self.H_ll[local] += J_local.T @ J_local
        self.g_l[local] += J_local.T @ r
        if gidx is not None and len(gidx):
            self.H_gg[np.ix_(gidx, gidx)] += J_global.T @ J_global
            self.g_g[gidx] += J_global.T @ r
            self.H_gl[local][gidx] += J_global.T @ J_local

    def add_batched(self, starts, local_of_group, gidx_of_group, J_global, J_local, r):
        """Accumulate many residual groups at once.

        Rows are grouped contiguously; group ``g`` spans
        ``starts[g]:starts[g+1]``, belongs to local block ``local_of_group[g]``
        and maps its ``J_global`` columns to ``gidx_of_group[g]`` (``-1``
        marks a column that is not a free parameter).

        Shapes: ``J_global`` (N, m, Gc), ``J_local`` (N, m, L), ``r`` (N, m).
        """
        starts = np.asarray(starts)
        Jl_T = J_local.transpose(0, 2, 1)
        C = np.add.reduceat(Jl_T @ J_local, starts, axis=0)
        gl = np.add.reduceat((Jl_T @ r[:, :, None])[:, :, 0], starts, axis=0)
        np.add.at(self.H_ll, local_of_group, C)
        np.add.at(self.g_l, local_of_group, gl)
        if J_global.shape[2] == 0:
            return
        Jg_T = J_global.transpose(0, 2, 1)
        A = np.add.reduceat(Jg_T @ J_global, starts, axis=0)
        B = np.add.reduceat(Jg_T @ J_local, starts, axis=0)
        gg = np.add.reduceat((Jg_T @ r[:, :, None])[:, :, 0], starts, axis=0)
        for g, (loc, gidx) in enumerate(zip(local_of_group, gidx_of_group)):
            keep = gidx >= 0
            if not keep.any():
                continue
            cols = gidx[keep]
            self.H_gg[np.ix_(cols, cols)] += A[g][np.ix_(keep, keep)]
            self.g_g[cols] += gg[g][keep]
            self.H_gl[loc][cols] += B[g][keep]

    def finalize(self):
        self.gradient = np.concatenate([self.g_g, self.g_l.ravel()])
        self._dg = _damped_diag(np.diag(self.H_gg).copy())
        d = np.diagonal(self.H_ll, axis1=1, axis2=2)
        floor = np.maximum(d.max(axis=1, initial=0.0) * 1e-12, 1e-12)
        self._dl = np.maximum(d, floor[:, None])
        return self

    def solve(self, lam):
        S = self.H_gg + lam * np.diag(self._dg)
        b = -self.g_g.copy()
        damped = self.H_ll.copy()
        idx = np.arange(self.local_dim)
        damped[:, idx, idx] += lam * self._dl
        Hll_inv = _inv_spd(damped)
        if self.n_global:
            # S -= sum_k H_gl[k] Hll_inv[k] H_gl[k]^T ; b += sum_k H_gl[k] Hll_inv[k] g_l[k]
            W = self.H_gl @ Hll_inv
            S -= np.tensordot(W, self.H_gl, axes=([0, 2], [0, 2]))
            b += np.einsum("kgj,kj->g", W, self.g_l)
            dg = _solve_spd(S, b)
        else:
            dg = np.zeros(0)
        rhs = -self.g_l - np.einsum("kgi,g->ki", self.H_gl, dg)
        dl = np.einsum("kij,kj->ki", Hll_inv, rhs)
        return np.concatenate([dg, dl.ravel()])


def _solve_spd(A, b):
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, b, rcond=None)[0]
    y = np.linalg.solve(L, b)
    return np.linalg.solve(L.T, y)


def _inv_spd(A):
    """Inverse of a (stack of) damped normal matrices; pseudo-inverse if singular."""
    try:
        return np.linalg.inv(A)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(A, hermitian=True)


def levenberg_marquardt(
    x0,
    linearize: Callable,
    evaluate: Callable,
    update: Callable,
    *,
    max_iterations: int = 100,
    rel_tol: float = 1e-10,
    grad_tol: float = 1e-8,
    abs_tol: float = 1e-28,
    step_tol: float = 1e-12,
    raise_on_failure: bool = True,
) -> LMResult:
    x = x0
    cost, system = linearize(x)
    if not np.isfinite(cost):
        raise NumericalFailure("non-finite cost at the initial estimate")
    initial = cost
    history = [cost]
    lam = LAMBDA_INIT
    reason = None
    it = 0
    while it < max_iterations:
        if cost <= abs_tol:
            reason = "zero cost"
            break
        if np.max(np.abs(system.gradient), initial=0.0) < grad_tol:
            reason = "gradient"
            break
        it += 1
        step = system.solve(lam)
        if not np.all(np.isfinite(step)):
            lam *= LAMBDA_UP
            if lam > LAMBDA_MAX:
                reason = "stalled"
                break
            continue
        if np.max(np.abs(step), initial=0.0) < step_tol:
            reason = "small step"
            break
        x_new = update(x, step)
        new_cost = evaluate(x_new)
        if np.isnan(new_cost):
            raise NumericalFailure("non-finite residual during refinement")
        # an infinite cost (point pushed out of the model's domain) is an ordinary rejection
        if new_cost < cost:
            decrease = (cost - new_cost) / cost
            x, cost = x_new, new_cost
            history.append(cost)
            lam = max(lam / LAMBDA_DOWN, 1e-15)
            if decrease < rel_tol:
                reason = "relative decrease"
                break
            cost, system = linearize(x)
        else:
            lam *= LAMBDA_UP
            if lam > LAMBDA_MAX:
                reason = "stalled"
                break
    result = LMResult(x, cost, initial, it, reason is not None, reason or "max iterations", history)
    if reason is None and raise_on_failure:
        raise NoConvergence(f"no convergence after {max_iterations} iterations (cost {cost:.6g})", result)
    return result
