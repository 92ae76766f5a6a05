"""Adjoint (conjugate) equation and the Hamiltonian.

The adjoint is the backward Volterra equation

    psi(t) = -Phi_y(y(T))
             + (T-t)^(1-a)/Gamma(a) * int_t^T     (T-s)^(a-1) (s-t)^(a-1)   H_y(s)   ds
             + (T-t)^(1-a)/Gamma(a) * int_{t+h}^T (T-s)^(a-1) (s-t-h)^(a-1) H_yh(s)  ds,

with ``psi = 0`` on ``(T, T+h]`` and ``H = psi.f - Gamma(a)/Gamma(b) (T-t)^(b-a) f0``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from fracdelay.forward import SolverError, Trajectory
from fracdelay.fracquad import double_singular_table, gamma_fn
from fracdelay.problem import CSV_VERSION, ControlSignal, ProblemSpec, TimeGrid


def running_weight(spec: ProblemSpec, t) -> np.ndarray:
    """``Gamma(alpha)/Gamma(beta) * (T - t)**(beta - alpha)``; 1 when beta == alpha."""
    t = np.asarray(t, dtype=float)
    if spec.beta == spec.alpha:
        return np.ones_like(t)
    gap = np.maximum(spec.grid.T - t, 0.0)
    return gamma_fn(spec.alpha) / gamma_fn(spec.beta) * gap ** (spec.beta - spec.alpha)


def hamiltonian(spec: ProblemSpec, t, y, yh, u_val, psi):
    """``H(t, y, y_h, u, psi)``; *u_val* may carry a leading batch axis."""
    H = spec.dynamics.f(t, y, yh, u_val) @ psi
    if not spec.cost.running.is_zero:
        H = H - running_weight(spec, t) * spec.cost.running.value(t, y, yh, u_val)
    return H


def hamiltonian_y(spec: ProblemSpec, t, y, yh, u_val, psi):
    """Gradient of ``H`` in ``y``: ``f_y^T psi - w(t) f0_y``."""
    g = np.einsum("...ab,a->...b", spec.dynamics.f_y(t, y, yh, u_val), psi)
    if not spec.cost.running.is_zero:
        g = g - running_weight(spec, t) * spec.cost.running.grad_y(t, y, yh, u_val)
    return g


def hamiltonian_yh(spec: ProblemSpec, t, y, yh, u_val, psi):
    """Gradient of ``H`` in the delayed state."""
    g = np.einsum("...ab,a->...b", spec.dynamics.f_yh(t, y, yh, u_val), psi)
    if not spec.cost.running.is_zero:
        g = g - running_weight(spec, t) * spec.cost.running.grad_yh(t, y, yh, u_val)
    return g


@dataclass(frozen=True, eq=False)
class AdjointPath:
    """Adjoint node values; identically zero beyond ``T``."""

    grid: TimeGrid
    values: np.ndarray

    def at(self, i: int) -> np.ndarray:
        if i > self.grid.N:
            return np.zeros(self.values.shape[1])
        return self.values[i]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# fracdelay adjoint v{CSV_VERSION}\n")
            w = csv.writer(fh)
            w.writerow(["t"] + [f"psi_{k + 1}" for k in range(self.values.shape[1])])
            for t, row in zip(self.grid.nodes, self.values):
                w.writerow([f"{t:.12g}"] + [f"{x:.12g}" for x in row])


def _damped_solve(M, rhs, x0, damping=0.5, max_sweeps=500, tol=1e-10):
    # x = rhs + (E - M) x, relaxed
    E = np.eye(M.shape[0])
    x = x0.copy()
    for _ in range(max_sweeps):
        x_new = (1.0 - damping) * x + damping * (rhs + (E - M) @ x)
        if np.max(np.abs(x_new - x)) <= tol:
            return x_new
        x = x_new
    return None


def solve_adjoint(spec: ProblemSpec, traj: Trajectory, u: ControlSignal) -> AdjointPath:
    """March the conjugate equation backward from ``psi(T) = -Phi_y(y(T))``.

    Both integrals use product integration against the double kernel. On
    each cell ``H_y`` (resp. ``H_yh``) is interpolated linearly in
    ``(T - tau)**alpha``, which captures the leading behaviour of the
    solution near ``T``, and the interpolant uses one-sided values at control
    jumps. The only unknown
    in step ``i`` is ``psi(t_i)`` at the left end of the first cell, which
    enters linearly through ``f_y(t_i)^T``.
    """
    grid, dyn, run = spec.grid, spec.dynamics, spec.cost.running
    N, m, dt, n = grid.N, grid.m, grid.dt, spec.n
    alpha = spec.alpha
    t = grid.nodes
    Y = traj.states
    YH = traj.delayed_states()
    YHl = traj.delayed_states(left=True)
    U = u.values
    E = np.eye(n)

    # one-sided Jacobians: right limit uses cell j, left limit cell j-1
    fy_r = np.array([dyn.f_y(t[j], Y[j], YH[j], U[j]) for j in range(N)])
    fy_l = np.array([dyn.f_y(t[j], Y[j], YHl[j], U[j - 1]) for j in range(1, N + 1)])
    fyh_r = np.array([dyn.f_yh(t[j], Y[j], YH[j], U[j]) for j in range(N)])
    fyh_l = np.array([dyn.f_yh(t[j], Y[j], YHl[j], U[j - 1]) for j in range(1, N + 1)])
    w = running_weight(spec, t)
    if run.is_zero:
        q_r = qh_r = np.zeros((N, n))
        q_l = qh_l = np.zeros((N, n))
    else:
        q_r = np.array([w[j] * run.grad_y(t[j], Y[j], YH[j], U[j]) for j in range(N)])
        q_l = np.array([w[j] * run.grad_y(t[j], Y[j], YHl[j], U[j - 1]) for j in range(1, N + 1)])
        qh_r = np.array([w[j] * run.grad_yh(t[j], Y[j], YH[j], U[j]) for j in range(N)])
        qh_l = np.array([w[j] * run.grad_yh(t[j], Y[j], YHl[j], U[j - 1]) for j in range(1, N + 1)])

    psi = np.zeros((N + 1, n))
    # H_y / H_yh node values, right limit (index j) and left limit (index j)
    Gr = np.zeros((N + 1, n))
    Gl = np.zeros((N + 1, n))
    Hr = np.zeros((N + 1, n))
    Hl = np.zeros((N + 1, n))

    terminal = -spec.cost.terminal.grad(Y[N])
    psi[N] = terminal
    Gl[N] = fy_l[N - 1].T @ psi[N] - q_l[N - 1]
    Hl[N] = fyh_l[N - 1].T @ psi[N] - qh_l[N - 1]

    ga = gamma_fn(alpha)
    for i in range(N - 1, -1, -1):
        L = N - i
        lw, rw = double_singular_table(alpha, L)
        pref = dt**alpha * L ** (1.0 - alpha) / ga

        known = rw @ Gl[i + 1 : N + 1]
        if L > 1:
            known = known + lw[1:] @ Gr[i + 1 : N]
        known = known - lw[0] * q_r[i]
        L2 = L - m
        if L2 >= 1:
            dl, dr = double_singular_table(alpha, L2)
            j = i + m
            known = known + dl @ Hr[j:N] + dr @ Hl[j + 1 : N + 1]

        rhs = terminal + pref * known
        M = E - pref * lw[0] * fy_r[i].T
        try:
            x = np.linalg.solve(M, rhs)
            if not np.all(np.isfinite(x)):
                raise np.linalg.LinAlgError("non-finite solution")
        except np.linalg.LinAlgError:
            x = _damped_solve(M, rhs, psi[i + 1])
            if x is None:
                raise SolverError(i, f"adjoint block singular (cond={np.linalg.cond(M):.3e}) "
                                     "and damped iteration failed") from None
        psi[i] = x
        Gr[i] = fy_r[i].T @ x - q_r[i]
        Hr[i] = fyh_r[i].T @ x - qh_r[i]
        if i >= 1:
            Gl[i] = fy_l[i - 1].T @ x - q_l[i - 1]
            Hl[i] = fyh_l[i - 1].T @ x - qh_l[i - 1]

    return AdjointPath(grid, psi)
