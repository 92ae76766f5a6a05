"""Forward solver for the Caputo delay system and the cost functional.

The state is advanced on the Volterra form ``y = y0 + I^alpha[f]`` with
product-trapezoidal weights. Right after ``t = 0`` and ``t = h`` the integrand
behaves like ``const + c * (t - b)**alpha``; on the first cell after each of
these two points it is interpolated linearly in ``(t - b)**alpha`` instead.
Controls are piecewise constant, so on every cell the integrand is
interpolated between its one-sided limits: the left node uses the cell's
control and so does the right node. A control jump at ``t_j``
therefore never leaks into the neighbouring cell, and ``y(t_j)`` depends only
on the controls of cells before ``t_j``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from fracdelay.fracquad import gamma_fn, graded_start_weights, product_cell_weights
from fracdelay.problem import (
    CSV_VERSION,
    ControlSet,
    ControlSignal,
    CostSpec,
    HistorySegment,
    LinearDelay,
    ProblemSpec,
    RunningCost,
    TerminalCost,
    TimeGrid,
)

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when a time step cannot be resolved; *index* is the grid node."""

    def __init__(self, index: int, message: str):
        super().__init__(f"step {index}: {message}")
        self.index = index


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Node values ``y(t_i)`` together with the one-sided right-hand sides.

    ``rhs_right[j]`` is ``f`` at node ``j`` with the control of cell ``j``;
    ``rhs_left[j]`` uses the control of cell ``j - 1`` and the left limit of
    the delayed state.
    """

    grid: TimeGrid
    states: np.ndarray
    history: HistorySegment
    rhs_left: np.ndarray = field(repr=False)
    rhs_right: np.ndarray = field(repr=False)

    def delayed(self, i: int) -> np.ndarray:
        """``y(t_i - h)``, read from the history for ``t_i < h``."""
        m = self.grid.m
        return self.states[i - m] if i >= m else self.history.samples[i]

    def delayed_states(self, left: bool = False) -> np.ndarray:
        """``y(t_i - h)`` for every node; ``left=True`` gives left limits in time.

        The two differ only at ``t_i = h`` when the history jumps at ``0``.
        """
        m, N = self.grid.m, self.grid.N
        out = np.concatenate([self.history.samples, self.states[: N + 1 - m]])
        if left and m <= N:
            out[m] = self.history.left_limit
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# fracdelay trajectory v{CSV_VERSION}\n")
            w = csv.writer(fh)
            w.writerow(["t"] + [f"y_{k + 1}" for k in range(self.states.shape[1])])
            for t, row in zip(self.grid.nodes, self.states):
                w.writerow([f"{t:.12g}"] + [f"{x:.12g}" for x in row])


def solve_fdde(
    spec: ProblemSpec,
    u: ControlSignal,
    *,
    reuse: Trajectory | None = None,
    reuse_upto: int = 0,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> Trajectory:
    """Solve the state equation for the control *u*.

    The implicit term of each step is resolved by fixed-point iteration,
    started from the previous node value.

    :arg reuse: a trajectory of the same problem whose control agrees with
        *u* on the cells before ``reuse_upto``; its nodes ``0..reuse_upto``
        are copied instead of recomputed.
    """
    spec.check_control(u)
    grid, dyn = spec.grid, spec.dynamics
    N, m, dt, n = grid.N, grid.m, grid.dt, spec.n
    t = grid.nodes
    left, right = product_cell_weights(spec.alpha, N)
    g_left, g_right = graded_start_weights(spec.alpha, N)
    scale = dt**spec.alpha / gamma_fn(spec.alpha)
    wl, wr = scale * left, scale * right
    # weight corrections for the first cell after t = 0 and after t = h
    cl, cr = scale * g_left - wl, scale * g_right - wr
    breaks = [0] if m >= N else [0, m]

    y0 = spec.history.y0
    Y = np.zeros((N + 1, n))
    Fl = np.zeros((N + 1, n))
    Fr = np.zeros((N + 1, n))
    hist = spec.history.samples

    def delayed(i):
        return Y[i - m] if i >= m else hist[i]

    start = 1
    if reuse is not None and reuse_upto > 0:
        k = min(reuse_upto, N)
        Y[: k + 1] = reuse.states[: k + 1]
        Fl[: k + 1] = reuse.rhs_left[: k + 1]
        Fr[:k] = reuse.rhs_right[:k]
        start = k + 1
        if k < N:
            Fr[k] = dyn.f(t[k], Y[k], delayed(k), u.values[k])
    else:
        Y[0] = y0
        Fr[0] = dyn.f(t[0], y0, delayed(0), u.values[0])

    for i in range(start, N + 1):
        # cells j < i: left node j with Fr[j], right node j+1 with Fl[j+1]
        acc = wl[i:0:-1] @ Fr[:i]
        if i > 1:
            acc += wr[i:1:-1] @ Fl[1:i]
        diag = wr[1]
        for jb in breaks:
            k = i - jb
            if k >= 1:
                acc += cl[k] * Fr[jb]
                if k >= 2:
                    acc += cr[k] * Fl[jb + 1]
                else:
                    diag = wr[1] + cr[1]
        base = y0 + acc
        # left limit of y(t - h); differs from delayed(i) at t = h after a jump
        yh = spec.history.left_limit if i == m else delayed(i)
        ui = u.values[i - 1]

        y = Y[i - 1].copy()
        res0 = res = math.inf
        for it in range(max_iter):
            y_new = base + diag * dyn.f(t[i], y, yh, ui)
            res = np.max(np.abs(y_new - y))
            y = y_new
            if it == 0:
                res0 = res
            if not np.isfinite(res):
                raise SolverError(i, "corrector produced non-finite values")
            if res <= tol * max(1.0, np.max(np.abs(y))):
                break
        else:
            if res > res0:
                raise SolverError(i, f"corrector diverged (residual {res0:.3e} -> {res:.3e})")
            logger.warning("step %d: corrector stopped at residual %.3e", i, res)

        Y[i] = y
        Fl[i] = dyn.f(t[i], y, yh, ui)
        if i < N:
            Fr[i] = dyn.f(t[i], y, delayed(i), u.values[i])

    return Trajectory(grid, Y, spec.history, Fl, Fr)


def _running_cost_values(spec: ProblemSpec, traj: Trajectory, u: ControlSignal):
    run = spec.cost.running
    grid = spec.grid
    t = grid.nodes
    yh, yhl = traj.delayed_states(), traj.delayed_states(left=True)
    N = grid.N
    g_right = np.array([run.value(t[j], traj.states[j], yh[j], u.values[j]) for j in range(N)])
    g_left = np.array([run.value(t[j], traj.states[j], yhl[j], u.values[j - 1]) for j in range(1, N + 1)])
    return g_right, g_left


def evaluate_cost(spec: ProblemSpec, traj: Trajectory, u: ControlSignal) -> float:
    """``J = Phi(y(T)) + (1/Gamma(beta)) int_0^T (T - t)**(beta-1) f0 dt``."""
    if traj.states.shape != (spec.grid.N + 1, spec.n):
        raise ValueError("trajectory does not match the problem grid")
    J = spec.cost.terminal.value(traj.states[-1])
    if spec.cost.running.is_zero:
        return J
    N, beta = spec.grid.N, spec.beta
    left, right = product_cell_weights(beta, N)
    g_right, g_left = _running_cost_values(spec, traj, u)
    k = N - np.arange(N)
    integral = spec.grid.dt**beta * (left[k] @ g_right + right[k] @ g_left)
    return J + integral / gamma_fn(beta)


def manufactured_problem(alpha: float, N: int, T: float = 1.0, h: float = 0.5) -> ProblemSpec:
    """Scalar problem with exact solution ``y(t) = t**2`` for all ``t >= -h``.

    ``f = -y + y(t-h) + g(t)`` where ``g`` balances the Caputo derivative
    ``2 t**(2-alpha) / Gamma(3-alpha)``.
    """
    grid = TimeGrid(T, h, N)
    coeff = 2.0 / gamma_fn(3.0 - alpha)

    def forcing(t):
        return np.array([coeff * t ** (2.0 - alpha) + t**2 - (t - h) ** 2])

    dyn = LinearDelay(1, 1, A0=[[-1.0]], A1=[[1.0]], B=[[0.0]], c=forcing)
    return ProblemSpec(
        alpha=alpha,
        grid=grid,
        history=HistorySegment.from_function([0.0], lambda s: s**2, grid),
        dynamics=dyn,
        cost=CostSpec(TerminalCost.linear([1.0]), RunningCost.zero(1, 1), alpha),
        controls=ControlSet.box([0.0], [0.0]),
        name="manufactured",
    )


def manufactured_convergence(alpha: float, N_ladder) -> list[tuple[int, float]]:
    """Max nodal error against ``y = t**2`` for each ``N`` of the ladder."""
    out = []
    for N in N_ladder:
        spec = manufactured_problem(alpha, int(N))
        traj = solve_fdde(spec, ControlSignal.constant(spec.grid, 0.0))
        exact = spec.grid.nodes**2
        out.append((int(N), float(np.max(np.abs(traj.states[:, 0] - exact)))))
    return out


def observed_orders(ladder: list[tuple[int, float]]) -> list[float]:
    return [
        math.log(e0 / e1) / math.log(n1 / n0)
        for (n0, e0), (n1, e1) in zip(ladder, ladder[1:])
    ]
